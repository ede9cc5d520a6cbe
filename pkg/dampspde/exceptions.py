"""
Exceptions
Error hierarchy shared by the engines, the processor and the CLI
"""
from typing import Optional


class DampSpdeError(Exception):
    """Base class for all errors raised by the laboratory"""


class ConfigurationError(DampSpdeError):
    """Invalid parameters, malformed scenarios or inadmissible requests"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(DampSpdeError):
    """Geometric violations, e.g. a point outside the open box"""


class NumericalError(DampSpdeError):
    """Non-finite values produced by a transform or a coefficient map"""


class IntegrationError(DampSpdeError):
    """A time step failed"""

    def __init__(self, message: str, path_id: Optional[int] = None, step: Optional[int] = None):
        self.path_id = path_id
        self.step = step
        where = []
        if path_id is not None:
            where.append(f"path {path_id}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ArtifactError(DampSpdeError):
    """Run artifacts are missing or inconsistent"""
