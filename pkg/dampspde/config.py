"""
Configuration Management
Centralized runtime configuration for the laboratory
"""
import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()


@dataclass
class SimulationConfig:
    """Worker pool configuration"""
    threads: int = int(os.getenv('DAMPSPDE_THREADS', os.cpu_count() or 1))
    batch_size: int = int(os.getenv('DAMPSPDE_BATCH_SIZE', 25))
    # Steps drawn per generator call; streams are invariant under this choice
    draw_block: int = int(os.getenv('DAMPSPDE_DRAW_BLOCK', 256))


@dataclass
class ToleranceConfig:
    """Verification thresholds"""
    holder: float = float(os.getenv('DAMPSPDE_HOLDER_TOLERANCE', 0.1))
    holder_band: float = 0.15
    sector_variation: float = float(os.getenv('DAMPSPDE_SECTOR_VARIATION', 0.05))
    weak_residual: float = float(os.getenv('DAMPSPDE_WEAK_RESIDUAL', 1e-6))
    scale_spread: float = 10.0
    # Relative eigenvalue cut for low-rank Gaussian factors
    covariance_clip: float = float(os.getenv('DAMPSPDE_COV_CLIP', 1e-12))


@dataclass
class OutputConfig:
    """Run output configuration"""
    directory: str = os.getenv('DAMPSPDE_OUT', 'runs')
    float_format: str = '%.17g'


@dataclass
class DatabaseConfig:
    """Run registry configuration"""
    path: str = os.getenv('DAMPSPDE_DB', 'data/dampspde.db')


@dataclass
class LoggingConfig:
    """Logging configuration"""
    directory: str = os.getenv('DAMPSPDE_LOG_DIR', 'logs')
    level: str = os.getenv('DAMPSPDE_LOG_LEVEL', 'INFO')
    filename: str = 'dampspde.log'


@dataclass
class Config:
    """Main configuration class"""
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    database: DatabaseConfig = field(default_factory=DatabaseConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    # Application info
    app_name: str = "Damped SPDE Laboratory"
    version: str = "1.0.0"
    schema_version: int = 1

    def __post_init__(self):
        """Ensure data and log directories exist"""
        db_dir = os.path.dirname(self.database.path)
        if db_dir:
            os.makedirs(db_dir, exist_ok=True)
        os.makedirs(self.logging.directory, exist_ok=True)


# Global config instance
config = Config()
