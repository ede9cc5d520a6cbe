"""
Database package
"""
from dampspde.database.models import RunRegistry

__all__ = ['RunRegistry']
