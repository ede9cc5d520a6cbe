"""
Command line package
"""
from dampspde.cli.commands import build_parser, main

__all__ = ['build_parser', 'main']
