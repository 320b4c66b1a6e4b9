"""Mutation models: learn level-editing policies from evolution histories."""

__version__ = "0.1.0"
