"""
Error Hierarchy

Every service raises a subclass of FaultLocatorError so the CLI can turn any
expected failure into a single machine-readable error line.
"""


class FaultLocatorError(Exception):
    """Base exception for all workbench errors."""
    pass
