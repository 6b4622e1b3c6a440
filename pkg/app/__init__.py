"""Single-ended fault-location workbench for radial multi-terminal HVDC networks."""

__version__ = "0.1.0"
