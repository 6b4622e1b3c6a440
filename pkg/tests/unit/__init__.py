"""Unit tests for the HVDC fault-location workbench."""
