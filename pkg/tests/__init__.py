"""Test suite for the HVDC fault-location workbench."""
