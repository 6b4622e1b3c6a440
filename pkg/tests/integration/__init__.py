"""End-to-end experiment tests for the HVDC fault-location workbench."""
