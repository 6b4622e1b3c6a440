"""Core application components: shared exception hierarchy."""
