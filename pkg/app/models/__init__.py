"""Data models and Pydantic schemas."""
