"""Shared data model, errors and serialization."""
