"""Configuration and worker pool management."""
