"""Versioned dataset configuration files."""
