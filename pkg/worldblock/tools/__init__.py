"""Standalone debugging tools."""
