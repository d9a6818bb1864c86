"""
Unit tests for the strap-tying stack components.
"""
