"""
Integration tests: command line and end-to-end pipeline.
"""
