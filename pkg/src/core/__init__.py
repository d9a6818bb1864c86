"""
Core business logic and processing components.
"""