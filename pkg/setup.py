#!/usr/bin/env python3
"""
Setup script for Strap Tying MPC
"""
from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(
    name="strap-tying-mpc",
    version="1.0.0",
    description="Turn-taking multi-agent MPC for tying a strap onto a rotating hook bar",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Strap Tying MPC Team",
    author_email="team@example.com",
    url="https://github.com/example/strap-tying-mpc",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.11",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-mock>=3.10.0",
            "pytest-cov>=4.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "strap-mpc=src.main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    keywords="model predictive control, rope simulation, linking number, robotics",
    project_urls={
        "Bug Reports": "https://github.com/example/strap-tying-mpc/issues",
        "Source": "https://github.com/example/strap-tying-mpc",
        "Documentation": "https://github.com/example/strap-tying-mpc/blob/main/README.md",
    },
)
