"""Setup file for shrinkage-inverse"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="shrinkage-inverse",
    version="0.1.0",
    author="",
    description="Forward and inverse problems for depolymerisation and fragmentation of size distributions",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.11",
        "filterpy>=1.4.5",
        "pyyaml>=6.0.1",
        "pydantic>=2.5.0",
    ],
    extras_require={
        "test": ["pytest>=7.4"],
    },
    entry_points={
        "console_scripts": ["shrinkage-inverse=shrinkage_inverse.cli:main"],
    },
    python_requires=">=3.9",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: MIT License",
    ],
)
