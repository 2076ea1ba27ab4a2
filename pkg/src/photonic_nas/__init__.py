"""Genetic architecture search for hybrid photonic-classical image classifiers."""

__version__ = "0.1.0"

from .errors import PhotonicNASError  # noqa: F401
