"""Dressed-mode models, bath-engineered cooling rates and rate-equation dynamics
for a chain of anharmonic oscillators coupled to a lossy cavity."""

__version__ = "0.1.0"
