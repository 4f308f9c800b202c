"""Gated two-stage ensemble prediction from mixed binary/continuous covariates."""

from . import dataset, ensemble, glm, logicreg, metrics, select, svm  # noqa: F401

__version__ = "0.1.0"
