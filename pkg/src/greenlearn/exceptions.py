"""Exception types raised across the package."""

import numpy as np
from sklearn.exceptions import NotFittedError as _SklearnNotFitted


class NotFittedError(_SklearnNotFitted):
    """Raised when a model is used before its parameters exist."""


class ResonanceError(ValueError):
    """The requested frequency sits on a Dirichlet eigenvalue of the operator."""


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system that must be invertible is (numerically) singular."""


class SymmetryConditionError(ValueError):
    """Inner kernel fails K(x, y, xi, eta) == K(y, x, eta, xi) on sampled points."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``keys`` lists every offending key path.
    """

    def __init__(self, keys, message=None):
        self.keys = list(keys)
        super().__init__(message or "invalid config keys: " + ", ".join(self.keys))
