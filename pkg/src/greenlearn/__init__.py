"""Learning Green's functions of linear PDEs by regression in operator RKHSs."""

from .estimator import (
    GreensFunctionRegressor,
    GreensModel,
    assemble_bias,
    assemble_greens,
    forward,
    load_model,
    penalty,
    save_model,
)
from .exceptions import (
    ConfigError,
    NotFittedError,
    ResonanceError,
    SingularSystemError,
    SymmetryConditionError,
)
from .grid import Grid, make_tensor_grid, make_uniform_grid, refine_grid
from .kernels import (
    Gaussian,
    Sobolev1Dirichlet,
    SobolevTail,
    causal_mask,
    convolutional,
    kernel_from_dict,
    symmetrize,
)
from .pde_data import PdeProblem, make_dataset
from .training import TrainConfig, mse, rse, solve_direct, solve_ridge_exact, train

__version__ = "0.1.0"
