"""Sparse hyperspectral unmixing by expectation propagation.

Spike-and-slab abundance priors with an Ising prior on endmember presence,
plus EM refinement of the endmember library.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    AbundancePosterior,
    EndmemberMatrix,
    EPUnmixError,
    HyperImage,
    Hyperparams,
    NoiseModel,
    NumericalError,
)
from .ep import run_ep  # noqa: E402
from .em import run_em  # noqa: E402
from .baselines import fcls  # noqa: E402
from .synth import generate_scene  # noqa: E402

__all__ = [
    "AbundancePosterior",
    "EndmemberMatrix",
    "EPUnmixError",
    "HyperImage",
    "Hyperparams",
    "NoiseModel",
    "NumericalError",
    "fcls",
    "generate_scene",
    "run_em",
    "run_ep",
]
