"""Spectral learning of HMMs with nonparametric emissions on [0, 1].

Modules:
    chebcore: adaptive Chebyshev series on an interval.
    qcmatrix: quasimatrices and low-rank continuous matrices.
    kde: product-kernel density estimates and their Chebyshev forms.
    spectral: learning the observable representation and density inference.
    hmm_sim: ground-truth models, sampling and exact-moment oracles.
    perturbation: numerical checks of perturbation bounds.
    cli: command-line entry point.
"""

from .chebcore import ChebSeries, Interval, UNIT, build
from .errors import NPHMMError, NumericalError, ValidationError
from .hmm_sim import HMMModel, exact_rep, forward_joint, sample, synthetic_suite
from .kde import KDEEstimate, KernelSpec
from .qcmatrix import CMatrix, QMatrix
from .spectral import (LearnConfig, ObservableRep, joint_density, learn, make_triples,
                       predict_next)

__version__ = "0.1.0"

__all__ = [
    "ChebSeries", "Interval", "UNIT", "build", "NPHMMError", "NumericalError",
    "ValidationError", "HMMModel", "exact_rep", "forward_joint", "sample", "synthetic_suite",
    "KDEEstimate", "KernelSpec", "CMatrix", "QMatrix", "LearnConfig", "ObservableRep",
    "joint_density", "learn", "make_triples", "predict_next",
]
