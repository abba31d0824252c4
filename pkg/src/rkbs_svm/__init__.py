"""Support vector machines in p-norm reproducing kernel Banach spaces."""

from rkbs_svm.finite_rkbs import FiniteRkbs
from rkbs_svm.function_space import (
    CoefficientVector,
    DataError,
    GramCapacityError,
    GramTensor,
    RkbsModel,
    TrainingSet,
    build_gram,
    dual_view,
    evaluate,
    phi_map,
    rkbs_norm,
)
from rkbs_svm.kernels import MultipointKernelSpec, SpectralKernel, matern_evaluate, multipoint_evaluate, spectral_density
from rkbs_svm.lp_semi_inner import WeightedSequenceSpace, dual_element, semi_inner
from rkbs_svm.solver import (
    LossSpec,
    NonConvergenceError,
    Problem,
    RegularizerSpec,
    SolverConfig,
    classify,
    fixed_point_solve,
    gradient,
    objective,
    predict,
    solve_p2_closed_form,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CoefficientVector", "DataError", "FiniteRkbs", "GramCapacityError", "GramTensor", "LossSpec",
    "MultipointKernelSpec", "NonConvergenceError", "Problem", "RegularizerSpec", "RkbsModel", "SolverConfig",
    "SpectralKernel", "TrainingSet", "WeightedSequenceSpace", "build_gram", "classify", "dual_element",
    "dual_view", "evaluate", "fixed_point_solve", "gradient", "matern_evaluate", "multipoint_evaluate",
    "objective", "phi_map", "predict", "rkbs_norm", "semi_inner", "solve_p2_closed_form", "spectral_density",
    "train",
]
