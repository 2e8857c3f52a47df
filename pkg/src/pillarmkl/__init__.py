"""Multiple-kernel SVM fusion of feature pillars."""
from .dataio import (
    LabelVector,
    PillarSpec,
    SplitDefinition,
    SyntheticSpec,
    generate_synthetic_pillars,
    load_feature_matrix,
    load_labels,
    load_split,
    write_feature_matrix,
)
from .fisher import GmmModel, encode_corpus, fisher_encode, gmm_em
from .kernels import KernelMatrix, KernelParams, check_psd, combine_kernels, gamma_heuristic, kernel_gram, normalize_kernel
from .lp import LpProblem, LpSolution, solve_lp
from .mkl import MklModel, l2_mkl, mkl_predict, silp_l1, sk_objective
from .pipeline import FusionPlan, Report, accuracy, confusion_matrix, emit_report, run_protocol
from .svm import BinarySvmModel, MulticlassSvmModel, decision_values, duality_gap, predict_multiclass, smo_train, train_one_vs_rest

__version__ = "0.1.0"
