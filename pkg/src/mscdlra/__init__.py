"""Mixed sparse coding solvers and dictionary-based low-rank approximations.

The package fits models ``Y ~ D X B^T`` (and their tensor counterparts)
where the code matrix ``X`` is columnwise k-sparse in a known dictionary
``D``. It provides the sparse-coding subproblem solvers, an alternating
engine for the full factorization models, structured dictionary
builders, synthetic benchmark runners and a command-line front end.
"""

__version__ = "0.1.0"

from .dictionaries import build_bspline_dictionary, build_dct2_dictionary
from .dlra import (
    DlraModel,
    DlraReport,
    ModeDictionary,
    TunerConfig,
    ao_dlra,
    complete_missing_rows,
    init_by_lra,
    ipalm,
    random_init,
)
from .linalg import (
    Dictionary,
    MixingOperator,
    SparseCodes,
    fixed_support_ls,
    khatri_rao,
    normalize_columns,
    residual_cost,
    spectral_norm_sq,
    support_from_values,
)
from .prox import (
    hard_threshold_columns,
    hard_threshold_k,
    nonneg_soft_threshold,
    project_nonneg,
    prox_l11,
    soft_threshold,
)
from .solvers import (
    SolverReport,
    StoppingRule,
    block_fista,
    check_reduction_bound,
    debias,
    fixed_support_nnls,
    homp,
    iht,
    lambda_max_block,
    lambda_max_mixed,
    mixed_fista,
    omp,
    trick_omp,
)
from .synth import (
    add_noise_snr,
    auto_alpha,
    gen_codes,
    gen_dictionary,
    gen_mixing,
    gen_msc_instance,
    rel_error,
    sam,
    support_recovery,
)
from .tensor import CpdFactors, cpd_als, cpd_reconstruct, mttkrp, unfold1

__all__ = [name for name in dir() if not name.startswith("_")]
