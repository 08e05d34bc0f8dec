"""czkit: desk-scale machinery for finitely truncated singular integrals.

The modules follow the pipeline: finite metric measure spaces
(:mod:`czkit.space`), truncated kernels with measured standard-estimate
constants (:mod:`czkit.kernel`), random dyadic systems and Haar calculus
(:mod:`czkit.dyadic`), the bilinear decomposition / paraproduct / sparse
machinery (:mod:`czkit.calculus`), mixed-norm fields and operator-norm
estimation (:mod:`czkit.fields`, :mod:`czkit.norms`), and the experiment
CLI (:mod:`czkit.experiments`, :mod:`czkit.cli`).
"""

from .space import FiniteMetricMeasureSpace, make_path_space, save_space, load_space
from .fields import (
    MixedNormDescriptor,
    VectorField,
    mixed_norm,
    pairing,
    duality_map,
    theta_exponent,
)
from .kernel import (
    ModulusOmega,
    TruncatedKernel,
    finite_hilbert_kernel,
    random_truncated_kernel,
    verify_standard_estimates,
    dini_norm,
    save_kernel,
    load_kernel,
)
from .dyadic import (
    DyadicSystem,
    ShiftedGridFamily,
    NetGridFamily,
    build_shifted_integer_grid,
    build_net_grid,
    haar_basis,
    average_op,
    difference_op,
    tail_op,
    boundary_layer_probability,
    boundary_layer_exact,
    common_ancestor_probability,
    common_ancestor_exact,
    choose_eps,
    m0_for,
)
from .calculus import (
    TermLedger,
    SparseFamily,
    expand_pairing,
    haar_coefficient,
    verify_haar_bounds,
    weak_boundedness,
    cube_testing,
    ball_testing,
    paraproduct,
    extract_symbol,
    bmo_norm,
    square_function,
    truncated_square,
    doob_maximal,
    stopping_family,
    paraproduct_stopping_bound,
    split_difference,
    block_operator,
)
from .norms import (
    MatrixOperator,
    operator_norm_lower_bound,
    operator_norm_oracle_small,
    spectral_norm_oracle,
    martingale_type_constant,
    martingale_cotype_constant,
)
from .experiments import (
    ExperimentConfig,
    parse_config,
    run_verification_suite,
    run_scaling,
    emit_report,
)

__version__ = "0.1.0"
