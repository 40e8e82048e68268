"""spinlab: a desk-scale numerical laboratory for coarse-grained lattice spin systems."""

__version__ = "0.1.0"

from .potential import (
    GridSpec,
    PotentialSpec,
    TabulatedPotential,
    eval,
    make_custom,
    make_double_well,
    make_gaussian,
    make_quadratic_plus_cosine,
    make_quadratic_plus_power,
    osc,
)
from .quadrature import QuadratureSpec
from .renorm import (
    CertificationReport,
    certify_p_convexity,
    coarse_grained_direct,
    iterate_renormalize,
    mass_window,
    renormalize,
)
from .cramer import (
    TiltedMeasure,
    check_p_growth,
    cramer_deficit,
    log_mgf,
    phi,
    phi_d3,
    phi_dd,
    tilt_solve,
    tilted_moments,
)
from .ensemble import (
    CanonicalEnsemble,
    SampleBatch,
    TestFunctionND,
    check_gradient_identity,
    coarse_grain,
    load_batch,
    sample_canonical,
    save_batch,
    two_site_conditional,
)
from .functional import (
    DiscretizedMeasure,
    MlsiEstimate,
    bakry_emery,
    concentration_check,
    default_tilt_family,
    entropy,
    entropy_decomposition_check,
    estimate_best_rho,
    holley_stroock,
    laplace_bound_check,
    mlsi_energy,
    talagrand_check,
    tensorize,
)
from .transport import (
    WassersteinResult,
    wasserstein_1d,
    wasserstein_matching,
    wasserstein_sinkhorn,
)
from .kawasaki import (
    DecayTrace,
    KawasakiConfig,
    decay_experiment,
    discrete_laplacian,
    operator_sqrt,
    simulate,
)
