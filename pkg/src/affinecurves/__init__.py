"""Joint affine model of secured and unsecured benchmark rates.

Eight latent factors drive SOFR-, EFFR-, LIBOR- and term-repo-linked
instruments jointly: transform pricing through coefficient ODEs, Kalman
quasi-maximum-likelihood estimation on futures/spot panels with missing
data, and a Monte Carlo engine for validation and synthetic data.
"""

from .estimation import (
    EstimationResult,
    FilterOutput,
    FitOptions,
    conditional_covariance_Z,
    filter_panel,
    fit,
    measurement_map,
    quasi_loglik,
)
from .panel import (
    ContractLadder,
    ObservationPanel,
    PanelSchema,
    load_panel,
    save_panel,
)
from .params import (
    ModelParams,
    ParameterError,
    StateVector,
    build_affine_coefficients,
    to_p_measure,
    validate_params,
)
from .pricing import (
    DecompositionRow,
    InstrumentSpec,
    cds_spread,
    decompose_libor_ois,
    eurodollar_futures,
    fedfunds_futures,
    irs_rate,
    ois_ff_rate,
    ois_sofr_rate,
    price_instrument,
    regression_decomposition,
    risk_premium,
    sofr1m_futures,
    sofr3m_futures,
    spot_libor,
    term_repo,
)
from .riccati import (
    ExtendedSolution,
    RiccatiSolution,
    SingularityError,
    gaussian_average_integrals,
    solve_extended,
    solve_riccati,
)
from .simulation import (
    PathSet,
    generate_synthetic_panel,
    mc_price,
    simulate_default_times,
    simulate_paths,
)

__version__ = "0.1.0"
