import numpy as np
import pytest

from affinecurves import ModelParams, StateVector


@pytest.fixture(scope="session")
def ref_params() -> ModelParams:
    return ModelParams.reference()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240615)


def random_renewal_state(rng, nonnegative_spreads=False) -> StateVector:
    """A plausible pricing-origin state: roll-over spreads at zero, square
    root coordinates nonnegative."""
    zeta_low = 0.0 if nonnegative_spreads else -0.003
    return StateVector(
        r_s=rng.uniform(-0.005, 0.05),
        theta_s=rng.uniform(-0.005, 0.05),
        zeta=rng.uniform(zeta_low, 0.004),
        xi=rng.uniform(0.0, 0.3),
        eta=rng.uniform(0.0, 0.25),
        nu=rng.uniform(0.0, 4.0),
    )


def deterministic_params(params: ModelParams, **overrides) -> ModelParams:
    """Zero-volatility, zero-intensity limit of a parameter set."""
    changes = dict(
        sigma_r=0.0, sigma_theta=0.0, sigma_zeta=0.0,
        sigma_xi=0.0, sigma_eta=0.0, sigma_nu=0.0,
        theta_eta=0.0, theta_nu=0.0,
    )
    changes.update(overrides)
    return params.replace(**changes)
