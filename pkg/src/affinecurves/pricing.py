"""Exponential-affine pricing of spot rates, futures, swaps and CDS.

Sign convention: :func:`affinecurves.riccati.solve_riccati` computes
coefficients of ``E[exp(-int selector.X)]``, so instruments whose defining
expectation carries ``exp(+int ...)`` pass the negated selector.  One
convention everywhere; the named selectors below encode it.

All maturities are year fractions; all quotes are decimal rates.  Pricing
origins are renewal states (lam = phi = 0): spot fixings quote a borrower
representative of the current panel, whose roll-over spreads start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .params import (
    CIR_IDX,
    GAUSSIAN_IDX,
    JUMP_IDX,
    ModelParams,
    StateVector,
    is_stationary,
    to_p_measure,
)
from .riccati import (
    CDS_SELECTOR,
    DEFAULT_STEP,
    ExtendedSolution,
    RiccatiSolution,
    gaussian_average_integrals,
    solve_extended,
    solve_riccati,
)

__all__ = [
    "InstrumentSpec",
    "DecompositionRow",
    "spot_libor",
    "term_repo",
    "sofr_term_rate",
    "pseudo_bond",
    "eurodollar_futures",
    "sofr3m_futures",
    "sofr1m_futures",
    "fedfunds_futures",
    "ois_sofr_rate",
    "ois_ff_rate",
    "irs_rate",
    "irs_rate_from_basis",
    "cds_spread",
    "decompose_libor_ois",
    "regression_decomposition",
    "futures_risk_premium",
    "risk_premium",
    "price_instrument",
]

# Exponent selectors (entries weight -int selector.X):
#: exp(+int r_s + zeta + lam + phi): growth of term unsecured funding.
SEL_SPOT_UNSECURED = (-1, 0, -1, -1, -1, 0, 0, 0)
#: exp(+int r_s + phi): growth of rolled-over secured funding.
SEL_TERM_REPO = (-1, 0, 0, 0, -1, 0, 0, 0)
#: exp(+int r_s): compounded secured overnight account.
SEL_SOFR_GROWTH = (-1, 0, 0, 0, 0, 0, 0, 0)
#: exp(-int r_s): secured pseudo discount bond.
SEL_PSEUDO_BOND = (1, 0, 0, 0, 0, 0, 0, 0)
#: exp(+int zeta): overnight-basis growth over one accrual period.
SEL_ZETA_GROWTH = (0, 0, -1, 0, 0, 0, 0, 0)
#: exp(+int phi): funding-liquidity leg of the term unsecured ratio.
SEL_PHI_GROWTH = (0, 0, 0, 0, -1, 0, 0, 0)
#: exp(-int r_s + zeta + lam): defaultable discount leg of the same ratio.
SEL_DEFAULTABLE = (1, 0, 1, 1, 0, 0, 0, 0)
#: expectation of a plain function of the terminal state.
SEL_NONE = (0, 0, 0, 0, 0, 0, 0, 0)

_JUMP = list(JUMP_IDX)


def _as_state(state) -> StateVector:
    return state if isinstance(state, StateVector) else StateVector.from_array(state)


def _bucket(tau: float, unit: float = 0.25) -> float:
    """Round a maturity up to a cache-friendly grid length."""
    return unit * math.ceil(max(tau, 1e-12) / unit - 1e-12)


@lru_cache(maxsize=256)
def _base(params: ModelParams, selector: tuple, tau_bucket: float,
          step: float) -> RiccatiSolution:
    return solve_riccati(params, selector, tau_bucket, step)


@lru_cache(maxsize=256)
def _chained(params: ModelParams, inner_selector: tuple, inner_tau: float,
             outer_selector: tuple, tau_bucket: float, step: float,
             zero_jumps: bool) -> RiccatiSolution:
    """Outer solution whose initial condition is an inner solution's value.

    ``zero_jumps`` re-initialises the jump-spread coordinates of the inner
    terminal loading, reflecting panel renewal at the inner valuation date.
    """
    inner = _base(params, inner_selector, _bucket(inner_tau), step)
    a0 = float(inner.a_at(inner_tau))
    b0 = np.array(inner.b_at(inner_tau), dtype=float)
    if zero_jumps:
        b0[_JUMP] = 0.0
    return solve_riccati(params, outer_selector, tau_bucket, step,
                         initial_A=a0, initial_B=b0)


@lru_cache(maxsize=64)
def _cds_solutions(params: ModelParams, tau_bucket: float,
                   step: float) -> tuple[RiccatiSolution, ExtendedSolution]:
    base = _base(params, CDS_SELECTOR, tau_bucket, step)
    return base, solve_extended(params, base)


@lru_cache(maxsize=256)
def _irs_terminal(params: ModelParams, delta: float,
                  step: float) -> tuple[float, tuple]:
    """Terminal condition of the floating-period chain: the log of
    p_s * U / Q over one accrual period, jump loadings re-initialised."""
    bucket = _bucket(delta)
    sp = _base(params, SEL_PSEUDO_BOND, bucket, step)
    u = _base(params, SEL_PHI_GROWTH, bucket, step)
    q = _base(params, SEL_DEFAULTABLE, bucket, step)
    a0 = float(sp.a_at(delta) + u.a_at(delta) - q.a_at(delta))
    b0 = np.array(sp.b_at(delta) + u.b_at(delta) - q.b_at(delta), dtype=float)
    b0[_JUMP] = 0.0
    return a0, tuple(b0)


@lru_cache(maxsize=256)
def _chained_terminal(params: ModelParams, a0: float, b0: tuple,
                      outer_selector: tuple, tau_bucket: float,
                      step: float) -> RiccatiSolution:
    return solve_riccati(params, outer_selector, tau_bucket, step,
                         initial_A=a0, initial_B=np.array(b0))


# ---------------------------------------------------------------------------
# Spot term rates and the discount curve
# ---------------------------------------------------------------------------

def spot_libor(params: ModelParams, state, t: float, T: float,
               step: float = DEFAULT_STEP) -> float:
    """Fair simple term rate for unsecured borrowing over [t, T]."""
    state = _as_state(state)
    state.require_renewal()
    tau = T - t
    if tau <= 0:
        raise ValueError("need T > t")
    sol = _base(params, SEL_SPOT_UNSECURED, _bucket(tau), step)
    return math.expm1(sol.exponent(tau, state)) / tau


def term_repo(params: ModelParams, state, t: float, T: float,
              step: float = DEFAULT_STEP) -> float:
    """Fair simple term rate for collateralised borrowing over [t, T]."""
    state = _as_state(state)
    state.require_renewal()
    tau = T - t
    if tau <= 0:
        raise ValueError("need T > t")
    sol = _base(params, SEL_TERM_REPO, _bucket(tau), step)
    return math.expm1(sol.exponent(tau, state)) / tau


def sofr_term_rate(params: ModelParams, state, t: float, T: float,
                   step: float = DEFAULT_STEP) -> float:
    """Simple rate equivalent of the expected compounded secured account."""
    state = _as_state(state)
    tau = T - t
    sol = _base(params, SEL_SOFR_GROWTH, _bucket(tau), step)
    return math.expm1(sol.exponent(tau, state)) / tau


def pseudo_bond(params: ModelParams, state, t: float, T: float,
                step: float = DEFAULT_STEP) -> float:
    """Discount factor E[exp(-int_t^T r_s)]."""
    state = _as_state(state)
    tau = T - t
    if tau == 0:
        return 1.0
    sol = _base(params, SEL_PSEUDO_BOND, _bucket(tau), step)
    return math.exp(sol.exponent(tau, state))


# ---------------------------------------------------------------------------
# Futures
# ---------------------------------------------------------------------------

def eurodollar_futures(params: ModelParams, state, t: float, S: float, T: float,
                       step: float = DEFAULT_STEP) -> float:
    """Futures rate on the term unsecured fixing of the period [S, T].

    The fixing is known at S, so the contract is a two-stage transform: the
    term-rate coefficients over T - S (jump loadings re-initialised, since
    the panel renews at S) become the initial condition of a plain
    expectation over S - t.
    """
    state = _as_state(state)
    state.require_renewal()
    if t > S:
        raise ValueError("term unsecured futures settle at the accrual start")
    accrual = T - S
    horizon = S - t
    if horizon == 0.0:
        inner = _base(params, SEL_SPOT_UNSECURED, _bucket(accrual), step)
        b = np.array(inner.b_at(accrual))
        b[_JUMP] = 0.0
        expo = float(inner.a_at(accrual) + b @ state.as_array())
        return math.expm1(expo) / accrual
    outer = _chained(params, SEL_SPOT_UNSECURED, accrual, SEL_NONE,
                     _bucket(horizon), step, True)
    return math.expm1(outer.exponent(horizon, state)) / accrual


def sofr3m_futures(params: ModelParams, state, t: float, S: float, T: float,
                   realized_fixings: tuple | None = None,
                   step: float = DEFAULT_STEP) -> float:
    """Futures rate on the compounded secured overnight account over [S, T].

    The underlying is only known at T.  Forward contracts (t <= S) take no
    realized fixings; in-accrual contracts multiply the realized compounding
    factor of the days in [S, t) into the remaining expectation over [t, T].
    ``realized_fixings`` is a ``(values, weights)`` pair of equal-length
    arrays.
    """
    state = _as_state(state)
    accrual = T - S
    if accrual <= 0:
        raise ValueError("need S < T")
    if t <= S:
        if realized_fixings is not None and len(realized_fixings[0]) > 0:
            raise ValueError("realized fixings supplied for a forward contract")
        state.require_renewal()
        inner_tau = accrual
        horizon = S - t
        if horizon == 0.0:
            sol = _base(params, SEL_SOFR_GROWTH, _bucket(inner_tau), step)
            return math.expm1(sol.exponent(inner_tau, state)) / accrual
        outer = _chained(params, SEL_SOFR_GROWTH, inner_tau, SEL_NONE,
                         _bucket(horizon), step, False)
        return math.expm1(outer.exponent(horizon, state)) / accrual
    if t > T:
        raise ValueError("contract already settled (t > T)")
    if realized_fixings is None:
        raise ValueError("in-accrual contract needs realized fixings")
    values, weights = realized_fixings
    growth = float(np.prod(1.0 + np.asarray(weights) * np.asarray(values)))
    remaining = T - t
    if remaining == 0.0:
        return (growth - 1.0) / accrual
    sol = _base(params, SEL_SOFR_GROWTH, _bucket(remaining), step)
    return (growth * math.exp(sol.exponent(remaining, state)) - 1.0) / accrual


def sofr1m_futures(params: ModelParams, state, t: float, S: float, T: float,
                   realized_fixings: tuple | None = None) -> float:
    """Futures rate on the day-count weighted average secured overnight rate."""
    state = _as_state(state)
    if T - S <= 0:
        raise ValueError("need S < T")
    if t <= S:
        if realized_fixings is not None and len(realized_fixings[0]) > 0:
            raise ValueError("realized fixings supplied for a forward contract")
        i_r, _ = gaussian_average_integrals(params, state, t, S, T)
        return i_r / (T - S)
    if t > T:
        raise ValueError("contract already settled (t > T)")
    if realized_fixings is None:
        raise ValueError("in-accrual contract needs realized fixings")
    values, weights = realized_fixings
    realized = float(np.dot(np.asarray(weights), np.asarray(values)))
    if t == T:
        return realized / (T - S)
    i_r, _ = gaussian_average_integrals(params, state, t, t, T)
    return (realized + i_r) / (T - S)


def fedfunds_futures(params: ModelParams, state, t: float, S: float, T: float,
                     realized_fixings: tuple | None = None) -> float:
    """Futures rate on the averaged unsecured overnight rate r_s + zeta.

    Same contract mechanics as :func:`sofr1m_futures`; in-accrual fixings are
    unsecured overnight (EFFR-type) fixings.
    """
    state = _as_state(state)
    if T - S <= 0:
        raise ValueError("need S < T")
    if t <= S:
        if realized_fixings is not None and len(realized_fixings[0]) > 0:
            raise ValueError("realized fixings supplied for a forward contract")
        i_r, i_z = gaussian_average_integrals(params, state, t, S, T)
        return (i_r + i_z) / (T - S)
    if t > T:
        raise ValueError("contract already settled (t > T)")
    if realized_fixings is None:
        raise ValueError("in-accrual contract needs realized fixings")
    values, weights = realized_fixings
    realized = float(np.dot(np.asarray(weights), np.asarray(values)))
    if t == T:
        return realized / (T - S)
    i_r, i_z = gaussian_average_integrals(params, state, t, t, T)
    return (realized + i_r + i_z) / (T - S)


# ---------------------------------------------------------------------------
# Swaps
# ---------------------------------------------------------------------------

def _payment_offsets(payment_times) -> np.ndarray:
    times = np.asarray(payment_times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("payment schedule must be a non-empty 1-d sequence")
    if times[0] <= 0 or np.any(np.diff(times) <= 0):
        raise ValueError("payment times must be strictly increasing and > 0")
    return times


def ois_sofr_rate(params: ModelParams, state, payment_times,
                  step: float = DEFAULT_STEP) -> float:
    """Fair fixed rate against the compounded secured overnight leg.

    ``payment_times`` are year-fraction offsets of the payment dates from the
    valuation date.  The floating leg telescopes into 1 - p(T_n).
    """
    state = _as_state(state)
    times = _payment_offsets(payment_times)
    sol = _base(params, SEL_PSEUDO_BOND, _bucket(times[-1]), step)
    discounts = np.exp(sol.a_at(times) + sol.b_at(times) @ state.as_array())
    deltas = np.diff(np.concatenate([[0.0], times]))
    return float((1.0 - discounts[-1]) / np.dot(deltas, discounts))


def ois_ff_rate(params: ModelParams, state, payment_times,
                step: float = DEFAULT_STEP) -> float:
    """Fair fixed rate against the compounded unsecured overnight leg.

    Each period's expectation chains the one-period basis-growth transform
    (exp(+int zeta) over delta) into a pseudo-bond-discounted outer
    expectation over the period start.
    """
    state = _as_state(state)
    x = state.as_array()
    times = _payment_offsets(payment_times)
    starts = np.concatenate([[0.0], times[:-1]])
    deltas = times - starts
    sol_p = _base(params, SEL_PSEUDO_BOND, _bucket(times[-1]), step)
    discounts = np.exp(sol_p.a_at(times) + sol_p.b_at(times) @ x)
    horizon = _bucket(max(float(starts[-1]), 1e-9))
    numerator = 0.0
    for start, delta, disc in zip(starts, deltas, discounts):
        outer = _chained(params, SEL_ZETA_GROWTH, float(delta), SEL_PSEUDO_BOND,
                         horizon, step, False)
        numerator += math.exp(outer.exponent(float(start), x)) - disc
    return float(numerator / np.dot(deltas, discounts))


def irs_rate(params: ModelParams, state, float_times, fixed_times,
             step: float = DEFAULT_STEP) -> float:
    """Fair fixed rate of a swap against term unsecured fixings.

    ``float_times``/``fixed_times`` are payment offsets; floating periods
    must be of equal length (the standard contract).  Each floating period's
    discounted fixing is the chained transform of p_s * U / Q over one
    period with jump loadings re-initialised at the fixing date.
    """
    state = _as_state(state)
    state.require_renewal()
    x = state.as_array()
    f_times = _payment_offsets(float_times)
    x_times = _payment_offsets(fixed_times)
    if abs(f_times[-1] - x_times[-1]) > 1e-12:
        raise ValueError("legs must share the final payment date")
    starts = np.concatenate([[0.0], f_times[:-1]])
    deltas = f_times - starts
    if np.any(np.abs(deltas - deltas[0]) > 1e-12):
        raise ValueError("floating periods must be equally spaced")
    delta = float(deltas[0])
    a0, b0 = _irs_terminal(params, delta, step)
    sol_p = _base(params, SEL_PSEUDO_BOND, _bucket(f_times[-1]), step)
    horizon = _bucket(max(float(starts[-1]), 1e-9))
    float_leg = 0.0
    for start, t_pay in zip(starts, f_times):
        outer = _chained_terminal(params, a0, b0, SEL_PSEUDO_BOND,
                                  horizon, step)
        disc = math.exp(sol_p.exponent(float(t_pay), x))
        float_leg += math.exp(outer.exponent(float(start), x)) - disc
    fixed_deltas = np.diff(np.concatenate([[0.0], x_times]))
    annuity = float(
        fixed_deltas @ np.exp(sol_p.a_at(x_times) + sol_p.b_at(x_times) @ x)
    )
    return float_leg / annuity


def irs_rate_from_basis(irs_3m: float, basis_spread: float) -> float:
    """Six-month-tenor swap rate from the 3M rate plus the tenor basis."""
    return irs_3m + basis_spread


# ---------------------------------------------------------------------------
# Credit default swaps
# ---------------------------------------------------------------------------

def _simpson_weights(n: int, h: float) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def cds_spread(params: ModelParams, state, t: float, T: float,
               payment_tenor: float = 0.25, grid_step: float = 1.0 / 360.0,
               step: float = DEFAULT_STEP) -> float:
    """Fair spread of a zero-recovery protection contract over [t, T].

    Protection covers default of the current representative panel borrower,
    whose default intensity is the credit-downgrade spread lam.  The
    protection leg integrates the extended-transform default density

        (a(u) + b(u).x) exp(A(u) + B(u).x)

    by composite Simpson on a daily grid; the premium leg is the quarterly
    survival-discounted annuity plus accrual-on-default integrals.
    """
    state = _as_state(state)
    state.require_renewal()
    x = state.as_array()
    maturity = T - t
    if maturity <= 0:
        raise ValueError("need T > t")
    base, ext = _cds_solutions(params, _bucket(maturity), step)

    def density(u):
        weight = ext.a_at(u) + ext.b_at(u) @ x
        return weight * np.exp(base.a_at(u) + base.b_at(u) @ x)

    n = 2 * max(1, math.ceil(maturity / grid_step / 2))
    grid = np.linspace(0.0, maturity, n + 1)
    protection = float(_simpson_weights(n, grid[1] - grid[0]) @ density(grid))

    n_periods = round(maturity / payment_tenor)
    if abs(n_periods * payment_tenor - maturity) > 1e-9 or n_periods < 1:
        raise ValueError("maturity must be a whole number of payment periods")
    pay_times = payment_tenor * np.arange(1, n_periods + 1)
    survival_disc = np.exp(base.a_at(pay_times) + base.b_at(pay_times) @ x)
    annuity = float(payment_tenor * survival_disc.sum())
    m = 2 * max(1, math.ceil(payment_tenor / grid_step / 2))
    for k in range(n_periods):
        sub = np.linspace(k * payment_tenor, (k + 1) * payment_tenor, m + 1)
        accrued = (sub - k * payment_tenor) * density(sub)
        annuity += float(_simpson_weights(m, sub[1] - sub[0]) @ accrued)
    if annuity <= 0:
        raise ValueError("degenerate schedule: non-positive premium annuity")
    return protection / annuity


# ---------------------------------------------------------------------------
# Spread decomposition and regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecompositionRow:
    """Split of the term unsecured-OIS spread into roll-over components."""

    tenor: str
    libor_ois_spread: float
    credit_component: float
    funding_component: float
    date: object = None


def decompose_libor_ois(params: ModelParams, state, tenor_years: float,
                        step: float = DEFAULT_STEP,
                        date=None) -> DecompositionRow:
    """Decompose the spread of the term unsecured rate over the matched
    single-period unsecured-overnight OIS.

    The funding-liquidity component is the term-structure contribution of
    phi alone: the rolled-secured term rate minus the secured term rate at
    the same tenor.  The credit component is the remainder, so the split
    closes by construction.  Both components are nonnegative on states with
    nonnegative spread coordinates (zeta, xi, eta, nu >= 0).
    """
    state = _as_state(state)
    spread = (
        spot_libor(params, state, 0.0, tenor_years, step)
        - ois_ff_rate(params, state, [tenor_years], step)
    )
    funding = (
        term_repo(params, state, 0.0, tenor_years, step)
        - sofr_term_rate(params, state, 0.0, tenor_years, step)
    )
    label = f"{round(tenor_years * 12)}M"
    return DecompositionRow(
        tenor=label,
        libor_ois_spread=spread,
        credit_component=spread - funding,
        funding_component=funding,
        date=date,
    )


def regression_decomposition(spread_ois, spread_repo):
    """OLS of the unsecured-OIS spread on the unsecured-repo spread.

    Returns ``(alpha, beta, beta_stderr, fitted_credit)`` where the fitted
    credit series is beta * spread_repo, zero whenever the repo spread is
    zero.
    """
    y = np.asarray(spread_ois, dtype=float)
    z = np.asarray(spread_repo, dtype=float)
    if y.shape != z.shape or y.ndim != 1 or y.size < 3:
        raise ValueError("need two equal-length series with at least 3 points")
    z_c = z - z.mean()
    y_c = y - y.mean()
    denom = float(z_c @ z_c)
    if denom == 0.0:
        raise ValueError("regressor has zero variance")
    # centred cross product keeps the identical-series case exact in floats
    beta = float(z_c @ y_c) / denom
    alpha = float(y.mean() - beta * z.mean())
    resid = y - alpha - beta * z
    dof = y.size - 2
    beta_stderr = math.sqrt(float(resid @ resid) / dof / denom)
    return alpha, beta, beta_stderr, beta * z


# ---------------------------------------------------------------------------
# Futures risk premia
# ---------------------------------------------------------------------------

def _gaussian_p_moments(params: ModelParams, x_gauss: np.ndarray,
                        horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional physical-measure mean and covariance of the Gaussian block."""
    from scipy.linalg import expm

    KP, thetaP = to_p_measure(params)
    if not is_stationary(KP):
        raise ValueError("state dynamics not stationary under the physical measure")
    K = KP[:3, :3]
    theta = thetaP[:3]
    sig = np.zeros((3, 3))
    sig[0, 0] = params.sigma_r
    sig[1, 0] = params.sigma_theta * params.rho
    sig[1, 1] = params.sigma_theta * math.sqrt(1.0 - params.rho**2)
    sig[2, 2] = params.sigma_zeta
    F = expm(-K * horizon)
    mean = theta + F @ (x_gauss - theta)
    # Van Loan block trick for the OU covariance integral.
    Q = sig @ sig.T
    M = np.zeros((6, 6))
    M[:3, :3] = -K
    M[:3, 3:] = Q
    M[3:, 3:] = K.T
    E = expm(M * horizon)
    cov = E[3:, 3:].T @ E[:3, 3:]
    return mean, 0.5 * (cov + cov.T)


def _cir_block_terminal(params: ModelParams, x_cir: np.ndarray, horizon: float,
                        n_draws: int, seed: int,
                        dt: float = 1.0 / 500.0) -> np.ndarray:
    """Antithetic full-truncation Euler draws of (xi, eta, nu) at the horizon
    under the physical measure."""
    KP, thetaP = to_p_measure(params)
    K = KP[3:, 3:]
    drift_const = K @ thetaP[3:]
    sig = np.array([params.sigma_xi, params.sigma_eta, params.sigma_nu])
    n_steps = max(1, math.ceil(horizon / dt))
    h = horizon / n_steps
    half = (n_draws + 1) // 2
    rng = np.random.default_rng(seed)
    x = np.tile(np.asarray(x_cir, dtype=float), (2 * half, 1))
    sqrt_h = math.sqrt(h)
    for _ in range(n_steps):
        pos = np.maximum(x, 0.0)
        z_half = rng.standard_normal((half, 3))
        z = np.concatenate([z_half, -z_half])
        x = x + (drift_const - pos @ K.T) * h + sig * np.sqrt(pos) * sqrt_h * z
    return np.maximum(x[:n_draws], 0.0)


def futures_risk_premium(params: ModelParams, state, kind: str, horizon: float,
                         accrual: float = 91.0 / 360.0, n_draws: int = 10_000,
                         seed: int = 0, step: float = DEFAULT_STEP,
                         annualize: bool = True) -> tuple[float, float]:
    """Expected excess return of holding one futures contract to its accrual
    start: current futures rate minus the physical-measure expectation of the
    rate at the accrual start S = t + horizon.

    The expectation splits across the independent Gaussian and square-root
    blocks: the Gaussian part of each exponential-affine transform integrates
    in closed form, the square-root part is averaged over antithetic
    physical-measure draws.  Returns ``(premium, standard_error)``; the
    standard error is zero for purely Gaussian contracts.
    """
    state = _as_state(state)
    state.require_renewal()
    x = state.as_array()
    S = horizon
    T = horizon + accrual
    g_idx, c_idx = list(GAUSSIAN_IDX), list(CIR_IDX)
    mean_g, cov_g = _gaussian_p_moments(params, x[g_idx], horizon)

    def affine_p_expectation(a: float, b: np.ndarray) -> tuple[float, float]:
        """E^P[exp(a + b.X(S))] and its standard error."""
        b = np.asarray(b, dtype=float)
        bg, bc = b[g_idx], b[c_idx]
        gauss = math.exp(a + bg @ mean_g + 0.5 * bg @ cov_g @ bg)
        if not np.any(bc):
            return gauss, 0.0
        draws = _cir_block_terminal(params, x[c_idx], horizon, n_draws, seed)
        factors = np.exp(draws @ bc)
        cir_mean = float(factors.mean())
        cir_se = float(factors.std(ddof=1) / math.sqrt(len(factors)))
        return gauss * cir_mean, gauss * cir_se

    if kind == "ED":
        f_now = eurodollar_futures(params, state, 0.0, S, T, step)
        inner = _base(params, SEL_SPOT_UNSECURED, _bucket(accrual), step)
        b = np.array(inner.b_at(accrual))
        b[_JUMP] = 0.0
        growth, growth_se = affine_p_expectation(float(inner.a_at(accrual)), b)
        f_exp = (growth - 1.0) / accrual
        se = growth_se / accrual
    elif kind == "SOFR3M":
        f_now = sofr3m_futures(params, state, 0.0, S, T, step=step)
        inner = _base(params, SEL_SOFR_GROWTH, _bucket(accrual), step)
        growth, growth_se = affine_p_expectation(
            float(inner.a_at(accrual)), np.array(inner.b_at(accrual))
        )
        f_exp = (growth - 1.0) / accrual
        se = growth_se / accrual
    elif kind in ("SOFR1M", "FF"):
        f_now = (sofr1m_futures if kind == "SOFR1M" else fedfunds_futures)(
            params, state, 0.0, S, T
        )
        mean_state = x.copy()
        mean_state[g_idx] = mean_g
        i_r, i_z = gaussian_average_integrals(
            params, mean_state, horizon, horizon, T
        )
        f_exp = (i_r + (i_z if kind == "FF" else 0.0)) / accrual
        se = 0.0
    else:
        raise ValueError(f"unknown futures kind {kind!r}")
    premium = f_now - f_exp
    if annualize:
        premium /= horizon
        se /= horizon
    return premium, se


def risk_premium(params: ModelParams, state, horizon: float,
                 accrual: float = 91.0 / 360.0, n_draws: int = 10_000,
                 seed: int = 0, step: float = DEFAULT_STEP) -> tuple[float, float]:
    """Annualized premium of the long term-unsecured / short compounded-
    secured futures portfolio held to the accrual start."""
    rp_ed, se_ed = futures_risk_premium(
        params, state, "ED", horizon, accrual, n_draws, seed, step
    )
    rp_sofr, se_sofr = futures_risk_premium(
        params, state, "SOFR3M", horizon, accrual, n_draws, seed, step
    )
    return rp_ed - rp_sofr, math.hypot(se_ed, se_sofr)


# ---------------------------------------------------------------------------
# Instrument records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstrumentSpec:
    """Self-contained pricing request in year-fraction time.

    ``start``/``end`` bound the accrual period of spot and futures kinds;
    ``payment_times``/``fixed_times`` are offsets from the valuation date for
    swap and CDS kinds; ``realized`` is a ``(values, weights)`` pair for
    in-accrual futures.
    """

    kind: str
    start: float | None = None
    end: float | None = None
    payment_times: tuple = ()
    fixed_times: tuple = ()
    realized: tuple | None = None

    KINDS = (
        "SpotLibor", "TermRepo", "EurodollarFut", "Sofr3mFut", "Sofr1mFut",
        "FedFundsFut", "OisSofr", "OisFf", "Irs3m", "Irs6m", "Cds",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown instrument kind {self.kind!r}")
        if self.start is not None and self.end is not None and not self.start < self.end:
            raise ValueError("need start < end")


def price_instrument(spec: InstrumentSpec, params: ModelParams, state,
                     step: float = DEFAULT_STEP) -> float:
    """Closed-form model value of an instrument at valuation time 0."""
    k = spec.kind
    if k == "SpotLibor":
        return spot_libor(params, state, 0.0, spec.end, step)
    if k == "TermRepo":
        return term_repo(params, state, 0.0, spec.end, step)
    if k == "EurodollarFut":
        return eurodollar_futures(params, state, 0.0, spec.start, spec.end, step)
    if k == "Sofr3mFut":
        return sofr3m_futures(params, state, 0.0, spec.start, spec.end,
                              spec.realized, step)
    if k == "Sofr1mFut":
        return sofr1m_futures(params, state, 0.0, spec.start, spec.end,
                              spec.realized)
    if k == "FedFundsFut":
        return fedfunds_futures(params, state, 0.0, spec.start, spec.end,
                                spec.realized)
    if k == "OisSofr":
        return ois_sofr_rate(params, state, spec.payment_times, step)
    if k == "OisFf":
        return ois_ff_rate(params, state, spec.payment_times, step)
    if k in ("Irs3m", "Irs6m"):
        return irs_rate(params, state, spec.payment_times, spec.fixed_times, step)
    if k == "Cds":
        return cds_spread(params, state, 0.0, spec.end,
                          payment_tenor=0.25, step=step)
    raise ValueError(f"unknown instrument kind {k!r}")
