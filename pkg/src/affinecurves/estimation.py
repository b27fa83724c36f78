"""Kalman-filter quasi-maximum-likelihood estimation.

The reduced six-dimensional state (r_s, theta_s, zeta, xi, eta, nu) evolves
under the physical measure as an affine diffusion; between observation dates
(uniform step dt = 1/252) the filter uses the exact conditional mean

    X(t_i) = (I - F) thetaP + F X(t_{i-1}),   F = exp(-KP dt)

and the analytic conditional covariance

    Z(t_i) = int_0^dt exp(-KP u) Sig D(m(u))^2 Sig' exp(-KP' u) du

with the diffusion argument frozen at the conditional mean path
m(u) = thetaP + exp(-KP u)(x - thetaP).  Z is affine in x, so a constant
part plus one coefficient matrix per (square-root coordinate, state
coordinate) pair is precomputed per parameter vector through block
matrix-exponential integrals; square-root coordinates of x are floored at
zero first, which keeps the whole mean path (and hence Z) nonnegative
whenever the physical drift is stationary.

Measurements are the transformed quotes: term rates, term-rate futures and
compounded futures enter as equivalent continuously-compounded yields (affine
in the state through the transform coefficients divided by the accrual);
arithmetic-average overnight futures are already affine and enter untouched.
Missing observations drop out by row selection, which is exactly the
selection-matrix treatment of the measurement equation; the per-date
likelihood contribution uses the observed count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, expm, solve_continuous_lyapunov
from scipy.optimize import minimize

from . import pricing
from .linops import integral_of_expm_columns, ou_covariance_integral
from .panel import ObservationPanel, PanelError, year_fraction, yield_from_rate
from .params import (
    REDUCED_IDX,
    ModelParams,
    is_stationary,
    to_p_measure,
    validate_params,
)
from .riccati import DEFAULT_STEP, KAPPA_DEGENERATE_TOL

__all__ = [
    "FilterOutput",
    "EstimationResult",
    "FitOptions",
    "PanelGeometry",
    "MeasurementModel",
    "measurement_map",
    "conditional_covariance_Z",
    "kalman_step",
    "quasi_loglik",
    "filter_panel",
    "fit",
    "PANEL_DT",
]

#: Uniform filtering step between consecutive business-day observations.
PANEL_DT = 1.0 / 252.0

#: Reduced-state positions of the square-root coordinates.
_CIR_LOCAL = (3, 4, 5)

# Measurement codes (kind x accrual stage).
_SOFR1M_FWD, _SOFR1M_ACC = 0, 1
_SOFR3M_FWD, _SOFR3M_ACC = 2, 3
_FF_FWD, _FF_ACC = 4, 5
_ED, _LIBOR, _REPO = 6, 7, 8

_GROUP_OF = {"sofr": 0, "effr": 1, "libor": 2}


# ---------------------------------------------------------------------------
# Panel geometry: everything about (date, column) pairs that does not depend
# on model parameters, precomputed once per panel.
# ---------------------------------------------------------------------------

@dataclass
class PanelGeometry:
    """Parameter-independent filter inputs derived from a panel."""

    obs: np.ndarray        # (T, J) transformed observations (yields), NaN missing
    mask: np.ndarray       # (T, J) True where observed
    code: np.ndarray       # (T, J) measurement code per cell
    tau_s: np.ndarray      # (T, J) accrual start minus valuation (years)
    tau_t: np.ndarray      # (T, J) accrual end minus valuation (years)
    accrual: np.ndarray    # (T, J) accrual length used as the quote divisor
    realized: np.ndarray   # (T, J) realized log-growth / weighted fixing sum
    group: np.ndarray      # (J,) measurement-sigma group per column
    n_dates: int = field(init=False)

    def __post_init__(self):
        self.n_dates = self.obs.shape[0]

    @classmethod
    def from_panel(cls, panel: ObservationPanel) -> "PanelGeometry":
        T, J = panel.values.shape
        obs = np.full((T, J), np.nan)
        code = np.zeros((T, J), dtype=np.int8)
        tau_s = np.zeros((T, J))
        tau_t = np.zeros((T, J))
        accrual = np.zeros((T, J))
        realized = np.zeros((T, J))
        group = np.array([_GROUP_OF[c.sigma_group] for c in panel.columns],
                         dtype=np.int8)
        mask = panel.mask()
        for j, col in enumerate(panel.columns):
            for i, d in enumerate(panel.dates):
                if not mask[i, j]:
                    continue
                t_yf = year_fraction(d)
                value = panel.values[i, j]
                if col.kind in ("LIBOR", "REPO"):
                    acc = col.tenor_years
                    code[i, j] = _LIBOR if col.kind == "LIBOR" else _REPO
                    tau_s[i, j] = 0.0
                    tau_t[i, j] = acc
                    accrual[i, j] = acc
                    obs[i, j] = yield_from_rate(value, acc)
                    continue
                s_yf = year_fraction(col.start)
                e_yf = year_fraction(col.end)
                acc = e_yf - s_yf
                accrual[i, j] = acc
                tau_s[i, j] = s_yf - t_yf
                tau_t[i, j] = e_yf - t_yf
                in_accrual = d > col.start
                if col.kind == "ED":
                    if in_accrual:
                        raise PanelError(
                            f"{col.label} quoted at {d} after its settlement"
                        )
                    code[i, j] = _ED
                    obs[i, j] = yield_from_rate(value, acc)
                elif col.kind == "SOFR3M":
                    code[i, j] = _SOFR3M_ACC if in_accrual else _SOFR3M_FWD
                    obs[i, j] = yield_from_rate(value, acc)
                    if in_accrual:
                        vals, wts = panel.realized_window("sofr", col.start, d)
                        realized[i, j] = float(np.sum(np.log1p(wts * vals)))
                elif col.kind in ("SOFR1M", "FF"):
                    is_ff = col.kind == "FF"
                    if in_accrual:
                        code[i, j] = _FF_ACC if is_ff else _SOFR1M_ACC
                        vals, wts = panel.realized_window(
                            "effr" if is_ff else "sofr", col.start, d
                        )
                        realized[i, j] = float(wts @ vals)
                    else:
                        code[i, j] = _FF_FWD if is_ff else _SOFR1M_FWD
                    obs[i, j] = value
                else:
                    raise PanelError(f"unsupported column kind {col.kind}")
        return cls(obs=obs, mask=mask & ~np.isnan(obs), code=code, tau_s=tau_s,
                   tau_t=tau_t, accrual=accrual, realized=realized, group=group)


# ---------------------------------------------------------------------------
# Measurement model: affine (intercept, loading) rows per date.
# ---------------------------------------------------------------------------

_REDUCED = list(REDUCED_IDX)


class MeasurementModel:
    """Affine measurement rows for one parameter vector.

    Transform-coefficient solutions are solved once and shared across all
    dates and contracts (loadings depend on time to maturity only); the per
    (date, column) intercepts and loadings are then tabulated in one
    vectorised pass per instrument family.
    """

    def __init__(self, params: ModelParams, geometry: PanelGeometry,
                 step: float = DEFAULT_STEP):
        self.params = params
        self.geometry = geometry
        self.step = step
        g = geometry
        T, J = g.obs.shape
        self.intercepts = np.zeros((T, J))
        self.loadings = np.zeros((T, J, 6))
        horizon = float(
            max(g.tau_s.max(initial=0.0), g.tau_t.max(initial=0.0), 0.5)
        )
        bucket = pricing._bucket(horizon)

        def fill(cells: np.ndarray, sol, taus: np.ndarray, acc: float,
                 extra_intercept: np.ndarray | float = 0.0) -> None:
            if cells[0].size == 0:
                return
            a_vals = np.atleast_1d(sol.a_at(taus))
            b_vals = np.atleast_2d(sol.b_at(taus))[:, _REDUCED]
            self.intercepts[cells] = (a_vals + extra_intercept) / acc
            self.loadings[cells] = b_vals / acc

        spot_specs = ((_LIBOR, pricing.SEL_SPOT_UNSECURED),
                      (_REPO, pricing.SEL_TERM_REPO))
        for code_, sel in spot_specs:
            for acc in np.unique(g.accrual[g.code == code_]):
                cells = np.nonzero(g.mask & (g.code == code_)
                                   & (g.accrual == acc))
                sol = pricing._base(params, sel, pricing._bucket(float(acc)), step)
                fill(cells, sol, np.full(cells[0].size, float(acc)), float(acc))
        for acc in np.unique(g.accrual[g.mask & (g.code == _ED)]):
            acc = float(acc)
            cells = np.nonzero(g.mask & (g.code == _ED) & (g.accrual == acc))
            sol = pricing._chained(params, pricing.SEL_SPOT_UNSECURED, acc,
                                   pricing.SEL_NONE, bucket, step, True)
            fill(cells, sol, g.tau_s[cells], acc)
        sofr3m = g.mask & ((g.code == _SOFR3M_FWD) | (g.code == _SOFR3M_ACC))
        for acc in np.unique(g.accrual[sofr3m]):
            acc = float(acc)
            inner = pricing._base(params, pricing.SEL_SOFR_GROWTH,
                                  pricing._bucket(acc), step)
            cells = np.nonzero(g.mask & (g.code == _SOFR3M_FWD)
                               & (g.accrual == acc))
            if cells[0].size:
                outer = pricing._chained(params, pricing.SEL_SOFR_GROWTH, acc,
                                         pricing.SEL_NONE, bucket, step, False)
                fill(cells, outer, g.tau_s[cells], acc)
            cells = np.nonzero(g.mask & (g.code == _SOFR3M_ACC)
                               & (g.accrual == acc))
            if cells[0].size:
                fill(cells, inner, g.tau_t[cells], acc, g.realized[cells])
        self._fill_averaging()
        self.sigma_by_group = np.array([
            params.meas_sigma_sofr, params.meas_sigma_effr, params.meas_sigma_libor,
        ])

    def _fill_averaging(self) -> None:
        """Arithmetic-average futures: loadings from the closed-form averaged
        conditional means, vectorised over all cells at once."""
        g = self.geometry
        averaging = g.mask & ((g.code == _SOFR1M_FWD) | (g.code == _SOFR1M_ACC)
                              | (g.code == _FF_FWD) | (g.code == _FF_ACC))
        cells = np.nonzero(averaging)
        if cells[0].size == 0:
            return
        code = g.code[cells]
        in_acc = (code == _SOFR1M_ACC) | (code == _FF_ACC)
        is_ff = (code == _FF_FWD) | (code == _FF_ACC)
        tau_s = np.where(in_acc, 0.0, g.tau_s[cells])
        tau_t = g.tau_t[cells]
        acc = g.accrual[cells]
        p = self.params
        e_r = np.exp(-p.kappa_r * tau_s) - np.exp(-p.kappa_r * tau_t)
        e_z = np.exp(-p.kappa_zeta * tau_s) - np.exp(-p.kappa_zeta * tau_t)
        c_r = e_r / p.kappa_r
        if abs(p.kappa_r - p.kappa_theta) >= KAPPA_DEGENERATE_TOL:
            e_t = np.exp(-p.kappa_theta * tau_s) - np.exp(-p.kappa_theta * tau_t)
            c_th = ((p.kappa_r * e_t - p.kappa_theta * e_r)
                    / (p.kappa_theta * (p.kappa_r - p.kappa_theta)))
        else:
            c_th = (tau_s * np.exp(-p.kappa_r * tau_s)
                    - tau_t * np.exp(-p.kappa_r * tau_t) + e_r / p.kappa_r)
        c_z = np.where(is_ff, e_z / p.kappa_zeta, 0.0)
        window = tau_t - tau_s
        intercept = ((window - c_r - c_th) * p.theta_theta
                     + np.where(is_ff, (window - c_z) * p.theta_zeta, 0.0)
                     + np.where(in_acc, g.realized[cells], 0.0))
        self.intercepts[cells] = intercept / acc
        self.loadings[cells[0], cells[1], 0] = c_r / acc
        self.loadings[cells[0], cells[1], 1] = c_th / acc
        self.loadings[cells[0], cells[1], 2] = c_z / acc

    def h_diag(self, columns: np.ndarray) -> np.ndarray:
        """Measurement-error variances for the given column indices."""
        return self.sigma_by_group[self.geometry.group[columns]] ** 2

    def rows_for_date(self, i: int, columns: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Intercepts (m,) and reduced-state loadings (m, 6) for date i."""
        return self.intercepts[i, columns], self.loadings[i, columns]


def measurement_map(params: ModelParams, panel: ObservationPanel, date_index: int,
                    step: float = DEFAULT_STEP
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine measurement (intercepts, loadings, observed-column indices)
    for one panel date."""
    geometry = PanelGeometry.from_panel(panel)
    model = MeasurementModel(params, geometry, step)
    columns = np.flatnonzero(geometry.mask[date_index])
    a, B = model.rows_for_date(date_index, columns)
    return a, B, columns


# ---------------------------------------------------------------------------
# Conditional covariance of the state transition.
# ---------------------------------------------------------------------------

class TransitionModel:
    """Exact mean and analytic covariance of one filtering step."""

    def __init__(self, params: ModelParams, dt: float = PANEL_DT):
        KP, thetaP = to_p_measure(params)
        if not is_stationary(KP):
            raise ValueError("KP has a nonpositive eigenvalue")
        self.KP = KP
        self.thetaP = thetaP
        self.dt = dt
        self.F = expm(-KP * dt)
        self.C = (np.eye(6) - self.F) @ thetaP
        sig_hat = np.zeros((6, 6))
        sig_hat[0, 0] = params.sigma_r
        sig_hat[1, 0] = params.sigma_theta * params.rho
        sig_hat[1, 1] = params.sigma_theta * math.sqrt(1 - params.rho**2)
        sig_hat[2, 2] = params.sigma_zeta
        sig_hat[3, 3] = params.sigma_xi
        sig_hat[4, 4] = params.sigma_eta
        sig_hat[5, 5] = params.sigma_nu
        self.sig_hat = sig_hat
        d0 = np.ones(6)
        d0[list(_CIR_LOCAL)] = np.maximum(thetaP[list(_CIR_LOCAL)], 0.0)
        quad = sig_hat @ np.diag(d0) @ sig_hat.T
        self.Z0 = ou_covariance_integral(KP, quad, dt)
        self._state_terms = self._build_state_terms()
        self.stationary_cov = solve_continuous_lyapunov(KP, quad)

    def _build_state_terms(self) -> np.ndarray:
        """W[j] (6x6) with Z(x) = Z0 + sum_j (x~ - thetaP)_j W[j].

        Each W[j] collects, over the square-root coordinates k, the integral
        of [exp(-KP u)]_{kj} exp(-KP u) (sigma_k^2 e_k e_k') exp(-KP' u).
        The scalar factor makes the integrand a triple product of the same
        matrix exponential, which a Kronecker-sum exponential integrates in
        one shot.
        """
        K = self.KP
        n = 6
        eye = np.eye(n)
        M2 = np.kron(K, np.eye(n)) + np.kron(np.eye(n), K)
        M3 = np.kron(K, np.eye(n * n)) + np.kron(eye, M2)
        cols = []
        meta = []
        for local_k, k in enumerate(_CIR_LOCAL):
            qk = np.outer(eye[:, k], eye[:, k]).flatten(order="F")
            for j in range(n):
                cols.append(np.kron(eye[:, j], qk))
                meta.append((k, j))
        C = np.column_stack(cols)
        integral = integral_of_expm_columns(M3, C, self.dt)
        W = np.zeros((n, n, n))
        sig2 = np.diag(self.sig_hat) ** 2
        for col, (k, j) in enumerate(meta):
            block = integral[k * n * n:(k + 1) * n * n, col]
            W[j] += sig2[k] * block.reshape((n, n), order="F")
        return W

    def covariance(self, state_mean: np.ndarray) -> np.ndarray:
        """Z for a step starting from ``state_mean`` (square-root
        coordinates floored at zero before use)."""
        x = np.asarray(state_mean, dtype=float).copy()
        x[list(_CIR_LOCAL)] = np.maximum(x[list(_CIR_LOCAL)], 0.0)
        w = x - self.thetaP
        Z = self.Z0 + np.tensordot(w, self._state_terms, axes=(0, 0))
        return 0.5 * (Z + Z.T)


def conditional_covariance_Z(params: ModelParams, state_mean,
                             dt: float = PANEL_DT) -> np.ndarray:
    """Analytic transition covariance over one step from ``state_mean``."""
    return TransitionModel(params, dt).covariance(np.asarray(state_mean, float))


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def kalman_step(prior_mean, prior_cov, y, intercepts, loadings, h_diag):
    """One masked update: returns (mean, cov, innovation, loglik_increment).

    Inputs are already reduced to the observed rows; an empty observation
    vector returns the prior untouched with a zero likelihood increment.
    """
    n_obs = len(y)
    if n_obs == 0:
        return prior_mean, prior_cov, np.empty(0), 0.0
    B = np.atleast_2d(loadings)
    innovation = y - (intercepts + B @ prior_mean)
    PBt = prior_cov @ B.T
    S = B @ PBt + np.diag(h_diag)
    chol = cho_factor(S, lower=True)
    gain = cho_solve(chol, PBt.T).T
    mean = prior_mean + gain @ innovation
    IKB = np.eye(len(prior_mean)) - gain @ B
    cov = IKB @ prior_cov @ IKB.T + (gain * h_diag) @ gain.T
    cov = 0.5 * (cov + cov.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    quad = float(innovation @ cho_solve(chol, innovation))
    loglik_inc = -0.5 * (n_obs * math.log(2.0 * math.pi) + logdet + quad)
    return mean, cov, innovation, loglik_inc


@dataclass
class FilterOutput:
    """Filtered and predicted moments plus the quasi-log-likelihood."""

    filtered_means: np.ndarray        # (T, 6)
    filtered_covs: np.ndarray         # (T, 6, 6)
    predicted_means: np.ndarray       # (T, 6)
    predicted_covs: np.ndarray        # (T, 6, 6)
    innovations: list                 # per date, observed rows only
    innovation_covs: list
    loglik_contributions: np.ndarray  # (T,)
    loglik: float
    n_observed: np.ndarray            # (T,)
    status: str = "ok"


def _rejected(status: str) -> FilterOutput:
    return FilterOutput(
        filtered_means=np.empty((0, 6)), filtered_covs=np.empty((0, 6, 6)),
        predicted_means=np.empty((0, 6)), predicted_covs=np.empty((0, 6, 6)),
        innovations=[], innovation_covs=[],
        loglik_contributions=np.empty(0), loglik=-math.inf,
        n_observed=np.empty(0, dtype=int), status=status,
    )


def filter_panel(params: ModelParams, panel_or_geometry,
                 dt: float = PANEL_DT, step: float = DEFAULT_STEP) -> FilterOutput:
    """Run the full filter; -inf likelihood (never an exception) when the
    physical drift is nonstationary or the parameters are invalid."""
    if validate_params(params):
        return _rejected("invalid parameters")
    geometry = (panel_or_geometry
                if isinstance(panel_or_geometry, PanelGeometry)
                else PanelGeometry.from_panel(panel_or_geometry))
    try:
        transition = TransitionModel(params, dt)
    except ValueError:
        return _rejected("nonstationary physical drift")
    model = MeasurementModel(params, geometry, step)
    T = geometry.n_dates
    filtered_means = np.zeros((T, 6))
    filtered_covs = np.zeros((T, 6, 6))
    predicted_means = np.zeros((T, 6))
    predicted_covs = np.zeros((T, 6, 6))
    innovations = []
    innovation_covs = []
    contributions = np.zeros(T)
    n_observed = np.zeros(T, dtype=int)

    mean = transition.thetaP.copy()
    cov = 0.5 * (transition.stationary_cov + transition.stationary_cov.T)
    for i in range(T):
        if i > 0:
            Z = transition.covariance(mean)
            mean = transition.C + transition.F @ mean
            cov = transition.F @ cov @ transition.F.T + Z
            cov = 0.5 * (cov + cov.T)
        predicted_means[i] = mean
        predicted_covs[i] = cov
        columns = np.flatnonzero(geometry.mask[i])
        a, B = model.rows_for_date(i, columns)
        y = geometry.obs[i, columns]
        mean, cov, innovation, inc = kalman_step(
            mean, cov, y, a, B, model.h_diag(columns)
        )
        filtered_means[i] = mean
        filtered_covs[i] = cov
        innovations.append(innovation)
        innovation_covs.append(
            B @ predicted_covs[i] @ B.T + np.diag(model.h_diag(columns))
        )
        contributions[i] = inc
        n_observed[i] = len(columns)
    total = float(contributions.sum())
    if not math.isfinite(total):
        return _rejected("non-finite likelihood")
    return FilterOutput(
        filtered_means=filtered_means, filtered_covs=filtered_covs,
        predicted_means=predicted_means, predicted_covs=predicted_covs,
        innovations=innovations, innovation_covs=innovation_covs,
        loglik_contributions=contributions, loglik=total,
        n_observed=n_observed,
    )


def quasi_loglik(params: ModelParams, panel_or_geometry,
                 dt: float = PANEL_DT, step: float = DEFAULT_STEP) -> float:
    """Total Gaussian quasi-log-likelihood of a panel."""
    return filter_panel(params, panel_or_geometry, dt, step).loglik


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

#: Parameters constrained positive optimise in log space; the Brownian
#: correlation in atanh space; everything else untransformed.
_LOG_PARAMS = frozenset({
    "kappa_r", "kappa_theta", "kappa_zeta", "kappa_xi", "kappa_eta", "kappa_nu",
    "sigma_r", "sigma_theta", "sigma_zeta", "sigma_xi", "sigma_eta", "sigma_nu",
    "beta_lambda", "beta_phi", "theta_eta", "theta_nu",
    "meas_sigma_sofr", "meas_sigma_effr", "meas_sigma_libor",
})

DEFAULT_FREE = (
    "kappa_r", "kappa_theta", "kappa_zeta", "kappa_xi", "kappa_eta", "kappa_nu",
    "theta_theta", "theta_zeta", "theta_eta", "theta_nu",
    "sigma_r", "sigma_theta", "sigma_zeta", "sigma_xi", "sigma_eta", "sigma_nu",
    "rho", "beta_lambda", "beta_phi",
    "mu_r", "mu_theta", "mu_zeta", "mu_xi", "mu_eta", "mu_nu",
    "meas_sigma_sofr", "meas_sigma_effr", "meas_sigma_libor",
)

GAUSSIAN_BLOCK_FREE = (
    "kappa_r", "kappa_theta", "theta_theta", "sigma_r", "sigma_theta",
    "kappa_zeta", "sigma_zeta", "rho",
)

_PENALTY = 1e12


def _to_unconstrained(name: str, value: float) -> float:
    if name in _LOG_PARAMS:
        return math.log(max(value, 1e-12))
    if name == "rho":
        return math.atanh(min(max(value, -1 + 1e-12), 1 - 1e-12))
    return value


def _from_unconstrained(name: str, value: float) -> float:
    if name in _LOG_PARAMS:
        return math.exp(value)
    if name == "rho":
        return math.tanh(value)
    return value


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 4000
    f_tol: float = 0.01
    restarts: int = 1
    x_tol: float = 1e-6


@dataclass
class EstimationResult:
    params: ModelParams
    loglik: float
    converged: bool
    n_iterations: int
    n_evaluations: int
    stderr: dict[str, float]
    filtered_states: np.ndarray
    free: tuple[str, ...]
    message: str = ""


def _objective_factory(geometry: PanelGeometry, base: ModelParams,
                       free: tuple[str, ...], dt: float, step: float):
    def unpack(vec: np.ndarray) -> ModelParams:
        changes = {name: _from_unconstrained(name, v) for name, v in zip(free, vec)}
        return base.replace(**changes)

    def objective(vec: np.ndarray) -> float:
        try:
            candidate = unpack(vec)
        except (OverflowError, ValueError):
            return _PENALTY
        problems = validate_params(candidate)
        if problems:
            return _PENALTY * (1.0 + len(problems))
        try:
            KP, _ = to_p_measure(candidate)
        except Exception:
            return _PENALTY
        eig_min = float(np.min(np.linalg.eigvals(KP).real))
        if eig_min <= 0.0:
            return _PENALTY * (1.0 + abs(eig_min))
        ll = quasi_loglik(candidate, geometry, dt, step)
        if not math.isfinite(ll):
            return _PENALTY
        return -ll

    return unpack, objective


def _opg_stderr(geometry: PanelGeometry, params: ModelParams,
                free: tuple[str, ...], dt: float, step: float) -> dict[str, float]:
    """Outer-product-of-gradients standard errors with central differences."""
    theta = np.array([getattr(params, name) for name in free])
    scores = np.zeros((geometry.n_dates, len(free)))
    for j, name in enumerate(free):
        h = 1e-5 * max(abs(theta[j]), 1e-4)
        upper = filter_panel(params.replace(**{name: theta[j] + h}), geometry,
                             dt, step)
        lower = filter_panel(params.replace(**{name: theta[j] - h}), geometry,
                             dt, step)
        if not (math.isfinite(upper.loglik) and math.isfinite(lower.loglik)):
            scores[:, j] = np.nan
            continue
        scores[:, j] = (upper.loglik_contributions
                        - lower.loglik_contributions) / (2.0 * h)
    opg = scores.T @ scores
    try:
        cov = np.linalg.inv(opg)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(opg)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return dict(zip(free, se))


def fit(panel_or_geometry, initial_params: ModelParams,
        free: tuple[str, ...] = DEFAULT_FREE,
        options: FitOptions = FitOptions(),
        dt: float = PANEL_DT, step: float = DEFAULT_STEP,
        compute_stderr: bool = True) -> EstimationResult:
    """Maximise the quasi-log-likelihood by adaptive Nelder-Mead.

    Optimisation runs in a transformed space (log for positive parameters,
    atanh for the correlation); candidate vectors violating parameter
    invariants or physical-measure stationarity are rejected through a large
    graded penalty, so no invalid parameter set is ever constructed.
    Restarts re-initialise the simplex at the incumbent best vertex.
    """
    geometry = (panel_or_geometry
                if isinstance(panel_or_geometry, PanelGeometry)
                else PanelGeometry.from_panel(panel_or_geometry))
    unpack, objective = _objective_factory(geometry, initial_params, free, dt, step)
    x0 = np.array([
        _to_unconstrained(name, getattr(initial_params, name)) for name in free
    ])
    if objective(x0) >= _PENALTY:
        problems = validate_params(initial_params)
        try:
            KP, _ = to_p_measure(initial_params)
            if not is_stationary(KP):
                problems.append("nonstationary physical drift")
        except Exception as exc:
            problems.append(str(exc))
        raise ValueError("infeasible starting point: " + "; ".join(problems))

    best_x, best_f = x0, objective(x0)
    n_iter = n_fev = 0
    converged = False
    message = ""
    for attempt in range(options.restarts + 1):
        res = minimize(
            objective, best_x, method="Nelder-Mead",
            options={
                "adaptive": True,
                "fatol": options.f_tol,
                "xatol": options.x_tol,
                "maxiter": options.max_iter,
                "maxfev": 4 * options.max_iter,
            },
        )
        n_iter += res.nit
        n_fev += res.nfev
        improved = best_f - res.fun
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
        converged = bool(res.success)
        message = res.message
        if attempt < options.restarts and improved < options.f_tol:
            break

    fitted = unpack(best_x)
    out = filter_panel(fitted, geometry, dt, step)
    stderr = (_opg_stderr(geometry, fitted, free, dt, step)
              if compute_stderr else {})
    return EstimationResult(
        params=fitted,
        loglik=out.loglik,
        converged=converged,
        n_iterations=n_iter,
        n_evaluations=n_fev,
        stderr=stderr,
        filtered_states=out.filtered_means,
        free=tuple(free),
        message=str(message),
    )
