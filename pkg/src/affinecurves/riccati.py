"""Transform-coefficient ODEs and closed-form expectations.

Conditional expectations of exponentials of integrated state combinations are
exponential-affine,

    E[ exp(-int_t^{t+tau} selector . X(u) du) | X(t) = x ] = exp(A(tau) + B(tau).x),

with (A, B) solving the coefficient system

    B1' = -kappa_r B1 - R1
    B2' = -kappa_theta B2 + kappa_r B1 - R2
    B3' = -kappa_zeta B3 - R3
    B4' = -beta_lambda B4 - R4
    B5' = -beta_phi B5 - R5
    B6' = -kappa_xi B6 + (sigma_xi B6)^2/2 + B4/(pole - B4) - R6
    B7' = -kappa_eta B7 + kappa_xi B6 + (sigma_eta B7)^2/2 - R7
    B8' = -kappa_nu B8 + (sigma_nu B8)^2/2 + B5/(pole - B5) - R8
    A'  = (KQ thetaQ).B + B.sigma0 sigma0'.B / 2

where ``pole = 1/mean_jump`` is the divergence point of the exponential jump
transform and sigma0 keeps only the Gaussian block of Sigma.  Indices here are
one-based to match the state ordering; code below is zero-based.

Expectations weighted by a linear function of the terminal state (needed for
default-density integrands) use the extended pair (a, b), which solves the
directional derivative of the system above along its initial condition:

    b'  = J_B(B) b          (Jacobian of the B right-hand side)
    a'  = (KQ thetaQ).b + B.sigma0 sigma0'.b

in particular the jump terms differentiate to ``pole * b4 / (pole - B4)^2``
and the quadratic terms to ``sigma^2 B b`` (no 1/2).

Solutions are integrated by fixed-step classical Runge-Kutta and are
queryable at arbitrary intermediate maturities through cubic Hermite
interpolation on the stored grid (stored derivatives, no re-integration).

The module also provides the closed-form time-averaged conditional means
I_r(t;S,T) and I_zeta(t;S,T) used by the one-month futures contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .params import (
    IDX_LAM,
    IDX_PHI,
    ModelParams,
    StateVector,
    build_affine_coefficients,
)

__all__ = [
    "RiccatiSolution",
    "ExtendedSolution",
    "SingularityError",
    "solve_riccati",
    "solve_extended",
    "gaussian_average_integrals",
    "gaussian_average_coefficients",
    "DEFAULT_STEP",
    "CDS_SELECTOR",
]

#: Default integration step: one tenth of a business day.
DEFAULT_STEP = 1.0 / 3650.0

#: Abort integration once a jump coordinate of B exceeds this fraction of the
#: transform pole; realistic solutions stay far below.
GUARD_FRACTION = 0.9

#: Selector pairing the secured short rate with the credit-downgrade spread;
#: the extended transform is defined relative to this base.
CDS_SELECTOR = (1, 0, 0, 1, 0, 0, 0, 0)

#: Below this gap the two Gaussian mean-reversion speeds are treated as equal
#: and the analytic limit of the averaged-mean formula is used.
KAPPA_DEGENERATE_TOL = 1e-8


class SingularityError(RuntimeError):
    """Jump-transform coordinate approached its pole during integration."""

    def __init__(self, tau: float, coordinate: int, value: float, pole: float):
        self.tau = tau
        self.coordinate = coordinate
        self.value = value
        self.pole = pole
        super().__init__(
            f"B[{coordinate}] = {value:.4f} reached {GUARD_FRACTION:.0%} of the "
            f"jump-transform pole {pole:.4f} at tau = {tau:.6f}"
        )


@njit(cache=True)
def _rhs(y, R, c, out):
    # y = (B0..B7, A); c = (kr, kt, kz, bl, bp, kx, ke, kn,
    #                       sx, se, sn, pole, KQth[8], G00, G01, G11, G22)
    kr, kt, kz, bl, bp, kx, ke, kn = c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
    sx, se, sn, pole = c[8], c[9], c[10], c[11]
    b0, b1, b2, b3, b4, b5, b6, b7 = y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7]
    out[0] = -kr * b0 - R[0]
    out[1] = -kt * b1 + kr * b0 - R[1]
    out[2] = -kz * b2 - R[2]
    out[3] = -bl * b3 - R[3]
    out[4] = -bp * b4 - R[4]
    out[5] = -kx * b5 + 0.5 * (sx * b5) ** 2 + b3 / (pole - b3) - R[5]
    out[6] = -ke * b6 + kx * b5 + 0.5 * (se * b6) ** 2 - R[6]
    out[7] = -kn * b7 + 0.5 * (sn * b7) ** 2 + b4 / (pole - b4) - R[7]
    acc = 0.0
    for i in range(8):
        acc += c[12 + i] * y[i]
    out[8] = acc + 0.5 * (
        c[20] * b0 * b0 + 2.0 * c[21] * b0 * b1 + c[22] * b1 * b1 + c[23] * b2 * b2
    )


@njit(cache=True)
def _rhs_joint(y, R, c, out):
    # y = (B0..B7, A, b0..b7, a): base system plus its linearisation.
    _rhs(y[:9], R, c, out[:9])
    kr, kt, kz, bl, bp, kx, ke, kn = c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
    sx, se, sn, pole = c[8], c[9], c[10], c[11]
    B3, B4, B5, B6, B7 = y[3], y[4], y[5], y[6], y[7]
    v0, v1, v2, v3, v4, v5, v6, v7 = (
        y[9], y[10], y[11], y[12], y[13], y[14], y[15], y[16],
    )
    out[9] = -kr * v0
    out[10] = -kt * v1 + kr * v0
    out[11] = -kz * v2
    out[12] = -bl * v3
    out[13] = -bp * v4
    out[14] = (-kx + sx * sx * B5) * v5 + pole * v3 / (pole - B3) ** 2
    out[15] = (-ke + se * se * B6) * v6 + kx * v5
    out[16] = (-kn + sn * sn * B7) * v7 + pole * v4 / (pole - B4) ** 2
    acc = 0.0
    for i in range(8):
        acc += c[12 + i] * y[9 + i]
    out[17] = acc + (
        c[20] * y[0] * v0
        + c[21] * (y[0] * v1 + y[1] * v0)
        + c[22] * y[1] * v1
        + c[23] * y[2] * v2
    )


@njit(cache=True)
def _rk4(y0, R, c, n, h, guard, joint):
    dim = y0.shape[0]
    Y = np.empty((n + 1, dim))
    F = np.empty((n + 1, dim))
    Y[0] = y0
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    for step in range(n):
        y = Y[step]
        if joint:
            _rhs_joint(y, R, c, k1)
        else:
            _rhs(y, R, c, k1)
        F[step] = k1
        for i in range(dim):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        if joint:
            _rhs_joint(tmp, R, c, k2)
        else:
            _rhs(tmp, R, c, k2)
        for i in range(dim):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        if joint:
            _rhs_joint(tmp, R, c, k3)
        else:
            _rhs(tmp, R, c, k3)
        for i in range(dim):
            tmp[i] = y[i] + h * k3[i]
        if joint:
            _rhs_joint(tmp, R, c, k4)
        else:
            _rhs(tmp, R, c, k4)
        for i in range(dim):
            Y[step + 1, i] = y[i] + (h / 6.0) * (
                k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]
            )
        if Y[step + 1, 3] >= guard:
            return Y, F, step + 1, 3
        if Y[step + 1, 4] >= guard:
            return Y, F, step + 1, 4
    if joint:
        _rhs_joint(Y[n], R, c, F[n])
    else:
        _rhs(Y[n], R, c, F[n])
    return Y, F, -1, -1


def _coeff_vector(params: ModelParams) -> np.ndarray:
    coeffs = build_affine_coefficients(params)
    kq_theta = coeffs.KQ @ coeffs.thetaQ
    P = coeffs.Sigma[:3, :3]
    G = P @ P.T
    c = np.empty(24)
    c[0:8] = (
        params.kappa_r, params.kappa_theta, params.kappa_zeta,
        params.beta_lambda, params.beta_phi,
        params.kappa_xi, params.kappa_eta, params.kappa_nu,
    )
    c[8:12] = (params.sigma_xi, params.sigma_eta, params.sigma_nu, params.jump_pole)
    c[12:20] = kq_theta
    c[20], c[21], c[22], c[23] = G[0, 0], G[0, 1], G[1, 1], G[2, 2]
    return c


def _hermite(tau_grid, values, derivs, tau):
    """Cubic Hermite evaluation of tabulated values at tau (scalar or array)."""
    tau = np.asarray(tau, dtype=float)
    scalar = tau.ndim == 0
    t = np.atleast_1d(tau)
    if np.any(t < tau_grid[0] - 1e-12) or np.any(t > tau_grid[-1] + 1e-12):
        raise ValueError(
            f"query tau outside [0, {tau_grid[-1]}]: {t.min()}..{t.max()}"
        )
    t = np.clip(t, tau_grid[0], tau_grid[-1])
    k = np.clip(np.searchsorted(tau_grid, t, side="right") - 1, 0, len(tau_grid) - 2)
    h = tau_grid[k + 1] - tau_grid[k]
    s = (t - tau_grid[k]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    shape_extra = (1,) * (values.ndim - 1)
    h_ = h.reshape(-1, *shape_extra)
    out = (
        h00.reshape(-1, *shape_extra) * values[k]
        + h10.reshape(-1, *shape_extra) * h_ * derivs[k]
        + h01.reshape(-1, *shape_extra) * values[k + 1]
        + h11.reshape(-1, *shape_extra) * h_ * derivs[k + 1]
    )
    return out[0] if scalar else out


@dataclass(frozen=True)
class RiccatiSolution:
    """Tabulated (A, B) on a uniform maturity grid with stored derivatives."""

    tau_grid: np.ndarray
    A_values: np.ndarray   # (n+1,)
    B_values: np.ndarray   # (n+1, 8)
    dA: np.ndarray
    dB: np.ndarray
    selector: tuple
    initial_A: float
    initial_B: np.ndarray

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    def a_at(self, tau):
        return _hermite(self.tau_grid, self.A_values, self.dA, tau)

    def b_at(self, tau):
        return _hermite(self.tau_grid, self.B_values, self.dB, tau)

    def exponent(self, tau, state: StateVector | np.ndarray):
        """A(tau) + B(tau).x for a scalar tau."""
        x = state.as_array() if isinstance(state, StateVector) else np.asarray(state)
        return float(self.a_at(tau) + self.b_at(tau) @ x)

    def to_csv(self, path: str | Path) -> None:
        header = "tau,A," + ",".join(f"B{i}" for i in range(1, 9))
        data = np.column_stack([self.tau_grid, self.A_values, self.B_values])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


@dataclass(frozen=True)
class ExtendedSolution:
    """Linear-weight coefficients (a, b) riding on a base solution."""

    base: RiccatiSolution
    a_values: np.ndarray
    b_values: np.ndarray
    da: np.ndarray
    db: np.ndarray

    def a_at(self, tau):
        return _hermite(self.base.tau_grid, self.a_values, self.da, tau)

    def b_at(self, tau):
        return _hermite(self.base.tau_grid, self.b_values, self.db, tau)

    def weight(self, tau, state: StateVector | np.ndarray) -> float:
        """a(tau) + b(tau).x, the linear prefactor of the extended transform."""
        x = state.as_array() if isinstance(state, StateVector) else np.asarray(state)
        return float(self.a_at(tau) + self.b_at(tau) @ x)


def _grid(tau_max: float, step: float) -> tuple[int, float]:
    if tau_max <= 0:
        raise ValueError("tau_max must be > 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    n = max(1, math.ceil(tau_max / step - 1e-12))
    return n, tau_max / n


def solve_riccati(
    params: ModelParams,
    selector,
    tau_max: float,
    step: float = DEFAULT_STEP,
    initial_A: float = 0.0,
    initial_B: np.ndarray | None = None,
) -> RiccatiSolution:
    """Integrate the coefficient system for one selector vector.

    ``selector`` holds the signed weights of each state coordinate in the
    integrated exponent (entries in {-1, 0, 1}); the transform computed is
    ``E[exp(-int selector.X)]``, so instruments with a +int exponent pass the
    negated selector.
    """
    sel = np.asarray(selector, dtype=float)
    if sel.shape != (8,):
        raise ValueError("selector must have 8 entries")
    if not np.all(np.isin(sel, (-1.0, 0.0, 1.0))):
        raise ValueError("selector entries must be in {-1, 0, 1}")
    b0 = np.zeros(8) if initial_B is None else np.asarray(initial_B, dtype=float).copy()
    if b0.shape != (8,):
        raise ValueError("initial_B must have 8 entries")
    pole = params.jump_pole
    guard = GUARD_FRACTION * pole
    for j in (IDX_LAM, IDX_PHI):
        if b0[j] >= guard:
            raise SingularityError(0.0, j, b0[j], pole)
    n, h = _grid(tau_max, step)
    c = _coeff_vector(params)
    y0 = np.concatenate([b0, [initial_A]])
    Y, F, fail_step, fail_idx = _rk4(y0, sel, c, n, h, guard, False)
    if fail_step >= 0:
        raise SingularityError(fail_step * h, fail_idx, Y[fail_step, fail_idx], pole)
    tau_grid = np.linspace(0.0, n * h, n + 1)
    return RiccatiSolution(
        tau_grid=tau_grid,
        A_values=Y[:, 8].copy(),
        B_values=Y[:, :8].copy(),
        dA=F[:, 8].copy(),
        dB=F[:, :8].copy(),
        selector=tuple(int(v) for v in sel),
        initial_A=float(initial_A),
        initial_B=b0,
    )


def solve_extended(params: ModelParams, base: RiccatiSolution) -> ExtendedSolution:
    """Integrate (a, b) jointly with the base credit-pair coefficients.

    The base must be the zero-initial-condition solution for
    :data:`CDS_SELECTOR`; the extended pair starts at a = 0 and b = the unit
    vector in the credit-downgrade (lam) coordinate.
    """
    if base.selector != CDS_SELECTOR:
        raise ValueError(f"extended transform requires selector {CDS_SELECTOR}")
    if base.initial_A != 0.0 or np.any(base.initial_B != 0.0):
        raise ValueError("extended transform requires zero initial conditions")
    n = len(base.tau_grid) - 1
    h = float(base.tau_grid[1] - base.tau_grid[0])
    c = _coeff_vector(params)
    sel = np.asarray(base.selector, dtype=float)
    y0 = np.zeros(18)
    y0[9 + IDX_LAM] = 1.0
    pole = params.jump_pole
    guard = GUARD_FRACTION * pole
    Y, F, fail_step, fail_idx = _rk4(y0, sel, c, n, h, guard, True)
    if fail_step >= 0:
        raise SingularityError(fail_step * h, fail_idx, Y[fail_step, fail_idx], pole)
    return ExtendedSolution(
        base=base,
        a_values=Y[:, 17].copy(),
        b_values=Y[:, 9:17].copy(),
        da=F[:, 17].copy(),
        db=F[:, 9:17].copy(),
    )


def gaussian_average_coefficients(
    params: ModelParams, t: float, S: float, T: float
) -> tuple[float, float, float, float, float]:
    """Affine coefficients of the averaged-conditional-mean integrals.

    Returns ``(a_r, c_r, c_theta, a_z, c_zeta)`` such that

        I_r(t;S,T)    = a_r + c_r * r_s(t) + c_theta * theta_s(t)
        I_zeta(t;S,T) = a_z + c_zeta * zeta(t).

    The c_theta weight has a (kappa_r - kappa_theta) denominator; below
    :data:`KAPPA_DEGENERATE_TOL` the analytic limit replaces it.
    """
    if not (t <= S < T):
        raise ValueError(f"need t <= S < T, got t={t}, S={S}, T={T}")
    p = params
    kr, kt, kz = p.kappa_r, p.kappa_theta, p.kappa_zeta

    def decay_window(kappa: float) -> float:
        return math.exp(-kappa * (S - t)) - math.exp(-kappa * (T - t))

    e_r = decay_window(kr)
    e_z = decay_window(kz)
    c_r = e_r / kr
    if abs(kr - kt) >= KAPPA_DEGENERATE_TOL:
        e_t = decay_window(kt)
        c_theta = (kr * e_t - kt * e_r) / (kt * (kr - kt))
    else:
        c_theta = (
            (S - t) * math.exp(-kr * (S - t))
            - (T - t) * math.exp(-kr * (T - t))
            + e_r / kr
        )
    c_zeta = e_z / kz
    a_r = ((T - S) - c_r - c_theta) * p.theta_theta
    a_z = ((T - S) - c_zeta) * p.theta_zeta
    return a_r, c_r, c_theta, a_z, c_zeta


def gaussian_average_integrals(
    params: ModelParams,
    state: StateVector | np.ndarray,
    t: float,
    S: float,
    T: float,
) -> tuple[float, float]:
    """Closed-form I_r(t;S,T) and I_zeta(t;S,T).

    These are the time integrals over the reference period [S, T] of the
    conditional means of the secured short rate and of the overnight spread,
    given the state at t (t <= S < T)."""
    x = state.as_array() if isinstance(state, StateVector) else np.asarray(state)
    a_r, c_r, c_theta, a_z, c_zeta = gaussian_average_coefficients(params, t, S, T)
    return (
        float(a_r + c_r * x[0] + c_theta * x[1]),
        float(a_z + c_zeta * x[2]),
    )
