"""Parameter set, state vector and affine drift/diffusion machinery.

The model couples four benchmark rates through an eight-dimensional affine
state

    X = (r_s, theta_s, zeta, lam, phi, xi, eta, nu)

where

    r_s     secured (SOFR-type) short rate, two-factor Gaussian,
    theta_s stochastic mean of r_s,
    zeta    spread between the unsecured overnight rate and r_s (Gaussian),
    lam     credit-downgrade roll-over spread (pure jump, exponential decay),
    phi     funding-liquidity roll-over spread (pure jump, exponential decay),
    xi      jump intensity of lam (square root, mean-reverting to eta),
    eta     stochastic mean of xi (square root),
    nu      jump intensity of phi (square root).

Under the pricing measure the state solves

    dX = KQ (thetaQ - X) du + Sigma D(X) dW + dJ

with KQ, thetaQ, Sigma built by :func:`build_affine_coefficients` and
D(X) = diag(1, 1, 1, 0, 0, sqrt(xi), sqrt(eta), sqrt(nu)) evaluated by
:func:`diffusion_scale`.  Jump sizes are exponential with a fixed mean
(`mean_jump`); recovery at default is zero throughout.

The market price of risk is completely affine and only attached to the six
diffusive coordinates; :func:`to_p_measure` maps the pricing-measure drift of
the reduced state (r_s, theta_s, zeta, xi, eta, nu) to its physical-measure
counterpart.
"""

from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, fields, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ModelParams",
    "StateVector",
    "AffineCoefficients",
    "ParameterError",
    "build_affine_coefficients",
    "diffusion_scale",
    "to_p_measure",
    "validate_params",
    "GAUSSIAN_IDX",
    "JUMP_IDX",
    "CIR_IDX",
    "REDUCED_IDX",
]

# State coordinate indices (full 8-dim ordering).
IDX_R, IDX_THETA, IDX_ZETA, IDX_LAM, IDX_PHI, IDX_XI, IDX_ETA, IDX_NU = range(8)

GAUSSIAN_IDX = (IDX_R, IDX_THETA, IDX_ZETA)
JUMP_IDX = (IDX_LAM, IDX_PHI)
CIR_IDX = (IDX_XI, IDX_ETA, IDX_NU)
#: Ordering of the reduced six-dimensional state used for estimation:
#: the jump spreads are re-initialised at zero on every observation date and
#: carry no time-series information.
REDUCED_IDX = (IDX_R, IDX_THETA, IDX_ZETA, IDX_XI, IDX_ETA, IDX_NU)


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: pricing-measure dynamics, market prices of risk
    and measurement-error standard deviations.

    Rates, spreads and volatilities are in decimals per year; intensities in
    events per year; measurement sigmas in rate units (decimals).
    """

    kappa_r: float
    kappa_theta: float
    kappa_zeta: float
    kappa_xi: float
    kappa_eta: float
    kappa_nu: float
    theta_theta: float
    theta_zeta: float
    theta_eta: float
    theta_nu: float
    sigma_r: float
    sigma_theta: float
    sigma_zeta: float
    sigma_xi: float
    sigma_eta: float
    sigma_nu: float
    rho: float
    beta_lambda: float
    beta_phi: float
    mu_r: float = 0.0
    mu_theta: float = 0.0
    mu_zeta: float = 0.0
    mu_xi: float = 0.0
    mu_eta: float = 0.0
    mu_nu: float = 0.0
    meas_sigma_sofr: float = 1e-4
    meas_sigma_effr: float = 1e-4
    meas_sigma_libor: float = 1e-4
    # Fixed by identification: jump mean and the (zero) recovery rate are
    # interchangeable with the intensity level, so they are not free.
    mean_jump: float = 0.02

    def validate(self) -> None:
        """Raise :class:`ParameterError` on the first violated invariant."""
        problems = validate_params(self)
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def jump_pole(self) -> float:
        """Transform singularity 1/mean_jump for the jump coordinates."""
        return 1.0 / self.mean_jump

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ParameterError(f"unknown parameter name(s): {', '.join(unknown)}")
        missing = sorted(
            {f.name for f in fields(cls) if f.default is MISSING} - set(values)
        )
        if missing:
            raise ParameterError(f"missing parameter(s): {', '.join(missing)}")
        return cls(**values)

    def save(self, path: str | Path) -> None:
        """Write the flat ``name = value`` text format shared by CLI and tests."""
        lines = [f"{name} = {value!r}" for name, value in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        values: dict[str, float] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'name = value'")
            name, _, value = line.partition("=")
            try:
                values[name.strip()] = float(value)
            except ValueError as exc:
                raise ParameterError(f"{path}:{lineno}: bad number {value!r}") from exc
        return cls.from_dict(values)

    @classmethod
    def reference(cls) -> "ModelParams":
        """Reference calibration used throughout the tests and docs.

        A realistic joint fit to 2018-2021 US money-market data: fast
        mean-reverting secured short rate around a slow stochastic mean,
        near-zero overnight basis, volatile credit-downgrade intensity with a
        persistent stochastic mean, and a fast-decaying funding-liquidity
        spread.
        """
        return cls(
            kappa_r=1.2394,
            kappa_theta=0.0273,
            kappa_zeta=0.5945,
            kappa_xi=8.2375,
            kappa_eta=0.1299,
            kappa_nu=1.6624,
            theta_theta=0.0306,
            theta_zeta=0.0000,
            theta_eta=0.0163,
            theta_nu=2.4408,
            sigma_r=0.0032,
            sigma_theta=0.0071,
            sigma_zeta=0.0006,
            sigma_xi=2.8610,
            sigma_eta=0.7715,
            sigma_nu=3.1921,
            rho=0.0650,
            beta_lambda=5.1952,
            beta_phi=37.3898,
            mu_r=-1.3117,
            mu_theta=0.0003,
            mu_zeta=-0.1095,
            mu_xi=0.8202,
            mu_eta=0.1451,
            mu_nu=-0.2445,
            meas_sigma_sofr=2.3094e-4,
            meas_sigma_effr=2.0621e-4,
            meas_sigma_libor=2.8949e-4,
        )


@dataclass(frozen=True)
class StateVector:
    """Point-in-time state (r_s, theta_s, zeta, lam, phi, xi, eta, nu)."""

    r_s: float
    theta_s: float
    zeta: float
    lam: float = 0.0
    phi: float = 0.0
    xi: float = 0.0
    eta: float = 0.0
    nu: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.r_s, self.theta_s, self.zeta, self.lam, self.phi,
             self.xi, self.eta, self.nu],
            dtype=float,
        )

    @classmethod
    def from_array(cls, x: np.ndarray) -> "StateVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (8,):
            raise ValueError(f"state vector must have shape (8,), got {x.shape}")
        return cls(*x.tolist())

    @property
    def at_renewal(self) -> bool:
        """True when the roll-over spreads are freshly re-initialised.

        Spot fixings are quoted for a borrower that is representative of the
        panel *today*, so every pricing origin must have lam = phi = 0.
        """
        return self.lam == 0.0 and self.phi == 0.0

    def require_renewal(self) -> None:
        if not self.at_renewal:
            raise ValueError(
                "pricing origin must be a renewal state with lam = phi = 0 "
                f"(got lam={self.lam}, phi={self.phi})"
            )


@dataclass(frozen=True)
class AffineCoefficients:
    """Drift matrix KQ, long-run mean thetaQ and volatility matrix Sigma.

    The jump-spread rows (lam, phi) are pure-jump: diagonal decay in KQ,
    zero long-run mean, zero diffusion row in Sigma.
    """

    KQ: np.ndarray
    thetaQ: np.ndarray
    Sigma: np.ndarray


def validate_params(params: ModelParams) -> list[str]:
    """Return every violated invariant as a message; empty list iff valid."""
    p = params
    problems: list[str] = []
    for name in ("kappa_r", "kappa_theta", "kappa_zeta", "kappa_xi",
                 "kappa_eta", "kappa_nu"):
        if not getattr(p, name) > 0:
            problems.append(f"{name} must be > 0")
    for name in ("sigma_r", "sigma_theta", "sigma_zeta", "sigma_xi",
                 "sigma_eta", "sigma_nu"):
        if getattr(p, name) < 0:
            problems.append(f"{name} must be >= 0")
    if not -1.0 <= p.rho <= 1.0:
        problems.append("rho out of [-1,1]")
    for name in ("beta_lambda", "beta_phi"):
        if not getattr(p, name) > 0:
            problems.append(f"{name} must be > 0")
    if not p.mean_jump > 0:
        problems.append("mean_jump must be > 0")
    for name in ("theta_eta", "theta_nu"):
        if getattr(p, name) < 0:
            problems.append(f"{name} must be >= 0")
    for name in ("meas_sigma_sofr", "meas_sigma_effr", "meas_sigma_libor"):
        if not getattr(p, name) > 0:
            problems.append(f"{name} must be > 0")
    for name, value in p.to_dict().items():
        if not math.isfinite(value):
            problems.append(f"{name} must be finite")
    return problems


def build_affine_coefficients(params: ModelParams) -> AffineCoefficients:
    """Assemble KQ (8x8), thetaQ (8,) and Sigma (8x8) for valid params."""
    params.validate()
    p = params
    KQ = np.zeros((8, 8))
    KQ[IDX_R, IDX_R] = p.kappa_r
    KQ[IDX_R, IDX_THETA] = -p.kappa_r
    KQ[IDX_THETA, IDX_THETA] = p.kappa_theta
    KQ[IDX_ZETA, IDX_ZETA] = p.kappa_zeta
    KQ[IDX_LAM, IDX_LAM] = p.beta_lambda
    KQ[IDX_PHI, IDX_PHI] = p.beta_phi
    KQ[IDX_XI, IDX_XI] = p.kappa_xi
    KQ[IDX_XI, IDX_ETA] = -p.kappa_xi
    KQ[IDX_ETA, IDX_ETA] = p.kappa_eta
    KQ[IDX_NU, IDX_NU] = p.kappa_nu

    thetaQ = np.zeros(8)
    thetaQ[IDX_R] = p.theta_theta
    thetaQ[IDX_THETA] = p.theta_theta
    thetaQ[IDX_ZETA] = p.theta_zeta
    thetaQ[IDX_XI] = p.theta_eta
    thetaQ[IDX_ETA] = p.theta_eta
    thetaQ[IDX_NU] = p.theta_nu

    Sigma = np.zeros((8, 8))
    Sigma[IDX_R, IDX_R] = p.sigma_r
    Sigma[IDX_THETA, IDX_R] = p.sigma_theta * p.rho
    Sigma[IDX_THETA, IDX_THETA] = p.sigma_theta * math.sqrt(1.0 - p.rho**2)
    Sigma[IDX_ZETA, IDX_ZETA] = p.sigma_zeta
    Sigma[IDX_XI, IDX_XI] = p.sigma_xi
    Sigma[IDX_ETA, IDX_ETA] = p.sigma_eta
    Sigma[IDX_NU, IDX_NU] = p.sigma_nu
    return AffineCoefficients(KQ=KQ, thetaQ=thetaQ, Sigma=Sigma)


def diffusion_scale(state: StateVector | np.ndarray) -> np.ndarray:
    """State-dependent diagonal D(X) = (1,1,1,0,0,sqrt(xi),sqrt(eta),sqrt(nu)).

    Square-root coordinates are floored at zero before the root, matching the
    full-truncation treatment used in simulation and filtering.
    """
    x = state.as_array() if isinstance(state, StateVector) else np.asarray(state, float)
    d = np.ones(8)
    d[list(JUMP_IDX)] = 0.0
    for i in CIR_IDX:
        d[i] = math.sqrt(max(x[i], 0.0))
    return d


def to_p_measure(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Physical-measure drift (KP, thetaP) of the reduced six-dim state.

    The completely affine risk price shifts only the long-run means of the
    Gaussian coordinates and the mean-reversion speeds of the square-root
    coordinates:

        KP     = KQ_hat - Sigma_hat diag(mu) delta2
        thetaP = KP^{-1} [KQ_hat thetaQ_hat + Sigma_hat diag(mu) delta1]

    with delta1 = (1,1,1,0,0,0)' and delta2 = diag(0,0,0,1,1,1).

    Raises ``ParameterError`` if KP is singular.  Stationarity (all KP
    eigenvalues with positive real part) is *not* enforced here; use
    :func:`is_stationary` where the estimator needs the constraint.
    """
    coeffs = build_affine_coefficients(params)
    idx = list(REDUCED_IDX)
    KQ_hat = coeffs.KQ[np.ix_(idx, idx)]
    thetaQ_hat = coeffs.thetaQ[idx]
    Sigma_hat = coeffs.Sigma[np.ix_(idx, idx)]
    mu = np.array([params.mu_r, params.mu_theta, params.mu_zeta,
                   params.mu_xi, params.mu_eta, params.mu_nu])
    delta1 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    delta2 = np.diag([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])

    KP = KQ_hat - Sigma_hat @ np.diag(mu) @ delta2
    rhs = KQ_hat @ thetaQ_hat + Sigma_hat @ (mu * delta1)
    if abs(np.linalg.det(KP)) < 1e-300:
        raise ParameterError("non-invertible P-drift")
    thetaP = np.linalg.solve(KP, rhs)
    return KP, thetaP


def is_stationary(KP: np.ndarray, tol: float = 0.0) -> bool:
    """True when every eigenvalue of KP has real part above ``tol``."""
    return bool(np.all(np.linalg.eigvals(KP).real > tol))
