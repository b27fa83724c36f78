"""Path simulation, Monte Carlo pricing oracle and synthetic panels.

The path engine advances all coordinates jointly on a uniform step grid
refined to hit every requested recording time:

* Gaussian block: the five-dimensional augmented system (r_s, theta_s, zeta,
  int r_s, int zeta) is linear, so states and their running integrals are
  sampled from the exact joint conditional normal (no discretisation bias).
* Square-root block (xi, eta, nu): full-truncation Euler; the negative part
  is truncated inside drift and diffusion arguments and recorded values are
  floored at zero.
* Jump spreads (lam, phi): exact exponential decay between jumps.  Jump
  times come from thinning against the intensity frozen at the step start,
  with the per-step bound refreshed at the current intensity plus five
  standard deviations of its one-step move; jump sizes are exponential.
  Running integrals of lam and phi are accumulated in closed form, including
  the partial decay of mid-step jumps.

The same engine drives the brute-force pricing oracle (:func:`mc_price`),
the doubly stochastic default-time sampler, and physical-measure state
histories for synthetic observation panels.
"""

from __future__ import annotations

import datetime as dt
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import estimation, pricing
from .linops import exact_affine_transition
from .panel import (
    ContractLadder,
    ObservationPanel,
    business_days,
    first_business_day_on_or_after,
    next_business_day,
    rate_from_yield,
)
from .params import (
    CIR_IDX,
    GAUSSIAN_IDX,
    ModelParams,
    StateVector,
    build_affine_coefficients,
    to_p_measure,
)
from .pricing import InstrumentSpec
from .riccati import DEFAULT_STEP

__all__ = [
    "PathSet",
    "simulate_paths",
    "simulate_default_times",
    "mc_price",
    "mc_cds_legs",
    "mc_risk_premium_expectation",
    "generate_synthetic_panel",
    "DEFAULT_MC_DT",
]

#: Oracle-pricing step; discretisation bias is below Monte Carlo noise at
#: 1e5 paths.
DEFAULT_MC_DT = 1.0 / 1000.0

_G = list(GAUSSIAN_IDX)
_C = list(CIR_IDX)


def _psd_factor(V: np.ndarray) -> np.ndarray:
    """Economy factor L with L L' = V for possibly singular PSD V.

    Columns span only the nontrivial directions, so a rank-r covariance
    consumes r normals per draw.
    """
    vals, vecs = np.linalg.eigh(0.5 * (V + V.T))
    keep = vals > max(float(vals.max(initial=0.0)), 0.0) * 1e-14
    if not keep.any():
        return np.zeros((V.shape[0], 1))
    return vecs[:, keep] * np.sqrt(vals[keep])


class _Blocks:
    """Measure-dependent drift pieces of the three blocks."""

    def __init__(self, params: ModelParams, measure: str):
        if measure not in ("Q", "P"):
            raise ValueError("measure must be 'Q' or 'P'")
        coeffs = build_affine_coefficients(params)
        if measure == "Q":
            K6 = coeffs.KQ[np.ix_(_G + _C, _G + _C)]
            drift6 = (coeffs.KQ @ coeffs.thetaQ)[_G + _C]
        else:
            KP, thetaP = to_p_measure(params)
            K6 = KP
            drift6 = KP @ thetaP
        self.K_gauss = K6[:3, :3]
        self.c_gauss = drift6[:3]
        self.K_cir = K6[3:, 3:]
        self.c_cir = drift6[3:]
        self.sig_gauss = coeffs.Sigma[:3, :3]
        self.sig_cir = np.array([params.sigma_xi, params.sigma_eta, params.sigma_nu])


class _Engine:
    """Vectorised path engine with running integrals and optional default
    monitoring."""

    def __init__(self, params: ModelParams, state0: StateVector | np.ndarray,
                 measure: str, dt_step: float, n_paths: int, seed: int,
                 with_rollover: bool = True):
        if dt_step <= 0:
            raise ValueError("dt must be > 0")
        if n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        x0 = (state0.as_array() if isinstance(state0, StateVector)
              else np.asarray(state0, dtype=float))
        self.params = params
        self.blocks = _Blocks(params, measure)
        self.dt = dt_step
        self.n_paths = n_paths
        self.rng = np.random.default_rng(seed)
        self.with_rollover = with_rollover
        self.time = 0.0
        self.gauss = np.zeros((n_paths, 5))
        self.gauss[:, 0:3] = x0[_G]
        self.cir = np.tile(x0[_C].astype(float), (n_paths, 1))
        self.lam = np.full(n_paths, x0[3])
        self.phi = np.full(n_paths, x0[4])
        self.int_lam = np.zeros(n_paths)
        self.int_phi = np.zeros(n_paths)
        self._trans_cache: dict[float, tuple] = {}
        # Default monitoring state.
        self.exp_draws = None
        self.alive = None
        self.default_tau = None
        self.default_disc_int = None
        self.jump_log: list[tuple[np.ndarray, ...]] = []
        self.collect_jumps = False

    def enable_default_monitor(self, exp_draws: np.ndarray) -> None:
        self.exp_draws = np.asarray(exp_draws, dtype=float)
        self.alive = np.ones(self.n_paths, dtype=bool)
        self.default_tau = np.full(self.n_paths, np.inf)
        self.default_disc_int = np.zeros(self.n_paths)

    def _transition(self, h: float):
        cached = self._trans_cache.get(h)
        if cached is None:
            b = self.blocks
            A5 = np.zeros((5, 5))
            A5[:3, :3] = -b.K_gauss
            A5[3, 0] = 1.0
            A5[4, 2] = 1.0
            c5 = np.zeros(5)
            c5[:3] = b.c_gauss
            Q5 = np.zeros((5, 5))
            Q5[:3, :3] = b.sig_gauss @ b.sig_gauss.T
            F, g, V = exact_affine_transition(A5, c5, Q5, h)
            cached = (F, g, _psd_factor(V))
            self._trans_cache[h] = cached
        return cached

    def _poisson_counts(self, rate: np.ndarray) -> np.ndarray:
        """Poisson draws by inverse CDF on one uniform per path.

        Step rates are tiny (at most a few 1e-3), so the support is cut at
        four events; the neglected tail has probability below rate^5/120.
        """
        u = self.rng.random(rate.size)
        p = np.exp(-rate)
        cdf = p.copy()
        counts = np.zeros(rate.size, dtype=np.int64)
        term = p
        for k in range(1, 5):
            remaining = u >= cdf
            if not remaining.any():
                break
            counts[remaining] += 1
            term = term * rate / k
            cdf = cdf + term
        return counts

    def _jump_updates(self, h: float, intensity: np.ndarray, sigma: float,
                      beta: float, value: np.ndarray, integral: np.ndarray,
                      coord: int) -> None:
        """Thin one jump family over a step of length h, in place."""
        rng = self.rng
        bound = intensity + 5.0 * sigma * np.sqrt(intensity * h)
        counts = self._poisson_counts(bound * h)
        decay = math.exp(-beta * h)
        integral += value * ((1.0 - decay) / beta)
        value *= decay
        hot = np.flatnonzero(counts)
        if hot.size == 0:
            return
        idx = np.repeat(hot, counts[hot])
        u = rng.uniform(0.0, h, idx.size)
        accept = rng.uniform(size=idx.size) * bound[idx] < intensity[idx]
        if not np.any(accept):
            return
        idx = idx[accept]
        u = u[accept]
        sizes = rng.exponential(self.params.mean_jump, idx.size)
        tail = np.exp(-beta * (h - u))
        np.add.at(integral, idx, sizes * (1.0 - tail) / beta)
        np.add.at(value, idx, sizes * tail)
        if self.collect_jumps:
            self.jump_log.append(
                (idx.copy(), self.time + u, sizes, np.full(idx.size, coord, np.int8))
            )

    def _advance_rollover(self, h: float) -> None:
        """Jump-spread and square-root blocks over one fine step."""
        pos = np.maximum(self.cir, 0.0)
        # Jumps first: intensities are frozen at the step start.
        self._jump_updates(h, pos[:, 0], self.params.sigma_xi,
                           self.params.beta_lambda, self.lam,
                           self.int_lam, 3)
        self._jump_updates(h, pos[:, 2], self.params.sigma_nu,
                           self.params.beta_phi, self.phi,
                           self.int_phi, 4)
        noise = self.rng.standard_normal((self.n_paths, 3))
        noise *= np.sqrt(pos * h)
        noise *= self.blocks.sig_cir
        self.cir += noise
        self.cir += self.blocks.c_cir * h
        self.cir -= pos @ (self.blocks.K_cir.T * h)

    def _advance_gaussian(self, h: float) -> None:
        """Exact joint draw of the Gaussian states and their integrals."""
        F, g, L = self._transition(h)
        z = self.rng.standard_normal((self.n_paths, L.shape[1]))
        out = z @ L.T
        out += self.gauss @ F.T
        out += g
        self.gauss = out

    def advance(self, h: float) -> None:
        """One joint step of length h across all blocks."""
        if self.with_rollover:
            self._advance_rollover(h)
        if self.exp_draws is not None:
            int_prev = self.int_lam.copy()
            disc_prev = self.gauss[:, 3].copy()
        self._advance_gaussian(h)
        if self.exp_draws is not None:
            crossed = self.alive & (self.int_lam >= self.exp_draws)
            if np.any(crossed):
                gained = self.int_lam[crossed] - int_prev[crossed]
                frac = np.where(
                    gained > 0.0,
                    (self.exp_draws[crossed] - int_prev[crossed])
                    / np.where(gained > 0.0, gained, 1.0),
                    1.0,
                )
                self.default_tau[crossed] = self.time + frac * h
                self.default_disc_int[crossed] = (
                    disc_prev[crossed]
                    + frac * (self.gauss[crossed, 3] - disc_prev[crossed])
                )
                self.alive[crossed] = False
        self.time += h

    def run(self, record_times) -> dict[str, list]:
        """Advance to each record time and snapshot states and integrals.

        The Gaussian block and its integrals, being independent of the other
        blocks, take one exact transition per recording segment; only the
        square-root and jump blocks are refined at the engine step (and only
        when present).  Default monitoring needs the discount integral at
        intra-step times, so it forces joint fine stepping throughout.
        """
        times = np.unique(np.asarray(record_times, dtype=float))
        if np.any(times <= 0):
            raise ValueError("record times must be positive")
        joint = self.exp_draws is not None
        records: dict[str, list] = {"time": [], "state": [], "integrals": []}
        t_prev = 0.0
        for t_next in times:
            seg = t_next - t_prev
            if joint or self.with_rollover:
                n_sub = max(1, math.ceil(seg / self.dt - 1e-9))
                h = seg / n_sub
                if joint:
                    for _ in range(n_sub):
                        self.advance(h)
                else:
                    for _ in range(n_sub):
                        self._advance_rollover(h)
                        self.time += h
                    self._advance_gaussian(seg)
            else:
                self._advance_gaussian(seg)
                self.time += seg
            records["time"].append(t_next)
            records["state"].append(self.snapshot_state())
            records["integrals"].append(self.snapshot_integrals())
            t_prev = t_next
        return records

    def snapshot_state(self) -> np.ndarray:
        out = np.empty((self.n_paths, 8))
        out[:, 0:3] = self.gauss[:, 0:3]
        out[:, 3] = self.lam
        out[:, 4] = self.phi
        out[:, 5:8] = np.maximum(self.cir, 0.0)
        return out

    def snapshot_integrals(self) -> np.ndarray:
        """Columns: int r_s, int zeta, int lam, int phi (from time 0)."""
        out = np.empty((self.n_paths, 4))
        out[:, 0] = self.gauss[:, 3]
        out[:, 1] = self.gauss[:, 4]
        out[:, 2] = self.int_lam
        out[:, 3] = self.int_phi
        return out


# ---------------------------------------------------------------------------
# Stored path sets
# ---------------------------------------------------------------------------

_MAGIC = b"AFPS"
_VERSION = 1


@dataclass
class PathSet:
    """Simulated paths on a uniform grid with running integrals.

    ``states[p, k]`` is the state of path p after k steps; ``integrals`` has
    columns (int r_s, int zeta, int lam, int phi) accumulated from step 0.
    ``jump_events`` is a flat record of (path, time, size, coordinate).
    """

    dt: float
    n_steps: int
    n_paths: int
    seed: int
    measure: str
    states: np.ndarray           # (n_paths, n_steps + 1, 8)
    integrals: np.ndarray        # (n_paths, n_steps + 1, 4)
    jump_events: np.ndarray = field(
        default_factory=lambda: np.empty(
            0, dtype=[("path", "i8"), ("time", "f8"),
                      ("size", "f8"), ("coord", "i1")]
        )
    )

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def jumps_for_path(self, path: int) -> np.ndarray:
        return self.jump_events[self.jump_events["path"] == path]

    def save_binary(self, path) -> None:
        """Compact layout: magic, version, dims, dt, seed, measure flag,
        then row-major float64 states followed by integrals."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIIdQB", _VERSION, self.n_paths,
                                 self.n_steps + 1, 8 + 4, self.dt, self.seed,
                                 0 if self.measure == "Q" else 1))
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.integrals, dtype="<f8").tobytes())

    @classmethod
    def load_binary(cls, path) -> "PathSet":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("not a path-set file")
            version, n_paths, n_records, width, dt_step, seed, measure = (
                struct.unpack("<IIIIdQB", fh.read(struct.calcsize("<IIIIdQB")))
            )
            if version != _VERSION or width != 12:
                raise ValueError("unsupported path-set layout")
            states = np.frombuffer(
                fh.read(n_paths * n_records * 8 * 8), dtype="<f8"
            ).reshape(n_paths, n_records, 8).copy()
            integrals = np.frombuffer(
                fh.read(n_paths * n_records * 4 * 8), dtype="<f8"
            ).reshape(n_paths, n_records, 4).copy()
        return cls(dt=dt_step, n_steps=n_records - 1, n_paths=n_paths,
                   seed=seed, measure="Q" if measure == 0 else "P",
                   states=states, integrals=integrals)

    def to_csv(self, path) -> None:
        names = ["r_s", "theta_s", "zeta", "lam", "phi", "xi", "eta", "nu",
                 "int_r", "int_zeta", "int_lam", "int_phi"]
        with open(path, "w") as fh:
            fh.write("path,step,tau," + ",".join(names) + "\n")
            for p in range(self.n_paths):
                for k in range(self.n_steps + 1):
                    row = np.concatenate([self.states[p, k], self.integrals[p, k]])
                    fh.write(f"{p},{k},{k * self.dt!r},"
                             + ",".join(repr(float(v)) for v in row) + "\n")


def simulate_paths(params: ModelParams, initial: StateVector | np.ndarray,
                   measure: str, dt: float, n_steps: int, n_paths: int,
                   seed: int) -> PathSet:
    """Simulate and store full paths (states, integrals, jump events)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    engine = _Engine(params, initial, measure, dt, n_paths, seed)
    engine.collect_jumps = True
    states = np.empty((n_paths, n_steps + 1, 8))
    integrals = np.zeros((n_paths, n_steps + 1, 4))
    states[:, 0] = engine.snapshot_state()
    for k in range(n_steps):
        engine.advance(dt)
        states[:, k + 1] = engine.snapshot_state()
        integrals[:, k + 1] = engine.snapshot_integrals()
    if engine.jump_log:
        parts = [
            np.rec.fromarrays(chunk, names=("path", "time", "size", "coord"))
            for chunk in engine.jump_log
        ]
        events = np.concatenate([np.asarray(p) for p in parts]).astype(
            [("path", "i8"), ("time", "f8"), ("size", "f8"), ("coord", "i1")]
        )
        events.sort(order=["path", "time"])
    else:
        events = np.empty(0, dtype=[("path", "i8"), ("time", "f8"),
                                    ("size", "f8"), ("coord", "i1")])
    return PathSet(dt=dt, n_steps=n_steps, n_paths=n_paths, seed=seed,
                   measure=measure, states=states, integrals=integrals,
                   jump_events=events)


def simulate_default_times(path_set: PathSet, path_index: int, t: float,
                           T: float, seed: int) -> float | None:
    """Doubly stochastic default time of the borrower renewed at t.

    Draws a unit-exponential threshold and returns the first u in (t, T]
    where the integrated credit-downgrade spread from t reaches it (linear
    interpolation within a grid step), or None when the path survives to T.
    """
    threshold = float(np.random.default_rng(seed).exponential(1.0))
    times = path_set.times
    if not (0.0 <= t < T <= times[-1] + 1e-12):
        raise ValueError("need 0 <= t < T within the simulated horizon")
    cum = path_set.integrals[path_index, :, 2]
    base = float(np.interp(t, times, cum))
    rel = cum - base
    k = np.searchsorted(times, t, side="left")
    for i in range(max(k, 1), len(times)):
        if times[i] <= t:
            continue
        if times[i] > T + 1e-12:
            break
        lo = max(times[i - 1], t)
        rel_lo = float(np.interp(lo, times, rel))
        if rel[i] >= threshold:
            gained = rel[i] - rel_lo
            frac = 0.0 if gained <= 0 else (threshold - rel_lo) / gained
            return float(lo + frac * (times[i] - lo))
    return None


# ---------------------------------------------------------------------------
# Monte Carlo pricing oracle
# ---------------------------------------------------------------------------

def _mean_se(samples: np.ndarray, scale: float = 1.0) -> tuple[float, float]:
    n = len(samples)
    return (float(samples.mean()) * scale,
            float(samples.std(ddof=1)) / math.sqrt(n) * scale)


def _ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Delta-method mean and standard error of mean(num)/mean(den)."""
    num_mean, den_mean = num.mean(), den.mean()
    ratio = num_mean / den_mean
    resid = (num - ratio * den) / den_mean
    return float(ratio), float(resid.std(ddof=1) / math.sqrt(len(num)))


def _inner_exponents(params: ModelParams, selector, accrual: float,
                     states: np.ndarray, zero_jumps: bool,
                     step: float) -> np.ndarray:
    sol = pricing._base(params, selector, pricing._bucket(accrual), step)
    b = np.array(sol.b_at(accrual))
    if zero_jumps:
        b[[3, 4]] = 0.0
    return float(sol.a_at(accrual)) + states @ b


def mc_price(instrument: InstrumentSpec, params: ModelParams,
             state: StateVector | np.ndarray, n_paths: int = 100_000,
             seed: int = 0, dt: float = DEFAULT_MC_DT,
             step: float = DEFAULT_STEP) -> tuple[float, float]:
    """Brute-force Monte Carlo value of an instrument's defining expectation.

    Returns ``(estimate, standard_error)``.  Nested fixings (term-unsecured
    futures, swap floating legs) simulate the state to the fixing date and
    apply the one-period transform there.
    """
    kind = instrument.kind
    needs_rollover = kind in ("SpotLibor", "TermRepo", "EurodollarFut",
                              "Irs3m", "Irs6m", "Cds")
    if kind == "Cds":
        spread, se, *_ = mc_cds_legs(instrument, params, state, n_paths, seed, dt, step)
        return spread, se

    engine = _Engine(params, state, "Q", dt, n_paths, seed,
                     with_rollover=needs_rollover)

    if kind in ("SpotLibor", "TermRepo"):
        tau = instrument.end
        rec = engine.run([tau])
        ints = rec["integrals"][0]
        expo = (ints[:, 0] + ints[:, 3] if kind == "TermRepo"
                else ints.sum(axis=1))
        return _mean_se(np.expm1(expo), 1.0 / tau)

    if kind == "EurodollarFut":
        S, T = instrument.start, instrument.end
        rec = engine.run([S])
        expo = _inner_exponents(params, pricing.SEL_SPOT_UNSECURED, T - S,
                                rec["state"][0], True, step)
        return _mean_se(np.expm1(expo), 1.0 / (T - S))

    if kind == "Sofr3mFut":
        S, T = instrument.start, instrument.end
        if S >= 0:
            rec = engine.run([S, T] if S > 0 else [T])
            int_r_T = rec["integrals"][-1][:, 0]
            int_r_S = rec["integrals"][0][:, 0] if S > 0 else 0.0
            growth = np.exp(int_r_T - int_r_S)
        else:
            values, weights = instrument.realized
            factor = float(np.prod(1.0 + np.asarray(weights) * np.asarray(values)))
            rec = engine.run([T])
            growth = factor * np.exp(rec["integrals"][0][:, 0])
        return _mean_se(growth - 1.0, 1.0 / (T - S))

    if kind in ("Sofr1mFut", "FedFundsFut"):
        S, T = instrument.start, instrument.end
        col = (0,) if kind == "Sofr1mFut" else (0, 1)
        if S >= 0:
            rec = engine.run([S, T] if S > 0 else [T])
            tot = sum(rec["integrals"][-1][:, c] for c in col)
            if S > 0:
                tot = tot - sum(rec["integrals"][0][:, c] for c in col)
            base = 0.0
        else:
            values, weights = instrument.realized
            base = float(np.dot(weights, values))
            rec = engine.run([T])
            tot = sum(rec["integrals"][0][:, c] for c in col)
        return _mean_se(base + tot, 1.0 / (T - S))

    if kind in ("OisSofr", "OisFf"):
        times = np.asarray(instrument.payment_times, dtype=float)
        deltas = np.diff(np.concatenate([[0.0], times]))
        rec = engine.run(times)
        int_r = np.stack([r[:, 0] for r in rec["integrals"]], axis=1)
        disc = np.exp(-int_r)
        annuity = disc @ deltas
        if kind == "OisSofr":
            floating = 1.0 - disc[:, -1]
        else:
            int_z = np.stack([r[:, 1] for r in rec["integrals"]], axis=1)
            prev_r = np.concatenate(
                [np.zeros((n_paths, 1)), int_r[:, :-1]], axis=1
            )
            prev_z = np.concatenate(
                [np.zeros((n_paths, 1)), int_z[:, :-1]], axis=1
            )
            period = np.exp((int_r - prev_r) + (int_z - prev_z))
            floating = (disc * (period - 1.0)).sum(axis=1)
        return _ratio_se(floating, annuity)

    if kind in ("Irs3m", "Irs6m"):
        f_times = np.asarray(instrument.payment_times, dtype=float)
        x_times = np.asarray(instrument.fixed_times, dtype=float)
        delta = float(f_times[0])
        starts = np.concatenate([[0.0], f_times[:-1]])
        rec = engine.run(np.unique(np.concatenate([f_times, x_times,
                                                   starts[1:]])))
        t_index = {round(t, 12): i for i, t in enumerate(rec["time"])}
        int_r = np.stack([r[:, 0] for r in rec["integrals"]], axis=1)

        def int_r_at(t: float) -> np.ndarray:
            if t == 0.0:
                return np.zeros(n_paths)
            return int_r[:, t_index[round(t, 12)]]

        def state_at(t: float) -> np.ndarray:
            if t == 0.0:
                x0 = state.as_array() if isinstance(state, StateVector) else state
                return np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
            return rec["state"][t_index[round(t, 12)]]

        floating = np.zeros(n_paths)
        for t_start, t_pay in zip(starts, f_times):
            expo = _inner_exponents(params, pricing.SEL_SPOT_UNSECURED, delta,
                                    state_at(float(t_start)), True, step)
            floating += np.exp(-int_r_at(float(t_pay))) * np.expm1(expo)
        fixed_deltas = np.diff(np.concatenate([[0.0], x_times]))
        annuity = np.zeros(n_paths)
        for d, t_pay in zip(fixed_deltas, x_times):
            annuity += d * np.exp(-int_r_at(float(t_pay)))
        return _ratio_se(floating, annuity)

    raise ValueError(f"unsupported instrument kind {kind!r}")


def mc_cds_legs(instrument: InstrumentSpec, params: ModelParams,
                state: StateVector | np.ndarray, n_paths: int = 100_000,
                seed: int = 0, dt: float = DEFAULT_MC_DT,
                step: float = DEFAULT_STEP):
    """Default-time Monte Carlo of the protection swap.

    Returns ``(spread, spread_se, protection, protection_se, annuity)``:
    the protection leg discounts one unit at default before maturity; the
    annuity collects quarterly survival-discounted payments plus accrual to
    the default time.
    """
    T = instrument.end
    pay_times = (np.asarray(instrument.payment_times, dtype=float)
                 if instrument.payment_times
                 else 0.25 * np.arange(1, round(T / 0.25) + 1))
    engine = _Engine(params, state, "Q", dt, n_paths, seed)
    engine.enable_default_monitor(
        np.random.default_rng(seed + 1).exponential(1.0, n_paths)
    )
    rec = engine.run(pay_times)
    int_r = np.stack([r[:, 0] for r in rec["integrals"]], axis=1)
    tau = engine.default_tau
    defaulted = tau <= T
    protection = np.where(defaulted, np.exp(-engine.default_disc_int), 0.0)
    annuity = np.zeros(n_paths)
    prev = 0.0
    for i, t_pay in enumerate(pay_times):
        paid = tau > t_pay
        annuity += np.where(paid, (t_pay - prev) * np.exp(-int_r[:, i]), 0.0)
        in_period = defaulted & (tau > prev) & (tau <= t_pay)
        annuity += np.where(
            in_period, (tau - prev) * np.exp(-engine.default_disc_int), 0.0
        )
        prev = t_pay
    spread, spread_se = _ratio_se(protection, annuity)
    prot_mean, prot_se = _mean_se(protection)
    return spread, spread_se, prot_mean, prot_se, float(annuity.mean())


def mc_risk_premium_expectation(params: ModelParams, state, kind: str,
                                horizon: float, accrual: float,
                                n_paths: int = 100_000, seed: int = 0,
                                dt: float = DEFAULT_MC_DT,
                                step: float = DEFAULT_STEP
                                ) -> tuple[float, float]:
    """Full physical-measure Monte Carlo of E_P[f(S;S,T)] for one contract."""
    engine = _Engine(params, state, "P", dt, n_paths, seed,
                     with_rollover=kind == "ED")
    rec = engine.run([horizon])
    states = rec["state"][0]
    if kind == "ED":
        expo = _inner_exponents(params, pricing.SEL_SPOT_UNSECURED, accrual,
                                states, True, step)
        return _mean_se(np.expm1(expo), 1.0 / accrual)
    if kind == "SOFR3M":
        expo = _inner_exponents(params, pricing.SEL_SOFR_GROWTH, accrual,
                                states, False, step)
        return _mean_se(np.expm1(expo), 1.0 / accrual)
    if kind in ("SOFR1M", "FF"):
        from .riccati import gaussian_average_coefficients

        a_r, c_r, c_th, a_z, c_z = gaussian_average_coefficients(
            params, 0.0, 0.0, accrual
        )
        vals = a_r + c_r * states[:, 0] + c_th * states[:, 1]
        if kind == "FF":
            vals = vals + a_z + c_z * states[:, 2]
        return _mean_se(vals, 1.0 / accrual)
    raise ValueError(f"unknown futures kind {kind!r}")


# ---------------------------------------------------------------------------
# Synthetic observation panels
# ---------------------------------------------------------------------------

_COLUMN_ORDER = {"SOFR1M": 0, "SOFR3M": 1, "FF": 2, "ED": 3, "LIBOR": 4, "REPO": 5}


def generate_synthetic_panel(params: ModelParams, start: dt.date, n_dates: int,
                             ladder: ContractLadder = ContractLadder(),
                             seed: int = 0, noise: bool = True,
                             mask_repo_6m: float = 0.0,
                             cir_substeps: int = 8,
                             step: float = DEFAULT_STEP
                             ) -> tuple[ObservationPanel, np.ndarray]:
    """Simulate a physical-measure state history and quote every ladder
    contract on each business day.

    Gaussian measurement noise (at the parameter set's measurement sigmas)
    is added on the yield scale used by the filter, so the generated panel is
    exactly the filter's data-generating process.  Returns the panel and the
    (n_dates, 6) matrix of true reduced states at the panel dates.
    """
    rng = np.random.default_rng(seed)
    first = first_business_day_on_or_after(start, ladder.holidays)
    panel_dates = [first]
    while len(panel_dates) < n_dates:
        panel_dates.append(next_business_day(panel_dates[-1], ladder.holidays))
    sim_start = first_business_day_on_or_after(
        first - dt.timedelta(days=100), ladder.holidays
    )
    fixing_dates = business_days(
        sim_start, panel_dates[-1] + dt.timedelta(days=1), ladder.holidays
    )

    blocks = _Blocks(params, "P")
    h = estimation.PANEL_DT
    Fg, gg, Vg = exact_affine_transition(
        -blocks.K_gauss, blocks.c_gauss,
        blocks.sig_gauss @ blocks.sig_gauss.T, h,
    )
    Lg = _psd_factor(Vg)
    _, thetaP = to_p_measure(params)
    gauss = thetaP[:3].copy()
    cir = thetaP[3:].copy()
    h_sub = h / cir_substeps
    states6 = np.empty((len(fixing_dates), 6))
    states6[0] = np.concatenate([gauss, np.maximum(cir, 0.0)])
    for i in range(1, len(fixing_dates)):
        gauss = Fg @ gauss + gg + Lg @ rng.standard_normal(Lg.shape[1])
        for _ in range(cir_substeps):
            pos = np.maximum(cir, 0.0)
            cir = (cir + (blocks.c_cir - blocks.K_cir @ pos) * h_sub
                   + blocks.sig_cir * np.sqrt(pos * h_sub)
                   * rng.standard_normal(3))
        states6[i] = np.concatenate([gauss, np.maximum(cir, 0.0)])

    sofr_fixings = {d: float(states6[i, 0]) for i, d in enumerate(fixing_dates)}
    effr_fixings = {
        d: float(states6[i, 0] + states6[i, 2]) for i, d in enumerate(fixing_dates)
    }
    date_pos = {d: i for i, d in enumerate(fixing_dates)}
    true_states = np.stack([states6[date_pos[d]] for d in panel_dates])

    columns_set = {}
    for d in panel_dates:
        for col in ladder.columns_for(d):
            columns_set[col.label] = col
    columns = sorted(
        columns_set.values(),
        key=lambda c: (_COLUMN_ORDER[c.kind],
                       c.start.toordinal() if c.start else 0,
                       c.label),
    )
    label_pos = {c.label: j for j, c in enumerate(columns)}

    values = np.full((n_dates, len(columns)), np.nan)
    skeleton = ObservationPanel(
        dates=panel_dates, columns=columns, values=values.copy(),
        sofr_fixings=sofr_fixings, effr_fixings=effr_fixings,
        holidays=ladder.holidays,
    )
    for i, d in enumerate(panel_dates):
        for col in ladder.columns_for(d):
            skeleton.values[i, label_pos[col.label]] = 0.0
    geometry = estimation.PanelGeometry.from_panel(skeleton)
    model = estimation.MeasurementModel(params, geometry, step)
    sigma = model.sigma_by_group

    for i in range(n_dates):
        observed = np.flatnonzero(geometry.mask[i])
        a, B = model.rows_for_date(i, observed)
        yields = a + B @ true_states[i]
        if noise:
            yields = yields + sigma[geometry.group[observed]] * rng.standard_normal(
                len(observed)
            )
        for row, j in enumerate(observed):
            col = columns[j]
            if col.is_averaging:
                values[i, j] = yields[row]
            else:
                values[i, j] = rate_from_yield(yields[row], geometry.accrual[i, j])
    if mask_repo_6m > 0.0:
        try:
            j6 = label_pos["REPO:6M"]
        except KeyError:
            pass
        else:
            drop = rng.uniform(size=n_dates) < mask_repo_6m
            values[drop, j6] = np.nan

    panel = ObservationPanel(
        dates=panel_dates, columns=columns, values=values,
        sofr_fixings=sofr_fixings, effr_fixings=effr_fixings,
        holidays=ladder.holidays,
    )
    return panel, true_states
