"""Time integration: IMEX steppers for the stiff relaxation system and
integrating-factor steppers for the limit equation.

The relaxation source is linear in v, so the implicit solve is exact and
pointwise; the transport stays explicit and spectral. This removes the
1/eps^2 stiffness and keeps dt limited only by the hyperbolic CFL, with
characteristic speeds +-sqrt(a_i)/eps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .models import (
    DivergenceError,
    Flux,
    JinXinModel,
    JinXinState,
    LimitState,
    darcy_velocity,
    effective_Z,
    effective_z,
    flux_fields,
)
from .spectral_core import (
    NormSeries,
    SpectralField,
    block_lp_norms,
    lp_norm,
    scheme_for,
)

__all__ = [
    "StepperConfig",
    "LimitModel",
    "CFLError",
    "step_jinxin",
    "step_limit",
    "evolve",
    "co_evolve",
    "Trajectory",
    "jinxin_dt_bound",
    "limit_advective_speed",
]

JINXIN_SCHEMES = ("imex_euler", "imex_ssp2", "exact_linear")
LIMIT_SCHEMES = ("if_rk2",)

# ARS(2,2,2) coefficients
_GAMMA = 1.0 - 1.0 / math.sqrt(2.0)
_DELTA = 1.0 - 1.0 / (2.0 * _GAMMA)


class CFLError(ValueError):
    def __init__(self, dt: float, admissible: float):
        super().__init__(f"dt={dt:g} violates the CFL bound; use dt <= {admissible:g}")
        self.admissible = admissible


@dataclass(frozen=True)
class LimitModel:
    """The viscous conservation law paired with its closure velocities."""

    flux: Flux
    a: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        if any(x <= 0 for x in self.a):
            raise ValueError("a_i must be positive")


@dataclass
class StepperConfig:
    scheme: str = "imex_ssp2"
    cfl: float = 0.45
    dt_max: float = 0.05
    dt_min: float = 1e-12
    t_end: float = 1.0
    sample_every: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl must lie in (0, 1]")
        if not (0.0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")
        if self.scheme not in JINXIN_SCHEMES + LIMIT_SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


def jinxin_dt_bound(model: JinXinModel, grid) -> float:
    """Hard CFL limit eps*dx/max_i sqrt(a_i) for the relaxation system."""
    return model.eps * grid.dx / max(math.sqrt(ai) for ai in model.a)


def limit_advective_speed(flux: Flux, u: SpectralField) -> float:
    """Estimate max |df/du| over the grid by central differences."""
    if flux.is_zero:
        return 0.0
    phys = u.dealias().to_physical()
    h = 1e-5 * (1.0 + np.max(np.abs(phys)))
    speed = 0.0
    for k in range(flux.n):
        up, um = phys.copy(), phys.copy()
        up[k] += h
        um[k] -= h
        fp, fm = flux.evaluate(up), flux.evaluate(um)
        for i in range(flux.d):
            speed = max(speed, float(np.max(np.abs(fp[i] - fm[i])) / (2 * h)))
    return speed


# ---------------------------------------------------------------------------
# relaxation system steppers

class _JinXinStepper:
    """Precomputed multipliers for one (model, grid) pair."""

    def __init__(self, model: JinXinModel, grid):
        self.model = model
        self.grid = grid
        self.deriv = [1j * kap for kap in grid.kappa_axes()]
        self.S = sum(model.a[i] * grid.kappa_axes()[i] ** 2 for i in range(model.d))

    def _flux(self, u: SpectralField):
        return [f.coeffs for f in flux_fields(self.model.flux, u)]

    def _div_v(self, v_coeffs):
        return sum(self.deriv[i] * v_coeffs[i] for i in range(self.model.d))

    def euler(self, state: JinXinState, dt: float) -> JinXinState:
        m = self.model
        e2 = m.eps**2
        u1 = SpectralField(self.grid, state.u.coeffs - dt * self._div_v([v.coeffs for v in state.v]))
        fv = self._flux(u1)
        v1 = [
            SpectralField(
                self.grid,
                (e2 * state.v[i].coeffs + dt * (-m.a[i] * self.deriv[i] * u1.coeffs + fv[i]))
                / (e2 + dt),
            )
            for i in range(m.d)
        ]
        return JinXinState(u1, v1, state.t + dt)

    def ssp2(self, state: JinXinState, dt: float) -> JinXinState:
        m = self.model
        e2 = m.eps**2
        u0, v0 = state.u.coeffs, [v.coeffs for v in state.v]
        g = dt * _GAMMA
        # first implicit stage
        u2 = SpectralField(self.grid, u0 - g * self._div_v(v0))
        f2 = self._flux(u2)
        stiff2 = [-m.a[i] * self.deriv[i] * u2.coeffs + f2[i] for i in range(m.d)]
        v2 = [(e2 * v0[i] + g * stiff2[i]) / (e2 + g) for i in range(m.d)]
        s2 = [(stiff2[i] - v2[i]) / e2 for i in range(m.d)]
        # second implicit stage (equals the update: stiffly accurate)
        u3 = SpectralField(
            self.grid, u0 - dt * self._div_v([_DELTA * v0[i] + (1 - _DELTA) * v2[i] for i in range(m.d)])
        )
        f3 = self._flux(u3)
        v3 = [
            SpectralField(
                self.grid,
                (e2 * (v0[i] + dt * (1 - _GAMMA) * s2[i])
                 + g * (-m.a[i] * self.deriv[i] * u3.coeffs + f3[i]))
                / (e2 + g),
            )
            for i in range(m.d)
        ]
        return JinXinState(u3, v3, state.t + dt)

    def exact_linear(self, state: JinXinState, dt: float) -> JinXinState:
        """Mode-wise exact propagator; valid only for the zero flux."""
        if not self.model.flux.is_zero:
            raise ValueError("exact_linear applies to the linear system (zero flux) only")
        m = self.model
        eps = m.eps
        S = self.S
        disc = 1.0 / eps**4 - 4.0 * S / eps**2
        root = np.sqrt(disc.astype(complex))
        lam_p = -0.5 / eps**2 + 0.5 * root
        lam_m = -0.5 / eps**2 - 0.5 * root
        damp = math.exp(-dt / eps**2)
        defective = np.abs(disc) < 1e-8 * np.maximum(1.0 / eps**4, 16.0 * S**2)
        diff = np.where(defective, 1.0, lam_p - lam_m)
        ep, em = np.exp(lam_p * dt), np.exp(lam_m * dt)
        E00 = (-lam_m * ep + lam_p * em) / diff
        Ecross = (ep - em) / diff  # common factor of the off-diagonal entries
        E11 = ((-1.0 / eps**2 - lam_m) * ep - (-1.0 / eps**2 - lam_p) * em) / diff
        lam = -0.5 / eps**2
        el = np.exp(lam * dt)
        E00 = np.where(defective, el * (1.0 - dt * lam), E00)
        Ecross = np.where(defective, el * dt, Ecross)
        E11 = np.where(defective, el * (1.0 + dt * (-1.0 / eps**2 - lam)), E11)
        E01 = Ecross * (-1j * S / eps)
        E10 = Ecross * (-1j / eps)

        kap = self.grid.kappa_axes()
        u0 = state.u.coeffs
        V0 = [eps * state.v[i].coeffs for i in range(m.d)]
        Ssafe = np.where(S > 0, S, 1.0)
        beta0 = sum(kap[i] * V0[i] for i in range(m.d)) / Ssafe
        u1 = np.where(S > 0, E00 * u0 + E01 * beta0, u0)
        slow = E10 * u0 + (E11 - damp) * beta0
        v1 = []
        for i in range(m.d):
            c_i = m.a[i] * kap[i]
            Vi = np.where(S > 0, damp * V0[i] + c_i * slow, damp * V0[i])
            v1.append(SpectralField(self.grid, Vi / eps))
        return JinXinState(SpectralField(self.grid, u1), v1, state.t + dt)

    def step(self, state: JinXinState, dt: float, scheme: str) -> JinXinState:
        bound = jinxin_dt_bound(self.model, self.grid)
        if scheme != "exact_linear" and dt > bound * (1.0 + 1e-12):
            raise CFLError(dt, bound)
        if scheme == "imex_euler":
            new = self.euler(state, dt)
        elif scheme == "imex_ssp2":
            new = self.ssp2(state, dt)
        elif scheme == "exact_linear":
            new = self.exact_linear(state, dt)
        else:
            raise ValueError(f"unknown relaxation scheme {scheme!r}")
        if new.u.has_bad_values() or any(v.has_bad_values() for v in new.v):
            raise DivergenceError(new.t)
        return new


def step_jinxin(model: JinXinModel, state: JinXinState, dt: float, scheme: str = "imex_euler") -> JinXinState:
    """Advance the relaxation system by one IMEX step."""
    return _JinXinStepper(model, state.grid).step(state, dt, scheme)


# ---------------------------------------------------------------------------
# limit equation stepper

class _LimitStepper:
    def __init__(self, model: LimitModel, grid):
        self.model = model
        self.grid = grid
        self.deriv = [1j * kap for kap in grid.kappa_axes()]
        self.S = sum(model.a[i] * grid.kappa_axes()[i] ** 2 for i in range(len(model.a)))

    def _nonlin(self, u: SpectralField):
        if self.model.flux.is_zero:
            return 0.0
        fv = flux_fields(self.model.flux, u)
        return -sum(self.deriv[i] * fv[i].coeffs for i in range(self.model.flux.d))

    def if_rk2(self, state: LimitState, dt: float) -> LimitState:
        ef = np.exp(-self.S * dt)
        u0 = state.u_star.coeffs
        if self.model.flux.is_zero:
            return LimitState(SpectralField(self.grid, ef * u0), state.t + dt)
        k1 = self._nonlin(state.u_star)
        pred = SpectralField(self.grid, ef * (u0 + dt * k1))
        k2 = self._nonlin(pred)
        u1 = ef * u0 + 0.5 * dt * (ef * k1 + k2)
        return LimitState(SpectralField(self.grid, u1), state.t + dt)

    def step(self, state: LimitState, dt: float, scheme: str = "if_rk2") -> LimitState:
        if scheme != "if_rk2":
            raise ValueError(f"unknown limit scheme {scheme!r}")
        new = self.if_rk2(state, dt)
        if new.u_star.has_bad_values():
            raise DivergenceError(new.t)
        return new


def step_limit(flux: Flux, a, state: LimitState, dt: float, scheme: str = "if_rk2") -> LimitState:
    """Advance the limit equation by one integrating-factor step."""
    return _LimitStepper(LimitModel(flux, tuple(a)), state.grid).step(state, dt, scheme)


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    times: np.ndarray
    series: dict            # (field, p) -> NormSeries
    final_state: object
    steps: int
    wall_time: float
    mean_drift: float
    max_abs_u: float
    u_mean0: np.ndarray

    def get(self, fieldname: str, p) -> NormSeries:
        return self.series[(fieldname, p)]

    def summary(self, config_hash: str = "") -> dict:
        """JSON-ready trajectory summary."""
        out = {
            "config_hash": config_hash,
            "t_samples": [float(t) for t in self.times],
            "step_count": self.steps,
            "wall_time": self.wall_time,
            "mean_drift": self.mean_drift,
            "max_abs_u": self.max_abs_u,
            "tracked": {},
        }
        for (name, p), ser in sorted(self.series.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            out["tracked"][f"{name}@p={p}"] = {
                "j_indices": [int(j) for j in ser.j_indices],
                "table": [[float(x) for x in row] for row in ser.table],
            }
        return out


def _tracked_field(system, state, name: str) -> SpectralField:
    if isinstance(system, JinXinModel):
        if name == "u":
            return state.u
        if name == "v":
            return SpectralField.stack(state.v)
        if name == "z":
            return SpectralField.stack(effective_z(system, state))
        if name == "Z":
            return SpectralField.stack(effective_Z(system, state))
    else:
        if name == "u":
            return state.u_star
        if name == "v":
            return SpectralField.stack(darcy_velocity(system.flux, system.a, state.u_star))
    raise KeyError(f"unknown tracker field {name!r} for {type(system).__name__}")


def sample_times_linear(t_end: float, every: float) -> np.ndarray:
    n = int(round(t_end / every))
    return np.linspace(0.0, t_end, n + 1)


def sample_times_geometric(t0: float, t_end: float, count: int) -> np.ndarray:
    """0 followed by a geometric ladder from t0 to t_end."""
    return np.concatenate([[0.0], np.geomspace(t0, t_end, count)])


def evolve(system, initial, config: StepperConfig, trackers, sample_times=None) -> Trajectory:
    """March to t_end sampling per-block norms of the tracked quantities.

    trackers is a list of (field, p) pairs; field is one of u/v/z/Z for the
    relaxation system and u/v (closure velocity) for the limit. Deterministic
    for a fixed config; steps subdivide each sampling interval uniformly so
    samples land exactly on the requested instants.
    """
    grid = initial.grid
    sch = scheme_for(grid)
    if isinstance(system, JinXinModel):
        stepper = _JinXinStepper(system, grid)
        if config.scheme == "exact_linear":
            dt_target = config.dt_max
        else:
            dt_target = min(config.dt_max, config.cfl * jinxin_dt_bound(system, grid))
    elif isinstance(system, LimitModel):
        stepper = _LimitStepper(system, grid)
        speed = limit_advective_speed(system.flux, initial.u_star)
        dt_adv = config.cfl * grid.dx / speed if speed > 0 else math.inf
        dt_target = min(config.dt_max, dt_adv)
    else:
        raise TypeError(f"cannot evolve a {type(system).__name__}")
    if dt_target < config.dt_min:
        raise ValueError(f"required dt {dt_target:g} is below dt_min {config.dt_min:g}")

    if sample_times is None:
        sample_times = sample_times_linear(config.t_end, config.sample_every)
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times[0] != 0.0:
        sample_times = np.concatenate([[0.0], sample_times])

    series = {(name, p): NormSeries(sch.j_indices, p) for (name, p) in trackers}
    t_start = time.perf_counter()
    state = initial
    u_field = state.u if isinstance(system, JinXinModel) else state.u_star
    mean0 = u_field.mean()
    max_abs_u = 0.0
    mean_drift = 0.0
    steps = 0

    def sample(st, t):
        nonlocal max_abs_u, mean_drift
        uf = st.u if isinstance(system, JinXinModel) else st.u_star
        max_abs_u = max(max_abs_u, lp_norm(uf, np.inf))
        mean_drift = max(mean_drift, float(np.max(np.abs(uf.mean() - mean0))))
        for (name, p), ser in series.items():
            ser.append(t, block_lp_norms(_tracked_field(system, st, name), p, sch))

    sample(state, 0.0)
    for k in range(1, sample_times.size):
        span = sample_times[k] - sample_times[k - 1]
        n_sub = max(1, int(math.ceil(span / dt_target - 1e-12)))
        h = span / n_sub
        for _ in range(n_sub):
            state = stepper.step(state, h, config.scheme)
            steps += 1
        sample(state, sample_times[k])

    return Trajectory(
        times=sample_times,
        series=series,
        final_state=state,
        steps=steps,
        wall_time=time.perf_counter() - t_start,
        mean_drift=mean_drift,
        max_abs_u=max_abs_u,
        u_mean0=mean0,
    )


def co_evolve(
    model: JinXinModel,
    limit_model: LimitModel,
    jx0: JinXinState,
    lim0: LimitState,
    config: StepperConfig,
    sample_times,
    trackers_jx,
    trackers_lim,
    diff_trackers,
) -> tuple:
    """Advance both systems in lockstep on matched sampling instants.

    diff_trackers lists (field, p) with field in {du, dv}: per-block norms of
    u - u* and v - v* (closure velocity) at the shared instants. The limit
    system always steps with if_rk2 regardless of config.scheme.
    """
    grid = jx0.grid
    sch = scheme_for(grid)
    jx_stepper = _JinXinStepper(model, grid)
    lim_stepper = _LimitStepper(limit_model, grid)
    if config.scheme == "exact_linear":
        dt_jx = config.dt_max
    else:
        dt_jx = min(config.dt_max, config.cfl * jinxin_dt_bound(model, grid))
    speed = limit_advective_speed(limit_model.flux, lim0.u_star)
    dt_lim = min(config.dt_max, config.cfl * grid.dx / speed if speed > 0 else math.inf)

    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times[0] != 0.0:
        sample_times = np.concatenate([[0.0], sample_times])

    series_jx = {(n, p): NormSeries(sch.j_indices, p) for (n, p) in trackers_jx}
    series_lim = {(n, p): NormSeries(sch.j_indices, p) for (n, p) in trackers_lim}
    series_diff = {(n, p): NormSeries(sch.j_indices, p) for (n, p) in diff_trackers}
    jx, lim = jx0, lim0
    steps = 0

    def sample(t):
        for (n, p), s in series_jx.items():
            s.append(t, block_lp_norms(_tracked_field(model, jx, n), p, sch))
        for (n, p), s in series_lim.items():
            s.append(t, block_lp_norms(_tracked_field(limit_model, lim, n), p, sch))
        if diff_trackers:
            du = jx.u - lim.u_star
            vstar = darcy_velocity(limit_model.flux, limit_model.a, lim.u_star)
            dv = SpectralField.stack([jx.v[i] - vstar[i] for i in range(model.d)])
            for (n, p), s in series_diff.items():
                s.append(t, block_lp_norms(du if n == "du" else dv, p, sch))

    sample(0.0)
    for k in range(1, sample_times.size):
        span = sample_times[k] - sample_times[k - 1]
        for stepper, dt_t, which in ((jx_stepper, dt_jx, "jx"), (lim_stepper, dt_lim, "lim")):
            n_sub = max(1, int(math.ceil(span / dt_t - 1e-12)))
            h = span / n_sub
            for _ in range(n_sub):
                if which == "jx":
                    jx = stepper.step(jx, h, config.scheme)
                else:
                    lim = stepper.step(lim, h, "if_rk2")
                steps += 1
        sample(sample_times[k])

    return series_jx, series_lim, series_diff, jx, lim, sample_times
