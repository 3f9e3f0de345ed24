"""Relaxation system, its viscous limit, flux families and effective unknowns.

The relaxation system couples a conserved field u with d auxiliary fields v_i:

    du/dt   = -sum_i d(v_i)/dx_i
    dv_i/dt = (1/eps^2) * (-a_i du/dx_i - v_i + f_i(u))

As eps -> 0 it relaxes to du*/dt = sum_i d_i(a_i d_i u*) - sum_i d_i f_i(u*)
with closure v*_i = -a_i d_i u* + f_i(u*).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral_core import Grid, SpectralField, spectral_derivative

__all__ = [
    "Flux",
    "JinXinModel",
    "JinXinState",
    "LimitState",
    "DivergenceError",
    "FluxValidationError",
    "jinxin_rhs",
    "limit_rhs",
    "darcy_velocity",
    "effective_z",
    "effective_Z",
    "builtin_fluxes",
    "make_flux",
    "polynomial_flux",
]

MAX_COMPONENTS = 4


class DivergenceError(RuntimeError):
    """A field picked up NaN/Inf coefficients."""

    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite values in {what} at t={t}")
        self.t = t


class FluxValidationError(ValueError):
    """Flux violates the quadratic-at-origin requirement f(0)=Df(0)=0."""


@dataclass(frozen=True)
class Flux:
    """Nonlinear flux family u -> (f_1(u), ..., f_d(u)), each R^n -> R^n.

    evaluate acts on physical-space samples of shape (n, ...) and returns a
    list of d arrays of the same shape. Built-in fluxes carry closed-form
    Jacobians; user polynomials fall back to central differences.
    """

    name: str
    n: int
    d: int
    evaluate: Callable = field(repr=False)
    jacobian_fn: Callable | None = field(default=None, repr=False)
    is_zero: bool = False
    # constructor arguments, for rebuilding in worker processes
    spec: tuple = ()

    def jacobian(self, u_point: np.ndarray) -> np.ndarray:
        """df_i/du at one state point; shape (d, n, n)."""
        u_point = np.asarray(u_point, dtype=float).reshape(self.n)
        if self.jacobian_fn is not None:
            return self.jacobian_fn(u_point)
        h = 1e-5 * (1.0 + np.abs(u_point))
        jac = np.zeros((self.d, self.n, self.n))
        for k in range(self.n):
            up, um = u_point.copy(), u_point.copy()
            up[k] += h[k]
            um[k] -= h[k]
            fp = self.evaluate(up.reshape(self.n, 1))
            fm = self.evaluate(um.reshape(self.n, 1))
            for i in range(self.d):
                jac[i, :, k] = (fp[i][:, 0] - fm[i][:, 0]) / (2 * h[k])
        return jac

    def check_origin(self):
        """Numerically verify f(0)=0 and Df(0)=0: |f(delta e_k)| <= C delta^2."""
        z = self.evaluate(np.zeros((self.n, 1)))
        if max(np.max(np.abs(f)) for f in z) > 1e-14:
            raise FluxValidationError(f"flux {self.name}: f(0) != 0")
        for delta in (1e-2, 1e-3):
            for k in range(self.n):
                u = np.zeros((self.n, 1))
                u[k, 0] = delta
                vals = self.evaluate(u)
                bound = 100.0 * delta**2
                if max(np.max(np.abs(f)) for f in vals) > bound:
                    raise FluxValidationError(
                        f"flux {self.name}: |f(delta e_{k})| exceeds C delta^2, "
                        "so f is not quadratic at the origin"
                    )


def _zero_flux(n: int, d: int) -> Flux:
    def ev(u):
        return [np.zeros_like(u) for _ in range(d)]

    def jac(u):
        return np.zeros((d, n, n))

    return Flux("zero", n, d, ev, jac, is_zero=True)


def _burgers1d() -> Flux:
    def ev(u):
        return [0.5 * u * u]

    def jac(u):
        return u.reshape(1, 1, 1).copy()

    return Flux("burgers1d", 1, 1, ev, jac)


def _burgers2d() -> Flux:
    # f_1(u) = u_1 * u, f_2(u) = u_2 * u for u = (u_1, u_2)
    def ev(u):
        return [u[0:1] * u, u[1:2] * u]

    def jac(u):
        u1, u2 = u
        j1 = np.array([[2 * u1, 0.0], [u2, u1]])
        j2 = np.array([[u2, u1], [0.0, 2 * u2]])
        return np.stack([j1, j2])

    return Flux("burgers2d", 2, 2, ev, jac)


def polynomial_flux(n: int, d: int, terms: list, name: str = "polynomial") -> Flux:
    """Sparse polynomial flux from terms {direction, component, exponents, coefficient}.

    Every monomial must have total degree >= 2; a constant or linear part is
    rejected because the model assumes the flux vanishes to second order at
    the origin.
    """
    parsed = []
    for t in terms:
        i, c = int(t["direction"]), int(t["component"])
        expo = tuple(int(e) for e in t["exponents"])
        coef = float(t["coefficient"])
        if not (0 <= i < d and 0 <= c < n) or len(expo) != n:
            raise FluxValidationError(f"malformed polynomial term {t!r}")
        if sum(expo) < 2 and coef != 0.0:
            raise FluxValidationError(
                f"polynomial term {t!r} has total degree {sum(expo)} < 2; "
                "the flux must satisfy f(0)=Df(0)=0"
            )
        parsed.append((i, c, expo, coef))

    def ev(u):
        out = [np.zeros_like(u) for _ in range(d)]
        for i, c, expo, coef in parsed:
            mono = coef * np.ones_like(u[0])
            for k, e in enumerate(expo):
                if e:
                    mono = mono * u[k] ** e
            out[i][c] += mono
        return out

    return Flux(name, n, d, ev, None)


def builtin_fluxes() -> dict:
    """Catalog of named flux constructors addressable from config files."""
    return {
        "burgers1d": _burgers1d,
        "burgers2d": _burgers2d,
        "zero": _zero_flux,
    }


def make_flux(flux_id: str, n: int | None = None, d: int | None = None, terms=None) -> Flux:
    """Build a flux by string id, validating the origin conditions."""
    if flux_id == "zero":
        fl = _zero_flux(n or 1, d or 1)
    elif flux_id == "polynomial":
        fl = polynomial_flux(n, d, terms or [])
    elif flux_id in builtin_fluxes():
        fl = builtin_fluxes()[flux_id]()
    else:
        raise FluxValidationError(f"unknown flux id {flux_id!r}")
    fl.check_origin()
    object.__setattr__(fl, "spec", (flux_id, n, d, tuple(map(tuple, (t.items() for t in terms))) if terms else None))
    return fl


def rebuild_flux(spec: tuple) -> Flux:
    """Inverse of the spec tuple attached by make_flux (worker processes)."""
    flux_id, n, d, terms = spec
    return make_flux(flux_id, n, d, [dict(t) for t in terms] if terms else None)


# ---------------------------------------------------------------------------
# models and states

@dataclass(frozen=True)
class JinXinModel:
    flux: Flux
    a: tuple
    eps: float

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        if len(self.a) != self.flux.d:
            raise ValueError(f"need {self.flux.d} diffusion coefficients, got {len(self.a)}")
        if any(x <= 0 for x in self.a):
            raise ValueError("a_i must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.flux.n > MAX_COMPONENTS:
            raise ValueError(f"at most {MAX_COMPONENTS} components supported")

    @property
    def d(self) -> int:
        return self.flux.d

    @property
    def n(self) -> int:
        return self.flux.n


@dataclass
class JinXinState:
    u: SpectralField
    v: list  # d fields, each with n components
    t: float = 0.0

    def __post_init__(self):
        for vi in self.v:
            if vi.grid != self.u.grid:
                raise ValueError("u and v must share one grid")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def copy(self) -> "JinXinState":
        return JinXinState(self.u.copy(), [vi.copy() for vi in self.v], self.t)


@dataclass
class LimitState:
    u_star: SpectralField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.u_star.grid

    def copy(self) -> "LimitState":
        return LimitState(self.u_star.copy(), self.t)


# ---------------------------------------------------------------------------
# flux evaluation on spectral fields

def flux_fields(flux: Flux, u: SpectralField) -> list:
    """f_i(u) as dealiased spectral fields (physical-space evaluation)."""
    if flux.is_zero:
        return [SpectralField.zero(u.grid, flux.n) for _ in range(flux.d)]
    phys = u.dealias().to_physical()
    vals = flux.evaluate(phys)
    return [SpectralField.from_physical(u.grid, v, dealias=True) for v in vals]


def _check_finite(fields, t: float, what: str):
    for f in fields:
        if f.has_bad_values():
            raise DivergenceError(t, what)


# ---------------------------------------------------------------------------
# right-hand sides and effective unknowns

def jinxin_rhs(model: JinXinModel, state: JinXinState):
    """(du/dt, [dv_i/dt]) of the relaxation system, dealiased."""
    u, v = state.u, state.v
    du = SpectralField(u.grid, -sum(spectral_derivative(v[i], i).coeffs for i in range(model.d)))
    fvals = flux_fields(model.flux, u)
    dv = []
    for i in range(model.d):
        rate = (
            -model.a[i] * spectral_derivative(u, i).coeffs
            - v[i].coeffs
            + fvals[i].coeffs
        ) / model.eps**2
        dv.append(SpectralField(u.grid, rate).dealias())
    du = du.dealias()
    _check_finite([du] + dv, state.t, "jinxin rhs")
    return du, dv


def limit_rhs(flux: Flux, a, state: LimitState) -> SpectralField:
    """du*/dt of the viscous conservation law, dealiased."""
    u = state.u_star
    g = u.grid
    mult = np.zeros(g.shape)
    for ax, kap in enumerate(g.kappa_axes()):
        mult = mult - a[ax] * kap**2
    rate = u.coeffs * mult
    if not flux.is_zero:
        fvals = flux_fields(flux, u)
        for i in range(flux.d):
            rate = rate - spectral_derivative(fvals[i], i).coeffs
    out = SpectralField(g, rate).dealias()
    _check_finite([out], state.t, "limit rhs")
    return out


def darcy_velocity(flux: Flux, a, u_star: SpectralField) -> list:
    """Closure velocities v*_i = -a_i d_i u* + f_i(u*)."""
    fvals = flux_fields(flux, u_star)
    return [
        SpectralField(
            u_star.grid,
            -a[i] * spectral_derivative(u_star, i).coeffs + fvals[i].coeffs,
        )
        for i in range(flux.d)
    ]


def effective_z(model: JinXinModel, state: JinXinState) -> list:
    """Damped combinations z_i = a_i d_i u + v_i."""
    return [
        SpectralField(
            state.grid,
            model.a[i] * spectral_derivative(state.u, i).coeffs + state.v[i].coeffs,
        )
        for i in range(model.d)
    ]


def effective_Z(model: JinXinModel, state: JinXinState) -> list:
    """Distance to the closure manifold: Z_i = a_i d_i u + v_i - f_i(u)."""
    z = effective_z(model, state)
    fvals = flux_fields(model.flux, state.u)
    return [SpectralField(state.grid, z[i].coeffs - fvals[i].coeffs) for i in range(model.d)]
