"""Closed-form linear theory: per-mode eigenvalues, decay rates, propagator.

For a single Fourier mode xi the linearized relaxation system acting on
w = (u_hat, eps*v_hat_1, ..., eps*v_hat_d) has generator

    A(xi) = [[0,            -i xi_1/eps, ..., -i xi_d/eps],
             [-i a_1 xi_1/eps,  -1/eps^2,          0     ],
             [      ...,            ...,          ...    ],
             [-i a_d xi_d/eps,      0,         -1/eps^2  ]]

whose characteristic polynomial factors as
(lambda + 1/eps^2)^(d-1) * (lambda^2 + lambda/eps^2 + S/eps^2) with
S = sum_i a_i xi_i^2. The slow pair exhibits overdamping: its decay rate
peaks at friction 1/eps = 2*sqrt(S) with maximum value 2S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Regime",
    "RegimeLabel",
    "ModeSpectrum",
    "eigenvalues",
    "decay_rate_omega",
    "threshold_J",
    "classify_regime",
    "exact_linear_propagator",
    "generator_matrix",
]

# relative discriminant size below which the slow pair is treated as defective
_DEFECTIVE_TOL = 1e-8
_TRANSITIONAL_TOL = 1e-12


class Regime(Enum):
    LOW = "low"
    HIGH = "high"
    TRANSITIONAL = "transitional"


@dataclass(frozen=True)
class RegimeLabel:
    regime: Regime
    discriminant: float
    dyadic_index_le_threshold: bool


@dataclass(frozen=True)
class ModeSpectrum:
    xi: tuple
    eps: float
    a: tuple
    eigenvalues: tuple  # d+1 complex values, damped ones first
    S: float

    @property
    def discriminant(self) -> float:
        return 1.0 / self.eps**2 - 4.0 * self.S


def _S(xi, a) -> float:
    return float(sum(ai * x * x for ai, x in zip(a, xi)))


def _slow_pair(S: float, eps: float):
    disc = 1.0 / eps**2 - 4.0 * S
    root = np.sqrt(complex(disc))
    lam_p = -0.5 / eps**2 + 0.5 / eps * root
    lam_m = -0.5 / eps**2 - 0.5 / eps * root
    return lam_p, lam_m


def eigenvalues(xi, eps: float, a) -> ModeSpectrum:
    """All d+1 eigenvalues of the per-mode generator."""
    xi = tuple(float(x) for x in np.atleast_1d(xi))
    a = tuple(float(x) for x in np.atleast_1d(a))
    if eps <= 0 or any(ai <= 0 for ai in a):
        raise ValueError("eps and all a_i must be positive")
    d = len(xi)
    S = _S(xi, a)
    lam_p, lam_m = _slow_pair(S, eps)
    lams = tuple([-1.0 / eps**2 + 0j] * (d - 1) + [lam_p, lam_m])
    return ModeSpectrum(xi, eps, a, lams, S)


def decay_rate_omega(xi, eps: float, a) -> float:
    """-Re of the slow eigenvalue: the observable decay rate of the mode.

    Equals 2S/(1+sqrt(1-4 eps^2 S)) on the overdamped side 1/eps >= 2 sqrt(S)
    and 1/(2 eps^2) on the oscillatory side; 0 for the conserved mode S=0.
    """
    xi = np.atleast_1d(xi)
    a = np.atleast_1d(a)
    S = _S(xi, a)
    if S == 0.0:
        return 0.0
    if 1.0 / eps >= 2.0 * math.sqrt(S):
        return 2.0 * S / (1.0 + math.sqrt(max(0.0, 1.0 - 4.0 * eps**2 * S)))
    return 0.5 / eps**2


def threshold_J(eps: float, k0: int = 0) -> int:
    """Low/high frequency threshold: J = -floor(log2 eps) + k0.

    Guarantees 2^(J-k0) in [1/eps, 2/eps).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    return -math.floor(math.log2(eps)) + k0


def classify_regime(xi, eps: float, a, k0: int = 0) -> RegimeLabel:
    """Low (real eigenvalues), high (complex pair) or transitional mode."""
    xi = np.atleast_1d(xi)
    a = np.atleast_1d(a)
    S = _S(xi, a)
    disc = 1.0 / eps**2 - 4.0 * S
    tol = _TRANSITIONAL_TOL * max(1.0 / eps**4, 16.0 * S * S)
    if abs(disc) <= tol:
        regime = Regime.TRANSITIONAL
    elif disc > 0:
        regime = Regime.LOW
    else:
        regime = Regime.HIGH
    mag = float(np.sqrt(np.sum(xi**2)))
    if mag > 0:
        below = math.floor(math.log2(mag)) <= threshold_J(eps, k0)
    else:
        below = True
    return RegimeLabel(regime, disc, below)


def generator_matrix(xi, eps: float, a) -> np.ndarray:
    """The (d+1)x(d+1) per-mode generator acting on (u_hat, eps*v_hat)."""
    xi = np.atleast_1d(xi).astype(float)
    a = np.atleast_1d(a).astype(float)
    d = xi.size
    A = np.zeros((d + 1, d + 1), dtype=complex)
    A[0, 1:] = -1j * xi / eps
    A[1:, 0] = -1j * a * xi / eps
    A[1:, 1:] = -np.eye(d) / eps**2
    return A


def _exp_slow_block(S: float, eps: float, t: float) -> np.ndarray:
    """exp(t*B) for B = [[0, -i S/eps], [-i/eps, -1/eps^2]].

    Near the defective point to the quadratic the spectral formula is
    replaced by the Jordan limit exp(lam t)(I + t(B - lam I)).
    """
    B = np.array([[0.0, -1j * S / eps], [-1j / eps, -1.0 / eps**2]], dtype=complex)
    disc = 1.0 / eps**2 - 4.0 * S
    lam_p, lam_m = _slow_pair(S, eps)
    I = np.eye(2, dtype=complex)
    if abs(disc) < _DEFECTIVE_TOL * max(1.0 / eps**4, 16.0 * S * S):
        lam = -0.5 / eps**2
        return np.exp(lam * t) * (I + t * (B - lam * I))
    return (np.exp(lam_p * t) * (B - lam_m * I) - np.exp(lam_m * t) * (B - lam_p * I)) / (
        lam_p - lam_m
    )


def exact_linear_propagator(xi, eps: float, a, t: float) -> np.ndarray:
    """exp(t*A(xi)) on (u_hat, eps*v_hat_1, ..., eps*v_hat_d).

    The v-space splits into the driven direction c = (a_i xi_i) and a
    complement that decays as exp(-t/eps^2); the (u, c)-plane carries the
    2x2 slow block, solved in closed form including the defective case.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    xi = np.atleast_1d(xi).astype(float)
    a = np.atleast_1d(a).astype(float)
    d = xi.size
    S = _S(xi, a)
    P = np.zeros((d + 1, d + 1), dtype=complex)
    damp = np.exp(-t / eps**2)
    if S == 0.0:
        P[0, 0] = 1.0
        P[1:, 1:] = damp * np.eye(d)
        return P
    c = a * xi  # drives v from u
    r = xi      # couples v back into u
    E = _exp_slow_block(S, eps, t)
    # column from u_hat = 1
    P[0, 0] = E[0, 0]
    P[1:, 0] = E[1, 0] * c
    # columns from eps*v_hat_i = 1: slow part beta0 = xi_i / S, rest damped
    beta0 = r / S
    P[0, 1:] = E[0, 1] * beta0
    P[1:, 1:] = damp * np.eye(d) + np.outer(c, beta0) * (E[1, 1] - damp)
    return P
