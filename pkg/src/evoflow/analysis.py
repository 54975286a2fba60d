"""Equilibrium and stability diagnostics.

The coupled dynamics admit a clean asymptotic picture: whenever the
population state converges, the limit equalizes rewards across its
supported actions (a restricted Nash equilibrium) and every community with
persistent density carries the population mix, x[i,h]/eta_h -> y_i. These
facts turn into the checks below: reward gaps on the support, balance
residuals, the row-stochastic comparison matrix built from W and eta, a
product-form Lyapunov function for binary matrix games, and the ideal free
distribution test for habitat-selection flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, UsageError
from .model import (
    CommunityNetwork,
    MatrixGame,
    PopulationGame,
    SystemState,
    _occupancy,
    support,
)

SUPPORT_THRESHOLD = 1e-8
SIGN_DEAD_ZONE = 1e-10


class NashCheck(NamedTuple):
    is_restricted_nash: bool
    max_reward_gap: float


def restricted_nash_check(y: np.ndarray, game: PopulationGame,
                          tol: float = 1e-9,
                          support_threshold: float = SUPPORT_THRESHOLD) -> NashCheck:
    """Do all supported actions earn the same reward at y?

    The gap is the largest reward difference between supported actions;
    singleton supports are vacuously balanced.
    """
    y = np.asarray(y, dtype=float)
    idx = support(y, support_threshold)
    r = np.asarray(game.rewards(y), dtype=float)[idx]
    gap = float(r.max() - r.min()) if len(idx) > 1 else 0.0
    return NashCheck(gap <= tol, gap)


@dataclass
class BalanceReport:
    """How far a state sits from the balanced form x = outer(y, eta).

    ``residuals[i, h] = |x[i,h]/eta_h - y_i|`` for communities above the
    density threshold; excluded communities are listed with their mass,
    which the degenerate case requires to be negligible.
    """

    max_residual: float
    residuals: np.ndarray
    excluded: list[tuple[int, float]] = field(default_factory=list)


def balance_residual(state, support_threshold: float = SUPPORT_THRESHOLD) -> BalanceReport:
    """Per-community deviation of the community mix from the population mix."""
    x = _occupancy(state)
    y = x.sum(axis=1)
    eta = x.sum(axis=0)
    residuals = np.full_like(x, np.nan)
    excluded = []
    occupied = eta > support_threshold
    residuals[:, occupied] = np.abs(x[:, occupied] / eta[occupied] - y[:, None])
    for h in np.nonzero(~occupied)[0]:
        excluded.append((int(h), float(eta[h])))
    max_res = float(np.nanmax(residuals)) if occupied.any() else 0.0
    return BalanceReport(max_res, residuals, excluded)


@dataclass
class EquilibriumReport:
    is_restricted_nash: bool
    support: tuple[int, ...]
    max_reward_gap_on_support: float
    balance_residual: float
    residual_table: np.ndarray
    excluded_communities: list[tuple[int, float]]


def equilibrium_report(state, game: PopulationGame, tol: float = 1e-9,
                       support_threshold: float = SUPPORT_THRESHOLD) -> EquilibriumReport:
    """Combined restricted-Nash and balance diagnostic for one state."""
    x = _occupancy(state)
    y = x.sum(axis=1)
    nash = restricted_nash_check(y, game, tol, support_threshold)
    bal = balance_residual(x, support_threshold)
    return EquilibriumReport(
        is_restricted_nash=nash.is_restricted_nash,
        support=tuple(int(i) for i in support(y, support_threshold)),
        max_reward_gap_on_support=nash.max_reward_gap,
        balance_residual=bal.max_residual,
        residual_table=bal.residuals,
        excluded_communities=bal.excluded,
    )


# ---------------------------------------------------------------------------
# Evolutionarily stable states of 2x2 matrix games
# ---------------------------------------------------------------------------

@dataclass
class ESSResult:
    """Classification of a 2x2 matrix game.

    ``kind`` is "interior" (unique mixed ESS, anti-coordination ordering),
    "pure" (one or both vertices resist invasion strictly), "degenerate"
    (all payoffs tie everywhere), or "none".
    """

    kind: str
    interior: np.ndarray | None = None
    pure: list[np.ndarray] = field(default_factory=list)


def ess_2x2(payoff) -> ESSResult:
    """Evolutionarily stable states of a 2x2 matrix game [[a, b], [c, d]].

    An interior ESS exists exactly when c > a and b > d, at

        y_hat = ((b - d)/(c - a + b - d), (a - c)/(a - c + d - b))

    Otherwise the vertices where the resident action strictly beats the
    invader are reported. Constant-sum ties (a = c and b = d) make every
    state neutral.
    """
    A = np.asarray(payoff, dtype=float)
    if A.shape != (2, 2):
        raise ConfigurationError(f"need a 2x2 payoff matrix, got {A.shape}")
    a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
    if a == c and b == d:
        return ESSResult("degenerate")
    if c > a and b > d:
        y1 = (b - d) / (c - a + b - d)
        y2 = (a - c) / (a - c + d - b)
        return ESSResult("interior", interior=np.array([y1, y2]))
    pure = []
    if a > c:
        pure.append(np.array([1.0, 0.0]))
    if d > b:
        pure.append(np.array([0.0, 1.0]))
    return ESSResult("pure", pure=pure) if pure else ESSResult("none")


def _tangent_directions(n: int, count: int) -> np.ndarray:
    """Deterministic unit directions in the sum-zero subspace.

    For two actions there are exactly two directions. For more actions an
    angular grid is laid out in the first two coordinates of a Helmert-style
    orthonormal basis of the tangent space; this is a falsification probe,
    not a covering.
    """
    if n == 2:
        d = np.array([1.0, -1.0]) / math.sqrt(2.0)
        return np.array([d, -d])
    basis = np.zeros((2, n))
    basis[0, 0], basis[0, 1] = 1.0, -1.0
    basis[1, :2], basis[1, 2] = 1.0, -2.0
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    angles = 2.0 * math.pi * np.arange(count) / count
    return np.cos(angles)[:, None] * basis[0] + np.sin(angles)[:, None] * basis[1]


def ess_verify(y_hat, payoff, delta: float, n_probe: int = 64) -> bool:
    """Probe the ESS inequality y_hat.A.y > y.A.y near y_hat.

    Deterministic probe points sit on tangent directions at radii
    delta * {0.25, 0.5, 0.75, 1}, intersected with the simplex. Passing is
    evidence; a failure is a proof that y_hat is not evolutionarily stable
    at radius delta.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    A = np.asarray(payoff, dtype=float)
    n = y_hat.shape[0]
    if delta <= 0.0:
        raise ConfigurationError("delta must be > 0")
    n_dir = max(2, -(-n_probe // 4))
    directions = _tangent_directions(n, n_dir)
    radii = delta * np.array([0.25, 0.5, 0.75, 1.0])
    checked = 0
    for d in directions:
        for rad in radii:
            y = y_hat + rad * d
            if y.min() < 0.0:
                continue
            checked += 1
            if y_hat @ A @ y <= y @ A @ y:
                return False
            if checked >= n_probe:
                return True
    return True


# ---------------------------------------------------------------------------
# Lyapunov diagnostics for binary matrix games
# ---------------------------------------------------------------------------

def lyapunov_P(y, y_hat) -> float:
    """Product-form Lyapunov value P(y) = prod_{i in supp(y_hat)} y_i ** y_hat_i.

    Non-negative, zero when y misses the support of y_hat, and uniquely
    maximized at y = y_hat.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    idx = y_hat > 0.0
    if np.any(y[idx] == 0.0):
        return 0.0
    return float(np.prod(y[idx] ** y_hat[idx]))


class SignCheck(NamedTuple):
    agree: bool
    lyapunov_rate: float
    reward_advantage: float


def lyapunov_rate_sign_check(state, net: CommunityNetwork, payoff, y_hat,
                             dead_zone: float = SIGN_DEAD_ZONE) -> SignCheck:
    """Compare the sign of dP/dt / P against the invader advantage.

    For symmetric W and binary actions the relative Lyapunov rate is

        sum_i (y_hat_i / y_i) * (x_i. W x_j.^T) * (r_i(y) - r_j(y))

    (rows of x, j the other action) and its sign must match the sign of
    y_hat.A.y - y.A.y wherever P(y) > 0. Values within ``dead_zone`` of
    zero are treated as zero, and agreement is only asserted when both
    sides resolve.
    """
    x = _occupancy(state)
    W = net.W
    if not np.allclose(W, W.T, rtol=0.0, atol=1e-12):
        raise ConfigurationError("the sign identity needs a symmetric W")
    if x.shape[0] != 2:
        raise ConfigurationError("the sign identity is for binary action sets")
    A = np.asarray(payoff, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    y = x.sum(axis=1)
    if lyapunov_P(y, y_hat) <= 0.0:
        raise UsageError("P(y) = 0: the rate identity does not apply")
    r = A @ y
    lhs = 0.0
    for i, j in ((0, 1), (1, 0)):
        if y_hat[i] == 0.0:
            continue
        lhs += (y_hat[i] / y[i]) * float(x[i] @ W @ x[j]) * (r[i] - r[j])
    rhs = float(y_hat @ r - y @ r)

    def resolved_sign(v):
        return 0.0 if abs(v) <= dead_zone else math.copysign(1.0, v)

    ls, rs = resolved_sign(lhs), resolved_sign(rhs)
    agree = ls == rs or ls == 0.0 or rs == 0.0
    return SignCheck(agree, lhs, rhs)


# ---------------------------------------------------------------------------
# Density-weighted comparison matrix
# ---------------------------------------------------------------------------

def q_matrix(eta, W) -> np.ndarray:
    """Row-stochastic comparison matrix Q[h,k] = W[h,k] eta_k / sum_l W[h,l] eta_l.

    Defined for strictly positive densities and an interaction matrix that
    is irreducible with positive diagonal; Q inherits irreducibility and has
    spectral radius 1, which is verified by construction diagnostics.
    """
    eta = np.asarray(eta, dtype=float)
    W = np.asarray(W, dtype=float)
    if np.any(eta <= 0.0):
        raise ConfigurationError("q_matrix needs strictly positive densities")
    weighted = W * eta[None, :]
    norms = weighted.sum(axis=1, keepdims=True)
    if np.any(norms <= 0.0):
        raise ConfigurationError(
            "a row of W has no support on the positive densities")
    Q = weighted / norms
    row_err = float(np.abs(Q.sum(axis=1) - 1.0).max())
    if row_err > 1e-12:
        raise ConfigurationError(f"row normalization failed: error {row_err:g}")
    # power iteration confirms the Perron root is 1
    v = np.full(Q.shape[0], 1.0 / Q.shape[0])
    for _ in range(200):
        nv = Q.T @ v
        nv /= nv.sum()
        if np.abs(nv - v).max() < 1e-14:
            v = nv
            break
        v = nv
    radius = float((Q.T @ v).sum() / v.sum())
    if abs(radius - 1.0) > 1e-6:
        raise ConfigurationError(f"spectral radius estimate {radius:g} is not 1")
    return Q


# ---------------------------------------------------------------------------
# Ideal free distribution
# ---------------------------------------------------------------------------

@dataclass
class IFDReport:
    """Whether community payoffs are equalized (the ideal free distribution).

    When the capacities sum to the population mass, the distribution
    simplifies to balanced dispersal eta = kappa and ``deviation`` measures
    the distance from it.
    """

    is_ideal_free: bool
    payoff_spread: float
    payoffs: np.ndarray
    capacities_sum_to_one: bool
    deviation_from_capacity: float | None = None


def ifd_check(eta, alpha, kappa, tol: float = 1e-6) -> IFDReport:
    """Test payoff equalization alpha_h (1 - eta_h / kappa_h) across communities."""
    eta = np.asarray(eta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if np.any(alpha <= 0.0) or np.any(kappa <= 0.0):
        raise ConfigurationError("alpha and kappa must be > 0")
    payoffs = alpha * (1.0 - eta / kappa)
    spread = float(payoffs.max() - payoffs.min())
    balanced = bool(abs(kappa.sum() - 1.0) <= 1e-9)
    deviation = float(np.linalg.norm(eta - kappa)) if balanced else None
    return IFDReport(spread <= tol, spread, payoffs, balanced, deviation)
