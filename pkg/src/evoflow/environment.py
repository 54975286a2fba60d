"""Environmental response models that modulate movement between communities.

The realized rate of movement from community ``h`` to ``k`` is
``Lambda[h, k] * phi[h, k]`` where ``phi`` is a non-negative response matrix
produced by one of three models:

* :class:`ConstantEnvironment` holds phi fixed.
* :class:`BestResponseEnvironment` recomputes phi from the current
  densities: movers from community ``k`` split uniformly over the
  highest-payoff communities in its movement neighborhood, where the payoff
  for being in community ``h`` is ``alpha_h * (1 - eta_h / kappa_h)``.
* :class:`OutMigrationEnvironment` evolves phi by its own differential
  equation, rising toward the maximum response ``m`` while a community is
  over capacity and decaying toward zero otherwise. Carrying capacities may
  be static or vary sinusoidally in time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError, StateError
from .model import ExtendedState, _as_readonly_matrix, community_densities


@dataclass(frozen=True)
class ConstantEnvironment:
    """Fixed non-negative response matrix."""

    phi: np.ndarray

    def __post_init__(self):
        phi = _as_readonly_matrix(self.phi, "phi")
        if phi.shape[0] != phi.shape[1]:
            raise ConfigurationError(f"phi must be square, got {phi.shape}")
        if phi.min() < 0.0:
            raise ConfigurationError(f"phi has negative entry {phi.min():g}")
        object.__setattr__(self, "phi", phi)

    @property
    def n_communities(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class BestResponseEnvironment:
    """Movers target the highest-payoff communities they are adjacent to.

    Payoffs within ``tie_tolerance`` of the maximum count as tied; movement
    splits uniformly over the tied set. Exact floating-point ties are
    measure zero, so a tolerance is what makes the uniform split reachable
    in practice.
    """

    alpha: np.ndarray
    kappa: np.ndarray
    tie_tolerance: float = 1e-9

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        kappa = np.array(self.kappa, dtype=float)
        if alpha.ndim != 1 or kappa.shape != alpha.shape:
            raise ConfigurationError("alpha and kappa must be vectors of equal length")
        if not (np.all(alpha > 0.0) and np.all(kappa > 0.0)):
            raise ConfigurationError("alpha and kappa entries must be > 0")
        if self.tie_tolerance < 0.0:
            raise ConfigurationError("tie_tolerance must be >= 0")
        alpha.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n_communities(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class StaticCapacity:
    """Time-invariant carrying capacities."""

    kappa: np.ndarray

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float)
        if kappa.ndim != 1:
            raise ConfigurationError("kappa must be a vector")
        if not np.all(kappa > 0.0):
            raise ConfigurationError("carrying capacities must be > 0")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n_communities(self) -> int:
        return self.kappa.shape[0]

    def at(self, t: float) -> np.ndarray:
        return self.kappa


@dataclass(frozen=True)
class SinusoidalCapacity:
    """Seasonally varying capacities kappa_h(t) = gamma*sin(t + phase_h) + rho.

    Requires 0 < gamma < rho so the capacities stay positive; the period is
    2*pi and per-community phase offsets shift the seasons between
    communities.
    """

    gamma: float
    rho: float
    phase: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.gamma < self.rho):
            raise ConfigurationError(
                f"need 0 < gamma < rho, got gamma={self.gamma:g}, rho={self.rho:g}"
            )
        phase = np.array(self.phase, dtype=float)
        if phase.ndim != 1:
            raise ConfigurationError("phase must be a vector of per-community offsets")
        phase.setflags(write=False)
        object.__setattr__(self, "phase", phase)

    @property
    def n_communities(self) -> int:
        return self.phase.shape[0]

    def at(self, t: float) -> np.ndarray:
        return kappa_sinusoidal(t, self.gamma, self.rho, self.phase)


@dataclass(frozen=True)
class OutMigrationEnvironment:
    """Response matrix governed by dphi[h,k]/dt = (phi[h,k] - m)*(1 - eta_h/kappa_h)*phi[h,k].

    The derivative is uniform in the outflows of a community: crowding above
    capacity raises all of that community's out-migration responses toward
    the maximum ``m``, while spare capacity lets them decay toward zero.
    Both 0 and ``m`` are fixed points, so [0, m] is invariant.
    """

    m: float
    capacity: Union[StaticCapacity, SinusoidalCapacity]
    phi0: np.ndarray

    def __post_init__(self):
        if self.m <= 0.0:
            raise ConfigurationError(f"maximum response m must be > 0, got {self.m:g}")
        phi0 = _as_readonly_matrix(self.phi0, "phi0")
        if phi0.shape[0] != phi0.shape[1]:
            raise ConfigurationError(f"phi0 must be square, got {phi0.shape}")
        if phi0.min() < 0.0:
            raise ConfigurationError(f"phi0 has negative entry {phi0.min():g}")
        if phi0.shape[0] != self.capacity.n_communities:
            raise ConfigurationError(
                f"phi0 is {phi0.shape[0]}x{phi0.shape[0]} but capacity covers "
                f"{self.capacity.n_communities} communities"
            )
        object.__setattr__(self, "phi0", phi0)

    @property
    def n_communities(self) -> int:
        return self.phi0.shape[0]


EnvironmentModel = Union[ConstantEnvironment, BestResponseEnvironment, OutMigrationEnvironment]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def community_payoff(eta_h, alpha_h, kappa_h):
    """Payoff alpha_h * (1 - eta_h / kappa_h) for being in community h.

    Positive below capacity, zero at capacity, negative when overcrowded.
    Accepts scalars or aligned arrays.
    """
    alpha_h = np.asarray(alpha_h, dtype=float)
    kappa_h = np.asarray(kappa_h, dtype=float)
    if np.any(alpha_h <= 0.0) or np.any(kappa_h <= 0.0):
        raise ConfigurationError("alpha and kappa must be > 0")
    out = alpha_h * (1.0 - np.asarray(eta_h, dtype=float) / kappa_h)
    return float(out) if out.ndim == 0 else out


def best_response_sets(eta: np.ndarray, env: BestResponseEnvironment,
                       Lambda: np.ndarray) -> np.ndarray:
    """Boolean membership mask of the best-response target sets.

    ``mask[k, h]`` is True when ``h`` attains the maximum payoff among the
    communities adjacent to ``k`` in the movement graph (those ``z`` with
    ``Lambda[z, k] > 0``). Rows of communities with no movement neighbors
    are all False.
    """
    eta = np.asarray(eta, dtype=float)
    n = eta.shape[0]
    if Lambda.shape != (n, n):
        raise ConfigurationError(
            f"Lambda shape {Lambda.shape} does not match {n} communities"
        )
    pi = community_payoff(eta, env.alpha, env.kappa)
    neighbors = Lambda > 0.0
    mask = np.zeros((n, n), dtype=bool)
    for k in range(n):
        cand = neighbors[:, k]
        if not cand.any():
            continue
        best = pi[cand].max()
        mask[k] = cand & (pi >= best - env.tie_tolerance)
    return mask


def best_response_phi(eta: np.ndarray, env: BestResponseEnvironment,
                      Lambda: np.ndarray) -> np.ndarray:
    """Response matrix of the best-response flow.

    ``phi[k, h] = 1/|N_k|`` for ``h`` in the best-response set ``N_k`` of
    community ``k`` and 0 otherwise, so every row with a non-empty
    neighborhood is a probability vector. Rows of isolated communities are
    all zeros (no outflow).
    """
    mask = best_response_sets(eta, env, Lambda)
    phi = np.zeros(mask.shape)
    counts = mask.sum(axis=1)
    rows = counts > 0
    phi[rows] = mask[rows] / counts[rows, None]
    return phi


def softmax_response_phi(eta: np.ndarray, env: BestResponseEnvironment,
                         Lambda: np.ndarray, beta: float) -> np.ndarray:
    """Smooth stand-in for :func:`best_response_phi`.

    Weights neighbors by exp(beta * payoff) instead of a hard argmax, which
    removes the discontinuity at payoff ties; the hard response is the
    beta -> infinity limit.
    """
    if beta <= 0.0:
        raise ConfigurationError("softmax beta must be > 0")
    eta = np.asarray(eta, dtype=float)
    n = eta.shape[0]
    pi = community_payoff(eta, env.alpha, env.kappa)
    neighbors = Lambda > 0.0
    phi = np.zeros((n, n))
    for k in range(n):
        cand = neighbors[:, k]
        if not cand.any():
            continue
        w = np.exp(beta * (pi - pi[cand].max())) * cand
        phi[k] = w / w.sum()
    return phi


def out_migration_phi_dot(phi: np.ndarray, eta: np.ndarray, kappa: np.ndarray,
                          m: float) -> np.ndarray:
    """Time derivative of the out-migration response matrix.

    Elementwise (phi[h,k] - m) * (1 - eta_h / kappa_h) * phi[h,k]. The
    derivative vanishes at phi in {0, m} and when community h sits exactly
    at capacity.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0.0):
        raise ConfigurationError("carrying capacities must be > 0")
    phi = np.asarray(phi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return (phi - m) * (1.0 - eta / kappa)[:, None] * phi


def kappa_sinusoidal(t, gamma: float, rho: float, phase):
    """Sinusoidal carrying capacity gamma * sin(t + phase) + rho.

    Strictly positive for 0 < gamma < rho, with period 2*pi.
    """
    if not (0.0 < gamma < rho):
        raise ConfigurationError(
            f"need 0 < gamma < rho, got gamma={gamma:g}, rho={rho:g}"
        )
    out = gamma * np.sin(np.asarray(t, dtype=float) + np.asarray(phase, dtype=float)) + rho
    return float(out) if out.ndim == 0 else out


def evaluate_phi(model: EnvironmentModel, state: ExtendedState,
                 Lambda: np.ndarray) -> np.ndarray:
    """Current response matrix for any environment model.

    Constant environments return their matrix, best-response environments
    recompute from the current densities, and out-migration environments
    read the auxiliary state carried by ``state``.
    """
    n = state.system.n_communities
    if isinstance(model, ConstantEnvironment):
        if model.n_communities != n:
            raise ConfigurationError(
                f"environment covers {model.n_communities} communities, state has {n}"
            )
        return model.phi
    if isinstance(model, BestResponseEnvironment):
        return best_response_phi(community_densities(state), model, Lambda)
    if isinstance(model, OutMigrationEnvironment):
        if state.env_state is None:
            raise StateError(
                "out-migration environment needs env_state on the extended state"
            )
        return state.env_state
    raise ConfigurationError(f"unknown environment model {type(model).__name__}")
