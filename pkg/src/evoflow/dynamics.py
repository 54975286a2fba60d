"""Vector fields of the coupled selection and migration system.

Selection acts within each community through a replicator equation whose
encounter rates are weighted by the interaction matrix:

    f[i,h] = eta_h * sum_k x[i,k] W[h,k] r_i(y)
             - x[i,h] * sum_j sum_k x[j,k] W[h,k] r_j(y)

Migration moves occupancy between communities. Because movement rates are
action independent, outflows carry actions in proportion to the source
community state, and the occupancy dynamic of the closed loop is

    dx[i,h] = sum_k Lambda[k,h] phi[k,h] x[i,k]
              - x[i,h] * sum_k Lambda[h,k] phi[h,k]
              + f[i,h]

Selection redistributes mass within a column (columns of f sum to zero) and
migration only moves mass between columns, so the total mass is conserved
and the row sums of dx equal the row sums of f alone: migration cannot
create or destroy equilibria of the population state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import (
    BestResponseEnvironment,
    EnvironmentModel,
    OutMigrationEnvironment,
    evaluate_phi,
    out_migration_phi_dot,
    softmax_response_phi,
)
from .errors import EvaluationError
from .model import CommunityNetwork, ExtendedState, PopulationGame, SystemState


@dataclass(frozen=True)
class FieldOutput:
    """Derivatives of the extended state: occupancy and, when the
    environment evolves by its own equation, the response matrix."""

    dx: np.ndarray
    d_env: np.ndarray | None = None


def _replicator(x: np.ndarray, W: np.ndarray, r: np.ndarray) -> np.ndarray:
    # G[i,h] = sum_k x[i,k] W[h,k]; g[h] = community-weighted mean reward mass
    G = x @ W.T
    g = r @ G
    eta = x.sum(axis=0)
    return (r[:, None] * G) * eta[None, :] - x * g[None, :]


def _rewards(game: PopulationGame, y: np.ndarray) -> np.ndarray:
    r = game.rewards(y)
    if not np.all(np.isfinite(r)):
        raise EvaluationError(f"non-finite reward at y={y}")
    return r


def replicator_field(state, net: CommunityNetwork, game: PopulationGame) -> np.ndarray:
    """Selection-only derivative of the occupancy matrix.

    Rewards are evaluated once at the population state y and reused across
    all entries. Every column of the result sums to zero.
    """
    x = state.x if isinstance(state, SystemState) else np.asarray(state, dtype=float)
    r = _rewards(game, x.sum(axis=1))
    return _replicator(x, net.W, r)


def flow_field(eta: np.ndarray, phi: np.ndarray, Lambda: np.ndarray) -> np.ndarray:
    """Density derivative of the migration flow, inflow minus outflow:

        deta[h] = sum_k Lambda[k,h] phi[k,h] eta[k]
                  - eta_h * sum_k Lambda[h,k] phi[h,k]

    The flow is closed, so the entries sum to zero; self-loop terms cancel.
    """
    eta = np.asarray(eta, dtype=float)
    M = np.asarray(Lambda, dtype=float) * np.asarray(phi, dtype=float)
    return M.T @ eta - eta * M.sum(axis=1)


def closed_loop_field(state: ExtendedState, game: PopulationGame,
                      net: CommunityNetwork, env: EnvironmentModel,
                      smooth_argmax_beta: float | None = None) -> FieldOutput:
    """Full derivative of the extended state under the closed-loop dynamic.

    Column sums of ``dx`` reproduce :func:`flow_field` on the densities and
    row sums reproduce the row sums of :func:`replicator_field`. For
    out-migration environments ``d_env`` carries the response derivative,
    evaluated at the capacities of the current time.
    """
    x = state.system.x
    if smooth_argmax_beta is not None and isinstance(env, BestResponseEnvironment):
        phi = softmax_response_phi(x.sum(axis=0), env, net.Lambda, smooth_argmax_beta)
    else:
        phi = evaluate_phi(env, state, net.Lambda)

    r = _rewards(game, x.sum(axis=1))
    M = net.Lambda * phi
    dx = x @ M - x * M.sum(axis=1)[None, :] + _replicator(x, net.W, r)

    d_env = None
    if isinstance(env, OutMigrationEnvironment):
        kappa = env.capacity.at(state.t)
        d_env = out_migration_phi_dot(state.env_state, x.sum(axis=0), kappa, env.m)
    return FieldOutput(dx=dx, d_env=d_env)


__all__ = [
    "FieldOutput",
    "replicator_field",
    "flow_field",
    "closed_loop_field",
]
