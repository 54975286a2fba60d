"""Core domain types: population games, community networks, occupancy states.

A population game assigns an expected reward to every action at a population
state ``y`` on the unit simplex. Individuals are spread over a finite set of
communities; the occupancy matrix ``x`` (actions by communities) holds the
fraction of the whole population that plays action ``i`` while residing in
community ``h``. Row sums of ``x`` give the population state ``y``, column
sums give the community densities ``eta``, and the total mass is constant:

    sum_i sum_h x[i, h] = sum_i y[i] = sum_h eta[h] = 1

Two structural assumptions make the coupled dynamics well behaved and are
checked by :func:`validate_network` and :func:`validate_game`:

* the interaction matrix ``W`` is non-negative and irreducible with a
  strictly positive diagonal (every community interacts with itself and the
  interaction graph is strongly connected);
* reward functions are strictly positive on the simplex.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ConfigurationError, EvaluationError

log = logging.getLogger(__name__)

# Mass and non-negativity tolerance applied when states are constructed.
CONSTRUCTION_ATOL = 1e-9
# Looser tolerance for states produced by numerical integration.
DRIFT_ATOL = 1e-6


def _as_readonly_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Population games
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixGame:
    """Symmetric matrix game with rewards r(y) = payoff @ y.

    Strictly positive payoff entries are sufficient for positive rewards on
    the whole simplex. The constructor does not enforce positivity (so that
    invalid games can still be inspected by :func:`validate_game`); use
    :meth:`shifted_positive` to build a positive game from arbitrary payoffs.
    """

    payoff: np.ndarray

    def __post_init__(self):
        A = _as_readonly_matrix(self.payoff, "payoff")
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"payoff matrix must be square, got {A.shape}")
        if A.shape[0] < 2:
            raise ConfigurationError("a game needs at least 2 actions")
        object.__setattr__(self, "payoff", A)

    @property
    def n_actions(self) -> int:
        return self.payoff.shape[0]

    def rewards(self, y: np.ndarray) -> np.ndarray:
        return self.payoff @ np.asarray(y, dtype=float)

    @classmethod
    def shifted_positive(cls, payoff) -> "MatrixGame":
        """Build a game, shifting all payoffs up if any entry is <= 0.

        Adding a constant to every payoff entry shifts every reward by the
        same amount at every simplex point, so reward differences, and with
        them the equilibrium set, are unchanged. The applied shift is
        ``1 - min(payoff)`` and is logged.
        """
        A = np.array(payoff, dtype=float)
        lo = float(A.min())
        if lo <= 0.0:
            shift = 1.0 - lo
            log.warning("payoff matrix has min entry %g; shifting all entries by %g", lo, shift)
            A = A + shift
        return cls(A)


@dataclass(frozen=True)
class GeneralRewards:
    """Named family of reward functions evaluated jointly at y.

    ``fn`` maps a population state vector to the vector of per-action
    rewards. Positivity on the simplex cannot be proven for arbitrary
    callables; :func:`validate_game` probes it on a deterministic sample.
    """

    name: str
    n_actions: int
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.n_actions < 2:
            raise ConfigurationError("a game needs at least 2 actions")

    def rewards(self, y: np.ndarray) -> np.ndarray:
        r = np.asarray(self.fn(np.asarray(y, dtype=float)), dtype=float)
        if r.shape != (self.n_actions,):
            raise EvaluationError(
                f"reward family {self.name!r} returned shape {r.shape}, "
                f"expected ({self.n_actions},)"
            )
        return r


PopulationGame = Union[MatrixGame, GeneralRewards]


# ---------------------------------------------------------------------------
# Community networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommunityNetwork:
    """Communities with interaction strengths W and movement tendencies Lambda.

    ``W[h, k]`` scales the rate at which individuals in community ``h``
    encounter individuals in community ``k`` in pairwise interactions.
    ``Lambda[h, k]`` is the intrinsic tendency to move from ``h`` to ``k``;
    realized movement rates are ``Lambda[h, k] * phi[h, k]`` once modulated
    by an environmental response. The movement graph has no connectivity
    requirement.
    """

    W: np.ndarray
    Lambda: np.ndarray

    def __post_init__(self):
        W = _as_readonly_matrix(self.W, "W")
        L = _as_readonly_matrix(self.Lambda, "Lambda")
        if W.shape[0] != W.shape[1]:
            raise ConfigurationError(f"W must be square, got {W.shape}")
        if L.shape != W.shape:
            raise ConfigurationError(
                f"Lambda shape {L.shape} does not match W shape {W.shape}"
            )
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Lambda", L)

    @property
    def n_communities(self) -> int:
        return self.W.shape[0]


def _strongly_connected(adjacency: np.ndarray) -> bool:
    """Strong connectivity of a boolean adjacency matrix.

    Double reachability sweep: every node must be reachable from node 0
    along forward edges and along reversed edges.
    """
    n = adjacency.shape[0]
    if n == 0:
        return False

    def reachable(mat: np.ndarray) -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            reached = mat[frontier].any(axis=0) & ~seen
            frontier = list(np.nonzero(reached)[0])
            seen |= reached
        return seen

    return bool(reachable(adjacency).all() and reachable(adjacency.T).all())


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemState:
    """Occupancy matrix x[i, h] with unit total mass.

    Entries are fractions of the whole population, so they must be
    non-negative and sum to one (within ``atol``).
    """

    x: np.ndarray
    atol: float = CONSTRUCTION_ATOL

    def __post_init__(self):
        x = _as_readonly_matrix(self.x, "x")
        if x.min() < -self.atol:
            raise ConfigurationError(
                f"occupancy matrix has negative entry {x.min():g} (atol={self.atol:g})"
            )
        mass = float(x.sum())
        if abs(mass - 1.0) > self.atol:
            raise ConfigurationError(
                f"occupancy matrix mass is {mass!r}, expected 1 within {self.atol:g}"
            )
        object.__setattr__(self, "x", x)

    @property
    def n_actions(self) -> int:
        return self.x.shape[0]

    @property
    def n_communities(self) -> int:
        return self.x.shape[1]

    @property
    def y(self) -> np.ndarray:
        return population_state(self)

    @property
    def eta(self) -> np.ndarray:
        return community_densities(self)

    @classmethod
    def from_product(cls, y, eta, atol: float = CONSTRUCTION_ATOL) -> "SystemState":
        """Balanced state x = outer(y, eta): every community mirrors y."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return cls(np.outer(y, eta), atol=atol)


@dataclass(frozen=True)
class ExtendedState:
    """System state plus any auxiliary environment state and the clock.

    ``env_state`` carries the current response matrix for environments that
    evolve by their own differential equation; it is ``None`` for static or
    state-computed environments.
    """

    system: SystemState
    env_state: np.ndarray | None = None
    t: float = 0.0

    def __post_init__(self):
        if self.env_state is not None:
            phi = _as_readonly_matrix(self.env_state, "env_state")
            if phi.min() < -CONSTRUCTION_ATOL:
                raise ConfigurationError(
                    f"env_state has negative entry {phi.min():g}"
                )
            object.__setattr__(self, "env_state", phi)


def _occupancy(state) -> np.ndarray:
    if isinstance(state, ExtendedState):
        return state.system.x
    if isinstance(state, SystemState):
        return state.x
    return np.asarray(state, dtype=float)


def population_state(state) -> np.ndarray:
    """Population state y: row sums of the occupancy matrix."""
    return _occupancy(state).sum(axis=1)


def community_densities(state) -> np.ndarray:
    """Community densities eta: column sums of the occupancy matrix."""
    return _occupancy(state).sum(axis=0)


def support(y: np.ndarray, threshold: float = 1e-8) -> np.ndarray:
    """Indices of actions (or communities) carrying more than ``threshold`` mass."""
    return np.nonzero(np.asarray(y, dtype=float) > threshold)[0]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class CheckItem:
    name: str
    passed: bool
    detail: str = ""
    value: float | None = None


@dataclass
class ValidationReport:
    checks: list[CheckItem] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.checks)

    def failures(self) -> list[CheckItem]:
        return [item for item in self.checks if not item.passed]

    def add(self, name: str, passed: bool, detail: str = "", value: float | None = None):
        self.checks.append(CheckItem(name, bool(passed), detail, value))

    def extend(self, other: "ValidationReport"):
        self.checks.extend(other.checks)
        self.warnings.extend(other.warnings)


def validate_network(net: CommunityNetwork) -> ValidationReport:
    """Check the interaction matrix assumption and movement sanity.

    Failures cover non-negativity, irreducibility (strong connectivity of
    the support graph of W), and the positive diagonal of W, plus
    non-negativity of Lambda. A disconnected movement graph is only a
    warning: it is legal, but communities that empty out can then never be
    re-occupied.
    """
    report = ValidationReport()
    W = net.W
    report.add(
        "interaction_nonnegative",
        np.all(W >= 0.0),
        "interaction matrix W must be entrywise non-negative",
        value=float(W.min()),
    )
    diag_min = float(np.diag(W).min())
    report.add(
        "interaction_positive_diagonal",
        diag_min > 0.0,
        "every community must interact with itself (positive diagonal of W)",
        value=diag_min,
    )
    report.add(
        "interaction_irreducible",
        _strongly_connected(W > 0.0),
        "the support graph of W must be strongly connected (irreducible W)",
    )
    report.add(
        "movement_nonnegative",
        np.all(net.Lambda >= 0.0),
        "movement matrix Lambda must be entrywise non-negative",
        value=float(net.Lambda.min()),
    )
    if not _strongly_connected(net.Lambda > 0.0):
        report.warnings.append(
            "movement graph is not strongly connected: emptied communities "
            "may never be re-occupied"
        )
    return report


def simplex_probe_points(n: int, n_probe: int | None = None) -> np.ndarray:
    """Deterministic sample of the unit simplex used for positivity probes.

    The default probe is the simplex vertices plus the interior lattice at
    resolution 1/16 (points k/16 with all parts >= 1), capped at 10**4
    points. When ``n_probe`` is given, the probe is the vertices followed by
    a low-discrepancy interior sweep, truncated or extended to exactly
    ``n_probe`` points.
    """
    vertices = [np.eye(n)[i] for i in range(n)]
    if n_probe is None:
        grid = []
        for cuts in itertools.combinations(range(1, 16), n - 1):
            parts = np.diff((0,) + cuts + (16,)) / 16.0
            grid.append(parts)
            if len(grid) + n >= 10_000:
                break
        return np.array(vertices + grid)
    if n_probe < 1:
        raise ConfigurationError("n_probe must be >= 1")
    points = vertices[:n_probe]
    # Additive recurrence over the cube, mapped to the simplex through the
    # sorted-gaps transform; irrational strides keep it equidistributed.
    strides = np.array([math.sqrt(p) % 1.0 for p in [2, 3, 5, 7, 11, 13, 17, 19][: n - 1]])
    k = 1
    while len(points) < n_probe:
        u = np.sort((k * strides) % 1.0)
        points.append(np.diff(np.concatenate(([0.0], u, [1.0]))))
        k += 1
    return np.array(points)


def validate_game(game: PopulationGame, n_probe: int | None = None) -> ValidationReport:
    """Check that rewards are strictly positive.

    For a matrix game, positive payoff entries are checked directly (they
    are sufficient on the simplex). For a general reward family, rewards are
    evaluated at the deterministic probe set; passing the probe is evidence,
    not proof. The minimum observed reward is recorded either way.
    """
    report = ValidationReport()
    if isinstance(game, MatrixGame):
        lo = float(game.payoff.min())
        report.add(
            "rewards_positive",
            lo > 0.0,
            f"payoff entries must be strictly positive, min entry is {lo:g}",
            value=lo,
        )
        return report

    lo = math.inf
    for y in simplex_probe_points(game.n_actions, n_probe):
        r = game.rewards(y)
        if not np.all(np.isfinite(r)):
            raise EvaluationError(
                f"reward family {game.name!r} returned a non-finite value at y={y}"
            )
        lo = min(lo, float(r.min()))
    report.add(
        "rewards_positive",
        lo > 0.0,
        f"rewards must be strictly positive on the simplex, "
        f"min probed reward is {lo:g}",
        value=lo,
    )
    return report
