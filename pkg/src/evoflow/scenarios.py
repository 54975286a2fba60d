"""Scenario assembly, the JSON document schema, and built-in case studies.

A scenario document is a JSON object with the keys ``game``, ``network``,
``environment``, ``initial_state``, ``integrator``, and ``output``. Matrices
are row-major nested arrays and the environment is a tagged union on its
``"type"`` key. See the README for the full field list.

Two built-ins reproduce the case studies at desk scale:

* ``ifd``: three communities on a complete movement graph with
  best-response habitat selection. Capacities sum to the population mass,
  so densities converge to balanced dispersal (eta = kappa) while the
  Hawk-Dove population mix converges to its interior stable state.
* ``seasonal``: two communities whose carrying capacities oscillate in
  antiphase, driving the out-migration response. Densities oscillate
  forever, yet the population mix still converges and the communities
  asymptotically mirror it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import (
    BestResponseEnvironment,
    ConstantEnvironment,
    EnvironmentModel,
    OutMigrationEnvironment,
    SinusoidalCapacity,
    StaticCapacity,
)
from .errors import ConfigurationError
from .model import (
    CommunityNetwork,
    ExtendedState,
    GeneralRewards,
    MatrixGame,
    PopulationGame,
    SystemState,
    ValidationReport,
    validate_game,
    validate_network,
)
from .solver import IntegratorConfig


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    prefix: str = "run"


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one run: game, network, environment, start,
    integrator settings, and output naming."""

    game: PopulationGame
    network: CommunityNetwork
    environment: EnvironmentModel
    initial_state: ExtendedState
    integrator: IntegratorConfig = IntegratorConfig()
    output: OutputConfig = OutputConfig()

    def validate(self) -> ValidationReport:
        """Assumption checks plus cross-object dimension consistency."""
        report = ValidationReport()
        na = self.game.n_actions
        nh = self.network.n_communities
        state = self.initial_state.system
        report.add(
            "dimensions_consistent",
            state.x.shape == (na, nh) and self._env_dims_ok(nh),
            f"game has {na} actions, network {nh} communities, "
            f"initial occupancy is {state.x.shape[0]}x{state.x.shape[1]}",
        )
        if isinstance(self.environment, OutMigrationEnvironment):
            env_state = self.initial_state.env_state
            report.add(
                "environment_state_present",
                env_state is not None and env_state.shape == (nh, nh),
                "out-migration environments need an initial response matrix "
                "on the extended state",
            )
        report.extend(validate_network(self.network))
        report.extend(validate_game(self.game))
        return report

    def _env_dims_ok(self, nh: int) -> bool:
        env = self.environment
        if isinstance(env, (ConstantEnvironment, BestResponseEnvironment,
                            OutMigrationEnvironment)):
            return env.n_communities == nh
        return True


# ---------------------------------------------------------------------------
# Document parsing and serialization
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigurationError(f"missing field {key!r} in {where}")
    return doc[key]


def _game_from_dict(doc: dict) -> PopulationGame:
    kind = _require(doc, "type", "game")
    if kind == "matrix":
        payoff = _require(doc, "payoff", "game")
        if doc.get("auto_shift", False):
            return MatrixGame.shifted_positive(payoff)
        return MatrixGame(payoff)
    raise ConfigurationError(
        f"unknown game type {kind!r} (documents support 'matrix'; general "
        f"reward families are built programmatically)")


def _game_to_dict(game: PopulationGame) -> dict:
    if isinstance(game, MatrixGame):
        return {"type": "matrix", "payoff": game.payoff.tolist()}
    if isinstance(game, GeneralRewards):
        raise ConfigurationError(
            f"general reward family {game.name!r} cannot be serialized")
    raise ConfigurationError(f"unknown game {type(game).__name__}")


def _environment_from_dict(doc: dict) -> EnvironmentModel:
    kind = _require(doc, "type", "environment")
    if kind == "constant":
        return ConstantEnvironment(phi=_require(doc, "phi", "environment"))
    if kind == "best_response":
        return BestResponseEnvironment(
            alpha=_require(doc, "alpha", "environment"),
            kappa=_require(doc, "kappa", "environment"),
            tie_tolerance=float(doc.get("tie_tolerance", 1e-9)),
        )
    if kind == "out_migration":
        cap_doc = _require(doc, "carrying_capacity", "environment")
        cap_kind = _require(cap_doc, "type", "environment.carrying_capacity")
        if cap_kind == "static":
            capacity = StaticCapacity(kappa=_require(cap_doc, "kappa",
                                                     "carrying_capacity"))
        elif cap_kind == "sinusoidal":
            capacity = SinusoidalCapacity(
                gamma=float(_require(cap_doc, "gamma", "carrying_capacity")),
                rho=float(_require(cap_doc, "rho", "carrying_capacity")),
                phase=_require(cap_doc, "phase", "carrying_capacity"),
            )
        else:
            raise ConfigurationError(
                f"unknown carrying_capacity type {cap_kind!r}")
        return OutMigrationEnvironment(
            m=float(_require(doc, "m", "environment")),
            capacity=capacity,
            phi0=_require(doc, "phi0", "environment"),
        )
    raise ConfigurationError(f"unknown environment type {kind!r}")


def _environment_to_dict(env: EnvironmentModel) -> dict:
    if isinstance(env, ConstantEnvironment):
        return {"type": "constant", "phi": env.phi.tolist()}
    if isinstance(env, BestResponseEnvironment):
        return {"type": "best_response", "alpha": env.alpha.tolist(),
                "kappa": env.kappa.tolist(), "tie_tolerance": env.tie_tolerance}
    if isinstance(env, OutMigrationEnvironment):
        if isinstance(env.capacity, StaticCapacity):
            cap = {"type": "static", "kappa": env.capacity.kappa.tolist()}
        else:
            cap = {"type": "sinusoidal", "gamma": env.capacity.gamma,
                   "rho": env.capacity.rho, "phase": env.capacity.phase.tolist()}
        return {"type": "out_migration", "m": env.m, "carrying_capacity": cap,
                "phi0": env.phi0.tolist()}
    raise ConfigurationError(f"unknown environment {type(env).__name__}")


def _initial_state_from_dict(doc: dict, env: EnvironmentModel) -> ExtendedState:
    if "x" in doc:
        system = SystemState(doc["x"])
    elif "y" in doc and "eta" in doc:
        system = SystemState.from_product(doc["y"], doc["eta"])
    else:
        raise ConfigurationError(
            "initial_state needs either 'x' or both 'y' and 'eta'")
    env_state = None
    if isinstance(env, OutMigrationEnvironment):
        env_state = doc.get("phi", env.phi0)
    return ExtendedState(system=system, env_state=env_state, t=0.0)


def _integrator_from_dict(doc: dict) -> IntegratorConfig:
    known = {"method", "dt", "t_end", "abs_tol", "rel_tol",
             "renormalize_threshold", "record_every", "smooth_argmax_beta",
             "engine"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(
            f"unknown integrator fields: {sorted(unknown)}")
    return IntegratorConfig(**doc)


def _integrator_to_dict(cfg: IntegratorConfig) -> dict:
    return {
        "method": cfg.method, "dt": cfg.dt, "t_end": cfg.t_end,
        "abs_tol": cfg.abs_tol, "rel_tol": cfg.rel_tol,
        "renormalize_threshold": cfg.renormalize_threshold,
        "record_every": cfg.record_every,
        "smooth_argmax_beta": cfg.smooth_argmax_beta,
        "engine": cfg.engine,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from a parsed document, with field-level errors."""
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario document must be a JSON object")
    game = _game_from_dict(_require(doc, "game", "scenario"))
    net_doc = _require(doc, "network", "scenario")
    network = CommunityNetwork(
        W=_require(net_doc, "W", "network"),
        Lambda=_require(net_doc, "Lambda", "network"),
    )
    env = _environment_from_dict(_require(doc, "environment", "scenario"))
    state = _initial_state_from_dict(_require(doc, "initial_state", "scenario"), env)
    integrator = _integrator_from_dict(doc.get("integrator", {}))
    out_doc = doc.get("output", {})
    output = OutputConfig(dir=out_doc.get("dir"), prefix=out_doc.get("prefix", "run"))
    return Scenario(game=game, network=network, environment=env,
                    initial_state=state, integrator=integrator, output=output)


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "game": _game_to_dict(scenario.game),
        "network": {
            "W": scenario.network.W.tolist(),
            "Lambda": scenario.network.Lambda.tolist(),
        },
        "environment": _environment_to_dict(scenario.environment),
        "initial_state": {"x": scenario.initial_state.system.x.tolist()},
        "integrator": _integrator_to_dict(scenario.integrator),
        "output": {"dir": scenario.output.dir, "prefix": scenario.output.prefix},
    }
    if scenario.initial_state.env_state is not None:
        doc["initial_state"]["phi"] = scenario.initial_state.env_state.tolist()
    return doc


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"malformed scenario document {path}: {exc}") from exc
    return scenario_from_dict(doc)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def scenario_digest(doc: dict) -> str:
    """Content hash of a scenario document, stable across key order."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Built-in scenarios
# ---------------------------------------------------------------------------

# Hawk-Dove payoffs used by both case studies; the interior stable state is
# ((b - d)/(c - a + b - d), (a - c)/(a - c + d - b)) = (0.2, 0.8).
_HAWK_DOVE = [[1.0, 7.0], [5.0, 6.0]]


def _builtin_ifd() -> Scenario:
    kappa = [0.2, 0.3, 0.5]
    return Scenario(
        game=MatrixGame(_HAWK_DOVE),
        network=CommunityNetwork(
            W=[[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]],
            Lambda=np.ones((3, 3)),
        ),
        environment=BestResponseEnvironment(alpha=[1.0, 1.0, 1.0], kappa=kappa),
        initial_state=ExtendedState(
            SystemState.from_product([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3])),
        integrator=IntegratorConfig(method="rk4", dt=2.5e-4, t_end=40.0,
                                    record_every=200),
        output=OutputConfig(prefix="ifd"),
    )


def _builtin_seasonal() -> Scenario:
    # Off-diagonal responses start at 0.05; the diagonal is irrelevant
    # because self-loop flows cancel identically in a closed flow.
    phi0 = [[0.0, 0.05], [0.05, 0.0]]
    env = OutMigrationEnvironment(
        m=1.0,
        capacity=SinusoidalCapacity(gamma=0.25, rho=0.5, phase=[0.0, math.pi]),
        phi0=phi0,
    )
    return Scenario(
        game=MatrixGame(_HAWK_DOVE),
        network=CommunityNetwork(
            W=[[0.7, 0.3], [0.3, 0.3]],
            Lambda=[[1.0, 0.5], [0.8, 1.0]],
        ),
        environment=env,
        initial_state=ExtendedState(
            SystemState.from_product([0.5, 0.5], [0.5, 0.5]),
            env_state=phi0,
        ),
        integrator=IntegratorConfig(method="rk4", dt=1e-3, t_end=200.0,
                                    record_every=100),
        output=OutputConfig(prefix="seasonal"),
    )


_BUILTINS = {
    "ifd": (
        _builtin_ifd,
        "three-community habitat selection: best-response migration drives "
        "densities to the ideal free distribution (balanced dispersal)",
    ),
    "seasonal": (
        _builtin_seasonal,
        "two communities with antiphase seasonal capacities: densities "
        "oscillate forever while the population mix converges",
    ),
}


def builtin_names() -> dict[str, str]:
    """Available built-in scenario names with one-line descriptions."""
    return {name: desc for name, (_, desc) in _BUILTINS.items()}


def builtin_scenario(name: str) -> Scenario:
    try:
        factory, _ = _BUILTINS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown builtin {name!r}; available: {sorted(_BUILTINS)}") from None
    return factory()
