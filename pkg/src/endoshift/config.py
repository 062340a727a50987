"""Flat ``key = value`` experiment configs.

One assignment per line, ``#`` starts a comment.  Values are Python/TOML-like
literals: numbers, quoted strings, ``true``/``false`` and ``[a, b]`` lists.
Unknown keys and type mismatches are reported with their line numbers.
"""
from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, fields, replace

from .conformal import CpConfig
from .dynamics import DynamicsParams
from .iterate import IterationConfig
from .sim import SimConfig

METHODS = ("ncp", "bcp", "icp", "iscp")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "all"
    n_agents: int = 2
    cp_agents: tuple = (0,)
    diameter_m: float = 10.0
    epsilon: float = 0.15
    delta: float = 0.01
    gamma_icp: float = 0.8
    gamma_iscp: float = 0.9
    phi_m: float = 0.1
    K: int = 250
    K_tune: int = 250
    n_tune: int = 1000
    bcp_episodes: int = 0
    max_iterations: int = 12
    horizon: int = 10
    n_test: int = 200
    seed: int = 0
    test_seed: int = 1000
    window: int = 5
    ridge: float = 1e-6
    dt_s: float = 0.1
    safe_distance_m: float = 0.5
    collision_radius_m: float = 0.3
    goal_radius_m: float = 0.3
    timeout_s: float = 30.0
    solver_iters: int = 60
    output_dir: str = "runs/experiment"

    def validate(self) -> list[str]:
        problems = []
        if self.method != "all" and self.method not in METHODS:
            problems.append(f"method must be one of all, {', '.join(METHODS)}")
        if self.n_agents < 2:
            problems.append("n_agents must be >= 2")
        if not self.cp_agents or any(not 0 <= a < self.n_agents for a in self.cp_agents):
            problems.append("cp_agents must be a non-empty list of agent indices")
        for name in ("K", "n_test", "max_iterations", "horizon", "window", "solver_iters"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("K_tune", "n_tune", "bcp_episodes"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("gamma_icp", "gamma_iscp"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        try:
            CpConfig(self.epsilon, self.delta, self.gamma_icp, self.phi_m)
            DynamicsParams(dt=self.dt_s)
        except ValueError as exc:
            problems.append(str(exc))
        if self.method in ("all", "ncp", "bcp", "icp") and self.n_tune < 1:
            problems.append("n_tune must be >= 1 to fit the predictor used by ncp/bcp/icp")
        return problems

    def methods(self) -> tuple:
        return METHODS if self.method == "all" else (self.method,)

    def iteration_config(self, gamma: float | None = None) -> IterationConfig:
        return IterationConfig(
            epsilon=self.epsilon,
            delta=self.delta,
            gamma=self.gamma_icp if gamma is None else gamma,
            phi=self.phi_m,
            K=self.K,
            K_tune=self.K_tune,
            max_iterations=self.max_iterations,
            horizon=self.horizon,
            n_agents=self.n_agents,
            cp_agents=tuple(self.cp_agents),
            seed=self.seed,
            diameter=self.diameter_m,
            window=self.window,
            ridge=self.ridge,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(
            horizon=self.horizon,
            dynamics=DynamicsParams(dt=self.dt_s),
            safe_distance=self.safe_distance_m,
            collision_radius=self.collision_radius_m,
            goal_radius=self.goal_radius_m,
            timeout_s=self.timeout_s,
            iters_per_level=self.solver_iters,
        )

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _literal(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return ast.literal_eval(text)


def _coerce(name: str, value):
    default = getattr(_DEFAULTS, name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError("expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError("expected a quoted string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise TypeError("expected a list of integers")
        return tuple(value)
    raise TypeError(f"unsupported field type for {name}")


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip() if '"' not in raw else _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _coerce(key, _literal(val))
        except (ValueError, SyntaxError, TypeError) as exc:
            problems.append(f"line {lineno}: bad value for {key!r}: {exc}")
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(**values)
    problems = cfg.validate()
    if problems:
        raise ConfigError([f"config: {p}" for p in problems])
    return cfg


def _strip_comment(raw: str) -> str:
    in_str = False
    for i, ch in enumerate(raw):
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return raw[:i].strip()
    return raw.strip()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value + '"'
    if isinstance(value, tuple):
        return "[" + ", ".join(str(v) for v in value) + "]"
    return repr(value)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_render(getattr(cfg, f.name))}\n" for f in fields(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()
