"""Budgeted query interface over hidden mechanisms.

Every benchmark domain funnels through :class:`BudgetedOracle`: one hidden
mechanism, a fixed query budget, an ordered query log, and a seeded noise
stream that advances exactly once per scalar observation so full-run replay
is exact. Benchmarks register an opener keyed by ``benchmark_id``; the
equation-plugin opener lives here, the chem and grn openers register
themselves on import.
"""

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import exprlang
from ._seeding import stream
from .errors import (
    BudgetExhausted,
    InputOutOfBounds,
    MalformedManifest,
    UnboundName,
    UnknownBenchmark,
)

DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class TaskManifest:
    benchmark_id: str
    task_id: str
    family_or_motif: str
    difficulty: str
    variant: int
    seed: int
    budget: int
    noise_sigma: float

    def validate(self):
        if not isinstance(self.budget, int) or isinstance(self.budget, bool) or self.budget < 1:
            raise MalformedManifest(f"budget must be a positive integer, got {self.budget!r}")
        if not (isinstance(self.noise_sigma, (int, float)) and self.noise_sigma >= 0):
            raise MalformedManifest(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")
        if self.difficulty not in DIFFICULTIES:
            raise MalformedManifest(f"difficulty must be one of {DIFFICULTIES}")
        if not self.task_id:
            raise MalformedManifest("task_id must be non-empty")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise MalformedManifest("seed must be an integer")
        if not isinstance(self.variant, int) or isinstance(self.variant, bool) or self.variant < 0:
            raise MalformedManifest("variant must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "benchmark_id": self.benchmark_id,
            "task_id": self.task_id,
            "family_or_motif": self.family_or_motif,
            "difficulty": self.difficulty,
            "variant": self.variant,
            "seed": self.seed,
            "budget": self.budget,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskManifest":
        try:
            return cls(
                benchmark_id=d["benchmark_id"],
                task_id=d["task_id"],
                family_or_motif=d["family_or_motif"],
                difficulty=d["difficulty"],
                variant=int(d["variant"]),
                seed=int(d["seed"]),
                budget=int(d["budget"]),
                noise_sigma=float(d["noise_sigma"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifest(f"bad manifest record: {exc}") from exc


@dataclass(frozen=True)
class QueryRecord:
    index: int
    input: Any
    observation: Any


def apply_noise(value: float, sigma: float, rng: np.random.Generator) -> float:
    """Relative Gaussian noise: value * (1 + sigma * z). Draws one z always,
    so identical query sequences consume the stream identically at any sigma."""
    z = rng.standard_normal()
    return float(value * (1.0 + sigma * z))


class BudgetedOracle:
    """Single-mutator budgeted window onto one hidden mechanism.

    ``kind`` is "equation" (vector input, scalar response) or "graph"
    (intervention input, per-node response). Callers never see the mechanism,
    only query responses; budget accounting is strict.
    """

    def __init__(self, manifest: TaskManifest, kind: str, observe: Callable,
                 validate_input: Callable, variables: tuple = (), bounds: dict | None = None,
                 response_value: Callable = float, intervention_space: Callable | None = None):
        self.manifest = manifest
        self.kind = kind
        self.budget = manifest.budget
        self.remaining = manifest.budget
        self.query_log: list = []
        self.variables = variables
        self.bounds = dict(bounds or {})
        self._observe = observe
        self._validate = validate_input
        self._rng = stream(manifest.seed, "oracle-noise", manifest.task_id)
        self.response_value = response_value
        self._intervention_space = intervention_space

    def query(self, x):
        if self.remaining <= 0:
            raise BudgetExhausted(f"budget {self.budget} exhausted for {self.manifest.task_id}")
        self._validate(x)
        obs = self._observe(x, self._rng, self.manifest.noise_sigma)
        self.query_log.append(QueryRecord(len(self.query_log), x, obs))
        self.remaining -= 1
        return obs

    def intervention_space(self) -> list:
        if self._intervention_space is None:
            raise UnknownBenchmark(f"{self.manifest.benchmark_id} has no discrete intervention space")
        return self._intervention_space()


def check_bounds(x: dict, variables: tuple, bounds: dict):
    """Reject (never clamp) queries outside the declared design space."""
    for name in variables:
        if name not in x:
            raise InputOutOfBounds(name, None, *bounds[name])
        lo, hi = bounds[name]
        v = float(x[name])
        if not (lo <= v <= hi) or not np.isfinite(v):
            raise InputOutOfBounds(name, v, lo, hi)


# --- benchmark registry -------------------------------------------------------

_BENCHMARKS: dict = {}


def register_benchmark(benchmark_id: str, opener: Callable):
    _BENCHMARKS[benchmark_id] = opener


def registered_benchmarks() -> tuple:
    return tuple(sorted(_BENCHMARKS))


def open_task(manifest: TaskManifest) -> BudgetedOracle:
    """Instantiate the hidden mechanism for a manifest and wrap it in a budget."""
    manifest.validate()
    opener = _BENCHMARKS.get(manifest.benchmark_id)
    if opener is None:
        raise UnknownBenchmark(
            f"{manifest.benchmark_id!r} is not registered (have {registered_benchmarks()})")
    return opener(manifest)


# --- generic closed-form equation plugin ---------------------------------------

_PLUGIN_LAWS: dict = {}


@dataclass(frozen=True)
class EquationLaw:
    expression: exprlang.ParsedHypothesis
    constants: dict
    bounds: dict
    library: tuple = field(default=())  # optional candidate pool for library methods


def _check_law(expression: exprlang.ParsedHypothesis, constants: dict, bounds: dict):
    missing = expression.variables_used - set(bounds)
    if missing:
        raise UnboundName(f"no bounds for variables {sorted(missing)}")
    unbound = set(expression.free_constants) - set(constants)
    if unbound:
        raise UnboundName(f"no values for constants {sorted(unbound)}")


def register_equation_law(task_id: str, expression_text: str, constants: dict,
                          bounds: dict, library: tuple = ()):
    """Register a closed-form law so manifests with benchmark_id
    "equation-plugin" can refer to it by task_id."""
    expression = exprlang.parse(expression_text)
    _check_law(expression, constants, bounds)
    _PLUGIN_LAWS[task_id] = EquationLaw(expression, dict(constants),
                                        {k: (float(lo), float(hi)) for k, (lo, hi) in bounds.items()},
                                        tuple(library))


def registered_law(task_id: str) -> EquationLaw:
    law = _PLUGIN_LAWS.get(task_id)
    if law is None:
        raise MalformedManifest(f"equation-plugin task {task_id!r} has no registered law")
    return law


def equation_plugin_oracle(expression: exprlang.ParsedHypothesis, hidden_constants: dict,
                           bounds: dict):
    """Factory of budgeted oracles whose clean response evaluates ``expression``."""
    _check_law(expression, hidden_constants, bounds)
    variables = tuple(sorted(expression.variables_used))
    norm_bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in bounds.items()}

    def make(manifest: TaskManifest) -> BudgetedOracle:
        def observe(x, rng, sigma):
            clean = exprlang.evaluate(expression, x, hidden_constants)
            return apply_noise(clean, sigma, rng)

        def validate(x):
            check_bounds(x, variables, norm_bounds)

        return BudgetedOracle(manifest, "equation", observe, validate,
                              variables=variables, bounds=norm_bounds)

    return make


def _open_plugin(manifest: TaskManifest) -> BudgetedOracle:
    law = registered_law(manifest.task_id)
    return equation_plugin_oracle(law.expression, law.constants, law.bounds)(manifest)


register_benchmark("equation-plugin", _open_plugin)
