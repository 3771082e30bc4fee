"""Signed regulatory-graph simulator over {signal, A, B, C, R}.

Hidden mechanisms are signed directed graphs with Hill-type dynamics

    dx_i/dt = b_i + beta_i * u_i * prod_act H+(x_src) * prod_rep H-(x_src)
              - gamma_i * x_i

where the regulated-production term exists only for nodes with incoming
edges (so an edgeless node settles at b/gamma), u_i is the knock factor of
the active intervention, and the signal node is pinned at its (possibly
intervened) level. Observations are the steady states of all non-signal
nodes reached from the unperturbed baseline, so bistable instances report
the branch the baseline basin selects.

The motif catalog fixes 5 families x 3 topology variants; difficulty tiers
re-sample the same topology with progressively sharper Hill exponents. The
catalog is serialized to ``data/grn_catalog.json``.
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from . import _grn_kernels, oracle
from ._seeding import stream
from .errors import InvalidIntervention, MalformedManifest, NonConvergence, UnknownMotif

CATALOG_VERSION = 1

NODES = ("signal", "A", "B", "C", "R")
DYNAMIC_NODES = ("A", "B", "C", "R")
FINAL_NODE = "C"
MAX_ACTIONS = 2
KNOCK_UP_DEFAULT = 5.0
KNOCK_DOWN_DEFAULT = 0.1

DIFFICULTY_HILL_RANGES = {"easy": (1.0, 1.5), "medium": (1.5, 3.0), "hard": (3.0, 6.0)}
PARAM_RANGES = {
    "basal": (0.05, 0.2),
    "max_production": (1.0, 5.0),
    "degradation": (0.3, 1.0),
    "hill_threshold": (0.5, 3.0),
    "signal_level": (0.5, 3.0),
}

ORACLE_STEP = 0.05
ORACLE_TOL = 1e-8
ORACLE_MAX_STEPS = 1_000_000
_REPORT_TOL = 1e-6  # residual above this at the step cap is a NonConvergence


@dataclass(frozen=True)
class SignedGraph:
    edges: tuple  # ((src, dst, sign), ...) sorted by (src, dst)

    def __post_init__(self):
        seen = set()
        for src, dst, sign in self.edges:
            if src not in NODES or dst not in NODES:
                raise MalformedManifest(f"unknown node in edge {(src, dst, sign)}")
            if dst == src or dst == "signal":
                raise MalformedManifest(f"illegal edge {(src, dst, sign)}")
            if sign not in (1, -1):
                raise MalformedManifest(f"sign must be +1 or -1 in {(src, dst, sign)}")
            if (src, dst) in seen:
                raise MalformedManifest(f"duplicate edge pair {(src, dst)}")
            seen.add((src, dst))
        if len(seen) > 20:
            raise MalformedManifest("more than 20 directed non-self edges")
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    def canonical_string(self) -> str:
        return ";".join(f"{s}>{d}:{'+' if g > 0 else '-'}" for s, d, g in self.edges)

    def to_wire(self) -> list:
        return [[s, d, g] for s, d, g in self.edges]

    @classmethod
    def from_wire(cls, triples) -> "SignedGraph":
        return cls(tuple((str(s), str(d), int(g)) for s, d, g in triples))


@dataclass(frozen=True)
class GrnDynamics:
    basal: tuple          # b_i per dynamic node, order DYNAMIC_NODES
    max_production: tuple  # beta_i
    degradation: tuple    # gamma_i
    edge_threshold: tuple  # K_e aligned with graph.edges
    edge_exponent: tuple  # n_e aligned with graph.edges
    signal_level: float   # s0


@dataclass(frozen=True)
class Intervention:
    """At most two simultaneous actions: per-node knocks and/or a signal pin."""

    knocks: tuple = ()          # ((node, factor), ...) sorted by node
    signal_level: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "knocks", tuple(sorted((str(n), float(f)) for n, f in self.knocks)))
        seen = set()
        for node, factor in self.knocks:
            if node not in DYNAMIC_NODES:
                raise InvalidIntervention(f"cannot knock node {node!r}")
            if node in seen:
                raise InvalidIntervention(f"duplicate knock on {node!r}")
            seen.add(node)
            if not np.isfinite(factor) or factor < 0 or factor == 1.0:
                raise InvalidIntervention(f"knock factor must be in [0,1) or (1,inf), got {factor}")
        if self.signal_level is not None:
            lvl = float(self.signal_level)
            if not np.isfinite(lvl) or lvl < 0:
                raise InvalidIntervention(f"signal level must be >= 0, got {lvl}")
            object.__setattr__(self, "signal_level", lvl)
        n_actions = len(self.knocks) + (self.signal_level is not None)
        if n_actions > MAX_ACTIONS:
            raise InvalidIntervention(f"{n_actions} simultaneous actions (max {MAX_ACTIONS})")

    def to_wire(self) -> list:
        triples = [[n, "knock_up" if f > 1 else "knock_down", f] for n, f in self.knocks]
        if self.signal_level is not None:
            triples.append(["signal", "set_signal", self.signal_level])
        return triples

    @classmethod
    def from_wire(cls, triples) -> "Intervention":
        knocks = []
        signal = None
        for node, action, factor in triples:
            if action == "set_signal":
                signal = float(factor)
            elif action in ("knock_up", "knock_down"):
                knocks.append((node, float(factor)))
            else:
                raise InvalidIntervention(f"unknown action {action!r}")
        return cls(tuple(knocks), signal)


BASELINE = Intervention()


@dataclass(frozen=True)
class GrnObservation:
    expression: dict  # dynamic node -> steady-state level


@dataclass(frozen=True)
class MotifDescriptor:
    family: str
    variant: int
    difficulty: str
    edges: tuple


_TOPOLOGIES = {
    "activation_chain": {
        1: (("signal", "A", 1), ("A", "B", 1), ("B", "C", 1)),
        2: (("signal", "A", 1), ("A", "C", 1)),
        3: (("signal", "A", 1), ("A", "B", 1), ("B", "R", 1), ("R", "C", 1)),
    },
    "coherent_ffl": {
        1: (("signal", "A", 1), ("signal", "C", 1), ("A", "C", 1)),
        2: (("signal", "A", 1), ("A", "B", 1), ("signal", "B", 1), ("B", "C", 1)),
        3: (("signal", "A", 1), ("signal", "B", 1), ("A", "C", 1), ("B", "C", 1)),
    },
    "incoherent_ffl": {
        1: (("signal", "A", 1), ("signal", "C", 1), ("A", "C", -1)),
        2: (("signal", "A", 1), ("A", "B", 1), ("signal", "C", 1), ("B", "C", -1)),
        3: (("signal", "A", 1), ("signal", "B", 1), ("A", "C", 1), ("B", "C", -1)),
    },
    "negative_feedback": {
        1: (("signal", "A", 1), ("A", "C", 1), ("C", "A", -1)),
        2: (("signal", "A", 1), ("A", "B", 1), ("B", "C", 1), ("C", "A", -1)),
        3: (("signal", "A", 1), ("A", "C", 1), ("C", "B", 1), ("B", "A", -1)),
    },
    "toggle_switch": {
        1: (("signal", "A", 1), ("A", "B", -1), ("B", "A", -1), ("A", "C", 1)),
        2: (("signal", "A", 1), ("A", "B", -1), ("B", "A", -1), ("B", "C", -1)),
        3: (("signal", "A", 1), ("signal", "B", -1), ("A", "B", -1), ("B", "A", -1), ("A", "C", 1)),
    },
}

FAMILIES = tuple(_TOPOLOGIES)


def motif_catalog() -> tuple:
    """All 45 (family, variant, difficulty) descriptors, catalog order."""
    out = []
    for family in FAMILIES:
        for variant in (1, 2, 3):
            for difficulty in ("easy", "medium", "hard"):
                out.append(MotifDescriptor(family, variant, difficulty,
                                           _TOPOLOGIES[family][variant]))
    return tuple(out)


def catalog_graph(family: str, variant: int) -> SignedGraph:
    try:
        return SignedGraph(_TOPOLOGIES[family][variant])
    except KeyError:
        raise UnknownMotif(f"no motif {family!r} variant {variant}") from None


def catalog_graphs() -> tuple:
    """The 15 distinct topologies (library pool for graph methods)."""
    return tuple(catalog_graph(f, v) for f in FAMILIES for v in (1, 2, 3))


def family_graphs(family: str) -> tuple:
    if family not in _TOPOLOGIES:
        raise UnknownMotif(f"unknown motif family {family!r}")
    return tuple(catalog_graph(family, v) for v in (1, 2, 3))


def instantiate(family: str, variant: int, difficulty: str, seed: int):
    """Catalog topology plus seeded dynamics; Hill exponents follow the tier."""
    graph = catalog_graph(family, variant)
    if difficulty not in DIFFICULTY_HILL_RANGES:
        raise UnknownMotif(f"unknown difficulty {difficulty!r}")
    rng = stream(seed, "grn-dynamics", family, variant, difficulty)
    d = len(DYNAMIC_NODES)

    def log_uniform(lo, hi, size=None):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size=size))

    b = log_uniform(*PARAM_RANGES["basal"], size=d)
    beta = log_uniform(*PARAM_RANGES["max_production"], size=d)
    gamma = log_uniform(*PARAM_RANGES["degradation"], size=d)
    n_edges = len(graph.edges)
    k = log_uniform(*PARAM_RANGES["hill_threshold"], size=n_edges)
    nlo, nhi = DIFFICULTY_HILL_RANGES[difficulty]
    n = rng.uniform(nlo, nhi, size=n_edges)
    s0 = float(log_uniform(*PARAM_RANGES["signal_level"]))
    dyn = GrnDynamics(tuple(map(float, b)), tuple(map(float, beta)),
                      tuple(map(float, gamma)), tuple(map(float, k)),
                      tuple(map(float, n)), s0)
    return graph, dyn


# --- integration -----------------------------------------------------------------

_NODE_INDEX = {name: i for i, name in enumerate(NODES)}
_DYN_INDEX = {name: i for i, name in enumerate(DYNAMIC_NODES)}


def _packed(graph: SignedGraph, dyn: GrnDynamics):
    esrc = np.array([_NODE_INDEX[s] for s, _, _ in graph.edges], dtype=np.int64)
    edst = np.array([_DYN_INDEX[d] for _, d, _ in graph.edges], dtype=np.int64)
    esign = np.array([g for _, _, g in graph.edges], dtype=np.int64)
    regulated = np.zeros(len(DYNAMIC_NODES), dtype=bool)
    regulated[edst] = True
    return (np.array(dyn.basal), np.array(dyn.max_production), np.array(dyn.degradation),
            regulated, esrc, edst, esign,
            np.array(dyn.edge_threshold, dtype=np.float64),
            np.array(dyn.edge_exponent, dtype=np.float64))


def _intervention_arrays(dyn: GrnDynamics, ivs) -> tuple:
    m = len(ivs)
    u = np.ones((m, len(DYNAMIC_NODES)))
    slev = np.full(m, dyn.signal_level)
    for row, iv in enumerate(ivs):
        for node, factor in iv.knocks:
            u[row, _DYN_INDEX[node]] = factor
        if iv.signal_level is not None:
            slev[row] = iv.signal_level
    return u, slev


def integrate_batch(graph: SignedGraph, dyn: GrnDynamics, ivs, x0=None,
                    h=ORACLE_STEP, tol=ORACLE_TOL, max_steps=ORACLE_MAX_STEPS):
    """Steady states for a batch of interventions; returns (states, residuals, steps).

    ``x0`` rows default to the production/degradation balance b/gamma.
    """
    packed = _packed(graph, dyn)
    u, slev = _intervention_arrays(dyn, ivs)
    if x0 is None:
        base = packed[0] / packed[2]
        x0 = np.tile(base, (len(ivs), 1))
    return _grn_kernels.steady_batch(*packed, u, slev, np.asarray(x0, dtype=np.float64),
                                     h, tol, max_steps)


@lru_cache(maxsize=4096)
def _baseline_state(graph: SignedGraph, dyn: GrnDynamics) -> tuple:
    states, resid, steps = integrate_batch(graph, dyn, [BASELINE])
    if resid[0] >= _REPORT_TOL:
        raise NonConvergence(float(resid[0]), int(steps[0]))
    return tuple(states[0])


def steady_state(graph: SignedGraph, dyn: GrnDynamics, iv: Intervention) -> GrnObservation:
    """Post-intervention steady state, integrated from the unperturbed baseline."""
    x0 = np.array([_baseline_state(graph, dyn)])
    states, resid, steps = integrate_batch(graph, dyn, [iv], x0=x0)
    if resid[0] >= _REPORT_TOL:
        raise NonConvergence(float(resid[0]), int(steps[0]))
    return GrnObservation({name: float(states[0][i]) for i, name in enumerate(DYNAMIC_NODES)})


def intervention_space() -> tuple:
    """The discrete admissible action set methods may enumerate and score."""
    space = [BASELINE]
    for node in DYNAMIC_NODES:
        space.append(Intervention(((node, KNOCK_UP_DEFAULT),)))
        space.append(Intervention(((node, KNOCK_DOWN_DEFAULT),)))
    signal_levels = (0.0, 0.5, 1.0, 2.0, 4.0)
    for lvl in signal_levels:
        space.append(Intervention((), lvl))
    for i, n1 in enumerate(DYNAMIC_NODES):
        for n2 in DYNAMIC_NODES[i + 1:]:
            for f1 in (KNOCK_UP_DEFAULT, KNOCK_DOWN_DEFAULT):
                for f2 in (KNOCK_UP_DEFAULT, KNOCK_DOWN_DEFAULT):
                    space.append(Intervention(((n1, f1), (n2, f2))))
    for node in DYNAMIC_NODES:
        for factor in (KNOCK_UP_DEFAULT, KNOCK_DOWN_DEFAULT):
            for lvl in signal_levels:
                space.append(Intervention(((node, factor),), lvl))
    return tuple(space)


# --- catalog data file --------------------------------------------------------------

def catalog_as_dict() -> dict:
    return {
        "version": CATALOG_VERSION,
        "nodes": list(NODES),
        "final_node": FINAL_NODE,
        "families": {
            family: {str(v): [list(e) for e in edges] for v, edges in variants.items()}
            for family, variants in _TOPOLOGIES.items()
        },
        "difficulty_hill_ranges": {k: list(v) for k, v in DIFFICULTY_HILL_RANGES.items()},
        "param_ranges": {k: list(v) for k, v in PARAM_RANGES.items()},
        "note": "three topology variants per family are this catalog's enumeration",
    }


def export_catalog(path) -> None:
    with open(path, "w") as fh:
        json.dump(catalog_as_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def shipped_catalog() -> dict:
    with resources.files("sciloop.data").joinpath("grn_catalog.json").open() as fh:
        return json.load(fh)


# --- oracle opener --------------------------------------------------------------------

def task_id_for(family: str, variant: int, difficulty: str) -> str:
    return f"{family}.v{variant}.{difficulty}"


def parse_task_id(task_id: str) -> tuple:
    try:
        family, v, difficulty = task_id.split(".")
        return family, int(v.lstrip("v")), difficulty
    except ValueError:
        raise MalformedManifest(f"bad grn task_id {task_id!r}") from None


def _open_grn(manifest: oracle.TaskManifest) -> oracle.BudgetedOracle:
    family, variant, difficulty = parse_task_id(manifest.task_id)
    if difficulty != manifest.difficulty or variant != manifest.variant:
        raise MalformedManifest(f"task_id {manifest.task_id!r} disagrees with manifest fields")
    graph, dyn = instantiate(family, variant, difficulty, manifest.seed)

    def observe(iv, rng, sigma):
        clean = steady_state(graph, dyn, iv)
        noisy = {node: oracle.apply_noise(clean.expression[node], sigma, rng)
                 for node in DYNAMIC_NODES}
        return GrnObservation(noisy)

    def validate(iv):
        if not isinstance(iv, Intervention):
            raise InvalidIntervention(f"expected Intervention, got {type(iv)!r}")

    return oracle.BudgetedOracle(
        manifest, "graph", observe, validate,
        response_value=lambda obs: obs.expression,
        intervention_space=intervention_space)


oracle.register_benchmark("grn", _open_grn)
