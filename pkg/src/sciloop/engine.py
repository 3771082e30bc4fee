"""The closed discovery loop: propose, gate, acquire, refine, remember, arbitrate.

One iteration grows the hypothesis ensemble, synthesizes a proposal with
search regions, picks the acquisition mode by bootstrap confidence against
tau_conf = 0.9 (strictly below gates to Disambiguate), selects a batch of
experiments, queries the oracle, and on the refinement cadence (every third
iteration, plus whenever the mode first switches to Refine) refits the
hypothesis pool, recomputes bootstrap confidence, and updates the memory
ledger. At budget exhaustion a final fitting pass feeds deterministic (or
arbiter-assisted) candidate selection.
"""

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ensemble, exprlang, fitkit, grn, oracle, proposer
from ._seeding import stream
from .errors import EmptyPool, EmptyRegion, ProposerFailure, SciLoopError

TAU_CONF = 0.9
REFINE_CADENCE = 3
CANDIDATES_PER_REGION = 256
TOP_QUARTILE = 0.25
FINAL_POOL_CAP = 24
_LOG_EPS = 1e-9
# Scores within max(1e-7, 1% of best) count as tied; parsimony then decides.
_TIE_ABS = 1e-7
_TIE_REL = 0.01


class AcquisitionMode(enum.Enum):
    DISAMBIGUATE = "Disambiguate"
    REFINE = "Refine"


def select_mode(confidence: float, tau: float = TAU_CONF) -> AcquisitionMode:
    """Disambiguate iff confidence is strictly below the threshold."""
    return AcquisitionMode.DISAMBIGUATE if confidence < tau else AcquisitionMode.REFINE


def disagreement(fitted, x) -> float:
    """Population std of log10 of the finite, positive predictions at x.

    Fewer than two usable predictions scores 0 (nothing to disambiguate).
    """
    values = []
    for predict in fitted:
        try:
            v = float(predict(x))
        except SciLoopError:
            continue
        if np.isfinite(v) and v > 0:
            values.append(math.log10(v))
    if len(values) < 2:
        return 0.0
    return float(np.std(values))


def grn_disagreement(fitted_graphs, iv) -> float:
    """Mean over nodes of the population variance of log(prediction + eps)."""
    rows = []
    for predict in fitted_graphs:
        try:
            response = predict(iv)
        except SciLoopError:
            continue
        row = [float(response[node]) for node in grn.DYNAMIC_NODES]
        if all(np.isfinite(v) for v in row):
            rows.append([math.log(v + _LOG_EPS) for v in row])
    if len(rows) < 2:
        return 0.0
    matrix = np.asarray(rows)
    return float(np.mean(np.var(matrix, axis=0)))


# --- state -------------------------------------------------------------------------


@dataclass
class ScoreboardEntry:
    status: str = "uncertain"        # validated | failed | uncertain
    evidence: int = 0
    consecutive_bad: int = 0
    last_score: float = math.inf
    text: str = ""


@dataclass
class MemoryLedger:
    best: dict | None = None
    scoreboard: dict = field(default_factory=dict)       # skeleton -> ScoreboardEntry
    negative_evidence: list = field(default_factory=list)  # (skeleton, experiment_index)
    refinement_history: list = field(default_factory=list)

    def failed_skeletons(self) -> frozenset:
        return frozenset(k for k, e in self.scoreboard.items() if e.status == "failed")

    def summary_text(self) -> str:
        lines = []
        if self.best:
            lines.append(f"BEST MECHANISM: {self.best['text']} (score={self.best['score']:.4g}, "
                         f"confidence={self.best.get('confidence', 0.0):.3f})")
        else:
            lines.append("BEST MECHANISM: (none yet)")
        lines.append("SCOREBOARD:")
        entries = sorted(self.scoreboard.items(), key=lambda kv: (kv[1].status, kv[0]))
        if not entries:
            lines.append("  (empty)")
        for _, entry in entries[:12]:
            lines.append(f"  {entry.text}: {entry.status} "
                         f"(fits={entry.evidence}, score={entry.last_score:.4g})")
        lines.append("NEGATIVE EVIDENCE:")
        if not self.negative_evidence:
            lines.append("  (none)")
        for skeleton, idx in self.negative_evidence[-8:]:
            entry = self.scoreboard.get(skeleton)
            lines.append(f"  {entry.text if entry else skeleton} falsified at experiment {idx}")
        return "\n".join(lines)


@dataclass
class PoolFit:
    text: str              # canonical hypothesis text / canonical edge string
    skeleton: str
    parsed: object         # ParsedHypothesis | SignedGraph
    params: object         # constants dict | GrnDynamics
    score: float           # validation RMSLE | mean intervention loss
    complexity: int        # free constants | edges
    data_size: int
    quality: int           # 1 quick screen, 2 full refinement
    converged: bool = True


@dataclass
class DiscoveryState:
    dataset: list = field(default_factory=list)          # QueryRecords
    memory: MemoryLedger = field(default_factory=MemoryLedger)
    hypotheses: ensemble.HypothesisDistribution | None = None
    confidence: float = 0.0
    phase: str = "explore"
    iteration: int = 0
    fits: dict = field(default_factory=dict)             # skeleton -> PoolFit
    bootstrap_models: tuple = ()
    proposal: proposer.Proposal | None = None
    ensemble_text: str = "(none yet)"
    fallback: object = None                              # lazily-built library proposer


@dataclass
class EngineConfig:
    tau_conf: float = TAU_CONF
    refine_cadence: int = REFINE_CADENCE
    candidates_per_region: int = CANDIDATES_PER_REGION
    ensemble_base: int = ensemble.BASE_BATCH
    ensemble_cap: int = ensemble.ENSEMBLE_CAP
    entropy_gate: float = ensemble.ENTROPY_GATE
    n_bootstrap: int = fitkit.BOOTSTRAP_RESAMPLES
    max_experiments_per_iter: int = 4
    final_pool_cap: int = FINAL_POOL_CAP
    memory_enabled: bool = True
    gating_enabled: bool = True
    goal: str = "Recover the hidden mechanism from budgeted experiments."
    domain: str = ""
    fallback_library: tuple = ()   # used when a remote proposer fails mid-run
    arbiter: object = None         # optional object with complete(prompt) -> str


class RunTrace:
    """Append-only typed event stream; serialization is byte-stable."""

    def __init__(self):
        self.records: list = []

    def log(self, record: dict):
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":"),
                                  default=_json_default) + "\n"
                       for r in self.records)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, grn.Intervention):
        return value.to_wire()
    if isinstance(value, grn.GrnObservation):
        return value.expression
    if isinstance(value, grn.SignedGraph):
        return value.to_wire()
    return str(value)


@dataclass(frozen=True)
class FinalMechanism:
    kind: str                  # equation | graph
    text: str                  # canonical expression / canonical edge string
    skeleton: str
    score: float
    params: object             # constants dict | GrnDynamics
    parsed: object             # ParsedHypothesis | SignedGraph

    def predict_rows(self, rows) -> np.ndarray:
        return fitkit.predict_rows(self.parsed, self.params, rows)

    def predict_interventions(self, ivs) -> np.ndarray:
        return fitkit.predict_interventions(self.parsed, self.params, ivs)


# --- data helpers ---------------------------------------------------------------------


def observed_pairs(state: DiscoveryState, orc) -> list:
    return [(rec.input, orc.response_value(rec.observation)) for rec in state.dataset]


def _equation_predictor(fit: PoolFit):
    def predict(x):
        return float(fitkit.predict_rows(fit.parsed, fit.params, [x])[0])
    return predict


def _graph_predictor(fit: PoolFit):
    def predict(iv):
        states = fitkit.predict_interventions(fit.parsed, fit.params, [iv])
        return {node: float(states[0][i]) for i, node in enumerate(grn.DYNAMIC_NODES)}
    return predict


def _render_equation_table(state: DiscoveryState, orc) -> str:
    pairs = observed_pairs(state, orc)
    keep = _table_subset(state, pairs)
    header = " | ".join(list(orc.variables) + ["response"])
    lines = [header]
    for x, y in keep:
        lines.append(" | ".join(f"{float(x[v]):.6g}" for v in orc.variables) + f" | {y:.6g}")
    return "\n".join(lines)


def _table_subset(state: DiscoveryState, pairs, recent: int = 40, historic: int = 10):
    if len(pairs) <= recent + historic:
        return pairs
    old, new = pairs[:-recent], pairs[-recent:]
    fits = [f for f in state.fits.values() if f.quality >= 1]
    if len(fits) >= 2:
        predictors = [_equation_predictor(f) for f in fits]
        scored = sorted(range(len(old)), key=lambda i: -disagreement(predictors, old[i][0]))
        picked = [old[i] for i in sorted(scored[:historic])]
    else:
        picked = old[:historic]
    return picked + new


def _render_graph_table(state: DiscoveryState) -> str:
    lines = ["intervention | " + " | ".join(grn.DYNAMIC_NODES)]
    for rec in state.dataset[-40:]:
        expr = rec.observation.expression
        iv = json.dumps(rec.input.to_wire())
        lines.append(iv + " | " + " | ".join(f"{expr[n]:.6g}" for n in grn.DYNAMIC_NODES))
    return "\n".join(lines)


def build_summary(state: DiscoveryState, orc, config: EngineConfig) -> proposer.StateSummary:
    ranked = _ranked_fits(state)
    best = ranked[0] if ranked else None
    return proposer.StateSummary(
        goal=config.goal,
        kind=orc.kind,
        domain=config.domain or f"{orc.manifest.benchmark_id} task {orc.manifest.task_id}",
        variables=orc.variables,
        bounds=orc.bounds,
        data_table=(_render_graph_table(state) if orc.kind == "graph"
                    else _render_equation_table(state, orc)) if state.dataset else "(no data yet)",
        memory_text=state.memory.summary_text() if config.memory_enabled else "(memory disabled)",
        phase=state.phase,
        iteration=state.iteration,
        budget_total=orc.budget,
        budget_remaining=orc.remaining,
        current_hypothesis=best.text if best else "(none yet)",
        best_equation=(f"{best.text} (score={best.score:.4g})" if best else "(none yet)"),
        confidence=state.confidence,
        ranked=tuple((f.text, f.skeleton, f.score, f.complexity) for f in ranked),
        failed_skeletons=state.memory.failed_skeletons() if config.memory_enabled else frozenset(),
        ensemble_text=state.ensemble_text,
        max_experiments=config.max_experiments_per_iter,
        intervention_space=orc.intervention_space() if orc.kind == "graph" else (),
    )


def _ranked_fits(state: DiscoveryState) -> list:
    return sorted(state.fits.values(), key=lambda f: (f.score, f.complexity, f.text))


# --- acquisition ------------------------------------------------------------------------


def _candidate_points(regions, orc, n_each: int, rng) -> list:
    """Uniform draws inside each region; unnamed oracle variables sample their
    full bounds so every dimension keeps getting exercised."""
    points = []
    for region in regions:
        for _ in range(n_each):
            x = {}
            for name in orc.variables:
                lo, hi = region.bounds.get(name, orc.bounds[name])
                x[name] = float(rng.uniform(lo, hi))
            points.append(x)
    return points


def _encode_equation(points, orc) -> np.ndarray:
    arr = np.empty((len(points), len(orc.variables)))
    for i, x in enumerate(points):
        for j, name in enumerate(orc.variables):
            lo, hi = orc.bounds[name]
            width = hi - lo
            arr[i, j] = (float(x[name]) - lo) / width if width > 0 else 0.0
    return arr


def _encode_interventions(ivs) -> np.ndarray:
    arr = np.zeros((len(ivs), len(grn.DYNAMIC_NODES) + 1))
    for i, iv in enumerate(ivs):
        for node, factor in iv.knocks:
            arr[i, grn.DYNAMIC_NODES.index(node)] = math.log(max(factor, 1e-3)) / math.log(grn.KNOCK_UP_DEFAULT)
        arr[i, -1] = -1.0 if iv.signal_level is None else iv.signal_level / 4.0
    return arr


def _greedy_max_min(encoded: np.ndarray, order, n: int, refs: np.ndarray | None) -> list:
    """Greedy max-min diversification over the candidate indices in ``order``."""
    chosen: list = []
    pool = list(order)
    ref_rows = [] if refs is None or refs.size == 0 else [refs]

    def min_dist(idx):
        rows = ref_rows + [encoded[chosen]] if chosen else ref_rows
        if not rows:
            return math.inf
        stacked = np.vstack(rows)
        return float(np.min(np.linalg.norm(stacked - encoded[idx], axis=1)))

    while pool and len(chosen) < n:
        if not chosen and (refs is None or refs.size == 0):
            pick = pool[0]
        else:
            dists = [min_dist(i) for i in pool]
            pick = pool[int(np.argmax(dists))]
        chosen.append(pick)
        pool.remove(pick)
    return chosen


def _score_then_select(encoded, scores, n, refs=None) -> list:
    scores = np.asarray(scores, dtype=float)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    q = max(n, int(math.ceil(len(order) * TOP_QUARTILE)))
    return _greedy_max_min(encoded, order[:q], n, refs)


def acquire(state: DiscoveryState, mode: AcquisitionMode, regions, n: int, rng,
            orc, config: EngineConfig) -> list:
    """Select n experiments: disagreement-scored in Disambiguate, bootstrap
    predictive spread in Refine, max-min space-filling when fewer than two
    usable hypotheses exist."""
    if orc.kind == "graph":
        candidates = []
        for region in regions:
            candidates.extend(region.interventions)
        if not candidates:
            candidates = list(orc.intervention_space())
        seen = set()
        unique = []
        for iv in candidates:
            key = json.dumps(iv.to_wire())
            if key not in seen:
                seen.add(key)
                unique.append(iv)
        candidates = unique
        encoded = _encode_interventions(candidates)
        refs = _encode_interventions([rec.input for rec in state.dataset])
    else:
        regions = [r for r in regions if all(hi > lo for lo, hi in r.bounds.values())]
        if not regions:
            raise EmptyRegion("every proposed region clamps to measure zero")
        candidates = _candidate_points(regions, orc, config.candidates_per_region, rng)
        encoded = _encode_equation(candidates, orc)
        refs = _encode_equation([rec.input for rec in state.dataset], orc)

    fits = list(state.fits.values())
    if mode is AcquisitionMode.REFINE and len(state.bootstrap_models) >= 2:
        scores = _refine_scores(candidates, state.bootstrap_models, orc.kind)
        picked = _score_then_select(encoded, scores, n)
    elif mode is AcquisitionMode.DISAMBIGUATE and len(fits) >= 2:
        scores = _disagreement_scores(candidates, fits, orc.kind)
        if np.all(np.asarray(scores) <= 0):
            picked = _greedy_max_min(encoded, list(range(len(candidates))), n, refs)
        else:
            picked = _score_then_select(encoded, scores, n)
    else:
        picked = _greedy_max_min(encoded, list(range(len(candidates))), n, refs)
    return [candidates[i] for i in picked]


def _disagreement_scores(candidates, fits, kind) -> np.ndarray:
    if kind == "graph":
        preds = []
        for fit in fits:
            states = fitkit.predict_interventions(fit.parsed, fit.params, candidates)
            preds.append(states)
        stacked = np.stack(preds)                      # (K, M, nodes)
        logs = np.log(np.maximum(stacked, 0.0) + _LOG_EPS)
        usable = np.isfinite(logs).all(axis=2)         # (K, M)
        scores = np.zeros(len(candidates))
        for m in range(len(candidates)):
            rows = logs[usable[:, m], m, :]
            if rows.shape[0] >= 2:
                scores[m] = float(np.mean(np.var(rows, axis=0)))
        return scores
    X = [c for c in candidates]
    preds = np.stack([fitkit.predict_rows(f.parsed, f.params, X) for f in fits])  # (K, M)
    with np.errstate(all="ignore"):
        logs = np.where(preds > 0, np.log10(np.maximum(preds, 1e-300)), np.nan)
    scores = np.zeros(len(candidates))
    for m in range(preds.shape[1]):
        col = logs[:, m]
        col = col[np.isfinite(col)]
        if col.size >= 2:
            scores[m] = float(np.std(col))
    return scores


def _refine_scores(candidates, models, kind) -> np.ndarray:
    rows = []
    for predict in models:
        try:
            rows.append(np.asarray(predict(candidates), dtype=float).reshape(len(candidates), -1))
        except SciLoopError:
            continue
    if len(rows) < 2:
        return np.zeros(len(candidates))
    stacked = np.stack(rows)                           # (B, M, width)
    if kind == "graph":
        with np.errstate(all="ignore"):
            stacked = np.log(np.maximum(stacked, 0.0) + _LOG_EPS)
    stacked = np.where(np.isfinite(stacked), stacked, np.nan)
    usable = np.sum(~np.isnan(stacked), axis=0)        # per (candidate, width)
    mean = np.nansum(stacked, axis=0) / np.maximum(usable, 1)
    var = np.nansum((stacked - mean) ** 2, axis=0) / np.maximum(usable, 1)
    spread = np.where(usable >= 2, np.sqrt(var), 0.0).mean(axis=1)
    return np.where(np.isfinite(spread), spread, 0.0)


# --- refinement -------------------------------------------------------------------------


def _pool_candidates(state: DiscoveryState, config: EngineConfig, kind: str) -> dict:
    """Skeleton -> (text, parsed) drawn from the ensemble, the proposal, and the
    non-failed scoreboard; capped to the best-ranked FINAL_POOL_CAP entries."""
    failed = state.memory.failed_skeletons() if config.memory_enabled else frozenset()
    pool: dict = {}

    def add_text(text, parsed=None):
        try:
            if kind == "graph":
                graph = parsed if isinstance(parsed, grn.SignedGraph) else proposer.parse_graph_text(text)
                skeleton = graph.canonical_string()
                if skeleton not in failed:
                    pool.setdefault(skeleton, (skeleton, graph))
            else:
                hypothesis = parsed if isinstance(parsed, exprlang.ParsedHypothesis) else exprlang.parse(text)
                skeleton = exprlang.skeletonize(hypothesis).canonical_form
                if skeleton not in failed:
                    pool.setdefault(skeleton, (exprlang.print_hypothesis(hypothesis), hypothesis))
        except SciLoopError:
            return

    if state.hypotheses is not None:
        for rep in state.hypotheses.representatives:
            add_text(rep.text, rep.parsed)
    if state.proposal is not None:
        add_text(state.proposal.primary_hypothesis)
        for alt in state.proposal.alternates:
            add_text(alt)
    for skeleton, fit in state.fits.items():
        if skeleton not in failed:
            pool.setdefault(skeleton, (fit.text, fit.parsed))

    if len(pool) > config.final_pool_cap:
        def rank_key(item):
            skeleton = item[0]
            existing = state.fits.get(skeleton)
            return (existing.score if existing else math.inf, skeleton)
        pool = dict(sorted(pool.items(), key=rank_key)[:config.final_pool_cap])
    return pool


def refine_pool(state: DiscoveryState, orc, config: EngineConfig, seed_tag: int,
                trace: RunTrace | None = None) -> None:
    """Fit every pool candidate on the current dataset; update state.fits."""
    data = observed_pairs(state, orc)
    if not data:
        return
    pool = _pool_candidates(state, config, orc.kind)
    for skeleton, (text, parsed) in pool.items():
        previous = state.fits.get(skeleton)
        try:
            if orc.kind == "graph":
                init = previous.params if previous and previous.quality == 2 else None
                result = fitkit.fit_graph(parsed, data, init=init)
                fit = PoolFit(text, skeleton, parsed, result.dynamics, result.loss,
                              len(parsed.edges), len(data), 2, result.converged)
            else:
                extra = [previous.params] if previous else []
                result = fitkit.fit_constants(parsed, data,
                                              seed=_mix(orc.manifest.seed, "refit", seed_tag),
                                              extra_inits=extra)
                fit = PoolFit(text, skeleton, parsed, result.fitted_constants,
                              result.validation_rmsle, len(parsed.free_constants),
                              len(data), 2, result.converged)
        except SciLoopError as exc:
            if trace is not None:
                trace.log({"type": "note", "event": "fit-skipped", "hypothesis": text,
                           "error": str(exc)})
            continue
        state.fits[skeleton] = fit
        if trace is not None:
            trace.log({"type": "fit", "iteration": state.iteration, "hypothesis": text,
                       "score": fit.score, "complexity": fit.complexity,
                       "converged": fit.converged, "n_data": len(data)})
    if config.memory_enabled:
        _update_scoreboard(state, config)


def _merge_quick_fits(state: DiscoveryState, orc) -> None:
    if state.hypotheses is None:
        return
    n = len(state.dataset)
    for rep in state.hypotheses.representatives:
        if rep.fit is None or not isinstance(rep.parsed, exprlang.ParsedHypothesis):
            continue
        existing = state.fits.get(rep.skeleton)
        if existing is not None and (existing.data_size, existing.quality) >= (n, 1):
            continue
        state.fits[rep.skeleton] = PoolFit(
            exprlang.print_hypothesis(rep.parsed), rep.skeleton, rep.parsed,
            rep.fit.fitted_constants, rep.fit.validation_rmsle,
            len(rep.parsed.free_constants), n, 1)


def _update_scoreboard(state: DiscoveryState, config: EngineConfig) -> None:
    full_fits = {k: f for k, f in state.fits.items() if f.quality == 2}
    if not full_fits:
        return
    scores = np.asarray([f.score for f in full_fits.values()])
    finite = scores[np.isfinite(scores)]
    median = float(np.median(finite)) if finite.size else math.inf
    for skeleton, fit in full_fits.items():
        entry = state.memory.scoreboard.setdefault(skeleton, ScoreboardEntry(text=fit.text))
        entry.text = fit.text
        entry.evidence += 1
        entry.last_score = fit.score
        if entry.status == "failed":
            continue
        bad = not math.isfinite(fit.score) or (math.isfinite(median) and fit.score > 10 * median > 0)
        entry.consecutive_bad = entry.consecutive_bad + 1 if bad else 0
        if entry.consecutive_bad >= 2:
            entry.status = "failed"
            state.memory.negative_evidence.append((skeleton, len(state.dataset)))
        elif entry.status != "validated":
            entry.status = "uncertain"
    state.memory.refinement_history.append(
        {"n_data": len(state.dataset), "pool": len(full_fits), "median_score": median})


def _confidence_gate(state: DiscoveryState, orc, config: EngineConfig,
                     trace: RunTrace) -> None:
    ranked = _ranked_fits(state)
    full = [f for f in ranked if f.quality == 2]
    if not full:
        return
    best = full[0]
    data = observed_pairs(state, orc)
    seed = _mix(orc.manifest.seed, "bootstrap", state.iteration)
    if orc.kind == "graph":
        def fitter(subset):
            result = fitkit.fit_graph(best.parsed, subset, init=best.params)

            def predict(ivs):
                return fitkit.predict_interventions(best.parsed, result.dynamics, ivs).ravel()
            return predict
    else:
        def fitter(subset):
            result = fitkit.fit_constants(best.parsed, subset, seed=seed, n_starts=2,
                                          extra_inits=[best.params])

            def predict(rows):
                return fitkit.predict_rows(best.parsed, result.fitted_constants, rows)
            return predict
    try:
        report = fitkit.bootstrap_confidence(fitter, data, n_resamples=config.n_bootstrap,
                                             seed=seed)
    except SciLoopError as exc:
        trace.log({"type": "note", "event": "bootstrap-skipped", "error": str(exc)})
        return
    state.confidence = report.confidence
    state.bootstrap_models = report.models
    entry = state.memory.scoreboard.get(best.skeleton)
    if config.memory_enabled and entry is not None and entry.status != "failed":
        entry.status = "validated" if report.confidence >= config.tau_conf else "uncertain"
    state.memory.best = {"text": best.text, "skeleton": best.skeleton, "score": best.score,
                         "confidence": report.confidence}
    trace.log({"type": "confidence", "iteration": state.iteration,
               "confidence": report.confidence, "hypothesis": best.text,
               "n_failed_resamples": report.n_failed})


def _mix(seed: int, tag: str, k: int) -> int:
    return int(stream(seed, tag, k).integers(0, 2**63 - 1))


# --- the loop -------------------------------------------------------------------------


def _proposer_with_fallback(state, prop, config, orc, trace):
    """Wrap proposer calls so remote failures degrade to the library proposer."""
    def degrade(exc):
        if state.fallback is None:
            if not config.fallback_library:
                raise exc
            state.fallback = proposer.LibraryProposer(orc.kind, config.fallback_library,
                                                      seed=orc.manifest.seed)
        trace.log({"type": "note", "event": "proposer-degraded", "error": str(exc)})
        return state.fallback
    return degrade


def step(state: DiscoveryState, orc, prop, config: EngineConfig,
         trace: RunTrace) -> DiscoveryState:
    """One full loop iteration; mutates and returns the state."""
    state.iteration += 1
    degrade = _proposer_with_fallback(state, prop, config, orc, trace)
    data = observed_pairs(state, orc) if orc.kind == "equation" else \
        [(rec.input, rec.observation) for rec in state.dataset]
    summary = build_summary(state, orc, config)

    grow_seed = _mix(orc.manifest.seed, "grow", state.iteration)
    try:
        dist = ensemble.grow(prop, summary,
                             data if orc.kind == "equation" else [],
                             orc.variables, seed=grow_seed, K=config.ensemble_base,
                             K_max=config.ensemble_cap, tau_H=config.entropy_gate)
    except ProposerFailure as exc:
        dist = ensemble.grow(degrade(exc), summary,
                             data if orc.kind == "equation" else [],
                             orc.variables, seed=grow_seed, K=config.ensemble_base,
                             K_max=config.ensemble_cap, tau_H=config.entropy_gate)
    state.hypotheses = dist
    state.ensemble_text = ensemble.summary_text(dist)
    _merge_quick_fits(state, orc)

    summary = build_summary(state, orc, config)
    try:
        prop_used = prop
        proposal = prop.synthesize_proposal(summary, state.ensemble_text)
    except ProposerFailure as exc:
        prop_used = degrade(exc)
        proposal = prop_used.synthesize_proposal(summary, state.ensemble_text)
    state.proposal = proposal
    trace.log({"type": "proposal", "iteration": state.iteration,
               "primary": proposal.primary_hypothesis,
               "alternates": list(proposal.alternates),
               "n_regions": len(proposal.search_regions),
               "confidence": proposal.confidence})

    mode = select_mode(state.confidence, config.tau_conf) if config.gating_enabled \
        else AcquisitionMode.DISAMBIGUATE
    mode_switched = mode is AcquisitionMode.REFINE and state.phase != "refine"
    trace.log({"type": "mode", "iteration": state.iteration, "mode": mode.value,
               "confidence": state.confidence})

    requested = sum(max(0, r.n_experiments) for r in proposal.search_regions)
    n = max(1, min(requested or config.max_experiments_per_iter, orc.remaining))
    rng = stream(orc.manifest.seed, "acquire", state.iteration)
    points = acquire(state, mode, proposal.search_regions, n, rng, orc, config)

    for x in points:
        if orc.remaining <= 0:
            break
        observation = orc.query(x)
        record = orc.query_log[-1]
        state.dataset.append(record)
        trace.log({"type": "query", "iteration": state.iteration, "index": record.index,
                   "input": _wire_input(x), "observation": _wire_observation(observation)})

    refine_now = (state.iteration % config.refine_cadence == 0) or mode_switched \
        or orc.remaining == 0
    if refine_now and state.dataset:
        refine_pool(state, orc, config, state.iteration, trace)
        if config.gating_enabled:
            _confidence_gate(state, orc, config, trace)

    state.phase = "finalize" if orc.remaining == 0 else \
        ("refine" if mode is AcquisitionMode.REFINE else "disambiguate")
    return state


def _wire_input(x) -> object:
    if isinstance(x, grn.Intervention):
        return x.to_wire()
    return {k: float(v) for k, v in sorted(x.items())}


def _wire_observation(obs) -> object:
    if isinstance(obs, grn.GrnObservation):
        return {k: obs.expression[k] for k in grn.DYNAMIC_NODES}
    if hasattr(obs, "r0"):
        return {"r0": obs.r0, "aux": dict(sorted(obs.aux.items()))}
    return float(obs)


def final_select(pool, arbiter=None, trace: RunTrace | None = None) -> FinalMechanism:
    """Deterministic arbitration: lowest score, parsimony on near-ties, then
    lexicographic canonical text. An arbiter may pick any pool member instead;
    a non-member answer falls back to the deterministic rule."""
    if not pool:
        raise EmptyPool("no fitted candidates to select from")
    ordered = sorted(pool, key=lambda f: (f.score, f.complexity, f.text))
    best_score = ordered[0].score
    tie = max(_TIE_ABS, _TIE_REL * abs(best_score))
    group = [f for f in ordered if f.score <= best_score + tie]
    winner = sorted(group, key=lambda f: (f.complexity, f.text))[0]
    if arbiter is not None:
        lines = ["Final candidates (text | score | complexity):"]
        for i, f in enumerate(pool):
            lines.append(f"{i}: {f.text} | {f.score:.6g} | {f.complexity}")
        lines.append('Pick the most scientifically plausible candidate consistent with the '
                     'data. Return JSON: {"choice": <index>}')
        try:
            reply = arbiter.complete("\n".join(lines))
            choice = int(proposer.extract_json(reply).get("choice", -1))
            if 0 <= choice < len(pool):
                winner = pool[choice]
            elif trace is not None:
                trace.log({"type": "note", "event": "arbiter-nonmember", "choice": choice})
        except (SciLoopError, ValueError, TypeError) as exc:
            if trace is not None:
                trace.log({"type": "note", "event": "arbiter-failed", "error": str(exc)})
    kind = "graph" if isinstance(winner.parsed, grn.SignedGraph) else "equation"
    return FinalMechanism(kind, winner.text, winner.skeleton, winner.score,
                          winner.params, winner.parsed)


def run(manifest: oracle.TaskManifest, prop, config: EngineConfig | None = None):
    """Open the oracle, loop until exhaustion, finish with a full fitting pass
    and final selection. Returns (FinalMechanism, RunTrace)."""
    config = config or EngineConfig()
    orc = oracle.open_task(manifest)
    trace = RunTrace()
    trace.log({"type": "note", "event": "run-start", "task": manifest.to_dict()})
    state = DiscoveryState()
    while orc.remaining > 0:
        state = step(state, orc, prop, config, trace)
    # final fitting pass over every surviving structure on the full dataset
    refine_pool(state, orc, config, seed_tag=10_000 + state.iteration, trace=trace)
    pool = [f for f in _ranked_fits(state) if f.quality == 2]
    final = final_select(pool, arbiter=config.arbiter, trace=trace)
    trace.log({"type": "final", "mechanism": final.text, "skeleton": final.skeleton,
               "score": final.score, "iterations": state.iteration,
               "n_queries": len(orc.query_log)})
    return final, trace
