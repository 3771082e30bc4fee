"""Benchmark runner: manifest generation, method execution, logging, reporting.

Methods: the discovery engine with remote or library proposers
(autoscilab-remote / autoscilab-library), the engine with memory and
confidence gating disabled (bed), and the non-engine baselines random,
uncertainty, and bo. Each (task, seed) writes one line-delimited run log;
a single writer assembles the results table after all workers finish.
Wall-clock timings go to a sidecar file so the results table stays
byte-stable across repeated identical runs.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import chem, engine, ensemble, exprlang, fitkit, grn, metrics, oracle, proposer
from ._seeding import stream
from .errors import EmptyResults, MalformedManifest, SciLoopError, UnknownBenchmark

METHODS = ("autoscilab-remote", "autoscilab-library", "random", "uncertainty", "bed", "bo")
DEFAULT_BUDGETS = {"chem": 60, "grn": 20, "equation-plugin": 20}
BUDGET_SWEEPS = {"chem": (20, 40, 60, 80, 100), "grn": (10, 20, 50)}
EVAL_POINTS = 256
BASELINE_BATCH = 4

RESULT_COLUMNS = (
    "benchmark", "task_id", "family", "tier", "variant", "method", "seed", "budget",
    "noise_sigma", "status", "error", "rmsle", "exact", "symbolic", "precision",
    "recall", "f1", "sign_accuracy", "exact_graph", "motif_match", "n_queries",
    "final_text",
)


@dataclass(frozen=True)
class RunConfig:
    method: str
    manifest_path: str
    output_dir: str
    seeds: tuple = ()              # optional filter; empty means all manifest seeds
    budget_override: int | None = None
    noise_override: float | None = None
    proposer_config: proposer.ProposerConfig = field(default_factory=proposer.ProposerConfig)
    workers: int = 1
    laws_path: str = ""

    def validate(self):
        if self.method not in METHODS:
            raise UnknownBenchmark(f"method {self.method!r} not in {METHODS}")


# --- manifests -------------------------------------------------------------------


def generate_manifests(benchmark: str, tiers=None, n_seeds: int = 3,
                       budget: int | None = None, noise: float = 0.0,
                       laws: dict | None = None) -> list:
    """Enumerate task classes x seeds in deterministic catalog order."""
    tiers = tuple(tiers) if tiers else ("easy", "medium", "hard")
    budget = int(budget or DEFAULT_BUDGETS.get(benchmark, 20))
    seeds = range(n_seeds)
    manifests = []
    if benchmark == "chem":
        for desc in chem.catalog():
            if desc.tier not in tiers:
                continue
            for seed in seeds:
                manifests.append(oracle.TaskManifest("chem", desc.family, desc.family,
                                                     desc.tier, 0, seed, budget, noise))
    elif benchmark == "grn":
        for desc in grn.motif_catalog():
            if desc.difficulty not in tiers:
                continue
            for seed in seeds:
                manifests.append(oracle.TaskManifest(
                    "grn", grn.task_id_for(desc.family, desc.variant, desc.difficulty),
                    desc.family, desc.difficulty, desc.variant, seed, budget, noise))
    elif benchmark == "equation-plugin":
        if not laws:
            raise MalformedManifest("equation-plugin manifests need a laws file")
        for law in laws["laws"]:
            difficulty = law.get("difficulty", "easy")
            if difficulty not in tiers:
                continue
            for seed in seeds:
                manifests.append(oracle.TaskManifest(
                    "equation-plugin", law["task_id"], law.get("family", law["task_id"]),
                    difficulty, int(law.get("variant", 0)), seed, budget, noise))
    else:
        raise UnknownBenchmark(f"unknown benchmark {benchmark!r}")
    return manifests


def write_manifests(manifests, path):
    with open(path, "w") as fh:
        for m in manifests:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")


def read_manifests(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(oracle.TaskManifest.from_dict(json.loads(line)))
    return out


def load_laws(path) -> dict:
    with open(path) as fh:
        laws = json.load(fh)
    register_laws(laws)
    return laws


def register_laws(laws: dict):
    for law in laws.get("laws", ()):
        oracle.register_equation_law(law["task_id"], law["expression"],
                                     law["constants"],
                                     {k: tuple(v) for k, v in law["bounds"].items()},
                                     tuple(law.get("library", ())))


# --- libraries -------------------------------------------------------------------


def _generic_equation_library(variables) -> tuple:
    forms = ["C0"]
    for v in sorted(variables):
        forms += [f"C0 * {v}", f"C0 * {v}**C1", f"C0 * exp(C1 * {v})",
                  f"C0 * {v} / (C1 + {v})", f"C0 + C1 * {v}"]
    ordered = sorted(variables)
    if len(ordered) > 1:
        forms.append("C0 * " + " * ".join(ordered))
    return tuple(forms)


def method_library(manifest: oracle.TaskManifest) -> tuple:
    if manifest.benchmark_id == "chem":
        return chem.library_expressions()
    if manifest.benchmark_id == "grn":
        return grn.catalog_graphs()
    law = oracle.registered_law(manifest.task_id)
    return law.library or _generic_equation_library(law.expression.variables_used)


# --- evaluation -------------------------------------------------------------------


def _eval_rows(bounds: dict, variables, seed: int, task_id: str) -> list:
    """Held-out evaluation grid; decade-spanning dimensions sample log-uniformly."""
    rng = stream(seed, "eval-grid", task_id)
    rows = []
    for _ in range(EVAL_POINTS):
        x = {}
        for name in variables:
            lo, hi = bounds[name]
            if lo > 0 and hi / lo >= 30:
                x[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            elif lo == 0 and hi > 0:
                x[name] = float(np.exp(rng.uniform(np.log(hi * 1e-4), np.log(hi))))
            else:
                x[name] = float(rng.uniform(lo, hi))
        rows.append(x)
    return rows


def _truth_for(manifest: oracle.TaskManifest):
    """Ground-truth expression and clean response function (evaluation only)."""
    if manifest.benchmark_id == "chem":
        spec = chem.instantiate(manifest.family_or_motif, manifest.difficulty, manifest.seed)
        return (exprlang.parse(chem.truth_expression(spec)),
                lambda rows: np.asarray([chem.clean_rate(spec, x) for x in rows]))
    law = oracle.registered_law(manifest.task_id)
    inline = exprlang.parse(_inline_constants(law.expression, law.constants))
    return inline, (lambda rows: fitkit.predict_rows(law.expression, law.constants, rows))


def _inline_constants(h: exprlang.ParsedHypothesis, constants: dict) -> str:
    def rewrite(node):
        if node.kind == "const":
            return exprlang.ExprNode("num", value=float(constants[node.name]))
        if node.children:
            return exprlang.ExprNode(node.kind, name=node.name,
                                     children=tuple(rewrite(c) for c in node.children))
        return node

    return exprlang.to_text(rewrite(h.ast))


def evaluate_equation(manifest: oracle.TaskManifest, final: engine.FinalMechanism,
                      judge=None) -> metrics.EquationScore:
    truth_parsed, truth_values = _truth_for(manifest)
    if manifest.benchmark_id == "chem":
        bounds, variables = chem.VARIABLE_BOUNDS, chem.ASSAY_VARIABLES
    else:
        law = oracle.registered_law(manifest.task_id)
        bounds, variables = law.bounds, tuple(sorted(law.expression.variables_used))
    rows = _eval_rows(bounds, variables, manifest.seed, manifest.task_id)
    targets = np.asarray(truth_values(rows), dtype=float)
    preds = np.asarray(final.predict_rows(rows), dtype=float)
    symbolic = metrics.symbolic_accuracy(final.parsed, truth_parsed, judge=judge)
    return metrics.equation_score(preds, targets, symbolic)


def evaluate_graph(manifest: oracle.TaskManifest, final: engine.FinalMechanism) -> metrics.GraphScore:
    family, variant, difficulty = grn.parse_task_id(manifest.task_id)
    truth_graph = grn.catalog_graph(family, variant)
    return metrics.graph_metrics(final.parsed, truth_graph,
                                 motif_graphs=grn.family_graphs(family))


# --- baseline methods ----------------------------------------------------------------


def _library_pool_fits(manifest, orc, data, library, seed) -> list:
    """Fit every library member on the full dataset (the final fit used by the
    non-engine baselines)."""
    pool = []
    seen = set()
    for item in library:
        try:
            if orc.kind == "graph":
                graph = item if isinstance(item, grn.SignedGraph) else proposer.parse_graph_text(item)
                skeleton = graph.canonical_string()
                if skeleton in seen:
                    continue
                seen.add(skeleton)
                result = fitkit.fit_graph(graph, data)
                pool.append(engine.PoolFit(skeleton, skeleton, graph, result.dynamics,
                                           result.loss, len(graph.edges), len(data), 2,
                                           result.converged))
            else:
                parsed = exprlang.parse(item)
                skeleton = exprlang.skeletonize(parsed).canonical_form
                if skeleton in seen:
                    continue
                seen.add(skeleton)
                result = fitkit.fit_constants(parsed, data, seed=seed)
                pool.append(engine.PoolFit(exprlang.print_hypothesis(parsed), skeleton,
                                           parsed, result.fitted_constants,
                                           result.validation_rmsle,
                                           len(parsed.free_constants), len(data), 2,
                                           result.converged))
        except SciLoopError:
            continue
    return pool


def _random_baseline(manifest, orc, library, trace) -> engine.FinalMechanism:
    rng = stream(manifest.seed, "random-method", manifest.task_id)
    if orc.kind == "graph":
        space = list(orc.intervention_space())
        while orc.remaining > 0:
            iv = space[int(rng.integers(0, len(space)))]
            _log_query(trace, orc, orc.query(iv), iv)
    else:
        while orc.remaining > 0:
            x = {name: float(rng.uniform(*orc.bounds[name])) for name in orc.variables}
            _log_query(trace, orc, orc.query(x), x)
    data = _pairs(orc)
    pool = _library_pool_fits(manifest, orc, data, library, manifest.seed)
    return engine.final_select(pool, trace=trace)


def _uncertainty_baseline(manifest, orc, library, trace) -> engine.FinalMechanism:
    """Greedy batches maximizing bootstrap predictive spread of the running
    best library fit."""
    rng = stream(manifest.seed, "uncertainty-method", manifest.task_id)
    best = None
    models = ()
    while orc.remaining > 0:
        n = min(BASELINE_BATCH, orc.remaining)
        if orc.kind == "graph":
            candidates = list(orc.intervention_space())
            encoded = engine._encode_interventions(candidates)
            refs = engine._encode_interventions([r.input for r in orc.query_log])
        else:
            candidates = [{name: float(rng.uniform(*orc.bounds[name]))
                           for name in orc.variables} for _ in range(EVAL_POINTS)]
            encoded = engine._encode_equation(candidates, orc)
            refs = engine._encode_equation([r.input for r in orc.query_log], orc)
        if len(models) >= 2:
            scores = engine._refine_scores(candidates, models, orc.kind)
            picked = engine._score_then_select(encoded, scores, n)
        else:
            picked = engine._greedy_max_min(encoded, list(range(len(candidates))), n, refs)
        for idx in picked:
            if orc.remaining <= 0:
                break
            _log_query(trace, orc, orc.query(candidates[idx]), candidates[idx])
        data = _pairs(orc)
        best = _running_best(orc, data, library, manifest.seed, best)
        models = _bootstrap_models(orc, data, best, manifest.seed) if best else ()
    pool = _library_pool_fits(manifest, orc, _pairs(orc), library, manifest.seed)
    return engine.final_select(pool, trace=trace)


def _running_best(orc, data, library, seed, previous):
    if len(data) < 2:
        return previous
    pool = []
    for item in library:
        try:
            if orc.kind == "graph":
                graph = item if isinstance(item, grn.SignedGraph) else proposer.parse_graph_text(item)
                result = fitkit.fit_graph(graph, data, max_iter=120)
                pool.append((result.loss, len(graph.edges), graph.canonical_string(),
                             graph, result.dynamics))
            else:
                parsed = exprlang.parse(item)
                result = fitkit.fit_constants(parsed, data, seed=seed, n_starts=2, max_iter=40)
                pool.append((result.validation_rmsle, len(parsed.free_constants),
                             exprlang.print_hypothesis(parsed), parsed, result.fitted_constants))
        except SciLoopError:
            continue
    if not pool:
        return previous
    pool.sort(key=lambda t: (t[0], t[1], t[2]))
    _, _, text, parsed, params = pool[0]
    return (parsed, params)


def _bootstrap_models(orc, data, best, seed) -> tuple:
    parsed, params = best
    if len(data) < 2:
        return ()
    if orc.kind == "graph":
        def fitter(subset):
            result = fitkit.fit_graph(parsed, subset, init=params, max_iter=120)

            def predict(ivs):
                return fitkit.predict_interventions(parsed, result.dynamics, ivs).ravel()
            return predict
    else:
        def fitter(subset):
            result = fitkit.fit_constants(parsed, subset, seed=seed, n_starts=2,
                                          max_iter=40, extra_inits=[params])

            def predict(rows):
                return fitkit.predict_rows(parsed, result.fitted_constants, rows)
            return predict
    try:
        report = fitkit.bootstrap_confidence(fitter, data, n_resamples=8, seed=seed)
    except SciLoopError:
        return ()
    return report.models


def _gp_log_marginal(K, y):
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -math.inf, None
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    return (-0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum())
            - 0.5 * len(y) * math.log(2 * math.pi)), (L, alpha)


def _bo_baseline(manifest, orc, library, trace) -> engine.FinalMechanism:
    """Stationary squared-exponential surrogate on log1p observations with
    maximum-posterior-variance acquisition, then a final library fit."""
    rng = stream(manifest.seed, "bo-method", manifest.task_id)

    def encode(items):
        if orc.kind == "graph":
            return engine._encode_interventions(items)
        return engine._encode_equation(items, orc)

    def draw_candidates():
        if orc.kind == "graph":
            return list(orc.intervention_space())
        return [{name: float(rng.uniform(*orc.bounds[name])) for name in orc.variables}
                for _ in range(EVAL_POINTS)]

    while orc.remaining > 0:
        n = min(BASELINE_BATCH, orc.remaining)
        candidates = draw_candidates()
        encoded = encode(candidates)
        observed = orc.query_log
        if len(observed) >= 3:
            X = encode([r.input for r in observed])
            if orc.kind == "graph":
                y = np.asarray([np.log1p(max(sum(r.observation.expression.values()), 0.0))
                                for r in observed])
            else:
                y = np.asarray([np.log1p(max(orc.response_value(r.observation), -0.999))
                                for r in observed])
            y_centered = y - y.mean()
            var_y = max(float(np.var(y_centered)), 1e-12)
            best_ll, best_model = -math.inf, None
            for ls in (0.1, 0.3, 1.0):
                for sf in (0.5 * var_y, var_y, 2.0 * var_y):
                    sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
                    K = sf * np.exp(-0.5 * sq / ls**2) + (1e-6 * sf + 1e-10) * np.eye(len(X))
                    ll, model = _gp_log_marginal(K, y_centered)
                    if ll > best_ll:
                        best_ll, best_model, best_hp = ll, model, (ls, sf)
            if best_model is not None:
                L, alpha = best_model
                ls, sf = best_hp
                sq = ((encoded[:, None, :] - X[None, :, :]) ** 2).sum(-1)
                Ks = sf * np.exp(-0.5 * sq / ls**2)
                v = np.linalg.solve(L, Ks.T)
                variance = np.maximum(sf - (v**2).sum(0), 0.0)
                picked = engine._score_then_select(encoded, variance, n)
            else:
                picked = list(range(n))
        else:
            refs = encode([r.input for r in observed]) if observed else np.zeros((0, encoded.shape[1]))
            picked = engine._greedy_max_min(encoded, list(range(len(candidates))), n, refs)
        for idx in picked:
            if orc.remaining <= 0:
                break
            _log_query(trace, orc, orc.query(candidates[idx]), candidates[idx])
    pool = _library_pool_fits(manifest, orc, _pairs(orc), library, manifest.seed)
    return engine.final_select(pool, trace=trace)


def _pairs(orc) -> list:
    return [(r.input, orc.response_value(r.observation)) for r in orc.query_log]


def _log_query(trace, orc, observation, x):
    record = orc.query_log[-1]
    trace.log({"type": "query", "index": record.index, "input": engine._wire_input(x),
               "observation": engine._wire_observation(observation)})


# --- task execution -------------------------------------------------------------------


def _engine_config_for(method: str, manifest, library) -> engine.EngineConfig:
    flags = {"autoscilab-remote": (True, True), "autoscilab-library": (True, True),
             "bed": (False, False)}
    memory_on, gating_on = flags[method]
    return engine.EngineConfig(memory_enabled=memory_on, gating_enabled=gating_on,
                               fallback_library=tuple(library),
                               domain=f"{manifest.benchmark_id} benchmark, "
                                      f"task {manifest.task_id}")


def run_task(manifest: oracle.TaskManifest, method: str,
             proposer_config: proposer.ProposerConfig | None = None,
             laws: dict | None = None):
    """Execute one (task, seed) under a method; returns (row, runlog_text)."""
    if laws:
        register_laws(laws)
    library = method_library(manifest)
    trace = engine.RunTrace()
    trace.log({"type": "note", "event": "task-start", "method": method,
               "task": manifest.to_dict()})
    row = {c: "" for c in RESULT_COLUMNS}
    row.update(benchmark=manifest.benchmark_id, task_id=manifest.task_id,
               family=manifest.family_or_motif, tier=manifest.difficulty,
               variant=manifest.variant, method=method, seed=manifest.seed,
               budget=manifest.budget, noise_sigma=manifest.noise_sigma)
    try:
        if method in ("autoscilab-library", "autoscilab-remote", "bed"):
            config = _engine_config_for(method, manifest, library)
            if method == "autoscilab-remote":
                pconf = proposer_config or proposer.ProposerConfig()
                prop = proposer.RemoteProposer(replace(pconf, kind="remote-chat"),
                                               log=trace.log)
            else:
                prop = proposer.LibraryProposer(
                    "graph" if manifest.benchmark_id == "grn" else "equation",
                    library, seed=manifest.seed)
            final, run_trace = engine.run(manifest, prop, config)
            trace.records.extend(run_trace.records)
            n_queries = next((r["n_queries"] for r in reversed(run_trace.records)
                              if r.get("type") == "final"), manifest.budget)
        else:
            orc = oracle.open_task(manifest)
            runner = {"random": _random_baseline, "uncertainty": _uncertainty_baseline,
                      "bo": _bo_baseline}[method]
            final = runner(manifest, orc, library, trace)
            n_queries = len(orc.query_log)
            trace.log({"type": "final", "mechanism": final.text, "score": final.score,
                       "n_queries": n_queries})
        row["n_queries"] = n_queries
        row["final_text"] = final.text
        if manifest.benchmark_id == "grn":
            score = evaluate_graph(manifest, final)
            row.update(precision=repr(score.precision), recall=repr(score.recall),
                       f1=repr(score.f1), sign_accuracy=repr(score.sign_accuracy),
                       exact_graph=int(score.exact_graph), motif_match=int(score.motif_match))
        else:
            score = evaluate_equation(manifest, final)
            row.update(rmsle=repr(score.rmsle), exact=int(score.exact),
                       symbolic=int(score.symbolic))
        row["status"] = "ok"
    except Exception as exc:  # per-task failures become failed rows, batch continues
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        trace.log({"type": "note", "event": "task-failed", "error": row["error"]})
    return row, trace.to_jsonl()


def _run_task_entry(args):
    manifest_dict, method, pconf, laws = args
    manifest = oracle.TaskManifest.from_dict(manifest_dict)
    t0 = time.perf_counter()
    row, log_text = run_task(manifest, method, proposer_config=pconf, laws=laws)
    return row, log_text, time.perf_counter() - t0


def run_benchmark(config: RunConfig) -> str:
    """Run every manifest task under the configured method; returns the output dir."""
    config.validate()
    manifests = read_manifests(config.manifest_path)
    laws = load_laws(config.laws_path) if config.laws_path else None
    if config.seeds:
        manifests = [m for m in manifests if m.seed in set(config.seeds)]
    if config.budget_override is not None or config.noise_override is not None:
        manifests = [oracle.TaskManifest(
            m.benchmark_id, m.task_id, m.family_or_motif, m.difficulty, m.variant, m.seed,
            config.budget_override or m.budget,
            m.noise_sigma if config.noise_override is None else config.noise_override)
            for m in manifests]
    if config.method == "autoscilab-remote" and not config.proposer_config.endpoint:
        raise MalformedManifest("autoscilab-remote requires a reachable endpoint")

    os.makedirs(config.output_dir, exist_ok=True)
    logs_dir = os.path.join(config.output_dir, "logs")
    os.makedirs(logs_dir, exist_ok=True)

    jobs = [(m.to_dict(), config.method,
             config.proposer_config if config.method == "autoscilab-remote" else None, laws)
            for m in manifests]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_task_entry, jobs))
    else:
        outcomes = [_run_task_entry(job) for job in jobs]

    results_path = os.path.join(config.output_dir, "results.csv")
    timings_path = os.path.join(config.output_dir, "timings.csv")
    with open(results_path, "w", newline="") as fh, open(timings_path, "w", newline="") as th:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        tw = csv.writer(th, lineterminator="\n")
        tw.writerow(["task_id", "method", "seed", "wall_time_s"])
        for manifest, (row, log_text, elapsed) in zip(manifests, outcomes):
            writer.writerow(row)
            tw.writerow([manifest.task_id, config.method, manifest.seed, f"{elapsed:.3f}"])
            log_name = f"{manifest.task_id.replace('/', '_')}__{config.method}__s{manifest.seed}.jsonl"
            with open(os.path.join(logs_dir, log_name), "w") as lf:
                lf.write(log_text)
    return config.output_dir


def sweep(config: RunConfig, budgets) -> str:
    """Re-run the manifest at each budget; merge rows for budget-curve reports."""
    all_rows = []
    for budget in budgets:
        sub = replace(config, budget_override=int(budget),
                      output_dir=os.path.join(config.output_dir, f"B{budget}"))
        run_benchmark(sub)
        all_rows.extend(_read_results(os.path.join(sub.output_dir, "results.csv")))
    _write_rows(os.path.join(config.output_dir, "results.csv"), all_rows)
    return config.output_dir


# --- reporting ------------------------------------------------------------------------


def _read_results(path) -> list:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _recovery_value(row) -> float:
    """Seed-level recovery indicator: exact (equation) or exact graph (grn);
    failed rows count as non-recovered."""
    if row["status"] != "ok":
        return 0.0
    field_name = "exact_graph" if row["benchmark"] == "grn" else "exact"
    return float(row[field_name] or 0)


_METRIC_FIELDS = {
    "chem": ("rmsle", "exact", "symbolic"),
    "equation-plugin": ("rmsle", "exact", "symbolic"),
    "grn": ("f1", "exact_graph", "sign_accuracy"),
}


def _seed_aggregates(rows):
    """(benchmark, method, budget, tier, seed) -> mean of each metric over tasks."""
    groups: dict = {}
    for row in rows:
        key = (row["benchmark"], row["method"], int(row["budget"]), row["tier"],
               int(row["seed"]))
        groups.setdefault(key, []).append(row)
    out = {}
    for key, members in groups.items():
        benchmark = key[0]
        agg = {}
        for metric in _METRIC_FIELDS[benchmark] + ("recovery",):
            values = []
            for row in members:
                if metric == "recovery":
                    values.append(_recovery_value(row))
                elif row["status"] != "ok" or row[metric] == "":
                    values.append(0.0 if metric != "rmsle" else math.inf)
                else:
                    values.append(float(row[metric]))
            agg[metric] = float(np.mean(values))
        out[key] = agg
    return out


def report(results_dir: str, reference_method: str = "random",
           target: float = 0.5) -> str:
    """Aggregate tables (mean +/- std across seeds), budget curves, and a
    sample-efficiency table against the reference method."""
    results_path = os.path.join(results_dir, "results.csv")
    if not os.path.exists(results_path):
        raise EmptyResults(f"no results.csv under {results_dir}")
    rows = _read_results(results_path)
    if not rows:
        raise EmptyResults("results table is empty")
    per_seed = _seed_aggregates(rows)

    # mean +/- std across seeds per (benchmark, method, budget, tier)
    summary: dict = {}
    for (benchmark, method, budget, tier, _seed), agg in per_seed.items():
        summary.setdefault((benchmark, method, budget, tier), []).append(agg)

    agg_path = os.path.join(results_dir, "aggregates.csv")
    with open(agg_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["benchmark", "method", "budget", "tier", "metric", "mean", "std", "n_seeds"])
        for key in sorted(summary):
            benchmark, method, budget, tier = key
            per_metric: dict = {}
            for agg in summary[key]:
                for metric, value in agg.items():
                    per_metric.setdefault(metric, []).append(value)
            for metric in sorted(per_metric):
                vals = np.asarray(per_metric[metric])
                writer.writerow([benchmark, method, budget, tier, metric,
                                 repr(float(vals.mean())), repr(float(vals.std())), len(vals)])

    curves_path = os.path.join(results_dir, "curves.csv")
    curves: dict = {}
    for key in sorted(summary):
        benchmark, method, budget, tier = key
        rate = float(np.mean([a["recovery"] for a in summary[key]]))
        curves.setdefault((benchmark, method, tier), {})[budget] = rate
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["benchmark", "method", "tier", "budget", "recovery_rate"])
        for (benchmark, method, tier) in sorted(curves):
            for budget in sorted(curves[(benchmark, method, tier)]):
                writer.writerow([benchmark, method, tier, budget,
                                 repr(curves[(benchmark, method, tier)][budget])])

    eff_path = os.path.join(results_dir, "efficiency.csv")
    with open(eff_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["benchmark", "tier", "method", "reference", "target", "budget_ratio"])
        for (benchmark, method, tier), curve in sorted(curves.items()):
            ref_curve = curves.get((benchmark, reference_method, tier))
            if method == reference_method or not ref_curve:
                continue
            ratio = metrics.sample_efficiency(curve, ref_curve, target)
            writer.writerow([benchmark, tier, method, reference_method, target,
                             "inf" if math.isinf(ratio) else repr(ratio)])

    report_path = os.path.join(results_dir, "report.txt")
    with open(report_path, "w") as fh:
        fh.write("benchmark results (mean +/- std across seeds)\n")
        fh.write("=" * 60 + "\n")
        for key in sorted(summary):
            benchmark, method, budget, tier = key
            per_metric: dict = {}
            for agg in summary[key]:
                for metric, value in agg.items():
                    per_metric.setdefault(metric, []).append(value)
            parts = []
            for metric in sorted(per_metric):
                vals = np.asarray(per_metric[metric])
                parts.append(f"{metric}={vals.mean():.4f}+/-{vals.std():.4f}")
            fh.write(f"{benchmark:>16} B={budget:<4} {tier:<7} {method:<20} "
                     + " ".join(parts) + "\n")
    return results_dir
