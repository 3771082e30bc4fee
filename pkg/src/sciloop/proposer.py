"""Hypothesis sources: a deterministic library proposer and a remote
chat-completion client.

The library proposer round-robins a seeded permutation of the mechanism
library (rate-law templates for equation tasks, catalog topologies for graph
tasks); it is the offline stand-in for the small/large model roles and the
backbone of the experiment-design baseline. The remote proposer renders the
prompt templates below against a chat-completion-compatible endpoint,
expecting one structured JSON object per reply, with a repair re-prompt on
schema violations before a retry is counted. API keys come from the
environment and are never logged; every prompt and raw completion is appended
to the run log for audit.
"""

import json
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from . import ensemble, exprlang, grn
from ._seeding import stream
from .errors import PathRuleViolation, ProposerFailure, SchemaViolation

MAX_ALTERNATES = 6
MIN_ALTERNATES = 2
DEFAULT_TEMPERATURE = 1.0  # small-role sampling temperature
DEFAULT_RETRIES = 3


@dataclass(frozen=True)
class ProposerConfig:
    kind: str = "library"                   # library | remote-chat
    endpoint: str = ""
    model_small: str = "small"
    model_large: str = "large"
    temperature: float = DEFAULT_TEMPERATURE
    retries: int = DEFAULT_RETRIES
    api_key_env: str = "SCILOOP_API_KEY"
    backoff: float = 0.5
    max_in_flight: int = 4
    timeout: float = 60.0

    def validate(self):
        if self.kind not in ("library", "remote-chat"):
            raise ProposerFailure(f"unknown proposer kind {self.kind!r}")
        if self.kind == "remote-chat" and not self.endpoint:
            raise ProposerFailure("remote-chat proposer requires an endpoint")


@dataclass(frozen=True)
class Region:
    """One proposed search region: a box for equation tasks, an explicit
    candidate-intervention list for graph tasks."""
    bounds: dict = field(default_factory=dict)
    interventions: tuple = ()
    n_experiments: int = 2
    priority: str = "medium"
    rationale: str = ""


@dataclass(frozen=True)
class Proposal:
    primary_hypothesis: str
    alternates: tuple
    search_regions: tuple
    confidence: float = 0.0
    done: bool = False


@dataclass(frozen=True)
class GraphTranslation:
    hypothesis_id: str
    rationale: str
    edges: tuple


@dataclass
class StateSummary:
    """Engine-owned snapshot handed to proposers; read-only by convention."""
    goal: str
    kind: str                      # equation | graph
    domain: str
    variables: tuple = ()
    bounds: dict = field(default_factory=dict)
    data_table: str = ""
    memory_text: str = "(empty)"
    phase: str = "explore"
    iteration: int = 0
    budget_total: int = 0
    budget_remaining: int = 0
    current_hypothesis: str = "(none yet)"
    best_equation: str = "(none yet)"
    confidence: float = 0.0
    ranked: tuple = ()             # (text, skeleton, score, complexity) best first
    failed_skeletons: frozenset = frozenset()
    ensemble_text: str = "(none yet)"
    max_experiments: int = 4
    intervention_space: tuple = ()


def _path_exists(edges, start: str, goal: str) -> bool:
    adjacency: dict = {}
    for src, dst, _ in edges:
        adjacency.setdefault(src, set()).add(dst)
    frontier = [start]
    seen = {start}
    while frontier:
        node = frontier.pop()
        if node == goal:
            return True
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


def validate_translation(edges) -> tuple:
    graph = grn.SignedGraph(tuple((str(s), str(d), int(g)) for s, d, g in edges))
    if not _path_exists(graph.edges, "signal", grn.FINAL_NODE):
        raise PathRuleViolation(
            f"no directed path from signal to {grn.FINAL_NODE} in {graph.canonical_string()}")
    return graph.edges


def parse_graph_text(text: str) -> grn.SignedGraph:
    """Accept the canonical 'src>dst:+;...' encoding or a JSON wire list."""
    text = text.strip()
    if text.startswith("["):
        return grn.SignedGraph.from_wire(json.loads(text))
    edges = []
    if text:
        for part in text.split(";"):
            src_rest = part.split(">")
            src = src_rest[0].strip()
            dst, sign = src_rest[1].split(":")
            edges.append((src, dst.strip(), 1 if sign.strip() == "+" else -1))
    return grn.SignedGraph(tuple(edges))


# --- library proposer -----------------------------------------------------------


class LibraryProposer:
    """Seeded round-robin over a fixed mechanism library.

    Pure function of (library, seed, call count, state ranking): identical
    inputs give identical proposals. Skeletons the scoreboard marked failed
    are never promoted to primary.
    """

    def __init__(self, kind: str, library, seed: int = 0):
        self.kind = kind
        self.library = tuple(library)
        if not self.library:
            raise ProposerFailure("library proposer needs a non-empty library")
        self._perm = stream(seed, "library-order").permutation(len(self.library))
        self._calls = 0
        self._skeletons = {}
        for item in self.library:
            text = item if isinstance(item, str) else item.canonical_string()
            self._skeletons[text] = self._skeleton_of(item)

    def _skeleton_of(self, item):
        if isinstance(item, grn.SignedGraph):
            return item.canonical_string()
        return exprlang.skeletonize(exprlang.parse(item)).canonical_form

    def _record(self, item) -> ensemble.HypothesisRecord:
        if isinstance(item, grn.SignedGraph):
            return ensemble.HypothesisRecord(item.canonical_string(), "library", parsed=item)
        return ensemble.HypothesisRecord(item, "library")

    def sample_hypothesis(self, summary: StateSummary) -> ensemble.HypothesisRecord:
        idx = self._perm[self._calls % len(self.library)]
        self._calls += 1
        return self._record(self.library[idx])

    def _ordered_pool(self, summary: StateSummary) -> list:
        ranked = [text for text, skeleton, _, _ in summary.ranked
                  if skeleton not in summary.failed_skeletons]
        pool = list(ranked)
        for idx in self._perm:
            item = self.library[idx]
            text = item if isinstance(item, str) else item.canonical_string()
            if text not in pool and self._skeletons[text] not in summary.failed_skeletons:
                pool.append(text)
        if not pool:  # everything failed; fall back to raw library order
            pool = [i if isinstance(i, str) else i.canonical_string()
                    for i in (self.library[j] for j in self._perm)]
        return pool

    def synthesize_proposal(self, summary: StateSummary,
                            ensemble_summary: str = "") -> Proposal:
        pool = self._ordered_pool(summary)
        primary = pool[0]
        alternates = tuple(pool[1:1 + MIN_ALTERNATES])
        if summary.kind == "graph":
            regions = (Region(interventions=tuple(summary.intervention_space),
                              n_experiments=summary.max_experiments, priority="high",
                              rationale="full admissible intervention space"),)
        else:
            regions = self._equation_regions(summary, (primary,) + alternates)
        return Proposal(primary, alternates, regions, confidence=summary.confidence)

    def _equation_regions(self, summary: StateSummary, texts) -> tuple:
        relevant: list = []
        for text in texts:
            try:
                for name in exprlang.parse(text).variables_used:
                    if name in summary.bounds and name not in relevant:
                        relevant.append(name)
            except Exception:
                continue
        if not relevant:
            relevant = list(summary.variables)
        relevant.sort()
        priorities = ("high", "medium", "low")
        counts = (max(1, summary.max_experiments - 2), 1, 1)
        regions = []
        for slot in range(3):
            bounds = {name: _third(summary.bounds[name], slot) for name in relevant}
            regions.append(Region(bounds=bounds, n_experiments=counts[slot],
                                  priority=priorities[slot],
                                  rationale=f"{'low mid high'.split()[slot]} third of each relevant variable"))
        return tuple(regions)

    def translate_graph(self, hypothesis_text: str) -> GraphTranslation:
        graph = parse_graph_text(hypothesis_text)
        edges = validate_translation(graph.edges)
        return GraphTranslation("library", "library catalog topology", edges)


def _third(bounds, slot: int) -> tuple:
    """Split a range into thirds; decades for wide non-negative ranges so the
    low third actually probes small magnitudes."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo >= 0 and hi > 0 and (lo == 0 or hi / max(lo, 1e-12) > 30):
        edges = (lo, hi * 1e-2, hi * 1e-1, hi)
    else:
        edges = (lo, lo + (hi - lo) / 3, lo + 2 * (hi - lo) / 3, hi)
    return (edges[slot], edges[slot + 1])


# --- prompt templates --------------------------------------------------------------

EQUATION_HYPOTHESIS_TEMPLATE = """GOAL: {goal}

DOMAIN: {domain}
PARAMETERS: {param_names}

FUNCTION SIGNATURE:
def discovered_law({param_names}) -> rate

DATA ({budget_remaining} of {budget_total} experiments remaining):
{data_table}

Best symbolic equation so far:
{best_equation}

MEMORY SUMMARY:
{memory}
Current hypotheses: {current_hypothesis}
CURRENT PHASE: {phase}

TASK:
Generate one primary and 2-6 alternate EQUATION hypotheses that remain
plausible under current data.
Do NOT propose search regions in this step.
Use free constants C0, C1, alpha, beta, ... - they will be fitted numerically.
Use ONLY standard math. Powers: use ** not pow().
Use the EXACT parameter names listed above.
Return a single JSON object:
{{"primary_hypothesis": "<expression>", "alternates": ["<expression>", ...],
  "rationale": "why these remain plausible"}}
"""

EQUATION_REGION_TEMPLATE = """GOAL: {goal}

DOMAIN: {domain}
PARAMETERS: {param_names}
PARAMETER BOUNDS: {bounds}

EXPERIMENTAL DATA ({budget_remaining} of {budget_total} experiments remaining):
{data_table}

Current best hypothesis: {current_hypothesis}
MEMORY SUMMARY:
{memory}
ENSEMBLE DISTRIBUTION:
{ensemble}

Based on this data, propose the most informative parameter regions to
explore next, disambiguating the competing hypotheses set.

Return a single JSON object:
{{"search_regions": [{{"bounds": {{"p1": [lo, hi], "p2": [lo, hi]}},
   "n_experiments": 4, "priority": "high", "rationale": "why"}}],
  "confidence": 0.5, "done": false}}
search_regions must be a list with 1-4 entries.
"""

GRAPH_SINGLE_HYPOTHESIS_TEMPLATE = """GOAL:
{goal}

DOMAIN:
{domain}

CURRENT BEST HYPOTHESIS:
{current_hypothesis}

RECENT DATA:
{data_table}

MEMORY SUMMARY:
{memory}

CONFIDENCE SUMMARY:
confidence={confidence:.3f} phase={phase}

BUDGET REMAINING: {budget_remaining}

Return exactly one plausible natural-language mechanism hypothesis,
with a short rationale and confidence.
Do not output graph edges or search regions.
Return a single JSON object:
{{"hypothesis": "<one sentence>", "rationale": "...", "confidence": 0.5}}
"""

GRAPH_PROPOSAL_TEMPLATE = """GOAL:
{goal}

DOMAIN:
{domain}

CURRENT BEST HYPOTHESIS:
{current_hypothesis}

RECENT DATA:
{data_table}

HYPOTHESIS FIT SUMMARY:
{fit_summary}

MEMORY SUMMARY:
{memory}

CONFIDENCE SUMMARY:
confidence={confidence:.3f} phase={phase}

ENSEMBLE GRAPH DISTRIBUTION:
{ensemble}

BUDGET REMAINING: {budget_remaining}
MAX EXPERIMENTS THIS ITERATION: {max_experiments}

Return:
- 2-5 natural-language mechanism hypotheses with stable IDs like h1, h2, h3
- a primary_hypothesis_id naming the current best one
- 1-4 search regions for the next experiments
- confidence and done flag
Return a single JSON object:
{{"hypotheses": [{{"id": "h1", "text": "..."}}],
  "primary_hypothesis_id": "h1",
  "search_regions": [{{"interventions": [["A", "knock_down", 0.1]],
    "n_experiments": 4, "priority": "high", "rationale": "why"}}],
  "confidence": 0.5, "done": false}}
"""

GRAPH_TRANSLATION_TEMPLATE = """Translate this single natural-language hypothesis into one signed graph.

hypothesis_id: {hypothesis_id}
text: {hypothesis_text}

Fill this schema exactly:
{{
  "translation": {{
    "hypothesis_id": "{hypothesis_id}",
    "rationale": "why this graph matches the hypothesis",
    "assumptions": ["optional assumption"],
    "edges": [
      {{"src": "signal", "dst": "A", "sign": 1}},
      {{"src": "A", "dst": "C", "sign": 1}}
    ]
  }}
}}

Requirements:
- dst must be one of {nodes}.
- The graph must contain a directed path from signal to {final_node}.
- If the hypothesis does not mention {final_node} explicitly, add the minimal
  faithful chain needed so the signal reaches {final_node}.
"""

REPAIR_SUFFIX = """

Your previous reply failed validation: {error}
Return ONLY a single corrected JSON object, nothing else.
"""


def extract_json(text: str) -> dict:
    """First balanced top-level JSON object in a completion."""
    start = text.find("{")
    if start < 0:
        raise SchemaViolation("no JSON object in completion")
    depth = 0
    in_string = False
    escape = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                try:
                    obj = json.loads(text[start:i + 1])
                except json.JSONDecodeError as exc:
                    raise SchemaViolation(f"malformed JSON object: {exc}") from exc
                if not isinstance(obj, dict):
                    raise SchemaViolation("top-level JSON value must be an object")
                return obj
    raise SchemaViolation("unbalanced JSON object in completion")


class ChatClient:
    """Minimal chat-completion client with retries and bounded concurrency."""

    def __init__(self, config: ProposerConfig, log=None):
        config.validate()
        self.config = config
        self._log = log or (lambda record: None)
        self._session = requests.Session()
        self._gate = threading.Semaphore(max(1, config.max_in_flight))
        self._api_key = os.environ.get(config.api_key_env, "")

    def complete(self, prompt: str, role: str = "large") -> str:
        model = self.config.model_large if role == "large" else self.config.model_small
        payload = {
            "model": model,
            "temperature": self.config.temperature if role == "small" else 0.2,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"  # key never logged
        self._log({"type": "prompt", "role": role, "model": model, "text": prompt})
        last_error = "no attempts made"
        for attempt in range(self.config.retries):
            if attempt:
                time.sleep(self.config.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._session.post(self.config.endpoint, json=payload,
                                                  headers=headers, timeout=self.config.timeout)
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = str(exc)
                self._log({"type": "completion", "role": role, "error": last_error,
                           "attempt": attempt})
                continue
            self._log({"type": "completion", "role": role, "text": content, "attempt": attempt})
            return content
        raise ProposerFailure(f"endpoint failed after {self.config.retries} attempts: {last_error}")

    def structured(self, prompt: str, role: str, validate) -> object:
        """Completion -> JSON -> validator, with one repair re-prompt per attempt."""
        last_error = "no attempts made"
        for attempt in range(self.config.retries):
            content = self.complete(prompt, role)
            try:
                return validate(extract_json(content))
            except SchemaViolation as exc:
                last_error = str(exc)
            repair = prompt + REPAIR_SUFFIX.format(error=last_error)
            content = self.complete(repair, role)
            try:
                return validate(extract_json(content))
            except SchemaViolation as exc:
                last_error = str(exc)
                self._log({"type": "note", "event": "schema-retry", "attempt": attempt,
                           "error": last_error})
        raise ProposerFailure(f"schema validation failed after repairs: {last_error}")


class RemoteProposer:
    """Small-role sampling, large-role synthesis, and graph translation over
    a chat endpoint. Never mutates discovery state; all effects flow through
    returned values and the run log."""

    def __init__(self, config: ProposerConfig, log=None):
        self.config = config
        self.client = ChatClient(config, log=log)
        self._log = log or (lambda record: None)

    # -- sampling ------------------------------------------------------------

    def sample_hypothesis(self, summary: StateSummary) -> ensemble.HypothesisRecord:
        if summary.kind == "graph":
            payload = self.client.structured(
                GRAPH_SINGLE_HYPOTHESIS_TEMPLATE.format(
                    goal=summary.goal, domain=summary.domain,
                    current_hypothesis=summary.current_hypothesis,
                    data_table=summary.data_table, memory=summary.memory_text,
                    confidence=summary.confidence, phase=summary.phase,
                    budget_remaining=summary.budget_remaining),
                "small", _validate_single_hypothesis)
            record = ensemble.HypothesisRecord(payload["hypothesis"], "small-model")
            try:
                translation = self.translate_graph(payload["hypothesis"])
                record.parsed = grn.SignedGraph(translation.edges)
            except (PathRuleViolation, ProposerFailure, SchemaViolation) as exc:
                record.error = str(exc)
            return record
        payload = self.client.structured(
            EQUATION_HYPOTHESIS_TEMPLATE.format(
                goal=summary.goal, domain=summary.domain,
                param_names=", ".join(summary.variables),
                budget_remaining=summary.budget_remaining,
                budget_total=summary.budget_total, data_table=summary.data_table,
                best_equation=summary.best_equation, memory=summary.memory_text,
                current_hypothesis=summary.current_hypothesis, phase=summary.phase),
            "small", _validate_hypothesis_set)
        return ensemble.HypothesisRecord(payload["primary_hypothesis"], "small-model")

    # -- synthesis -----------------------------------------------------------

    def synthesize_proposal(self, summary: StateSummary,
                            ensemble_summary: str = "") -> Proposal:
        if summary.kind == "graph":
            return self._synthesize_graph(summary, ensemble_summary)
        stage1 = self.client.structured(
            EQUATION_HYPOTHESIS_TEMPLATE.format(
                goal=summary.goal, domain=summary.domain,
                param_names=", ".join(summary.variables),
                budget_remaining=summary.budget_remaining,
                budget_total=summary.budget_total, data_table=summary.data_table,
                best_equation=summary.best_equation, memory=summary.memory_text,
                current_hypothesis=summary.current_hypothesis, phase=summary.phase),
            "large", _validate_hypothesis_set)
        stage2 = self.client.structured(
            EQUATION_REGION_TEMPLATE.format(
                goal=summary.goal, domain=summary.domain,
                param_names=", ".join(summary.variables),
                bounds=json.dumps({k: list(v) for k, v in summary.bounds.items()}),
                budget_remaining=summary.budget_remaining,
                budget_total=summary.budget_total, data_table=summary.data_table,
                current_hypothesis=stage1["primary_hypothesis"],
                memory=summary.memory_text, ensemble=ensemble_summary or summary.ensemble_text),
            "large", _validate_region_payload)
        alternates = _clamp_alternates(stage1["alternates"], self._log)
        regions = tuple(self._clamp_region(r, summary) for r in stage2["search_regions"])
        return Proposal(stage1["primary_hypothesis"], alternates, regions,
                        confidence=stage2["confidence"], done=stage2["done"])

    def _synthesize_graph(self, summary: StateSummary, ensemble_summary: str) -> Proposal:
        payload = self.client.structured(
            GRAPH_PROPOSAL_TEMPLATE.format(
                goal=summary.goal, domain=summary.domain,
                current_hypothesis=summary.current_hypothesis,
                data_table=summary.data_table,
                fit_summary="\n".join(f"{t} score={s:.4g}" for t, _, s, _ in summary.ranked[:6])
                            or "(no fits yet)",
                memory=summary.memory_text, confidence=summary.confidence,
                phase=summary.phase, ensemble=ensemble_summary or summary.ensemble_text,
                budget_remaining=summary.budget_remaining,
                max_experiments=summary.max_experiments),
            "large", _validate_graph_proposal)
        by_id = {h["id"]: h["text"] for h in payload["hypotheses"]}
        primary_text = by_id[payload["primary_hypothesis_id"]]
        texts = [primary_text] + [t for i, t in by_id.items()
                                  if i != payload["primary_hypothesis_id"]]
        graphs = []
        for text in texts:
            try:
                graphs.append(grn.SignedGraph(self.translate_graph(text).edges).canonical_string())
            except (PathRuleViolation, ProposerFailure, SchemaViolation) as exc:
                self._log({"type": "note", "event": "translation-dropped", "error": str(exc)})
        if not graphs:
            raise ProposerFailure("no synthesized hypothesis survived graph translation")
        regions = tuple(self._decode_graph_region(r) for r in payload["search_regions"])
        return Proposal(graphs[0], tuple(graphs[1:1 + MAX_ALTERNATES]), regions,
                        confidence=payload["confidence"], done=payload["done"])

    def translate_graph(self, hypothesis_text: str, hypothesis_id: str = "h1") -> GraphTranslation:
        prompt = GRAPH_TRANSLATION_TEMPLATE.format(
            hypothesis_id=hypothesis_id, hypothesis_text=hypothesis_text,
            nodes=list(grn.NODES), final_node=grn.FINAL_NODE)

        def validate(obj):
            translation = obj.get("translation")
            if not isinstance(translation, dict):
                raise SchemaViolation("missing 'translation' object")
            edges = translation.get("edges")
            if not isinstance(edges, list) or not edges:
                raise SchemaViolation("translation.edges must be a non-empty list")
            try:
                triples = [(e["src"], e["dst"], int(e["sign"])) for e in edges]
            except (TypeError, KeyError, ValueError) as exc:
                raise SchemaViolation(f"bad edge record: {exc}") from exc
            try:
                checked = validate_translation(triples)
            except PathRuleViolation as exc:
                raise SchemaViolation(str(exc)) from exc  # triggers the repair re-prompt
            except Exception as exc:
                raise SchemaViolation(str(exc)) from exc
            return GraphTranslation(str(translation.get("hypothesis_id", hypothesis_id)),
                                    str(translation.get("rationale", "")), checked)

        try:
            return self.client.structured(prompt, "large", validate)
        except ProposerFailure as exc:
            raise PathRuleViolation(str(exc)) from exc

    # -- clamping ---------------------------------------------------------------

    def _clamp_region(self, payload: dict, summary: StateSummary) -> Region:
        bounds = {}
        for name, (lo, hi) in payload["bounds"].items():
            if name not in summary.bounds:
                self._log({"type": "note", "event": "region-variable-dropped", "variable": name})
                continue
            olo, ohi = summary.bounds[name]
            clo, chi = max(float(lo), olo), min(float(hi), ohi)
            if (clo, chi) != (float(lo), float(hi)):
                self._log({"type": "note", "event": "region-clamped", "variable": name,
                           "requested": [float(lo), float(hi)], "clamped": [clo, chi]})
            if chi > clo:
                bounds[name] = (clo, chi)
        return Region(bounds=bounds, n_experiments=int(payload.get("n_experiments", 2)),
                      priority=str(payload.get("priority", "medium")),
                      rationale=str(payload.get("rationale", "")))

    def _decode_graph_region(self, payload: dict) -> Region:
        ivs = tuple(grn.Intervention.from_wire(w if isinstance(w, list) and w
                                               and isinstance(w[0], (list, tuple))
                                               else [w])
                    for w in payload["interventions"])
        return Region(interventions=ivs,
                      n_experiments=int(payload.get("n_experiments", 2)),
                      priority=str(payload.get("priority", "medium")),
                      rationale=str(payload.get("rationale", "")))


def _clamp_alternates(alternates, log) -> tuple:
    out = tuple(str(a) for a in alternates)
    if len(out) > MAX_ALTERNATES:
        log({"type": "note", "event": "alternates-truncated", "count": len(out)})
        out = out[:MAX_ALTERNATES]
    return out


# --- payload validators ---------------------------------------------------------


def _validate_single_hypothesis(obj: dict) -> dict:
    text = obj.get("hypothesis")
    if not isinstance(text, str) or not text.strip():
        raise SchemaViolation("'hypothesis' must be a non-empty string")
    return {"hypothesis": text.strip(),
            "confidence": _coerce_confidence(obj.get("confidence", 0.0))}


def _validate_hypothesis_set(obj: dict) -> dict:
    primary = obj.get("primary_hypothesis")
    if not isinstance(primary, str) or not primary.strip():
        raise SchemaViolation("'primary_hypothesis' must be a non-empty string")
    alternates = obj.get("alternates", [])
    if not isinstance(alternates, list) or not all(isinstance(a, str) for a in alternates):
        raise SchemaViolation("'alternates' must be a list of strings")
    try:
        exprlang.parse(primary)
    except Exception as exc:
        raise SchemaViolation(f"primary hypothesis does not parse: {exc}") from exc
    return {"primary_hypothesis": primary.strip(), "alternates": alternates}


def _validate_region_payload(obj: dict) -> dict:
    regions = obj.get("search_regions")
    if not isinstance(regions, list) or not regions:
        raise SchemaViolation("search_regions must be a non-empty list")
    for region in regions:
        if not isinstance(region, dict) or not isinstance(region.get("bounds"), dict):
            raise SchemaViolation("each region needs a 'bounds' object")
        for name, pair in region["bounds"].items():
            if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                    or not all(isinstance(v, (int, float)) for v in pair)):
                raise SchemaViolation(f"bounds for {name!r} must be [lo, hi]")
            if float(pair[0]) >= float(pair[1]):
                raise SchemaViolation(f"bounds for {name!r} must satisfy lo < hi")
    return {"search_regions": regions,
            "confidence": _coerce_confidence(obj.get("confidence", 0.0)),
            "done": bool(obj.get("done", False))}


def _validate_graph_proposal(obj: dict) -> dict:
    hypotheses = obj.get("hypotheses")
    if not isinstance(hypotheses, list) or not hypotheses:
        raise SchemaViolation("'hypotheses' must be a non-empty list")
    for h in hypotheses:
        if not isinstance(h, dict) or not h.get("id") or not h.get("text"):
            raise SchemaViolation("each hypothesis needs 'id' and 'text'")
    primary_id = obj.get("primary_hypothesis_id")
    if primary_id not in {h["id"] for h in hypotheses}:
        raise SchemaViolation("primary_hypothesis_id does not name a hypothesis")
    regions = obj.get("search_regions")
    if not isinstance(regions, list) or not regions:
        raise SchemaViolation("search_regions must be a non-empty list")
    for region in regions:
        if not isinstance(region, dict) or not isinstance(region.get("interventions"), list) \
                or not region["interventions"]:
            raise SchemaViolation("each region needs a non-empty 'interventions' list")
    return {"hypotheses": hypotheses, "primary_hypothesis_id": primary_id,
            "search_regions": regions,
            "confidence": _coerce_confidence(obj.get("confidence", 0.0)),
            "done": bool(obj.get("done", False))}


def _coerce_confidence(value) -> float:
    try:
        return float(np.clip(float(value), 0.0, 1.0))
    except (TypeError, ValueError):
        return 0.0


def make_proposer(config: ProposerConfig, kind: str, library, seed: int = 0, log=None):
    """Factory: library proposers are built per task (they are stateful
    round-robins); remote proposers share the endpoint client."""
    config.validate()
    if config.kind == "library":
        return LibraryProposer(kind, library, seed=seed)
    return RemoteProposer(config, log=log)
