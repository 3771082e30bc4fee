"""Adaptive batched hypothesis sampling with validity filtering and
entropy-gated stopping.

Batches of size min(K, K_max - |C|) are drawn from the small-role proposer
and filtered; once at least K valid records have accumulated, records are
clustered by structural skeleton (canonical signed-edge string for graph
hypotheses) and sampling stops when the Shannon entropy of the cluster
distribution moves less than tau_H bits between successive batches, or at
the K_max cap. Entropy is measured in bits; tau_H shares that base.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprlang, fitkit, grn
from .errors import (
    EmptyDistribution,
    EmptyEnsemble,
    InsufficientData,
    NonFiniteModel,
    SciLoopError,
)

BASE_BATCH = 5      # K
ENSEMBLE_CAP = 20   # K_max
ENTROPY_GATE = 0.1  # tau_H, bits
_MAX_SAMPLE_ATTEMPTS_FACTOR = 3  # guards against a proposer that never validates


@dataclass
class HypothesisRecord:
    text: str
    origin: str                      # small-model | large-model | library
    parsed: object = None            # ParsedHypothesis or SignedGraph once valid
    valid: bool = False
    skeleton: str = ""
    error: str = ""
    fit: object = None               # quick FitResult for equation records

    def canonical_text(self) -> str:
        if isinstance(self.parsed, grn.SignedGraph):
            return self.parsed.canonical_string()
        if self.parsed is not None:
            return exprlang.print_hypothesis(self.parsed)
        return self.text


@dataclass(frozen=True)
class HypothesisDistribution:
    records: tuple
    clusters: dict               # skeleton -> tuple of record indices
    cluster_sizes: tuple         # aligned with sorted(clusters)
    entropy: float               # bits
    agreement: float             # largest cluster fraction
    representatives: tuple       # one record per cluster, sorted by skeleton

    def size(self) -> int:
        return len(self.records)


def shannon_entropy(cluster_sizes) -> float:
    """H = -sum p_k log2 p_k over cluster occupancy."""
    sizes = list(cluster_sizes)
    if not sizes:
        raise EmptyDistribution("no clusters")
    if any((not isinstance(s, (int, np.integer))) or s <= 0 for s in sizes):
        raise EmptyDistribution(f"cluster sizes must be positive integers, got {sizes}")
    total = sum(sizes)
    return -sum((s / total) * math.log2(s / total) for s in sizes)


def filter_valid(batch, data, oracle_variables, seed: int = 0) -> list:
    """Keep records that parse, bind to the oracle's variables, and stay finite
    on more than half the observed inputs after a 2-start quick fit.

    Graph records are screened structurally (construction already validated
    them); with no observations yet the finiteness screen is vacuous.
    """
    kept = []
    for record in batch:
        if isinstance(record.parsed, grn.SignedGraph):
            record.valid = True
            record.skeleton = record.parsed.canonical_string()
            kept.append(record)
            continue
        try:
            parsed = record.parsed or exprlang.parse(record.text)
        except SciLoopError as exc:
            record.valid = False
            record.error = str(exc)
            continue
        unbound = parsed.variables_used - set(oracle_variables)
        if unbound:
            record.valid = False
            record.error = f"unknown oracle variables {sorted(unbound)}"
            continue
        record.parsed = parsed
        record.skeleton = exprlang.skeletonize(parsed).canonical_form
        if data:
            try:
                fit = fitkit.quick_fit(parsed, data, seed=seed)
            except NonFiniteModel as exc:
                record.valid = False
                record.error = str(exc)
                continue
            except InsufficientData:
                fit = None
            if fit is not None:
                preds = fitkit.predict_rows(parsed, fit.fitted_constants, [x for x, _ in data])
                if np.isfinite(preds).mean() <= 0.5:
                    record.valid = False
                    record.error = "predominantly non-finite predictions"
                    continue
                record.fit = fit
        record.valid = True
        kept.append(record)
    return kept


def _cluster_sizes(records) -> dict:
    counts: dict = {}
    for record in records:
        counts[record.skeleton] = counts.get(record.skeleton, 0) + 1
    return counts


def build_distribution(records) -> HypothesisDistribution:
    """Canonicalize record order and summarize the cluster structure."""
    ordered = tuple(sorted(records, key=lambda r: (r.skeleton, r.text)))
    clusters: dict = {}
    for idx, record in enumerate(ordered):
        clusters.setdefault(record.skeleton, []).append(idx)
    keys = sorted(clusters)
    sizes = tuple(len(clusters[k]) for k in keys)
    entropy = shannon_entropy(sizes)
    agreement = max(sizes) / sum(sizes)
    reps = tuple(min((ordered[i] for i in clusters[k]), key=lambda r: r.canonical_text())
                 for k in keys)
    return HypothesisDistribution(ordered, {k: tuple(v) for k, v in clusters.items()},
                                  sizes, entropy, agreement, reps)


def grow(proposer, summary, data, oracle_variables, seed: int = 0,
         K: int = BASE_BATCH, K_max: int = ENSEMBLE_CAP,
         tau_H: float = ENTROPY_GATE) -> HypothesisDistribution:
    """Adaptive ensemble growth with the entropy stopping rule.

    The entropy comparison only starts once a previous clustered batch exists,
    and it is computed over all accumulated valid records.
    """
    collected: list = []
    h_prev = None
    attempts = 0
    max_attempts = _MAX_SAMPLE_ATTEMPTS_FACTOR * K_max
    while len(collected) < K_max and attempts < max_attempts:
        batch_size = min(K, K_max - len(collected))
        batch = []
        for _ in range(batch_size):
            batch.append(proposer.sample_hypothesis(summary))
            attempts += 1
        collected.extend(filter_valid(batch, data, oracle_variables, seed=seed))
        if len(collected) < K:
            continue
        entropy = shannon_entropy(list(_cluster_sizes(collected).values()))
        if h_prev is not None and abs(entropy - h_prev) < tau_H:
            break
        h_prev = entropy
    if not collected:
        raise EmptyEnsemble(f"no valid hypotheses after {attempts} samples")
    return build_distribution(collected)


def summary_text(dist: HypothesisDistribution, max_representatives: int = 8) -> str:
    """Compact rendering for the synthesis prompt's ensemble slot."""
    lines = [f"samples={dist.size()} unique_structures={len(dist.cluster_sizes)} "
             f"entropy_bits={dist.entropy:.3f} agreement={dist.agreement:.3f}"]
    counts = {k: len(v) for k, v in dist.clusters.items()}
    for rep in dist.representatives[:max_representatives]:
        lines.append(f"  [{counts[rep.skeleton]}x] {rep.canonical_text()}")
    return "\n".join(lines)
