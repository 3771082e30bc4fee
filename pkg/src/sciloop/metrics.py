"""Evaluation metrics: RMSLE and exact recovery, symbolic accuracy, signed-graph
scores, and target-matching sample-efficiency ratios."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import exprlang, grn
from .errors import DomainError, LengthMismatch, NodeSetMismatch

logger = logging.getLogger(__name__)

EXACT_RMSLE_THRESHOLD = 0.01

JUDGE_PROMPT = """Question: Given the ground truth mathematical expression A and the
hypothesis B, determine if there exist any constant parameter values that
would make the hypothesis equivalent to the given ground truth expression.
Let's think step by step. Explain your reasoning and
then provide the final answer as:
{{
  "reasoning": "Brief step-by-step analysis",
  "answer": "Yes/No"
}}

A: {truth}
B: {predicted}
"""


@dataclass(frozen=True)
class EquationScore:
    rmsle: float
    exact: bool      # rmsle < 0.01
    symbolic: bool


@dataclass(frozen=True)
class GraphScore:
    precision: float
    recall: float
    f1: float
    sign_accuracy: float
    exact_graph: bool
    motif_match: bool


def rmsle(predictions, targets) -> float:
    """sqrt(mean((log(1+pred) - log(1+target))^2)); inputs must be > -1 and finite."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size < 1:
        raise LengthMismatch(f"shapes {p.shape} vs {t.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise DomainError("non-finite values")
    if np.any(p <= -1.0) or np.any(t <= -1.0):
        raise DomainError("values must be > -1 for the log1p transform")
    r = np.log1p(p) - np.log1p(t)
    return float(np.sqrt(np.mean(r * r)))


def exact_accuracy(rmsle_value: float) -> bool:
    return rmsle_value < EXACT_RMSLE_THRESHOLD


def equation_score(predictions, targets, symbolic: bool) -> EquationScore:
    try:
        value = rmsle(predictions, targets)
    except DomainError:
        value = float("inf")
    return EquationScore(value, exact_accuracy(value), symbolic)


def symbolic_accuracy(predicted: exprlang.ParsedHypothesis,
                      truth: exprlang.ParsedHypothesis, judge=None) -> bool:
    """Structural agreement up to constants.

    Deterministic mode compares skeletons (sound, incomplete). With a judge
    (an object exposing ``complete(prompt) -> str``) the judge's Yes/No wins;
    disagreements with the deterministic answer are logged.
    """
    deterministic = exprlang.equivalent_up_to_constants(predicted, truth)
    if judge is None:
        return deterministic
    prompt = JUDGE_PROMPT.format(truth=exprlang.print_hypothesis(truth),
                                 predicted=exprlang.print_hypothesis(predicted))
    reply = judge.complete(prompt)
    verdict = _parse_yes_no(reply)
    if verdict != deterministic:
        logger.info("judge verdict %s disagrees with skeleton equivalence %s for %r vs %r",
                    verdict, deterministic, predicted.source_text, truth.source_text)
    return verdict


def _parse_yes_no(reply: str) -> bool:
    text = reply.lower()
    marker = text.rfind('"answer"')
    if marker >= 0:
        text = text[marker:]
    return "yes" in text


def graph_metrics(predicted: grn.SignedGraph, truth: grn.SignedGraph,
                  motif_graphs=None) -> GraphScore:
    """Edge-level precision/recall/F1 on unsigned directed edges, sign accuracy
    over the edge intersection (vacuously 1 when empty), exact signed equality,
    and catalog-membership motif match when the family graphs are supplied."""
    pred_nodes = {n for s, d, _ in predicted.edges for n in (s, d)}
    true_nodes = {n for s, d, _ in truth.edges for n in (s, d)}
    if not (pred_nodes <= set(grn.NODES) and true_nodes <= set(grn.NODES)):
        raise NodeSetMismatch(f"{pred_nodes | true_nodes} not within {set(grn.NODES)}")
    pred_pairs = {(s, d): g for s, d, g in predicted.edges}
    true_pairs = {(s, d): g for s, d, g in truth.edges}
    inter = set(pred_pairs) & set(true_pairs)
    precision = len(inter) / len(pred_pairs) if pred_pairs else (1.0 if not true_pairs else 0.0)
    recall = len(inter) / len(true_pairs) if true_pairs else (1.0 if not pred_pairs else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    if inter:
        sign_accuracy = sum(1 for pair in inter if pred_pairs[pair] == true_pairs[pair]) / len(inter)
    else:
        sign_accuracy = 1.0
        logger.debug("empty edge intersection; sign accuracy vacuously 1.0")
    exact = set(predicted.edges) == set(truth.edges)
    if motif_graphs is not None:
        motif = any(set(predicted.edges) == set(g.edges) for g in motif_graphs)
    else:
        motif = exact
    return GraphScore(precision, recall, f1, sign_accuracy, exact, motif)


def sample_efficiency(curve_method, curve_reference, target: float,
                      higher_is_better: bool = True) -> float:
    """Budget ratio (method / reference) to first reach ``target``.

    Curves are budget -> score mappings; each is made monotone (running best)
    before thresholding. Returns ``inf`` when the method never reaches the
    target; returns 0.0 when only the reference never does.
    """
    b_method = _first_budget(curve_method, target, higher_is_better)
    b_reference = _first_budget(curve_reference, target, higher_is_better)
    if b_method is None:
        return math.inf
    if b_reference is None:
        return 0.0
    return b_method / b_reference


def _first_budget(curve, target, higher_is_better):
    best = -math.inf if higher_is_better else math.inf
    for budget in sorted(curve):
        score = curve[budget]
        best = max(best, score) if higher_is_better else min(best, score)
        if (best >= target) if higher_is_better else (best <= target):
            return budget
    return None
