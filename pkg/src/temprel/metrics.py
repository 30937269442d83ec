"""Evaluation: micro-averaged pair scores, graph-level scores, McNemar.

Graph-level scoring works on definite (non-vague) edges only.  Both
graphs are sanitized (violating edges dropped, latest first), the
reference is closed under unique compositions, the candidate is reduced
to its non-redundant core, and the verified core edges are counted
against both cores:

    P = |reduce(pred) and closure(gold)| / |reduce(pred)|
    R = |reduce(pred) and closure(gold)| / |reduce(gold)|

Closure and reduction are mutually idempotent here (reduction starts
from the closure), so replacing either graph by its closure leaves the
scores unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .corpus import Pair
from .errors import DataError
from .inference import Assignment, ConstraintSet, validate_graph
from .labels import LabelScheme, reverse_label


def micro_average(pred: Mapping, gold: Mapping,
                  exclude: Iterable[str] = ()) -> tuple[float, float, float]:
    """Corpus micro precision/recall/F1 with an excluded-label set.

    Precision counts over predictions outside the excluded set, recall
    over reference labels outside it.  With no exclusions the three
    numbers coincide with plain accuracy.
    """
    if set(pred) != set(gold):
        raise DataError("micro_average: prediction and reference domains differ")
    excluded = frozenset(exclude)
    correct = kept_pred = kept_gold = 0
    for key, p in pred.items():
        g = gold[key]
        if p not in excluded:
            kept_pred += 1
        if g not in excluded:
            kept_gold += 1
            if p == g:
                correct += 1
    precision = correct / kept_pred if kept_pred else 0.0
    recall = correct / kept_gold if kept_gold else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


@dataclass
class EvalReport:
    """Pairwise evaluation breakdown for one corpus."""

    labels: tuple[str, ...]
    micro: tuple[float, float, float]
    per_label: dict[str, tuple[float, float, float, int]]
    confusion: np.ndarray
    n_pairs: int
    excluded: tuple[str, ...] = ()
    violations: int = 0
    awareness: tuple[float, float, float] | None = None
    extra: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        rows = []
        for r in self.labels:
            p, rc, f1, support = self.per_label[r]
            rows.append({"row": r, "precision": p, "recall": rc, "f1": f1,
                         "support": support})
        rows.append({"row": "micro", "precision": self.micro[0],
                     "recall": self.micro[1], "f1": self.micro[2],
                     "support": self.n_pairs})
        if self.awareness is not None:
            rows.append({"row": "graph", "precision": self.awareness[0],
                         "recall": self.awareness[1], "f1": self.awareness[2],
                         "support": self.n_pairs})
        return rows

    def to_text(self) -> str:
        lines = [f"{'label':<14}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for rec in self.to_records():
            lines.append(
                f"{rec['row']:<14}{rec['precision']:>8.4f}{rec['recall']:>8.4f}"
                f"{rec['f1']:>8.4f}{rec['support']:>9d}"
            )
        if self.excluded:
            lines.append(f"excluded from micro: {', '.join(self.excluded)}")
        lines.append(f"pairs: {self.n_pairs}  violations: {self.violations}")
        return "\n".join(lines)


def build_report(pred: Mapping[tuple, str], gold: Mapping[tuple, str],
                 scheme: LabelScheme, exclude: Iterable[str] = (),
                 violations: int = 0,
                 awareness: tuple[float, float, float] | None = None
                 ) -> EvalReport:
    excluded = tuple(exclude)
    for r in excluded:
        scheme.index(r)  # unknown exclusion labels are an error
    micro = micro_average(pred, gold, excluded)
    n = scheme.n
    confusion = np.zeros((n, n), dtype=np.int64)
    for key, p in pred.items():
        confusion[scheme.index(gold[key]), scheme.index(p)] += 1
    per_label = {}
    for k, r in enumerate(scheme.labels):
        tp = int(confusion[k, k])
        npred = int(confusion[:, k].sum())
        ngold = int(confusion[k, :].sum())
        p = tp / npred if npred else 0.0
        rc = tp / ngold if ngold else 0.0
        f1 = 2 * p * rc / (p + rc) if p + rc else 0.0
        per_label[r] = (p, rc, f1, ngold)
    if int(confusion.sum()) != len(pred):
        raise DataError("confusion counts lost pairs")  # defensive; cannot happen
    return EvalReport(labels=scheme.labels, micro=micro, per_label=per_label,
                      confusion=confusion, n_pairs=len(pred), excluded=excluded,
                      violations=violations, awareness=awareness)


# ---------------------------------------------------------------------------
# definite-edge graphs, closure, reduction


@dataclass
class TemporalGraph:
    """Definite edges in canonical orientation (smaller event id first)."""

    edges: dict[Pair, str] = field(default_factory=dict)
    rank: dict[Pair, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def copy(self) -> "TemporalGraph":
        return TemporalGraph(edges=dict(self.edges), rank=dict(self.rank),
                             notes=list(self.notes))

    def events(self) -> list[str]:
        seen: set[str] = set()
        for (a, b) in self.edges:
            seen.add(a)
            seen.add(b)
        return sorted(seen)


def graph_from_labels(labels: Mapping[Pair, str],
                      scheme: LabelScheme) -> TemporalGraph:
    """Canonicalize a labeled pair map, dropping vague edges.

    When both orders of a pair are present with incompatible labels the
    earlier one wins and a note records the conflict.
    """
    g = TemporalGraph()
    for (i, j), r in labels.items():
        if r == scheme.vague:
            continue
        key, lab = ((i, j), r) if i <= j else ((j, i), reverse_label(scheme, r))
        if key in g.edges:
            if g.edges[key] != lab:
                g.notes.append(f"conflicting labels on {key}: kept {g.edges[key]}")
            continue
        g.edges[key] = lab
        g.rank[key] = len(g.rank)
    return g


def _both_orders(g: TemporalGraph, scheme: LabelScheme) -> dict[Pair, str]:
    out = {}
    for (a, b), r in g.edges.items():
        out[(a, b)] = r
        out[(b, a)] = reverse_label(scheme, r)
    return out


def graph_violations(g: TemporalGraph, scheme: LabelScheme):
    flags = ConstraintSet(symmetry=False, transitivity=True, causal=False)
    return validate_graph(Assignment(labels=_both_orders(g, scheme)),
                          scheme, flags)


def sanitize(g: TemporalGraph, scheme: LabelScheme) -> TemporalGraph:
    """Drop newest-first edges until no transitivity violation remains."""
    g = g.copy()
    while True:
        violations = graph_violations(g, scheme)
        if not violations:
            return g
        involved: set[Pair] = set()
        for v in violations:
            for (i, j) in v.pairs:
                involved.add((i, j) if i <= j else (j, i))
        victim = max(involved, key=lambda key: g.rank[key])
        del g.edges[victim]
        del g.rank[victim]
        g.notes.append(f"sanitized away {victim}")


def transitive_closure(g: TemporalGraph, scheme: LabelScheme) -> TemporalGraph:
    """Add every edge forced by a unique definite composition.

    A derived label that contradicts an existing edge is discarded (the
    existing edge is older, hence more confident) and noted.
    """
    table = scheme.composition()
    out = g.copy()

    def label_of(a: str, b: str) -> str | None:
        if (a, b) in out.edges:
            return out.edges[(a, b)]
        if (b, a) in out.edges:
            return reverse_label(scheme, out.edges[(b, a)])
        return None

    events = out.events()
    changed = True
    while changed:
        changed = False
        for b in events:
            for a in events:
                if a == b:
                    continue
                r1 = label_of(a, b)
                if r1 is None:
                    continue
                for c in events:
                    if c == a or c == b:
                        continue
                    r2 = label_of(b, c)
                    if r2 is None:
                        continue
                    comp = table.compose(r1, r2)
                    if len(comp) != 1:
                        continue
                    (r3,) = comp
                    if r3 == scheme.vague:
                        continue
                    existing = label_of(a, c)
                    if existing is None:
                        key, lab = ((a, c), r3) if a <= c else ((c, a),
                                    reverse_label(scheme, r3))
                        out.edges[key] = lab
                        out.rank[key] = len(out.rank)
                        changed = True
                    elif existing != r3:
                        out.notes.append(
                            f"closure conflict on ({a},{c}): {existing} vs {r3}")
    return out


def transitive_reduction(g: TemporalGraph, scheme: LabelScheme) -> TemporalGraph:
    """Smallest greedy subset of the closure with the same closure.

    Starts from the closure so that a graph and its closure reduce to
    the same core; candidate edges are removed in sorted-key order
    whenever the remaining edges still derive them.
    """
    closed = transitive_closure(g, scheme)
    kept = closed.copy()
    for key in sorted(closed.edges):
        label = kept.edges.get(key)
        if label is None:
            continue
        trial = kept.copy()
        del trial.edges[key]
        del trial.rank[key]
        reclosed = transitive_closure(trial, scheme)
        if reclosed.edges.get(key) == label:
            kept = trial
    return kept


def temporal_awareness(preds: list[Mapping[Pair, str]],
                       golds: list[Mapping[Pair, str]],
                       scheme: LabelScheme) -> tuple[float, float, float]:
    """Closure/reduction-based graph scores summed over documents."""
    if len(preds) != len(golds):
        raise DataError("temporal_awareness: document lists differ in length")
    matched = pred_core = gold_core = 0
    for pred, gold in zip(preds, golds):
        gp = sanitize(graph_from_labels(pred, scheme), scheme)
        gg = sanitize(graph_from_labels(gold, scheme), scheme)
        rp = transitive_reduction(gp, scheme)
        cg = transitive_closure(gg, scheme)
        rg = transitive_reduction(gg, scheme)
        matched += sum(1 for key, r in rp.edges.items()
                       if cg.edges.get(key) == r)
        pred_core += len(rp.edges)
        gold_core += len(rg.edges)
    precision = matched / pred_core if pred_core else 0.0
    recall = matched / gold_core if gold_core else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# paired significance


class McNemarResult(NamedTuple):
    p_value: float
    b: int
    c: int
    method: str
    note: str = ""


def mcnemar(pred_a: Mapping, pred_b: Mapping, gold: Mapping,
            method: str = "exact") -> McNemarResult:
    """Two-sided McNemar test on per-pair correctness of two systems.

    ``b`` counts pairs only system A got right, ``c`` pairs only system
    B got right.  The exact variant doubles the binomial tail at
    min(b, c) and caps at 1; the continuity-corrected chi-square variant
    is available for b + c >= 25.  ``auto`` switches at that point.
    """
    if set(pred_a) != set(pred_b) or set(pred_a) != set(gold):
        raise DataError("mcnemar: the three maps must share one domain")
    b = sum(1 for k in gold if pred_a[k] == gold[k] and pred_b[k] != gold[k])
    c = sum(1 for k in gold if pred_a[k] != gold[k] and pred_b[k] == gold[k])
    n = b + c
    if n == 0:
        return McNemarResult(1.0, b, c, "exact",
                             note="systems disagree on no pair")
    if method == "auto":
        method = "chi2" if n >= 25 else "exact"
    if method == "exact":
        tail = sum(math.comb(n, k) for k in range(min(b, c) + 1)) / 2.0 ** n
        return McNemarResult(min(1.0, 2.0 * tail), b, c, "exact")
    if method == "chi2":
        if n < 25:
            raise DataError("chi-square variant needs b + c >= 25")
        x2 = (abs(b - c) - 1.0) ** 2 / n
        p = math.erfc(math.sqrt(x2 / 2.0))
        return McNemarResult(p, b, c, "chi2")
    raise DataError(f"unknown mcnemar method {method!r}")
