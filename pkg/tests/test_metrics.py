import numpy as np
import pytest

from temprel.errors import DataError, SchemeError
from temprel.labels import classify_pair, load_scheme
from temprel.metrics import (EvalReport, build_report, graph_from_labels,
                             graph_violations, mcnemar, micro_average,
                             sanitize, temporal_awareness, transitive_closure,
                             transitive_reduction)

dense6 = load_scheme("dense6")


def interval_label_map(rng, n_events=5, keep=0.75, npts=10):
    """Pair labels realized by concrete intervals: consistent by construction."""
    ivs = {}
    for k in range(n_events):
        s = int(rng.integers(0, npts))
        ivs[f"e{k}"] = (s, s + int(rng.choice([1, 2, 3, 5])))
    ids = sorted(ivs)
    labels = {}
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if rng.random() < keep:
                labels[(a, b)] = classify_pair(dense6, ivs[a], ivs[b])
    return labels


# ---------------------------------------------------------------------------
# micro average


def test_micro_with_exclusion_frozen_counts():
    V = dense6.vague
    gold = {0: "BEFORE", 1: "BEFORE", 2: "AFTER", 3: "AFTER", 4: "INCLUDES",
            5: "SIMULTANEOUS", 6: "BEFORE", 7: "IS_INCLUDED", 8: V, 9: V}
    pred = dict(gold)
    pred[6] = "AFTER"   # kept in both denominators, wrong
    pred[7] = V         # leaves the prediction denominator
    pred[8] = "BEFORE"  # enters the prediction denominator
    pred[9] = "AFTER"
    p, r, f1 = micro_average(pred, gold, exclude=(V,))
    assert p == pytest.approx(6 / 9)
    assert r == pytest.approx(6 / 8)
    assert f1 == pytest.approx(2 * (6 / 9) * (6 / 8) / (6 / 9 + 6 / 8))


def test_micro_without_exclusion_is_accuracy():
    gold = {k: "BEFORE" if k % 2 else "AFTER" for k in range(8)}
    pred = dict(gold)
    pred[0] = "BEFORE"
    pred[3] = "AFTER"
    p, r, f1 = micro_average(pred, gold)
    acc = sum(pred[k] == gold[k] for k in gold) / len(gold)
    assert p == r == f1 == pytest.approx(acc)


def test_micro_domain_mismatch():
    with pytest.raises(DataError, match="domains"):
        micro_average({0: "BEFORE"}, {1: "BEFORE"})


def test_all_excluded_gives_zeros():
    gold = {0: "VAGUE"}
    assert micro_average({0: "VAGUE"}, gold, exclude=("VAGUE",)) == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# report


def test_report_counts_and_text():
    gold = {0: "BEFORE", 1: "AFTER", 2: "BEFORE", 3: "VAGUE"}
    pred = {0: "BEFORE", 1: "BEFORE", 2: "BEFORE", 3: "AFTER"}
    rep = build_report(pred, gold, dense6, exclude=("VAGUE",), violations=2)
    assert isinstance(rep, EvalReport)
    assert int(rep.confusion.sum()) == 4 == rep.n_pairs
    p, r, f1, support = rep.per_label["BEFORE"]
    assert support == 2
    assert p == pytest.approx(2 / 3)  # three BEFORE predictions, two right
    assert r == 1.0
    assert rep.micro[0] == pytest.approx(2 / 4)  # all four predictions kept
    assert rep.micro[1] == pytest.approx(2 / 3)  # 2 of 3 kept references
    text = rep.to_text()
    assert "micro" in text and "violations: 2" in text
    rows = {rec["row"] for rec in rep.to_records()}
    assert rows == set(dense6.labels) | {"micro"}


def test_report_rejects_unknown_exclusion():
    with pytest.raises(SchemeError, match="unknown"):
        build_report({0: "BEFORE"}, {0: "BEFORE"}, dense6, exclude=("SOON",))


# ---------------------------------------------------------------------------
# graphs


def test_graph_canonicalization_and_conflicts():
    g = graph_from_labels({("a", "b"): "BEFORE", ("b", "a"): "BEFORE",
                           ("a", "c"): "VAGUE"}, dense6)
    assert g.edges == {("a", "b"): "BEFORE"}
    assert g.notes  # the reversed duplicate contradicted the first edge
    g2 = graph_from_labels({("b", "a"): "AFTER"}, dense6)
    assert g2.edges == {("a", "b"): "BEFORE"}


def test_sanitize_drops_newest_violating_edge():
    g = graph_from_labels({("a", "b"): "BEFORE", ("b", "c"): "BEFORE",
                           ("a", "c"): "AFTER"}, dense6)
    assert graph_violations(g, dense6)
    clean = sanitize(g, dense6)
    assert ("a", "c") not in clean.edges
    assert clean.edges == {("a", "b"): "BEFORE", ("b", "c"): "BEFORE"}
    assert not graph_violations(clean, dense6)


def test_sanitize_noop_on_realizable_graphs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = interval_label_map(rng)
        g = graph_from_labels(labels, dense6)
        assert sanitize(g, dense6).edges == g.edges


def test_closure_adds_unique_compositions_only():
    g = graph_from_labels({("a", "b"): "BEFORE", ("b", "c"): "SIMULTANEOUS",
                           ("c", "d"): "AFTER"}, dense6)
    closed = transitive_closure(g, dense6)
    # BEFORE then SIMULTANEOUS forces BEFORE (and its mirror AFTER);
    # BEFORE then AFTER forces nothing
    assert closed.edges[("a", "c")] == "BEFORE"
    assert closed.edges[("b", "d")] == "AFTER"
    assert ("a", "d") not in closed.edges


def test_closure_keeps_older_edge_on_conflict():
    g = graph_from_labels({("a", "b"): "BEFORE", ("b", "c"): "BEFORE",
                           ("a", "c"): "AFTER"}, dense6)
    closed = transitive_closure(g, dense6)
    assert closed.edges[("a", "c")] == "AFTER"
    assert any("conflict" in n for n in closed.notes)


def test_closure_idempotent_and_reduction_lossless():
    rng = np.random.default_rng(11)
    for _ in range(15):
        g = graph_from_labels(interval_label_map(rng), dense6)
        closed = transitive_closure(g, dense6)
        again = transitive_closure(closed, dense6)
        assert again.edges == closed.edges
        core = transitive_reduction(g, dense6)
        assert transitive_closure(core, dense6).edges == closed.edges
        # reducing the closure lands on the same core
        assert transitive_reduction(closed, dense6).edges == core.edges


def test_reduction_strips_chain_shortcut():
    g = graph_from_labels({("a", "b"): "BEFORE", ("b", "c"): "BEFORE",
                           ("a", "c"): "BEFORE"}, dense6)
    core = transitive_reduction(g, dense6)
    assert core.edges == {("a", "b"): "BEFORE", ("b", "c"): "BEFORE"}


# ---------------------------------------------------------------------------
# graph-level scores


def test_awareness_perfect_prediction():
    gold = {("a", "b"): "BEFORE", ("b", "c"): "BEFORE"}
    assert temporal_awareness([gold], [gold], dense6) == (1.0, 1.0, 1.0)


def test_awareness_credits_implied_edge():
    gold = {("a", "b"): "BEFORE", ("b", "c"): "BEFORE"}
    pred = {("a", "c"): "BEFORE"}
    p, r, f1 = temporal_awareness([pred], [gold], dense6)
    assert p == pytest.approx(1.0)
    assert r == pytest.approx(1 / 2)
    assert f1 == pytest.approx(2 / 3)


def test_awareness_empty_prediction():
    gold = {("a", "b"): "BEFORE"}
    pred = {("a", "b"): "VAGUE"}
    assert temporal_awareness([pred], [gold], dense6) == (0.0, 0.0, 0.0)


def test_awareness_closure_invariant():
    rng = np.random.default_rng(23)
    for _ in range(10):
        gold = interval_label_map(rng, keep=0.9)
        pred = dict(gold)
        # perturb a few edges to keep the comparison non-trivial
        for key in list(pred)[::3]:
            pred[key] = "VAGUE"
        base = temporal_awareness([pred], [gold], dense6)
        pred_closed = transitive_closure(graph_from_labels(pred, dense6),
                                         dense6).edges
        gold_closed = transitive_closure(graph_from_labels(gold, dense6),
                                         dense6).edges
        assert temporal_awareness([pred_closed], [gold], dense6) == \
            pytest.approx(base)
        assert temporal_awareness([pred], [gold_closed], dense6) == \
            pytest.approx(base)


def test_awareness_sums_over_documents():
    gold = {("a", "b"): "BEFORE", ("b", "c"): "BEFORE"}
    pred = {("a", "c"): "BEFORE"}
    empty = {("a", "b"): "VAGUE"}
    p, r, _ = temporal_awareness([pred, empty], [gold, gold], dense6)
    assert p == pytest.approx(1.0)      # 1 matched over 1 predicted core edge
    assert r == pytest.approx(1 / 4)    # 1 matched over 2 + 2 reference edges


def test_awareness_length_mismatch():
    with pytest.raises(DataError, match="length"):
        temporal_awareness([{}], [{}, {}], dense6)


# ---------------------------------------------------------------------------
# mcnemar


def _correctness_maps(b, c, both_right=5, both_wrong=5):
    gold, pa, pb = {}, {}, {}
    k = 0
    for count, (a_ok, b_ok) in ((b, (True, False)), (c, (False, True)),
                                (both_right, (True, True)),
                                (both_wrong, (False, False))):
        for _ in range(count):
            gold[k] = "BEFORE"
            pa[k] = "BEFORE" if a_ok else "AFTER"
            pb[k] = "BEFORE" if b_ok else "VAGUE"
            k += 1
    return pa, pb, gold


def test_mcnemar_exact_frozen():
    pa, pb, gold = _correctness_maps(b=1, c=9)
    res = mcnemar(pa, pb, gold)
    assert (res.b, res.c, res.method) == (1, 9, "exact")
    assert res.p_value == pytest.approx(0.021484375, abs=1e-12)


def test_mcnemar_symmetry_and_cap():
    pa, pb, gold = _correctness_maps(b=3, c=4)
    fwd = mcnemar(pa, pb, gold)
    rev = mcnemar(pb, pa, gold)
    assert fwd.p_value == pytest.approx(rev.p_value)
    assert (fwd.b, fwd.c) == (rev.c, rev.b)
    assert fwd.p_value <= 1.0
    balanced = mcnemar(*_correctness_maps(b=2, c=2))
    assert balanced.p_value == 1.0  # doubled tail capped


def test_mcnemar_no_disagreement():
    pa, pb, gold = _correctness_maps(b=0, c=0)
    res = mcnemar(pa, pb, gold)
    assert res.p_value == 1.0
    assert "no pair" in res.note


def test_mcnemar_chi2_frozen():
    pa, pb, gold = _correctness_maps(b=20, c=5)
    res = mcnemar(pa, pb, gold, method="chi2")
    assert res.p_value == pytest.approx(0.005110260660855864, abs=1e-12)
    auto = mcnemar(pa, pb, gold, method="auto")
    assert auto.method == "chi2"


def test_mcnemar_guards():
    pa, pb, gold = _correctness_maps(b=1, c=2)
    assert mcnemar(pa, pb, gold, method="auto").method == "exact"
    with pytest.raises(DataError, match="b \\+ c >= 25"):
        mcnemar(pa, pb, gold, method="chi2")
    with pytest.raises(DataError, match="unknown"):
        mcnemar(pa, pb, gold, method="median")
    with pytest.raises(DataError, match="domain"):
        mcnemar({0: "BEFORE"}, pb, gold)
