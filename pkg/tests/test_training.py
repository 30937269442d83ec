"""Training mechanics: hinge arithmetic, optimizers, logs, model selection."""

import numpy as np
import pytest

from temprel.corpus import Instance, build_instance
from temprel.embeddings import NumericEmbeddings
from temprel.errors import DataError, TrainingError
from temprel.inference import Assignment, ConstraintSet, ScoreTable
from temprel.labels import load_scheme
from temprel.model import ModelConfig, init_params
from temprel.synthetic import synthesize_corpus
from temprel.training import (
    LOCAL_DECODE,
    Adam,
    MetricsLog,
    MomentumSGD,
    TrainSettings,
    _margin_rows,
    evaluate_model,
    hamming,
    ssvm_instance_loss,
    train_global,
    train_local,
)

FULL = ConstraintSet(symmetry=True, transitivity=True, causal=False)


def point4():
    return load_scheme("point4")


def two_pair_table():
    # pair 1 agrees under the preds below; pair 2 is the disputed one
    return ScoreTable(
        doc_id="d",
        pairs=[("a", "b"), ("b", "c")],
        temporal={("a", "b"): np.array([1.0, 0.0, 0.0, 0.0]),
                  ("b", "c"): np.array([0.0, 0.5, 0.1, 0.0])},
    )


def test_hamming_counts_both_channels():
    gold = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "VAGUE"},
                      causal={("a", "b"): "CAUSES"})
    same = Assignment(labels=dict(gold.labels), causal=dict(gold.causal))
    assert hamming(same, gold) == 0
    pred = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "AFTER"},
                      causal={("a", "b"): "CAUSED_BY"})
    assert hamming(pred, gold) == 2


def test_hinge_matches_hand_arithmetic():
    scheme = point4()
    table = two_pair_table()
    gold = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "AFTER"})
    pred = Assignment(labels={("a", "b"): "BEFORE",
                              ("b", "c"): "SIMULTANEOUS"})
    # delta 1, score gap 0.1 - 0.5, M 2: (1 - 0.4) / 2
    assert ssvm_instance_loss(table, pred, gold, scheme, 2) \
        == pytest.approx(0.3)
    assert ssvm_instance_loss(table, gold, gold, scheme, 2) == 0.0
    with pytest.raises(DataError, match="no variables"):
        ssvm_instance_loss(table, pred, gold, scheme, 0)


def test_hinge_clamps_at_zero():
    scheme = point4()
    table = two_pair_table()
    gold = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "AFTER"})
    # the wrong label trails gold by more than the hamming bonus
    pred = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "VAGUE"})
    table.temporal[("b", "c")][3] = -2.0
    assert ssvm_instance_loss(table, pred, gold, scheme, 2) == 0.0


def test_margin_rows_pin():
    scheme = point4()
    table = two_pair_table()
    gold = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "AFTER"})
    pred = Assignment(labels={("a", "b"): "BEFORE",
                              ("b", "c"): "SIMULTANEOUS"})
    dt, dc = _margin_rows(table, pred, gold, scheme, 2)
    assert dc is None
    want = np.array([[0.0, 0.0, 0.0, 0.0],
                     [0.0, -0.5, 0.5, 0.0]])
    assert np.array_equal(dt, want)


def test_margin_rows_cover_causal_channel():
    scheme = point4()
    table = two_pair_table()
    table.causal_pairs = [("a", "b")]
    table.causal = {("a", "b"): np.array([0.2, 0.1])}
    gold = Assignment(labels={("a", "b"): "BEFORE", ("b", "c"): "AFTER"},
                      causal={("a", "b"): "CAUSES"})
    pred = Assignment(labels=dict(gold.labels),
                      causal={("a", "b"): "CAUSED_BY"})
    dt, dc = _margin_rows(table, pred, gold, scheme, 3)
    assert not dt.any()
    assert np.allclose(dc, [[-1 / 3, 1 / 3]])


def tiny_model(scheme, seed=0, **kw):
    cfg = ModelConfig(n_labels=scheme.n,
                      n_causal=scheme.causal.n if scheme.causal else 0,
                      d_word=38, d_pos=6, d_in=12, hidden=8, layers=1,
                      **kw)
    return cfg, init_params(cfg, np.random.default_rng(seed))


def test_adam_first_step_is_signed_lr():
    scheme = point4()
    _, params = tiny_model(scheme)
    name = sorted(params.tensors)[0]
    before = params.tensors[name].copy()
    g = np.ones_like(before)
    g.flat[0] = -3.0
    Adam(lr=0.01).step(params, {name: g})
    # with zero moment history the update reduces to lr * sign(g)
    assert np.allclose(before - params.tensors[name], 0.01 * np.sign(g),
                       atol=1e-6)


def test_momentum_sgd_velocity_and_decay():
    scheme = point4()
    _, params = tiny_model(scheme)
    zero = params.zeros_like()

    frozen = params.copy()
    MomentumSGD(lr=0.0, momentum=0.9, weight_decay=0.3).step(params, zero)
    assert all(np.array_equal(params.tensors[k], frozen.tensors[k])
               for k in params.tensors)

    name = sorted(params.tensors)[0]
    start = params.tensors[name].copy()
    grads = params.zeros_like()
    grads[name] = np.ones_like(start)
    opt = MomentumSGD(lr=0.1, momentum=0.5)
    opt.step(params, grads)
    assert np.allclose(params.tensors[name], start - 0.1)
    opt.step(params, grads)
    # velocity: 0.5 * (-0.1) - 0.1 = -0.15 on top of the first step
    assert np.allclose(params.tensors[name], start - 0.25)

    _, params = tiny_model(scheme)
    start = params.tensors[name].copy()
    MomentumSGD(lr=0.1, momentum=0.0, weight_decay=0.2).step(
        params, params.zeros_like())
    assert np.allclose(params.tensors[name], start * (1.0 - 0.1 * 0.2))


# ---------------------------------------------------------------------------
# metrics log


def test_metrics_log_round_trip(tmp_path):
    log = MetricsLog()
    log.add(epoch=0, stage="local", train_loss=1.25, dev_p=0.5, dev_r=0.25,
            dev_f1=0.333333, violations=4)
    log.add(epoch=1, stage="global", train_loss=0.5, dev_p=1.0, dev_r=1.0,
            dev_f1=1.0, violations=0)
    path = tmp_path / "curve.tsv"
    log.write(path)
    back = MetricsLog.read(path)
    assert back.rows == log.rows


def test_metrics_log_rejects_bad_shapes(tmp_path):
    log = MetricsLog()
    with pytest.raises(DataError, match="metrics row needs"):
        log.add(epoch=0, stage="local")
    path = tmp_path / "curve.tsv"
    path.write_text("epoch\tstage\n0\tlocal\n")
    with pytest.raises(DataError, match="not a metrics log"):
        MetricsLog.read(path)
    good = MetricsLog()
    good.add(epoch=0, stage="local", train_loss=0.0, dev_p=0.0, dev_r=0.0,
             dev_f1=0.0, violations=0)
    good.write(path)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("1\tlocal\t0.1\n")
    with pytest.raises(DataError, match="ragged"):
        MetricsLog.read(path)


# ---------------------------------------------------------------------------
# stage behavior on small corpora


def small_setup(seed=0, docs=8, noise=0.2, dev_docs=4):
    scheme = load_scheme("dense6")
    train_docs = synthesize_corpus(scheme, seed=seed, docs=docs,
                                   events_per_doc=4, noise=noise,
                                   causal_rate=0.0, id_prefix="tr")
    dev = synthesize_corpus(scheme, seed=seed + 99, docs=dev_docs,
                            events_per_doc=4, noise=noise,
                            causal_rate=0.0, id_prefix="dv")
    train = [build_instance(d, scheme) for d in train_docs]
    dev = [build_instance(d, scheme) for d in dev]
    source = NumericEmbeddings(38)
    cfg = ModelConfig(n_labels=scheme.n, d_word=38, d_pos=6, d_in=12,
                      hidden=8, layers=1, dropout=0.25)
    params = init_params(cfg, np.random.default_rng(seed))
    return scheme, train, dev, source, params


def test_stage_one_is_seed_deterministic():
    scheme, train, dev, source, params = small_setup()
    st = TrainSettings(epochs_local=2, seed=5)
    m1, log1 = train_local(params, train, dev, scheme, source, st)
    m2, log2 = train_local(params, train, dev, scheme, source, st)
    assert log1.rows == log2.rows
    assert set(m1.tensors) == set(m2.tensors)
    assert all(np.array_equal(m1.tensors[k], m2.tensors[k])
               for k in m1.tensors)


def test_stage_one_needs_pairs_and_finite_loss():
    scheme, train, dev, source, params = small_setup()
    st = TrainSettings(epochs_local=1)
    empty = [Instance(doc=inst.doc, pairs=[], gold={}) for inst in train]
    with pytest.raises(TrainingError, match="no training pairs"):
        train_local(params, empty, dev, scheme, source, st)
    poisoned = params.copy()
    name = sorted(poisoned.tensors)[0]
    poisoned.tensors[name][:] = np.nan
    with pytest.raises(TrainingError, match="diverged"):
        train_local(poisoned, train, dev, scheme, source, st)


def test_stage_two_patience_keeps_warm_start():
    scheme, train, dev, source, params = small_setup()
    st = TrainSettings(epochs_local=1, epochs_global=10, patience=2,
                       lr_global=0.0)
    warm, _ = train_local(params, train, dev, scheme, source, st)
    best, log = train_global(warm, train, dev, scheme, source, st, FULL)
    stage2 = [r for r in log.rows if r["stage"] == "global"]
    # zero learning rate never beats the warm start, so patience cuts in
    assert len(stage2) == st.patience
    assert all(np.array_equal(best.tensors[k], warm.tensors[k])
               for k in warm.tensors)


def test_stage_two_never_selects_below_warm_start():
    scheme, train, dev, source, params = small_setup(noise=0.35)
    st = TrainSettings(epochs_local=4, epochs_global=3, patience=3,
                       lr_global=0.05)
    warm, _ = train_local(params, train, dev, scheme, source, st)
    best, _ = train_global(warm, train, dev, scheme, source, st, FULL)
    f1_warm = evaluate_model(warm, dev, source, scheme, FULL)[2]
    f1_best = evaluate_model(best, dev, source, scheme, FULL)[2]
    assert f1_best >= f1_warm - 1e-12


def test_evaluate_model_handles_empty_dev():
    scheme, _, _, source, params = small_setup()
    assert evaluate_model(params, [], source, scheme, LOCAL_DECODE) \
        == (0.0, 0.0, 0.0, 0)


def test_clean_corpus_is_learnable_locally():
    scheme = load_scheme("dense6")
    train_docs = synthesize_corpus(scheme, seed=3, docs=50, events_per_doc=5,
                                   noise=0.0, causal_rate=0.0, id_prefix="tr")
    dev_docs = synthesize_corpus(scheme, seed=303, docs=20, events_per_doc=5,
                                 noise=0.0, causal_rate=0.0, id_prefix="dv")
    train = [build_instance(d, scheme) for d in train_docs]
    dev = [build_instance(d, scheme) for d in dev_docs]
    source = NumericEmbeddings(40)
    cfg = ModelConfig(n_labels=scheme.n, d_word=40, d_pos=6, d_in=40,
                      hidden=40, layers=1, dropout=0.0, features=True)
    params = init_params(cfg, np.random.default_rng(3))
    st = TrainSettings(epochs_local=15, lr_local=2e-3, seed=3)
    best, _ = train_local(params, train, dev, scheme, source, st)
    f1 = evaluate_model(best, dev, source, scheme, LOCAL_DECODE)[2]
    assert f1 >= 0.7
