"""Analytic gradients versus central finite differences, float64.

Covers the local cross-entropy loss and the pinned-prediction hinge
surrogate (margin term is constant once the prediction is fixed, so the
surrogate is differentiable).  Dropout is off: the comparison targets
the deterministic forward path.
"""

import numpy as np
import pytest

from temprel.corpus import Document, Event, Instance
from temprel.model import ModelConfig, backprop_scores, cross_entropy, \
    init_params, score_instance


def random_setup(rng, layers=1, features=False, causal=False):
    cfg = ModelConfig(
        n_labels=4,
        n_causal=2 if causal else 0,
        num_pos_tags=5,
        d_word=5,
        d_pos=3,
        d_in=4,
        hidden=4,
        layers=layers,
        dropout=0.0,
        features=features,
        n_tense=3,
        n_polarity=2,
    )
    T = int(rng.integers(5, 9))
    tokens = [f"w{k}" for k in range(T)]
    tags = [int(rng.integers(cfg.num_pos_tags)) for _ in range(T)]
    ev_tokens = sorted(rng.choice(T, size=3, replace=False).tolist())
    events = [Event(id=f"e{k}", token=t, tense=int(rng.integers(cfg.n_tense)),
                    polarity=int(rng.integers(cfg.n_polarity)))
              for k, t in enumerate(ev_tokens)]
    doc = Document(id="g", tokens=tokens, pos=tags, sentences=[(0, T)],
                   events=events, relations=[])
    pairs = [("e0", "e1"), ("e1", "e2"), ("e0", "e2"), ("e2", "e0")]
    causal_pairs = [("e0", "e1")] if causal else []
    inst = Instance(doc=doc, pairs=pairs, gold={}, causal_pairs=causal_pairs,
                    causal_gold={})
    params = init_params(cfg, rng)
    wv = rng.standard_normal((T, cfg.d_word))
    gold_t = rng.integers(cfg.n_labels, size=len(pairs))
    gold_c = rng.integers(2, size=len(causal_pairs)) if causal else None
    return cfg, params, inst, wv, gold_t, gold_c


def ce_loss(params, inst, wv, gold_t, gold_c):
    table, ctx = score_instance(params, inst, wv)
    S = np.stack([table.temporal[p] for p in inst.pairs])
    loss, ds = cross_entropy(S, gold_t)
    dsc = None
    if inst.causal_pairs:
        C = np.stack([table.causal[p] for p in inst.causal_pairs])
        closs, dsc = cross_entropy(C, gold_c)
        loss += closs
    return loss, ctx, ds, dsc


def hinge_loss(params, inst, wv, gold_t, pred_t):
    """(1/M) * (score(pred) - score(gold)) with pred pinned."""
    table, ctx = score_instance(params, inst, wv)
    S = np.stack([table.temporal[p] for p in inst.pairs])
    M = len(inst.pairs)
    loss = float((S[np.arange(M), pred_t] - S[np.arange(M), gold_t]).sum()) / M
    ds = np.zeros_like(S)
    ds[np.arange(M), pred_t] += 1.0 / M
    ds[np.arange(M), gold_t] -= 1.0 / M
    return loss, ctx, ds


def fd_gradient(loss_fn, tensor, h=1e-6):
    g = np.zeros_like(tensor)
    it = np.nditer(tensor, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        keep = tensor[idx]
        tensor[idx] = keep + h
        lp = loss_fn()
        tensor[idx] = keep - h
        lm = loss_fn()
        tensor[idx] = keep
        g[idx] = (lp - lm) / (2.0 * h)
    return g


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return np.linalg.norm(a - b) / denom


@pytest.mark.parametrize("seed,layers,features,causal", [
    (0, 1, False, False),
    (1, 2, False, False),
    (2, 1, True, False),
    (3, 1, False, True),
    (4, 2, True, True),
])
def test_cross_entropy_gradients_match_finite_differences(seed, layers,
                                                          features, causal):
    rng = np.random.default_rng(seed)
    cfg, params, inst, wv, gold_t, gold_c = random_setup(
        rng, layers=layers, features=features, causal=causal)
    _, ctx, ds, dsc = ce_loss(params, inst, wv, gold_t, gold_c)
    grads = backprop_scores(params, ctx, ds, dsc)
    for name, tensor in params.tensors.items():
        fd = fd_gradient(
            lambda: ce_loss(params, inst, wv, gold_t, gold_c)[0], tensor)
        err = relative_error(fd, grads[name])
        assert err < 1e-4, f"{name}: rel err {err:.2e}"


@pytest.mark.parametrize("seed", [10, 11])
def test_hinge_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cfg, params, inst, wv, gold_t, _ = random_setup(rng, layers=1)
    pred_t = (gold_t + 1 + rng.integers(cfg.n_labels - 1,
                                        size=len(gold_t))) % cfg.n_labels
    _, ctx, ds = hinge_loss(params, inst, wv, gold_t, pred_t)
    grads = backprop_scores(params, ctx, ds)
    for name, tensor in params.tensors.items():
        fd = fd_gradient(
            lambda: hinge_loss(params, inst, wv, gold_t, pred_t)[0], tensor)
        err = relative_error(fd, grads[name])
        assert err < 1e-4, f"{name}: rel err {err:.2e}"
