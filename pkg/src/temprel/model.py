"""Pairwise relation scorer: embeddings, recurrent encoder, linear heads.

All math is float64 numpy with hand-written backward passes.  Word
vectors are fixed inputs (sidecar file or hashed fallback) and receive
no updates; part-of-speech embeddings, the input projection, the
recurrent cells, and the scoring heads are trainable.

Per token the encoder produces a forward state f_k and a backward state
b_k from a stacked bidirectional gated recurrent network (input, forget,
output gating with a tanh candidate).  A pair (i, j) is scored from
concat(f_i, b_i, f_j, b_j) plus optional categorical features, through
one affine head for temporal labels and, when the scheme declares causal
labels, a separate affine head for causal pairs; exactly one head is
active for any given pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .corpus import Document, Instance
from .errors import DataError
from .inference import ScoreTable
from .labels import LabelScheme


@dataclass
class ModelConfig:
    n_labels: int
    n_causal: int = 0
    num_pos_tags: int = 16
    d_word: int = 32
    d_pos: int = 8
    d_in: int = 32
    hidden: int = 32
    layers: int = 1
    dropout: float = 0.0
    features: bool = False
    n_tense: int = 8
    n_polarity: int = 4
    distance_buckets: int = 6

    @property
    def feature_dim(self) -> int:
        if not self.features:
            return 0
        return self.distance_buckets + 2 * (self.n_tense + self.n_polarity)

    @property
    def pair_dim(self) -> int:
        return 4 * self.hidden + self.feature_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(config=self.config,
                           tensors={k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fan-in scaled uniform for affine maps, orthogonal recurrence."""
    t: dict[str, np.ndarray] = {}

    def affine(name: str, rows: int, cols: int):
        lim = 1.0 / np.sqrt(cols)
        t[f"{name}_W"] = rng.uniform(-lim, lim, size=(rows, cols))
        t[f"{name}_b"] = np.zeros(rows)

    t["pos_emb"] = rng.uniform(-1.0, 1.0,
                               size=(config.num_pos_tags, config.d_pos))
    t["pos_emb"] /= np.sqrt(config.d_pos)
    affine("proj", config.d_in, config.d_word + config.d_pos)
    h = config.hidden
    for layer in range(config.layers):
        d_in = config.d_in if layer == 0 else 2 * h
        for direction in ("f", "b"):
            lim = 1.0 / np.sqrt(d_in)
            t[f"rnn{layer}_{direction}_W"] = rng.uniform(-lim, lim, size=(4 * h, d_in))
            t[f"rnn{layer}_{direction}_U"] = np.vstack(
                [_orthogonal(rng, h) for _ in range(4)]
            )
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget-gate bias starts open
            t[f"rnn{layer}_{direction}_b"] = b
    affine("head_t", config.n_labels, config.pair_dim)
    if config.n_causal:
        affine("head_c", config.n_causal, config.pair_dim)
    return ModelParams(config=config, tensors=t)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# recurrent scan


def _scan(W, U, b, inputs):
    """Left-to-right gated scan; returns states and the backward cache."""
    T = inputs.shape[0]
    H = U.shape[1]
    i_s = np.empty((T, H)); f_s = np.empty((T, H))
    o_s = np.empty((T, H)); g_s = np.empty((T, H))
    c_s = np.empty((T, H)); tau_s = np.empty((T, H))
    h_s = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        a = W @ inputs[t] + U @ h + b
        i = _sigmoid(a[:H]); f = _sigmoid(a[H:2 * H])
        o = _sigmoid(a[2 * H:3 * H]); g = np.tanh(a[3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tau = np.tanh(c)
        h = o * tau
        i_s[t] = i; f_s[t] = f; o_s[t] = o; g_s[t] = g
        c_s[t] = c; tau_s[t] = tau; h_s[t] = h
    cache = dict(inputs=inputs, i=i_s, f=f_s, o=o_s, g=g_s, c=c_s, tau=tau_s,
                 h=h_s)
    return h_s, cache


def _scan_backward(W, U, b, cache, dh_ext):
    """Backward pass of ``_scan``; returns (dW, dU, db, dinputs)."""
    inputs = cache["inputs"]
    T, H = cache["h"].shape
    dW = np.zeros_like(W); dU = np.zeros_like(U); db = np.zeros_like(b)
    dinputs = np.zeros_like(inputs)
    dh_carry = np.zeros(H)
    dc_carry = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = cache["i"][t]; f = cache["f"][t]; o = cache["o"][t]; g = cache["g"][t]
        tau = cache["tau"][t]
        c_prev = cache["c"][t - 1] if t > 0 else np.zeros(H)
        h_prev = cache["h"][t - 1] if t > 0 else np.zeros(H)
        dh = dh_ext[t] + dh_carry
        do = dh * tau
        dc = dc_carry + dh * o * (1.0 - tau * tau)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_carry = dc * f
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ])
        dW += np.outer(da, inputs[t])
        dU += np.outer(da, h_prev)
        db += da
        dinputs[t] = W.T @ da
        dh_carry = U.T @ da
    return dW, dU, db, dinputs


# ---------------------------------------------------------------------------
# document encoding


def embed_tokens(params: ModelParams, doc: Document,
                 word_vectors: np.ndarray) -> tuple[np.ndarray, dict]:
    """Project fixed word vectors plus trainable tag embeddings."""
    cfg = params.config
    if word_vectors.shape != (len(doc.tokens), cfg.d_word):
        raise DataError(
            f"document {doc.id!r}: word vectors shaped {word_vectors.shape}, "
            f"expected ({len(doc.tokens)}, {cfg.d_word})"
        )
    pos_ids = np.asarray(doc.pos, dtype=np.int64)
    if pos_ids.size and (pos_ids.min() < 0 or pos_ids.max() >= cfg.num_pos_tags):
        raise DataError(f"document {doc.id!r}: pos tag id out of range")
    stacked = np.concatenate([word_vectors, params.tensors["pos_emb"][pos_ids]],
                             axis=1)
    x = stacked @ params.tensors["proj_W"].T + params.tensors["proj_b"]
    cache = dict(stacked=stacked, pos_ids=pos_ids)
    return x, cache


def encode_context(params: ModelParams, x: np.ndarray, train: bool = False,
                   rng: np.random.Generator | None = None):
    """Stacked bidirectional scan; dropout between layers at train time."""
    cfg = params.config
    if train and cfg.dropout > 0.0 and rng is None:
        raise DataError("training-mode encoding with dropout needs an rng")
    layer_caches = []
    inputs = x
    for layer in range(cfg.layers):
        mask = None
        if train and cfg.dropout > 0.0 and layer > 0:
            keep = 1.0 - cfg.dropout
            mask = (rng.random(inputs.shape) < keep) / keep
            inputs = inputs * mask
        hf, cache_f = _scan(params.tensors[f"rnn{layer}_f_W"],
                            params.tensors[f"rnn{layer}_f_U"],
                            params.tensors[f"rnn{layer}_f_b"], inputs)
        hb_rev, cache_b = _scan(params.tensors[f"rnn{layer}_b_W"],
                                params.tensors[f"rnn{layer}_b_U"],
                                params.tensors[f"rnn{layer}_b_b"], inputs[::-1])
        hb = hb_rev[::-1]
        layer_caches.append(dict(mask=mask, f=cache_f, b=cache_b))
        inputs = np.concatenate([hf, hb], axis=1)
    fwd = inputs[:, :cfg.hidden]
    bwd = inputs[:, cfg.hidden:]
    return fwd, bwd, layer_caches


def _encode_backward(params: ModelParams, layer_caches, dfwd, dbwd):
    cfg = params.config
    grads: dict[str, np.ndarray] = {}
    dout = np.concatenate([dfwd, dbwd], axis=1)
    for layer in range(cfg.layers - 1, -1, -1):
        cache = layer_caches[layer]
        dhf = dout[:, :cfg.hidden]
        dhb = dout[:, cfg.hidden:]
        dWf, dUf, dbf, din_f = _scan_backward(
            params.tensors[f"rnn{layer}_f_W"], params.tensors[f"rnn{layer}_f_U"],
            params.tensors[f"rnn{layer}_f_b"], cache["f"], dhf)
        dWb, dUb, dbb, din_b_rev = _scan_backward(
            params.tensors[f"rnn{layer}_b_W"], params.tensors[f"rnn{layer}_b_U"],
            params.tensors[f"rnn{layer}_b_b"], cache["b"], dhb[::-1])
        grads[f"rnn{layer}_f_W"] = dWf; grads[f"rnn{layer}_f_U"] = dUf
        grads[f"rnn{layer}_f_b"] = dbf
        grads[f"rnn{layer}_b_W"] = dWb; grads[f"rnn{layer}_b_U"] = dUb
        grads[f"rnn{layer}_b_b"] = dbb
        din = din_f + din_b_rev[::-1]
        if cache["mask"] is not None:
            din = din * cache["mask"]
        dout = din
    return grads, dout  # dout is now the gradient w.r.t. projected inputs


# ---------------------------------------------------------------------------
# pair features and scoring


def pair_features(doc: Document, pair, cfg: ModelConfig) -> np.ndarray:
    """Distance bucket plus per-event tense and polarity one-hots."""
    ei, ej = doc.event(pair[0]), doc.event(pair[1])
    out = np.zeros(cfg.feature_dim)
    if not cfg.features:
        return out
    dist = min(abs(ej.token - ei.token), cfg.distance_buckets - 1)
    out[dist] = 1.0
    base = cfg.distance_buckets
    for ev in (ei, ej):
        if not 0 <= ev.tense < cfg.n_tense:
            raise DataError(f"document {doc.id!r}: tense id {ev.tense} out of range")
        out[base + ev.tense] = 1.0
        base += cfg.n_tense
    for ev in (ei, ej):
        if not 0 <= ev.polarity < cfg.n_polarity:
            raise DataError(
                f"document {doc.id!r}: polarity id {ev.polarity} out of range")
        out[base + ev.polarity] = 1.0
        base += cfg.n_polarity
    return out


def score_pair(params: ModelParams, fwd, bwd, tok_i: int, tok_j: int,
               head: str, feats: np.ndarray | None = None,
               drop_mask: np.ndarray | None = None):
    u = np.concatenate([fwd[tok_i], bwd[tok_i], fwd[tok_j], bwd[tok_j]])
    if feats is not None and feats.size:
        u = np.concatenate([u, feats])
    if drop_mask is not None:
        u = u * drop_mask
    W = params.tensors[f"{head}_W"]
    b = params.tensors[f"{head}_b"]
    return W @ u + b, u


@dataclass
class ForwardContext:
    """Everything needed to push pair-score gradients back to parameters."""

    doc: Document
    embed_cache: dict
    layer_caches: list
    fwd: np.ndarray
    bwd: np.ndarray
    pair_rows: list          # (tok_i, tok_j, u, drop_mask) per temporal pair
    causal_rows: list


def score_instance(params: ModelParams, inst: Instance, word_vectors: np.ndarray,
                   train: bool = False,
                   rng: np.random.Generator | None = None
                   ) -> tuple[ScoreTable, ForwardContext]:
    """Score every candidate pair of one instance with a single encoding."""
    cfg = params.config
    x, embed_cache = embed_tokens(params, inst.doc, word_vectors)
    fwd, bwd, layer_caches = encode_context(params, x, train=train, rng=rng)

    def rows(pairs, head):
        table = {}
        cache_rows = []
        for p in pairs:
            ti = inst.doc.event(p[0]).token
            tj = inst.doc.event(p[1]).token
            feats = pair_features(inst.doc, p, cfg) if cfg.features else None
            mask = None
            if train and cfg.dropout > 0.0:
                keep = 1.0 - cfg.dropout
                mask = (rng.random(cfg.pair_dim) < keep) / keep
            scores, u = score_pair(params, fwd, bwd, ti, tj, head, feats, mask)
            table[p] = scores
            cache_rows.append((ti, tj, u, mask))
        return table, cache_rows

    temporal, pair_rows = rows(inst.pairs, "head_t")
    causal, causal_rows = ({}, [])
    if inst.causal_pairs:
        if cfg.n_causal == 0:
            raise DataError("instance has causal pairs but model has no causal head")
        causal, causal_rows = rows(inst.causal_pairs, "head_c")
    table = ScoreTable(doc_id=inst.doc.id, pairs=list(inst.pairs),
                       temporal=temporal, causal_pairs=list(inst.causal_pairs),
                       causal=causal)
    ctx = ForwardContext(doc=inst.doc, embed_cache=embed_cache,
                         layer_caches=layer_caches, fwd=fwd, bwd=bwd,
                         pair_rows=pair_rows, causal_rows=causal_rows)
    return table, ctx


def backprop_scores(params: ModelParams, ctx: ForwardContext,
                    d_temporal: np.ndarray, d_causal: np.ndarray | None = None
                    ) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(score) per pair row."""
    cfg = params.config
    grads = params.zeros_like()
    H = cfg.hidden
    dfwd = np.zeros_like(ctx.fwd)
    dbwd = np.zeros_like(ctx.bwd)

    def head_rows(head, rows, dscores):
        W = params.tensors[f"{head}_W"]
        for row, (ti, tj, u, mask) in zip(dscores, rows):
            grads[f"{head}_W"] += np.outer(row, u)
            grads[f"{head}_b"] += row
            du = W.T @ row
            if mask is not None:
                du = du * mask
            dfwd[ti] += du[:H]
            dbwd[ti] += du[H:2 * H]
            dfwd[tj] += du[2 * H:3 * H]
            dbwd[tj] += du[3 * H:4 * H]
            # feature block, when present, has no trainable inputs

    if len(d_temporal) != len(ctx.pair_rows):
        raise DataError("temporal gradient rows do not match scored pairs")
    head_rows("head_t", ctx.pair_rows, d_temporal)
    if ctx.causal_rows:
        if d_causal is None or len(d_causal) != len(ctx.causal_rows):
            raise DataError("causal gradient rows do not match scored pairs")
        head_rows("head_c", ctx.causal_rows, d_causal)

    enc_grads, dx = _encode_backward(params, ctx.layer_caches, dfwd, dbwd)
    grads.update(enc_grads)
    grads["proj_W"] += dx.T @ ctx.embed_cache["stacked"]
    grads["proj_b"] += dx.sum(axis=0)
    dstacked = dx @ params.tensors["proj_W"]
    dpos = dstacked[:, cfg.d_word:]
    np.add.at(grads["pos_emb"], ctx.embed_cache["pos_ids"], dpos)
    return grads


# ---------------------------------------------------------------------------
# losses on score rows


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(scores: np.ndarray, gold: np.ndarray
                  ) -> tuple[float, np.ndarray]:
    """Summed CE over rows plus d(loss)/d(scores)."""
    if scores.ndim != 2 or len(gold) != len(scores):
        raise DataError("cross_entropy expects one gold index per score row")
    logp = log_softmax(scores)
    idx = np.arange(len(gold))
    loss = float(-logp[idx, gold].sum())
    dscores = np.exp(logp)
    dscores[idx, gold] -= 1.0
    return loss, dscores
