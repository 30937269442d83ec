"""Two-stage training: local cross-entropy, then a structured hinge.

Stage one treats every candidate pair as an independent classification
and minimizes cross-entropy with Adam.  Stage two starts from the stage
one weights and minimizes a margin-rescaled hinge per document,

    (1 / M) * max(0, hamming(y', y) + S(y') - S(y)),

where y' is the constrained decode (loss-augmented by default) and M is
the document's variable count.  Updates use momentum SGD; the quadratic
regularizer C * ||w||^2 enters as weight decay 2C on every step, and
the learning rate decays once per epoch.  Model selection watches dev
micro-F1 under each stage's own decoding mode; stage two stops early
after ``patience`` epochs without improvement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Instance, apply_direction
from .errors import DataError, TrainingError
from .inference import (Assignment, ConstraintSet, ScoreTable,
                        loss_augmented_inference, map_inference, validate_graph)
from .labels import LabelScheme
from .metrics import micro_average
from .model import (ModelParams, backprop_scores, cross_entropy,
                    score_instance)

LOCAL_DECODE = ConstraintSet(symmetry=False, transitivity=False, causal=False)


@dataclass
class TrainSettings:
    """Knobs shared by both stages; presets fill these from one table."""

    lr_local: float = 2e-3
    lr_global: float = 0.05
    lr_decay: float = 0.7
    c_reg: float = 1e-4
    epochs_local: int = 30
    epochs_global: int = 20
    patience: int = 5
    momentum: float = 0.9
    direction: str = "forward"        # stage-one training augmentation
    exclude: tuple[str, ...] = ()     # labels outside the dev micro average
    augmented_margin: bool = True     # decode with the mismatch bonus
    seed: int = 0


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self._m.setdefault(name, np.zeros_like(g))
            v = self._v.setdefault(name, np.zeros_like(g))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            params.tensors[name] -= self.lr * update


class MomentumSGD:
    """Heavy-ball SGD; ``weight_decay`` is the full 2C coefficient."""

    def __init__(self, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._vel: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, theta in params.tensors.items():
            g = grads[name] + self.weight_decay * theta
            vel = self._vel.setdefault(name, np.zeros_like(theta))
            vel *= self.momentum
            vel -= self.lr * g
            theta += vel


# ---------------------------------------------------------------------------
# structured loss pieces


def hamming(pred: Assignment, gold: Assignment) -> int:
    """Number of variables where the two assignments disagree."""
    bad = sum(1 for p, r in gold.labels.items() if pred.labels[p] != r)
    bad += sum(1 for p, r in gold.causal.items() if pred.causal[p] != r)
    return bad


def assignment_score(table: ScoreTable, assign: Assignment,
                     scheme: LabelScheme) -> float:
    """Raw model score of an assignment, summed in variable order."""
    total = 0.0
    for p in table.pairs:
        total += float(table.temporal[p][scheme.index(assign.labels[p])])
    for p in table.causal_pairs:
        total += float(table.causal[p][scheme.causal.index(assign.causal[p])])
    return total


def ssvm_instance_loss(table: ScoreTable, pred: Assignment, gold: Assignment,
                       scheme: LabelScheme, M: int) -> float:
    """Margin-rescaled hinge for one document, recomputed from raw scores."""
    if M <= 0:
        raise DataError("instance has no variables")
    delta = hamming(pred, gold)
    gap = delta + assignment_score(table, pred, scheme) \
        - assignment_score(table, gold, scheme)
    return max(0.0, gap) / M


def _margin_rows(table: ScoreTable, pred: Assignment, gold: Assignment,
                 scheme: LabelScheme, M: int
                 ) -> tuple[np.ndarray, np.ndarray | None]:
    """d(hinge)/d(score): +1/M at predicted labels, -1/M at gold ones.

    Agreeing variables contribute nothing; their two terms cancel.
    """
    dt = np.zeros((len(table.pairs), scheme.n))
    for k, p in enumerate(table.pairs):
        a, b = pred.labels[p], gold.labels[p]
        if a != b:
            dt[k, scheme.index(a)] += 1.0 / M
            dt[k, scheme.index(b)] -= 1.0 / M
    dc = None
    if table.causal_pairs:
        dc = np.zeros((len(table.causal_pairs), scheme.causal.n))
        for k, p in enumerate(table.causal_pairs):
            a, b = pred.causal[p], gold.causal[p]
            if a != b:
                dc[k, scheme.causal.index(a)] += 1.0 / M
                dc[k, scheme.causal.index(b)] -= 1.0 / M
    return dt, dc


# ---------------------------------------------------------------------------
# shared evaluation


class _VectorCache:
    def __init__(self, source):
        self.source = source
        self._byid: dict[str, np.ndarray] = {}

    def __call__(self, doc) -> np.ndarray:
        if doc.id not in self._byid:
            self._byid[doc.id] = self.source.vectors_for(doc)
        return self._byid[doc.id]


def decode_instance(params: ModelParams, inst: Instance,
                    word_vectors: np.ndarray, scheme: LabelScheme,
                    constraints: ConstraintSet) -> Assignment:
    """Score then decode one document (evaluation mode, no dropout)."""
    table, _ = score_instance(params, inst, word_vectors)
    return map_inference(table, constraints, scheme, components=True)


def evaluate_model(params: ModelParams, instances: list[Instance],
                   source, scheme: LabelScheme, constraints: ConstraintSet,
                   exclude: tuple[str, ...] = (),
                   vectors: _VectorCache | None = None
                   ) -> tuple[float, float, float, int]:
    """Micro P/R/F1 over temporal pairs plus total constraint violations.

    Violations are counted against the full constraint family regardless
    of what the decoder enforced, which is the interesting number when
    the decoder enforced nothing.
    """
    vectors = vectors or _VectorCache(source)
    pred_map: dict = {}
    gold_map: dict = {}
    violations = 0
    for inst in instances:
        if inst.M == 0:
            continue
        assign = decode_instance(params, inst, vectors(inst.doc), scheme,
                                 constraints)
        violations += len(validate_graph(assign, scheme))
        for p in inst.pairs:
            key = (inst.doc.id,) + p
            pred_map[key] = assign.labels[p]
            gold_map[key] = inst.gold[p]
    if not gold_map:
        return 0.0, 0.0, 0.0, violations
    p, r, f1 = micro_average(pred_map, gold_map, exclude)
    return p, r, f1, violations


# ---------------------------------------------------------------------------
# per-epoch metrics log


class MetricsLog:
    """Tab-separated training curve, one row per epoch."""

    COLUMNS = ("epoch", "stage", "train_loss", "dev_p", "dev_r", "dev_f1",
               "violations")

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, **row) -> None:
        if set(row) != set(self.COLUMNS):
            raise DataError(f"metrics row needs exactly {self.COLUMNS}")
        self.rows.append(row)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(self.COLUMNS) + "\n")
            for row in self.rows:
                cells = [str(row["epoch"]), row["stage"],
                         f"{row['train_loss']:.6f}", f"{row['dev_p']:.6f}",
                         f"{row['dev_r']:.6f}", f"{row['dev_f1']:.6f}",
                         str(row["violations"])]
                fh.write("\t".join(cells) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "MetricsLog":
        log = cls()
        try:
            fh = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        with fh:
            header = fh.readline().rstrip("\n").split("\t")
            if tuple(header) != cls.COLUMNS:
                raise DataError(f"{path}: not a metrics log")
            for line in fh:
                cells = line.rstrip("\n").split("\t")
                if len(cells) != len(cls.COLUMNS):
                    raise DataError(f"{path}: ragged metrics row")
                log.add(epoch=int(cells[0]), stage=cells[1],
                        train_loss=float(cells[2]), dev_p=float(cells[3]),
                        dev_r=float(cells[4]), dev_f1=float(cells[5]),
                        violations=int(cells[6]))
        return log


# ---------------------------------------------------------------------------
# stages


def train_local(params: ModelParams, train_insts: list[Instance],
                dev_insts: list[Instance], scheme: LabelScheme, source,
                settings: TrainSettings, log: MetricsLog | None = None
                ) -> tuple[ModelParams, MetricsLog]:
    """Stage one: per-pair cross-entropy with Adam; returns the dev-best."""
    log = log if log is not None else MetricsLog()
    work = params.copy()
    rng = np.random.default_rng(settings.seed)
    opt = Adam(settings.lr_local)
    vectors = _VectorCache(source)
    mats = [apply_direction(inst, scheme, settings.direction)
            for inst in train_insts]
    mats = [m for m in mats if m.M > 0]
    if not mats:
        raise TrainingError("stage one has no training pairs")

    best_f1, best = -1.0, work.copy()
    for epoch in range(settings.epochs_local):
        total = 0.0
        for idx in rng.permutation(len(mats)):
            inst = mats[idx]
            table, ctx = score_instance(work, inst, vectors(inst.doc),
                                        train=True, rng=rng)
            loss = 0.0
            dt = np.zeros((len(inst.pairs), scheme.n))
            if inst.pairs:
                rows = np.stack([table.temporal[p] for p in inst.pairs])
                gold = np.array([scheme.index(inst.gold[p])
                                 for p in inst.pairs])
                loss, dt = cross_entropy(rows, gold)
            dc = None
            if inst.causal_pairs:
                rows = np.stack([table.causal[p] for p in inst.causal_pairs])
                gold = np.array([scheme.causal.index(inst.causal_gold[p])
                                 for p in inst.causal_pairs])
                closs, dc = cross_entropy(rows, gold)
                loss += closs
            total += loss
            opt.step(work, backprop_scores(work, ctx, dt, dc))
        if not math.isfinite(total):
            raise TrainingError(f"stage one diverged at epoch {epoch}")
        dev_p, dev_r, dev_f1, viol = evaluate_model(
            work, dev_insts, source, scheme, LOCAL_DECODE,
            exclude=settings.exclude, vectors=vectors)
        log.add(epoch=epoch, stage="local", train_loss=total / len(mats),
                dev_p=dev_p, dev_r=dev_r, dev_f1=dev_f1, violations=viol)
        if not dev_insts:
            best = work.copy()   # no dev set: keep the last epoch
        elif dev_f1 > best_f1:
            best_f1, best = dev_f1, work.copy()
    return best, log


def train_global(params: ModelParams, train_insts: list[Instance],
                 dev_insts: list[Instance], scheme: LabelScheme, source,
                 settings: TrainSettings, constraints: ConstraintSet,
                 log: MetricsLog | None = None
                 ) -> tuple[ModelParams, MetricsLog]:
    """Stage two: structured hinge from a stage-one warm start.

    ``params`` must come out of :func:`train_local`; starting the hinge
    from random weights collapses in practice, so this stage never
    initializes its own.
    """
    log = log if log is not None else MetricsLog()
    work = params.copy()
    rng = np.random.default_rng(settings.seed + 1)
    opt = MomentumSGD(settings.lr_global, settings.momentum,
                      weight_decay=2.0 * settings.c_reg)
    vectors = _VectorCache(source)
    insts = [inst for inst in train_insts if inst.M > 0]
    if not insts:
        raise TrainingError("stage two has no training pairs")

    # the warm start competes in model selection: an epoch must beat it
    # under the constrained decode or the stage keeps the stage-one model
    best_f1 = -1.0
    if dev_insts:
        best_f1 = evaluate_model(work, dev_insts, source, scheme, constraints,
                                 exclude=settings.exclude, vectors=vectors)[2]
    best, stale = work.copy(), 0
    for epoch in range(settings.epochs_global):
        total = 0.0
        for idx in rng.permutation(len(insts)):
            inst = insts[idx]
            gold = Assignment(labels=dict(inst.gold),
                              causal=dict(inst.causal_gold))
            table, ctx = score_instance(work, inst, vectors(inst.doc),
                                        train=True, rng=rng)
            if settings.augmented_margin:
                pred = loss_augmented_inference(table, gold, constraints,
                                                scheme, components=True)
            else:
                pred = map_inference(table, constraints, scheme,
                                     components=True)
            total += ssvm_instance_loss(table, pred, gold, scheme, inst.M)
            dt, dc = _margin_rows(table, pred, gold, scheme, inst.M)
            opt.step(work, backprop_scores(work, ctx, dt, dc))
        if not math.isfinite(total):
            raise TrainingError(f"stage two diverged at epoch {epoch}")
        opt.lr *= settings.lr_decay
        dev_p, dev_r, dev_f1, viol = evaluate_model(
            work, dev_insts, source, scheme, constraints,
            exclude=settings.exclude, vectors=vectors)
        log.add(epoch=epoch, stage="global", train_loss=total / len(insts),
                dev_p=dev_p, dev_r=dev_r, dev_f1=dev_f1, violations=viol)
        if not dev_insts:
            best = work.copy()   # no dev set: keep the last epoch
        elif dev_f1 > best_f1:
            best_f1, best, stale = dev_f1, work.copy(), 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    return best, log
