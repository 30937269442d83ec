"""Corpus records, candidate pair generation, and direction handling.

A corpus file is line-delimited JSON, one document per line.  Gold
relations are stored in textual order (source token precedes target
token); backward pairs exist only in memory, produced by flipping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, SchemeError
from .labels import LabelScheme, reverse_label

Pair = tuple[str, str]


@dataclass
class Event:
    id: str
    token: int
    tense: int = 0
    polarity: int = 0


@dataclass
class Document:
    id: str
    tokens: list[str]
    pos: list[int]
    sentences: list[tuple[int, int]]      # half-open token spans
    events: list[Event]
    relations: list[tuple[str, str, str]]
    causal: list[tuple[str, str, str]] = field(default_factory=list)

    def event(self, event_id: str) -> Event:
        for ev in self.events:
            if ev.id == event_id:
                return ev
        raise DataError(f"document {self.id!r}: unknown event {event_id!r}")

    def sentence_of(self, token: int) -> int:
        for idx, (lo, hi) in enumerate(self.sentences):
            if lo <= token < hi:
                return idx
        raise DataError(f"document {self.id!r}: token {token} outside sentences")

    def validate(self, scheme: LabelScheme) -> None:
        if len(self.tokens) != len(self.pos):
            raise DataError(f"document {self.id!r}: tokens/pos length mismatch")
        cover = 0
        for lo, hi in self.sentences:
            if lo != cover or hi <= lo:
                raise DataError(f"document {self.id!r}: bad sentence spans")
            cover = hi
        if cover != len(self.tokens):
            raise DataError(f"document {self.id!r}: sentences do not cover tokens")
        seen = set()
        for ev in self.events:
            if ev.id in seen:
                raise DataError(f"document {self.id!r}: duplicate event {ev.id!r}")
            seen.add(ev.id)
            if not 0 <= ev.token < len(self.tokens):
                raise DataError(
                    f"document {self.id!r}: event {ev.id!r} token out of range"
                )
        temporal = set(scheme.labels)
        for src, tgt, label in self.relations:
            if label not in temporal:
                raise SchemeError(
                    f"document {self.id!r}: label {label!r} unknown to scheme "
                    f"{scheme.name!r}"
                )
            if self.event(src).token >= self.event(tgt).token:
                raise DataError(
                    f"document {self.id!r}: relation ({src}, {tgt}) not in "
                    f"textual order"
                )
        if self.causal and scheme.causal is None:
            raise SchemeError(
                f"document {self.id!r}: causal relations but scheme "
                f"{scheme.name!r} declares no causal labels"
            )
        for src, tgt, label in self.causal:
            if label not in scheme.causal.labels:
                raise SchemeError(
                    f"document {self.id!r}: causal label {label!r} unknown"
                )
            if self.event(src).token >= self.event(tgt).token:
                raise DataError(
                    f"document {self.id!r}: causal pair ({src}, {tgt}) not in "
                    f"textual order"
                )


def _doc_from_record(rec: dict, where: str) -> Document:
    try:
        events = [
            Event(id=e["id"], token=int(e["token"]),
                  tense=int(e.get("tense", 0)), polarity=int(e.get("polarity", 0)))
            for e in rec["events"]
        ]
        return Document(
            id=rec["id"],
            tokens=list(rec["tokens"]),
            pos=[int(p) for p in rec["pos"]],
            sentences=[(int(a), int(b)) for a, b in rec["sentences"]],
            events=events,
            relations=[(s, t, r) for s, t, r in rec["relations"]],
            causal=[(s, t, r) for s, t, r in rec.get("causal", [])],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed document record ({exc})") from exc


def _doc_to_record(doc: Document) -> dict:
    rec = {
        "id": doc.id,
        "tokens": doc.tokens,
        "pos": doc.pos,
        "sentences": [list(span) for span in doc.sentences],
        "events": [
            {"id": e.id, "token": e.token, "tense": e.tense, "polarity": e.polarity}
            for e in doc.events
        ],
        "relations": [list(r) for r in doc.relations],
    }
    if doc.causal:
        rec["causal"] = [list(r) for r in doc.causal]
    return rec


def _open_input(path: str | Path):
    try:
        return open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_corpus(path: str | Path, scheme: LabelScheme) -> list[Document]:
    """Read and validate a line-delimited corpus file."""
    docs = []
    ids = set()
    with _open_input(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: not valid JSON ({exc.msg})") from exc
            doc = _doc_from_record(rec, where)
            try:
                doc.validate(scheme)
            except DataError as exc:
                raise type(exc)(f"{where}: {exc}") from None
            if doc.id in ids:
                raise DataError(f"{where}: duplicate document id {doc.id!r}")
            ids.add(doc.id)
            docs.append(doc)
    return docs


def save_corpus(docs: list[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(_doc_to_record(doc), ensure_ascii=False))
            fh.write("\n")


def generate_candidates(doc: Document, window: int = 1) -> list[Pair]:
    """Ordered event pairs within `window` sentences, in textual order.

    Widening the window only adds pairs; it never removes or reorders
    the pairs a narrower window produced.
    """
    if window < 0:
        raise DataError("candidate window must be >= 0")
    events = sorted(doc.events, key=lambda e: (e.token, e.id))
    out: list[Pair] = []
    for a in range(len(events)):
        for b in range(a + 1, len(events)):
            ea, eb = events[a], events[b]
            if abs(doc.sentence_of(eb.token) - doc.sentence_of(ea.token)) <= window:
                out.append((ea.id, eb.id))
    return out


@dataclass
class Instance:
    """One document's decoding problem: candidate pairs plus gold labels.

    ``pairs`` fixes the variable order used everywhere downstream
    (scores, assignments, tie-breaking).  ``M`` counts temporal and
    causal variables together.
    """

    doc: Document
    pairs: list[Pair]
    gold: dict[Pair, str]
    causal_pairs: list[Pair] = field(default_factory=list)
    causal_gold: dict[Pair, str] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.pairs) + len(self.causal_pairs)


def build_instance(doc: Document, scheme: LabelScheme, window: int = 1) -> Instance:
    """Instance over the document's annotated pairs.

    Annotated relations define the candidate set when present (training
    and evaluation); an unannotated document falls back to window-based
    candidates with no gold.
    """
    if doc.relations:
        pairs = [(s, t) for s, t, _ in doc.relations]
        gold = {(s, t): r for s, t, r in doc.relations}
        if len(gold) != len(pairs):
            raise DataError(f"document {doc.id!r}: duplicate annotated pair")
    else:
        pairs = generate_candidates(doc, window=window)
        gold = {}
    causal_pairs = [(s, t) for s, t, _ in doc.causal]
    causal_gold = {(s, t): r for s, t, r in doc.causal}
    if len(causal_gold) != len(causal_pairs):
        raise DataError(f"document {doc.id!r}: duplicate causal pair")
    return Instance(doc=doc, pairs=pairs, gold=gold,
                    causal_pairs=causal_pairs, causal_gold=causal_gold)


def flip_instance(inst: Instance, scheme: LabelScheme) -> Instance:
    """Mirror every pair: (i, j) becomes (j, i) with the reversed label."""
    pairs = [(j, i) for i, j in inst.pairs]
    gold = {
        (j, i): reverse_label(scheme, r) for (i, j), r in inst.gold.items()
    }
    causal_pairs = [(j, i) for i, j in inst.causal_pairs]
    causal_gold = {
        (j, i): reverse_label(scheme, r) for (i, j), r in inst.causal_gold.items()
    }
    return Instance(doc=inst.doc, pairs=pairs, gold=gold,
                    causal_pairs=causal_pairs, causal_gold=causal_gold)


def augment_flipped(inst: Instance, scheme: LabelScheme) -> Instance:
    """Append the mirrored pairs after the originals; M doubles."""
    flipped = flip_instance(inst, scheme)
    overlap = set(inst.pairs) & set(flipped.pairs)
    if overlap:
        raise DataError(
            f"document {inst.doc.id!r}: pairs {sorted(overlap)} present in both "
            f"orders; cannot augment"
        )
    return Instance(
        doc=inst.doc,
        pairs=inst.pairs + flipped.pairs,
        gold={**inst.gold, **flipped.gold},
        causal_pairs=inst.causal_pairs + flipped.causal_pairs,
        causal_gold={**inst.causal_gold, **flipped.causal_gold},
    )


def apply_direction(inst: Instance, scheme: LabelScheme, direction: str) -> Instance:
    """Materialize a direction mode: forward, backward, or both."""
    if direction == "forward":
        return inst
    if direction == "backward":
        return flip_instance(inst, scheme)
    if direction == "both":
        return augment_flipped(inst, scheme)
    raise DataError(f"unknown direction mode {direction!r}")


# ---------------------------------------------------------------------------
# score and prediction records
#
# One line per candidate pair: doc id, the two event ids, one score per
# label, and (for predictions) the chosen label appended.  A prediction
# file is therefore ingestible anywhere a score file is.


def write_score_records(rows, path: str | Path) -> None:
    """Write (doc_id, ev_i, ev_j, scores[, label]) rows as delimited text."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            doc_id, ev_i, ev_j, scores = row[:4]
            cells = [doc_id, ev_i, ev_j]
            cells += [f"{float(s):.9g}" for s in scores]
            if len(row) > 4 and row[4] is not None:
                cells.append(row[4])
            fh.write(" ".join(cells) + "\n")


def read_score_records(path: str | Path, scheme: LabelScheme
                       ) -> list[tuple[str, str, str, list[float], str | None]]:
    """Parse a score or prediction file; label column must be consistent."""
    rows: list[tuple[str, str, str, list[float], str | None]] = []
    labelled = None
    with _open_input(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            cells = line.split()
            if not cells:
                continue
            where = f"{path}:{lineno}"
            if len(cells) == 3 + scheme.n:
                label = None
            elif len(cells) == 4 + scheme.n:
                label = cells[-1]
                if label not in scheme.labels:
                    raise SchemeError(
                        f"{where}: label {label!r} unknown to scheme "
                        f"{scheme.name!r}")
            else:
                raise DataError(
                    f"{where}: expected {3 + scheme.n} or {4 + scheme.n} "
                    f"fields, got {len(cells)}")
            if labelled is None:
                labelled = label is not None
            elif labelled != (label is not None):
                raise DataError(f"{where}: mixes scored and labelled rows")
            try:
                scores = [float(c) for c in cells[3:3 + scheme.n]]
            except ValueError:
                raise DataError(f"{where}: malformed score column") from None
            rows.append((cells[0], cells[1], cells[2], scores, label))
    return rows
