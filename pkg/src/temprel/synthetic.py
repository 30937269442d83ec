"""Synthetic corpus generation from random consistent interval layouts.

Every document draws one concrete interval per event; gold labels are
the endpoint classifications of those intervals, so the gold graph
satisfies symmetry and transitivity by construction.  Two surface
channels carry the evidence: each event's token names its interval, and
a cue token before every event (except the first in its sentence) names
its relation to the previous event, the way connectives do in real text.

Within a sentence, each interval is placed relative to the previous one
(copied, strictly later or earlier, nested, or surrounding), which keeps
consecutive-pair compositions tight: most in-sentence triangles force
their third edge.  Most documents progress sentence by sentence through
disjoint time regions, so cross-sentence pairs are easy; the rest
interleave all sentences over the shared span.

``noise`` is the per-event probability of replacing the interval token
with an uninformative mask.  Cues stay truthful, so pairs adjacent to a
masked event keep confident evidence while its wider pairs have none
and must be guessed.  Guesses break tight compositions (a BEFORE chain
forces its shortcut pair), so unconstrained decoding produces
transitivity violations at a rate the noise knob controls, and the
violated variables are exactly the weak ones that constrained decoding
can push to the implied, correct label.  Gold labels never change;
only evidence does.
"""

from __future__ import annotations

import numpy as np

from .corpus import Document, Event, generate_candidates
from .errors import DataError
from .labels import LabelScheme, classify_pair

_FILLERS = ["the", "a", "on", "then", "said", "while", "report", "later",
            "by", "after", "during", "week", "officials", "it"]

MASK_TOKEN = "ivmasked"
CUE_PREFIX = "cue"

_SPAN = 16          # descriptor endpoints stay on the embedding scale
_INTERLEAVE = 0.4   # fraction of documents whose sentences share the span
_LEN_CHOICES = (1, 2, 3)


def _free_interval(rng: np.random.Generator, lo: int, hi: int):
    start = int(rng.integers(lo, hi))
    return (start, min(start + int(rng.choice(_LEN_CHOICES)), hi))


def _next_interval(rng: np.random.Generator, lo: int, hi: int,
                   prev: tuple[int, int] | None):
    """Place one interval in [lo, hi], usually relative to the previous.

    Copies, strict chains, and strict nestings dominate the menu because
    those arrangements compose tightly: two such consecutive pairs
    usually force the label of the sentence's shortcut pair.  Copies
    matter most, since composing with a simultaneous pair passes the
    other label through unchanged.  Infeasible choices (no room left in
    the region) fall back to a free draw, which also supplies plain
    overlaps.
    """
    if prev is None:
        return _free_interval(rng, lo, hi)
    ps, pe = prev
    roll = rng.random()
    if roll < 0.25:
        return prev
    if roll < 0.43 and pe <= hi - 2:          # strictly later, disjoint
        start = int(rng.integers(pe + 1, hi))
        return (start, min(start + int(rng.choice(_LEN_CHOICES)), hi))
    if roll < 0.61 and ps >= lo + 2:          # strictly earlier, disjoint
        end = int(rng.integers(lo + 1, ps))
        return (int(rng.integers(lo, end)), end)
    if roll < 0.79 and pe - ps >= 3:          # strictly inside
        start = int(rng.integers(ps + 1, pe - 1))
        return (start, int(rng.integers(start + 1, pe)))
    if roll < 0.90 and ps > lo and pe < hi:   # strictly around
        return (int(rng.integers(lo, ps)), int(rng.integers(pe + 1, hi + 1)))
    return _free_interval(rng, lo, hi)


def _sentence_regions(rng: np.random.Generator, n_sentences: int):
    """Time region per sentence: disjoint and ordered, or all shared."""
    width = (_SPAN - (n_sentences - 1)) // max(1, n_sentences)
    if n_sentences > 1 and width >= 4 and rng.random() >= _INTERLEAVE:
        return [(k * (width + 1), k * (width + 1) + width)
                for k in range(n_sentences)]
    return [(0, _SPAN)] * n_sentences


def _descriptor(interval: tuple[int, int]) -> str:
    return f"iv{interval[0]}x{interval[1]}"


def synthesize_corpus(scheme: LabelScheme, seed: int, docs: int,
                      events_per_doc: int = 6, noise: float = 0.0,
                      window: int = 1, causal_rate: float = 0.25,
                      events_per_sentence: int = 3,
                      id_prefix: str = "syn") -> list[Document]:
    """Generate ``docs`` documents with consistent gold graphs.

    Same arguments, same output, down to the byte once serialized.
    ``causal_rate`` only applies when the scheme declares causal labels:
    each definite before/after pair gains a causal link with that
    probability, oriented to agree with the temporal label.  Packing
    three or more events per sentence keeps in-sentence triangles whose
    two neighbour pairs carry cues; those triangles are where masked
    shortcut pairs get overruled by composition.
    """
    if not 0.0 <= noise <= 1.0:
        raise DataError("noise must lie in [0, 1]")
    if events_per_doc < 2:
        raise DataError("need at least two events per document")
    if events_per_sentence < 1:
        raise DataError("need at least one event per sentence")
    rng = np.random.default_rng(seed)
    out = []
    for d in range(docs):
        out.append(_one_document(scheme, rng, f"{id_prefix}{d:04d}",
                                 events_per_doc, noise, window, causal_rate,
                                 events_per_sentence))
    return out


def _one_document(scheme: LabelScheme, rng: np.random.Generator, doc_id: str,
                  n_events: int, noise: float, window: int,
                  causal_rate: float, per_sentence: int) -> Document:
    counts = []
    left = n_events
    while left > 0:
        counts.append(min(per_sentence, left))
        left -= counts[-1]
    regions = _sentence_regions(rng, len(counts))
    intervals: list[tuple[int, int]] = []
    for count, (lo, hi) in zip(counts, regions):
        prev = None
        for _ in range(count):
            prev = _next_interval(rng, lo, hi, prev)
            intervals.append(prev)

    tokens: list[str] = []
    pos: list[int] = []
    sentences: list[tuple[int, int]] = []
    events: list[Event] = []

    def emit_filler():
        tokens.append(_FILLERS[int(rng.integers(len(_FILLERS)))])
        pos.append(int(rng.choice((0, 2, 3))))

    ev = 0
    while ev < n_events:
        lo = len(tokens)
        for _ in range(int(rng.integers(1, 3))):
            emit_filler()
        first_in_sentence = True
        for _ in range(min(per_sentence, n_events - ev)):
            interval = intervals[ev]
            if ev > 0 and not first_in_sentence:
                # connective between same-sentence neighbours only;
                # cross-sentence pairs must rely on the interval tokens
                cue = classify_pair(scheme, intervals[ev - 1], interval)
                tokens.append(f"{CUE_PREFIX}{cue}")
                pos.append(3)
            first_in_sentence = False
            if rng.random() < noise:
                tokens.append(MASK_TOKEN)
            else:
                tokens.append(_descriptor(interval))
            pos.append(1)
            events.append(Event(id=f"e{ev}", token=len(tokens) - 1,
                                tense=int(rng.integers(0, 6)),
                                polarity=int(rng.integers(0, 2))))
            ev += 1
            if rng.random() < 0.5:
                emit_filler()
        tokens.append(".")
        pos.append(2)
        sentences.append((lo, len(tokens)))

    doc = Document(id=doc_id, tokens=tokens, pos=pos, sentences=sentences,
                   events=events, relations=[], causal=[])
    by_id = {e.id: e for e in events}
    for (a, b) in generate_candidates(doc, window=window):
        ia = intervals[int(a[1:])]
        ib = intervals[int(b[1:])]
        label = classify_pair(scheme, ia, ib)
        doc.relations.append((a, b, label))
        if scheme.causal is not None and causal_rate > 0.0:
            if label == scheme.causal.anchor and rng.random() < causal_rate:
                doc.causal.append((a, b, scheme.causal.causes))
            elif (label == scheme.reverse[scheme.causal.anchor]
                  and rng.random() < causal_rate):
                doc.causal.append((a, b, scheme.causal.caused_by))
    assert all(by_id[s].token < by_id[t].token for s, t, _ in doc.relations)
    return doc
