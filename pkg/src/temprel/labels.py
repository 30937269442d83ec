"""Relation label schemes and their composition algebra.

A scheme names the label set for ordered event pairs, the reversal
involution (the label of ``(j, i)`` given the label of ``(i, j)``), and
an endpoint pattern per definite label: a conjunction of ``<``/``=``/``>``
comparisons between the interval start/end points of the two events.
The vague label carries no pattern and doubles as the catch-all
classification for arrangements no definite pattern covers.

The composition table consumed by the transitivity constraint is derived
mechanically: enumerate every weak ordering of the endpoint variables of
three events, and for each pair of labels ``(r1, r2)`` collect the
classification of the third pair over all arrangements consistent with
``r1`` on (i, j) and ``r2`` on (j, k).  A composition realizable by more
than one definite label also admits the vague label.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import SchemeError

Point = tuple[str, str]            # (event slot, "start" | "end")
Atom = tuple[Point, str, Point]    # (lhs, comparator, rhs)

_ATOM_RE = re.compile(
    r"^(start|end)\((i|j)\)\s*(<|=|>)\s*(start|end)\((i|j)\)$"
)

_OPS = {
    "<": lambda a, b: a < b,
    "=": lambda a, b: a == b,
    ">": lambda a, b: a > b,
}


@dataclass(frozen=True)
class CausalLabels:
    """Causal label pair plus the temporal label its forward form implies."""

    causes: str
    caused_by: str
    anchor: str

    @property
    def labels(self) -> tuple[str, str]:
        return (self.causes, self.caused_by)

    @property
    def n(self) -> int:
        return 2

    def reverse(self, label: str) -> str:
        if label == self.causes:
            return self.caused_by
        if label == self.caused_by:
            return self.causes
        raise SchemeError(f"not a causal label: {label!r}")

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass
class LabelScheme:
    """Label set, reversal map, and endpoint semantics for one scheme.

    Instances are immutable by convention once built; the composition
    table is constructed eagerly by the loader and cached here.
    """

    name: str
    labels: tuple[str, ...]
    reverse: dict[str, str]
    patterns: dict[str, tuple[Atom, ...]]
    vague: str
    causal: CausalLabels | None = None
    _table: "CompositionTable | None" = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemeError(
                f"label {label!r} unknown to scheme {self.name!r}"
            ) from None

    @property
    def definite(self) -> tuple[str, ...]:
        return tuple(r for r in self.labels if r != self.vague)

    @property
    def points(self) -> tuple[str, ...]:
        """Endpoint kinds ("start"/"end") referenced by any pattern."""
        used = {p[1] for pat in self.patterns.values() for a in pat for p in (a[0], a[2])}
        return tuple(k for k in ("start", "end") if k in used)

    @property
    def reverse_index(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for k, r in enumerate(self.labels):
            out[k] = self.index(self.reverse[r])
        return out

    def composition(self) -> "CompositionTable":
        if self._table is None:
            self._table = build_composition_table(self)
        return self._table


def reverse_label(scheme: LabelScheme, label: str) -> str:
    """Label carried by (j, i) when (i, j) carries ``label``."""
    if scheme.causal is not None and label in scheme.causal.labels:
        return scheme.causal.reverse(label)
    try:
        return scheme.reverse[label]
    except KeyError:
        raise SchemeError(
            f"label {label!r} unknown to scheme {scheme.name!r}"
        ) from None


def classify_pair(scheme: LabelScheme, interval_i, interval_j) -> str:
    """Label describing two concrete intervals ((start, end) tuples).

    Returns the first definite label whose pattern the endpoints satisfy,
    falling back to the vague label.  Definite patterns are mutually
    exclusive (validated at load time), so order only breaks the
    none-apply case.
    """
    values = {("i", "start"): interval_i[0], ("i", "end"): interval_i[1],
              ("j", "start"): interval_j[0], ("j", "end"): interval_j[1]}
    for label in scheme.labels:
        pattern = scheme.patterns[label]
        if not pattern:
            continue
        if all(_OPS[op](values[a], values[b]) for a, op, b in pattern):
            return label
    return scheme.vague


# ---------------------------------------------------------------------------
# composition table


@dataclass
class CompositionTable:
    """Admissible third-pair labels for each ordered label pair.

    ``entries[(r1, r2)]`` is the set of labels that (i, k) may carry when
    (i, j) carries r1 and (j, k) carries r2.  ``cube`` is the same data as
    a boolean tensor indexed by label positions, for the solver.
    """

    scheme: LabelScheme
    entries: dict[tuple[str, str], frozenset[str]]

    def compose(self, r1: str, r2: str) -> frozenset[str]:
        try:
            return self.entries[(r1, r2)]
        except KeyError:
            raise SchemeError(
                f"labels ({r1!r}, {r2!r}) unknown to scheme {self.scheme.name!r}"
            ) from None

    def is_vacuous(self, r1: str, r2: str) -> bool:
        return len(self.compose(r1, r2)) == self.scheme.n

    @property
    def cube(self) -> np.ndarray:
        if not hasattr(self, "_cube"):
            n = self.scheme.n
            cube = np.zeros((n, n, n), dtype=bool)
            for (r1, r2), allowed in self.entries.items():
                a, b = self.scheme.index(r1), self.scheme.index(r2)
                for r3 in allowed:
                    cube[a, b, self.scheme.index(r3)] = True
            self._cube = cube
        return self._cube


def compose(table: CompositionTable, r1: str, r2: str) -> frozenset[str]:
    return table.compose(r1, r2)


def _weak_orders(n: int):
    """Yield all rank tuples of n items whose rank image is dense (0..k).

    Ranks encode a weak ordering: equal rank means equal position.  The
    count for n items is the ordered Bell number (13 for n=3, 4683 for
    n=6).
    """
    from itertools import product

    for ranks in product(range(n), repeat=n):
        hi = max(ranks) if ranks else -1
        if len(set(ranks)) == hi + 1:
            yield ranks


def _pattern_holds(pattern: tuple[Atom, ...], rank, slot_a: int, slot_b: int,
                   pos: dict[tuple[int, str], int]) -> bool:
    """Evaluate a two-slot pattern on a ranked endpoint arrangement."""
    slots = {"i": slot_a, "j": slot_b}
    for (pa, op, pb) in pattern:
        va = rank[pos[(slots[pa[0]], pa[1])]]
        vb = rank[pos[(slots[pb[0]], pb[1])]]
        if not _OPS[op](va, vb):
            return False
    return True


def build_composition_table(scheme: LabelScheme) -> CompositionTable:
    """Derive the composition table from the scheme's endpoint patterns.

    For every weak ordering of the endpoint variables of three events
    (filtered so each event's start precedes its end), collect which
    labels are consistent with the arrangement on (i, j) and (j, k), and
    how the arrangement classifies (i, k).  The entry for (r1, r2) is the
    collected classification set, plus the vague label whenever more than
    one outcome was observed.
    """
    kinds = scheme.points
    pos: dict[tuple[int, str], int] = {}
    for slot in range(3):
        for kind in kinds:
            pos[(slot, kind)] = len(pos)
    npts = len(pos)

    sets: dict[tuple[str, str], set[str]] = {
        (r1, r2): set() for r1 in scheme.labels for r2 in scheme.labels
    }
    definite = [(r, scheme.patterns[r]) for r in scheme.labels if scheme.patterns[r]]

    for rank in _weak_orders(npts):
        if "end" in kinds and any(
            rank[pos[(s, "start")]] >= rank[pos[(s, "end")]] for s in range(3)
        ):
            continue
        pair_sat = []
        pair_cls = []
        for (sa, sb) in ((0, 1), (1, 2), (0, 2)):
            sat = [r for r, pat in definite if _pattern_holds(pat, rank, sa, sb, pos)]
            pair_cls.append(sat[0] if sat else scheme.vague)
            sat.append(scheme.vague)  # the vague label is consistent with anything
            pair_sat.append(sat)
        for r1 in pair_sat[0]:
            for r2 in pair_sat[1]:
                sets[(r1, r2)].add(pair_cls[2])

    entries: dict[tuple[str, str], frozenset[str]] = {}
    for key, outcomes in sets.items():
        if not outcomes:
            raise SchemeError(
                f"scheme {scheme.name!r}: no arrangement realizes {key}"
            )
        if len(outcomes) > 1:
            outcomes = outcomes | {scheme.vague}
        entries[key] = frozenset(outcomes)

    table = CompositionTable(scheme=scheme, entries=entries)
    _check_reverse_consistency(scheme, table)
    return table


def _check_reverse_consistency(scheme: LabelScheme, table: CompositionTable) -> None:
    # r3 in T(r1, r2) must hold exactly when rev(r3) in T(rev(r2), rev(r1))
    for r1 in scheme.labels:
        for r2 in scheme.labels:
            fwd = table.entries[(r1, r2)]
            mirrored = {
                scheme.reverse[r3]
                for r3 in table.entries[(scheme.reverse[r2], scheme.reverse[r1])]
            }
            if fwd != mirrored:
                raise SchemeError(
                    f"scheme {scheme.name!r}: composition not reverse-consistent "
                    f"at ({r1}, {r2})"
                )


# ---------------------------------------------------------------------------
# scheme file parsing


def parse_scheme_text(text: str, source: str = "<scheme>") -> LabelScheme:
    """Parse the line-oriented scheme format.

    Directives: ``scheme NAME``, ``label NAME pattern``, ``vague NAME``,
    ``reverse A B``, ``causal C CB anchor R``.  A pattern is ``*`` (no
    constraint, vague label only) or comma-separated endpoint atoms such
    as ``end(i) < start(j)``.
    """
    name = None
    labels: list[str] = []
    patterns: dict[str, tuple[Atom, ...]] = {}
    reverse: dict[str, str] = {}
    vague = None
    causal = None

    def fail(lineno: int, msg: str):
        raise SchemeError(f"{source}:{lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        directive, rest = parts[0], parts[1] if len(parts) > 1 else ""
        if directive == "scheme":
            name = rest.strip()
            if not name:
                fail(lineno, "scheme directive needs a name")
        elif directive == "label":
            sub = rest.split(None, 1)
            if len(sub) != 2:
                fail(lineno, "label directive needs a name and a pattern")
            lname, pat_text = sub[0], sub[1].strip()
            if lname in patterns:
                fail(lineno, f"duplicate label {lname!r}")
            labels.append(lname)
            if pat_text == "*":
                patterns[lname] = ()
            else:
                atoms = []
                for chunk in pat_text.split(","):
                    m = _ATOM_RE.match(chunk.strip())
                    if not m:
                        fail(lineno, f"bad endpoint atom {chunk.strip()!r}")
                    atoms.append(((m.group(1), m.group(2))[::-1], m.group(3),
                                  (m.group(4), m.group(5))[::-1]))
                patterns[lname] = tuple(atoms)
        elif directive == "vague":
            vague = rest.strip()
        elif directive == "reverse":
            sub = rest.split()
            if len(sub) != 2:
                fail(lineno, "reverse directive needs two labels")
            reverse[sub[0]] = sub[1]
            reverse[sub[1]] = sub[0]
        elif directive == "causal":
            sub = rest.split()
            if len(sub) != 4 or sub[2] != "anchor":
                fail(lineno, "causal directive: causal C CB anchor LABEL")
            causal = CausalLabels(causes=sub[0], caused_by=sub[1], anchor=sub[3])
        else:
            fail(lineno, f"unknown directive {directive!r}")

    if name is None:
        raise SchemeError(f"{source}: missing scheme directive")
    if not labels:
        raise SchemeError(f"{source}: no labels declared")
    if vague is None or vague not in labels:
        raise SchemeError(f"{source}: vague label missing or undeclared")
    if patterns[vague]:
        raise SchemeError(f"{source}: vague label must use pattern '*'")
    for r in labels:
        if r != vague and not patterns[r]:
            raise SchemeError(f"{source}: label {r!r} has no endpoint semantics")
        if r not in reverse:
            raise SchemeError(f"{source}: label {r!r} has no reverse")
        if reverse[reverse[r]] != r:
            raise SchemeError(f"{source}: reverse map is not an involution at {r!r}")
    for r in reverse:
        if r not in labels:
            raise SchemeError(f"{source}: reverse names unknown label {r!r}")
    if causal is not None:
        if causal.anchor not in labels:
            raise SchemeError(f"{source}: causal anchor {causal.anchor!r} undeclared")
        if not patterns[causal.anchor]:
            raise SchemeError(f"{source}: causal anchor must be a definite label")

    scheme = LabelScheme(name=name, labels=tuple(labels), reverse=reverse,
                         patterns=patterns, vague=vague, causal=causal)
    _check_two_event_semantics(scheme, source)
    return scheme


def _check_two_event_semantics(scheme: LabelScheme, source: str) -> None:
    """Cross-check patterns over all two-event endpoint arrangements.

    Definite patterns must be mutually exclusive (classification would be
    ambiguous otherwise) and each label's reverse must hold exactly on
    the mirrored pair.
    """
    kinds = scheme.points
    pos = {(s, k): i for i, (s, k) in
           enumerate((s, k) for s in range(2) for k in kinds)}
    definite = [(r, scheme.patterns[r]) for r in scheme.labels if scheme.patterns[r]]
    for rank in _weak_orders(len(pos)):
        if "end" in kinds and any(
            rank[pos[(s, "start")]] >= rank[pos[(s, "end")]] for s in range(2)
        ):
            continue
        sat = [r for r, pat in definite if _pattern_holds(pat, rank, 0, 1, pos)]
        if len(sat) > 1:
            raise SchemeError(
                f"{source}: patterns of {sat} are not mutually exclusive"
            )
        for r, pat in definite:
            fwd = _pattern_holds(pat, rank, 0, 1, pos)
            rev = _pattern_holds(scheme.patterns.get(scheme.reverse[r], ()), rank, 1, 0, pos)
            if scheme.reverse[r] != scheme.vague and fwd != rev:
                raise SchemeError(
                    f"{source}: pattern of {r!r} does not mirror its reverse"
                )


_BUILTIN = ("dense6", "point4")
_SCHEME_CACHE: dict[str, LabelScheme] = {}


def load_scheme(name_or_path: str) -> LabelScheme:
    """Load a scheme by builtin name or file path, with caching.

    The composition table is built eagerly so later lookups are cheap and
    bad scheme files fail at load time.
    """
    key = str(name_or_path)
    if key in _SCHEME_CACHE:
        return _SCHEME_CACHE[key]
    if key in _BUILTIN:
        text = resources.files("temprel.schemes").joinpath(f"{key}.scheme").read_text()
        source = f"{key}.scheme"
    else:
        path = Path(key)
        if not path.exists():
            raise SchemeError(f"unknown scheme {key!r} (not builtin, not a file)")
        text = path.read_text()
        source = str(path)
    scheme = parse_scheme_text(text, source=source)
    scheme.composition()
    _SCHEME_CACHE[key] = scheme
    return scheme
