"""Exact joint decoding of a document's relation graph.

Variables are the instance's ordered pairs: each temporal pair takes one
label from the scheme, each causal pair one causal label.  The decoder
maximizes the sum of per-pair scores subject to

* symmetry: mirrored pairs carry mutually reversed labels,
* transitivity: the label of (i, k) must lie in the composition set of
  the labels of (i, j) and (j, k), for every triple with all three pairs
  present (vacuous composition entries constrain nothing), and
* causal coupling: a causal label forces its anchored temporal label on
  the same pair, the reversed anchor on the mirrored pair, and mirrored
  causal pairs carry mutually reversed causal labels.

Search is exact branch and bound over label domains: an LP-style bound
from per-variable maxima, branching on the undecided variable with the
smallest top-two score margin, and constraint propagation (unit
propagation through the equality links, arc consistency on composition
triples).  Propagation sweeps are vectorized over all links and triples
at once; pruning is monotone, so the sweep order cannot change the
fixpoint.  Ties in the objective are broken lexicographically on label
indices in variable order; the brute-force oracle enumerates in the
same order, so both report identical assignments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .corpus import Pair
from .errors import InternalError, SolverError
from .labels import LabelScheme

_EPS = 1e-9


@dataclass
class ScoreTable:
    """Per-pair label scores for one document, in variable order."""

    doc_id: str
    pairs: list[Pair]
    temporal: dict[Pair, np.ndarray]
    causal_pairs: list[Pair] = field(default_factory=list)
    causal: dict[Pair, np.ndarray] = field(default_factory=dict)


@dataclass
class Assignment:
    """One label per pair; objective is the decoder's attained total."""

    labels: dict[Pair, str]
    causal: dict[Pair, str] = field(default_factory=dict)
    objective: float = 0.0


@dataclass(frozen=True)
class Violation:
    kind: str
    pairs: tuple[Pair, ...]
    message: str


@dataclass
class ConstraintSet:
    """Which constraint families to enforce during decoding."""

    symmetry: bool = True
    transitivity: bool = True
    causal: bool = False

    @property
    def any_active(self) -> bool:
        return self.symmetry or self.transitivity or self.causal


# ---------------------------------------------------------------------------
# problem assembly


class _Problem:
    """Materialized constraint graph over integer variables."""

    def __init__(self, table: ScoreTable, constraints: ConstraintSet,
                 scheme: LabelScheme, gold: Assignment | None = None):
        self.scheme = scheme
        self.table = table
        self.vars: list[tuple[str, Pair]] = (
            [("t", p) for p in table.pairs] + [("c", p) for p in table.causal_pairs]
        )
        n_t = len(table.pairs)
        self.scores: list[np.ndarray] = []
        for p in table.pairs:
            s = np.asarray(table.temporal[p], dtype=np.float64).copy()
            if s.shape != (scheme.n,):
                raise SolverError(
                    f"temporal score vector for {p} has shape {s.shape}"
                )
            self.scores.append(s)
        n_causal = len(scheme.causal.labels) if scheme.causal else 0
        for p in table.causal_pairs:
            if scheme.causal is None:
                raise SolverError("causal pairs given but scheme has no causal labels")
            s = np.asarray(table.causal[p], dtype=np.float64).copy()
            if s.shape != (n_causal,):
                raise SolverError(f"causal score vector for {p} has shape {s.shape}")
            self.scores.append(s)

        if gold is not None:  # margin rescaling: +1 on every non-gold label
            for v, (kind, p) in enumerate(self.vars):
                ref = gold.labels.get(p) if kind == "t" else gold.causal.get(p)
                margin = np.ones_like(self.scores[v])
                if ref is not None:
                    idx = (scheme.index(ref) if kind == "t"
                           else scheme.causal.index(ref))
                    margin[idx] = 0.0
                self.scores[v] = self.scores[v] + margin

        t_index = {p: v for v, p in enumerate(table.pairs)}
        c_index = {p: n_t + k for k, p in enumerate(table.causal_pairs)}

        self.sym_links: list[tuple[int, int, np.ndarray]] = []
        if constraints.symmetry:
            perm = scheme.reverse_index
            for p, v in t_index.items():
                q = (p[1], p[0])
                w = t_index.get(q)
                if w is not None and v < w:
                    self.sym_links.append((v, w, perm))

        self.triples: list[tuple[int, int, int]] = []
        self.cube = scheme.composition().cube if constraints.transitivity else None
        if constraints.transitivity:
            out: dict[str, list[tuple[str, int]]] = {}
            for (a, b), v in t_index.items():
                out.setdefault(a, []).append((b, v))
            for (a, b), v_ab in t_index.items():
                for (c, v_bc) in out.get(b, ()):
                    if c == a:
                        continue
                    v_ac = t_index.get((a, c))
                    if v_ac is not None:
                        self.triples.append((v_ab, v_bc, v_ac))

        self.causal_links: list[tuple[int, int, int]] = []
        if constraints.causal and scheme.causal is not None:
            cperm = np.array([1, 0], dtype=np.int64)
            for p, v in c_index.items():
                q = (p[1], p[0])
                w = c_index.get(q)
                if w is not None and v < w:
                    self.sym_links.append((v, w, cperm))
                self.causal_links.append(
                    (v, t_index.get(p, -1), t_index.get(q, -1))
                )
        self.anchor = scheme.index(scheme.causal.anchor) if scheme.causal else -1
        self.anchor_rev = (scheme.index(scheme.reverse[scheme.causal.anchor])
                           if scheme.causal else -1)

        self.n_t = n_t
        # causal coupling needs the sequential sweep; the pure temporal
        # families run through the vectorized one
        self._seq_prop = bool(self.causal_links) or any(
            a >= n_t for (a, _, _) in self.sym_links)
        sym_t = [(a, b) for (a, b, _) in self.sym_links if b < n_t]
        self._sym_a = np.array([a for a, _ in sym_t], dtype=np.int64)
        self._sym_b = np.array([b for _, b in sym_t], dtype=np.int64)
        self._rev_perm = (np.asarray(scheme.reverse_index, dtype=np.int64)
                          if sym_t else None)
        if self.triples:
            self._tri_xs = np.array([t[0] for t in self.triples], dtype=np.int64)
            self._tri_ys = np.array([t[1] for t in self.triples], dtype=np.int64)
            self._tri_zs = np.array([t[2] for t in self.triples], dtype=np.int64)
            cube = self.cube.astype(np.int64)
            k = scheme.n
            # flattened composition slices: row r1*k+r2 of _c_z answers
            # "which r3 does some allowed (r1, r2) admit", and likewise
            # for the other two orientations
            self._c_z = cube.reshape(k * k, k)
            self._c_x = cube.transpose(1, 2, 0).reshape(k * k, k)
            self._c_y = cube.transpose(0, 2, 1).reshape(k * k, k)
            scatter = np.concatenate([self._tri_xs, self._tri_ys, self._tri_zs])
            self._tri_order = np.argsort(scatter, kind="stable")
            self._tri_vars, self._tri_starts = np.unique(
                scatter[self._tri_order], return_index=True)
        else:
            self._tri_xs = None

    @property
    def n(self) -> int:
        return len(self.vars)

    def full_domains(self) -> list[np.ndarray]:
        return [np.ones(len(s), dtype=bool) for s in self.scores]

    def objective(self, labels: list[int]) -> float:
        """Canonical objective: sequential sum in variable order."""
        total = 0.0
        for v, lab in enumerate(labels):
            total += float(self.scores[v][lab])
        return total

    def assignment(self, labels: list[int]) -> Assignment:
        scheme = self.scheme
        t: dict[Pair, str] = {}
        c: dict[Pair, str] = {}
        for v, (kind, p) in enumerate(self.vars):
            if kind == "t":
                t[p] = scheme.labels[labels[v]]
            else:
                c[p] = scheme.causal.labels[labels[v]]
        return Assignment(labels=t, causal=c, objective=self.objective(labels))

    # -- constraint propagation -------------------------------------------

    def propagate(self, dom: list[np.ndarray]) -> bool:
        """Prune domains to a fixpoint; False when any domain empties."""
        if self._seq_prop:
            return self._propagate_seq(dom)
        return self._propagate_fast(dom)

    def _propagate_fast(self, dom: list[np.ndarray]) -> bool:
        """One matrix sweep per iteration instead of a per-edge loop.

        Domains only shrink, so per-variable counts detect both change
        and wipeout; rows that never shrank keep their original arrays.
        """
        if self._sym_a.size == 0 and self._tri_xs is None:
            return True
        nt = self.n_t
        dmat = np.stack(dom[:nt])
        start = dmat.sum(axis=1)
        counts = start
        while True:
            if self._sym_a.size:
                a, b, perm = self._sym_a, self._sym_b, self._rev_perm
                na = dmat[a] & dmat[b][:, perm]
                nb = dmat[b] & dmat[a][:, perm]
                dmat[a] = na
                dmat[b] = nb
            if self._tri_xs is not None:
                x = dmat[self._tri_xs]
                y = dmat[self._tri_ys]
                z = dmat[self._tri_zs]
                m = len(x)
                pyz = (y[:, :, None] & z[:, None, :]).reshape(m, -1)
                pxz = (x[:, :, None] & z[:, None, :]).reshape(m, -1)
                pxy = (x[:, :, None] & y[:, None, :]).reshape(m, -1)
                ok = np.concatenate([
                    pyz.view(np.uint8) @ self._c_x > 0,
                    pxz.view(np.uint8) @ self._c_y > 0,
                    pxy.view(np.uint8) @ self._c_z > 0,
                ])
                allowed = np.logical_and.reduceat(
                    ok[self._tri_order], self._tri_starts, axis=0)
                dmat[self._tri_vars] &= allowed
            cur = dmat.sum(axis=1)
            if not cur.all():
                return False
            if (cur == counts).all():
                break
            counts = cur
        for v in np.flatnonzero(cur != start):
            dom[v] = dmat[v].copy()
        return True

    def _propagate_seq(self, dom: list[np.ndarray]) -> bool:
        changed = True
        while changed:
            changed = False
            for (a, b, perm) in self.sym_links:
                na = dom[a] & dom[b][perm]
                nb = dom[b] & dom[a][perm]
                if not na.any() or not nb.any():
                    return False
                if na.sum() != dom[a].sum() or nb.sum() != dom[b].sum():
                    changed = True
                dom[a], dom[b] = na, nb
            cube = self.cube
            for (x, y, z) in self.triples:
                dx, dy, dz = dom[x], dom[y], dom[z]
                nz = dz & cube[np.ix_(dx, dy)].any(axis=(0, 1))
                nx = dx & cube[:, dy, :][:, :, dz].any(axis=(1, 2))
                ny = dy & cube[dx][:, :, dz].any(axis=(0, 2))
                if not (nz.any() and nx.any() and ny.any()):
                    return False
                if (nz.sum() != dz.sum() or nx.sum() != dx.sum()
                        or ny.sum() != dy.sum()):
                    changed = True
                dom[x], dom[y], dom[z] = nx, ny, nz
            for (vz, vf, vb) in self.causal_links:
                dz = dom[vz].copy()
                if vf >= 0:
                    if not dom[vf][self.anchor]:
                        dz[0] = False
                    if not dom[vf][self.anchor_rev]:
                        dz[1] = False
                if vb >= 0:
                    if not dom[vb][self.anchor_rev]:
                        dz[0] = False
                    if not dom[vb][self.anchor]:
                        dz[1] = False
                if not dz.any():
                    return False
                if dz.sum() != dom[vz].sum():
                    changed = True
                dom[vz] = dz
                forced = None
                if dz.sum() == 1:
                    forced = int(np.flatnonzero(dz)[0])
                if forced is not None:
                    want_f = self.anchor if forced == 0 else self.anchor_rev
                    want_b = self.anchor_rev if forced == 0 else self.anchor
                    for vt, want in ((vf, want_f), (vb, want_b)):
                        if vt < 0:
                            continue
                        if not dom[vt][want]:
                            return False
                        if dom[vt].sum() != 1:
                            nd = np.zeros_like(dom[vt])
                            nd[want] = True
                            dom[vt] = nd
                            changed = True
        return True


def _components(problem: _Problem) -> list[list[int]]:
    parent = list(range(problem.n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for (a, b, _) in problem.sym_links:
        union(a, b)
    for (x, y, z) in problem.triples:
        union(x, y)
        union(x, z)
    for (vz, vf, vb) in problem.causal_links:
        if vf >= 0:
            union(vz, vf)
        if vb >= 0:
            union(vz, vb)
    groups: dict[int, list[int]] = {}
    for v in range(problem.n):
        groups.setdefault(find(v), []).append(v)
    return [sorted(g) for g in sorted(groups.values())]


# ---------------------------------------------------------------------------
# branch and bound


class _Search:
    """Branch and bound over one connected group of variables.

    Domains are kept globally indexed; propagation may rebind list slots
    but never mutates arrays in place, so children can share arrays and
    copy only the list.
    """

    def __init__(self, problem: _Problem, variables: list[int]):
        self.problem = problem
        self.vars = variables
        self.best_labels: list[int] | None = None
        self.best_obj = -np.inf
        nt = problem.n_t
        self._tg = [v for v in variables if v < nt]
        self._cg = [v for v in variables if v >= nt]
        self._tg_arr = np.array(self._tg, dtype=np.int64)
        self._tscores = (np.stack([problem.scores[v] for v in self._tg])
                         if self._tg else None)

    def run(self) -> list[int]:
        self._node(self.problem.full_domains())
        if self.best_labels is None:
            raise SolverError("no feasible assignment (full domains pruned empty)")
        return self.best_labels

    def _node(self, dom: list[np.ndarray]) -> None:
        problem = self.problem
        if not problem.propagate(dom):
            return

        # bound accumulates per-variable maxima one at a time so pruning
        # rounds exactly like the scalar loop it replaced
        bound = 0.0
        masked = mx = None
        if self._tg:
            tdoms = np.stack([dom[v] for v in self._tg])
            masked = np.where(tdoms, self._tscores, -np.inf)
            mx = masked.max(axis=1)
            for m in mx:
                bound += float(m)
        for v in self._cg:
            bound += float(problem.scores[v][dom[v]].max())
        if self.best_labels is not None and bound < self.best_obj - _EPS:
            return

        pick = -1
        pick_margin = np.inf
        if self._tg:
            open_rows = np.flatnonzero(tdoms.sum(axis=1) > 1)
            if open_rows.size:
                second = np.partition(masked[open_rows], -2, axis=1)[:, -2]
                margins = mx[open_rows] - second
                k = np.lexsort((self._tg_arr[open_rows], margins))[0]
                pick = int(self._tg_arr[open_rows][k])
                pick_margin = float(margins[k])
        for v in self._cg:
            if dom[v].sum() > 1:
                s = np.sort(problem.scores[v][dom[v]])[::-1]
                if (float(s[0] - s[1]), v) < (pick_margin, pick):
                    pick, pick_margin = v, float(s[0] - s[1])
        if pick < 0:
            self._offer([int(np.flatnonzero(dom[v])[0]) for v in self.vars])
            return

        s = problem.scores[pick]
        choices = [r for r in range(len(s)) if dom[pick][r]]
        choices.sort(key=lambda r: (-s[r], r))
        for r in choices:
            child = list(dom)
            mask = np.zeros_like(child[pick])
            mask[r] = True
            child[pick] = mask
            self._node(child)

    def _offer(self, labels: list[int]) -> None:
        obj = 0.0
        for k, v in enumerate(self.vars):
            obj += float(self.problem.scores[v][labels[k]])
        if self.best_labels is None or obj > self.best_obj + _EPS:
            self.best_labels, self.best_obj = labels, obj
        elif obj > self.best_obj - _EPS and labels < self.best_labels:
            self.best_labels = labels
            self.best_obj = max(self.best_obj, obj)


def _solve(problem: _Problem, components: bool) -> list[int]:
    if problem.n == 0:
        return []
    no_constraints = (not problem.sym_links and not problem.triples
                      and not problem.causal_links)
    if no_constraints:
        return [int(np.argmax(s)) for s in problem.scores]
    if components:
        labels = [0] * problem.n
        for group in _components(problem):
            sub = _Search(problem, group).run()
            for k, v in enumerate(group):
                labels[v] = sub[k]
        return labels
    return _Search(problem, list(range(problem.n))).run()


def map_inference(table: ScoreTable, constraints: ConstraintSet,
                  scheme: LabelScheme, components: bool = False) -> Assignment:
    """Highest-scoring feasible assignment, deterministic under ties."""
    problem = _Problem(table, constraints, scheme)
    return problem.assignment(_solve(problem, components))


def loss_augmented_inference(table: ScoreTable, gold: Assignment,
                             constraints: ConstraintSet, scheme: LabelScheme,
                             components: bool = False) -> Assignment:
    """Maximize score plus per-pair mismatch count against ``gold``.

    The returned objective includes the margin term, so
    ``objective - score(assignment)`` equals the attained mismatch count.
    """
    problem = _Problem(table, constraints, scheme, gold=gold)
    return problem.assignment(_solve(problem, components))


def brute_force_oracle(table: ScoreTable, constraints: ConstraintSet,
                       scheme: LabelScheme, gold: Assignment | None = None,
                       cap: int = 8) -> Assignment:
    """Exhaustive reference decoder for small instances.

    Enumerates every label combination (lexicographic order), filters by
    the active constraints, and returns the first maximizer.  Refuses
    instances with more than ``cap`` variables.
    """
    problem = _Problem(table, constraints, scheme, gold=gold)
    if problem.n > cap:
        raise SolverError(
            f"oracle capped at {cap} variables, instance has {problem.n}"
        )
    if problem.n == 0:
        return problem.assignment([])
    sizes = [len(s) for s in problem.scores]
    combos = np.array(list(itertools.product(*[range(k) for k in sizes])),
                      dtype=np.int64)
    obj = np.zeros(len(combos), dtype=np.float64)
    for v in range(problem.n):
        obj += problem.scores[v][combos[:, v]]
    feasible = np.ones(len(combos), dtype=bool)
    for (a, b, perm) in problem.sym_links:
        feasible &= combos[:, b] == perm[combos[:, a]]
    if problem.triples:
        cube = problem.cube
        for (x, y, z) in problem.triples:
            feasible &= cube[combos[:, x], combos[:, y], combos[:, z]]
    for (vz, vf, vb) in problem.causal_links:
        causes = combos[:, vz] == 0
        if vf >= 0:
            want = np.where(causes, problem.anchor, problem.anchor_rev)
            feasible &= combos[:, vf] == want
        if vb >= 0:
            want = np.where(causes, problem.anchor_rev, problem.anchor)
            feasible &= combos[:, vb] == want
    if not feasible.any():
        raise SolverError("oracle found no feasible assignment")
    obj[~feasible] = -np.inf
    top = obj.max()
    winner = int(np.flatnonzero(obj >= top - _EPS)[0])
    return problem.assignment([int(x) for x in combos[winner]])


# ---------------------------------------------------------------------------
# validation


def validate_graph(assignment: Assignment, scheme: LabelScheme,
                   constraints: ConstraintSet | None = None) -> list[Violation]:
    """All constraint violations present in a labeled graph."""
    flags = constraints or ConstraintSet(symmetry=True, transitivity=True,
                                         causal=True)
    out: list[Violation] = []
    labels = assignment.labels
    if flags.symmetry:
        for (i, j), r in labels.items():
            mirrored = labels.get((j, i))
            if mirrored is not None and i < j:
                if mirrored != scheme.reverse[r]:
                    out.append(Violation(
                        kind="symmetry", pairs=((i, j), (j, i)),
                        message=f"{r} on ({i},{j}) vs {mirrored} on ({j},{i})"))
    if flags.transitivity:
        table = scheme.composition()
        adjacency: dict[str, list[str]] = {}
        for (i, j) in labels:
            adjacency.setdefault(i, []).append(j)
        for (a, b) in labels:
            for c in adjacency.get(b, ()):
                if c == a or (a, c) not in labels:
                    continue
                allowed = table.compose(labels[(a, b)], labels[(b, c)])
                if labels[(a, c)] not in allowed:
                    out.append(Violation(
                        kind="transitivity", pairs=((a, b), (b, c), (a, c)),
                        message=(f"{labels[(a, b)]} . {labels[(b, c)]} admits "
                                 f"{sorted(allowed)}, found {labels[(a, c)]}")))
    if flags.causal and scheme.causal is not None:
        causal = assignment.causal
        for (i, j), r in causal.items():
            mirrored = causal.get((j, i))
            if mirrored is not None and i < j:
                if mirrored != scheme.causal.reverse(r):
                    out.append(Violation(
                        kind="causal", pairs=((i, j), (j, i)),
                        message=f"causal {r} on ({i},{j}) vs {mirrored} on ({j},{i})"))
            anchor = scheme.causal.anchor
            want_f = anchor if r == scheme.causal.causes else scheme.reverse[anchor]
            for pair, want in (((i, j), want_f),
                               ((j, i), scheme.reverse[want_f])):
                got = labels.get(pair)
                if got is not None and got != want:
                    out.append(Violation(
                        kind="causal", pairs=((i, j), pair),
                        message=(f"causal {r} on ({i},{j}) needs temporal {want} "
                                 f"on {pair}, found {got}")))
    return out


def assert_feasible(assignment: Assignment, scheme: LabelScheme,
                    constraints: ConstraintSet) -> None:
    """Internal guard used after constrained decoding."""
    violations = validate_graph(assignment, scheme, constraints)
    if violations:
        raise InternalError(
            f"constrained decode produced {len(violations)} violation(s); "
            f"first: {violations[0].message}"
        )
