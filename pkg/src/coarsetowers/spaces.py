"""Finite (ultra-)metric spaces: word spaces, balls, minimum nets, entropy
profiles, products, hyperspaces, chain components, and chain ultrametrization.

Distances are exact rationals.  Internally a space stores an n x n matrix of
small integer codes into a sorted tuple of distinct distance values; the code
map is an order isomorphism, so every vectorized min/max/compare on codes is
an exact statement about the underlying rationals.  Floats never appear in a
metric predicate.
"""

from __future__ import annotations

import itertools
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .limits import DEFAULT_CAPS, Caps, CapExceeded
from .rationals import Rational, canon, rat_str
from .report import ValidationReport, Violation

PointId = str

STRICT = "strict"
CLOSED = "closed"


def _pick_dtype(nvalues: int):
    return np.int16 if nvalues < 32_000 else np.int32


class Space:
    """Finite metric space over opaque string point ids.

    The point tuple order is part of the space's identity.  Deterministic
    tie-breaks (net representatives, selections) always compare id strings,
    and builders emit points so that id order and tuple order agree.
    """

    __slots__ = ("points", "values", "codes", "_index", "_ultra")

    def __init__(
        self,
        points: Sequence[PointId],
        codes: np.ndarray,
        values: Sequence[Rational],
        ultrametric: Optional[bool] = None,
        caps: Caps = DEFAULT_CAPS,
    ):
        points = tuple(points)
        caps.check_points(len(points), "space")
        if len(set(points)) != len(points):
            raise ValueError("duplicate point ids")
        values = tuple(canon(v) for v in values)
        if sorted(values) != list(values) or len(set(values)) != len(values):
            raise ValueError("values must be strictly sorted and distinct")
        codes = np.asarray(codes)
        if codes.shape != (len(points), len(points)):
            raise ValueError("codes shape does not match point count")
        self.points = points
        self.values = values
        self.codes = codes
        self._index = {p: i for i, p in enumerate(points)}
        self._ultra = ultrametric

    # -- construction ------------------------------------------------------

    @classmethod
    def from_matrix(
        cls,
        points: Sequence[PointId],
        matrix: Sequence[Sequence[Rational]],
        ultrametric: Optional[bool] = None,
        caps: Caps = DEFAULT_CAPS,
    ) -> "Space":
        """Build from an explicit rational distance matrix (kept verbatim;
        bad inputs are representable so validators can report on them)."""
        points = tuple(points)
        n = len(points)
        caps.check_points(n, "space")
        vals = sorted({canon(v) for row in matrix for v in row})
        code_of = {v: i for i, v in enumerate(vals)}
        codes = np.zeros((n, n), dtype=_pick_dtype(len(vals)))
        for i, row in enumerate(matrix):
            if len(row) != n:
                raise ValueError("matrix is not square")
            for j, v in enumerate(row):
                codes[i, j] = code_of[canon(v)]
        return cls(points, codes, vals, ultrametric=ultrametric, caps=caps)

    @classmethod
    def from_function(
        cls,
        points: Sequence[PointId],
        dist_fn,
        ultrametric: Optional[bool] = None,
        caps: Caps = DEFAULT_CAPS,
    ) -> "Space":
        points = tuple(points)
        matrix = [[dist_fn(p, q) for q in points] for p in points]
        return cls.from_matrix(points, matrix, ultrametric=ultrametric, caps=caps)

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.points)

    def __contains__(self, point: PointId) -> bool:
        return point in self._index

    def index(self, point: PointId) -> int:
        try:
            return self._index[point]
        except KeyError:
            raise KeyError(f"unknown point id: {point!r}") from None

    def dist(self, x: PointId, y: PointId) -> Rational:
        return self.values[self.codes[self.index(x), self.index(y)]]

    def diameter(self) -> Rational:
        if len(self.points) == 0:
            return 0
        return self.values[int(self.codes.max())]

    def value_array(self) -> Optional[np.ndarray]:
        """Values as an int64 array when all are integers, else None."""
        if all(isinstance(v, int) for v in self.values):
            return np.asarray(self.values, dtype=np.int64)
        return None

    def threshold_code(self, radius: Rational, convention: str) -> int:
        """Largest code whose value satisfies (value <= radius), resp.
        (value < radius); -1 when no value qualifies."""
        if convention == CLOSED:
            return bisect_right(self.values, radius) - 1
        if convention == STRICT:
            return bisect_left(self.values, radius) - 1
        raise ValueError(f"unknown net convention: {convention!r}")

    @property
    def is_ultrametric(self) -> bool:
        """True when the strong triangle inequality holds; checked and
        cached on first use unless the builder already proved it."""
        if self._ultra is None:
            self._ultra = validate_ultrametric(self).ok
        return self._ultra

    def subindices(self, subset: Optional[Iterable[PointId]]) -> np.ndarray:
        """Indices for a subset, sorted by id string (deterministic)."""
        if subset is None:
            ids = sorted(self.points)
        else:
            ids = sorted(set(subset))
        return np.asarray([self.index(p) for p in ids], dtype=np.int64)


# -- validation ------------------------------------------------------------


def _strong_triangle_by_threshold(space: Space) -> list[Violation]:
    """Complete strong-triangle scan, one pass per realized distance value.

    d satisfies d(x,y) <= max(d(x,z), d(z,y)) for all triples iff for every
    realized value v the relation {d <= v} is transitive: one direction is
    immediate, and a violating triple with v = max(d(x,z), d(z,y)) breaks
    transitivity at v.  Checking each threshold is a single matrix pass, so
    the whole scan costs O(values * n^2) instead of the all-triples O(n^3)
    while still deciding exactly the same property.  Every failure is
    reported as an explicit triple, re-derived from the values so each
    witness is independently checkable.  Requires the diagonal-zero and
    symmetry checks to have passed (the reduction uses both).
    """
    C = space.codes
    n = int(C.shape[0])
    vals = space.values
    pts = space.points
    out: list[Violation] = []
    seen: set[tuple[int, int, int]] = set()
    chunk = max(1, (1 << 24) // max(n, 1))
    # violations at the top value are impossible: nothing exceeds it
    for t in range(len(vals) - 1):
        labels = np.empty(n, dtype=np.int64)
        for lo in range(0, n, chunk):
            labels[lo:lo + chunk] = (C[lo:lo + chunk] <= t).argmax(axis=1)
        for lo in range(0, n, chunk):
            mask = C[lo:lo + chunk] <= t
            eq = labels[lo:lo + chunk, None] == labels[None, :]
            for bi, j in np.argwhere(mask != eq):
                i, j = lo + int(bi), int(j)
                if i == j:
                    continue
                zi, zj = int(labels[i]), int(labels[j])
                if mask[int(bi), j]:
                    # related pair in distinct classes: the smaller class
                    # representative is far from the other endpoint
                    x, y, z = (zi, j, i) if zi < zj else (zj, i, j)
                else:
                    x, y, z = i, j, zi
                dxy = vals[C[x, y]]
                if dxy <= max(vals[C[x, z]], vals[C[z, y]]):
                    continue
                key = (min(x, y), max(x, y), z)
                if key in seen:
                    continue
                seen.add(key)
                out.append(Violation(
                    "strong-triangle", (pts[x], pts[y], pts[z]),
                    f"d(x,y) = {rat_str(dxy)} > max("
                    f"{rat_str(vals[C[x, z]])}, {rat_str(vals[C[z, y]])})"))
    return out


# all-triples loops stay exact at this size; above it the scan switches to
# the per-threshold pass, which decides the same property in O(values * n^2)
_TRIPLE_LOOP_MAX_POINTS = 800


def validate_metric_axioms(
    space: Space, strong: bool = True, caps: Caps = DEFAULT_CAPS
) -> ValidationReport:
    """Exhaustive metric-axiom check.

    strong=True checks the strong triangle inequality
    d(x,y) <= max(d(x,z), d(z,y)) over all triples; strong=False checks
    the plain d(x,y) <= d(x,z) + d(z,y) (exact rational sums, so it runs
    a pure-Python triple loop and is capped).  Small spaces enumerate every
    violating triple; large ones use the equivalent per-threshold scan,
    which reports at least one explicit triple per failure pattern.
    """
    C = space.codes
    n = len(space.points)
    violations: list[Violation] = []
    checked = ("diagonal-zero", "positivity", "symmetry",
               "strong-triangle" if strong else "triangle")

    diag = np.diagonal(C)
    for i in np.nonzero(np.asarray([space.values[c] != 0 for c in diag]))[0]:
        violations.append(Violation(
            "diagonal-zero", (space.points[int(i)],),
            f"d(x,x) = {rat_str(space.values[C[i, i]])}"))

    asym = np.argwhere(C != C.T)
    for i, j in asym:
        if i < j:
            violations.append(Violation(
                "symmetry", (space.points[int(i)], space.points[int(j)]),
                f"d(x,y) = {rat_str(space.values[C[i, j]])} but "
                f"d(y,x) = {rat_str(space.values[C[j, i]])}"))

    offdiag_zero = np.argwhere(C == 0)
    for i, j in offdiag_zero:
        if i < j:
            violations.append(Violation(
                "positivity", (space.points[int(i)], space.points[int(j)]),
                "distinct points at distance 0"))

    if strong:
        pre_ok = not violations
        if pre_ok and n > _TRIPLE_LOOP_MAX_POINTS:
            violations.extend(_strong_triangle_by_threshold(space))
        else:
            # codes are order-isomorphic to values, so comparing codes is exact
            for z in range(n):
                bound = np.maximum(C[:, z][:, None], C[z, :][None, :])
                bad = np.argwhere(C > bound)
                for x, y in bad:
                    if x < y:
                        violations.append(Violation(
                            "strong-triangle",
                            (space.points[int(x)], space.points[int(y)],
                             space.points[z]),
                            f"d(x,y) = {rat_str(space.values[C[x, y]])} > max("
                            f"{rat_str(space.values[C[x, z]])}, "
                            f"{rat_str(space.values[C[z, y]])})"))
    else:
        if n ** 3 > 8_000_000:
            raise CapExceeded(
                f"plain-metric triangle check needs {n ** 3} exact sums; "
                "cap is 8000000 (use the ultrametric validator or a smaller space)")
        vals = space.values
        for x in range(n):
            for y in range(x + 1, n):
                dxy = vals[C[x, y]]
                for z in range(n):
                    if vals[C[x, z]] + vals[C[z, y]] < dxy:
                        violations.append(Violation(
                            "triangle",
                            (space.points[x], space.points[y], space.points[z]),
                            f"d(x,y) = {rat_str(dxy)} > "
                            f"{rat_str(vals[C[x, z]])} + {rat_str(vals[C[z, y]])}"))
    return ValidationReport("metric axioms", checked, tuple(violations))


def validate_ultrametric(space: Space, caps: Caps = DEFAULT_CAPS) -> ValidationReport:
    """Strong-triangle validation, exhaustive over all triples."""
    return validate_metric_axioms(space, strong=True, caps=caps)


# -- word spaces -----------------------------------------------------------


@dataclass(frozen=True)
class WordSpaceSpec:
    """Finite truncation of the words over a finite alphabet: all words of
    exactly `length` letters from an alphabet of `alphabet_size` digits."""

    alphabet_size: int
    length: int

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")
        if self.length < 1:
            raise ValueError("length must be >= 1")

    def point_count(self) -> int:
        return self.alphabet_size ** self.length


def word_id(digits: Sequence[int], alphabet_size: int) -> PointId:
    if alphabet_size <= 10:
        return "".join(str(d) for d in digits)
    return ".".join(str(d) for d in digits)


def word_space(
    alphabet_size: int, length: int, caps: Caps = DEFAULT_CAPS
) -> Space:
    """Words of a fixed length under d(x,y) = max{2^n : x_n != y_n}.

    The indicator form keeps the strong triangle inequality for every
    alphabet size; position n contributes 2^n when the letters disagree.
    Distinct distance values are exactly 0 and 2^n for n < length.
    """
    spec = WordSpaceSpec(alphabet_size, length)
    count = 1
    for _ in range(length):
        count *= alphabet_size
        if count > caps.max_points:
            raise CapExceeded(
                f"word space would have {alphabet_size}^{length} points, "
                f"cap is {caps.max_points}")
    caps.check_points(count, "word space")
    words = np.asarray(
        list(itertools.product(range(alphabet_size), repeat=length)),
        dtype=np.int16,
    )
    n = words.shape[0]
    codes = np.zeros((n, n), dtype=_pick_dtype(length + 1))
    for pos in range(length):  # ascending, so the last write wins = max position
        col = words[:, pos]
        codes[col[:, None] != col[None, :]] = pos + 1
    values = (0,) + tuple(2 ** p for p in range(length))
    points = [word_id(w, alphabet_size) for w in words.tolist()]
    return Space(points, codes, values, ultrametric=True, caps=caps)


# -- balls, nets, entropy ----------------------------------------------------


def ball(space: Space, center: PointId, radius: Rational) -> tuple[PointId, ...]:
    """Closed ball: all points at distance <= radius, in point order."""
    row = space.codes[space.index(center)]
    t = space.threshold_code(radius, CLOSED)
    idx = np.nonzero(row <= t)[0] if t >= 0 else np.asarray([], dtype=np.int64)
    return tuple(space.points[int(i)] for i in idx)


def subspace(space: Space, subset: Iterable[PointId], caps: Caps = DEFAULT_CAPS) -> Space:
    """Induced space on a subset: points in id order, value table compacted
    to the realized distances."""
    sub = space.subindices(subset)
    codes = space.codes[np.ix_(sub, sub)]
    used, inv = np.unique(codes, return_inverse=True)
    values = tuple(space.values[int(u)] for u in used)
    points = tuple(space.points[int(i)] for i in sub)
    # strong triangle survives restriction; a failed one may not
    ultra = True if space._ultra is True else None
    new_codes = inv.reshape(codes.shape).astype(codes.dtype)
    return Space(points, new_codes, values, ultrametric=ultra, caps=caps)


def _class_labels(space: Space, sub: np.ndarray, tcode: int) -> np.ndarray:
    """First-member class labels for the equivalence (code <= tcode) on the
    id-sorted index array sub.  Only valid when the relation is transitive,
    i.e. on ultrametric spaces."""
    mask = space.codes[np.ix_(sub, sub)] <= tcode
    return mask.argmax(axis=1)  # first True per row = least-id class member


def min_net(
    space: Space,
    subset: Optional[Iterable[PointId]] = None,
    radius: Rational = 0,
    convention: str = CLOSED,
    caps: Caps = DEFAULT_CAPS,
) -> tuple[PointId, ...]:
    """Minimum-cardinality net for a subset.

    A net N covers the subset B when every x in B has some y in N with
    d(x,y) <= radius (closed) or < radius (strict).  On ultrametric spaces
    the covering relation is an equivalence, so the exact minimum is one
    representative per class and the least id is chosen from each class.
    On plain metrics an exhaustive branch-and-bound set-cover search finds
    the exact minimum; it is capped because the worst case is exponential.
    """
    sub = space.subindices(subset)
    if sub.size == 0:
        return ()
    t = space.threshold_code(radius, convention)
    if t < 0:
        raise ValueError(
            f"no admissible net: no distance satisfies the {convention} "
            f"bound at radius {rat_str(radius)}")
    if space.is_ultrametric:
        labels = _class_labels(space, sub, t)
        reps = sorted(set(labels.tolist()))
        return tuple(space.points[int(sub[r])] for r in reps)
    if sub.size > caps.max_exact_net_points:
        raise CapExceeded(
            f"exact net search on a plain metric is capped at "
            f"{caps.max_exact_net_points} points, got {sub.size}")
    return _min_cover_exact(space, sub, t)


def _min_cover_exact(space: Space, sub: np.ndarray, tcode: int) -> tuple[PointId, ...]:
    """Exact minimum set cover by closed/strict balls, branch and bound.

    Complete search: branches on the uncovered point with the fewest
    candidate centers and prunes with a covering-capacity lower bound,
    so the result is a true minimum.  Deterministic for fixed input.
    """
    m = int(sub.size)
    cover_mask = space.codes[np.ix_(sub, sub)] <= tcode
    covers = [0] * m
    for j in range(m):
        bits = 0
        for i in np.nonzero(cover_mask[:, j])[0]:
            bits |= 1 << int(i)
        covers[j] = bits
    full = (1 << m) - 1
    if any(c == 0 for c in covers):
        # a point covering nothing cannot even cover itself: no net exists
        raise ValueError("no admissible net: some point is covered by no center")

    # greedy upper bound
    uncovered = full
    greedy: list[int] = []
    while uncovered:
        best_j = max(range(m), key=lambda j: ((covers[j] & uncovered).bit_count(), -j))
        greedy.append(best_j)
        uncovered &= ~covers[best_j]
    best = greedy

    max_cover = max(c.bit_count() for c in covers)
    candidates_for = [
        [j for j in range(m) if cover_mask[i, j]] for i in range(m)
    ]

    def dfs(uncovered: int, chosen: list[int]) -> None:
        nonlocal best
        if not uncovered:
            if len(chosen) < len(best):
                best = list(chosen)
            return
        need = -(-uncovered.bit_count() // max_cover)  # ceil
        if len(chosen) + need >= len(best):
            return
        # branch on the uncovered point with fewest candidates
        pick, pick_opts = -1, None
        u = uncovered
        while u:
            i = (u & -u).bit_length() - 1
            opts = [j for j in candidates_for[i] if covers[j] & uncovered]
            if pick_opts is None or len(opts) < len(pick_opts):
                pick, pick_opts = i, opts
                if len(opts) <= 1:
                    break
            u &= u - 1
        for j in pick_opts or ():
            chosen.append(j)
            dfs(uncovered & ~covers[j], chosen)
            chosen.pop()

    dfs(full, [])
    return tuple(space.points[int(sub[j])] for j in sorted(best))


@dataclass(frozen=True)
class EntropyProfile:
    """Entropy table: (eps, delta) -> (large, small).

    large is the max over centers of the minimum eps-net size of the closed
    delta-ball, small the min.  Net convention is recorded because strict
    and closed genuinely differ on these finite truncations.
    """

    entries: dict
    net_convention: str

    def rows(self):
        for (eps, delta) in sorted(self.entries):
            large, small = self.entries[(eps, delta)]
            yield eps, delta, large, small

    def check_monotone(self) -> ValidationReport:
        """large/small are nonincreasing in eps and nondecreasing in delta."""
        violations = []
        by_delta: dict = {}
        by_eps: dict = {}
        for (eps, delta), v in self.entries.items():
            by_delta.setdefault(delta, []).append((eps, v))
            by_eps.setdefault(eps, []).append((delta, v))
        for delta, items in by_delta.items():
            items.sort()
            for (e1, v1), (e2, v2) in zip(items, items[1:]):
                if v1[0] < v2[0] or v1[1] < v2[1]:
                    violations.append(Violation(
                        "monotone-eps", (e1, e2, delta),
                        f"entropy grew with eps at delta={rat_str(delta)}"))
        for eps, items in by_eps.items():
            items.sort()
            for (d1, v1), (d2, v2) in zip(items, items[1:]):
                if v1[0] > v2[0] or v1[1] > v2[1]:
                    violations.append(Violation(
                        "monotone-delta", (eps, d1, d2),
                        f"entropy shrank with delta at eps={rat_str(eps)}"))
        return ValidationReport(
            "entropy profile monotonicity",
            ("monotone-eps", "monotone-delta"),
            tuple(violations),
        )


def entropy_profile(
    space: Space,
    eps_list: Sequence[Rational],
    delta_list: Sequence[Rational],
    convention: str = CLOSED,
    caps: Caps = DEFAULT_CAPS,
) -> EntropyProfile:
    """Entropy over a grid: for each (eps, delta), the max and min over all
    centers of the minimum eps-net size of the closed delta-ball."""
    sub = space.subindices(None)
    n = sub.size
    if n == 0:
        raise ValueError("entropy of an empty space is undefined")
    entries: dict = {}
    if space.is_ultrametric:
        C = space.codes[np.ix_(sub, sub)]
        label_cache: dict[int, np.ndarray] = {}

        def labels_at(t: int) -> np.ndarray:
            # first-member class labels of the equivalence {code <= t}
            if t not in label_cache:
                label_cache[t] = (C <= t).argmax(axis=1)
            return label_cache[t]

        for eps in eps_list:
            te = space.threshold_code(eps, convention)
            if te < 0:
                raise ValueError(
                    f"no net exists at eps={rat_str(eps)} under the "
                    f"{convention} convention")
            le = labels_at(te)
            for delta in delta_list:
                if delta < 0:
                    raise ValueError("delta must be >= 0")
                td = space.threshold_code(delta, CLOSED)
                # closed delta-balls are the classes of {code <= td}, so the
                # net size of a center's ball is the number of distinct
                # eps-labels inside its delta-class
                ld = labels_at(td)
                combo = ld.astype(np.int64) * n + le
                cls, cnt = np.unique(np.unique(combo) // n, return_counts=True)
                counts = cnt[np.searchsorted(cls, ld)]
                entries[(canon(eps), canon(delta))] = (
                    int(counts.max()), int(counts.min()))
    else:
        for eps in eps_list:
            for delta in delta_list:
                counts = []
                for i in range(n):
                    members = ball(space, space.points[int(sub[i])], delta)
                    counts.append(len(min_net(space, members, eps, convention, caps)))
                entries[(canon(eps), canon(delta))] = (max(counts), min(counts))
    return EntropyProfile(entries, convention)


# -- products and hyperspaces ------------------------------------------------


def product(x: Space, y: Space, caps: Caps = DEFAULT_CAPS) -> Space:
    """Product space under the max metric; ids are '(p|q)'."""
    n, m = len(x.points), len(y.points)
    caps.check_points(n * m, "product space")
    merged = sorted(set(x.values) | set(y.values))
    code_of = {v: i for i, v in enumerate(merged)}
    mapx = np.asarray([code_of[v] for v in x.values], dtype=_pick_dtype(len(merged)))
    mapy = np.asarray([code_of[v] for v in y.values], dtype=_pick_dtype(len(merged)))
    cx = mapx[x.codes]
    cy = mapy[y.codes]
    codes = np.maximum(
        cx[:, None, :, None], cy[None, :, None, :]
    ).reshape(n * m, n * m)
    points = [f"({p}|{q})" for p in x.points for q in y.points]
    if x._ultra is True and y._ultra is True:
        ultra: Optional[bool] = True
    elif x._ultra is False or y._ultra is False:
        ultra = False
    else:
        ultra = None
    return Space(points, codes, merged, ultrametric=ultra, caps=caps)


def hyperspace(space: Space, max_size: int, caps: Caps = DEFAULT_CAPS) -> Space:
    """Nonempty subsets of at most max_size points under the Hausdorff
    metric; ultrametric whenever the base is.  Ids are '{p|q|r}'."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    n = len(space.points)
    count = sum(
        _comb(n, k) for k in range(1, min(max_size, n) + 1)
    )
    caps.check_points(count, "hyperspace")
    subsets = []
    for k in range(1, min(max_size, n) + 1):
        subsets.extend(itertools.combinations(range(n), k))
    m = len(subsets)
    width = min(max_size, n)
    mem = np.asarray(
        [s + (s[0],) * (width - len(s)) for s in subsets], dtype=np.int64
    )
    C = space.codes
    # colmin[a, q] = min over members b of subset q of code(a, b)
    colmin = C[:, mem].min(axis=2)
    # directed[p, q] = max over members a of subset p of colmin[a, q]
    directed = colmin[mem].max(axis=1)
    codes = np.maximum(directed, directed.T)
    points = ["{" + "|".join(space.points[i] for i in s) + "}" for s in subsets]
    ultra = True if space._ultra is True else None
    return Space(points, codes, space.values, ultrametric=ultra, caps=caps)


def _comb(n: int, k: int) -> int:
    import math

    return math.comb(n, k)


# -- chain components and ultrametrization -----------------------------------


def chain_components(
    space: Space, radius: Rational
) -> tuple[tuple[PointId, ...], ...]:
    """Partition into chain components: x ~ y when a chain of steps of
    length <= radius joins them.  Components come back sorted by first
    member in point order."""
    n = len(space.points)
    t = space.threshold_code(radius, CLOSED)
    adj = space.codes <= t if t >= 0 else np.eye(n, dtype=bool)
    label = np.full(n, -1, dtype=np.int64)
    comp = 0
    for start in range(n):
        if label[start] >= 0:
            continue
        frontier = np.zeros(n, dtype=bool)
        frontier[start] = True
        seen = np.zeros(n, dtype=bool)
        while frontier.any():
            seen |= frontier
            reach = adj[frontier].any(axis=0)
            frontier = reach & ~seen
        label[seen] = comp
        comp += 1
    groups: list[list[PointId]] = [[] for _ in range(comp)]
    for i in range(n):
        groups[label[i]].append(space.points[i])
    return tuple(tuple(g) for g in groups)


def ultrametrize(
    space: Space, scales: Sequence[Rational], caps: Caps = DEFAULT_CAPS
) -> Space:
    """Replace a plain metric with the chain ultrametric over given scales.

    rho(x, y) = 2 * (least 1-based scale index at which x and y fall in the
    same chain component); the factor 2 puts distances on the even grid the
    tower path metric uses.  Requires strictly increasing scales whose last
    entry chains the whole space together.
    """
    scales = [canon(s) for s in scales]
    if not scales:
        raise ValueError("need at least one scale")
    if any(s2 <= s1 for s1, s2 in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly increasing")
    n = len(space.points)
    out = np.zeros((n, n), dtype=_pick_dtype(len(scales) + 1))
    assigned = np.eye(n, dtype=bool)
    for k, r in enumerate(scales, start=1):
        parts = chain_components(space, r)
        lab = np.empty(n, dtype=np.int64)
        for ci, part in enumerate(parts):
            for p in part:
                lab[space.index(p)] = ci
        same = lab[:, None] == lab[None, :]
        newly = same & ~assigned
        out[newly] = k
        assigned |= newly
    if not assigned.all():
        raise ValueError(
            "top scale does not chain the space into a single component")
    values = tuple(2 * k for k in range(len(scales) + 1))
    # some scale indices may be unrealized; compact the value table
    used = sorted(set(np.unique(out).tolist()))
    remap = {c: i for i, c in enumerate(used)}
    compact = np.vectorize(remap.get, otypes=[out.dtype])(out)
    return Space(
        space.points,
        compact,
        tuple(values[c] for c in used),
        ultrametric=True,
        caps=caps,
    )
