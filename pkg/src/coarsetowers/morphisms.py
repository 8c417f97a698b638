"""Multi-maps between finite spaces and their distortion calculus.

A multi-map is a relation: each source point may carry several targets and
the inverse is again a multi-map.  Everything a certificate claims about one
(moduli, surjectivity, closeness of a selection) is checked by exhaustive
scans over the realized distances, never assumed.  The second half of the
module works on towers: level-preserving embeddings, the admissibility
checker, and the deterministic builder that maps one germ onto another
within prescribed fiber-size windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .limits import DEFAULT_CAPS, CapExceeded, Caps
from .rationals import Rational, as_rational, canon, rat_json, rat_str
from .report import ValidationReport, Violation
from .spaces import CLOSED, PointId, Space, min_net, subspace
from .towers import DegreeProfile, NodeId, Tower, base_space, degree_profile


# -- multi-maps ---------------------------------------------------------------


@dataclass(frozen=True)
class MultiMap:
    """Relation between two finite spaces, stored as sorted (source, target)
    id pairs.  Derived views (fibers, inverse, surjectivity) are computed on
    demand and cached; the object itself never mutates."""

    source: Space
    target: Space
    pairs: tuple[tuple[PointId, PointId], ...]

    def __post_init__(self):
        norm = tuple(sorted(set((a, b) for a, b in self.pairs)))
        for a, b in norm:
            if a not in self.source:
                raise ValueError(f"pair source {a!r} not in the source space")
            if b not in self.target:
                raise ValueError(f"pair target {b!r} not in the target space")
        object.__setattr__(self, "pairs", norm)

    @classmethod
    def from_function(
        cls,
        source: Space,
        target: Space,
        fn: Union[Mapping[PointId, PointId], Callable[[PointId], PointId]],
    ) -> "MultiMap":
        get = fn.__getitem__ if isinstance(fn, Mapping) else fn
        return cls(source, target, tuple((p, get(p)) for p in source.points))

    @classmethod
    def identity(cls, space: Space) -> "MultiMap":
        return cls(space, space, tuple((p, p) for p in space.points))

    @cached_property
    def fibers(self) -> dict[PointId, tuple[PointId, ...]]:
        out: dict[PointId, list[PointId]] = {}
        for a, b in self.pairs:
            out.setdefault(a, []).append(b)
        return {a: tuple(bs) for a, bs in out.items()}

    @cached_property
    def cofibers(self) -> dict[PointId, tuple[PointId, ...]]:
        out: dict[PointId, list[PointId]] = {}
        for a, b in self.pairs:
            out.setdefault(b, []).append(a)
        return {b: tuple(a_) for b, a_ in out.items()}

    def image(self, subset: Optional[Iterable[PointId]] = None) -> tuple[PointId, ...]:
        if subset is None:
            return tuple(sorted(self.cofibers))
        hit: set[PointId] = set()
        for a in subset:
            hit.update(self.fibers.get(a, ()))
        return tuple(sorted(hit))

    def preimage(self, subset: Optional[Iterable[PointId]] = None) -> tuple[PointId, ...]:
        if subset is None:
            return tuple(sorted(self.fibers))
        hit: set[PointId] = set()
        for b in subset:
            hit.update(self.cofibers.get(b, ()))
        return tuple(sorted(hit))

    def inverse(self) -> "MultiMap":
        return MultiMap(self.target, self.source, tuple((b, a) for a, b in self.pairs))

    @property
    def is_total(self) -> bool:
        return len(self.fibers) == len(self.source.points)

    @property
    def is_surjective(self) -> bool:
        return len(self.cofibers) == len(self.target.points)

    @property
    def is_function(self) -> bool:
        return all(len(bs) == 1 for bs in self.fibers.values())

    @property
    def is_bijection(self) -> bool:
        return (
            self.is_total
            and self.is_surjective
            and self.is_function
            and all(len(a_) == 1 for a_ in self.cofibers.values())
        )

    def as_function(self) -> dict[PointId, PointId]:
        if not self.is_function:
            raise ValueError("relation is not single-valued")
        return {a: bs[0] for a, bs in self.fibers.items()}


def compose(phi: MultiMap, psi: MultiMap) -> MultiMap:
    """Relational composition: x related to z when some middle point y has
    (x,y) in phi and (y,z) in psi.  The middle spaces must carry the same
    point ids in the same order."""
    if phi.target.points != psi.source.points:
        raise ValueError("composition needs matching middle point sets")
    out: set[tuple[PointId, PointId]] = set()
    psi_fibers = psi.fibers
    for x, y in phi.pairs:
        for z in psi_fibers.get(y, ()):
            out.add((x, z))
    return MultiMap(phi.source, psi.target, tuple(sorted(out)))


# -- distortion moduli --------------------------------------------------------


@dataclass(frozen=True)
class DistortionModulus:
    """Step table eps -> max image diameter over source pairs at distance
    <= eps, totalized over the realized source distances.  Rows ascend and
    deltas are cumulative maxima, so the table is nondecreasing by
    construction; finite is always True on finite spaces and kept explicit
    because certificates quote it."""

    table: tuple[tuple[Rational, Rational], ...]
    witnesses: tuple[tuple[PointId, PointId, PointId, PointId], ...] = ()
    finite: bool = True

    def value_at(self, eps: Rational) -> Rational:
        """Largest delta among rows with row eps <= the query; 0 below the
        smallest realized distance (the empty set has diameter 0)."""
        out: Rational = 0
        for e, d in self.table:
            if e <= eps:
                out = d
            else:
                break
        return out

    def check_monotone(self) -> ValidationReport:
        violations = []
        for (e1, d1), (e2, d2) in zip(self.table, self.table[1:]):
            if not (e1 < e2 and d1 <= d2):
                violations.append(Violation(
                    "modulus-monotone", (rat_str(e1), rat_str(e2)),
                    f"rows ({rat_str(e1)},{rat_str(d1)}) then "
                    f"({rat_str(e2)},{rat_str(d2)}) break monotonicity"))
        return ValidationReport(
            "distortion modulus", ("modulus-monotone",), tuple(violations))

    def to_json(self) -> dict:
        return {
            "table": [[rat_json(e), rat_json(d)] for e, d in self.table],
            "witnesses": [list(w) for w in self.witnesses],
            "finite": self.finite,
        }


def distortion_modulus(phi: MultiMap, caps: Caps = DEFAULT_CAPS) -> DistortionModulus:
    """Exhaustive modulus over all pairs of graph points.

    Pairwise diameters suffice: a set has diameter <= d exactly when every
    two of its points are within d, so scanning (a,b),(a',b') pairs covers
    every image of every bounded set.
    """
    if not phi.pairs:
        raise ValueError("modulus of an empty relation")
    n = len(phi.pairs)
    if n * n > caps.max_pair_evals:
        raise CapExceeded(
            f"modulus scan needs {n * n} pair evaluations, cap is "
            f"{caps.max_pair_evals}")
    src, tgt = phi.source, phi.target
    ia = np.asarray([src.index(a) for a, _ in phi.pairs], dtype=np.int64)
    ib = np.asarray([tgt.index(b) for _, b in phi.pairs], dtype=np.int64)
    nv = len(src.values)
    best = [-1] * nv
    bestpos: list[Optional[tuple[int, int]]] = [None] * nv
    chunk = max(1, 4_000_000 // n)
    for lo in range(0, n, chunk):
        sc = src.codes[np.ix_(ia[lo:lo + chunk], ia)]
        tc = tgt.codes[np.ix_(ib[lo:lo + chunk], ib)]
        for c in np.unique(sc):
            masked = np.where(sc == c, tc, -1)
            j = int(masked.argmax())
            v = int(masked.flat[j])
            if v > best[int(c)]:
                best[int(c)] = v
                bestpos[int(c)] = (lo + j // tc.shape[1], j % tc.shape[1])
    rows: list[tuple[Rational, Rational]] = []
    wits: list[tuple[PointId, PointId, PointId, PointId]] = []
    run, runpos = -1, (0, 0)
    for c in range(nv):
        if best[c] < 0:
            continue  # source distance not realized between mapped points
        if best[c] > run:
            run, runpos = best[c], bestpos[c]  # type: ignore[assignment]
        i, j = runpos
        rows.append((src.values[c], tgt.values[run]))
        wits.append((phi.pairs[i][0], phi.pairs[j][0],
                     phi.pairs[i][1], phi.pairs[j][1]))
    return DistortionModulus(tuple(rows), tuple(wits), finite=True)


def check_modulus_composition(
    composed: DistortionModulus, stages: Sequence[DistortionModulus]
) -> ValidationReport:
    """Composed modulus must sit below the stagewise composition: push each
    eps through the stage tables in order and compare."""
    violations = []
    for eps, delta in composed.table:
        bound: Rational = eps
        for stage in stages:
            bound = stage.value_at(bound)
        if delta > bound:
            violations.append(Violation(
                "modulus-composition", (rat_str(eps),),
                f"composed delta {rat_str(delta)} exceeds stagewise bound "
                f"{rat_str(bound)} at eps {rat_str(eps)}"))
    return ValidationReport(
        "modulus composition", ("modulus-composition",), tuple(violations))


# -- certificates -------------------------------------------------------------


@dataclass(frozen=True)
class CertCheck:
    axiom: str
    passed: bool
    witness: tuple = ()

    def to_json(self) -> dict:
        return {
            "axiom": self.axiom,
            "passed": self.passed,
            "witness": [rat_json(w) if isinstance(w, (int, Fraction)) else str(w)
                        for w in self.witness],
        }


@dataclass(frozen=True)
class MorphismCertificate:
    """What was verified about one multi-map: both moduli, surjectivity of
    both directions, the individual checks with witnesses, and optionally a
    closeness bound between a selection round-trip and the identity."""

    kind: str  # isometry | asymorphism | embedding | admissible | relation
    forward_modulus: DistortionModulus
    backward_modulus: DistortionModulus
    checks: tuple[CertCheck, ...]
    forward_surjective: bool
    backward_surjective: bool
    closeness_bound: Optional[Rational] = None

    @property
    def is_asymorphism(self) -> bool:
        """Both directions surjective with finite moduli; isometries and
        built germ maps qualify, a bare embedding does not."""
        return (
            self.kind in ("isometry", "asymorphism", "admissible")
            and self.forward_surjective
            and self.backward_surjective
            and self.forward_modulus.finite
            and self.backward_modulus.finite
        )

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "forward_modulus": self.forward_modulus.to_json(),
            "backward_modulus": self.backward_modulus.to_json(),
            "checks": [c.to_json() for c in self.checks],
            "forward_surjective": self.forward_surjective,
            "backward_surjective": self.backward_surjective,
            "closeness_bound": (
                None if self.closeness_bound is None
                else rat_json(self.closeness_bound)),
        }


def _isometric_witness(
    phi: MultiMap, caps: Caps
) -> Optional[tuple[PointId, PointId, PointId, PointId]]:
    """First graph-point pair whose source and target distances differ, or
    None when the relation preserves every distance exactly."""
    n = len(phi.pairs)
    if n * n > caps.max_pair_evals:
        raise CapExceeded("isometry scan exceeds the pair-evaluation cap")
    src, tgt = phi.source, phi.target
    ia = np.asarray([src.index(a) for a, _ in phi.pairs], dtype=np.int64)
    ib = np.asarray([tgt.index(b) for _, b in phi.pairs], dtype=np.int64)
    # source code -> target code of the equal value, -1 when absent
    tcode_of = {v: i for i, v in enumerate(tgt.values)}
    tmap = np.asarray(
        [tcode_of.get(v, -1) for v in src.values], dtype=np.int64)
    chunk = max(1, 4_000_000 // n)
    for lo in range(0, n, chunk):
        sc = src.codes[np.ix_(ia[lo:lo + chunk], ia)]
        tc = tgt.codes[np.ix_(ib[lo:lo + chunk], ib)]
        bad = tmap[sc] != tc
        if bad.any():
            i, j = np.argwhere(bad)[0]
            i = int(i) + lo
            j = int(j)
            return (phi.pairs[i][0], phi.pairs[j][0],
                    phi.pairs[i][1], phi.pairs[j][1])
    return None


def verify_asymorphism(
    phi: MultiMap,
    expect_isometry: bool = False,
    caps: Caps = DEFAULT_CAPS,
) -> MorphismCertificate:
    """Compute both moduli and surjectivity, then grade the relation.

    Both directions surjective gives an asymorphism; only the inverse
    surjective (a total, non-onto map) gives an embedding; anything weaker
    is reported as a plain relation.  With expect_isometry the scan also
    compares every source distance against its image distance, and an exact,
    bijective match upgrades the kind to isometry.
    """
    if not phi.pairs:
        raise ValueError("cannot certify an empty relation")
    fwd = distortion_modulus(phi, caps)
    bwd = distortion_modulus(phi.inverse(), caps)
    onto = phi.is_surjective
    total = phi.is_total
    missing_t = next((p for p in phi.target.points if p not in phi.cofibers), None)
    missing_s = next((p for p in phi.source.points if p not in phi.fibers), None)
    checks = [
        CertCheck("forward-surjective", onto,
                  () if onto else (missing_t,)),
        CertCheck("backward-surjective", total,
                  () if total else (missing_s,)),
        CertCheck("forward-modulus-finite", fwd.finite),
        CertCheck("backward-modulus-finite", bwd.finite),
        CertCheck("forward-modulus-monotone", fwd.check_monotone().ok),
        CertCheck("backward-modulus-monotone", bwd.check_monotone().ok),
    ]
    kind = "asymorphism" if (onto and total) else (
        "embedding" if total else "relation")
    if expect_isometry:
        wit = _isometric_witness(phi, caps)
        checks.append(CertCheck(
            "distance-preserving", wit is None, wit if wit else ()))
        if wit is None and phi.is_bijection:
            kind = "isometry"
    return MorphismCertificate(
        kind=kind,
        forward_modulus=fwd,
        backward_modulus=bwd,
        checks=tuple(checks),
        forward_surjective=onto,
        backward_surjective=total,
    )


def with_closeness(
    cert: MorphismCertificate, bound: Rational
) -> MorphismCertificate:
    return replace(cert, closeness_bound=canon(as_rational(bound)))


# -- selections and normal form -----------------------------------------------


@dataclass(frozen=True)
class SelectionPair:
    """Deterministic single-valued selections out of a verified asymorphism.

    f picks the least target id in each fiber, g the least source id in
    each cofiber; closeness is the worse of the two round-trip distances
    and is bounded by the matching relation fiber diameter, which is also
    recorded so the bound is checkable from the data alone."""

    f: dict[PointId, PointId]
    g: dict[PointId, PointId]
    closeness: Rational
    source_closeness: Rational
    target_closeness: Rational
    source_fiber_bound: Rational
    target_fiber_bound: Rational

    def to_json(self) -> dict:
        return {
            "f": {k: self.f[k] for k in sorted(self.f)},
            "g": {k: self.g[k] for k in sorted(self.g)},
            "closeness": rat_json(self.closeness),
            "source_closeness": rat_json(self.source_closeness),
            "target_closeness": rat_json(self.target_closeness),
            "source_fiber_bound": rat_json(self.source_fiber_bound),
            "target_fiber_bound": rat_json(self.target_fiber_bound),
        }


def _max_roundtrip_fiber_diameter(phi: MultiMap) -> Rational:
    """Max diameter of a fiber of the inverse-then-forward round trip,
    i.e. of preimage(image({x})) over all source points x."""
    src = phi.source
    out_code = 0
    for x in phi.fibers:
        members = set()
        for y in phi.fibers[x]:
            members.update(phi.cofibers[y])
        idx = np.asarray([src.index(m) for m in members], dtype=np.int64)
        out_code = max(out_code, int(src.codes[np.ix_(idx, idx)].max()))
    return src.values[out_code]


def selection_pair(
    phi: MultiMap,
    certificate: Optional[MorphismCertificate] = None,
    caps: Caps = DEFAULT_CAPS,
) -> SelectionPair:
    cert = certificate if certificate is not None else verify_asymorphism(phi, caps=caps)
    if not cert.is_asymorphism:
        raise ValueError(
            f"selection needs a verified asymorphism, certificate says "
            f"{cert.kind!r}")
    f = {x: min(ts) for x, ts in phi.fibers.items()}
    g = {y: min(xs) for y, xs in phi.cofibers.items()}
    src, tgt = phi.source, phi.target
    s_close = max(src.dist(x, g[f[x]]) for x in f)
    t_close = max(tgt.dist(y, f[g[y]]) for y in g)
    s_bound = _max_roundtrip_fiber_diameter(phi)
    t_bound = _max_roundtrip_fiber_diameter(phi.inverse())
    if s_close > s_bound or t_close > t_bound:
        # {x, g(f(x))} always sits inside one round-trip fiber
        raise RuntimeError("selection closeness exceeded its fiber bound")
    return SelectionPair(
        f=f,
        g=g,
        closeness=max(s_close, t_close),
        source_closeness=s_close,
        target_closeness=t_close,
        source_fiber_bound=s_bound,
        target_fiber_bound=t_bound,
    )


def is_large(
    space: Space, subset: Iterable[PointId], caps: Caps = DEFAULT_CAPS
) -> Rational:
    """Covering radius of a subset: the sup over points of the distance to
    the nearest subset member.  Every finite subset is large at any radius
    beyond this value, so the sup itself is reported."""
    sub = space.subindices(subset)
    if sub.size == 0:
        raise ValueError("empty subset cannot be large")
    colmin = space.codes[:, sub].min(axis=1)
    return space.values[int(colmin.max())]


@dataclass(frozen=True)
class NormalForm:
    """Mutually close bijection extracted from a selection pair: h maps a
    transversal of f's fibers onto the image of f, both sides large in
    their spaces with quoted covering radii."""

    x_prime: tuple[PointId, ...]
    y_prime: tuple[PointId, ...]
    h: dict[PointId, PointId]
    r_bound: Rational
    x_cover: Rational
    y_cover: Rational
    h_forward: DistortionModulus
    h_backward: DistortionModulus
    backward_bound: ValidationReport

    def to_json(self) -> dict:
        return {
            "x_prime": list(self.x_prime),
            "y_prime": list(self.y_prime),
            "h": {k: self.h[k] for k in sorted(self.h)},
            "r_bound": rat_json(self.r_bound),
            "x_cover": rat_json(self.x_cover),
            "y_cover": rat_json(self.y_cover),
            "h_forward": self.h_forward.to_json(),
            "h_backward": self.h_backward.to_json(),
            "backward_bound": self.backward_bound.to_json(),
        }


def coarse_normal_form(
    source: Space,
    target: Space,
    f: Mapping[PointId, PointId],
    g: Mapping[PointId, PointId],
    caps: Caps = DEFAULT_CAPS,
) -> NormalForm:
    """Restrict a mutually close pair (f, g) to a bijection.

    Y' is the image of f; X' keeps the least-id point of each f-fiber over
    Y'.  The restriction h is then a bijection whose backward modulus obeys
    delta_g(eps) + 2R row by row, with R the worse round-trip distance.
    Both subsets are large: Y' within R, X' within 2R.
    """
    if set(f) != set(source.points):
        raise ValueError("f must be defined on every source point")
    if set(g) != set(target.points):
        raise ValueError("g must be defined on every target point")
    for x, y in f.items():
        if y not in target:
            raise ValueError(f"f({x!r}) lands outside the target")
    for y, x in g.items():
        if x not in source:
            raise ValueError(f"g({y!r}) lands outside the source")
    r_source = max(source.dist(x, g[f[x]]) for x in source.points)
    r_target = max(target.dist(y, f[g[y]]) for y in target.points)
    big_r = max(r_source, r_target)

    y_prime = tuple(sorted(set(f.values())))
    transversal: dict[PointId, PointId] = {}
    for x in sorted(f):  # least-id representative per fiber
        y = f[x]
        if y not in transversal:
            transversal[y] = x
    x_prime = tuple(sorted(transversal.values()))
    h = {transversal[y]: y for y in y_prime}

    sub_x = subspace(source, x_prime, caps=caps)
    sub_y = subspace(target, y_prime, caps=caps)
    h_map = MultiMap.from_function(sub_x, sub_y, h)
    fwd = distortion_modulus(h_map, caps)
    bwd = distortion_modulus(h_map.inverse(), caps)

    g_modulus = distortion_modulus(
        MultiMap.from_function(target, source, dict(g)), caps)
    violations = []
    for eps, delta in bwd.table:
        bound = g_modulus.value_at(eps) + 2 * big_r
        if delta > bound:
            violations.append(Violation(
                "backward-bound", (rat_str(eps),),
                f"h backward delta {rat_str(delta)} exceeds "
                f"{rat_str(bound)} at eps {rat_str(eps)}"))
    backward_report = ValidationReport(
        "normal form backward modulus", ("backward-bound",), tuple(violations))

    x_cover = is_large(source, x_prime, caps)
    y_cover = is_large(target, y_prime, caps)
    if y_cover > big_r or x_cover > 2 * big_r:
        raise RuntimeError("normal form cover radii exceeded their bounds")
    return NormalForm(
        x_prime=x_prime,
        y_prime=y_prime,
        h=h,
        r_bound=big_r,
        x_cover=x_cover,
        y_cover=y_cover,
        h_forward=fwd,
        h_backward=bwd,
        backward_bound=backward_report,
    )


# -- tower embeddings ---------------------------------------------------------


def tower_embedding(
    t1: Tower,
    t2: Tower,
    require_iso: bool = False,
    caps: Caps = DEFAULT_CAPS,
) -> tuple[dict[NodeId, NodeId], MorphismCertificate]:
    """Level-preserving monotone injection of t1 into t2.

    Feasible whenever every level of t2 has at least as many children per
    node as the largest degree of t1 on that level; the first failing level
    is reported otherwise.  Construction is the deterministic greedy one:
    children in id order occupy the least-id free children of the image.
    The returned certificate covers the base restriction, which must
    preserve the path metric exactly.
    """
    if t1.height != t2.height:
        raise ValueError(
            f"height mismatch: {t1.height} vs {t2.height}")
    p1 = degree_profile(t1)
    p2 = degree_profile(t2)
    for k in range(1, t1.height):
        need = p1.consecutive_large(k)
        have = p2.consecutive_small(k)
        if need > have:
            raise ValueError(
                f"degree precondition fails at level {k}: "
                f"Deg_{k} = {need} > deg_{k} = {have}")
        if require_iso:
            vals = (p1.consecutive_small(k), p1.consecutive_large(k),
                    p2.consecutive_small(k), p2.consecutive_large(k))
            if len(set(vals)) != 1:
                raise ValueError(
                    f"isomorphism precondition fails at level {k}: "
                    f"degree data {vals} not homogeneous-equal")
    phi: dict[NodeId, NodeId] = {t1.top: t2.top}
    for node in reversed(t1.nodes):  # descending (level, id)
        if t1.level[node] == 1:
            continue
        image_kids = t2.children[phi[node]]
        for i, child in enumerate(t1.children[node]):
            phi[child] = image_kids[i]
    if len(set(phi.values())) != len(phi):
        raise RuntimeError("embedding construction lost injectivity")

    base_pairs = tuple((x, phi[x]) for x in t1.base)
    phi_base = MultiMap(base_space(t1, caps), base_space(t2, caps), base_pairs)
    cert = verify_asymorphism(phi_base, expect_isometry=True, caps=caps)
    preserved = next(
        c for c in cert.checks if c.axiom == "distance-preserving")
    if not preserved.passed:
        raise RuntimeError(
            f"embedding base restriction distorted a distance: "
            f"{preserved.witness}")
    if require_iso and not phi_base.is_bijection:
        raise RuntimeError("isomorphism request produced a non-bijection")
    return phi, cert


# -- admissible morphisms -----------------------------------------------------


def check_admissible(
    phi: Mapping[NodeId, NodeId], t1: Tower, t2: Tower
) -> ValidationReport:
    """Five structural conditions on a node map between towers.

    The domain must be a lower subset; the map preserves levels, commutes
    with taking parents inside the domain, keeps each fiber inside one
    sibling set, has a lower-set image, and sends the maximal domain nodes
    to at most one node.
    """
    checked = (
        "domain-lower-set", "level-preserving", "monotone",
        "fibers-in-one-sibling-set", "image-lower-set", "single-top-image")
    violations: list[Violation] = []
    dom = set(phi)
    for x in phi:
        if x not in t1.level:
            return ValidationReport(
                "admissible morphism", checked,
                (Violation("domain-lower-set", (x,),
                           f"domain node {x!r} not in the source tower"),))
        if phi[x] not in t2.level:
            return ValidationReport(
                "admissible morphism", checked,
                (Violation("image-lower-set", (x, phi[x]),
                           f"image node {phi[x]!r} not in the target tower"),))
    for x in sorted(dom):
        for c in t1.children[x]:
            if c not in dom:
                violations.append(Violation(
                    "domain-lower-set", (x, c),
                    f"{x!r} is in the domain but its child {c!r} is not"))
        if t1.level[x] != t2.level[phi[x]]:
            violations.append(Violation(
                "level-preserving", (x, phi[x]),
                f"lev({x!r}) = {t1.level[x]} but lev({phi[x]!r}) = "
                f"{t2.level[phi[x]]}"))
    for x in sorted(dom):
        p = t1.parent[x]
        if p is not None and p in dom:
            if t2.parent[phi[x]] != phi[p]:
                violations.append(Violation(
                    "monotone", (x, p),
                    f"parent of image of {x!r} is {t2.parent[phi[x]]!r}, "
                    f"expected {phi[p]!r}"))
    by_image: dict[NodeId, list[NodeId]] = {}
    for x in sorted(dom):
        by_image.setdefault(phi[x], []).append(x)
    for y, fiber in sorted(by_image.items()):
        parents = {t1.parent[x] for x in fiber}
        if len(fiber) > 1 and (len(parents) != 1 or None in parents):
            violations.append(Violation(
                "fibers-in-one-sibling-set", tuple(fiber[:2]),
                f"fiber of {y!r} spans distinct parents {sorted(map(str, parents))}"))
    img = set(phi.values())
    for y in sorted(img):
        for c in t2.children[y]:
            if c not in img:
                violations.append(Violation(
                    "image-lower-set", (y, c),
                    f"{y!r} is in the image but its child {c!r} is not"))
    max_nodes = [x for x in dom
                 if t1.parent[x] is None or t1.parent[x] not in dom]
    top_images = {phi[x] for x in max_nodes}
    if len(top_images) > 1:
        violations.append(Violation(
            "single-top-image", tuple(sorted(top_images)[:2]),
            f"maximal domain nodes map to {len(top_images)} distinct nodes"))
    return ValidationReport("admissible morphism", checked, tuple(violations))


@dataclass(frozen=True)
class AdmissibleSequences:
    """Per-level fiber-size windows [a_i, b_i], 1-indexed by tower level."""

    a: tuple[Rational, ...]
    b: tuple[Rational, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "a", tuple(canon(as_rational(v)) for v in self.a))
        object.__setattr__(
            self, "b", tuple(canon(as_rational(v)) for v in self.b))
        if len(self.a) != len(self.b):
            raise ValueError("sequence lengths differ")

    def __len__(self) -> int:
        return len(self.a)

    def window(self, level: int) -> tuple[Rational, Rational]:
        if not 1 <= level <= len(self.a):
            raise ValueError(f"no window at level {level}")
        return self.a[level - 1], self.b[level - 1]

    def check(self) -> ValidationReport:
        violations = []
        for i, (ai, bi) in enumerate(zip(self.a, self.b), start=1):
            if not (1 <= ai and ai + 2 <= bi):
                violations.append(Violation(
                    "window-spacing", (i,),
                    f"level {i}: need 1 <= a <= a+2 <= b, got a = "
                    f"{rat_str(ai)}, b = {rat_str(bi)}"))
        return ValidationReport(
            "admissible sequences", ("window-spacing",), tuple(violations))

    def to_json(self) -> dict:
        return {
            "a": [rat_json(v) for v in self.a],
            "b": [rat_json(v) for v in self.b],
        }


def check_l2_preconditions(
    profile1: DegreeProfile,
    profile2: DegreeProfile,
    seqs: AdmissibleSequences,
) -> ValidationReport:
    """Level-by-level feasibility of mapping a germ with profile1 onto one
    with profile2 under the fiber windows.

    For each level i below the top: the window is wide enough (a+2 <= b),
    the source degree admits a fiber (a_i + 1 <= deg_i, the stronger of the
    two rounding readings, both of which are recorded), the packed lower
    bound b_i + a_i * Deg_i(T2) / a_{i+1} fits under deg_i(T1), and the
    spread upper bound keeps Deg_i(T1) within a_i + b_i * (deg_i(T2) /
    b_{i+1} - 2).  All comparisons are exact rational arithmetic.
    """
    h = profile1.height
    if profile2.height != h:
        raise ValueError(
            f"profile heights differ: {h} vs {profile2.height}")
    if len(seqs) != h:
        raise ValueError(
            f"sequence length {len(seqs)} does not match profile height {h}")
    checked: list[str] = []
    violations: list[Violation] = []
    for v in seqs.check().violations:
        violations.append(v)
    checked.append("window-spacing")
    for i in range(1, h):
        ai, bi = seqs.window(i)
        ai1, bi1 = seqs.window(i + 1)
        deg1 = profile1.consecutive_small(i)
        big1 = profile1.consecutive_large(i)
        deg2 = profile2.consecutive_small(i)
        big2 = profile2.consecutive_large(i)
        name = f"degree-room[{i}]"
        checked.append(
            f"{name} readings: ceil {math.ceil(ai)} <= {deg1} "
            f"{'pass' if math.ceil(ai) <= deg1 else 'fail'}; floor "
            f"{math.floor(ai)} <= {deg1} "
            f"{'pass' if math.floor(ai) <= deg1 else 'fail'}")
        if not ai + 1 <= deg1:
            violations.append(Violation(
                name, (i,),
                f"level {i}: a_{i} + 1 = {rat_str(ai + 1)} > deg_{i}(T1) "
                f"= {deg1}"))
        low = bi + ai * Fraction(big2, 1) / ai1
        checked.append(f"packed-lower[{i}]")
        if not low <= deg1:
            violations.append(Violation(
                f"packed-lower[{i}]", (i,),
                f"level {i}: b_{i} + a_{i} * Deg_{i}(T2) / a_{i + 1} = "
                f"{rat_str(canon(low))} > deg_{i}(T1) = {deg1}"))
        high = ai + bi * (Fraction(deg2, 1) / bi1 - 2)
        checked.append(f"spread-upper[{i}]")
        if not big1 <= high:
            violations.append(Violation(
                f"spread-upper[{i}]", (i,),
                f"level {i}: Deg_{i}(T1) = {big1} > a_{i} + b_{i} * "
                f"(deg_{i}(T2) / b_{i + 1} - 2) = {rat_str(canon(high))}"))
        checked.append(f"integer-window[{i}]")
        if math.ceil(ai) > math.floor(bi):
            violations.append(Violation(
                f"integer-window[{i}]", (i,),
                f"level {i}: integer window [{math.ceil(ai)}, "
                f"{math.floor(bi)}] is empty"))
    return ValidationReport(
        "fiber-window preconditions", tuple(checked), tuple(violations))


def balanced_partition(
    items: Sequence,
    parts: int,
    lo: Rational,
    hi: Rational,
) -> list[tuple]:
    """Split items in order into `parts` consecutive blocks whose sizes
    differ by at most one and each lie in [lo, hi].  The largest blocks come
    first, so the assignment is deterministic in item order."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    seq = list(items)
    n = len(seq)
    lo_i = math.ceil(as_rational(lo))
    hi_i = math.floor(as_rational(hi))
    if parts * lo_i > n or n > parts * hi_i:
        raise ValueError(
            f"infeasible window: need {parts}*{lo_i} <= {n} <= "
            f"{parts}*{hi_i} for sizes in [{rat_str(canon(as_rational(lo)))}, "
            f"{rat_str(canon(as_rational(hi)))}]")
    base, rem = divmod(n, parts)
    out: list[tuple] = []
    pos = 0
    for k in range(parts):
        size = base + 1 if k < rem else base
        out.append(tuple(seq[pos:pos + size]))
        pos += size
    return out


def _merged_cone_profile(t1: Tower, roots: Sequence[NodeId]) -> DegreeProfile:
    """Degree profile over the union of the lower cones of the roots:
    entrywise min of smalls and max of larges of the individual germs."""
    profiles = [degree_profile(t1.germ(r)) for r in roots]
    height = profiles[0].height
    small: dict[tuple[int, int], int] = {}
    large: dict[tuple[int, int], int] = {}
    for p in profiles:
        for key, v in p.small.items():
            small[key] = min(small.get(key, v), v)
        for key, v in p.large.items():
            large[key] = max(large.get(key, v), v)
    return DegreeProfile(height=height, small=small, large=large)


def build_admissible_morphism(
    t1: Tower,
    roots: Sequence[NodeId],
    t2: Tower,
    w: NodeId,
    seqs: AdmissibleSequences,
    caps: Caps = DEFAULT_CAPS,
) -> tuple[dict[NodeId, NodeId], MorphismCertificate]:
    """Map the cones below a sibling set of t1 onto the cone below w in t2.

    Deterministic descent: the roots all map to w; at each mapped node the
    children of the image are shared out by largest remainder in id order,
    every source sibling set is cut by balanced_partition within that
    level's window, and parts pair with image children in id order.  The
    result is surjective onto the cone of w, passes check_admissible, and
    its base restriction satisfies the two-sided distance bounds (images
    never move apart, sources stay within image distance + 2); all of this
    is re-checked after construction and certified.

    Any infeasibility aborts with the failing inequality; nothing partial
    is returned.
    """
    roots = sorted(set(roots))
    if not roots:
        raise ValueError("empty root set")
    if w not in t2.level:
        raise KeyError(f"unknown target node: {w!r}")
    lvl = t2.level[w]
    for r in roots:
        if r not in t1.level:
            raise KeyError(f"unknown source node: {r!r}")
        if t1.level[r] != lvl:
            raise ValueError(
                f"root {r!r} sits at level {t1.level[r]}, target {w!r} at "
                f"level {lvl}")
    if len(roots) > 1:
        parents = {t1.parent[r] for r in roots}
        if len(parents) != 1 or None in parents:
            raise ValueError("roots must form a sibling set")
    if len(seqs) != lvl:
        raise ValueError(
            f"need one window per level 1..{lvl}, got {len(seqs)}")
    seqs.check().require()
    a_top, b_top = seqs.window(lvl)
    if not a_top <= len(roots) <= b_top:
        raise ValueError(
            f"root count {len(roots)} outside the level-{lvl} window "
            f"[{rat_str(a_top)}, {rat_str(b_top)}]")
    if lvl > 1:
        p1 = _merged_cone_profile(t1, roots)
        p2 = degree_profile(t2.germ(w))
        check_l2_preconditions(p1, p2, seqs).require()

    phi: dict[NodeId, NodeId] = {}

    def descend(group: Sequence[NodeId], target: NodeId, level: int) -> None:
        for x in group:
            phi[x] = target
        if level == 1:
            return
        target_kids = t2.children[target]
        count = len(group)
        base_q, rem = divmod(len(target_kids), count)
        lo, hi = seqs.window(level - 1)
        pos = 0
        for idx, x in enumerate(group):
            quota = base_q + 1 if idx < rem else base_q
            if quota == 0:
                raise ValueError(
                    f"level {level}: node {x!r} receives no image children "
                    f"(deg(w) = {len(target_kids)} < fiber size {count})")
            try:
                blocks = balanced_partition(
                    t1.children[x], quota, lo, hi)
            except ValueError as err:
                raise ValueError(f"level {level - 1} under {x!r}: {err}") from None
            for block in blocks:
                descend(block, target_kids[pos], level - 1)
                pos += 1

    descend(roots, w, lvl)

    admissibility = check_admissible(phi, t1, t2)
    if not admissibility.ok:
        raise RuntimeError(
            f"builder produced a non-admissible map: "
            f"{admissibility.violations[0].message}")
    target_cone = set(t2.cone(w))
    if set(phi.values()) != target_cone:
        raise RuntimeError("builder image does not cover the target cone")

    dom_base = sorted(x for x in phi if t1.level[x] == 1)
    src_space = subspace(base_space(t1, caps), dom_base, caps=caps)
    tgt_space = subspace(base_space(t2, caps), t2.base_below(w), caps=caps)
    phi_base = MultiMap(
        src_space, tgt_space, tuple((x, phi[x]) for x in dom_base))
    bounds = check_base_distortion(phi_base)
    if not bounds.ok:
        raise RuntimeError(
            f"built base map violates its distortion bounds: "
            f"{bounds.violations[0].message}")
    fwd = distortion_modulus(phi_base, caps)
    bwd = distortion_modulus(phi_base.inverse(), caps)
    checks = tuple(
        [CertCheck(v, True) for v in admissibility.checked]
        + [CertCheck("base-contraction", True),
           CertCheck("base-expansion-plus-2", True),
           CertCheck("surjective-onto-cone", True)])
    cert = MorphismCertificate(
        kind="admissible",
        forward_modulus=fwd,
        backward_modulus=bwd,
        checks=checks,
        forward_surjective=True,
        backward_surjective=True,
    )
    return phi, cert


def check_base_distortion(phi: MultiMap) -> ValidationReport:
    """Two-sided exact bounds for a base-level map: image pairs never move
    farther apart than their sources, and source pairs stay within image
    distance + 2.  Checked over every pair."""
    checked = ("base-contraction", "base-expansion-plus-2")
    if not phi.is_function or not phi.is_total:
        return ValidationReport(
            "base distortion bounds", checked,
            (Violation("base-contraction", (),
                       "bounds apply to total single-valued maps only"),))
    src, tgt = phi.source, phi.target
    ia = np.asarray([src.index(a) for a, _ in phi.pairs], dtype=np.int64)
    ib = np.asarray([tgt.index(b) for _, b in phi.pairs], dtype=np.int64)
    sv = src.value_array()
    tv = tgt.value_array()
    violations: list[Violation] = []
    if sv is not None and tv is not None:
        ds = sv[src.codes[np.ix_(ia, ia)]]
        dt = tv[tgt.codes[np.ix_(ib, ib)]]
        bad = np.argwhere(dt > ds)
        if bad.size:
            i, j = map(int, bad[0])
            violations.append(Violation(
                "base-contraction", (phi.pairs[i][0], phi.pairs[j][0]),
                f"images of {phi.pairs[i][0]!r}, {phi.pairs[j][0]!r} are "
                f"{dt[i, j]} apart, sources only {ds[i, j]}"))
        bad = np.argwhere(ds > dt + 2)
        if bad.size:
            i, j = map(int, bad[0])
            violations.append(Violation(
                "base-expansion-plus-2", (phi.pairs[i][0], phi.pairs[j][0]),
                f"sources {phi.pairs[i][0]!r}, {phi.pairs[j][0]!r} are "
                f"{ds[i, j]} apart, images {dt[i, j]}"))
    else:
        # rational-valued fallback, same bounds pair by pair
        for i, (x, fx) in enumerate(phi.pairs):
            for y, fy in phi.pairs[:i + 1]:
                dsv = src.dist(x, y)
                dtv = tgt.dist(fx, fy)
                if dtv > dsv:
                    violations.append(Violation(
                        "base-contraction", (x, y), "image pair moved apart"))
                if dsv > dtv + 2:
                    violations.append(Violation(
                        "base-expansion-plus-2", (x, y),
                        "source pair beyond image distance + 2"))
    return ValidationReport("base distortion bounds", checked, tuple(violations))


def check_entropy_transport(
    phi: MultiMap,
    certificate: MorphismCertificate,
    centers: Optional[Sequence[PointId]] = None,
    caps: Caps = DEFAULT_CAPS,
) -> ValidationReport:
    """Net sizes transport through a total map: for a source ball around x
    of radius r and any eps, the minimum net of the ball at radius
    backward(2*eps) is no larger than the minimum eps-net of the covering
    target ball around f(x) of radius forward(r).  Closed nets throughout."""
    if not phi.is_total:
        raise ValueError("entropy transport needs a total map")
    fwd = certificate.forward_modulus
    bwd = certificate.backward_modulus
    src, tgt = phi.source, phi.target
    pts = tuple(centers) if centers is not None else src.points
    violations: list[Violation] = []
    for x in pts:
        y = min(phi.fibers[x])
        xi = src.index(x)
        yi = tgt.index(y)
        for r in src.values:
            ball_x = [src.points[int(i)]
                      for i in np.nonzero(
                          src.codes[xi] <= src.threshold_code(r, CLOSED))[0]]
            cover = fwd.value_at(r)
            tcode = tgt.threshold_code(cover, CLOSED)
            ball_y = [tgt.points[int(i)]
                      for i in np.nonzero(tgt.codes[yi] <= tcode)[0]]
            for eps in tgt.values:
                n_target = len(min_net(tgt, ball_y, eps, CLOSED, caps))
                n_source = len(min_net(src, ball_x, bwd.value_at(2 * eps),
                                       CLOSED, caps))
                if n_source > n_target:
                    violations.append(Violation(
                        "entropy-transport", (x, rat_str(r), rat_str(eps)),
                        f"source ball needs {n_source} centers, covering "
                        f"target ball only {n_target}"))
    return ValidationReport(
        "entropy transport", ("entropy-transport",), tuple(violations))
