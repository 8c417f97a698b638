"""Wire formats and report assembly.

Spaces travel as JSON {points, dist} or as a labeled distance-matrix CSV;
towers as JSON {height, nodes}.  Values follow one rule everywhere:
integers bare, anything else "p/q".  Emission is deterministic so reruns
of the same configuration are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .limits import Caps, DEFAULT_CAPS
from .rationals import Rational, as_rational, canon, rat_from_json, rat_json, rat_str
from .spaces import PointId, Space
from .towers import NodeId, Tower

__all__ = [
    "space_to_json",
    "space_from_json",
    "space_to_csv",
    "space_from_csv",
    "tower_to_json",
    "tower_from_json",
    "multimap_to_json",
    "content_hash",
    "dump_json",
    "dump_csv",
    "pipeline_report",
]


def _codes_from_values(rows: Sequence[Sequence[Rational]]):
    values = sorted({v for row in rows for v in row})
    index = {v: k for k, v in enumerate(values)}
    n = len(rows)
    dtype = np.int8 if len(values) < 128 else np.int32
    codes = np.zeros((n, n), dtype=dtype)
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            codes[i, j] = index[v]
    return codes, tuple(values)


def space_to_json(space: Space) -> dict:
    dist = [
        [rat_json(space.values[int(c)]) for c in row]
        for row in space.codes
    ]
    return {"points": list(space.points), "dist": dist}


def space_from_json(data: dict, caps: Caps = DEFAULT_CAPS) -> Space:
    if not isinstance(data, dict) or "points" not in data or "dist" not in data:
        raise ValueError("space JSON needs 'points' and 'dist'")
    points = data["points"]
    if not isinstance(points, list) or not all(isinstance(p, str) for p in points):
        raise ValueError("'points' must be a list of id strings")
    n = len(points)
    dist = data["dist"]
    if not isinstance(dist, list) or len(dist) != n or any(
            not isinstance(row, list) or len(row) != n for row in dist):
        raise ValueError(f"'dist' must be a {n}x{n} matrix")
    rows = [[canon(rat_from_json(v)) for v in row] for row in dist]
    codes, values = _codes_from_values(rows)
    return Space(tuple(points), codes, values, ultrametric=None, caps=caps)


def space_to_csv(space: Space) -> str:
    lines = ["id," + ",".join(space.points)]
    for i, p in enumerate(space.points):
        row = ",".join(
            rat_str(space.values[int(c)]) for c in space.codes[i])
        lines.append(f"{p},{row}")
    return "\n".join(lines) + "\n"


def space_from_csv(text: str, caps: Caps = DEFAULT_CAPS) -> Space:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty distance matrix")
    header = [c.strip() for c in lines[0].split(",")]
    if header and header[0] in ("id", ""):
        header = header[1:]
        labeled = True
    else:
        labeled = False
    points = header
    n = len(points)
    if len(lines) != n + 1:
        raise ValueError(f"expected {n} data rows, found {len(lines) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:]):
        cells = [c.strip() for c in ln.split(",")]
        if labeled:
            if not cells or cells[0] != points[k]:
                raise ValueError(
                    f"row {k + 1} label {cells[0]!r} does not match header "
                    f"order ({points[k]!r})")
            cells = cells[1:]
        if len(cells) != n:
            raise ValueError(f"row {k + 1} has {len(cells)} entries, want {n}")
        rows.append([canon(as_rational(c)) for c in cells])
    codes, values = _codes_from_values(rows)
    return Space(tuple(points), codes, values, ultrametric=None, caps=caps)


def tower_to_json(tower: Tower) -> dict:
    return {
        "height": tower.height,
        "nodes": [
            {"id": i, "level": tower.level[i], "parent": tower.parent[i]}
            for i in tower.nodes
        ],
    }


def tower_from_json(data: dict, caps: Caps = DEFAULT_CAPS) -> Tower:
    if not isinstance(data, dict) or "nodes" not in data:
        raise ValueError("tower JSON needs 'nodes'")
    nodes = data["nodes"]
    if not isinstance(nodes, list):
        raise ValueError("'nodes' must be a list")
    ids, level, parent = [], {}, {}
    for entry in nodes:
        if not isinstance(entry, dict) or "id" not in entry or "level" not in entry:
            raise ValueError("each node needs 'id' and 'level'")
        i = entry["id"]
        if not isinstance(i, str):
            raise ValueError("node ids must be strings")
        ids.append(i)
        level[i] = int(entry["level"])
        parent[i] = entry.get("parent")
    tower = Tower(ids, level, parent, caps=caps)
    declared = data.get("height")
    if declared is not None and int(declared) != tower.height:
        raise ValueError(
            f"declared height {declared} != computed height {tower.height}")
    return tower


def multimap_to_json(mm, source_ref: str, target_ref: str) -> dict:
    return {
        "source_ref": source_ref,
        "target_ref": target_ref,
        "pairs": [[a, b] for a, b in mm.pairs],
    }


def content_hash(obj) -> str:
    """Stable short hash of a JSON-encodable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def dump_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            rat_str(v) if isinstance(v, (int, Fraction)) else str(v)
            for v in row))
    return "\n".join(lines) + "\n"


def pipeline_report(
    result,
    source_label: str,
    source_hash: str,
    target_label: str,
    decisions: dict,
    config: Optional[dict] = None,
) -> dict:
    """Self-describing report: inputs, every policy the numbers depend on,
    the ordered stage list with certificates, and the composed audit."""
    body = result.to_json()
    return {
        "format": "coarse-equivalence-report/1",
        "inputs": {
            "source": {"label": source_label, "hash": source_hash},
            "target": {"label": target_label},
        },
        "decisions": dict(decisions),
        "config": dict(config or {}),
        "pipeline": body,
    }
