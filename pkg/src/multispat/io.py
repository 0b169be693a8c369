"""Text formats: polygon rings, meshes, adjacency graphs and CSV tables.

Floats are written with ``repr`` so that every file round-trips exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .areal import AdjacencyGraph, read_graph
from .exceptions import ParseError
from .geometry import Mesh, Polygon


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def parse_polygon(text: str, path=None) -> Polygon:
    """Parse ``x y`` vertex lines; blank lines separate rings, the first is the outer one.

    Lines starting with ``#`` are ignored.
    """
    rings, cur = [], []
    for k, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("#"):
            continue
        if not s:
            if cur:
                rings.append(cur)
                cur = []
            continue
        tok = s.replace(",", " ").split()
        if len(tok) != 2:
            raise ParseError(f"expected 'x y', got {s!r}", k, path)
        try:
            xy = (float(tok[0]), float(tok[1]))
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {s!r}", k, path) from None
        if not np.all(np.isfinite(xy)):
            raise ParseError("non-finite coordinate", k, path)
        cur.append((xy, k))
    if cur:
        rings.append(cur)
    if not rings:
        raise ParseError("no polygon vertices found", path=path)
    for ring in rings:
        if len(ring) < 3:
            raise ParseError("a ring needs at least 3 vertices", ring[0][1], path)
    coords = [np.array([xy for xy, _ in ring]) for ring in rings]
    return Polygon(coords[0], tuple(coords[1:]))


def read_polygon(path) -> Polygon:
    return parse_polygon(_read_text(path), path=str(path))


def format_polygon(p: Polygon) -> str:
    blocks = []
    for ring in p.rings:
        blocks.append("\n".join(f"{x!r} {y!r}" for x, y in ring.tolist()))
    return "\n\n".join(blocks) + "\n"


def write_mesh(mesh: Mesh, directory, prefix="mesh"):
    """Write ``<prefix>_vertices.csv`` (x, y, extension) and ``<prefix>_triangles.csv``.

    Triangle vertex indices are 0-based.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vpath, tpath = d / f"{prefix}_vertices.csv", d / f"{prefix}_triangles.csv"
    write_csv(vpath, {"x": mesh.vertices[:, 0], "y": mesh.vertices[:, 1],
                      "extension": mesh.boundary_flags.astype(int)})
    t = mesh.triangles
    write_csv(tpath, {"v0": t[:, 0], "v1": t[:, 1], "v2": t[:, 2]})
    return vpath, tpath


def read_mesh(directory, prefix="mesh") -> Mesh:
    d = Path(directory)
    v = read_csv(d / f"{prefix}_vertices.csv")
    t = read_csv(d / f"{prefix}_triangles.csv")
    verts = np.column_stack([_numeric(v, "x"), _numeric(v, "y")])
    tri = np.column_stack([_numeric(t, c) for c in ("v0", "v1", "v2")]).astype(np.int64)
    flags = _numeric(v, "extension").astype(bool) if "extension" in v else None
    return Mesh(verts, tri, flags)


def read_graph_file(path) -> AdjacencyGraph:
    return read_graph(_read_text(path), path=str(path))


def write_graph(g: AdjacencyGraph, path):
    Path(path).write_text(g.to_text(), encoding="utf-8")


def _fmt(v) -> str:
    if v is None or v is np.ma.masked:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, columns: dict):
    """Write equal-length columns with a header row. Masked or NaN cells are empty."""
    names = list(columns)
    cols = [columns[n] for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    masks = [np.ma.getmaskarray(c) if isinstance(c, np.ma.MaskedArray) else None for c in cols]
    data = [np.ma.getdata(c) if isinstance(c, np.ma.MaskedArray) else c for c in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([
                "" if (m is not None and m[i]) else _fmt(c[i].item() if hasattr(c[i], "item") else c[i])
                for c, m in zip(data, masks)
            ])


def read_csv(path) -> dict:
    """Read a headed CSV into ``{column: list of str}``."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty CSV file (a header row is required)", path=str(path))
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", 1, str(path))
    out = {h: [] for h in header}
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", k, str(path))
        for h, v in zip(header, row):
            out[h].append(v.strip())
    out["__path__"] = str(path)
    return out


def _numeric(table: dict, column: str, allow_missing=False):
    path = table.get("__path__")
    if column not in table:
        raise ParseError(f"missing column {column!r}", path=path)
    vals = table[column]
    data = np.zeros(len(vals))
    mask = np.zeros(len(vals), dtype=bool)
    for i, v in enumerate(vals):
        if v == "" or v.upper() == "NA":
            if not allow_missing:
                raise ParseError(f"missing value in column {column!r}", i + 2, path)
            mask[i] = True
            continue
        try:
            data[i] = float(v)
        except ValueError:
            raise ParseError(f"non-numeric value {v!r} in column {column!r}", i + 2, path) from None
        if not np.isfinite(data[i]):
            raise ParseError(f"non-finite value in column {column!r}", i + 2, path)
    return np.ma.array(data, mask=mask) if allow_missing else data


def numeric_column(table: dict, column: str, allow_missing=False):
    """Column as floats; empty or ``NA`` cells become masked when ``allow_missing``."""
    return _numeric(table, column, allow_missing)
