"""Line-oriented text formats for sequences, models and estimate exports.

Floats are written with ``repr`` which round-trips every IEEE double
exactly, so save/load cycles are value-exact. Grammars are documented in
``docs/formats.md``.
"""
import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError, StructuralIntegrityError, UnsupportedVersionError
from .estimator import ShapeRegressor
from .forest import Forest, ForestParams, Tree
from .shapes import ColonShape, Frame, InsertionSequence, ScopeShape, validate_sequence

SEQUENCE_MAGIC = "colonforest-sequence"
MODEL_MAGIC = "colonforest-model"
SEQUENCE_VERSION = 1
MODEL_VERSION = 1
ESTIMATE_COLUMNS = ("role", "frame", "point", "x", "y", "z")


def _fmt(v):
    return repr(float(v))


def _check_magic(line, magic, version, lineno=1):
    parts = line.split()
    if len(parts) != 2 or parts[0] != magic:
        raise ParseError(f"expected '{magic} <version>' header", lineno)
    try:
        v = int(parts[1])
    except ValueError:
        raise ParseError(f"bad version field {parts[1]!r}", lineno) from None
    if v != version:
        raise UnsupportedVersionError(f"unsupported {magic} version {v} (expected {version})", lineno)


def _read_header(line, lineno=2):
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON: {exc.msg}", lineno) from None
    if not isinstance(header, dict):
        raise ParseError("header must be a JSON object", lineno)
    return header


def _floats(tokens, lineno):
    try:
        arr = np.array([float(x) for x in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite value", lineno)
    return arr


# -- sequences ------------------------------------------------------------


def dump_sequence(seq):
    n = seq.n_scope_points
    m = seq.n_markers
    header = {
        "id": seq.id,
        "frame_rate": float(seq.frame_rate),
        "n_frames": len(seq),
        "N": n,
        "M": m,
        "units": "mm",
    }
    if "simulator" in seq.meta:
        header["simulator"] = seq.meta["simulator"]
    lines = [f"{SEQUENCE_MAGIC} {SEQUENCE_VERSION}", json.dumps(header, sort_keys=True)]
    for f in seq.frames:
        vals = [str(f.t), _fmt(f.timestamp)] + [_fmt(v) for v in f.scope.points.ravel()]
        if f.colon is not None:
            vals += [_fmt(v) for v in f.colon.points.ravel()]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def save_sequence(seq, path):
    Path(path).write_text(dump_sequence(seq))


def parse_sequence(text, source="<string>"):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise ParseError(f"{source}: file ends before the header", len(lines) + 1)
    _check_magic(lines[0], SEQUENCE_MAGIC, SEQUENCE_VERSION)
    header = _read_header(lines[1])
    try:
        n = int(header["N"])
        m = None if header.get("M") is None else int(header["M"])
        n_frames = int(header["n_frames"])
        rate = float(header["frame_rate"])
        seq_id = str(header["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"header missing or bad field: {exc}", 2) from None
    if header.get("units", "mm") != "mm":
        raise ParseError(f"unsupported units {header['units']!r}", 2)
    body = lines[2:]
    if len(body) != n_frames:
        raise ParseError(f"{source}: header declares {n_frames} frames, found {len(body)}", len(lines))
    frames = []
    for k, line in enumerate(body):
        lineno = k + 3
        tok = line.split()
        if len(tok) not in (2 + 3 * n,) + (() if m is None else (2 + 3 * n + 3 * m,)):
            raise ParseError(
                f"frame {k}: {len(tok)} fields, expected {2 + 3 * n}"
                + ("" if m is None else f" or {2 + 3 * n + 3 * m}")
                + f" for N={n}, M={m}",
                lineno,
            )
        try:
            t = int(tok[0])
        except ValueError:
            raise ParseError(f"frame {k}: bad frame index {tok[0]!r}", lineno) from None
        vals = _floats(tok[1:], lineno)
        scope = ScopeShape(vals[1 : 1 + 3 * n].reshape(n, 3))
        colon = ColonShape(vals[1 + 3 * n :].reshape(m, 3)) if len(vals) > 1 + 3 * n else None
        frames.append(Frame(t, float(vals[0]), scope, colon))
    if not frames:
        raise ParseError(f"{source}: sequence has no frames", len(lines))
    meta = {"simulator": header["simulator"]} if "simulator" in header else {}
    seq = InsertionSequence(seq_id, rate, tuple(frames), meta)
    for issue in validate_sequence(seq, n_scope_points=n, n_markers=m):
        if issue.kind != "jump":
            raise ParseError(f"frame {issue.frame}: {issue.message}", issue.frame + 3)
    return seq


def load_sequence(path):
    path = Path(path)
    return parse_sequence(path.read_text(), str(path))


# -- models ---------------------------------------------------------------


def dump_model(r):
    first = r.forests[0].params
    header = {
        "n_scope_points": r.n_scope_points,
        "n_markers": r.n_markers,
        "center_features": r.center_features,
        "forest_params": {**first.to_dict(), "seed": r.metadata.get("seed", first.seed)},
        "metadata": r.metadata,
    }
    out = [f"{MODEL_MAGIC} {MODEL_VERSION}", json.dumps(header, sort_keys=True)]
    for m, forest in enumerate(r.forests):
        out.append(f"forest {m} {forest.n_trees} {forest.feature_dim} {forest.params.seed}")
        for i, tree in enumerate(forest.trees):
            out.append(f"tree {i} {tree.node_count}")
            # tolist() yields Python floats, whose %r is the shortest exact repr
            for f, thr, val, n in zip(
                tree.feature.tolist(), tree.threshold.tolist(), tree.value.tolist(), tree.n_samples.tolist()
            ):
                if f >= 0:
                    out.append("S %d %r" % (f, thr))
                else:
                    out.append("L %r %r %r %d" % (val[0], val[1], val[2], n))
    out.append("end")
    return "\n".join(out) + "\n"


def save_model(r, path):
    Path(path).write_text(dump_model(r))


class _Lines:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.lines):
            raise StructuralIntegrityError(f"file ends while expecting {what}", self.pos + 1)
        line = self.lines[self.pos]
        self.pos += 1
        return line.split()

    @property
    def lineno(self):
        return self.pos


def _int(token, lineno):
    try:
        return int(token)
    except ValueError:
        raise StructuralIntegrityError(f"expected an integer, got {token!r}", lineno) from None


def parse_model(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise ParseError("model file ends before the header", len(lines) + 1)
    _check_magic(lines[0], MODEL_MAGIC, MODEL_VERSION)
    header = _read_header(lines[1])
    try:
        n_scope = int(header["n_scope_points"])
        n_markers = int(header["n_markers"])
        fp = dict(header["forest_params"])
        ForestParams(**fp)  # validates the declared hyperparameters
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"header missing or bad field: {exc}", 2) from None
    src = _Lines(lines)
    src.pos = 2
    forests = []
    for m in range(n_markers):
        tok = src.next(f"forest {m}")
        if len(tok) != 5 or tok[0] != "forest" or tok[1] != str(m):
            raise StructuralIntegrityError(f"expected 'forest {m} <n_trees> <dim> <seed>'", src.lineno)
        n_trees, dim, seed = (_int(v, src.lineno) for v in tok[2:5])
        if n_trees < 1:
            raise StructuralIntegrityError(f"forest {m} has no trees", src.lineno)
        if dim != 3 * n_scope:
            raise StructuralIntegrityError(f"forest {m} feature_dim {dim} != 3 * {n_scope}", src.lineno)
        trees = []
        for i in range(n_trees):
            tok = src.next(f"tree {i} of forest {m}")
            if len(tok) != 3 or tok[0] != "tree" or tok[1] != str(i):
                raise StructuralIntegrityError(f"expected 'tree {i} <n_nodes>'", src.lineno)
            n_nodes = _int(tok[2], src.lineno)
            tree_line = src.lineno
            if n_nodes < 1:
                raise StructuralIntegrityError(f"forest {m} tree {i} is empty", tree_line)
            records = []
            for _ in range(n_nodes):
                tok = src.next(f"node of forest {m} tree {i}")
                try:
                    if tok[0] == "S" and len(tok) == 3:
                        f = int(tok[1])
                        if not 0 <= f < dim:
                            raise StructuralIntegrityError(f"split feature {f} out of range", src.lineno)
                        records.append(("split", f, float(tok[2])))
                    elif tok[0] == "L" and len(tok) == 5:
                        records.append(("leaf", tuple(float(v) for v in tok[1:4]), int(tok[4])))
                    else:
                        raise StructuralIntegrityError(f"malformed node record {' '.join(tok)!r}", src.lineno)
                except (ValueError, IndexError) as exc:
                    if isinstance(exc, StructuralIntegrityError):
                        raise
                    raise StructuralIntegrityError(f"bad node record: {exc}", src.lineno) from None
            try:
                trees.append(Tree.from_nodes(records))
            except ValueError as exc:
                raise StructuralIntegrityError(f"forest {m} tree {i}: {exc}", tree_line) from None
        forests.append(Forest(ForestParams(**{**fp, "seed": seed}), tuple(trees), dim))
    tok = src.next("end marker")
    if tok != ["end"] or src.pos != len(lines):
        raise StructuralIntegrityError("trailing content after the last forest", src.lineno)
    return ShapeRegressor(
        tuple(forests), n_scope, bool(header.get("center_features", False)), header.get("metadata", {})
    )


def load_model(path):
    return parse_model(Path(path).read_text())


# -- estimate exports -----------------------------------------------------


def export_estimates(frames, path):
    """Write one CSV row per (frame, point) tagged scope, estimate or truth.

    ``frames`` holds ``(scope, estimate)`` or ``(scope, estimate, truth)``
    tuples; ``truth`` may be ``None``.
    """
    rows = []
    for k, item in enumerate(frames):
        scope, est = item[0], item[1]
        truth = item[2] if len(item) > 2 else None
        for role, shape in (("scope", scope), ("estimate", est), ("truth", truth)):
            if shape is None:
                continue
            pts = shape.points if hasattr(shape, "points") else np.asarray(shape, dtype=np.float64)
            for i, p in enumerate(pts):
                rows.append((role, k, i, _fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
    if rows:
        m_est = {r[2] for r in rows if r[0] == "estimate"}
        m_truth = {r[2] for r in rows if r[0] == "truth"}
        if m_truth and m_truth != m_est:
            raise InvalidInputError("estimate and truth shapes differ in marker count")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        w.writerows(rows)
    return len(rows)


def read_estimates(path):
    """Parse an export back into ``{role: {frame: (n, 3) array}}``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if tuple(head or ()) != ESTIMATE_COLUMNS:
            raise ParseError("unexpected estimate export header", 1)
        grouped = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise ParseError("expected 6 columns", lineno)
            role, k, i = row[0], int(row[1]), int(row[2])
            grouped.setdefault(role, {}).setdefault(k, []).append((i, [float(v) for v in row[3:]]))
    for role, per_frame in grouped.items():
        out[role] = {
            k: np.array([p for _, p in sorted(pts)], dtype=np.float64) for k, pts in per_frame.items()
        }
    return out
