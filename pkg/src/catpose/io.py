"""File formats: ASCII PLY, binary PGM, JSON records and embedding CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .geometry import SimilarityTransform, as_points
from .registration import CorrespondenceSet


def dump_json(obj, path) -> None:
    """Write JSON deterministically (sorted keys, fixed separators, trailing newline)."""
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    Path(path).write_text(text)


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from exc
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc


# -- PLY ----------------------------------------------------------------------

def write_ply(path, points) -> None:
    pts = as_points(points, allow_empty=True)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    """Read the x, y, z vertex properties of an ASCII PLY file."""
    try:
        lines = Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path, 1)
    n_vertex = None
    props = []
    in_vertex = False
    header_end = None
    for no, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError(f"unsupported format {' '.join(tok[1:])!r}", path, no)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", path, no)
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise ParseError(f"bad vertex count {tok[2]!r}", path, no) from None
        elif tok[0] == "property":
            if in_vertex:
                props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = no
            break
        else:
            raise ParseError(f"unexpected header line {raw!r}", path, no)
    if header_end is None:
        raise ParseError("missing end_header", path, len(lines))
    if n_vertex is None:
        raise ParseError("no vertex element", path, header_end)
    try:
        cols = [props.index(a) for a in ("x", "y", "z")]
    except ValueError:
        raise ParseError("vertex element lacks x/y/z properties", path, header_end) from None
    pts = np.empty((n_vertex, 3))
    body = lines[header_end:header_end + n_vertex]
    if len(body) < n_vertex:
        raise ParseError(f"expected {n_vertex} vertices, found {len(body)}", path, len(lines))
    for k, raw in enumerate(body):
        no = header_end + k + 1
        tok = raw.split()
        if len(tok) != len(props):
            raise ParseError(f"expected {len(props)} values, got {len(tok)}", path, no)
        try:
            pts[k] = [float(tok[c]) for c in cols]
        except ValueError:
            raise ParseError(f"non-numeric vertex {raw!r}", path, no) from None
        if not np.all(np.isfinite(pts[k])):
            raise ParseError("non-finite vertex", path, no)
    return pts


# -- PGM ----------------------------------------------------------------------

def write_pgm(path, image) -> None:
    """Binary PGM (P5): uint8 images get maxval 255, uint16 get 65535 (big-endian)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise InvalidInputError("PGM image must be 2-D")
    if img.dtype == np.uint8:
        maxval, data = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, data = 65535, img.astype(">u2").tobytes()
    else:
        raise InvalidInputError(f"unsupported PGM dtype {img.dtype}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + data)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path)
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ParseError(f"not a binary PGM (magic {fields[0]!r})", path)
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ParseError("bad PGM header values", path) from None
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    n = w * h * dtype.itemsize
    if len(raw) - pos < n:
        raise ParseError("truncated PGM pixel data", path)
    img = np.frombuffer(raw[pos:pos + n], dtype=dtype).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


# -- JSON records -------------------------------------------------------------

def write_transform(path, T: SimilarityTransform) -> None:
    dump_json(T.to_dict(), path)


def read_transform(path) -> SimilarityTransform:
    return SimilarityTransform.from_dict(load_json(path))


def correspondences_from_dict(d: dict) -> CorrespondenceSet:
    try:
        src, dst = d["src"], d["dst"]
    except (KeyError, TypeError):
        raise InvalidInputError("correspondence record needs 'src' and 'dst' arrays") from None
    return CorrespondenceSet(np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64))


def read_correspondences(path) -> CorrespondenceSet:
    return correspondences_from_dict(load_json(path))


def write_correspondences(path, src, dst, **extra) -> None:
    dump_json({"src": as_points(src).tolist(), "dst": as_points(dst).tolist(), **extra}, path)


def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype=np.float64)
    dump_json({"nv": A.shape[0], "nc": A.shape[1], "values": A.tolist()}, path)


def read_matrix(path) -> np.ndarray:
    d = load_json(path)
    try:
        A = np.asarray(d["values"], dtype=np.float64)
        nv, nc = int(d["nv"]), int(d["nc"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed matrix record ({exc})") from None
    if A.shape != (nv, nc):
        raise InvalidInputError(f"{path}: header says {nv}x{nc} but values are {A.shape}")
    return A


def write_field(path, D) -> None:
    D = as_points(D)
    dump_json({"nc": len(D), "values": D.tolist()}, path)


def read_field(path) -> np.ndarray:
    d = load_json(path)
    try:
        D = np.asarray(d["values"], dtype=np.float64)
        nc = int(d["nc"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed field record ({exc})") from None
    if D.shape != (nc, 3):
        raise InvalidInputError(f"{path}: header says {nc} points but values are {D.shape}")
    return D


# -- embeddings ---------------------------------------------------------------

def read_embeddings(path) -> dict:
    """``category,v0,...,v(n-1)`` rows into ``{category: (N, n) array}``."""
    groups = {}
    dim = None
    with open(path, newline="") as fh:
        for no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#") or row[0] == "category":
                continue
            try:
                vec = [float(v) for v in row[1:]]
            except ValueError:
                raise ParseError("non-numeric embedding value", path, no) from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"embedding has {len(vec)} values, expected {dim}", path, no)
            groups.setdefault(row[0], []).append(vec)
    return {c: np.asarray(v) for c, v in groups.items()}


def write_embeddings(path, embeddings: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for cat, vecs in embeddings.items():
            for v in np.atleast_2d(vecs):
                w.writerow([cat, *(repr(float(x)) for x in v)])


# -- ground truth / prediction splits -----------------------------------------

def _instance_from_record(rec, image_id, where, predictions):
    from .evaluation import Detection, GroundTruthInstance

    if not isinstance(rec, dict):
        raise InvalidInputError(f"{where}: instance must be an object")
    try:
        pose = SimilarityTransform(
            float(rec["scale"]),
            np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(rec["translation"], dtype=np.float64).reshape(3),
        )
        extents = np.asarray(rec["extents"], dtype=np.float64).reshape(3)
        if predictions:
            return Detection(image_id, rec["category"], float(rec.get("score", 1.0)), pose, extents)
        return GroundTruthInstance(image_id, rec["category"], pose, extents, rec.get("handle_visible"))
    except KeyError as exc:
        raise InvalidInputError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{where}: {exc}") from None


def read_split(path, predictions=False) -> list:
    """Parse a ground-truth (or prediction) file into instances.

    Errors name the offending record as ``images[i].instances[k]``.
    """
    d = load_json(path)
    if not isinstance(d, dict) or not isinstance(d.get("images"), list):
        raise InvalidInputError(f"{path}: top level must be an object with an 'images' list")
    out = []
    for i, img in enumerate(d["images"]):
        if not isinstance(img, dict) or "id" not in img or not isinstance(img.get("instances"), list):
            raise InvalidInputError(f"{path}: images[{i}] needs 'id' and an 'instances' list")
        for k, rec in enumerate(img["instances"]):
            out.append(_instance_from_record(rec, img["id"], f"{path}: images[{i}].instances[{k}]", predictions))
    return out


def instance_record(inst, with_score=False) -> dict:
    rec = {
        "category": inst.category,
        "scale": inst.pose.scale,
        "rotation": inst.pose.rotation.reshape(9).tolist(),
        "translation": inst.pose.translation.tolist(),
        "extents": inst.nocs_extents.tolist(),
    }
    if with_score:
        rec["score"] = float(inst.score)
    elif getattr(inst, "handle_visible", None) is not None:
        rec["handle_visible"] = bool(inst.handle_visible)
    return rec


def split_dict(instances, with_score=False) -> dict:
    images = {}
    for inst in instances:
        images.setdefault(inst.image_id, []).append(instance_record(inst, with_score))
    return {"images": [{"id": k, "instances": v} for k, v in images.items()]}


def write_split(path, instances, with_score=False) -> None:
    dump_json(split_dict(instances, with_score), path)
