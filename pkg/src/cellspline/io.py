"""File formats: grayscale images, box lists, run configs and result records.

Every writer goes through :func:`atomic_write` (temp file + rename), so an
interrupted run never leaves a truncated file behind.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import FIELD_NAMES, ROTATION_MODES, RodParams
from .imageops import (DEFAULT_PAD, GEODESIC_LAMBDA, GRADIENT_CLIP, GRADIENT_SIGMA, PIXEL_SIZE_UM,
                       BoundingBox, InvalidBoxError)
from .metrics import Mask, rasterize
from .objective import EPSILON, GRADIENT_POWER, ObjectiveConfig
from .optimizer import BEND_MAX_UM, LENGTH_RANGE_UM, WIDTH_RANGE_UM, OptimizerConfig
from .pipeline import DEFAULT_OBJECTIVE, PipelineConfig


class ParseError(ValueError):
    """Malformed input; the message names the file and, where known, the line."""


# --- atomic writes -----------------------------------------------------------

@contextlib.contextmanager
def atomic_write(path, mode: str = "w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    with atomic_write(path) as fh:
        fh.write(text)


# --- images ------------------------------------------------------------------

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens, pos = [], 0
    # header: magic, width, height, maxval, separated by whitespace and comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: only binary PGM (P5) is supported, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header: {exc}") from None
    if not (0 < maxval < 65536):
        raise ParseError(f"{path}: PGM maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - pos < need:
        raise ParseError(f"{path}: PGM pixel data truncated ({len(data) - pos} < {need} bytes)")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)


def read_image(path) -> np.ndarray:
    """Grayscale image as stored (uint8 or uint16). PGM (P5) and anything Pillow reads."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if path.suffix.lower() in (".pgm", ".pnm"):
        return _read_pgm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.int64)
                return np.clip(arr, 0, 65535).astype(np.uint16)
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: cannot read image: {exc}") from None


def to_float(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img / 255.0
    if img.dtype == np.uint16:
        return img / 65535.0
    return img.astype(float)


def quantize(img: np.ndarray, bits: int = 16) -> np.ndarray:
    top = (1 << bits) - 1
    return np.round(np.clip(img, 0.0, 1.0) * top).astype(np.uint16 if bits == 16 else np.uint8)


def write_image(path, img: np.ndarray):
    """Write a uint8/uint16 grayscale image as PNG or binary PGM (by suffix)."""
    path = Path(path)
    img = np.ascontiguousarray(img)
    if img.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"expected uint8 or uint16, got {img.dtype}")
    if path.suffix.lower() in (".pgm", ".pnm"):
        h, w = img.shape
        maxval = 255 if img.dtype == np.uint8 else 65535
        with atomic_write(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
            fh.write(img.astype(">u2" if maxval > 255 else "u1").tobytes())
        return
    # Pillow infers "L" for uint8 and "I;16" for native uint16 arrays
    with atomic_write(path, "wb") as fh:
        Image.fromarray(img).save(fh, format="PNG")


# --- boxes -------------------------------------------------------------------

def _data_lines(path: Path):
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield n, line.split()


def read_boxes(path) -> list[tuple[int, BoundingBox]]:
    """``index x_min y_min x_max y_max`` per line (inclusive, absolute pixels)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    out, seen = [], set()
    for n, parts in _data_lines(path):
        if len(parts) != 5:
            raise ParseError(f"{path}:{n}: expected 5 fields 'index x_min y_min x_max y_max', got {len(parts)}")
        try:
            idx, *xy = (int(p) for p in parts)
        except ValueError:
            raise ParseError(f"{path}:{n}: non-integer field in {' '.join(parts)!r}") from None
        if idx in seen:
            raise ParseError(f"{path}:{n}: duplicate index {idx}")
        seen.add(idx)
        try:
            out.append((idx, BoundingBox(*xy)))
        except InvalidBoxError as exc:
            raise ParseError(f"{path}:{n}: {exc}") from None
    return out


def write_boxes(path, boxes):
    lines = [f"{i} {b.x_min} {b.y_min} {b.x_max} {b.y_max}" for i, b in boxes]
    write_text(path, "".join(line + "\n" for line in lines))


def yolo_to_boxes(path, width: int, height: int) -> list[tuple[int, BoundingBox]]:
    """Convert normalized ``class x_c y_c w h`` lines; indices follow line order."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    out = []
    for n, parts in _data_lines(path):
        if len(parts) < 5:
            raise ParseError(f"{path}:{n}: expected 'class x_c y_c w h'")
        try:
            xc, yc, bw, bh = (float(p) for p in parts[1:5])
        except ValueError:
            raise ParseError(f"{path}:{n}: non-numeric field") from None
        if not all(0.0 <= v <= 1.0 for v in (xc, yc, bw, bh)):
            raise ParseError(f"{path}:{n}: normalized values must lie in [0, 1]")
        # round first so that e.g. 0.15 * 100 does not ceil to 16
        x0 = max(math.floor(round((xc - bw / 2) * width, 6)), 0)
        y0 = max(math.floor(round((yc - bh / 2) * height, 6)), 0)
        x1 = min(math.ceil(round((xc + bw / 2) * width, 6)) - 1, width - 1)
        y1 = min(math.ceil(round((yc + bh / 2) * height, 6)) - 1, height - 1)
        try:
            out.append((len(out), BoundingBox(x0, y0, x1, y1)))
        except InvalidBoxError as exc:
            raise ParseError(f"{path}:{n}: {exc}") from None
    return out


# --- run configuration -------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run; the flat config file maps 1:1 onto these fields."""

    pixel_size: float = PIXEL_SIZE_UM
    pad: int = DEFAULT_PAD
    epsilon: float = EPSILON
    k: float = GRADIENT_POWER
    w_r: float = DEFAULT_OBJECTIVE.w_r
    w_d: float = DEFAULT_OBJECTIVE.w_d
    gradient_sigma: float = GRADIENT_SIGMA
    gradient_clip: float = GRADIENT_CLIP
    geodesic_lambda: float = GEODESIC_LAMBDA
    n_control: int = 6
    samples_per_segment: int = 10
    length_min_um: float = LENGTH_RANGE_UM[0]
    length_max_um: float = LENGTH_RANGE_UM[1]
    width_min_um: float = WIDTH_RANGE_UM[0]
    width_max_um: float = WIDTH_RANGE_UM[1]
    bend_max_um: float = BEND_MAX_UM
    constrained: bool = True
    rounds: int = 5
    evals_per_stage: int = 60
    initial_trust_radius: float = 2.0
    final_trust_radius: float = 0.01
    angle_trust_scale: float = 0.1
    angle_first: bool = True
    rotation_mode: str = "proper"
    seed: int = 0
    workers: int = 1
    # synthetic scenes
    background_level: float = 0.8
    cell_level: float = 0.45
    rim_level: float = 0.25
    noise_sigma: float = 0.02
    # weight tuning
    range_max: float = 500.0
    trials: int = 50

    def pipeline(self) -> PipelineConfig:
        if self.n_control != 6:
            raise ValueError("the rod model has exactly 6 control points (n_control = 6)")
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation_mode must be one of {ROTATION_MODES}")
        return PipelineConfig(
            objective=ObjectiveConfig(self.epsilon, self.k, self.w_r, self.w_d),
            optimizer=OptimizerConfig(self.rounds, self.evals_per_stage, self.initial_trust_radius,
                                      self.final_trust_radius, self.angle_trust_scale, self.angle_first,
                                      self.seed),
            pad=self.pad,
            pixel_size=self.pixel_size,
            geodesic_lambda=self.geodesic_lambda,
            gradient_sigma=self.gradient_sigma,
            gradient_clip=self.gradient_clip,
            rotation_mode=self.rotation_mode,
            samples_per_segment=self.samples_per_segment,
            constrained=self.constrained,
            length_um=(self.length_min_um, self.length_max_um),
            width_um=(self.width_min_um, self.width_max_um),
            bend_um=self.bend_max_um,
        )


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _parse_value(kind, text: str):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ParseError(f"{source}:{n}: expected 'key = value'")
        if key not in _FIELD_TYPES:
            raise ParseError(f"{source}:{n}: unknown key {key!r}")
        try:
            values[key] = _parse_value(_FIELD_TYPES[key], val)
        except ValueError as exc:
            raise ParseError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)  # shortest exact round-trip
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# --- result records ----------------------------------------------------------

def theta_record(theta: RodParams, origin, pixel_size: float) -> tuple[dict, dict]:
    """Parameters in image pixels and in micrometres (angle stays in radians)."""
    v = theta.to_vector()
    v[0] += origin[0]
    v[1] += origin[1]
    px = {name: float(x) for name, x in zip(FIELD_NAMES, v)}
    um = {name: (x if name == "alpha" else x * pixel_size) for name, x in px.items()}
    return px, um


def cell_record(outcome, pixel_size: float) -> dict:
    b = outcome.box
    rec = {"index": outcome.index, "box": [b.x_min, b.y_min, b.x_max, b.y_max]}
    if not outcome.ok:
        rec.update(status="error", error=outcome.error)
        return rec
    r = outcome.result
    origin = r.mask.origin
    px, um = theta_record(r.theta, origin, pixel_size)
    contour = r.polyline + np.asarray(origin, dtype=float)
    rec.update(
        status="ok",
        theta_px=px,
        theta_um=um,
        energy=r.energy.as_dict(),
        stage_energies=[float(e) for e in r.stage_energies],
        window=[int(origin[0]), int(origin[1]), int(r.mask.shape[1]), int(r.mask.shape[0])],
        contour=contour.tolist(),
    )
    return rec


def write_jsonl(path, records):
    with atomic_write(path) as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{n}: {exc.msg}") from None
    return out


def record_mask(rec: dict) -> Mask:
    """Mask of a cell record: its contour rasterized on its stored window (empty if failed)."""
    if rec.get("status") != "ok":
        return Mask(np.zeros((0, 0), dtype=bool))
    x0, y0, w, h = rec["window"]
    return rasterize(np.asarray(rec["contour"], dtype=float), w, h, origin=(x0, y0))


def read_cell_masks(path) -> dict[int, Mask]:
    """Index -> mask from a ``.jsonl`` record file or a 16-bit label image."""
    path = Path(path)
    if path.suffix == ".jsonl":
        recs = read_jsonl(path)
        try:
            return {int(r["index"]): record_mask(r) for r in recs}
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed cell record: {exc}") from None
    labels = read_image(path)
    return {int(v): Mask(labels == v) for v in np.unique(labels) if v != 0}


def label_image(masks, width: int, height: int) -> np.ndarray:
    """uint16 labels 1..n in iteration order (later cells on top)."""
    out = np.zeros((height, width), dtype=np.uint16)
    for i, m in enumerate(masks, start=1):
        if m.bits.size:
            out[m.place(width, height)] = i
    return out
