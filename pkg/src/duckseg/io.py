"""On-disk formats: binary PGM images/masks, JSON box files, model files and
run manifests.

Model file layout: one line of UTF-8 JSON (the header, newline-terminated)
followed by the parameters as little-endian float64, concatenated in header
order.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import Box
from .synthpipe.segnet import PARAM_ORDER, SegNet

MODEL_FORMAT = "duckseg-segnet"


def write_pgm(path, array) -> None:
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {a.shape}")
    if a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ValueError("PGM values must lie in [0, 255]")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(a.astype(np.uint8).tobytes())


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens (skipping # comments)
    and the offset just past the single whitespace byte after the last one."""
    out = []
    i = 0
    n = len(data)
    while len(out) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    body = data[off : off + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def save_image(path, image) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    write_pgm(path, np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8))


def load_image(path) -> np.ndarray:
    """``(1, H, W)`` float image in [0, 1]."""
    return (read_pgm(path).astype(np.float64) / 255.0)[None]


def save_mask(path, mask) -> None:
    write_pgm(path, np.asarray(mask, dtype=np.int64))


def load_mask(path) -> np.ndarray:
    return read_pgm(path).astype(np.int64)


def boxes_to_json(image_id: str, boxes) -> str:
    doc = {"image_id": image_id, "boxes": [b.to_dict() for b in boxes]}
    return json.dumps(doc, indent=2) + "\n"


def save_boxes(path, image_id: str, boxes) -> None:
    Path(path).write_text(boxes_to_json(image_id, boxes), encoding="utf-8")


def load_boxes(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc["image_id"], [Box.from_dict(d) for d in doc["boxes"]]


def save_model(path, net: SegNet, seed=None) -> None:
    header = {
        "format": MODEL_FORMAT,
        "version": __version__,
        "widths": list(net.widths),
        "num_classes": net.num_classes,
        "dropout_rate": net.dropout_rate,
        "decoder_kernel": net.decoder_kernel,
        "seed": seed,
        "layers": [{"name": k, "shape": list(net.params[k].shape)} for k in PARAM_ORDER],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for k in PARAM_ORDER:
            f.write(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes())


def load_model(path) -> SegNet:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl].decode("utf-8"))
    if header.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    payload = np.frombuffer(data[nl + 1 :], dtype="<f8")
    params = {}
    i = 0
    for layer in header["layers"]:
        n = int(np.prod(layer["shape"]))
        if i + n > payload.size:
            raise ValueError(f"{path}: truncated parameter payload")
        params[layer["name"]] = payload[i : i + n].astype(np.float64).reshape(layer["shape"])
        i += n
    if i != payload.size:
        raise ValueError(f"{path}: trailing bytes after parameters")
    return SegNet(tuple(header["widths"]), header["num_classes"], header["dropout_rate"],
                  header["decoder_kernel"], params)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed, files) -> Path:
    """``manifest.json`` beside the outputs with sha256 digests of ``files``."""
    out_dir = Path(out_dir)
    digests = {str(Path(f).relative_to(out_dir)): file_digest(f) for f in sorted(files, key=str)}
    doc = {"command": command, "config": config, "seed": seed, "version": __version__, "outputs": digests}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
