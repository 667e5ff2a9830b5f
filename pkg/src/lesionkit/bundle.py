"""Case bundles: the on-disk unit of exchange for one case.

A bundle is a directory holding ``manifest.json`` plus one raw
little-endian float32 ``.bin`` per tensor (row-major). Arithmetic happens
at float64; storage is float32, so a save/load round trip is the identity
at 32-bit precision. Reserved tensor names (``image``, ``heatmap``,
``text_embedding``, ``feature_map``, ``gt_mask``, ``mask_logits_k``,
``cls_logits_k``, ``embedding_k``) are documented in the README.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"

_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class BundleError(ValueError):
    """Malformed manifest, tensor payload, or non-finite values."""


@dataclass(frozen=True)
class CaseBundle:
    """Immutable per-case tensor map with optional class label."""

    case_id: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    label: int | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def with_tensors(self, **named) -> "CaseBundle":
        """Copy of this bundle with tensors added or replaced."""
        merged = dict(self.tensors)
        for name, arr in named.items():
            merged[name] = as_tensor(arr, name=name)
        return CaseBundle(self.case_id, merged, self.label, dict(self.metadata))

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.tensors]
        if missing:
            raise BundleError(f"case '{self.case_id}' is missing tensors: {', '.join(missing)}")

    def candidate_count(self) -> int:
        k = 0
        while f"mask_logits_{k}" in self.tensors:
            k += 1
        return k


def as_tensor(values, name: str = "tensor") -> np.ndarray:
    """Validate and convert to a float64 array with positive dims."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0 or any(d <= 0 for d in arr.shape):
        raise BundleError(f"tensor '{name}' has an empty dimension: shape {list(arr.shape)}")
    if not np.all(np.isfinite(arr)):
        raise BundleError(f"tensor '{name}' contains non-finite values")
    return np.ascontiguousarray(arr)


def save_bundle(bundle: CaseBundle, path) -> None:
    """Write manifest.json plus one float32 .bin per tensor."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(bundle.tensors):
        if not _NAME_RE.match(name):
            raise BundleError(f"tensor name '{name}' is not filesystem safe")
        arr = as_tensor(bundle.tensors[name], name=name)
        fname = f"{name}.bin"
        arr.astype("<f4").tofile(root / fname)
        entries.append({
            "name": name,
            "shape": [int(d) for d in arr.shape],
            "dtype": "f32",
            "file": fname,
            "byte_order": "little",
            "layout": "row-major",
        })
    manifest = {
        "case_id": bundle.case_id,
        "label": None if bundle.label is None else int(bundle.label),
        "tensors": entries,
        "metadata": {str(k): str(v) for k, v in sorted(bundle.metadata.items())},
    }
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path) -> CaseBundle:
    """Load and validate a bundle directory.

    Rejects missing manifests, byte-count/shape mismatches, and
    non-finite payloads with a diagnostic naming the offending tensor.
    """
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise BundleError(f"no {MANIFEST_NAME} in {root}")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)

    case_id = manifest.get("case_id")
    if not isinstance(case_id, str) or not case_id:
        raise BundleError(f"{mpath}: case_id must be a non-empty string")
    label = manifest.get("label")
    if label is not None:
        if not isinstance(label, int) or isinstance(label, bool):
            raise BundleError(f"{mpath}: label must be an integer or null")
    metadata = manifest.get("metadata", {})
    if not isinstance(metadata, dict):
        raise BundleError(f"{mpath}: metadata must be an object")

    tensors: dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise BundleError(f"{mpath}: tensor entry without a name")
        if name in tensors:
            raise BundleError(f"{mpath}: duplicate tensor '{name}'")
        if entry.get("dtype") != "f32":
            raise BundleError(f"tensor '{name}': unsupported dtype {entry.get('dtype')!r}")
        if entry.get("byte_order", "little") != "little":
            raise BundleError(f"tensor '{name}': unsupported byte order")
        if entry.get("layout", "row-major") != "row-major":
            raise BundleError(f"tensor '{name}': unsupported layout")
        shape = entry.get("shape")
        if (not isinstance(shape, list) or not shape
                or any(not isinstance(d, int) or d <= 0 for d in shape)):
            raise BundleError(f"tensor '{name}': shape must be a list of positive integers")
        fpath = root / entry.get("file", f"{name}.bin")
        if not fpath.is_file():
            raise BundleError(f"tensor '{name}': missing payload file {fpath.name}")
        raw = np.fromfile(fpath, dtype="<f4")
        expected = int(np.prod(shape))
        if raw.size != expected:
            raise BundleError(
                f"tensor '{name}': byte-count mismatch "
                f"(got {raw.size * 4} bytes, shape {shape} needs {expected * 4})")
        arr = raw.astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise BundleError(f"tensor '{name}': non-finite values in payload")
        tensors[name] = arr

    return CaseBundle(
        case_id=case_id,
        tensors=tensors,
        label=label,
        metadata={str(k): str(v) for k, v in metadata.items()},
    )


def resize_bilinear(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-d array, align-corners-false convention."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dimensions must be positive")
    t = np.asarray(t, dtype=np.float64)
    h, w = t.shape
    if (h, w) == (out_h, out_w):
        return t.copy()

    def _axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    r_lo, r_hi, r_f = _axis_coords(h, out_h)
    c_lo, c_hi, c_f = _axis_coords(w, out_w)
    top = t[r_lo][:, c_lo] * (1 - c_f) + t[r_lo][:, c_hi] * c_f
    bot = t[r_hi][:, c_lo] * (1 - c_f) + t[r_hi][:, c_hi] * c_f
    return top * (1 - r_f)[:, None] + bot * r_f[:, None]


def normalize_minmax(t: np.ndarray) -> np.ndarray:
    """Affine map onto [0,1]; constant input maps to all-zeros."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("cannot normalize an empty tensor")
    lo = t.min()
    span = t.max() - lo
    if span == 0.0:
        return np.zeros_like(t)
    return (t - lo) / span
