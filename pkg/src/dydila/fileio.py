"""On-disk formats: CSV, PGM images, and weight blobs with JSON manifests.

All text output uses LF newlines and '.' decimals; floats are written with
``repr`` so they round-trip exactly and identical runs produce identical
bytes.  Weight blobs are raw little-endian floats described by a JSON
manifest of (name, shape, dtype, byte_offset) entries sorted by name.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .attention import AttentionStack
from .numerics import ConfigError, ContractViolation, require_finite, resolve_dtype
from .routing import RouteAssignment

__all__ = [
    "fmt_float",
    "write_csv",
    "read_csv",
    "write_tokens_csv",
    "load_tokens_csv",
    "write_routes_csv",
    "write_pgm",
    "read_pgm",
    "stack_entries",
    "save_weights_blob",
    "load_weights_blob",
    "save_weights_json",
    "load_weights_json",
    "stack_from_weights",
]

_BLOB_DTYPES = {"f32": "<f4", "f64": "<f8"}


def fmt_float(x) -> str:
    """Shortest exact decimal for a float (repr); deterministic and lossless."""
    return repr(float(x))


def _fmt_cell(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return fmt_float(x)


def write_csv(path, header, rows) -> None:
    """Comma-separated, LF-terminated lines with a single header row."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt_cell(x) for x in row) + "\n")


def read_csv(path):
    """Returns (header, rows) with every cell still a string."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ContractViolation(f"{path} is empty, expected a CSV header") from None
        return header, [row for row in reader]


def write_tokens_csv(path, tokens: np.ndarray) -> None:
    header = [f"c{j}" for j in range(tokens.shape[1])]
    write_csv(path, header, tokens)


def load_tokens_csv(path, precision="f64") -> np.ndarray:
    """Token matrix from CSV; rows must be rectangular and all-finite."""
    header, rows = read_csv(path)
    width = len(header)
    data = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ContractViolation(
                f"{path} row {i} has {len(row)} cells, header has {width}"
            )
        try:
            data.append([float(c) for c in row])
        except ValueError as e:
            raise ContractViolation(f"{path} row {i}: {e}") from None
    arr = np.array(data, dtype=resolve_dtype(precision))
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ContractViolation(f"{path} holds no token rows")
    require_finite(arr, f"tokens from {path}")
    return arr


def write_routes_csv(path, assignment: RouteAssignment) -> None:
    rows = ((i, int(c)) for i, c in enumerate(assignment.indices))
    write_csv(path, ["token_index", "choice_index"], rows)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) grayscale image, min-max normalized to 0..255.

    A constant image maps to mid-gray 128 rather than dividing by zero.
    """
    if image.ndim != 2:
        raise ContractViolation(f"pgm image must be 2-D, got shape {image.shape}")
    img = np.asarray(image, dtype=np.float64)
    require_finite(img, "pgm image")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.rint((img - lo) * (255.0 / (hi - lo)))
        pixels = np.clip(scaled, 0, 255).astype(np.uint8)
    else:
        pixels = np.full(img.shape, 128, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path):
    """Returns (width, height, pixel bytes); validates the P5 header."""
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ContractViolation(f"{path} is not a binary P5 PGM")
    w, h = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ContractViolation(f"{path} maxval must be 255, got {parts[2]!r}")
    pixels = parts[3]
    if len(pixels) != w * h:
        raise ContractViolation(f"{path} has {len(pixels)} pixel bytes for {w}x{h}")
    return w, h, pixels


def stack_entries(stack: AttentionStack):
    """Yield (name, array) for every weight in a fixed, rebuildable order."""
    for b, block in enumerate(stack.blocks):
        p = block.proj
        yield f"block{b}/proj/w_q0", p.w_q0
        yield f"block{b}/proj/w_k0", p.w_k0
        yield f"block{b}/proj/w_v0", p.w_v0
        for i, w in enumerate(p.w_q):
            yield f"block{b}/proj/w_q{i + 1}", w
        for i, w in enumerate(p.w_k):
            yield f"block{b}/proj/w_k{i + 1}", w
        yield f"block{b}/proj/router_q", p.router_q.weights
        yield f"block{b}/proj/router_k", p.router_k.weights
        for h, hp in enumerate(block.head_params):
            for stream in ("q", "k", "qp", "kp"):
                bank = getattr(hp, f"kernel_{stream}")
                yield f"block{b}/head{h}/kernel_{stream}/gammas", np.asarray(
                    bank.gammas, dtype=np.float64
                )
                yield f"block{b}/head{h}/kernel_{stream}/router", bank.router.weights
            yield f"block{b}/head{h}/diff/lambdas", np.asarray(
                hp.diff.lambdas, dtype=np.float64
            )
            yield f"block{b}/head{h}/diff/router_q", hp.diff.router_q.weights
            yield f"block{b}/head{h}/diff/router_k", hp.diff.router_k.weights
            yield f"block{b}/head{h}/diff/router_map", hp.diff.lambda_map_router.weights
        if block.dwc is not None:
            yield f"block{b}/dwc/kernels", block.dwc.kernels


def _dtype_name(arr: np.ndarray) -> str:
    return "f32" if arr.dtype == np.float32 else "f64"


def save_weights_blob(stack: AttentionStack, base_path) -> str:
    """Write {base}.bin (raw little-endian floats) + {base}.json manifest.

    Returns the manifest path.  Entries are sorted by name so the byte
    layout is a pure function of the weights.
    """
    base = os.fspath(base_path)
    blob_path, manifest_path = base + ".bin", base + ".json"
    entries = sorted(stack_entries(stack), key=lambda e: e[0])
    offset = 0
    meta = []
    with open(blob_path, "wb") as f:
        for name, arr in entries:
            raw = np.ascontiguousarray(arr, dtype=_BLOB_DTYPES[_dtype_name(arr)]).tobytes()
            f.write(raw)
            meta.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": _dtype_name(arr),
                    "byte_offset": offset,
                }
            )
            offset += len(raw)
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump({"blob": os.path.basename(blob_path), "entries": meta}, f, indent=2)
        f.write("\n")
    return manifest_path


def load_weights_blob(manifest_path) -> dict:
    """Read a manifest + blob pair back into a name -> array dict."""
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    blob_path = os.path.join(os.path.dirname(os.fspath(manifest_path)), manifest["blob"])
    with open(blob_path, "rb") as f:
        blob = f.read()
    weights = {}
    for entry in manifest["entries"]:
        dt = np.dtype(_BLOB_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start)
        weights[entry["name"]] = arr.reshape(shape).astype(dt.newbyteorder("="))
    return weights


def save_weights_json(stack: AttentionStack, path) -> None:
    """Inline nested-list weights; only sensible at desk scale."""
    entries = {
        name: {"dtype": _dtype_name(arr), "shape": list(arr.shape), "data": arr.tolist()}
        for name, arr in stack_entries(stack)
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump({"entries": entries}, f, indent=1, sort_keys=True)
        f.write("\n")


def load_weights_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    weights = {}
    for name, entry in data["entries"].items():
        arr = np.array(entry["data"], dtype=resolve_dtype(entry["dtype"]))
        if list(arr.shape) != entry["shape"]:
            raise ContractViolation(
                f"weight {name}: data shape {list(arr.shape)} != declared {entry['shape']}"
            )
        weights[name] = arr
    return weights


def stack_from_weights(cfg, weights: dict) -> AttentionStack:
    """Rebuild a stack from cfg structure plus a name -> array dict."""
    from .attention import DwcParams, DydilaParams, HeadParams, reparam_merge
    from .differential import DifferentialBank
    from .kernels import KernelBank
    from .projection import ProjectorBank
    from .routing import Router

    def get(name):
        try:
            return weights[name]
        except KeyError:
            raise ConfigError(f"weights are missing entry {name!r}") from None

    blocks = []
    for b in range(cfg.blocks):
        proj = ProjectorBank(
            w_q0=get(f"block{b}/proj/w_q0"),
            w_k0=get(f"block{b}/proj/w_k0"),
            w_v0=get(f"block{b}/proj/w_v0"),
            w_q=tuple(get(f"block{b}/proj/w_q{i + 1}") for i in range(cfg.n_projectors)),
            w_k=tuple(get(f"block{b}/proj/w_k{i + 1}") for i in range(cfg.n_projectors)),
            router_q=Router(get(f"block{b}/proj/router_q")),
            router_k=Router(get(f"block{b}/proj/router_k")),
        )
        head_params = []
        for h in range(cfg.heads):
            banks = {}
            for stream in ("q", "k", "qp", "kp"):
                banks[stream] = KernelBank(
                    gammas=tuple(float(g) for g in get(f"block{b}/head{h}/kernel_{stream}/gammas")),
                    router=Router(get(f"block{b}/head{h}/kernel_{stream}/router")),
                )
            diff = DifferentialBank(
                lambdas=tuple(float(x) for x in get(f"block{b}/head{h}/diff/lambdas")),
                router_q=Router(get(f"block{b}/head{h}/diff/router_q")),
                router_k=Router(get(f"block{b}/head{h}/diff/router_k")),
                lambda_map_router=Router(get(f"block{b}/head{h}/diff/router_map")),
            )
            head_params.append(
                HeadParams(
                    kernel_q=banks["q"], kernel_k=banks["k"],
                    kernel_qp=banks["qp"], kernel_kp=banks["kp"], diff=diff,
                )
            )
        dwc = None
        if cfg.dwc_enabled:
            dwc = DwcParams(
                kernels=get(f"block{b}/dwc/kernels"),
                identity_branch=cfg.dwc_identity_branch,
            )
            if cfg.dwc_use_merged:
                dwc = reparam_merge(dwc)
        blocks.append(
            DydilaParams(
                proj=proj,
                head_params=tuple(head_params),
                grid=(cfg.grid_h, cfg.grid_w),
                dwc=dwc,
                dwc_use_merged=cfg.dwc_use_merged,
                variant=cfg.variant,
                normalize=cfg.normalize,
            )
        )
    return AttentionStack(blocks=tuple(blocks))
