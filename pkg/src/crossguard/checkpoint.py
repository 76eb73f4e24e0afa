"""Checkpoint format: one .npz archive of named float64 parameter arrays.

Names come from Module.named_parameters (dotted paths), plus optional
metadata entries prefixed with "meta/" holding scalars.  Loading is strict:
the archive and the target module must agree on names and shapes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .layers import Module


def save_module(path: str | Path, module: Module, meta: dict[str, float] | None = None):
    arrays = {name: t.data for name, t in module.named_parameters().items()}
    for key, val in (meta or {}).items():
        arrays[f"meta/{key}"] = np.float64(val)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def read_meta(path: str | Path) -> dict[str, float]:
    """Metadata entries alone, without needing a module to load into."""
    with np.load(Path(path)) as archive:
        return {k[5:]: float(archive[k]) for k in archive.files if k.startswith("meta/")}


def load_module(path: str | Path, module: Module) -> dict[str, float]:
    """Copy stored arrays into the module in place; returns metadata."""
    with np.load(Path(path)) as archive:
        stored = {k: archive[k] for k in archive.files}
    meta = {k[5:]: float(v) for k, v in stored.items() if k.startswith("meta/")}
    params = module.named_parameters()
    expected = set(params)
    present = {k for k in stored if not k.startswith("meta/")}
    if expected != present:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        raise ValueError(f"checkpoint mismatch: missing={missing} unexpected={extra}")
    for name, tensor in params.items():
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {arr.shape} vs model {tensor.data.shape}"
            )
        tensor.data = arr.astype(np.float64)
    return meta
