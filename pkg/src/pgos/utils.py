"""Seed derivation, tensor (de)serialization and shared exceptions."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

DTYPE = torch.float64
FORMAT_VERSION = 1


class PgosError(Exception):
    """Base class for all library errors."""


class ValidationError(PgosError, ValueError):
    """Bad user input: configs, specs, files, shapes."""


class NumericalError(PgosError, ArithmeticError):
    """A loss or network output became non-finite."""


class StageMismatchError(ValidationError):
    """An upstream artifact was produced under a different config hash."""


def derive_seed(seed: int, *path: Any) -> int:
    """Derive an independent 63-bit seed from a root seed and a name path.

    Children depend only on ``(seed, path)``, never on how many other
    streams were drawn before, which keeps per-index work order-free.
    """
    key = "/".join([str(int(seed))] + [str(p) for p in path])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def np_rng(seed: int, *path: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))


def torch_gen(seed: int, *path: Any) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, *path))
    return gen


def check_finite(name: str, value: torch.Tensor | float) -> None:
    if isinstance(value, torch.Tensor):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = bool(np.isfinite(value))
    if not ok:
        raise NumericalError(f"non-finite value in {name}")


def state_to_json(module: torch.nn.Module) -> dict[str, dict]:
    return {
        name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
        for name, t in module.state_dict().items()
    }


def json_to_state(blob: dict[str, dict]) -> dict[str, torch.Tensor]:
    return {
        name: torch.tensor(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        for name, entry in blob.items()
    }


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"missing file: {path}")
    with path.open() as fh:
        return json.load(fh)
