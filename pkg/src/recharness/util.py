"""Shared helpers: order-stable seeding and canonical JSON rendering."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_u64(*parts: Any) -> int:
    """Collapse *parts* into a 64-bit unsigned digest.

    Independent of Python's per-process hash randomization, so RNG streams
    derived from it are reproducible across processes and iteration orders.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int) -> np.random.Generator:
    """RNG from a 64-bit seed; negative seeds are masked, not rejected."""
    return np.random.default_rng(seed & _MASK64)


def substream(seed: int, *labels: Any) -> np.random.Generator:
    """Return an RNG stream derived from a master seed and a stable label path."""
    return np.random.default_rng((seed & _MASK64, stable_u64(*labels)))


def canonical_json(obj: Any) -> str:
    """Render *obj* as canonical JSON.

    Object keys sorted, floats at 17 significant digits, ASCII escapes.
    Two structurally equal objects always produce byte-identical text, which
    is what report comparison and round-trip tests rely on.
    """
    out: list[str] = []
    _render(obj, out)
    return "".join(out)


def _render(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float not representable in JSON: {obj!r}")
        out.append(format(obj, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"canonical JSON requires string keys, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _render(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, element in enumerate(obj):
            if i:
                out.append(",")
            _render(element, out)
        out.append("]")
    else:
        raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
