"""Canonical JSON serialization and content digests.

Every on-disk artifact (map, scenario, session header, events, reports) is
UTF-8 JSON. The canonical form -- sorted keys, reals rendered as fixed
6-decimal strings -- makes byte identity meaningful, so content digests and
replay checks can compare files directly.
"""

from __future__ import annotations

import json
import math

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def round6(x: float) -> float:
    """Round to the 6-decimal grid used by every serialized real."""
    r = round(float(x), 6)
    return 0.0 if r == 0.0 else r  # normalize -0.0


def fmt_real(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite real cannot be serialized: {x}")
    return f"{round6(x):.6f}"


def _emit(obj, out: list) -> None:
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, bool):  # pragma: no cover - caught above
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(fmt_real(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Serialize to canonical JSON: sorted keys, 6-decimal fixed reals."""
    out: list = []
    _emit(obj, out)
    return "".join(out)


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


def digest_of(obj) -> str:
    """64-bit content hash of an object's canonical serialization, as 16 hex chars."""
    return f"{fnv1a64(canonical_json(obj).encode('utf-8')):016x}"
