"""Shared JSON/CSV serialization.

Complex numbers serialize as [re, im] pairs; level indices serialize
1-based (matching the usual quantizer-index convention) while the in-
memory API is 0-based. Floats are written with repr (shortest round-trip
decimal), so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .channel import TrainingEnsemble
from .codebooks import ProductCodebook, ScalarCodebook

__all__ = [
    "complex_to_pair",
    "pair_to_complex",
    "codebook_to_dict",
    "codebook_from_dict",
    "correlation_to_dict",
    "correlation_from_dict",
    "ensemble_to_dict",
    "ensemble_from_dict",
    "indices_to_json",
    "indices_from_json",
    "dump_json",
    "write_csv",
]


def complex_to_pair(values) -> list:
    """Nested [re, im] representation of a complex array."""
    arr = np.asarray(values, dtype=np.complex128)
    stacked = np.stack([arr.real, arr.imag], axis=-1)
    return stacked.tolist()


def pair_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ValueError("expected trailing [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def codebook_to_dict(codebook: ProductCodebook) -> dict:
    return {"per_ru": [{"rate_bits": cb.rate_bits,
                        "levels": complex_to_pair(cb.levels)}
                       for cb in codebook.per_ru]}


def codebook_from_dict(data: dict) -> ProductCodebook:
    books = []
    for entry in data["per_ru"]:
        levels = pair_to_complex(entry["levels"])
        cb = ScalarCodebook(levels=levels)
        if "rate_bits" in entry and cb.rate_bits != entry["rate_bits"]:
            raise ValueError("rate_bits inconsistent with level count")
        books.append(cb)
    return ProductCodebook(per_ru=books)


def correlation_to_dict(corr: np.ndarray) -> dict:
    return {"entries": complex_to_pair(corr)}


def correlation_from_dict(data: dict) -> np.ndarray:
    return pair_to_complex(data["entries"])


def ensemble_to_dict(ensemble: TrainingEnsemble) -> dict:
    return {"channels": complex_to_pair(ensemble.channels),
            "symbols": complex_to_pair(ensemble.symbols)}


def ensemble_from_dict(data: dict) -> TrainingEnsemble:
    return TrainingEnsemble(channels=pair_to_complex(data["channels"]),
                            symbols=pair_to_complex(data["symbols"]))


def indices_to_json(indices) -> list:
    """0-based in-memory index vectors to the 1-based wire format."""
    arr = np.asarray(indices, dtype=np.int64)
    return (arr + 1).tolist()


def indices_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.int64)
    if np.any(arr < 1):
        raise ValueError("wire-format indices are 1-based")
    return arr - 1


class _NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            if np.iscomplexobj(obj):
                return complex_to_pair(obj)
            return obj.tolist()
        return super().default(obj)


def dump_json(data, path: str) -> None:
    """Deterministic JSON file (fixed separators, repr floats, newline)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, cls=_NumpyEncoder, indent=2, sort_keys=False)
        fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, header: list, rows: list) -> None:
    """Deterministic CSV (repr floats, \\n line endings)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
