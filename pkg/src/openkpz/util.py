"""Seeding, parallel dispatch, and CSV helpers shared across modules."""
from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def stream_rng(seed: int, *indices: int) -> np.random.Generator:
    """Deterministic RNG stream keyed by (seed, *indices).

    Independent of worker count and evaluation order: the stream depends only
    on the key, so sharding work by index reproduces the serial run exactly.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, indices)]))


def parallel_map(fn, items, workers: int = 1):
    """Map fn over items, optionally across processes; results in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def config_hash(config: dict) -> str:
    body = ";".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def write_csv(path: str, header: list[str], rows, comment_lines=()):
    """Write a CSV with '#' comment header lines; creates parent dirs."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in comment_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)
