#!/usr/bin/env python3
"""
Update generators and update-stream files.

Text records, one per line:

    name;k;u=v1,v2,...;v=w1,w2,...

with ``k * rows`` u-values and ``k * cols`` v-values in column-major factor
order. The binary form (``.bin`` suffix) stores per record: u64 name length,
the UTF-8 name, u64 k, u64 rows, u64 cols, then the f64 u and v factors in
column-major order, all little-endian.
"""

import logging
from pathlib import Path
from typing import Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from delta_engine import RankKUpdate
from errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_UPDATE_SCALE = 0.01

_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


# ===== GENERATORS =====

def _row_indicators(rows: int, picked: Sequence[int]) -> np.ndarray:
    u = np.zeros((rows, len(picked)), dtype=np.float64)
    u[np.asarray(picked), np.arange(len(picked))] = 1.0
    return u


def random_row_updates(
    target: str,
    rows: int,
    cols: int,
    count: int,
    rank: int,
    rng: np.random.Generator,
    scale: float = DEFAULT_UPDATE_SCALE,
) -> List[RankKUpdate]:
    """Updates that each change ``rank`` distinct rows of ``target`` by small random rows"""
    if rank > min(rows, cols):
        raise DataError(f"rank {rank} exceeds min({rows}, {cols})")
    updates = []
    for _ in range(count):
        picked = rng.choice(rows, size=rank, replace=False)
        u = _row_indicators(rows, picked)
        v = scale * rng.standard_normal((cols, rank))
        updates.append(RankKUpdate(target, u, v))
    return updates


def zipf_row_probabilities(n: int, zipf_factor: float) -> np.ndarray:
    weights = (np.arange(n, dtype=np.float64) + 1.0) ** (-float(zipf_factor))
    return weights / weights.sum()


def zipf_batch_stream(
    n: int,
    batch_size: int,
    zipf_factor: float,
    seed: int,
    cols: Optional[int] = None,
    count: Optional[int] = None,
    target: str = "A",
    scale: float = DEFAULT_UPDATE_SCALE,
) -> Iterator[RankKUpdate]:
    """
    Batches of ``batch_size`` single-row changes, rows drawn with probability
    proportional to ``1 / (rank + 1) ** zipf_factor``.

    Changes hitting the same row merge into one row delta, so each batch is a
    rank-k update with k the number of distinct rows. A batch touching more
    distinct rows than ``cols`` is stored as ``u = U V'``, ``v = I`` instead,
    so k never exceeds ``min(n, cols)``. The stream is endless unless ``count`` is given.
    """
    if zipf_factor < 0:
        raise DataError(f"zipf factor must be non-negative, got {zipf_factor}")
    cols = cols or n
    rng = np.random.default_rng(seed)
    probabilities = zipf_row_probabilities(n, zipf_factor)
    produced = 0
    while count is None or produced < count:
        drawn = rng.choice(n, size=batch_size, p=probabilities)
        deltas = scale * rng.standard_normal((batch_size, cols))
        rows, inverse = np.unique(drawn, return_inverse=True)
        v = np.zeros((cols, len(rows)), dtype=np.float64)
        np.add.at(v.T, inverse, deltas)
        u = _row_indicators(n, rows)
        if len(rows) > cols:
            u, v = u @ v.T, np.eye(cols, dtype=np.float64)
        yield RankKUpdate(target, u, v)
        produced += 1


# ===== STREAM FILES =====

def _format_values(m: np.ndarray) -> str:
    return ",".join(repr(float(x)) for x in m.flatten(order="F"))


def _parse_values(text: str, prefix: str, index: int) -> np.ndarray:
    if not text.startswith(prefix):
        raise DataError(f"expected '{prefix}...'", record=index)
    body = text[len(prefix):]
    try:
        return np.array([float(x) for x in body.split(",")] if body else [], dtype=np.float64)
    except ValueError:
        raise DataError(f"non-numeric value in '{prefix}' factor", record=index)


def _expected_shape(
    name: str,
    shapes: Optional[Mapping[str, Tuple[int, int]]],
    index: int,
) -> Optional[Tuple[int, int]]:
    if shapes is None:
        return None
    if name not in shapes:
        raise DataError(f"'{name}' is not a dynamic input ({', '.join(sorted(shapes))})", record=index)
    return shapes[name]


def _factors(
    name: str,
    k: int,
    u: np.ndarray,
    v: np.ndarray,
    shape: Optional[Tuple[int, int]],
    index: int,
) -> RankKUpdate:
    if k < 1:
        raise DataError(f"rank must be positive, got {k}", record=index)
    if shape is not None:
        rows, cols = shape
        if u.size != rows * k or v.size != cols * k:
            raise DataError(
                f"'{name}' is {rows}x{cols}: expected {rows * k} u-values and {cols * k} v-values, "
                f"got {u.size} and {v.size}",
                record=index,
            )
    elif u.size % k or v.size % k or not u.size or not v.size:
        raise DataError(f"factor lengths {u.size} and {v.size} are not multiples of k={k}", record=index)
    rows, cols = u.size // k, v.size // k
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        raise DataError("non-finite factor value", record=index)
    return RankKUpdate(name, u.reshape((rows, k), order="F"), v.reshape((cols, k), order="F"))


def _read_text(path: Path, shapes) -> List[RankKUpdate]:
    updates = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        index = len(updates)
        fields = line.split(";")
        if len(fields) != 4:
            raise DataError(f"expected 4 ';'-separated fields, got {len(fields)}", record=index)
        name = fields[0].strip()
        try:
            k = int(fields[1])
        except ValueError:
            raise DataError(f"rank '{fields[1]}' is not an integer", record=index)
        u = _parse_values(fields[2].strip(), "u=", index)
        v = _parse_values(fields[3].strip(), "v=", index)
        updates.append(_factors(name, k, u, v, _expected_shape(name, shapes, index), index))
    return updates


def _read_binary(path: Path, shapes) -> List[RankKUpdate]:
    raw = path.read_bytes()
    offset = 0
    updates = []

    def take(count: int, dtype: np.dtype, index: int) -> np.ndarray:
        nonlocal offset
        size = count * dtype.itemsize
        if offset + size > len(raw):
            raise DataError("truncated record", record=index)
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += size
        return values

    while offset < len(raw):
        index = len(updates)
        name_len = int(take(1, _U64, index)[0])
        if offset + name_len > len(raw):
            raise DataError("truncated record name", record=index)
        try:
            name = raw[offset:offset + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise DataError("record name is not UTF-8", record=index)
        offset += name_len
        k, rows, cols = (int(x) for x in take(3, _U64, index))
        shape = _expected_shape(name, shapes, index)
        if shape is not None and shape != (rows, cols):
            raise DataError(f"'{name}' is {shape[0]}x{shape[1]}, record says {rows}x{cols}", record=index)
        u = take(rows * k, _F64, index).astype(np.float64)
        v = take(cols * k, _F64, index).astype(np.float64)
        updates.append(_factors(name, k, u, v, (rows, cols), index))
    return updates


def read_update_stream(
    path: Union[str, Path],
    shapes: Optional[Mapping[str, Tuple[int, int]]] = None,
) -> List[RankKUpdate]:
    """
    Parse an update-stream file.

    ``shapes`` maps each dynamic input to its (rows, cols); when given, names
    and factor lengths are checked against it. Malformed records raise
    DataError carrying the record index.
    """
    path = Path(path)
    updates = _read_binary(path, shapes) if path.suffix == ".bin" else _read_text(path, shapes)
    logger.debug(f"Read {len(updates)} update records from {path}")
    return updates


def write_update_stream(path: Union[str, Path], updates: Sequence[RankKUpdate]) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        chunks = []
        for update in updates:
            name = update.target.encode("utf-8")
            chunks.append(np.array([len(name)], dtype=_U64).tobytes())
            chunks.append(name)
            header = [update.rank, update.u.shape[0], update.v.shape[0]]
            chunks.append(np.array(header, dtype=_U64).tobytes())
            chunks.append(update.u.flatten(order="F").astype(_F64).tobytes())
            chunks.append(update.v.flatten(order="F").astype(_F64).tobytes())
        path.write_bytes(b"".join(chunks))
        return
    lines = [
        f"{update.target};{update.rank};u={_format_values(update.u)};v={_format_values(update.v)}"
        for update in updates
    ]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
