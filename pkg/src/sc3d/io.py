"""Dataset CSV and graph JSON serialization.

Dataset CSV format: optional leading ``#`` comment lines carrying
metadata (``# system: svar``, ``# regimes: 200,400,600``), then a header
``traj,t,x0,...,x{d-1}`` and one row per (trajectory, time) sorted by
(traj, t). Values are written with 17 significant digits so round trips
are lossless.

Graph JSON: object with keys ``dim``, ``lag_order``, ``instant_enabled``,
``A`` (list of L row-major d x d arrays), ``B`` (row-major d x d array)
and optionally ``masks`` with binary ``lag`` and ``instant`` arrays.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .types import DynamicGraph, EdgeMasks, TimeSeriesDataset


class DatasetFormatError(ValueError):
    """Raised when a dataset CSV file does not match the expected format."""


class GraphFormatError(ValueError):
    """Raised when a graph JSON file does not match the expected schema."""


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: TimeSeriesDataset, path: str) -> None:
    n, t, d = ds.values.shape
    lines = [f"# system: {ds.system_tag}"]
    if ds.regime_boundaries:
        lines.append("# regimes: " + ",".join(str(b) for b in ds.regime_boundaries))
    lines.append("traj,t," + ",".join(f"x{i}" for i in range(d)))
    for traj in range(n):
        for tt in range(t):
            row = ds.values[traj, tt]
            lines.append(f"{traj},{tt}," + ",".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(path: str) -> TimeSeriesDataset:
    system_tag = "external"
    regimes: list[int] | None = None
    header: list[str] | None = None
    rows: list[tuple[int, int, list[float]]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("system:"):
                    system_tag = body.split(":", 1)[1].strip()
                elif body.startswith("regimes:"):
                    regimes = [int(x) for x in body.split(":", 1)[1].split(",") if x.strip()]
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                _check_header(header, path)
                continue
            if len(cells) != len(header):
                raise DatasetFormatError(
                    f"{path}:{lineno}: row has {len(cells)} cells, header has {len(header)}"
                )
            try:
                traj, tt = int(cells[0]), int(cells[1])
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: traj/t columns must be integers, got {cells[0]!r},{cells[1]!r}"
                ) from None
            try:
                vals = [float(c) for c in cells[2:]]
            except ValueError:
                bad = next(c for c in cells[2:] if not _is_float(c))
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            rows.append((traj, tt, vals))
    if header is None:
        raise DatasetFormatError(f"{path}: empty file, no header line found")
    if not rows:
        raise DatasetFormatError(f"{path}: header but no data rows")

    d = len(header) - 2
    n = max(r[0] for r in rows) + 1
    t = max(r[1] for r in rows) + 1
    if len(rows) != n * t:
        raise DatasetFormatError(
            f"{path}: inconsistent row count {len(rows)} for {n} trajectories x {t} steps"
        )
    values = np.full((n, t, d), np.nan)
    for traj, tt, vals in rows:
        values[traj, tt] = vals
    if np.any(np.isnan(values)):
        raise DatasetFormatError(f"{path}: missing (traj, t) rows leave gaps in the grid")
    return TimeSeriesDataset(values, system_tag=system_tag, regime_boundaries=regimes)


def _check_header(header: list[str], path: str) -> None:
    if len(header) < 3:
        raise DatasetFormatError(f"{path}: header must be traj,t,x0,... got {','.join(header)!r}")
    for pos, want in enumerate(("traj", "t")):
        if header[pos] != want:
            raise DatasetFormatError(
                f"{path}: missing {want!r} column at position {pos} (found {header[pos]!r})"
            )
    for i, name in enumerate(header[2:]):
        if name != f"x{i}":
            raise DatasetFormatError(f"{path}: expected column x{i}, found {name!r}")


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def graph_to_dict(g: DynamicGraph, masks: EdgeMasks | None = None) -> dict:
    out = {
        "dim": g.dim,
        "lag_order": g.lag_order,
        "instant_enabled": g.instant_enabled,
        "A": [a.tolist() for a in g.lag_matrices],
        "B": g.instant_matrix.tolist(),
    }
    if masks is not None:
        out["masks"] = {
            "lag": [m.tolist() for m in masks.lag_masks],
            "instant": masks.instant_mask.tolist(),
        }
    return out


def graph_from_dict(obj: dict) -> DynamicGraph:
    try:
        return DynamicGraph(
            dim=int(obj["dim"]),
            lag_order=int(obj["lag_order"]),
            lag_matrices=[np.asarray(a, dtype=float) for a in obj["A"]],
            instant_matrix=np.asarray(obj["B"], dtype=float),
            instant_enabled=bool(obj["instant_enabled"]),
        )
    except KeyError as e:
        raise GraphFormatError(f"graph JSON missing key {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise GraphFormatError(f"graph JSON malformed: {e}") from None


def save_graph(g: DynamicGraph, path: str, masks: EdgeMasks | None = None) -> None:
    atomic_write_text(path, json.dumps(graph_to_dict(g, masks), indent=1) + "\n")


def load_graph(path: str) -> DynamicGraph:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise GraphFormatError(f"{path}: invalid JSON ({e})") from None
    return graph_from_dict(obj)


def load_graph_masks(path: str) -> EdgeMasks | None:
    with open(path) as fh:
        obj = json.load(fh)
    if "masks" not in obj:
        return None
    m = obj["masks"]
    return EdgeMasks(
        [np.asarray(a, dtype=np.int8) for a in m["lag"]],
        np.asarray(m["instant"], dtype=np.int8),
    )
