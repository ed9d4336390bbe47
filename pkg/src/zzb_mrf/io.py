"""Plain-text file formats shared by the command line and the scripts.

CSV files are UTF-8 with LF line endings and a '.' decimal separator;
floats are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .epg_sim import Schedule, Tissue
from .errors import ParseError, PreconditionError
from .mrf_pipeline import BACKGROUND, Dictionary, Phantom

SCHEDULE_HEADER = ("frame", "fa_deg", "tr_ms")
FINGERPRINT_HEADER = ("frame", "signal")
BOUNDS_HEADER = ("spec_id", "sigma2", "zzb_ms2", "crb_ms2", "mc_mse_ms2", "n_grid", "n_trials")
COST_HEADER = ("iter", "cost")
COMPARISON_HEADER = ("scheme", "t1_nmse", "t2_nmse", "sigma2", "n_frames", "seed")
TISSUE_HEADER = ("label", "t1_ms", "t2_ms")
MATCH_HEADER = ("t1_ms", "t2_ms", "score")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return "nan"
    return str(x)


def write_csv(path, header: Sequence[str] | None, rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _read_rows(path, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    lines = text.splitlines()
    expected = ",".join(header)
    if not lines or [c.strip() for c in lines[0].split(",")] != list(header):
        raise ParseError(f"expected header {expected!r}", path, 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields ({expected}), got {len(cells)}", path, lineno)
        rows.append((lineno, cells))
    return rows


def _float(cell: str, path, lineno: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", path, lineno) from None


def _int(cell: str, path, lineno: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"not an integer: {cell!r}", path, lineno) from None


# schedules and fingerprints

def write_schedule(path, schedule: Schedule) -> Path:
    rows = zip(range(1, schedule.n_frames + 1), schedule.flip_angles, schedule.repetition_times)
    return write_csv(path, SCHEDULE_HEADER, rows)


def read_schedule(path, echo_time: float = 3.0) -> Schedule:
    """Frames must run 1..N in order; the echo time comes from the caller."""
    rows = _read_rows(path, SCHEDULE_HEADER)
    if not rows:
        raise ParseError("schedule has no frames", path)
    fa, tr = [], []
    for k, (lineno, (frame, a, t)) in enumerate(rows, start=1):
        if _int(frame, path, lineno) != k:
            raise ParseError(f"frame index {frame} out of order, expected {k}", path, lineno)
        fa.append(_float(a, path, lineno))
        tr.append(_float(t, path, lineno))
    return Schedule(fa, tr, echo_time)


def write_fingerprint(path, signal) -> Path:
    return write_csv(path, FINGERPRINT_HEADER, zip(range(1, len(signal) + 1), signal))


def read_fingerprint(path) -> np.ndarray:
    rows = _read_rows(path, FINGERPRINT_HEADER)
    out = []
    for k, (lineno, (frame, value)) in enumerate(rows, start=1):
        if _int(frame, path, lineno) != k:
            raise ParseError(f"frame index {frame} out of order, expected {k}", path, lineno)
        out.append(_float(value, path, lineno))
    if not out:
        raise ParseError("fingerprint is empty", path)
    return np.array(out)


def write_cost_history(path, history: Sequence[float]) -> Path:
    return write_csv(path, COST_HEADER, enumerate(history))


def read_table(path, header: Sequence[str]) -> list[list[str]]:
    return [cells for _, cells in _read_rows(path, header)]


# grids and phantoms

def write_grid(path, grid: np.ndarray) -> Path:
    return write_csv(path, None, np.asarray(grid).tolist())


def read_grid(path, dtype=float) -> np.ndarray:
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    conv = _int if dtype is int else _float
    rows = [[conv(c.strip(), path, i) for c in ln.split(",")] for i, ln in enumerate(lines, start=1)]
    if not rows:
        raise ParseError("grid is empty", path)
    width = len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ParseError(f"row has {len(r)} cells, expected {width}", path, i)
    return np.array(rows, dtype=dtype)


def write_phantom(labels_path, tissues_path, phantom: Phantom) -> None:
    write_grid(labels_path, phantom.labels)
    write_csv(tissues_path, TISSUE_HEADER, [(i, t.t1, t.t2) for i, t in enumerate(phantom.tissues)])


def read_phantom(labels_path, tissues_path) -> Phantom:
    """Label grid (BACKGROUND = -1) plus a ``label,t1_ms,t2_ms`` table with labels 0..K-1."""
    labels = read_grid(labels_path, dtype=int)
    table = {}
    for lineno, (lab, t1, t2) in _read_rows(tissues_path, TISSUE_HEADER):
        k = _int(lab, tissues_path, lineno)
        if k in table:
            raise ParseError(f"duplicate label {k}", tissues_path, lineno)
        try:
            table[k] = Tissue(_float(t1, tissues_path, lineno), _float(t2, tissues_path, lineno))
        except PreconditionError as exc:
            raise ParseError(str(exc), tissues_path, lineno) from exc
    if sorted(table) != list(range(len(table))):
        raise ParseError("tissue labels must be 0..K-1", tissues_path)
    bad = set(np.unique(labels[labels != BACKGROUND]).tolist()) - set(table)
    if bad:
        raise ParseError(f"labels {sorted(bad)} missing from tissue table", labels_path)
    return Phantom(labels, tuple(table[k] for k in range(len(table))))


# dictionaries

def save_dictionary(path, d: Dictionary) -> Path:
    """``t1_ms,t2_ms,norm,s1..sN`` with unit-norm atoms, one row per atom."""
    n = d.atoms.shape[1]
    header = ("t1_ms", "t2_ms", "norm") + tuple(f"s{k}" for k in range(1, n + 1))
    rows = (np.r_[t1, t2, nrm, atom] for t1, t2, nrm, atom in zip(d.t1, d.t2, d.norms, d.atoms))
    return write_csv(path, header, rows)


def load_dictionary(path, schedule_id: str | None = None) -> Dictionary:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            header = [c.strip() for c in fh.readline().split(",")]
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    n = len(header) - 3
    if n < 1 or header != ["t1_ms", "t2_ms", "norm"] + [f"s{k}" for k in range(1, n + 1)]:
        raise ParseError("expected header 't1_ms,t2_ms,norm,s1,...,sN'", path, 1)
    rows = _read_rows(path, header)
    if not rows:
        raise ParseError("dictionary is empty", path)
    data = np.array([[_float(c, path, ln) for c in cells] for ln, cells in rows])
    sid = path.stem if schedule_id is None else schedule_id
    return Dictionary(sid, data[:, 0], data[:, 1], data[:, 3:], data[:, 2])


# manifests

def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest: {exc}", path) from exc
