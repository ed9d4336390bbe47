"""Dictionary matching on a synthetic phantom under the fully-sampled voxel model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .bounds import NoiseModel
from .epg_sim import EpgConfig, Schedule, Tissue, simulate_fingerprints
from .errors import PreconditionError

BACKGROUND = -1


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm atoms (rows) with their (t1, t2) and original norms."""

    schedule_id: str
    t1: np.ndarray
    t2: np.ndarray
    atoms: np.ndarray  # (A, N), unit rows
    norms: np.ndarray  # (A,)

    def __len__(self):
        return self.atoms.shape[0]

    def tissue(self, i: int) -> Tissue:
        return Tissue(self.t1[i], self.t2[i])


def default_t1_grid() -> np.ndarray:
    return np.arange(100.0, 4000.0 + 1e-9, 50.0)


def default_t2_grid() -> np.ndarray:
    return np.geomspace(10.0, 2000.0, 60)


def build_dictionary(
    schedule: Schedule, t1_values, t2_values, cfg: EpgConfig = EpgConfig(), schedule_id: str = ""
) -> Dictionary:
    """One atom per (t1, t2) in the Cartesian product of the two value lists."""
    t1_values = np.unique(np.asarray(t1_values, dtype=float))
    t2_values = np.unique(np.asarray(t2_values, dtype=float))
    if t1_values.size == 0 or t2_values.size == 0:
        raise PreconditionError("dictionary grids must be nonempty")
    if np.any(t1_values <= 0) or np.any(t2_values <= 0):
        raise PreconditionError("dictionary relaxation times must be positive")
    T1, T2 = np.meshgrid(t1_values, t2_values, indexing="ij")
    t1, t2 = T1.ravel(), T2.ravel()
    sig = simulate_fingerprints(schedule, t1, t2, cfg)
    norms = np.linalg.norm(sig, axis=1)
    if np.any(norms == 0):
        raise PreconditionError("zero-norm dictionary atom")
    return Dictionary(schedule_id, t1, t2, sig / norms[:, None], norms)


def match_indices(dictionary: Dictionary, observed: np.ndarray, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Atom index and score for each observed row; ties go to the lowest index."""
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    if len(dictionary) == 0:
        raise PreconditionError("empty dictionary")
    if observed.shape[1] != dictionary.atoms.shape[1]:
        raise PreconditionError(
            f"observed length {observed.shape[1]} differs from atom length {dictionary.atoms.shape[1]}"
        )

    def run(sl):
        ip = np.abs(observed[sl] @ dictionary.atoms.T)
        idx = np.argmax(ip, axis=1)
        return idx, ip[np.arange(idx.size), idx]

    parts = pmap(run, [slice(i, i + chunk) for i in range(0, observed.shape[0], chunk)])
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def match(dictionary: Dictionary, observed) -> tuple[Tissue, float]:
    """Atom maximizing |<observed, atom>|; the score is that absolute inner product."""
    observed = np.asarray(observed, dtype=float)
    if observed.ndim != 1:
        raise PreconditionError("match expects a single fingerprint")
    idx, score = match_indices(dictionary, observed)
    return dictionary.tissue(int(idx[0])), float(score[0])


@dataclass(frozen=True)
class Phantom:
    labels: np.ndarray  # (H, W) int; BACKGROUND outside the object
    tissues: tuple[Tissue, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tissues", tuple(self.tissues))
        fg = labels[labels != BACKGROUND]
        if fg.size and (fg.min() < 0 or fg.max() >= len(self.tissues)):
            raise PreconditionError("phantom label outside the tissue table")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.labels != BACKGROUND

    def truth(self) -> "ParameterMaps":
        t1 = np.zeros(self.labels.shape)
        t2 = np.zeros(self.labels.shape)
        for i, t in enumerate(self.tissues):
            sel = self.labels == i
            t1[sel] = t.t1
            t2[sel] = t.t2
        return ParameterMaps(t1, t2, self.mask)


# white matter, gray matter, CSF and a long-T2 lesion
DESK_TISSUES = (Tissue(900, 60), Tissue(1500, 90), Tissue(3500, 400), Tissue(1800, 800))


def desk_phantom(size: int = 64, tissues: Sequence[Tissue] = DESK_TISSUES) -> Phantom:
    """Concentric-shape phantom: elliptical head of tissue 1 around a tissue-0 core,
    a CSF-like ring segment and a small round lesion."""
    y, x = np.mgrid[0:size, 0:size]
    u = (x - (size - 1) / 2) / (size / 2)
    v = (y - (size - 1) / 2) / (size / 2)
    r_head = (u / 0.9) ** 2 + (v / 0.75) ** 2
    labels = np.full((size, size), BACKGROUND)
    labels[r_head <= 1.0] = 1
    labels[r_head <= 0.55] = 0
    ring = (r_head > 0.7) & (r_head <= 0.85) & (v < 0.1)
    labels[ring] = 2
    labels[(u + 0.25) ** 2 + (v - 0.2) ** 2 <= 0.12**2] = 3
    labels[((u - 0.3) ** 2 + (v + 0.1) ** 2) <= 0.08**2] = 2
    return Phantom(labels, tuple(tissues))


@dataclass(frozen=True)
class ParameterMaps:
    t1_map: np.ndarray
    t2_map: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if np.any(self.t1_map[mask] <= 0) or np.any(self.t2_map[mask] <= 0):
            raise PreconditionError("parameter maps must be positive on the mask")


def _pixel_rng(seed: int, pixel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(pixel)]))


def pixel_noise(seed: int, pixels: np.ndarray, n_frames: int) -> np.ndarray:
    """Standard-normal noise rows keyed by (seed, flat pixel index)."""
    return np.stack([_pixel_rng(seed, p).standard_normal(n_frames) for p in pixels]) if len(pixels) else np.zeros(
        (0, n_frames)
    )


def simulate_acquisition(
    phantom: Phantom, schedule: Schedule, noise: NoiseModel | float, cfg: EpgConfig = EpgConfig(), seed: int = 0
) -> dict[int, np.ndarray]:
    """Noisy fingerprint per foreground pixel, keyed by flat pixel index.

    ``noise`` may be a NoiseModel or a plain variance (0 allowed for noiseless
    data).  Each pixel's noise depends only on ``seed`` and its index.
    """
    sigma2 = noise.sigma2 if isinstance(noise, NoiseModel) else float(noise)
    if sigma2 < 0:
        raise PreconditionError("noise variance must be nonnegative")
    pixels = np.flatnonzero(phantom.mask.ravel())
    labels = phantom.labels.ravel()[pixels]
    t1 = np.array([t.t1 for t in phantom.tissues])
    t2 = np.array([t.t2 for t in phantom.tissues])
    clean = simulate_fingerprints(schedule, t1, t2, cfg)
    obs = clean[labels]
    if sigma2 > 0:
        obs = obs + np.sqrt(sigma2) * pixel_noise(seed, pixels, schedule.n_frames)
    return dict(zip(pixels.tolist(), obs))


def reconstruct(dictionary: Dictionary, observations: Mapping[int, np.ndarray], shape) -> ParameterMaps:
    """Per-pixel dictionary match assembled into T1/T2 maps of ``shape``."""
    pixels = np.array(sorted(observations), dtype=int)
    t1 = np.zeros(int(np.prod(shape)))
    t2 = np.zeros(int(np.prod(shape)))
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    if pixels.size:
        obs = np.stack([observations[p] for p in pixels])
        idx, _ = match_indices(dictionary, obs)
        t1[pixels] = dictionary.t1[idx]
        t2[pixels] = dictionary.t2[idx]
        mask[pixels] = True
    return ParameterMaps(t1.reshape(shape), t2.reshape(shape), mask.reshape(shape))


def nmse(estimate: ParameterMaps, truth: ParameterMaps) -> tuple[float, float]:
    """||x_hat - x||^2 / ||x||^2 over the mask, for T1 and T2."""
    if not np.array_equal(estimate.mask, truth.mask):
        raise PreconditionError("estimate and truth masks differ")
    m = truth.mask
    if not m.any():
        raise PreconditionError("empty mask")
    out = []
    for est, ref in ((estimate.t1_map, truth.t1_map), (estimate.t2_map, truth.t2_map)):
        denom = float(np.sum(ref[m] ** 2))
        if denom == 0:
            raise PreconditionError("zero-norm truth map")
        out.append(float(np.sum((est[m] - ref[m]) ** 2)) / denom)
    return out[0], out[1]


@dataclass(frozen=True)
class SchemeResult:
    scheme: str
    t1_nmse: float
    t2_nmse: float
    sigma2: float
    n_frames: int
    seed: int
    maps: ParameterMaps


def compare_schemes(
    schedules: Mapping[str, Schedule],
    phantom: Phantom,
    noise: NoiseModel | float,
    t1_grid=None,
    t2_grid=None,
    cfg: EpgConfig = EpgConfig(),
    seed: int = 0,
) -> list[SchemeResult]:
    """Same phantom, same per-pixel noise stream, one reconstruction per schedule."""
    lengths = {s.n_frames for s in schedules.values()}
    if len(lengths) > 1:
        raise PreconditionError(f"schedules must share n_frames, got {sorted(lengths)}")
    t1_grid = default_t1_grid() if t1_grid is None else t1_grid
    t2_grid = default_t2_grid() if t2_grid is None else t2_grid
    sigma2 = noise.sigma2 if isinstance(noise, NoiseModel) else float(noise)
    truth = phantom.truth()
    rows = []
    for name, sched in schedules.items():
        d = build_dictionary(sched, t1_grid, t2_grid, cfg, schedule_id=name)
        obs = simulate_acquisition(phantom, sched, sigma2, cfg, seed)
        maps = reconstruct(d, obs, phantom.labels.shape)
        e1, e2 = nmse(maps, truth)
        rows.append(SchemeResult(name, e1, e2, sigma2, sched.n_frames, seed, maps))
    return rows
