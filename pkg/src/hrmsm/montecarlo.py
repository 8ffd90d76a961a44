"""Counterfactual window-regimen means by forward simulation.

Shared by G-computation (fitted Q and g, empirical L(0)) and the oracle
(true laws, parametric L(0)).  For each replicate, the pre-window segment
0..t-s is simulated with treatments drawn from the model's treatment law,
then every regimen in the grid is imposed on A(t-s+1..t) and the expected
final outcome E[Y(t+1) | simulated past] is recorded.

Replicates are processed in fixed-size chunks; chunk ``c`` draws from the
sub-stream ``SeedSequence(seed, spawn_key=(c,))``, so results do not depend
on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import VSpec, WindowSpec
from .engine import NoiseBank, RngNoise, SequentialModel

__all__ = ["CounterfactualDraws", "counterfactual_means", "chunk_sizes", "substream"]

ROWS_PER_CHUNK = 200_000


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def chunk_sizes(M: int, rows_per_replicate: int, rows_per_chunk: int = ROWS_PER_CHUNK) -> list[int]:
    per = max(1, rows_per_chunk // max(rows_per_replicate, 1))
    full, rest = divmod(M, per)
    return [per] * full + ([rest] if rest else [])


@dataclass
class CounterfactualDraws:
    """Simulated E[Y(t+1)] under each (t, regimen).

    ``chunk_sums[c, k, r]`` sums replicate means of chunk ``c`` for
    ``times[k]`` and regimen ``r``; ``chunk_counts[c]`` is its replicate
    count.  With a nonempty V, per-replicate rows are kept in ``rows``:
    ``rows[k] = (v, y)`` with ``v`` (M, q) and ``y`` (M, R).
    """

    times: tuple[int, ...]
    regimens: np.ndarray
    chunk_sums: np.ndarray
    chunk_counts: np.ndarray
    prewindow_lengths: dict[int, int]
    rows: list | None = None
    chunk_rows: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return int(self.chunk_counts.sum())

    def means(self) -> np.ndarray:
        """(len(times), R) Monte Carlo means."""
        return self.chunk_sums.sum(axis=0) / self.M


def _draw_chunk(model, window, regimens, Nc, rng, baseline, vspec, split, vidx):
    K = model.K
    R, s = regimens.shape
    times = window.targets
    sums = np.zeros((len(times), R))
    rows = [] if vidx else None
    if split:
        noise = NoiseBank.draw(rng, Nc, K + 2, model.n_channels)
        hist = model.new_history(Nc)
        if baseline is None:
            model.draw_baseline(hist, noise)
        else:
            hist.L[:, 0, :] = baseline[rng.integers(0, baseline.shape[0], size=Nc)]
        last_start = max(window.start(t) for t in times)
        model.forward(hist, 0, last_start, noise, outcomes=False, last=None)
        tiled = noise.tile(R)
        branch = hist.tile(R)
        forced = np.full((Nc * R, K + 1), -1, dtype=np.int64)
        window_codes = np.repeat(regimens, Nc, axis=0)
        dirty = None
        for k, t in enumerate(times):
            start = window.start(t)
            if dirty is not None:
                # undo the previous target's overwrites so the branch restarts from the base path
                branch.A[:, dirty:] = np.tile(hist.A[:, dirty:], (R, 1))
                branch.L[:, dirty + 1 :] = np.tile(hist.L[:, dirty + 1 :], (R, 1, 1))
            dirty = start
            forced[:] = -1
            forced[:, start : t + 1] = window_codes
            y = model.forward(branch, start, t + 1, tiled, forced=forced, outcomes=False, last="mean")
            y = y.reshape(R, Nc)
            sums[k] = y.sum(axis=1)
            if vidx:
                rows.append((_v_rows(hist, vidx, start), y.T.copy()))
        return sums, rows
    # independent draws for every (t, regimen): no shared pre-window segment
    for k, t in enumerate(times):
        start = window.start(t)
        ys, vs = [], None
        for r in range(R):
            noise = RngNoise(rng, Nc)
            hist = model.new_history(Nc)
            if baseline is None:
                model.draw_baseline(hist, noise)
            else:
                hist.L[:, 0, :] = baseline[rng.integers(0, baseline.shape[0], size=Nc)]
            forced = np.full((Nc, K + 1), -1, dtype=np.int64)
            forced[:, start : t + 1] = regimens[r]
            model.forward(hist, 0, start, noise, outcomes=False, last=None)
            if vidx and vs is None:
                vs = _v_rows(hist, vidx, start)
            y = model.forward(hist, start, t + 1, noise, forced=forced, outcomes=False, last="mean")
            sums[k, r] = y.sum()
            ys.append(y)
        if vidx:
            rows.append((vs, np.column_stack(ys)))
    return sums, rows


def _v_rows(hist, vidx, start):
    return np.column_stack([hist.L[:, 0 if base else start, c] for c, base in vidx])


def counterfactual_means(
    model: SequentialModel,
    window: WindowSpec,
    regimens: np.ndarray,
    M: int,
    seed: int,
    baseline: np.ndarray | None = None,
    vspec: VSpec | None = None,
    split: bool = True,
    threads: int = 1,
    rows_per_chunk: int = ROWS_PER_CHUNK,
) -> CounterfactualDraws:
    """Simulate ``M`` replicates of every (t, regimen) counterfactual mean.

    ``baseline`` (n, p) is an empirical L(0) sample to resample from; when
    ``None`` the model's parametric baseline law is used.  ``split=False``
    gives the plain implementation with independent draws per (t, regimen).
    """
    regimens = np.asarray(regimens, dtype=np.int64)
    window.validate(model.K)
    vspec = vspec or VSpec()
    vidx = [
        (model.covariate_names.index(a.name), a.anchor == "study_baseline") for a in vspec.atoms
    ]
    sizes = chunk_sizes(M, regimens.shape[0], rows_per_chunk)

    def task(c):
        return _draw_chunk(model, window, regimens, sizes[c], substream(seed, c), baseline, vspec, split, vidx)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(len(sizes))))
    else:
        results = [task(c) for c in range(len(sizes))]
    rows = None
    if vidx:
        rows = []
        for k in range(len(window.targets)):
            rows.append(
                (
                    np.vstack([res[1][k][0] for res in results]),
                    np.vstack([res[1][k][1] for res in results]),
                )
            )
    return CounterfactualDraws(
        times=window.targets,
        regimens=regimens,
        chunk_sums=np.stack([res[0] for res in results]),
        chunk_counts=np.array(sizes),
        prewindow_lengths={t: window.start(t) for t in window.targets},
        rows=rows,
        chunk_rows=[res[1] for res in results] if vidx else [],
    )
