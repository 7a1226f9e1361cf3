"""Integer displacement priors by regularized dynamic programming.

Each scan line is solved exactly over joint (axial, lateral) integer states
with an L1 transition penalty between consecutive samples and an optional L1
coupling to the previous line's solution.  Out-of-frame lookups clamp to the
frame edge and pay a fixed penalty so paths do not stick to the border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import DisplacementField, RfFrame, STAGE_INTEGER_PRIOR

ABSOLUTE = "absolute"
SQUARED = "squared"


@dataclass
class DpConfig:
    axial_range: int | None = None  # None -> ceil(0.05 m)
    lateral_range: int = 2
    smoothness: float | None = None  # None -> 0.2 * median |I1|
    data_cost: str = ABSOLUTE
    decimation: int = 1

    def validate(self):
        if self.axial_range is not None and self.axial_range < 0:
            raise ValueError("axial search range must be >= 0")
        if self.lateral_range < 0:
            raise ValueError("lateral search range must be >= 0")
        if self.smoothness is not None and self.smoothness < 0:
            raise ValueError("smoothness weight must be >= 0")
        if self.data_cost not in (ABSOLUTE, SQUARED):
            raise ValueError(f"unknown data cost {self.data_cost!r}")
        if self.decimation < 1:
            raise ValueError("row decimation must be >= 1")


def _samples(frame) -> np.ndarray:
    return frame.samples if isinstance(frame, RfFrame) else np.asarray(frame, dtype=np.float64)


def resolve_config(cfg: DpConfig, i1) -> tuple[int, int, float]:
    """Concrete (axial range, lateral range, smoothness weight) for a frame."""
    cfg.validate()
    i1 = _samples(i1)
    ra = cfg.axial_range if cfg.axial_range is not None else math.ceil(0.05 * i1.shape[0])
    w = cfg.smoothness if cfg.smoothness is not None else 0.2 * float(np.median(np.abs(i1)))
    return int(ra), int(cfg.lateral_range), float(w)


def _data_table(i1, i2, j, rows, das, dls, data_cost, block=1):
    """Per-sample data costs over all states, with the out-of-bounds penalty.

    With block > 1 each row of the table aggregates the costs of `block`
    consecutive samples starting at its row index (the block-constant
    restriction of the full per-sample cost), which averages speckle noise
    out of decimated sweeps.
    """
    m, n = i2.shape
    if block > 1:
        expanded = (rows[:, None] + np.arange(block)[None, :]).ravel()
        expanded = np.minimum(expanded, m - 1)
        table = _data_table(i1, i2, j, expanded, das, dls, data_cost)
        return table.reshape(rows.size, block, das.size, dls.size).sum(axis=1)
    ii = rows[:, None] + das[None, :]
    iic = np.clip(ii, 0, m - 1)
    jj = j + dls
    jjc = np.clip(jj, 0, n - 1)
    oob = (ii != iic)[:, :, None] | (jj != jjc)[None, None, :]
    diff = i1[rows, j][:, None, None] - i2[iic[:, :, None], jjc[None, None, :]]
    raw = np.abs(diff) if data_cost == ABSOLUTE else diff * diff
    in_range = raw[~oob]
    penalty = 10.0 * float(np.median(in_range)) if in_range.size else 0.0
    return raw + penalty * oob


def _min_plus_l1(values: np.ndarray, weight: float) -> np.ndarray:
    """min over s' of values[s'] + weight * (|da-da'| + |dl-dl'|), separably."""
    out = values
    for axis in (0, 1):
        size = out.shape[axis]
        if size == 1:
            continue
        shape = [1, 1]
        shape[axis] = size
        idx = (weight * np.arange(size)).reshape(shape)
        fwd = np.minimum.accumulate(out - idx, axis=axis) + idx
        bwd = np.flip(np.minimum.accumulate(np.flip(out + idx, axis=axis), axis=axis), axis=axis) - idx
        out = np.minimum(fwd, bwd)
    return out


def dp_line(i1, i2, j: int, cfg: DpConfig, prior=None, rows: np.ndarray | None = None,
            block: int = 1):
    """Exact optimal integer (axial, lateral) path for scan line j.

    prior, when given, is a (axial, lateral) pair of integer arrays over the
    same rows; deviations from it are charged at the smoothness weight.
    Returns (axial path, lateral path, total cost).
    """
    i1 = _samples(i1)
    i2 = _samples(i2)
    ra, rl, w = resolve_config(cfg, i1)
    m = i1.shape[0]
    rows = np.arange(m) if rows is None else np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise ValueError("empty row set")
    das = np.arange(-ra, ra + 1)
    dls = np.arange(-rl, rl + 1)
    if das.size == 0 or dls.size == 0:
        raise ValueError("empty search state space")

    node = _data_table(i1, i2, j, rows, das, dls, cfg.data_cost, block=block)
    if prior is not None:
        a_prior, l_prior = prior
        node = node + w * (
            np.abs(das[None, :, None] - np.asarray(a_prior)[:, None, None])
            + np.abs(dls[None, None, :] - np.asarray(l_prior)[:, None, None])
        )

    k_count = rows.size
    best = np.empty((k_count, das.size, dls.size))
    best[0] = node[0]
    for k in range(1, k_count):
        best[k] = node[k] + _min_plus_l1(best[k - 1], w)

    ai, li = np.unravel_index(np.argmin(best[-1]), best[-1].shape)
    total = float(best[-1][ai, li])
    a_path = np.empty(k_count, dtype=np.int64)
    l_path = np.empty(k_count, dtype=np.int64)
    a_path[-1], l_path[-1] = das[ai], dls[li]
    for k in range(k_count - 1, 0, -1):
        trans = w * (np.abs(das - das[ai])[:, None] + np.abs(dls - dls[li])[None, :])
        ai, li = np.unravel_index(np.argmin(best[k - 1] + trans), trans.shape)
        a_path[k - 1], l_path[k - 1] = das[ai], dls[li]
    return a_path, l_path, total


def path_cost(i1, i2, j, cfg, a_path, l_path, prior=None, rows=None) -> float:
    """Cost of an explicit state path, recomputed from the definition."""
    i1 = _samples(i1)
    i2 = _samples(i2)
    ra, rl, w = resolve_config(cfg, i1)
    rows = np.arange(i1.shape[0]) if rows is None else np.asarray(rows, dtype=np.intp)
    das = np.arange(-ra, ra + 1)
    dls = np.arange(-rl, rl + 1)
    node = _data_table(i1, i2, j, rows, das, dls, cfg.data_cost)
    ai = np.searchsorted(das, a_path)
    li = np.searchsorted(dls, l_path)
    total = float(node[np.arange(rows.size), ai, li].sum())
    total += w * float(np.sum(np.abs(np.diff(a_path)) + np.abs(np.diff(l_path))))
    if prior is not None:
        total += w * float(np.sum(np.abs(a_path - prior[0]) + np.abs(l_path - prior[1])))
    return total


def dp_estimate(i1: RfFrame, i2: RfFrame, cfg: DpConfig) -> DisplacementField:
    """Integer prior for the whole frame, sweeping lines left to right.

    Each line is conditioned on the previous line's solution; with row
    decimation > 1 the recursion runs on every r-th sample, each node
    aggregating its block's data costs, and fills the remaining rows by
    nearest-row replication.
    """
    a1, a2 = _samples(i1), _samples(i2)
    if a1.shape != a2.shape:
        raise ValueError(f"frame dims differ: {a1.shape} vs {a2.shape}")
    cfg.validate()
    m, n = a1.shape
    rows = np.arange(0, m, cfg.decimation)
    nearest = np.clip(np.round(np.arange(m) / cfg.decimation).astype(np.intp), 0, rows.size - 1)

    axial = np.zeros((m, n))
    lateral = np.zeros((m, n))
    prior = None
    for j in range(n):
        a_path, l_path, _ = dp_line(a1, a2, j, cfg, prior=prior, rows=rows,
                                    block=cfg.decimation)
        prior = (a_path, l_path)
        axial[:, j] = a_path[nearest]
        lateral[:, j] = l_path[nearest]
    return DisplacementField(axial, lateral, stage=STAGE_INTEGER_PRIOR)
