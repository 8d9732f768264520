"""Shared discretised frequency tables over (X, Z-cell, W-cell, cluster).

Every plug-in quantity (effects, transport residuals, bounds) is derived
from one count array ``N[x, zw, c]`` where ``zw`` indexes the joint
(Z-cell, W-cell) combinations observed in the data. Keeping a single layout
is what makes the plug-in decomposition hold to rounding error and the
bound checks compare like with like.

Smoothing policy: a conditional whose conditioning cell holds fewer than
``SMOOTHING_THRESHOLD`` rows is Laplace-smoothed with ``SMOOTHING_ALPHA``;
such cells are counted in ``flagged``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SMOOTHING_ALPHA, SMOOTHING_THRESHOLD, Dataset, joint_cells


@dataclass(frozen=True)
class CellLayout:
    """Row-to-cell mapping, fixed once per (dataset, labels)."""

    x: np.ndarray  # 0 = x0, 1 = x1
    zw: np.ndarray  # joint (z, w) cell per row
    zw_to_z: np.ndarray  # z cell of each zw cell
    c: np.ndarray  # cluster index 0..K-1
    K: int
    z_keys: list
    w_keys: list
    zw_w: np.ndarray  # w cell of each zw cell

    @property
    def nz(self) -> int:
        return len(self.z_keys)

    @property
    def nzw(self) -> int:
        return len(self.zw_to_z)

    def counts(self) -> np.ndarray:
        flat = (self.x * self.nzw + self.zw) * self.K + self.c
        return np.bincount(flat, minlength=2 * self.nzw * self.K).reshape(2, self.nzw, self.K).astype(float)


def build_layout(d: Dataset, labels: np.ndarray | None = None, K: int | None = None,
                 bins: int | None = None) -> CellLayout:
    """Cells for ``d`` with cluster ``labels`` in 1..K (or a single dummy cluster)."""
    s = d.schema
    z_ids, z_keys = joint_cells(d, s.confounders, bins)
    w_ids, w_keys = joint_cells(d, s.mediators, bins)
    if d.n:
        pairs, zw = np.unique(np.stack([z_ids, w_ids], axis=1), axis=0, return_inverse=True)
        zw = zw.reshape(-1)
    else:
        pairs, zw = np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    if labels is None:
        c = np.zeros(d.n, dtype=np.int64)
        K = 1
    else:
        labels = np.asarray(labels, dtype=np.int64)
        K = int(K if K is not None else labels.max())
        if labels.shape[0] != d.n:
            raise ValueError("assignment length differs from dataset size")
        if labels.size and (labels.min() < 1 or labels.max() > K):
            raise ValueError(f"cluster labels must lie in 1..{K}")
        c = labels - 1
    return CellLayout(
        x=np.asarray(d.x, dtype=np.int64), zw=zw.astype(np.int64), zw_to_z=pairs[:, 0].astype(np.int64),
        c=c, K=K, z_keys=list(z_keys), w_keys=list(w_keys), zw_w=pairs[:, 1].astype(np.int64),
    )


@dataclass(frozen=True)
class Tables:
    """Plug-in probability tables computed from one count array."""

    p_c_xzw: np.ndarray  # (2, nzw, K)
    p_w_xz: np.ndarray  # (2, nzw): P(w | x, z) for the zw cell's w
    p_z: np.ndarray  # (nz,)
    p_z_x: np.ndarray  # (2, nz)
    p_c_xz: np.ndarray  # (2, nz, K)
    p_c_x: np.ndarray  # (2, K), unsmoothed
    n_x: np.ndarray  # (2,)
    zw_to_z: np.ndarray
    flagged: int

    @property
    def nz(self) -> int:
        return self.p_z.shape[0]

    def delta_w(self) -> np.ndarray:
        """Per z-cell L1 distance between P(W | x1, z) and P(W | x0, z)."""
        diff = np.abs(self.p_w_xz[1] - self.p_w_xz[0])
        return np.bincount(self.zw_to_z, weights=diff, minlength=self.nz)

    def delta_z(self) -> float:
        return float(np.abs(self.p_z_x[1] - self.p_z_x[0]).sum())


def tables_from_counts(N: np.ndarray, zw_to_z: np.ndarray, nz: int,
                       alpha: float = SMOOTHING_ALPHA, threshold: int = SMOOTHING_THRESHOLD) -> Tables:
    """Probability tables from ``N[x, zw, c]`` under the smoothing policy.

    The w-level set of each z cell is the set of zw cells in the layout, so
    a resample that misses a cell still smooths over the same support.
    """
    K = N.shape[2]
    n_xzw = N.sum(axis=2)
    small_xzw = n_xzw < threshold
    a = np.where(small_xzw, alpha, 0.0)
    p_c_xzw = (N + a[..., None]) / (n_xzw + a * K)[..., None]

    n_xz = np.stack([np.bincount(zw_to_z, weights=n_xzw[x], minlength=nz) for x in (0, 1)])
    m_z = np.bincount(zw_to_z, minlength=nz).astype(float)
    small_xz = n_xz < threshold
    a_xz = np.where(small_xz, alpha, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_w_xz = (n_xzw + a_xz[:, zw_to_z]) / (n_xz + a_xz * m_z)[:, zw_to_z]

    N_xzc = np.stack([
        np.stack([np.bincount(zw_to_z, weights=N[x, :, j], minlength=nz) for j in range(K)], axis=1)
        for x in (0, 1)
    ])
    p_c_xz = (N_xzc + a_xz[..., None]) / (n_xz + a_xz * K)[..., None]

    n_x = n_xz.sum(axis=1)
    n = n_x.sum()
    p_z = n_xz.sum(axis=0) / n if n else np.zeros(nz)
    small_x = n_x < threshold
    a_x = np.where(small_x, alpha, 0.0)
    p_z_x = (n_xz + a_x[:, None]) / (n_x + a_x * nz)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        p_c_x = N.sum(axis=1) / n_x[:, None]
    flagged = int(small_xzw.sum() + small_xz.sum())
    return Tables(p_c_xzw, p_w_xz, p_z, p_z_x, p_c_xz, p_c_x, n_x, zw_to_z, flagged)


def build_tables(layout: CellLayout, N: np.ndarray | None = None) -> Tables:
    return tables_from_counts(layout.counts() if N is None else N, layout.zw_to_z, layout.nz)


# --- plug-in effect functionals (vectorised over clusters) ---------------


def tv(t: Tables) -> np.ndarray:
    if np.any(t.n_x == 0):
        raise ValueError("total variation needs both protected groups non-empty")
    return t.p_c_x[1] - t.p_c_x[0]


def nde(t: Tables) -> np.ndarray:
    """sum_{z,w} [P(c|x1,z,w) - P(c|x0,z,w)] P(w|x0,z) P(z)."""
    weight = t.p_w_xz[0] * t.p_z[t.zw_to_z]
    return ((t.p_c_xzw[1] - t.p_c_xzw[0]) * weight[:, None]).sum(axis=0)


def nie(t: Tables) -> np.ndarray:
    """sum_{z,w} P(c|x0,z,w) [P(w|x1,z) - P(w|x0,z)] P(z)  (the x0 -> x1 order)."""
    weight = (t.p_w_xz[1] - t.p_w_xz[0]) * t.p_z[t.zw_to_z]
    return (t.p_c_xzw[0] * weight[:, None]).sum(axis=0)


def nie_reverse(t: Tables) -> np.ndarray:
    """sum_{z,w} P(c|x1,z,w) [P(w|x0,z) - P(w|x1,z)] P(z)  (the x1 -> x0 order)."""
    weight = (t.p_w_xz[0] - t.p_w_xz[1]) * t.p_z[t.zw_to_z]
    return (t.p_c_xzw[1] * weight[:, None]).sum(axis=0)


def exp_se(t: Tables) -> np.ndarray:
    """[P(c|x1) - P(c_{x1})] - [P(c|x0) - P(c_{x0})] expanded over z cells."""
    d1 = (t.p_z_x[1] - t.p_z)[:, None]
    d0 = (t.p_z_x[0] - t.p_z)[:, None]
    return (t.p_c_xz[1] * d1 - t.p_c_xz[0] * d0).sum(axis=0)


FUNCTIONALS = {"tv": tv, "nde": nde, "nie": nie, "nie_reverse": nie_reverse, "exp_se": exp_se}
