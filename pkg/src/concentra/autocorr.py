"""Spatial weights and Moran's I testing of regression residuals.

Weight schemes: k-nearest-neighbor centroids (asymmetry allowed, ties to
the smaller region id), queen contiguity (polygons sharing any boundary
point), and inverse distance with an optional cutoff.  Rows can be
standardized to sum to one.  Isolated regions (no in- or out-links) are
dropped from the statistic with a warning.

The significance test is a two-sided permutation test with the +1
correction; a normal-approximation p-value under the randomization
assumption is reported alongside.  Permutations draw from per-index
substreams of the given seed, so results do not depend on evaluation
order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError
from .geo import Region, _GridIndex, distance_matrix
from .rng import substream

SCHEME_KNN = "knn"
SCHEME_QUEEN = "queen-contiguity"
SCHEME_IDIST = "inverse-distance"
SCHEMES = (SCHEME_KNN, SCHEME_QUEEN, SCHEME_IDIST)

# accepted aliases for CLI flags / config files
SCHEME_ALIASES = {
    "knn": SCHEME_KNN,
    "queen": SCHEME_QUEEN,
    "queen-contiguity": SCHEME_QUEEN,
    "idist": SCHEME_IDIST,
    "inverse-distance": SCHEME_IDIST,
}


@dataclass
class SpatialWeights:
    """Sparse nonnegative spatial weights with zero diagonal."""

    n: int
    rows: np.ndarray  # int indices i
    cols: np.ndarray  # int indices j
    vals: np.ndarray  # weights
    row_standardized: bool
    scheme: str
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if np.any(self.rows == self.cols):
            raise ValueError("diagonal weights must be zero (omit them)")
        if np.any(self.vals < 0):
            raise ValueError("negative spatial weights")

    @classmethod
    def from_triplets(
        cls,
        n: int,
        triplets: Sequence[tuple[int, int, float]],
        row_standardize: bool = False,
        scheme: str = "custom",
        ids: tuple[str, ...] | None = None,
    ) -> "SpatialWeights":
        trip = [(i, j, w) for i, j, w in triplets if w != 0.0]
        rows = np.array([t[0] for t in trip], dtype=np.int64)
        cols = np.array([t[1] for t in trip], dtype=np.int64)
        vals = np.array([t[2] for t in trip], dtype=float)
        return cls.from_arrays(n, rows, cols, vals, row_standardize, scheme, ids)

    @classmethod
    def from_arrays(
        cls,
        n: int,
        rows: np.ndarray,
        cols: np.ndarray,
        vals: np.ndarray,
        row_standardize: bool = False,
        scheme: str = "custom",
        ids: tuple[str, ...] | None = None,
    ) -> "SpatialWeights":
        keep = vals != 0.0
        w = cls(
            n,
            np.asarray(rows, dtype=np.int64)[keep],
            np.asarray(cols, dtype=np.int64)[keep],
            np.asarray(vals, dtype=float)[keep],
            row_standardized=False,
            scheme=scheme,
            ids=ids,
        )
        return w.standardized() if row_standardize else w

    def row_sums(self) -> np.ndarray:
        s = np.zeros(self.n)
        np.add.at(s, self.rows, self.vals)
        return s

    def col_sums(self) -> np.ndarray:
        s = np.zeros(self.n)
        np.add.at(s, self.cols, self.vals)
        return s

    def standardized(self) -> "SpatialWeights":
        sums = self.row_sums()
        scale = np.where(sums > 0, sums, 1.0)
        return SpatialWeights(
            n=self.n,
            rows=self.rows,
            cols=self.cols,
            vals=self.vals / scale[self.rows],
            row_standardized=True,
            scheme=self.scheme,
            ids=self.ids,
        )

    def isolated_indices(self) -> np.ndarray:
        return np.nonzero((self.row_sums() == 0) & (self.col_sums() == 0))[0]

    def total(self) -> float:
        return float(self.vals.sum())

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        m[self.rows, self.cols] = self.vals
        return m


def build_weights(
    regions: Sequence[Region],
    scheme: str,
    k: int = 8,
    cutoff: float | None = None,
    row_standardize: bool = True,
) -> SpatialWeights:
    """Construct spatial weights over the given regions (order preserved)."""
    scheme = SCHEME_ALIASES.get(scheme, scheme)
    n = len(regions)
    if n < 3:
        raise DataError("need at least 3 regions for spatial weights")
    ids = tuple(r.id for r in regions)
    if scheme == SCHEME_KNN:
        if not 1 <= k <= n - 1:
            raise ValueError(f"knn k={k} outside [1, {n - 1}]")
        arrays = _knn_arrays(regions, k)
    elif scheme == SCHEME_QUEEN:
        arrays = _queen_arrays(regions)
    elif scheme == SCHEME_IDIST:
        arrays = _idist_arrays(regions, cutoff)
    else:
        raise ValueError(f"unknown weights scheme {scheme!r}")
    w = SpatialWeights.from_arrays(
        n, *arrays, row_standardize=row_standardize, scheme=scheme, ids=ids
    )
    isolated = w.isolated_indices()
    if isolated.size:
        names = [ids[i] for i in isolated[:5]]
        warnings.warn(
            f"{isolated.size} isolated region(s) under {scheme} weights "
            f"(e.g. {names}); they are excluded from Moran's I",
            stacklevel=2,
        )
    return w


def _centroid_distances(regions: Sequence[Region]) -> np.ndarray:
    coords = np.array([[r.centroid.x, r.centroid.y] for r in regions])
    return distance_matrix(coords, regions[0].crs_mode)


def _knn_arrays(regions: Sequence[Region], k: int):
    d = _centroid_distances(regions)
    n = len(regions)
    ids = [r.id for r in regions]
    id_rank = np.argsort(np.argsort(ids))  # lexicographic rank per index
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = np.empty(n * k, dtype=np.int64)
    for i in range(n):
        order = np.lexsort((id_rank, d[i]))
        cols[i * k : (i + 1) * k] = order[order != i][:k]
    return rows, cols, np.ones(n * k)


def _segments(region: Region):
    for ring in region.rings:
        for a, b in zip(ring[:-1], ring[1:]):
            yield a, b


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_seg(px, py, ax, ay, bx, by) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_touch(p1, p2, p3, p4) -> bool:
    """True when segments p1p2 and p3p4 share at least one point."""
    o1 = _orient(*p1, *p2, *p3)
    o2 = _orient(*p1, *p2, *p4)
    o3 = _orient(*p3, *p4, *p1)
    o4 = _orient(*p3, *p4, *p2)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return True
    if o1 == 0 and _on_seg(*p3, *p1, *p2):
        return True
    if o2 == 0 and _on_seg(*p4, *p1, *p2):
        return True
    if o3 == 0 and _on_seg(*p1, *p3, *p4):
        return True
    if o4 == 0 and _on_seg(*p2, *p3, *p4):
        return True
    return False


def _queen_arrays(regions: Sequence[Region]):
    index = _GridIndex(regions)
    pairs = []
    for i, j in index.bbox_pairs():
        touch = any(
            _segments_touch(a1, a2, b1, b2)
            for a1, a2 in _segments(regions[i])
            for b1, b2 in _segments(regions[j])
        )
        if touch:
            pairs.append((i, j))
            pairs.append((j, i))
    rows = np.array([p[0] for p in pairs], dtype=np.int64)
    cols = np.array([p[1] for p in pairs], dtype=np.int64)
    return rows, cols, np.ones(len(pairs))


def _idist_arrays(regions: Sequence[Region], cutoff: float | None):
    d = _centroid_distances(regions)
    n = len(regions)
    off_diag = ~np.eye(n, dtype=bool)
    zero_mask = off_diag & (d == 0.0)
    if zero_mask.any():
        positive = d[d > 0]
        if positive.size == 0:
            raise NumericError("all centroids coincide; inverse-distance undefined")
        warnings.warn(
            f"{int(zero_mask.sum())} coincident centroid pair(s); inverse-distance "
            "weight floored at the nearest positive distance",
            stacklevel=3,
        )
        d[zero_mask] = float(positive.min())
    mask = off_diag if cutoff is None else off_diag & (d <= cutoff)
    rows, cols = np.nonzero(mask)
    return rows.astype(np.int64), cols.astype(np.int64), 1.0 / d[rows, cols]


# ---------------------------------------------------------------------------
# Moran's I


@dataclass(frozen=True)
class MoranResult:
    i_statistic: float
    expected_i: float
    p_value: float
    p_normal: float
    n_permutations: int
    seed: int
    n_used: int


def _active_subset(values: np.ndarray, weights: SpatialWeights):
    """Drop isolated regions and reindex the triplets accordingly."""
    isolated = weights.isolated_indices()
    if isolated.size == 0:
        return values, weights.rows, weights.cols, weights.vals, weights.n
    keep = np.setdiff1d(np.arange(weights.n), isolated)
    remap = -np.ones(weights.n, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    mask = (remap[weights.rows] >= 0) & (remap[weights.cols] >= 0)
    return (
        values[keep],
        remap[weights.rows[mask]],
        remap[weights.cols[mask]],
        weights.vals[mask],
        keep.size,
    )


def morans_i(values: Sequence[float], weights: SpatialWeights) -> float:
    """Global Moran's I: (n / sum w) * (z' W z) / (z' z), z = centered values."""
    v = np.asarray(values, dtype=float)
    if v.size != weights.n:
        raise ValueError("values length must match weights")
    v, rows, cols, vals, n = _active_subset(v, weights)
    s0 = float(vals.sum())
    if s0 <= 0:
        raise DataError("spatial weights sum to zero")
    z = v - v.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise NumericError("Moran's I undefined for zero-variance values")
    num = float(np.sum(vals * z[rows] * z[cols]))
    return (n / s0) * (num / denom)


def _normal_approx_p(values: np.ndarray, rows, cols, vals, n: int, i_obs: float) -> float:
    """Two-sided p under the randomization-assumption normal approximation."""
    s0 = float(vals.sum())
    # S1 = 1/2 sum (w_ij + w_ji)^2 = sum w^2 + sum w_ij * w_ji; the
    # transpose partner of each entry is found by key search (entries are
    # unique (i, j) pairs by construction).
    keys = rows * n + cols
    order = np.argsort(keys)
    keys_sorted = keys[order]
    tkeys = cols * n + rows
    pos = np.searchsorted(keys_sorted, tkeys)
    in_range = pos < keys_sorted.size
    match = np.zeros(vals.size, dtype=bool)
    match[in_range] = keys_sorted[pos[in_range]] == tkeys[in_range]
    partner = np.zeros(vals.size)
    partner[match] = vals[order[pos[match]]]
    s1 = float((vals**2).sum()) + float((vals * partner).sum())
    row_tot = np.zeros(n)
    col_tot = np.zeros(n)
    np.add.at(row_tot, rows, vals)
    np.add.at(col_tot, cols, vals)
    s2 = float(((row_tot + col_tot) ** 2).sum())
    e_i = -1.0 / (n - 1)
    z = values - values.mean()
    m2 = float((z**2).mean())
    m4 = float((z**4).mean())
    b2 = m4 / (m2**2) if m2 > 0 else 0.0
    a = n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 * s0)
    b = b2 * ((n * n - n) * s1 - 2 * n * s2 + 6 * s0 * s0)
    c = (n - 1) * (n - 2) * (n - 3) * s0 * s0
    if c <= 0:
        return 1.0
    var_i = (a - b) / c - e_i * e_i
    if var_i <= 0:
        return 1.0
    zscore = (i_obs - e_i) / math.sqrt(var_i)
    return math.erfc(abs(zscore) / math.sqrt(2.0))


def morans_p(
    values: Sequence[float],
    weights: SpatialWeights,
    n_perm: int = 999,
    seed: int = 0,
) -> MoranResult:
    """Permutation test of Moran's I (two-sided, +1 corrected).

    Permutation k draws from substream (seed, "moran.permutations", k),
    so the p-value is reproducible and independent of evaluation order.
    """
    v = np.asarray(values, dtype=float)
    if v.size != weights.n:
        raise ValueError("values length must match weights")
    v_act, rows, cols, vals, n = _active_subset(v, weights)
    s0 = float(vals.sum())
    if s0 <= 0:
        raise DataError("spatial weights sum to zero")
    z = v_act - v_act.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise NumericError("Moran's I undefined for zero-variance values")
    i_obs = (n / s0) * float(np.sum(vals * z[rows] * z[cols])) / denom
    e_i = -1.0 / (n - 1)

    # batched permutations: columns of the matrix are permuted centered values
    perm_mat = np.empty((n, n_perm))
    for k in range(n_perm):
        rng = substream(seed, "moran.permutations", k)
        perm_mat[:, k] = z[rng.permutation(n)]
    dense_frac = vals.size / float(n * n)
    if dense_frac >= 0.05:
        w_dense = np.zeros((n, n))
        w_dense[rows, cols] = vals
        quad = np.einsum("ik,ik->k", perm_mat, w_dense @ perm_mat)
    else:
        quad = np.zeros(n_perm)
        step = max(1, int(2e6 // max(vals.size, 1)))
        for start in range(0, n_perm, step):
            block = slice(start, min(start + step, n_perm))
            quad[block] = (
                vals[:, None] * perm_mat[rows, block] * perm_mat[cols, block]
            ).sum(axis=0)
    i_perm = (n / s0) * quad / denom
    extreme = int(np.sum(np.abs(i_perm - e_i) >= abs(i_obs - e_i) - 1e-15))
    p_value = (1 + extreme) / (n_perm + 1)
    p_normal = _normal_approx_p(v_act, rows, cols, vals, n, i_obs)
    return MoranResult(
        i_statistic=i_obs,
        expected_i=e_i,
        p_value=p_value,
        p_normal=p_normal,
        n_permutations=n_perm,
        seed=seed,
        n_used=n,
    )


# ---------------------------------------------------------------------------
# Artifact IO


def write_weights_csv(weights: SpatialWeights) -> bytes:
    """Sparse triplet export (i, j, omega), indices in region order."""
    order = np.lexsort((weights.cols, weights.rows))
    rows = weights.rows[order].tolist()
    cols = weights.cols[order].tolist()
    vals = weights.vals[order].tolist()
    lines = ["i,j,omega"]
    lines.extend(f"{i},{j},{w:.12g}" for i, j, w in zip(rows, cols, vals))
    lines.append("")
    return "\n".join(lines).encode("utf-8")


def read_weights_csv(
    source: bytes | str,
    n: int | None = None,
    row_standardized: bool = False,
    scheme: str = "imported",
) -> SpatialWeights:
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    reader = csv.DictReader(io.StringIO(text))
    triplets = []
    for row in reader:
        triplets.append((int(row["i"]), int(row["j"]), float(row["omega"])))
    if n is None:
        n = 1 + max(max(i for i, _, _ in triplets), max(j for _, j, _ in triplets))
    w = SpatialWeights.from_triplets(n, triplets, scheme=scheme)
    w.row_standardized = row_standardized
    return w


def moran_result_json(result: MoranResult) -> bytes:
    return json.dumps(
        {
            "i_statistic": round(result.i_statistic, 12),
            "expected_i": round(result.expected_i, 12),
            "p_value": round(result.p_value, 12),
            "p_normal": round(result.p_normal, 12),
            "n_permutations": result.n_permutations,
            "seed": result.seed,
            "n_used": result.n_used,
        },
        sort_keys=True,
        indent=1,
    ).encode("utf-8")
