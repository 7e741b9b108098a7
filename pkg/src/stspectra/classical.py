"""Classical first- and second-order summaries on the unit square.

First order: Gaussian kernel intensity estimators with per-event
edge normalisers evaluated on the same cell grid as the surface, so the
estimated mass equals the event count by construction.  Spatial,
temporal, separable product and full non-separable variants share that
normalisation.

Second order: inhomogeneous pair correlation and cross-type cumulative
second-moment (K) estimators with an Epanechnikov ring kernel in space.
Time is an integer-step axis here, so the continuous temporal weights
are replaced by discretely calibrated ones:

* K uses bin-overlap weights w_t(L) = |[L-1/2, L+1/2] ∩ [-t, t]|, whose
  total over integer lags is exactly 2t;
* the pair correlation uses a lag kernel renormalised over the integer
  lags, so its weights always total 2 regardless of where the target
  lag t falls relative to the step boundaries.

Both use left-member border correction: the first member of each pair
is restricted to the spatially and temporally eroded window and the sum
is normalised by the eroded measure, which makes the Poisson
expectation of K exactly 2*pi*r^2*t.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .ingest import Component, MultiPattern

__all__ = [
    "CurveEstimate",
    "IntensitySurface",
    "TemporalIntensity",
    "SeparableIntensity",
    "NonSeparableIntensity",
    "scott_bandwidths",
    "estimate_spatial_intensity",
    "estimate_temporal_intensity",
    "estimate_intensity",
    "estimate_pair_correlation",
    "estimate_k",
    "mark_weighted_k",
    "mark_permutation_envelope",
    "poisson_k",
]

DEFAULT_CELLS = 64
_PAIR_BLOCK = 2048


# ---------------------------------------------------------------------------
# sources


def _source_arrays(source) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None, int]:
    """Pooled coordinate arrays (x, y, t, marks, T) of a pattern or component."""
    if isinstance(source, MultiPattern):
        if not source.window.is_unit_square:
            raise ValidationError("estimators expect the unit square; rescale first")
        return source.x, source.y, source.t, source.marks, source.T
    if isinstance(source, Component):
        if not source.window.is_unit_square:
            raise ValidationError("estimators expect the unit square; rescale first")
        return source.x, source.y, source.t, source.marks, source.T
    raise ValidationError("source must be a MultiPattern or a Component")


def scott_bandwidths(source) -> tuple[float, float]:
    """Rule-of-thumb spatial and temporal bandwidths.

    eps = mean coordinate spread * n^(-1/6), delta = step spread * n^(-1/5);
    degenerate spreads require an explicit bandwidth."""
    x, y, t, _, _ = _source_arrays(source)
    n = x.size
    if n == 0:
        raise ValidationError("cannot pick bandwidths for an empty source")
    eps = 0.5 * (float(np.std(x)) + float(np.std(y))) * n ** (-1.0 / 6.0)
    delta = float(np.std(t)) * n ** (-1.0 / 5.0)
    return eps, delta


def stoyan_bandwidth(source) -> float:
    """Ring-kernel spatial bandwidth, 0.15 / sqrt(projected intensity).

    Much narrower than the intensity rule; ring kernels need the band to
    stay inside the smallest range of interest."""
    x, _, _, _, _ = _source_arrays(source)
    if x.size == 0:
        raise ValidationError("cannot pick bandwidths for an empty source")
    return 0.15 / float(np.sqrt(x.size))


# ---------------------------------------------------------------------------
# first order


@dataclass(frozen=True, eq=False)
class IntensitySurface:
    """Spatial intensity on a regular cell grid (events per unit area)."""

    x_centers: np.ndarray
    y_centers: np.ndarray
    values: np.ndarray
    bandwidth: float
    cell_area: float

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)


@dataclass(frozen=True, eq=False)
class TemporalIntensity:
    """Temporal intensity per integer step (events per step)."""

    steps: np.ndarray
    values: np.ndarray
    bandwidth: float

    def mass(self) -> float:
        return float(self.values.sum())


def _gauss_1d(centers: np.ndarray, points: np.ndarray, bw: float) -> np.ndarray:
    z = (centers[None, :] - points[:, None]) / bw
    return np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * bw)


def _check_bandwidth(bw: float, name: str) -> float:
    bw = float(bw)
    if not np.isfinite(bw) or bw <= 0:
        raise ValidationError(
            f"{name} bandwidth must be positive; degenerate coordinates need "
            "an explicit value"
        )
    return bw


def estimate_spatial_intensity(
    source, bandwidth: float | None = None, cells: int = DEFAULT_CELLS
) -> IntensitySurface:
    """Gaussian kernel surface with per-event edge normalisers.

    Each event's kernel is divided by its own mass over the cell grid,
    so the surface integrates to the event count on that grid."""
    x, y, _, _, _ = _source_arrays(source)
    if x.size == 0:
        raise ValidationError("cannot estimate intensity of an empty source")
    if cells < 2:
        raise ValidationError("need at least 2 cells per axis")
    if bandwidth is None:
        bandwidth = scott_bandwidths(source)[0]
    bw = _check_bandwidth(bandwidth, "spatial")
    step = 1.0 / cells
    centers = (np.arange(cells) + 0.5) * step
    kx = _gauss_1d(centers, x, bw)
    ky = _gauss_1d(centers, y, bw)
    norm = (kx.sum(axis=1) * step) * (ky.sum(axis=1) * step)
    if np.any(norm <= 0):
        raise ValidationError("kernel mass vanished on the grid; bandwidth too small")
    vals = (kx / norm[:, None]).T @ ky
    return IntensitySurface(
        x_centers=centers,
        y_centers=centers,
        values=vals,
        bandwidth=bw,
        cell_area=step * step,
    )


def estimate_temporal_intensity(source, bandwidth: float | None = None) -> TemporalIntensity:
    """One-dimensional analogue over the integer steps 1..T."""
    _, _, t, _, T = _source_arrays(source)
    if t.size == 0:
        raise ValidationError("cannot estimate intensity of an empty source")
    if bandwidth is None:
        bandwidth = scott_bandwidths(source)[1]
    bw = _check_bandwidth(bandwidth, "temporal")
    steps = np.arange(1, T + 1, dtype=float)
    kt = _gauss_1d(steps, t.astype(float), bw)
    norm = kt.sum(axis=1)
    if np.any(norm <= 0):
        raise ValidationError("kernel mass vanished on the steps; bandwidth too small")
    vals = (kt / norm[:, None]).sum(axis=0)
    return TemporalIntensity(steps=steps, values=vals, bandwidth=bw)


@dataclass(frozen=True, eq=False)
class SeparableIntensity:
    """Product intensity lambda(s, t) = lambda_1(s) * lambda_2(t) / n."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    T: int
    eps: float
    delta: float
    cells: int
    space_norm: np.ndarray
    time_norm: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size

    def _space_at(self, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
        pref = 1.0 / (2.0 * np.pi * self.eps * self.eps)
        out = np.zeros(qx.shape, dtype=float)
        for lo in range(0, self.n, _PAIR_BLOCK):
            sl = slice(lo, lo + _PAIR_BLOCK)
            dx = qx[..., None] - self.x[sl]
            dy = qy[..., None] - self.y[sl]
            k = pref * np.exp(-(dx * dx + dy * dy) / (2.0 * self.eps * self.eps))
            out += (k / self.space_norm[sl]).sum(axis=-1)
        return out

    def _time_at(self, qt: np.ndarray) -> np.ndarray:
        z = (qt[..., None] - self.t) / self.delta
        k = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * self.delta)
        return (k / self.time_norm).sum(axis=-1)

    def at(self, qx, qy, qt) -> np.ndarray:
        qx = np.asarray(qx, dtype=float)
        qy = np.asarray(qy, dtype=float)
        qt = np.asarray(qt, dtype=float)
        return self._space_at(qx, qy) * self._time_at(qt) / self.n

    __call__ = at

    def integral(self, cells: int | None = None) -> float:
        cells = self.cells if cells is None else cells
        step = 1.0 / cells
        centers = (np.arange(cells) + 0.5) * step
        gx, gy = np.meshgrid(centers, centers, indexing="ij")
        space = (self._space_at(gx.ravel(), gy.ravel()).sum()) * step * step
        time = self._time_at(np.arange(1, self.T + 1, dtype=float)).sum()
        return float(space * time / self.n)


@dataclass(frozen=True, eq=False)
class NonSeparableIntensity:
    """Full space-time kernel intensity without the product restriction."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    T: int
    eps: float
    delta: float
    cells: int
    space_norm: np.ndarray
    time_norm: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size

    def at(self, qx, qy, qt) -> np.ndarray:
        qx = np.asarray(qx, dtype=float)
        qy = np.asarray(qy, dtype=float)
        qt = np.asarray(qt, dtype=float)
        pref = 1.0 / (2.0 * np.pi * self.eps * self.eps)
        tpref = 1.0 / (np.sqrt(2.0 * np.pi) * self.delta)
        out = np.zeros(np.broadcast_shapes(qx.shape, qy.shape, qt.shape), dtype=float)
        denom = self.space_norm * self.time_norm
        for lo in range(0, self.n, _PAIR_BLOCK):
            sl = slice(lo, lo + _PAIR_BLOCK)
            dx = qx[..., None] - self.x[sl]
            dy = qy[..., None] - self.y[sl]
            dz = (qt[..., None] - self.t[sl]) / self.delta
            k = (
                pref
                * np.exp(-(dx * dx + dy * dy) / (2.0 * self.eps * self.eps))
                * tpref
                * np.exp(-0.5 * dz * dz)
            )
            out += (k / denom[sl]).sum(axis=-1)
        return out

    __call__ = at

    def integral(self, cells: int | None = None) -> float:
        cells = self.cells if cells is None else cells
        step = 1.0 / cells
        centers = (np.arange(cells) + 0.5) * step
        total = 0.0
        gx, gy = np.meshgrid(centers, centers, indexing="ij")
        for s in range(1, self.T + 1):
            qt = np.full(gx.size, float(s))
            total += self.at(gx.ravel(), gy.ravel(), qt).sum() * step * step
        return float(total)


def estimate_intensity(
    source,
    eps: float | None = None,
    delta: float | None = None,
    cells: int = DEFAULT_CELLS,
    separable: bool = True,
):
    """Space-time kernel intensity, separable product by default."""
    x, y, t, _, T = _source_arrays(source)
    if x.size == 0:
        raise ValidationError("cannot estimate intensity of an empty source")
    if eps is None or delta is None:
        se, sd = scott_bandwidths(source)
        eps = se if eps is None else eps
        delta = sd if delta is None else delta
    eps = _check_bandwidth(eps, "spatial")
    delta = _check_bandwidth(delta, "temporal")
    step = 1.0 / cells
    centers = (np.arange(cells) + 0.5) * step
    kx = _gauss_1d(centers, x, eps)
    ky = _gauss_1d(centers, y, eps)
    space_norm = (kx.sum(axis=1) * step) * (ky.sum(axis=1) * step)
    steps_ax = np.arange(1, T + 1, dtype=float)
    kt = _gauss_1d(steps_ax, t.astype(float), delta)
    time_norm = kt.sum(axis=1)
    if np.any(space_norm <= 0) or np.any(time_norm <= 0):
        raise ValidationError("kernel mass vanished on the grid; bandwidth too small")
    cls = SeparableIntensity if separable else NonSeparableIntensity
    return cls(
        x=x,
        y=y,
        t=t,
        T=T,
        eps=eps,
        delta=delta,
        cells=cells,
        space_norm=space_norm,
        time_norm=time_norm,
    )


# ---------------------------------------------------------------------------
# second order


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """A second-order summary on an (r, t) grid."""

    r_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = dc_field(default_factory=dict)

    def rows(self):
        for k, r in enumerate(self.r_grid):
            for l, t in enumerate(self.t_grid):
                yield float(r), float(t), float(self.values[k, l])


def poisson_k(r_grid: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    """Benchmark K of a homogeneous Poisson process: 2*pi*r^2*t."""
    r = np.asarray(r_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    return 2.0 * np.pi * np.multiply.outer(r * r, t)


def _epanechnikov(v: np.ndarray, h: float) -> np.ndarray:
    z = v / h
    out = 0.75 * (1.0 - z * z) / h
    return np.where(np.abs(z) < 1.0, out, 0.0)


def _overlap_table(t: float, T: int) -> np.ndarray:
    """Bin-overlap temporal weights w(L) = |[L-1/2, L+1/2] ∩ [-t, t]| for
    L = 0..T-1; their total over signed integer lags is exactly 2t."""
    lags = np.arange(T, dtype=float)
    lo = np.maximum(lags - 0.5, -t)
    hi = np.minimum(lags + 0.5, t)
    return np.maximum(hi - lo, 0.0)


def _ring_lag_table(t: float, delta: float, T: int) -> np.ndarray:
    """Discretely renormalised lag kernel for the pair correlation.

    kappa_t(L) = 2 * k_delta(|L| - t) / sum_{L' in Z} k_delta(|L'| - t);
    the signed-lag total is 2 whenever any integer lag is in support."""
    lags = np.arange(T, dtype=float)
    raw = _epanechnikov(lags - t, delta)
    total = raw[0] + 2.0 * raw[1:].sum()
    if total <= 0:
        return np.zeros(T)
    return 2.0 * raw / total


def _eroded_structure(r_support: float, dmax: int, T: int) -> tuple[float, int, float, float]:
    """(area, steps, spatial margin, first step) of the eroded domain."""
    side = 1.0 - 2.0 * r_support
    if side <= 0:
        raise DomainError(
            f"range {r_support:g} exceeds half the window; shrink the r grid"
        )
    lo, hi = 1 + dmax, T - dmax
    if lo > hi:
        raise DomainError(
            f"temporal range needs {dmax} steps of margin but T={T}; "
            "shrink the t grid"
        )
    return side * side, hi - lo + 1, r_support, float(lo)


def _border_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))


def _pair_curve_sums(
    first: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    second: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    r_grid: np.ndarray,
    t_grid: np.ndarray,
    T: int,
    spatial_mode: str,
    eps: float,
    temporal_tables: list[np.ndarray],
    dmaxes: list[int],
    supports: np.ndarray,
) -> np.ndarray:
    """Accumulate the border-corrected double sums for every (r, t).

    first = (x, y, t, weight, global index) of border-eligible candidates,
    second = (x, y, t, weight, global index) of all partners; weights fold
    the reciprocal intensities and any mark factors."""
    xi, yi, ti, wi, gi = first
    xj, yj, tj, wj, gj = second
    nr, nt = r_grid.size, t_grid.size
    sums = np.zeros((nr, nt))
    if xi.size == 0 or xj.size == 0:
        return sums
    bdist = _border_distance(xi, yi)
    for lo in range(0, xi.size, _PAIR_BLOCK):
        sl = slice(lo, min(lo + _PAIR_BLOCK, xi.size))
        dx = xi[sl, None] - xj[None, :]
        dy = yi[sl, None] - yj[None, :]
        dist = np.hypot(dx, dy)
        adt = np.abs(ti[sl, None] - tj[None, :])
        not_self = gi[sl, None] != gj[None, :]
        wpair = (wi[sl, None] * wj[None, :]) * not_self
        for k in range(nr):
            if spatial_mode == "indicator":
                sk = (dist <= r_grid[k]) * wpair
            else:
                sk = _epanechnikov(dist - r_grid[k], eps) * wpair
            row_ok = bdist[sl] >= supports[k]
            if not row_ok.any():
                continue
            for l in range(nt):
                table = temporal_tables[l]
                if not table.any():
                    continue
                dmax = dmaxes[l]
                t_ok = (ti[sl] >= 1 + dmax) & (ti[sl] <= T - dmax)
                mask = row_ok & t_ok
                if not mask.any():
                    continue
                tw = table[adt]
                sums[k, l] += float((sk * tw)[mask].sum())
    return sums


def _event_inv_intensity(
    x: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    type_id: np.ndarray | None,
    counts: np.ndarray | None,
    T: int,
    intensity,
) -> np.ndarray:
    """Reciprocal plug-in intensity per event.

    None means the homogeneous plug-in: count of the event's own
    component (or the pooled count) per unit area per step."""
    if intensity is None:
        if type_id is None or counts is None:
            lam = np.full(x.size, x.size / T)
        else:
            lam = counts[type_id - 1].astype(float) / T
    elif callable(intensity):
        if type_id is None:
            lam = np.asarray(intensity(x, y, t), dtype=float)
        else:
            lam = np.asarray(intensity(x, y, t, type_id), dtype=float)
    else:
        raise ValidationError("intensity must be None or a callable")
    if lam.shape != x.shape or np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise ValidationError("plug-in intensity must be finite and positive")
    return 1.0 / lam


def _check_r_grid(r_grid: np.ndarray, eps: float | None) -> np.ndarray:
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValidationError("r grid must be a non-empty 1-d array")
    if np.any(r <= 0):
        raise DomainError("r grid entries must be positive")
    if eps is not None and np.any(r <= eps):
        raise DomainError("r grid entries must exceed the ring bandwidth")
    return r


def _check_t_grid(t_grid: np.ndarray) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("t grid must be a non-empty 1-d array")
    if np.any(t < 0):
        raise DomainError("t grid entries must be non-negative")
    return t


def estimate_pair_correlation(
    source,
    r_grid: Sequence[float],
    t_grid: Sequence[float],
    eps: float | None = None,
    delta: float | None = None,
    intensity: Callable | None = None,
) -> CurveEstimate:
    """Kernel pair-correlation surface of a pattern or one component.

    Homogeneous Poisson inputs give values near 1; clustering shows up
    as an excess at small ranges.  The default plug-in intensity is the
    homogeneous one; pass a callable (x, y, t) -> rate for the
    inhomogeneous version."""
    x, y, t, _, T = _source_arrays(source)
    if x.size < 2:
        raise ValidationError("need at least two events")
    if eps is None:
        eps = stoyan_bandwidth(source)
    if delta is None:
        _, delta = scott_bandwidths(source)
    eps = _check_bandwidth(eps, "spatial")
    delta = _check_bandwidth(delta, "temporal")
    r = _check_r_grid(r_grid, eps)
    tg = _check_t_grid(t_grid)

    inv_lam = _event_inv_intensity(x, y, t, None, None, T, intensity)
    gidx = np.arange(x.size)
    tables = [_ring_lag_table(tv, delta, T) for tv in tg]
    dmaxes = [int(np.nonzero(tab)[0].max()) if tab.any() else 0 for tab in tables]
    supports = r + eps

    sums = _pair_curve_sums(
        (x, y, t, inv_lam, gidx),
        (x, y, t, inv_lam, gidx),
        r,
        tg,
        T,
        spatial_mode="kernel",
        eps=eps,
        temporal_tables=tables,
        dmaxes=dmaxes,
        supports=supports,
    )
    values = np.empty_like(sums)
    for k in range(r.size):
        for l in range(tg.size):
            area, steps, _, _ = _eroded_structure(supports[k], dmaxes[l], T)
            values[k, l] = sums[k, l] / (4.0 * np.pi * r[k] * area * steps)
    return CurveEstimate(
        r_grid=r,
        t_grid=tg,
        values=values,
        kind="pair_correlation",
        meta={"eps": eps, "delta": delta, "border": "first-member"},
    )


def _resolve_types(pattern: MultiPattern, spec) -> tuple[int, ...]:
    if spec is None:
        return tuple(range(1, pattern.d + 1))
    out = []
    for item in spec:
        if isinstance(item, str):
            if item not in pattern.labels:
                raise ValidationError(f"unknown component label {item!r}")
            out.append(pattern.labels.index(item) + 1)
        else:
            k = int(item)
            if not 1 <= k <= pattern.d:
                raise ValidationError(f"component index {k} out of range")
            out.append(k)
    if len(set(out)) != len(out):
        raise ValidationError("duplicate components in type set")
    return tuple(sorted(out))


def estimate_k(
    pattern: MultiPattern,
    r_grid: Sequence[float],
    t_grid: Sequence[float],
    C: Sequence | None = None,
    D: Sequence | None = None,
    intensity: Callable | None = None,
) -> CurveEstimate:
    """Cross-type cumulative second-moment estimator between type sets.

    Counts D-type partners within distance r and time lag band t of
    each border-eligible C-type event, weighted by reciprocal plug-in
    intensities and bin-overlap temporal weights, normalised by the set
    sizes and the eroded window measure.  Independent homogeneous
    components give values near 2*pi*r^2*t."""
    Cs = _resolve_types(pattern, C)
    Ds = _resolve_types(pattern, D)
    r = _check_r_grid(r_grid, None)
    tg = _check_t_grid(t_grid)
    T = pattern.T
    if not pattern.window.is_unit_square:
        raise ValidationError("estimators expect the unit square; rescale first")

    inv_lam = _event_inv_intensity(
        pattern.x,
        pattern.y,
        pattern.t,
        pattern.type_id,
        np.asarray(pattern.counts),
        T,
        intensity,
    )
    gidx = np.arange(pattern.n)
    mask_c = np.isin(pattern.type_id, Cs)
    mask_d = np.isin(pattern.type_id, Ds)
    first = (
        pattern.x[mask_c],
        pattern.y[mask_c],
        pattern.t[mask_c],
        inv_lam[mask_c],
        gidx[mask_c],
    )
    second = (
        pattern.x[mask_d],
        pattern.y[mask_d],
        pattern.t[mask_d],
        inv_lam[mask_d],
        gidx[mask_d],
    )
    tables = [_overlap_table(tv, T) for tv in tg]
    dmaxes = [int(np.nonzero(tab)[0].max()) if tab.any() else 0 for tab in tables]

    sums = _pair_curve_sums(
        first,
        second,
        r,
        tg,
        T,
        spatial_mode="indicator",
        eps=0.0,
        temporal_tables=tables,
        dmaxes=dmaxes,
        supports=r,
    )
    values = np.empty_like(sums)
    for k in range(r.size):
        for l in range(tg.size):
            area, steps, _, _ = _eroded_structure(r[k], dmaxes[l], T)
            values[k, l] = sums[k, l] / (len(Cs) * len(Ds) * area * steps)
    labels = pattern.labels
    return CurveEstimate(
        r_grid=r,
        t_grid=tg,
        values=values,
        kind="k_function",
        meta={
            "C": tuple(labels[c - 1] for c in Cs),
            "D": tuple(labels[d - 1] for d in Ds),
            "border": "first-member",
        },
    )


# ---------------------------------------------------------------------------
# marked second order


def _k_pair_lists(
    x: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    T: int,
    r_grid: np.ndarray,
    t_grid: np.ndarray,
):
    """Sparse pair lists (i, j, weight) per (r, t) cell for indicator K.

    Reused across mark permutations: the geometry never changes, only
    the mark factors do."""
    bdist = _border_distance(x, y)
    tables = [_overlap_table(tv, T) for tv in t_grid]
    dmaxes = [int(np.nonzero(tab)[0].max()) if tab.any() else 0 for tab in tables]
    lists: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = []
    gidx = np.arange(x.size)
    for k, rv in enumerate(r_grid):
        row = []
        for l in range(t_grid.size):
            table = tables[l]
            dmax = dmaxes[l]
            elig = (bdist >= rv) & (t >= 1 + dmax) & (t <= T - dmax)
            ii_parts, jj_parts, ww_parts = [], [], []
            cand = np.nonzero(elig)[0]
            for lo in range(0, cand.size, _PAIR_BLOCK):
                ci = cand[lo : lo + _PAIR_BLOCK]
                dx = x[ci, None] - x[None, :]
                dy = y[ci, None] - y[None, :]
                close = np.hypot(dx, dy) <= rv
                close &= gidx[ci, None] != gidx[None, :]
                adt = np.abs(t[ci, None] - t[None, :])
                w = np.where(close, table[adt], 0.0)
                nz = np.nonzero(w)
                if nz[0].size:
                    ii_parts.append(ci[nz[0]])
                    jj_parts.append(nz[1])
                    ww_parts.append(w[nz])
            if ii_parts:
                row.append(
                    (
                        np.concatenate(ii_parts),
                        np.concatenate(jj_parts),
                        np.concatenate(ww_parts),
                    )
                )
            else:
                row.append(
                    (np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0))
                )
        lists.append(row)
    return lists, dmaxes


def _marked_k_from_lists(
    lists,
    dmaxes,
    marks: np.ndarray,
    mean_mark: float,
    inv_lam2: float,
    r_grid: np.ndarray,
    t_grid: np.ndarray,
    T: int,
) -> np.ndarray:
    """Centred mark-weighted K: weighted minus unweighted, shared geometry."""
    out = np.empty((r_grid.size, t_grid.size))
    mm2 = mean_mark * mean_mark
    for k in range(r_grid.size):
        for l in range(t_grid.size):
            ii, jj, ww = lists[k][l]
            area, steps, _, _ = _eroded_structure(r_grid[k], dmaxes[l], T)
            norm = inv_lam2 / (area * steps)
            if ii.size == 0:
                out[k, l] = 0.0
                continue
            factor = marks[ii] * marks[jj] / mm2
            out[k, l] = float((ww * (factor - 1.0)).sum()) * norm
    return out


def _marked_source(source) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    x, y, t, marks, T = _source_arrays(source)
    if marks is None:
        raise ValidationError("source carries no marks")
    if x.size < 2:
        raise ValidationError("need at least two events")
    mbar = float(marks.mean())
    if mbar == 0.0:
        raise ValidationError("mean mark is zero; the mark normalisation is undefined")
    return x, y, t, marks, T


def mark_weighted_k(
    source,
    r_grid: Sequence[float],
    t_grid: Sequence[float],
) -> CurveEstimate:
    """Centred mark-weighted K of one marked component.

    Pairs are weighted by m_i*m_j over the squared mean mark and the
    unweighted estimator is subtracted, so independent marks give values
    near zero and constant marks give exactly zero."""
    x, y, t, marks, T = _marked_source(source)
    r = _check_r_grid(r_grid, None)
    tg = _check_t_grid(t_grid)
    lists, dmaxes = _k_pair_lists(x, y, t, T, r, tg)
    lam = x.size / T
    values = _marked_k_from_lists(
        lists, dmaxes, marks, float(marks.mean()), 1.0 / (lam * lam), r, tg, T
    )
    return CurveEstimate(
        r_grid=r,
        t_grid=tg,
        values=values,
        kind="mark_weighted_k_centred",
        meta={"border": "first-member"},
    )


def mark_permutation_envelope(
    source,
    r_grid: Sequence[float],
    t_grid: Sequence[float],
    permutations: int = 100,
    seed: int = 0,
) -> tuple[CurveEstimate, np.ndarray, np.ndarray]:
    """Observed centred mark-weighted K plus its permutation envelope.

    Marks are permuted across events (the mark-independence null); the
    envelope is the pointwise min and max over the permuted statistics."""
    if permutations < 1:
        raise ValidationError("need at least one permutation")
    x, y, t, marks, T = _marked_source(source)
    r = _check_r_grid(r_grid, None)
    tg = _check_t_grid(t_grid)
    lists, dmaxes = _k_pair_lists(x, y, t, T, r, tg)
    lam = x.size / T
    inv2 = 1.0 / (lam * lam)
    mbar = float(marks.mean())
    observed = _marked_k_from_lists(lists, dmaxes, marks, mbar, inv2, r, tg, T)
    rng = np.random.Generator(np.random.Philox(seed))
    lo = np.full_like(observed, np.inf)
    hi = np.full_like(observed, -np.inf)
    for _ in range(permutations):
        perm = rng.permutation(marks)
        vals = _marked_k_from_lists(lists, dmaxes, perm, mbar, inv2, r, tg, T)
        np.minimum(lo, vals, out=lo)
        np.maximum(hi, vals, out=hi)
    est = CurveEstimate(
        r_grid=r,
        t_grid=tg,
        values=observed,
        kind="mark_weighted_k_centred",
        meta={"border": "first-member", "permutations": permutations, "seed": seed},
    )
    return est, lo, hi
