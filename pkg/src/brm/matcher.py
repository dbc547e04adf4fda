"""Set-membership candidate tracker over a ratio map.

Each generation holds candidate lattice cells, each linked to at most one
parent from the previous generation. Without any candidates the whole map is
scanned; otherwise candidates are moved by the odometry distance along the
heading implied by their parent link (or in every direction when there is no
usable heading) and then re-checked against the frame features.

Candidate order is fixed: ascending residual, then row-major lattice cell,
then parent index. ``k_cap`` truncation keeps the head of that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, NamedTuple

import numpy as np

from brm.errors import ConfigError
from brm.ratio_map import RatioMapSet

_CHUNK = 4096  # parents per propagation block; bounds peak memory


class Phase(str, Enum):
    SEARCHING = "searching"
    TRACKING = "tracking"
    CONVERGED = "converged"


@dataclass(frozen=True)
class MatcherConfig:
    e1: float = 0.3
    epsilon: float = 25.0
    d_max: float = 75.0
    k_cap: int = 50_000
    continue_after_convergence: bool = True

    def __post_init__(self):
        for name in ("e1", "epsilon", "d_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        if self.k_cap < 1:
            raise ConfigError(f"k_cap must be >= 1, got {self.k_cap}")


@dataclass(frozen=True)
class OdometryDelta:
    """Distance flown since the previous frame.

    ``dx``/``dy`` carry the odometry displacement vector when available; the
    matcher itself only reads ``d``.
    """

    d: float
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.d) and self.d >= 0):
            raise ConfigError(f"odometry distance must be finite and >= 0, got {self.d}")


class Candidate(NamedTuple):
    cell: tuple[int, int]
    position: tuple[float, float]
    parent: int  # index into the previous generation, -1 when parentless
    residual: float


def _empty_f():
    return np.empty(0, dtype=np.float64)


def _empty_i():
    return np.empty(0, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    generation: int = 0
    cells: np.ndarray = field(default_factory=_empty_i)  # flat row-major lattice index
    parents: np.ndarray = field(default_factory=_empty_i)
    residuals: np.ndarray = field(default_factory=_empty_f)
    x: np.ndarray = field(default_factory=_empty_f)
    y: np.ndarray = field(default_factory=_empty_f)
    parent_x: np.ndarray = field(default_factory=_empty_f)  # NaN when parentless
    parent_y: np.ndarray = field(default_factory=_empty_f)
    phase: Phase = Phase.SEARCHING
    estimate: tuple[float, float] | None = None
    converged_now: bool = False
    frozen: bool = False

    def __len__(self) -> int:
        return int(self.cells.size)

    @property
    def empty(self) -> bool:
        return self.cells.size == 0

    def candidates(self, lattice_cols: int) -> Iterator[Candidate]:
        for i in range(len(self)):
            c = int(self.cells[i])
            yield Candidate(divmod(c, lattice_cols), (float(self.x[i]), float(self.y[i])),
                            int(self.parents[i]), float(self.residuals[i]))


# --------------------------------------------------------------------------- primitives

def heading(origin: tuple[float, float], target: tuple[float, float]) -> float | None:
    """Direction in (-pi, pi] from ``origin`` to ``target``; None if they coincide."""
    dx, dy = target[0] - origin[0], target[1] - origin[1]
    if dx == 0 and dy == 0:
        return None
    theta = math.atan2(dy, dx)
    return math.pi if theta == -math.pi else theta


def residual_grid(f: np.ndarray, mapset: RatioMapSet) -> np.ndarray:
    """Sum over layers of |M_k - f_k| on the lattice; +inf at invalid cells."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mapset.n,):
        raise ConfigError(f"feature has length {f.size}, map has {mapset.n} layers")
    stack = mapset.stack
    res = np.abs(stack[0] - f[0])
    for k in range(1, mapset.n):
        res += np.abs(stack[k] - f[k])
    res[~mapset.valid] = np.inf
    return res


def convergence_check(x: np.ndarray, y: np.ndarray, d_max: float):
    """Centroid and spread; the centroid is returned only when spread < ``d_max``.

    Spread is the largest distance from the centroid to any candidate.
    """
    if len(x) == 0:
        raise ConfigError("convergence check needs at least one candidate")
    cx, cy = float(np.mean(x)), float(np.mean(y))
    spread = float(np.sqrt((x - cx) ** 2 + (y - cy) ** 2).max())
    return ((cx, cy) if spread < d_max else None), spread


def _rank(res: np.ndarray, cells: np.ndarray, parents: np.ndarray, k_cap: int) -> np.ndarray:
    """Indices of the ``k_cap`` best entries in canonical order."""
    if res.size > k_cap:
        kth = np.partition(res, k_cap - 1)[k_cap - 1]
        keep = np.flatnonzero(res <= kth)
        order = keep[np.lexsort((parents[keep], cells[keep], res[keep]))]
        return order[:k_cap]
    return np.lexsort((parents, cells, res))


def _dedupe(cells: np.ndarray, parents: np.ndarray, prev: CandidateSet, ncell: int):
    """One entry per (cell, parent cell), linked to the lowest parent index.

    Two parents on the same cell give identical headings, so such pairs are
    duplicates for every later step. Returns the surviving ``(cells, parents)``
    in ascending (cell, parent cell) order.
    """
    if cells.size == 0:
        return cells, parents
    pcell = prev.cells[parents]
    npar = len(prev)
    if ncell * ncell * npar < 2**62:
        # pack the three sort keys into one integer: a single sort replaces a lexsort
        key = np.sort((cells * ncell + pcell) * npar + parents)
        pair = key // npar
        first = np.ones(key.size, dtype=bool)
        first[1:] = pair[1:] != pair[:-1]
        key, pair = key[first], pair[first]
        return pair // ncell, key - pair * npar
    order = np.lexsort((parents, pcell, cells))
    c, p = cells[order], pcell[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = (c[1:] != c[:-1]) | (p[1:] != p[:-1])
    return cells[order[first]], parents[order[first]]


def _build(generation, cells, parents, res, mapset, prev: CandidateSet | None) -> CandidateSet:
    cols = mapset.shape[1]
    lx, ly = mapset.lattice_x(), mapset.lattice_y()
    x, y = lx[cells % cols], ly[cells // cols]
    if prev is None:
        px = np.full(cells.size, np.nan)
        py = np.full(cells.size, np.nan)
    else:
        px, py = prev.x[parents], prev.y[parents]
    return CandidateSet(generation, cells, parents, res, x, y, px, py)


def global_match(f: np.ndarray, mapset: RatioMapSet, cfg: MatcherConfig, generation: int = 1) -> CandidateSet:
    """Every valid lattice cell whose residual is below ``e1``, parentless."""
    res = residual_grid(f, mapset).ravel()
    cells = np.flatnonzero(res < cfg.e1)
    parents = np.full(cells.size, -1, dtype=np.int64)
    order = _rank(res[cells], cells, parents, cfg.k_cap)
    cells = cells[order]
    out = _build(generation, cells, parents[order], res[cells], mapset, None)
    return replace(out, phase=Phase.TRACKING if len(out) else Phase.SEARCHING)


# --------------------------------------------------------------------------- propagation

def _predictions(prev: CandidateSet, d: float):
    """Split parents into heading-constrained (with predicted centre) and free ones.

    Trigonometry goes through :mod:`math` one candidate at a time so that the
    predicted centres are bit-identical to :func:`heading` evaluated in Python.
    """
    dx = prev.x - prev.parent_x
    dy = prev.y - prev.parent_y
    # NaN parent coordinates (no parent) and coincident positions have no heading
    has = ~np.isnan(dx) & ((dx != 0) | (dy != 0))
    boxed = np.flatnonzero(has)
    free = np.flatnonzero(~has)
    theta = list(map(math.atan2, dy[boxed].tolist(), dx[boxed].tolist()))
    theta = [math.pi if t == -math.pi else t for t in theta]
    cx = prev.x[boxed] + d * np.array(list(map(math.cos, theta)), dtype=np.float64)
    cy = prev.y[boxed] + d * np.array(list(map(math.sin, theta)), dtype=np.float64)
    return boxed.astype(np.int64), cx, cy, free.astype(np.int64)


def _window_offsets(half_span_cells: int) -> tuple[np.ndarray, np.ndarray]:
    o = np.arange(-half_span_cells, half_span_cells + 1)
    dr, dc = np.meshgrid(o, o, indexing="ij")
    return dr.ravel(), dc.ravel()


def _propagate_chunks(prev: CandidateSet, d: float, mapset: RatioMapSet, cfg: MatcherConfig,
                      allowed: np.ndarray):
    """Yield ``(cells, parents)`` blocks of the motion-constrained set.

    Only cells whose flat index is set in ``allowed`` are emitted: the valid
    mask for plain propagation, or the cells passing the feature test when
    propagation and filtering run together. Window entries are screened by
    bounds and ``allowed`` before the distance predicates are evaluated.
    """
    rows, cols = mapset.shape
    s = mapset.lattice_spacing
    ox, oy = mapset.transform.origin_x, mapset.transform.origin_y
    lx, ly = mapset.lattice_x(), mapset.lattice_y()
    eps = cfg.epsilon
    boxed, pcx, pcy, free = _predictions(prev, d)

    def emit(idx, r, c, width, keep_fn):
        # entry i of the flattened window belongs to parent idx[i // width]
        sel = np.flatnonzero((r >= 0) & (r < rows) & (c >= 0) & (c < cols))
        flat = r[sel] * cols + c[sel]
        ok = allowed[flat]
        sel, flat = sel[ok], flat[ok]
        ok = keep_fn(sel, sel // width)
        return flat[ok], idx[sel[ok] // width]

    # heading-constrained: open box of half-side eps around the predicted centre
    # the centre is rounded to the nearest lattice cell, so offsets beyond
    # eps/s + 1/2 cells can never satisfy the strict box test
    half = int(math.floor(eps / s + 0.5 + 1e-9))
    dr, dc = _window_offsets(half)
    for a in range(0, boxed.size, _CHUNK):
        idx = boxed[a : a + _CHUNK]
        cx, cy = pcx[a : a + _CHUNK], pcy[a : a + _CHUNK]
        c0 = np.floor((cx - ox) / s + 0.5).astype(np.int64)
        r0 = np.floor((cy - oy) / s + 0.5).astype(np.int64)
        r = (r0[:, None] + dr[None, :]).ravel()
        c = (c0[:, None] + dc[None, :]).ravel()

        def in_box(sel, owner, r=r, c=c, cx=cx, cy=cy):
            return (np.abs(lx[c[sel]] - cx[owner]) < eps) & (np.abs(ly[r[sel]] - cy[owner]) < eps)

        yield emit(idx, r, c, dr.size, in_box)

    # no usable heading: annulus | |cell - p| - d | <= eps
    half = int(math.ceil((d + eps) / s)) + 1
    dr, dc = _window_offsets(half)
    near = np.abs(np.hypot(dr, dc) * s - d) <= eps + 2 * s
    dr, dc = dr[near], dc[near]
    block = max(1, _CHUNK * 64 // max(dr.size, 1))
    for a in range(0, free.size, block):
        idx = free[a : a + block]
        pcell = prev.cells[idx]
        r = ((pcell // cols)[:, None] + dr[None, :]).ravel()
        c = ((pcell % cols)[:, None] + dc[None, :]).ravel()
        px, py = prev.x[idx], prev.y[idx]

        def in_ring(sel, owner, r=r, c=c, px=px, py=py):
            ddx = lx[c[sel]] - px[owner]
            ddy = ly[r[sel]] - py[owner]
            return np.abs(np.sqrt(ddx * ddx + ddy * ddy) - d) <= eps

        yield emit(idx, r, c, dr.size, in_ring)


def propagate(prev: CandidateSet, delta: OdometryDelta, mapset: RatioMapSet, cfg: MatcherConfig):
    """Motion-constrained cells for the next generation as ``(cells, parents)``.

    Each (cell, parent cell) pair occurs once, linked to the lowest-index
    parent on that cell; a cell may appear under several parent cells.
    """
    if prev.empty:
        raise ConfigError("cannot propagate an empty candidate set")
    parts = list(_propagate_chunks(prev, delta.d, mapset, cfg, mapset.valid.ravel()))
    cells = np.concatenate([p[0] for p in parts]) if parts else _empty_i()
    parents = np.concatenate([p[1] for p in parts]) if parts else _empty_i()
    return _dedupe(cells, parents, prev, mapset.shape[0] * mapset.shape[1])


def filter_candidates(cells: np.ndarray, parents: np.ndarray, f: np.ndarray, mapset: RatioMapSet,
                      cfg: MatcherConfig, prev: CandidateSet, generation: int) -> CandidateSet:
    """Keep the pairs whose cell residual is below ``e1``, capped at ``k_cap``."""
    res_grid = residual_grid(f, mapset).ravel()
    res = res_grid[cells]
    keep = res < cfg.e1
    cells, parents, res = cells[keep], parents[keep], res[keep]
    order = _rank(res, cells, parents, cfg.k_cap)
    return _build(generation, cells[order], parents[order], res[order], mapset, prev)


def _propagate_filter(prev: CandidateSet, delta: OdometryDelta, f: np.ndarray, mapset: RatioMapSet,
                      cfg: MatcherConfig, generation: int) -> CandidateSet:
    """:func:`propagate` followed by :func:`filter_candidates`, chunk by chunk.

    Filtering each block as it is produced keeps memory proportional to the
    surviving pairs rather than to the full motion-constrained set.
    """
    res_grid = residual_grid(f, mapset).ravel()
    passing = res_grid < cfg.e1  # invalid cells carry an infinite residual
    keep_c, keep_p = [], []
    for cells, parents in _propagate_chunks(prev, delta.d, mapset, cfg, passing):
        keep_c.append(cells)
        keep_p.append(parents)
    cells = np.concatenate(keep_c) if keep_c else _empty_i()
    parents = np.concatenate(keep_p) if keep_p else _empty_i()
    cells, parents = _dedupe(cells, parents, prev, mapset.shape[0] * mapset.shape[1])
    res = res_grid[cells]
    order = _rank(res, cells, parents, cfg.k_cap)
    return _build(generation, cells[order], parents[order], res[order], mapset, prev)


# --------------------------------------------------------------------------- state machine

def step(state: CandidateSet, f: np.ndarray, delta: OdometryDelta, mapset: RatioMapSet,
         cfg: MatcherConfig) -> CandidateSet:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mapset.n,):
        raise ConfigError(f"feature has length {f.size}, map has {mapset.n} layers")
    generation = state.generation + 1

    if state.frozen:
        return replace(state, generation=generation, converged_now=False)

    if state.empty:
        new = global_match(f, mapset, cfg, generation)
    else:
        new = _propagate_filter(state, delta, f, mapset, cfg, generation)

    if new.empty:
        return replace(new, phase=Phase.SEARCHING, estimate=state.estimate)

    centroid, _ = convergence_check(new.x, new.y, cfg.d_max)
    if centroid is None:
        return replace(new, phase=Phase.TRACKING, estimate=state.estimate)
    return replace(new, phase=Phase.CONVERGED, estimate=centroid, converged_now=True,
                   frozen=not cfg.continue_after_convergence)


class Matcher:
    """Stateful wrapper that steps one candidate generation at a time over a map."""

    def __init__(self, mapset: RatioMapSet, cfg: MatcherConfig | None = None):
        self.mapset = mapset
        self.cfg = cfg or MatcherConfig()
        self.state = CandidateSet()

    def step(self, f, delta: OdometryDelta | float = 0.0) -> CandidateSet:
        if not isinstance(delta, OdometryDelta):
            delta = OdometryDelta(float(delta))
        self.state = step(self.state, f, delta, self.mapset, self.cfg)
        return self.state

    def reset(self) -> None:
        """Drop all candidates (lost / kidnapped): the next step scans the whole map."""
        self.state = replace(CandidateSet(), generation=self.state.generation,
                             estimate=self.state.estimate)
