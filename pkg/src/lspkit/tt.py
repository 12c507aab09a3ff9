"""Tensor-train containers and algorithms on rectangular grids.

A tensor train (TT) stores a d-dimensional tensor as a chain of order-3
cores ``G_k`` with shapes ``(r_{k-1}, n_k, r_k)`` and boundary ranks
``r_0 = r_d = 1``.  The entry at a multi-index ``(i_1, ..., i_d)`` is the
product of the corresponding core slices.  Attaching a :class:`Grid` turns
the tensor into a function table over a box, which supports multilinear
interpolation, cross approximation from a black-box oracle, rank
truncation, and a prioritized grid argmax.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "Grid",
    "TensorTrain",
    "CrossResult",
    "tt_evaluate",
    "tt_interpolate",
    "tt_cross",
    "tt_round",
    "tt_argmax",
    "tt_dense",
    "tt_scale",
    "save_tt",
    "load_tt",
]

_MAGIC = b"LSTT"
_VERSION = 1


class DomainError(ValueError):
    """Raised when a query point lies outside the grid box."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform rectangular grid with inclusive endpoints.

    Parameters
    ----------
    lower, upper : array_like, shape (d,)
        Box bounds per dimension, ``lower < upper`` elementwise.
    counts : array_like of int, shape (d,)
        Number of grid nodes per dimension, each at least 2.
    """

    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    _axes: tuple = field(init=False, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes(), self.counts.tobytes()))

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.shape != counts.shape:
            raise ValueError("lower, upper, counts must be 1-D with matching shapes")
        if lower.size == 0:
            raise ValueError("grid needs at least one dimension")
        if not np.all(lower < upper):
            raise ValueError("grid requires lower < upper elementwise")
        if not np.all(counts >= 2):
            raise ValueError("grid requires at least 2 nodes per dimension")
        for arr in (lower, upper, counts):
            arr.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        axes = tuple(
            np.linspace(lower[k], upper[k], counts[k]) for k in range(lower.size)
        )
        object.__setattr__(self, "_axes", axes)

    @property
    def ndim(self) -> int:
        return self.lower.size

    @property
    def size(self) -> int:
        return int(np.prod([int(c) for c in self.counts]))

    def axis(self, k: int) -> np.ndarray:
        """Grid nodes along dimension ``k``."""
        return self._axes[k]

    def spacing(self, k: int) -> float:
        return float((self.upper[k] - self.lower[k]) / (self.counts[k] - 1))

    def points(self, indices: np.ndarray) -> np.ndarray:
        """Map integer multi-indices (N, d) to coordinates (N, d)."""
        indices = np.asarray(indices)
        out = np.empty(indices.shape, dtype=np.float64)
        for k in range(self.ndim):
            out[..., k] = self._axes[k][indices[..., k]]
        return out

    def locate(self, pts: np.ndarray, tol: float = 1e-9):
        """Cell indices and fractions for multilinear interpolation.

        Returns ``(idx, frac)`` where ``idx[:, k]`` is the lower node of the
        enclosing cell (in ``[0, counts[k] - 2]``) and ``frac`` the position
        inside the cell in ``[0, 1]``.  Points more than ``tol`` outside the
        box raise :class:`DomainError`.
        """
        pts = np.asarray(pts, dtype=np.float64)
        lo = self.lower - tol
        hi = self.upper + tol
        if np.any(pts < lo) or np.any(pts > hi):
            raise DomainError("point outside grid box")
        idx = np.empty(pts.shape, dtype=np.int64)
        frac = np.empty(pts.shape, dtype=np.float64)
        for k in range(self.ndim):
            h = self.spacing(k)
            t = (pts[..., k] - self.lower[k]) / h
            i = np.clip(np.floor(t).astype(np.int64), 0, int(self.counts[k]) - 2)
            idx[..., k] = i
            frac[..., k] = np.clip(t - i, 0.0, 1.0)
        return idx, frac


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """TT representation of a tensor tabulated on a :class:`Grid`.

    ``cores[k]`` has shape ``(r_k, n_k, r_{k+1})`` with boundary ranks 1 and
    ``n_k`` equal to ``grid.counts[k]``.
    """

    cores: tuple
    grid: Grid

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=np.float64) for c in self.cores)
        if len(cores) != self.grid.ndim:
            raise ValueError("one core per grid dimension required")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k, core in enumerate(cores):
            if core.ndim != 3:
                raise ValueError("cores must be order-3 arrays")
            if core.shape[1] != int(self.grid.counts[k]):
                raise ValueError("core mode size must match grid counts")
            if k > 0 and cores[k - 1].shape[2] != core.shape[0]:
                raise ValueError("adjacent core ranks must chain")
            core.flags.writeable = False
        object.__setattr__(self, "cores", cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)


def _eval_index_batch(tt: TensorTrain, idx: np.ndarray) -> np.ndarray:
    """Evaluate TT entries at integer multi-indices (N, d)."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    v = tt.cores[0][0, idx[:, 0], :]
    for k in range(1, len(tt.cores)):
        slices = tt.cores[k][:, idx[:, k], :]
        v = np.einsum("nr,rns->ns", v, slices)
    return v[:, 0]


def tt_evaluate(tt: TensorTrain, index: Sequence[int]) -> float:
    """Exact tensor entry at one integer multi-index."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or index.size != tt.grid.ndim:
        raise ValueError("index must have one entry per dimension")
    if np.any(index < 0) or np.any(index >= tt.grid.counts):
        raise IndexError("index outside grid")
    return float(_eval_index_batch(tt, index[None, :])[0])


# interpolation temporaries scale with N * r_left * r_right; cap the largest
_INTERP_BUDGET = 2**24


def _interp_block(tt: TensorTrain, pts: np.ndarray) -> np.ndarray:
    idx, frac = tt.grid.locate(pts)
    f = frac[:, 0][:, None]
    v = (1.0 - f) * tt.cores[0][0, idx[:, 0], :] + f * tt.cores[0][0, idx[:, 0] + 1, :]
    for k in range(1, len(tt.cores)):
        lo = tt.cores[k][:, idx[:, k], :]
        hi = tt.cores[k][:, idx[:, k] + 1, :]
        f = frac[:, k][None, :, None]
        sl = (1.0 - f) * lo + f * hi
        v = np.einsum("nr,rns->ns", v, sl)
    return v[:, 0]


def _interp_batch(tt: TensorTrain, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at points (N, d) inside the box.

    Interpolating each core slice linearly and chaining the products is
    identical to the 2^d vertex expansion because the TT value is linear in
    every mode slice.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    work = max(c.shape[0] * c.shape[2] for c in tt.cores)
    block = max(1, _INTERP_BUDGET // max(1, work))
    if pts.shape[0] <= block:
        return _interp_block(tt, pts)
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], block):
        out[s:s + block] = _interp_block(tt, pts[s:s + block])
    return out


def tt_interpolate(tt: TensorTrain, point: Sequence[float]) -> float:
    """Multilinear interpolation of the TT table at one real point."""
    point = np.asarray(point, dtype=np.float64)
    if point.ndim != 1 or point.size != tt.grid.ndim:
        raise ValueError("point must have one entry per dimension")
    return float(_interp_batch(tt, point[None, :])[0])


def tt_dense(tt: TensorTrain, max_size: int = 2**22) -> np.ndarray:
    """Reconstruct the full tensor (guarded against large grids)."""
    if tt.grid.size > max_size:
        raise ValueError("tensor too large for dense reconstruction")
    out = tt.cores[0]
    for core in tt.cores[1:]:
        out = np.tensordot(out, core, axes=([out.ndim - 1], [0]))
    return out.reshape(tt.mode_sizes)


def tt_scale(tt: TensorTrain, alpha: float) -> TensorTrain:
    """Scale the tabulated tensor by ``alpha`` (first core scaled)."""
    cores = (tt.cores[0] * float(alpha),) + tt.cores[1:]
    return TensorTrain(cores=cores, grid=tt.grid)


# ---------------------------------------------------------------------------
# oracle adaptation


def as_batch_oracle(oracle: Callable, ndim: int) -> Callable:
    """Wrap a scalar or batch oracle into a batch map (N, d) -> (N,).

    The oracle is probed once with a batch; if it returns a matching 1-D
    array it is used directly, otherwise it is called row by row.
    """
    state = {"mode": None}

    def call(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        if state["mode"] is None:
            try:
                vals = np.asarray(oracle(pts), dtype=np.float64)
                if vals.shape == (pts.shape[0],):
                    state["mode"] = "batch"
                    return vals
            except Exception:
                pass
            state["mode"] = "scalar"
        if state["mode"] == "batch":
            return np.asarray(oracle(pts), dtype=np.float64)
        return np.array([float(oracle(p)) for p in pts], dtype=np.float64)

    return call


# ---------------------------------------------------------------------------
# TT-SVD (dense path) and rounding


def _svd_truncate(mat: np.ndarray, delta: float, max_rank: int):
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0:
        return u[:, :1] * 0.0, np.zeros(1), vt[:1]
    # error allowance delta distributed over the trailing singular values
    tail = np.cumsum(s[::-1] ** 2)[::-1]
    keep = int(np.searchsorted(tail[::-1], delta**2, side="right"))
    rank = max(1, s.size - keep)
    floor = s[0] * 1e-14
    rank = max(1, min(rank, int(np.sum(s > floor)), max_rank))
    return u[:, :rank], s[:rank], vt[:rank]


def _tt_from_dense(tensor: np.ndarray, grid: Grid, eps: float, max_rank: int) -> TensorTrain:
    """Compress a dense tensor with sequential truncated SVDs."""
    d = grid.ndim
    shape = tensor.shape
    norm = float(np.linalg.norm(tensor))
    delta = 0.0 if d == 1 else eps * norm / np.sqrt(d - 1)
    cores = []
    rank = 1
    mat = tensor.reshape(shape[0], -1)
    for k in range(d - 1):
        mat = mat.reshape(rank * shape[k], -1)
        u, s, vt = _svd_truncate(mat, delta, max_rank)
        cores.append(u.reshape(rank, shape[k], -1))
        rank = u.shape[1]
        mat = (s[:, None] * vt)
    cores.append(mat.reshape(rank, shape[d - 1], 1))
    return TensorTrain(cores=tuple(cores), grid=grid)


def tt_round(tt: TensorTrain, eps: float) -> TensorTrain:
    """Recompress a TT to relative Frobenius accuracy ``eps``.

    Right-to-left QR orthogonalization followed by left-to-right truncated
    SVDs.  Ranks never increase; ``eps = 0`` only removes exactly dead
    directions (values preserved to rounding noise).
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = len(tt.cores)
    if d == 1:
        return TensorTrain(cores=tt.cores, grid=tt.grid)
    cores = [np.array(c) for c in tt.cores]
    # orthogonalize right-to-left
    for k in range(d - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        mat = cores[k].reshape(r0, n * r1)
        q, rr = np.linalg.qr(mat.T)
        rank = q.shape[1]
        cores[k] = q.T.reshape(rank, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=([2], [0]))
    norm = float(np.linalg.norm(cores[0]))
    delta = eps * norm / np.sqrt(d - 1)
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd_truncate(cores[k].reshape(r0 * n, r1), delta, max_rank=r1)
        cores[k] = u.reshape(r0, n, -1)
        m = s[:, None] * vt
        cores[k + 1] = np.tensordot(m, cores[k + 1], axes=([1], [0]))
    return TensorTrain(cores=tuple(cores), grid=tt.grid)


# ---------------------------------------------------------------------------
# cross approximation


@dataclass
class CrossResult:
    """Outcome of :func:`tt_cross`.

    Attributes
    ----------
    tt : TensorTrain
        Best approximation found.
    converged : bool
        True when the sweep-to-sweep change dropped below ``eps`` within the
        sweep budget (always True on the exact dense path).
    evaluations : int
        Number of oracle evaluations performed.
    sweeps : int
        Completed half sweeps.
    right_sets : list | None
        Final right index sets, reusable as ``warm_start`` in a later call.
    """

    tt: TensorTrain
    converged: bool
    evaluations: int
    sweeps: int
    right_sets: list | None = None


def _maxvol(a: np.ndarray, tol: float = 1.05, max_iters: int = 200) -> np.ndarray:
    """Indices of a quasi-maximal-volume square submatrix of a tall matrix."""
    m, r = a.shape
    if m <= r:
        return np.arange(m)
    # pivoted QR of the transpose gives a strong starting set
    _, _, piv = scipy.linalg.qr(a.T, pivoting=True, mode="economic")
    idx = np.array(piv[:r])
    try:
        b = np.linalg.solve(a[idx].T, a.T).T
    except np.linalg.LinAlgError:
        return idx
    for _ in range(max_iters):
        flat = np.argmax(np.abs(b))
        i, j = divmod(flat, r)
        if abs(b[i, j]) <= tol:
            break
        # rank-1 swap of row idx[j] for row i
        bj = b[:, j].copy()
        bi = b[i, :].copy()
        bi[j] -= 1.0
        b -= np.outer(bj, bi / b[i, j])
        idx[j] = i
    return idx


class _CachedOracle:
    """Batch oracle over grid indices with a per-entry cache."""

    def __init__(self, oracle: Callable, grid: Grid):
        self._call = as_batch_oracle(oracle, grid.ndim)
        self._grid = grid
        self._cache: dict = {}
        self.evaluations = 0

    def eval_indices(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        keys = [row.tobytes() for row in idx]
        missing = [i for i, key in enumerate(keys) if key not in self._cache]
        if missing:
            pts = self._grid.points(idx[missing])
            vals = self._call(pts)
            if not np.all(np.isfinite(vals)):
                raise ValueError("oracle returned a non-finite value")
            self.evaluations += len(missing)
            for i, v in zip(missing, vals):
                self._cache[keys[i]] = float(v)
        return np.array([self._cache[key] for key in keys], dtype=np.float64)


def _rank_caps(counts: np.ndarray, max_rank: int) -> list:
    d = len(counts)
    caps = []
    for k in range(1, d):
        left = int(np.prod([int(c) for c in counts[:k]], dtype=object))
        right = int(np.prod([int(c) for c in counts[k:]], dtype=object))
        caps.append(int(min(max_rank, left, right)))
    return caps


def _random_right_sets(counts, sizes, rng) -> list:
    """Right index sets J_k over dimensions k..d-1, one per bond."""
    d = len(counts)
    sets = []
    for k in range(1, d):
        rows = np.stack(
            [rng.integers(0, int(counts[j]), size=sizes[k - 1]) for j in range(k, d)],
            axis=1,
        )
        sets.append(np.unique(rows, axis=0))
    return sets


def tt_cross(
    oracle: Callable,
    grid: Grid,
    eps: float = 1e-3,
    max_rank: int = 100,
    max_sweeps: int = 25,
    seed: int = 0,
    dense_cutoff: int = 16384,
    warm_start: list | None = None,
    sample_size: int = 256,
    kick: int = 2,
) -> CrossResult:
    """Build a TT approximation of a black-box function on a grid.

    Parameters
    ----------
    oracle : callable
        Maps a point (d,) to a float, or a batch (N, d) to (N,).  Must be
        deterministic and finite on the grid.
    grid : Grid
        Evaluation grid; modes of the TT follow its dimensions.
    eps : float
        Convergence threshold on the sweep-to-sweep relative change measured
        at a fixed random sample of indices, and on the relative mismatch
        between the tensor and the oracle at that same sample.
    max_rank : int
        Cap on every TT rank.
    max_sweeps : int
        Budget of full alternating sweeps; on exhaustion the best tensor so
        far is returned with ``converged=False``.
    seed : int
        Seed for index-set initialization and the convergence sample.
    dense_cutoff : int
        Grids with at most this many entries are tabulated exactly in one
        batched call and compressed by TT-SVD (faster and exact at small
        sizes).  Pass 0 to force cross sweeps.
    warm_start : list, optional
        Right index sets from a previous :class:`CrossResult` on the same
        grid; sweeps then start at full rank.
    sample_size, kick : int
        Convergence sample size and per-sweep index-set enrichment.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if max_rank < 1:
        raise ValueError("max_rank must be at least 1")
    d = grid.ndim
    counts = grid.counts
    cached = _CachedOracle(oracle, grid)

    if d == 1 or grid.size <= dense_cutoff:
        idx = np.indices([int(c) for c in counts]).reshape(d, -1).T
        vals = cached.eval_indices(idx)
        tensor = vals.reshape([int(c) for c in counts])
        tt = _tt_from_dense(tensor, grid, eps, max_rank)
        return CrossResult(tt=tt, converged=True, evaluations=cached.evaluations, sweeps=0)

    rng = np.random.default_rng(seed)
    caps = _rank_caps(counts, max_rank)
    if warm_start is not None:
        right = [np.array(s, dtype=np.int64) for s in warm_start]
    else:
        init = [min(cap, 4) for cap in caps]
        right = _random_right_sets(counts, init, rng)

    sample_idx = np.stack(
        [rng.integers(0, int(counts[k]), size=sample_size) for k in range(d)], axis=1
    )
    sample_vals = cached.eval_indices(sample_idx)
    sample_norm = max(float(np.linalg.norm(sample_vals)), 1e-30)
    # the RL pass nests inside the left index sets chosen by the LR pass
    left_sets: list = []

    def _interp_core(c_mat, cap):
        u, s, _ = np.linalg.svd(c_mat, full_matrices=False)
        floor = (s[0] if s.size else 0.0) * 1e-12
        rank = max(1, min(cap, int(np.sum(s > floor))))
        u = u[:, :rank]
        piv = _maxvol(u)
        try:
            core = u @ np.linalg.inv(u[piv])
        except np.linalg.LinAlgError:
            core = u @ np.linalg.pinv(u[piv])
        return core, piv

    def lr_pass():
        nonlocal left_sets
        cores = [None] * d
        left = np.zeros((1, 0), dtype=np.int64)
        sets = []
        for k in range(d - 1):
            rl, rr = left.shape[0], right[k].shape[0]
            nk = int(counts[k])
            combo = np.empty((rl * nk * rr, d), dtype=np.int64)
            if k > 0:
                combo[:, :k] = np.repeat(left, nk * rr, axis=0)
            combo[:, k] = np.tile(np.repeat(np.arange(nk), rr), rl)
            combo[:, k + 1 :] = np.tile(right[k], (rl * nk, 1))
            c = cached.eval_indices(combo).reshape(rl * nk, rr)
            core, piv = _interp_core(c, caps[k])
            cores[k] = core.reshape(rl, nk, core.shape[1])
            rows = []
            for p in piv:
                a, i = divmod(int(p), nk)
                rows.append(np.concatenate([left[a], [i]]))
            left = np.array(rows, dtype=np.int64)
            sets.append(left)
        rl = left.shape[0]
        nk = int(counts[d - 1])
        combo = np.empty((rl * nk, d), dtype=np.int64)
        combo[:, : d - 1] = np.repeat(left, nk, axis=0)
        combo[:, d - 1] = np.tile(np.arange(nk), rl)
        cores[d - 1] = cached.eval_indices(combo).reshape(rl, nk, 1)
        left_sets = sets
        return cores

    def rl_pass():
        nonlocal right
        cores = [None] * d
        rset = np.zeros((1, 0), dtype=np.int64)
        new_right = [None] * (d - 1)
        for k in range(d - 1, 0, -1):
            rl, rr = left_sets[k - 1].shape[0], rset.shape[0]
            nk = int(counts[k])
            combo = np.empty((rl * nk * rr, d), dtype=np.int64)
            combo[:, :k] = np.repeat(left_sets[k - 1], nk * rr, axis=0)
            combo[:, k] = np.tile(np.repeat(np.arange(nk), rr), rl)
            if k < d - 1:
                combo[:, k + 1 :] = np.tile(rset, (rl * nk, 1))
            c = cached.eval_indices(combo).reshape(rl, nk * rr).T
            core, piv = _interp_core(c, caps[k - 1])
            cores[k] = core.T.reshape(core.shape[1], nk, rr)
            rows = []
            for p in piv:
                i, b = divmod(int(p), rr)
                rows.append(np.concatenate([[i], rset[b]]))
            rset = np.array(rows, dtype=np.int64)
            new_right[k - 1] = rset
        nk = int(counts[0])
        combo = np.empty((nk * rset.shape[0], d), dtype=np.int64)
        combo[:, 0] = np.repeat(np.arange(nk), rset.shape[0])
        combo[:, 1:] = np.tile(rset, (nk, 1))
        cores[0] = cached.eval_indices(combo).reshape(1, nk, rset.shape[0])
        right = new_right
        return cores

    prev_sample = None
    best = None
    best_mismatch = np.inf
    converged = False
    half_sweeps = 0

    for _ in range(max_sweeps):
        for builder in (lr_pass, rl_pass):
            cores = builder()
            half_sweeps += 1
            tt = TensorTrain(cores=tuple(cores), grid=grid)
            cur = _eval_index_batch(tt, sample_idx)
            # sweep-to-sweep change alone is blind to a shared bad skeleton,
            # so convergence also requires agreement with the oracle sample
            mismatch = float(np.linalg.norm(cur - sample_vals)) / sample_norm
            if mismatch < best_mismatch:
                best_mismatch, best = mismatch, tt
            if prev_sample is not None:
                denom = max(float(np.linalg.norm(cur)), 1e-30)
                change = float(np.linalg.norm(cur - prev_sample)) / denom
                if change <= eps and mismatch <= eps:
                    converged = True
                    best = tt
                    break
            prev_sample = cur
        if converged:
            break
        # enrich right sets so ranks can grow on the next sweep
        for k in range(d - 1):
            if right[k].shape[0] >= caps[k]:
                continue
            extra = np.stack(
                [rng.integers(0, int(counts[j]), size=kick) for j in range(k + 1, d)],
                axis=1,
            )
            merged = np.unique(np.vstack([right[k], extra]), axis=0)
            right[k] = merged[: caps[k]]

    return CrossResult(
        tt=best,
        converged=converged,
        evaluations=cached.evaluations,
        sweeps=half_sweeps,
        right_sets=[np.array(s) for s in right],
    )


# ---------------------------------------------------------------------------
# prioritized argmax


def tt_argmax(tt: TensorTrain, candidates_per_mode: int = 50):
    """Approximate grid argmax by a prioritized sweep over the modes.

    Keeps a pool of partial index prefixes (at most ``candidates_per_mode**2``),
    ranked by an upper bound from a backward max-abs contraction of the
    remaining cores, and evaluates the final mode exactly.  For 3-D tensors
    with ``candidates_per_mode`` at least every mode size the pool never
    prunes, so the result equals the exhaustive maximum.

    Returns
    -------
    (index, value) : (np.ndarray of int, float)
    """
    if candidates_per_mode < 1:
        raise ValueError("candidates_per_mode must be positive")
    d = len(tt.cores)
    cap = int(candidates_per_mode) ** 2

    if d == 1:
        vals = tt.cores[0][0, :, 0]
        i = int(np.argmax(vals))
        return np.array([i]), float(vals[i])

    # bound[k][i]: max over completions from mode k of |interface_i * tail|
    bound = [None] * (d + 1)
    bound[d] = np.ones(1)
    for k in range(d - 1, -1, -1):
        contrib = np.einsum("rns,s->rn", np.abs(tt.cores[k]), bound[k + 1])
        bound[k] = contrib.max(axis=1)

    interfaces = tt.cores[0][0]  # (n0, r1)
    prefixes = np.arange(tt.mode_sizes[0])[:, None]
    for k in range(1, d - 1):
        expanded = np.einsum("pr,rns->pns", interfaces, tt.cores[k])
        p, n, r = expanded.shape
        interfaces = expanded.reshape(p * n, r)
        prefixes = np.hstack(
            [np.repeat(prefixes, n, axis=0), np.tile(np.arange(n), p)[:, None]]
        )
        if interfaces.shape[0] > cap:
            priority = np.abs(interfaces) @ bound[k + 1]
            keep = np.argsort(-priority, kind="stable")[:cap]
            interfaces = interfaces[keep]
            prefixes = prefixes[keep]
    # exact values over the last mode
    final = interfaces @ tt.cores[d - 1][:, :, 0]  # (p, n_last)
    flat = int(np.argmax(final))
    p, i = divmod(flat, final.shape[1])
    index = np.concatenate([prefixes[p], [i]]).astype(np.int64)
    return index, float(final[p, i])


# ---------------------------------------------------------------------------
# serialization


def save_tt(path, tt: TensorTrain, eps: float | None = None,
            max_rank: int | None = None, provenance: str = "") -> None:
    """Write a TT to a binary container plus a JSON metadata sidecar.

    Layout (little endian): magic ``LSTT``, version u32, dimension count u32,
    then per-core shape triples (u32 x 3), the grid as (lower f64, upper f64,
    count u32) per dimension, and finally all core entries as row-major f64.
    The sidecar at ``<path>.json`` holds eps, max_rank and a provenance
    string.  Core bytes round-trip bit exactly.
    """
    path = Path(path)
    d = len(tt.cores)
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _VERSION, d)
    for core in tt.cores:
        blob += struct.pack("<III", *core.shape)
    for k in range(d):
        blob += struct.pack(
            "<ddI", float(tt.grid.lower[k]), float(tt.grid.upper[k]), int(tt.grid.counts[k])
        )
    for core in tt.cores:
        blob += np.ascontiguousarray(core, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))
    meta = {
        "eps": eps,
        "max_rank": max_rank,
        "provenance": provenance,
        "ranks": list(tt.ranks),
        "mode_sizes": list(tt.mode_sizes),
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_tt(path):
    """Read a TT container written by :func:`save_tt`.

    Returns ``(tt, meta)`` where ``meta`` is the sidecar dict (empty when the
    sidecar is missing).
    """
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise ValueError("not a TT container")
    version, d = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 12
    shapes = []
    for _ in range(d):
        shapes.append(struct.unpack_from("<III", blob, off))
        off += 12
    lower, upper, counts = [], [], []
    for _ in range(d):
        lo, hi, n = struct.unpack_from("<ddI", blob, off)
        off += 20
        lower.append(lo)
        upper.append(hi)
        counts.append(n)
    cores = []
    for shape in shapes:
        n = shape[0] * shape[1] * shape[2]
        core = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += n * 8
        cores.append(core.copy())
    grid = Grid(lower=np.array(lower), upper=np.array(upper), counts=np.array(counts))
    tt = TensorTrain(cores=tuple(cores), grid=grid)
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return tt, meta
