"""Cross-entropy optimization over mixed continuous and categorical variables.

The decision vector concatenates box-bounded continuous dimensions with
categorical dimensions whose slots carry the selected category value.  Each
iteration draws a population in batch, keeps the top ``elite_frac`` by score,
and refits a joint Gaussian (mean and full covariance) alongside independent
categorical distributions from the elites.  The first population is uniform
over the domain; afterwards the incumbent best sample is injected into every
population so the running best score never decreases.  Iteration ends early
once the best score, the Gaussian mean, and the category probabilities all
move by less than the stop threshold between consecutive refits; a
score-only check would quit while the distribution still straddles several
equally scored modes.  The optimizer returns the mode of the final
distribution together with its score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NumericalError",
    "VariableSpec",
    "MixedDistribution",
    "CemConfig",
    "cem_optimize",
]

_MAX_REDRAWS = 50
_COV_RIDGE = 1e-9
_PROB_FLOOR = 1e-6


class NumericalError(ArithmeticError):
    """Raised when the objective keeps producing non-finite scores."""


@dataclass(frozen=True)
class VariableSpec:
    """Layout of a mixed decision vector.

    Parameters
    ----------
    lower, upper : array_like, shape (n_continuous,)
        Finite box bounds for the continuous block, ``lower <= upper``.
    categories : sequence of array_like
        One value table per categorical dimension, each non-empty.  A
        sampled vector stores the chosen value, not its index.
    """

    lower: np.ndarray = ()
    upper: np.ndarray = ()
    categories: tuple = ()

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D with matching shapes")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("continuous bounds must be finite")
        if not np.all(lower <= upper):
            raise ValueError("continuous bounds require lower <= upper")
        cats = []
        for table in self.categories:
            values = np.atleast_1d(np.asarray(table, dtype=np.float64))
            if values.ndim != 1 or values.size == 0:
                raise ValueError("each categorical dimension needs at least one value")
            if not np.all(np.isfinite(values)):
                raise ValueError("category values must be finite")
            values.flags.writeable = False
            cats.append(values)
        if lower.size == 0 and not cats:
            raise ValueError("spec has no decision variables")
        for arr in (lower, upper):
            arr.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "categories", tuple(cats))

    @property
    def n_continuous(self) -> int:
        return self.lower.size

    @property
    def n_discrete(self) -> int:
        return len(self.categories)

    @property
    def ndim(self) -> int:
        return self.n_continuous + self.n_discrete


@dataclass(frozen=True)
class MixedDistribution:
    """Joint Gaussian over the continuous block plus independent categoricals.

    Validated on construction: ``cov`` symmetric positive semi-definite and
    every probability vector non-negative summing to one within ``1e-9``.
    """

    mean: np.ndarray
    cov: np.ndarray
    probs: tuple = ()

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64).reshape(mean.size, mean.size)
        if mean.size:
            if not np.allclose(cov, cov.T, atol=1e-9):
                raise ValueError("covariance must be symmetric")
            if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-8:
                raise ValueError("covariance must be positive semi-definite")
        probs = []
        for p in self.probs:
            p = np.atleast_1d(np.asarray(p, dtype=np.float64))
            if p.ndim != 1 or p.size == 0:
                raise ValueError("each probability vector must be 1-D and non-empty")
            if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-9:
                raise ValueError("probabilities must be non-negative and sum to one")
            p.flags.writeable = False
            probs.append(p)
        for arr in (mean, cov):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "probs", tuple(probs))

    def entropy(self) -> float:
        """Summed Shannon entropy of the categorical marginals (nats)."""
        total = 0.0
        for p in self.probs:
            mask = p > 0.0
            total -= float(np.sum(p[mask] * np.log(p[mask])))
        return total


@dataclass(frozen=True)
class CemConfig:
    """Optimizer settings.

    ``population`` samples per iteration, the top ``elite_frac`` of which
    refit the distribution; stops after ``max_iters`` iterations or once the
    running best score improves by less than ``tol`` while the refit moved
    the mean and every probability vector by less than ``tol``.
    """

    population: int = 1000
    elite_frac: float = 0.3
    max_iters: int = 300
    tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.population < 10:
            raise ValueError("population must be at least 10")
        if not 0.0 < self.elite_frac < 1.0:
            raise ValueError("elite_frac must lie strictly between 0 and 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not np.isfinite(self.tol) or self.tol < 0.0:
            raise ValueError("tol must be finite and non-negative")


def cem_optimize(
    objective: Callable[[np.ndarray], float],
    spec: VariableSpec,
    cfg: CemConfig | None = None,
    trace: Callable[[dict], None] | None = None,
):
    """Maximize ``objective`` over the mixed domain described by ``spec``.

    Parameters
    ----------
    objective : callable
        Maps a flat sample vector (continuous block first, then category
        values) to a finite score.  If the callable carries a ``batch``
        attribute it is invoked once per population with an ``(m, ndim)``
        matrix and must return ``m`` scores.
    spec : VariableSpec
        Domain layout; continuous samples are clamped to its bounds.
    cfg : CemConfig, optional
        Defaults to ``CemConfig()``.
    trace : callable, optional
        Called once per iteration with a dict holding ``iteration``,
        ``best_score``, ``mean``, ``entropy`` and the fitted ``dist``.

    Returns
    -------
    (np.ndarray, float)
        The mode of the final distribution (Gaussian mean clamped to bounds,
        most probable category per discrete dimension) and its score from a
        single objective evaluation.

    Raises
    ------
    NumericalError
        If non-finite scores persist after bounded redraws.
    """
    cfg = CemConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    d_c = spec.n_continuous
    d_d = spec.n_discrete
    n_elite = max(1, int(cfg.population * cfg.elite_frac))
    batch = getattr(objective, "batch", None)

    def score_rows(rows: np.ndarray) -> np.ndarray:
        if batch is not None:
            out = np.asarray(batch(rows), dtype=np.float64).reshape(rows.shape[0])
        else:
            out = np.array(
                [float(objective(rows[i].copy())) for i in range(rows.shape[0])]
            )
        return out

    def draw(dist: MixedDistribution | None, m: int):
        if d_c:
            if dist is None:
                cont = rng.uniform(spec.lower, spec.upper, size=(m, d_c))
            else:
                cont = rng.multivariate_normal(
                    dist.mean, dist.cov, size=m, check_valid="ignore"
                )
                cont = np.clip(cont, spec.lower, spec.upper)
        else:
            cont = np.zeros((m, 0))
        idx = np.zeros((m, d_d), dtype=np.int64)
        vals = np.zeros((m, d_d))
        for j, cats in enumerate(spec.categories):
            if dist is None:
                idx[:, j] = rng.integers(cats.size, size=m)
            else:
                idx[:, j] = rng.choice(cats.size, size=m, p=dist.probs[j])
            vals[:, j] = cats[idx[:, j]]
        return np.hstack([cont, vals]), idx

    def sample_scored(dist: MixedDistribution | None, m: int):
        xs, idx = draw(dist, m)
        js = score_rows(xs)
        redraws = 0
        while not np.all(np.isfinite(js)):
            redraws += 1
            if redraws > _MAX_REDRAWS:
                raise NumericalError(
                    f"objective stayed non-finite after {_MAX_REDRAWS} redraws"
                )
            bad = ~np.isfinite(js)
            xs[bad], idx[bad] = draw(dist, int(bad.sum()))
            js[bad] = score_rows(xs[bad])
        return xs, idx, js

    best_x: np.ndarray | None = None
    best_idx: np.ndarray | None = None
    best_score = -np.inf
    dist: MixedDistribution | None = None
    for iteration in range(cfg.max_iters):
        xs, idx, js = sample_scored(dist, cfg.population)
        if best_x is not None:
            worst = int(np.argmin(js))
            xs[worst], idx[worst], js[worst] = best_x, best_idx, best_score
        order = np.argsort(-js, kind="stable")
        previous_best = best_score
        top = int(order[0])
        if js[top] > best_score:
            best_score = float(js[top])
            best_x = xs[top].copy()
            best_idx = idx[top].copy()
        elite_x = xs[order[:n_elite]]
        elite_idx = idx[order[:n_elite]]
        if d_c:
            mean = elite_x[:, :d_c].mean(axis=0)
            cov = np.cov(elite_x[:, :d_c], rowvar=False, bias=True).reshape(d_c, d_c)
            cov = 0.5 * (cov + cov.T) + _COV_RIDGE * np.eye(d_c)
        else:
            mean = np.zeros(0)
            cov = np.zeros((0, 0))
        probs = []
        for j, cats in enumerate(spec.categories):
            freq = np.bincount(elite_idx[:, j], minlength=cats.size) / float(n_elite)
            freq = np.maximum(freq, _PROB_FLOOR)
            probs.append(freq / freq.sum())
        previous = dist
        dist = MixedDistribution(mean, cov, tuple(probs))
        if trace is not None:
            trace(
                {
                    "iteration": iteration,
                    "best_score": best_score,
                    "mean": mean.copy(),
                    "entropy": dist.entropy(),
                    "dist": dist,
                }
            )
        if previous is not None and best_score - previous_best < cfg.tol:
            mean_shift = (
                float(np.max(np.abs(dist.mean - previous.mean))) if d_c else 0.0
            )
            prob_shift = max(
                (
                    float(np.max(np.abs(p - q)))
                    for p, q in zip(dist.probs, previous.probs)
                ),
                default=0.0,
            )
            if mean_shift < cfg.tol and prob_shift < cfg.tol:
                break

    mode = np.empty(spec.ndim)
    if d_c:
        mode[:d_c] = np.clip(dist.mean, spec.lower, spec.upper)
    for j, cats in enumerate(spec.categories):
        mode[d_c + j] = cats[int(np.argmax(dist.probs[j]))]
    mode_score = float(score_rows(mode[np.newaxis, :])[0])
    if not np.isfinite(mode_score):
        raise NumericalError("objective is non-finite at the distribution mode")
    return mode, mode_score
