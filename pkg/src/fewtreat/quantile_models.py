"""Estimators of the law of the treated-group mean error.

Two constructions are provided:

* :func:`empirical_convolution` -- the mean of ``n1`` independent draws from
  the empirical distribution of control residuals (iid controls).
* :func:`ferman_fit` / :func:`ferman_psi` -- the scale model
  ``Y(0) = mu + h(X; theta) * eps`` with ``h(x)^2 = theta1 + theta2 / x``;
  control residuals are normalized by their fitted scale and re-scaled by the
  treated units' scales before averaging.

Both return a :class:`QuantileModel`, a finite discrete distribution. When the
number of index tuples ``N0 ** n1`` fits in ``budget`` every tuple is
enumerated; otherwise ``budget`` tuples are sampled with replacement.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from . import errors
from .core import Dataset


class QuantileKind(str, enum.Enum):
    EMPIRICAL_CONVOLUTION = "EmpiricalConvolution"
    FERMAN_SCALE = "FermanScale"
    EXTERNAL = "External"
    NORMAL = "Normal"


@dataclass(frozen=True, eq=False)
class QuantileModel:
    """Discrete distribution with sorted, distinct atoms."""

    kind: QuantileKind
    atoms: np.ndarray
    weights: np.ndarray
    n1: int
    meta: Mapping[str, Any] = field(default_factory=dict)
    _cum: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, values, kind, n1: int, meta=None) -> QuantileModel:
        """Equal-weight atoms; exact duplicates are merged."""
        atoms, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
        total = int(counts.sum())
        cum = np.cumsum(counts) / total
        return cls._build(kind, atoms, counts / total, cum, n1, meta)

    @classmethod
    def from_atoms(cls, atoms, weights, kind=QuantileKind.EXTERNAL, n1: int = 1, meta=None) -> QuantileModel:
        a = np.asarray(atoms, dtype=float)
        w = np.asarray(weights, dtype=float)
        if a.shape != w.shape or a.ndim != 1 or a.size == 0:
            raise errors.ConfigError("atoms and weights must be non-empty and of equal length")
        if not np.all(w > 0) or not np.all(np.isfinite(a)):
            raise errors.ConfigError("weights must be positive and atoms finite")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise errors.ConfigError(f"weights sum to {math.fsum(w)!r}, not 1")
        order = np.argsort(a, kind="stable")
        a, w = a[order], w[order]
        uniq, inv = np.unique(a, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        cum = np.cumsum(merged)
        cum[-1] = 1.0
        return cls._build(kind, uniq, merged, cum, n1, meta)

    @classmethod
    def _build(cls, kind, atoms, weights, cum, n1, meta):
        for arr in (atoms, weights, cum):
            arr.setflags(write=False)
        return cls(QuantileKind(kind), atoms, weights, int(n1), dict(meta or {}), cum)

    def quantile(self, u: float) -> float:
        """Smallest atom whose cumulative weight reaches ``u``."""
        if not 0.0 < u < 1.0:
            raise errors.UOutOfRange(f"u must lie in (0, 1), got {u}")
        i = int(np.searchsorted(self._cum, u, side="left"))
        return float(self.atoms[min(i, self.atoms.size - 1)])

    def prob_le(self, t: float) -> float:
        i = int(np.searchsorted(self.atoms, t, side="right"))
        return float(self._cum[i - 1]) if i else 0.0

    def prob_ge(self, t: float) -> float:
        i = int(np.searchsorted(self.atoms, t, side="left"))
        return 1.0 - float(self._cum[i - 1]) if i else 1.0

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights)


@dataclass(frozen=True)
class NormalQuantileModel:
    """Gaussian reference law, for settings where the error law is known."""

    loc: float = 0.0
    scale: float = 1.0
    n1: int = 1
    kind: QuantileKind = QuantileKind.NORMAL

    def quantile(self, u: float) -> float:
        if not 0.0 < u < 1.0:
            raise errors.UOutOfRange(f"u must lie in (0, 1), got {u}")
        return float(self.loc + self.scale * special.ndtri(u))

    def prob_le(self, t: float) -> float:
        return float(special.ndtr((t - self.loc) / self.scale))

    def prob_ge(self, t: float) -> float:
        return float(special.ndtr((self.loc - t) / self.scale))

    @property
    def meta(self) -> dict[str, Any]:
        return {"loc": self.loc, "scale": self.scale}


class SampleQuantiles:
    """Quantiles of an equal-weight sample by selection rather than sorting.

    Returns the same values as ``QuantileModel.from_samples(values, ...)``:
    the smallest order statistic ``k`` with ``k / B >= u``.
    """

    def __init__(self, values, n1: int = 1, meta=None):
        self.values = np.asarray(values, dtype=float)
        self.n1 = int(n1)
        self.meta = dict(meta or {})

    def _rank(self, u: float) -> int:
        b = self.values.size
        k = max(1, math.ceil(u * b))
        while k > 1 and (k - 1) / b >= u:
            k -= 1
        while k < b and k / b < u:
            k += 1
        return k

    def quantile(self, u: float) -> float:
        if not 0.0 < u < 1.0:
            raise errors.UOutOfRange(f"u must lie in (0, 1), got {u}")
        k = self._rank(u) - 1
        return float(np.partition(self.values, k)[k])


def quantile(qm, u: float) -> float:
    return qm.quantile(u)


def _tuple_means(slots: Sequence[np.ndarray], budget: int, seed: int | None):
    """Mean over slots of one value per slot, for every index tuple or for
    ``budget`` sampled tuples. Slot values are summed left to right."""
    if budget < 1:
        raise errors.BudgetZero("budget must be at least 1")
    n1 = len(slots)
    size = slots[0].size
    n_tuples = size**n1
    if n_tuples <= budget:
        sums = slots[0]
        for v in slots[1:]:
            sums = (sums[:, None] + v[None, :]).ravel()
        mode = "exact"
        count = n_tuples
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, size, size=(n1, budget))  # slot-major: contiguous gathers
        sums = slots[0].take(idx[0])
        for k in range(1, n1):
            sums += slots[k].take(idx[k])
        mode = "sampled"
        count = budget
    return sums / n1, {"mode": mode, "tuples": int(count), "seed": seed, "budget": int(budget)}


def empirical_convolution(residuals, n1: int, budget: int = 200_000, seed: int | None = 0) -> QuantileModel:
    """Law of the mean of ``n1`` iid draws from the empirical residual law."""
    res = np.asarray(residuals, dtype=float)
    if res.size < 2:
        raise errors.TooFewResiduals(f"need at least 2 residuals, got {res.size}")
    if n1 < 1:
        raise errors.ConfigError("n1 must be positive")
    values, meta = convolution_values(res, n1, budget, seed)
    return QuantileModel.from_samples(values, QuantileKind.EMPIRICAL_CONVOLUTION, n1, meta)


def convolution_values(residuals, n1: int, budget: int = 200_000, seed: int | None = 0):
    """Tuple means behind :func:`empirical_convolution`, unsorted, with meta."""
    res = np.asarray(residuals, dtype=float)
    values, meta = _tuple_means([res] * n1, budget, seed)
    meta["residual_count"] = int(res.size)
    return values, meta


@dataclass(frozen=True, eq=False)
class ScaleFit:
    """Fitted scale model for untreated outcomes.

    ``h`` overrides the default family ``sqrt(theta1 + theta2 / x)``.
    """

    theta_hat: tuple[float, float]
    mu_hat: float
    xi_hat: np.ndarray
    degenerate: bool = False
    h: Callable[[np.ndarray], np.ndarray] | None = None

    def scale(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.h is not None:
            return np.asarray(self.h(x), dtype=float) * np.ones_like(x)
        t1, t2 = self.theta_hat
        return np.sqrt(t1 + t2 / x)


def ferman_fit(ds: Dataset) -> ScaleFit:
    """Fit ``h(x)^2 = theta1 + theta2 / x`` to squared centered control
    outcomes by least squares and return the normalized residuals.

    If every control shares the same covariate ``theta2`` is not identified:
    it is set to zero, ``degenerate`` is flagged and a warning issued.
    """
    if not ds.has_covariates:
        raise errors.PartialCovariates("the scale model needs a covariate for every unit")
    if ds.n0 < 2:
        raise errors.TooFewResiduals("the scale model needs at least 2 controls")
    xc = ds.x_control
    mu = float(np.mean(ds.y_control))
    r = ds.y_control - mu
    r2 = r * r
    degenerate = bool(np.all(xc == xc[0]))
    if degenerate:
        warnings.warn("all control covariates are equal; fitting a constant scale", RuntimeWarning, stacklevel=2)
        theta = (float(np.mean(r2)), 0.0)
    else:
        design = np.column_stack([np.ones_like(xc), 1.0 / xc])
        coef, *_ = np.linalg.lstsq(design, r2, rcond=None)
        theta = (float(coef[0]), float(coef[1]))
    h2 = theta[0] + theta[1] / ds.x
    if not np.all(h2 > 0):
        raise errors.NonPositiveVariance(f"fitted variance is not positive at some covariate (theta={theta})")
    xi = r / np.sqrt(theta[0] + theta[1] / xc)
    xi.setflags(write=False)
    return ScaleFit(theta, mu, xi, degenerate)


def ferman_psi(fit: ScaleFit, treated_x, budget: int = 200_000, seed: int | None = 0) -> QuantileModel:
    """Law of ``mean_i h(x_i) * xi_{j_i}`` over index tuples ``j`` of controls."""
    values, meta = ferman_values(fit, treated_x, budget, seed)
    return QuantileModel.from_samples(values, QuantileKind.FERMAN_SCALE, meta["n1"], meta)


def ferman_values(fit: ScaleFit, treated_x, budget: int = 200_000, seed: int | None = 0):
    """Tuple means behind :func:`ferman_psi`, unsorted, with meta."""
    tx = np.atleast_1d(np.asarray(treated_x, dtype=float))
    if tx.size == 0:
        raise errors.ConfigError("need at least one treated covariate")
    if fit.xi_hat.size < 2:
        raise errors.TooFewResiduals("need at least 2 normalized residuals")
    scales = fit.scale(tx)
    slots = [s * fit.xi_hat for s in scales]
    values, meta = _tuple_means(slots, budget, seed)
    meta.update(n1=int(tx.size), residual_count=int(fit.xi_hat.size), theta_hat=list(fit.theta_hat),
                degenerate=fit.degenerate)
    return values, meta
