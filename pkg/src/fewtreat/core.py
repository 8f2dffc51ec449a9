"""Domain types shared by every procedure, and validation of raw rows."""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import errors


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed cross-section: outcomes ``y``, treatment flags ``d`` and an
    optional positive scalar covariate ``x``.

    Arrays are read-only. Build instances through :func:`validate` or
    :meth:`from_arrays`; the constructor itself does not check invariants.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray | None = None
    _unit_ids: tuple[str, ...] | None = None

    @classmethod
    def from_arrays(cls, y, d, x=None, unit_ids: Sequence[str] | None = None) -> Dataset:
        y = np.asarray(y, dtype=float)
        d_raw = np.asarray(d)
        if y.ndim != 1 or d_raw.shape != y.shape:
            raise errors.DataError("y and d must be one-dimensional and of equal length")
        try:
            d_num = d_raw.astype(float)
        except (TypeError, ValueError):
            raise errors.NonBinaryTreatment("treatment flags must be 0 or 1") from None
        if not np.all((d_num == 0.0) | (d_num == 1.0)):
            bad = d_raw[(d_num != 0.0) & (d_num != 1.0)][0]
            raise errors.NonBinaryTreatment(f"treatment flag {bad!r} is not 0 or 1")
        if not np.all(np.isfinite(y)):
            raise errors.NonFiniteOutcome("outcomes must be finite")
        if x is not None:
            x = np.asarray(x, dtype=float)
            if x.shape != y.shape:
                raise errors.PartialCovariates("covariate column has the wrong length")
            if not np.all(np.isfinite(x)):
                raise errors.PartialCovariates("every unit needs a finite covariate")
            if not np.all(x > 0):
                raise errors.NonPositiveCovariate("covariates must be strictly positive")
            x = _frozen(x.copy())
        d_int = d_num.astype(np.int8)
        n1 = int(d_int.sum())
        if n1 == 0:
            raise errors.NoTreated("no treated units (d == 1)")
        if n1 == d_int.size:
            raise errors.NoControls("no control units (d == 0)")
        ids = None
        if unit_ids is not None:
            ids = tuple(str(u) for u in unit_ids)
            if len(ids) != y.size:
                raise errors.DataError("unit_ids length does not match outcomes")
        return cls(_frozen(y.copy()), _frozen(d_int), x, ids)

    @property
    def unit_ids(self) -> tuple[str, ...]:
        if self._unit_ids is None:
            return tuple(str(i) for i in range(self.n))
        return self._unit_ids

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def n1(self) -> int:
        return int(self.d.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def treated(self) -> np.ndarray:
        return self.d == 1

    @property
    def y_treated(self) -> np.ndarray:
        return self.y[self.d == 1]

    @property
    def y_control(self) -> np.ndarray:
        return self.y[self.d == 0]

    @property
    def has_covariates(self) -> bool:
        return self.x is not None

    @property
    def x_treated(self) -> np.ndarray:
        if self.x is None:
            raise errors.PartialCovariates("dataset carries no covariates")
        return self.x[self.d == 1]

    @property
    def x_control(self) -> np.ndarray:
        if self.x is None:
            raise errors.PartialCovariates("dataset carries no covariates")
        return self.x[self.d == 0]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for i, uid in enumerate(self.unit_ids):
            row: dict[str, Any] = {"unit": uid, "y": float(self.y[i]), "d": int(self.d[i])}
            if self.x is not None:
                row["x"] = float(self.x[i])
            out.append(row)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.x is None) != (other.x is None):
            return False
        same_x = self.x is None or np.array_equal(self.x, other.x)
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.d, other.d)
            and same_x
            and self.unit_ids == other.unit_ids
        )

    __hash__ = None  # type: ignore[assignment]


def validate(rows: Iterable[Mapping[str, Any]]) -> Dataset:
    """Turn parsed records into a :class:`Dataset`.

    Each record needs ``y`` and ``d``; ``unit`` (or ``unit_id``) and ``x`` are
    optional. Raises a :class:`~fewtreat.errors.DataError` subclass naming the
    violated invariant.
    """
    rows = list(rows)
    if not rows:
        raise errors.NoTreated("empty dataset")
    ys, ds, xs, ids = [], [], [], []
    for i, r in enumerate(rows):
        ids.append(str(r.get("unit", r.get("unit_id", i))))
        d = r["d"]
        if isinstance(d, bool):
            d = int(d)
        if d not in (0, 1):
            raise errors.NonBinaryTreatment(f"unit {ids[-1]}: treatment flag {d!r} is not 0 or 1")
        ds.append(int(d))
        y = float(r["y"])
        if not math.isfinite(y):
            raise errors.NonFiniteOutcome(f"unit {ids[-1]}: outcome {y!r} is not finite")
        ys.append(y)
        x = r.get("x")
        xs.append(None if x is None or x == "" else float(x))
    present = [x is not None for x in xs]
    if any(present) and not all(present):
        raise errors.PartialCovariates("some units carry a covariate and others do not")
    x_arr = np.array(xs, dtype=float) if all(present) else None
    return Dataset.from_arrays(ys, ds, x_arr, ids)


class HypothesisKind(str, enum.Enum):
    SHARP = "sharp"
    ATT = "att"
    REALIZED = "realized"


@dataclass(frozen=True)
class Hypothesis:
    c: float
    kind: HypothesisKind = HypothesisKind.SHARP

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise errors.ConfigError("hypothesized value must be finite")
        object.__setattr__(self, "kind", HypothesisKind(self.kind))


@dataclass(frozen=True)
class Level:
    """Significance level ``gamma``; confidence is ``1 - gamma``."""

    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise errors.ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")

    @classmethod
    def from_confidence(cls, confidence: float) -> Level:
        if not 0.0 < confidence < 1.0:
            raise errors.ConfigError(f"confidence level must lie in (0, 1), got {confidence}")
        # 1 - 0.95 is 0.050000000000000044 in binary; drop that representation noise
        return cls(float(f"{1.0 - confidence:.15g}"))

    @property
    def confidence(self) -> float:
        return 1.0 - self.gamma

    @property
    def lower(self) -> float:
        return self.gamma / 2.0

    @property
    def upper(self) -> float:
        return 1.0 - self.gamma / 2.0


class Assumption(str, enum.Enum):
    IID_CONTROLS = "IidControls"
    INDEPENDENT_EFFECTS = "IndependentEffects"
    SCALE_MODEL = "ScaleModel"
    HOMOGENEITY = "Homogeneity"


def assumptions_for(kind: HypothesisKind, base: Iterable[Assumption]) -> frozenset[Assumption]:
    """Assumption set under which a decision about ``kind`` is valid.

    The arithmetic of every test here is the same for all three hypothesis
    kinds; only the premises differ.
    """
    tags = set(base)
    if kind is HypothesisKind.REALIZED:
        tags.add(Assumption.INDEPENDENT_EFFECTS)
    elif kind is HypothesisKind.ATT:
        tags.add(Assumption.HOMOGENEITY)
    return frozenset(tags)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    valid_under: frozenset[Assumption]
    method: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        object.__setattr__(self, "valid_under", frozenset(self.valid_under))

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reject": self.reject,
            "valid_under": sorted(a.value for a in self.valid_under),
            "method": self.method,
            **({"meta": dict(self.meta)} if self.meta else {}),
        }


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint closed intervals, sorted; may be empty."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if not lo <= hi:
                raise ValueError(f"interval [{lo}, {hi}] has lo > hi")
        for (_, prev_hi), (lo, _) in zip(ivs, ivs[1:]):
            if not prev_hi < lo:
                raise ValueError("intervals must be sorted and pairwise disjoint")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def single(cls, lo: float, hi: float) -> IntervalSet:
        return cls(((lo, hi),))

    @classmethod
    def empty(cls) -> IntervalSet:
        return cls(())

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def length(self) -> float:
        return math.fsum(hi - lo for lo, hi in self.intervals)

    def contains(self, c: float) -> bool:
        return any(lo <= c <= hi for lo, hi in self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]
