"""Data-generating processes for the Monte Carlo harness.

Every process draws in two stages: the treated units' effects (plus whatever
latent variables they are built from), then the untreated outcomes and
covariates given those effects. Keeping the stages apart lets the engine
re-draw outcomes with the effects held fixed, which is how conditional
(on realized effects) coverage is estimated.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .. import errors
from ..core import Dataset
from ..estimators import average


class DgpKind(str, enum.Enum):
    IID_NORMAL = "iid_normal"
    WEATHER_MIXTURE = "weather_mixture"
    DETERMINISTIC_HETERO = "deterministic_hetero"
    APPENDIX_A = "appendix_a"
    APPENDIX_B = "appendix_b"
    FERMAN_SCALE = "ferman_scale"
    UNEQUAL_VARIANCE = "unequal_variance"


_ALIASES = {
    "IidNormal": DgpKind.IID_NORMAL,
    "WeatherMixture": DgpKind.WEATHER_MIXTURE,
    "DeterministicHetero": DgpKind.DETERMINISTIC_HETERO,
    "AppendixA": DgpKind.APPENDIX_A,
    "AppendixB": DgpKind.APPENDIX_B,
    "FermanScaleModel": DgpKind.FERMAN_SCALE,
    "UnequalVarianceDemo": DgpKind.UNEQUAL_VARIANCE,
}

DEFAULTS: dict[DgpKind, dict[str, Any]] = {
    DgpKind.IID_NORMAL: {"n1": 1, "n0": 19, "mu": 0.0, "sigma": 1.0, "alpha": 0.0, "alpha_sd": 0.0},
    DgpKind.WEATHER_MIXTURE: {
        "n1": 2, "n0": 200, "mu": 0.0, "sigma": 1.0, "tau": 2.0, "pi": 0.5, "independent": True, "kappa": 2.0,
    },
    DgpKind.DETERMINISTIC_HETERO: {"alphas": (1.0, 3.0), "n0": 50, "mu": 0.0, "sigma": 1.0},
    DgpKind.APPENDIX_A: {"n0": 1},
    DgpKind.APPENDIX_B: {"mu": 0.0, "delta": 10.0, "iota": None},
    DgpKind.FERMAN_SCALE: {
        "n1": 2, "n0": 2000, "mu": 0.0, "theta1": 1.0, "theta2": 4.0,
        "x0_lo": 1.0, "x0_hi": 20.0, "x1_lo": 1.0, "x1_hi": 2.0, "alpha": 1.0, "alpha_sd": 1.0,
    },
    DgpKind.UNEQUAL_VARIANCE: {"n1": 2, "n0": 50, "mu": 0.0, "sigma": 1.0, "alpha": 0.0, "spread": 3.0},
}

# effects take finitely many values for these kinds, so strata are exact patterns
DISCRETE_EFFECTS = {DgpKind.WEATHER_MIXTURE, DgpKind.DETERMINISTIC_HETERO, DgpKind.UNEQUAL_VARIANCE}


def parse_kind(value) -> DgpKind:
    if isinstance(value, DgpKind):
        return value
    if value in _ALIASES:
        return _ALIASES[value]
    try:
        return DgpKind(str(value).lower())
    except ValueError:
        raise errors.UnknownKind(f"unknown DGP kind {value!r}") from None


def _coerce(default, value):
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            return tuple(float(v) for v in value.split(",") if v.strip())
        return tuple(float(v) for v in value)
    if default is None:
        return None if value is None else float(value)
    return value


@dataclass(frozen=True)
class DgpSpec:
    kind: DgpKind
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = parse_kind(self.kind)
        defaults = DEFAULTS[kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise errors.ConfigError(f"unknown parameters for {kind.value}: {sorted(unknown)}")
        merged = {k: _coerce(v, self.params.get(k, v)) for k, v in defaults.items()}
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)
        if not 0 <= int(self.seed) < 2**64:
            raise errors.ConfigError("seed must be a 64-bit unsigned integer")
        _check(kind, merged)

    @property
    def n1(self) -> int:
        if self.kind is DgpKind.DETERMINISTIC_HETERO:
            return len(self.params["alphas"])
        if self.kind is DgpKind.APPENDIX_A:
            return 1
        if self.kind is DgpKind.APPENDIX_B:
            return 2
        return self.params["n1"]

    @property
    def n0(self) -> int:
        return 1 if self.kind is DgpKind.APPENDIX_B else self.params["n0"]

    @property
    def has_covariates(self) -> bool:
        return self.kind is DgpKind.FERMAN_SCALE

    @property
    def discrete_effects(self) -> bool:
        if self.kind is DgpKind.IID_NORMAL:
            return self.params["alpha_sd"] == 0
        return self.kind in DISCRETE_EFFECTS

    def att(self) -> float:
        p = self.params
        k = self.kind
        if k in (DgpKind.IID_NORMAL, DgpKind.FERMAN_SCALE, DgpKind.UNEQUAL_VARIANCE):
            return float(p["alpha"])
        if k is DgpKind.WEATHER_MIXTURE:
            return float(p["tau"] * p["pi"])
        if k is DgpKind.DETERMINISTIC_HETERO:
            return float(np.mean(p["alphas"]))
        if k is DgpKind.APPENDIX_A:
            return 0.0
        return float(p["delta"] * p["mu"])

    def to_dict(self) -> dict[str, Any]:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind.value, "params": params, "seed": int(self.seed)}


def _check(kind: DgpKind, p: Mapping[str, Any]) -> None:
    for key in ("n1", "n0"):
        if key in p and p[key] < 1:
            raise errors.ConfigError(f"{key} must be at least 1")
    for key in ("sigma", "theta1"):
        if key in p and not p[key] > 0:
            raise errors.ConfigError(f"{key} must be positive")
    for key in ("alpha_sd", "spread", "theta2"):
        if key in p and p[key] < 0:
            raise errors.ConfigError(f"{key} must be non-negative")
    if "pi" in p and not 0.0 <= p["pi"] <= 1.0:
        raise errors.ConfigError("pi must be a probability")
    if kind is DgpKind.DETERMINISTIC_HETERO and not p["alphas"]:
        raise errors.ConfigError("alphas must be non-empty")
    if kind is DgpKind.FERMAN_SCALE:
        if not 0 < p["x0_lo"] <= p["x0_hi"] or not 0 < p["x1_lo"] <= p["x1_hi"]:
            raise errors.ConfigError("covariate ranges must be positive and ordered")


class Effects(NamedTuple):
    alphas: np.ndarray
    latent: np.ndarray | None


class Draw(NamedTuple):
    dataset: Dataset
    y0: np.ndarray  # untreated outcomes, dataset order (treated first)
    alphas: np.ndarray
    satt: float
    att: float


def replication_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent stream for ``(seed, *path)``; no dependence on scheduling.

    Counter-based: the seed and the leading path entry form the Philox key, the
    remaining path entries (at most three) occupy the high counter words.
    """
    if not 1 <= len(path) <= 4:
        raise ValueError("path must have between 1 and 4 entries")
    stream, *rest = path
    key = np.array([seed, stream], dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    counter[1 : 1 + len(rest)] = rest
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derived_seed(seed: int, *path: int) -> int:
    lo, hi = np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def draw_effects(spec: DgpSpec, rng: np.random.Generator) -> Effects:
    p, k, n1 = spec.params, spec.kind, spec.n1
    if k is DgpKind.IID_NORMAL or k is DgpKind.FERMAN_SCALE:
        a = p["alpha"] + p["alpha_sd"] * rng.standard_normal(n1) if p["alpha_sd"] > 0 else np.full(n1, p["alpha"])
        return Effects(a, None)
    if k is DgpKind.WEATHER_MIXTURE:
        shocks = (rng.random(n1) < p["pi"]).astype(float)
        return Effects(p["tau"] * shocks, shocks)
    if k is DgpKind.DETERMINISTIC_HETERO:
        return Effects(np.array(p["alphas"], dtype=float), None)
    if k is DgpKind.APPENDIX_A:
        y0 = rng.standard_normal(1)
        # treated outcome is twice the untreated one, so the effect equals Y(0)
        return Effects(2.0 * y0 - y0, y0)
    if k is DgpKind.APPENDIX_B:
        y0 = p["mu"] + rng.standard_normal(2)
        return Effects(p["delta"] * y0, y0)
    if k is DgpKind.UNEQUAL_VARIANCE:
        signs = np.where(rng.random(n1) < 0.5, -1.0, 1.0)
        return Effects(p["alpha"] + p["spread"] * signs, None)
    raise errors.UnknownKind(k)


def draw_outcomes(spec: DgpSpec, effects: Effects, rng: np.random.Generator) -> Draw:
    """Untreated outcomes (and covariates) given the treated effects."""
    p, k, n1, n0 = spec.params, spec.kind, spec.n1, spec.n0
    x = None
    if k in (DgpKind.IID_NORMAL, DgpKind.DETERMINISTIC_HETERO, DgpKind.UNEQUAL_VARIANCE):
        y0 = p["mu"] + p["sigma"] * rng.standard_normal(n1 + n0)
    elif k is DgpKind.WEATHER_MIXTURE:
        load = 0.0 if p["independent"] else p["kappa"]
        control_shocks = (rng.random(n0) < p["pi"]).astype(float)
        shocks = np.concatenate([effects.latent, control_shocks])
        y0 = p["mu"] + p["sigma"] * rng.standard_normal(n1 + n0) - load * (shocks - p["pi"])
    elif k is DgpKind.APPENDIX_A:
        y0 = np.concatenate([effects.latent, rng.standard_normal(n0)])
    elif k is DgpKind.APPENDIX_B:
        y0 = np.concatenate([effects.latent, p["mu"] + rng.standard_normal(1)])
    elif k is DgpKind.FERMAN_SCALE:
        x = np.concatenate([
            rng.uniform(p["x1_lo"], p["x1_hi"], n1),
            rng.uniform(p["x0_lo"], p["x0_hi"], n0),
        ])
        y0 = p["mu"] + np.sqrt(p["theta1"] + p["theta2"] / x) * rng.standard_normal(n1 + n0)
    else:
        raise errors.UnknownKind(k)
    d = np.concatenate([np.ones(n1, dtype=np.int8), np.zeros(n0, dtype=np.int8)])
    y = y0.copy()
    y[:n1] += effects.alphas
    ds = Dataset.from_arrays(y, d, x)
    return Draw(ds, y0, effects.alphas, average(effects.alphas), spec.att())


def draw(spec: DgpSpec, replication_index: int) -> Draw:
    """Replication ``replication_index`` of ``spec``; deterministic in
    ``(spec.seed, replication_index)``."""
    rng = replication_rng(spec.seed, 0, replication_index)
    return draw_outcomes(spec, draw_effects(spec, rng), rng)


class Decomposition(NamedTuple):
    heterogeneity: float
    treated_noise: float
    control_noise: float

    @property
    def total(self) -> float:
        return self.heterogeneity + self.treated_noise + self.control_noise


def error_decomposition(sample: Draw, beta: float | None = None) -> Decomposition:
    """Split ``beta_DM - beta`` into effect heterogeneity, treated untreated-outcome
    noise and control untreated-outcome noise."""
    beta = sample.att if beta is None else beta
    ds = sample.dataset
    t = ds.d == 1
    return Decomposition(
        average(sample.alphas - beta),
        average(sample.y0[t]),
        -average(sample.y0[~t]),
    )
