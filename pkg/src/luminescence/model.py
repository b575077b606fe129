"""Reaction systems: radiation triplets, model specs and propensities.

A model is a pumping rate ``mu0`` (the implicit triplet ``(1, 0, -1)``) plus
``d >= 1`` radiation channels ``(k, r, s)`` with rates ``mu_i``: a cluster of
``k`` particles holding ``r`` excited ones relaxes ``s`` of them.

Model files are JSON::

    {
      "mu0": 1.0,
      "channels": [{"k": 2, "r": 2, "s": 1, "mu": 1.0}],
      "propensity_mode": "density"
    }

``propensity_mode`` is optional (default ``"density"``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from ._cluster import cluster_factor
from .errors import (
    DuplicateTriplet,
    ModelFileError,
    NonPositiveRate,
    StateOutOfRange,
    TripletOrderViolation,
)

PROPENSITY_MODES = ("density", "binomial")
BUNDLED_MODELS = ("linear", "q222", "q221", "q211", "c333", "d2_221_333")


@dataclass(frozen=True, order=True)
class ReactionTriplet:
    """One radiation channel ``(k, r, s)`` with ``k >= r >= s >= 1``."""

    k: int
    r: int
    s: int

    def __post_init__(self):
        for name in ("k", "r", "s"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise TripletOrderViolation(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.k >= self.r >= self.s >= 1:
            raise TripletOrderViolation(
                f"triplet ({self.k},{self.r},{self.s}) violates k >= r >= s >= 1"
            )

    def __str__(self):
        return f"({self.k},{self.r},{self.s})"


class Channel(NamedTuple):
    triplet: ReactionTriplet
    mu: float

    @property
    def k(self):
        return self.triplet.k

    @property
    def r(self):
        return self.triplet.r

    @property
    def s(self):
        return self.triplet.s


@dataclass(frozen=True)
class ModelSpec:
    """Pumping rate plus an ordered, non-empty tuple of radiation channels.

    ``channels`` accepts any iterable of ``(triplet, mu)`` pairs where the
    triplet may be a :class:`ReactionTriplet` or a plain ``(k, r, s)`` tuple.
    Channel ``i`` of the model (1-based everywhere in this package) is
    ``channels[i - 1]``; index 0 is reserved for pumping.
    """

    mu0: float
    channels: tuple = field(default_factory=tuple)
    propensity_mode: str = "density"

    def __post_init__(self):
        chans = []
        for item in self.channels:
            triplet, mu = item
            if not isinstance(triplet, ReactionTriplet):
                triplet = ReactionTriplet(*triplet)
            chans.append(Channel(triplet, float(mu)))
        object.__setattr__(self, "channels", tuple(chans))
        object.__setattr__(self, "mu0", float(self.mu0))
        validate_model(self)

    @property
    def d(self) -> int:
        return len(self.channels)

    @property
    def k(self) -> np.ndarray:
        return np.array([c.k for c in self.channels])

    @property
    def r(self) -> np.ndarray:
        return np.array([c.r for c in self.channels])

    @property
    def s(self) -> np.ndarray:
        return np.array([c.s for c in self.channels])

    @property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self.channels])

    def with_rates(self, mu0=None, mu: Iterable[float] | None = None) -> "ModelSpec":
        """Copy of the model with pumping and/or channel rates replaced."""
        mu = list(self.mu) if mu is None else list(mu)
        return ModelSpec(
            mu0=self.mu0 if mu0 is None else mu0,
            channels=[(c.triplet, m) for c, m in zip(self.channels, mu)],
            propensity_mode=self.propensity_mode,
        )

    def with_mode(self, mode: str) -> "ModelSpec":
        return ModelSpec(self.mu0, self.channels, mode)

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0,
            "channels": [
                {"k": c.k, "r": c.r, "s": c.s, "mu": c.mu} for c in self.channels
            ],
            "propensity_mode": self.propensity_mode,
        }


def _check_rate(value, what):
    if not (isinstance(value, float) and math.isfinite(value) and value > 0.0):
        raise NonPositiveRate(f"{what} must be strictly positive and finite, got {value!r}")


def validate_model(spec: ModelSpec) -> ModelSpec:
    """Return ``spec`` if every model invariant holds, else raise."""
    if spec.propensity_mode not in PROPENSITY_MODES:
        raise ValueError(f"unknown propensity_mode {spec.propensity_mode!r}")
    if not spec.channels:
        raise ValueError("a model needs at least one radiation channel")
    _check_rate(spec.mu0, "mu0")
    seen = set()
    for i, chan in enumerate(spec.channels, start=1):
        if not (chan.k >= chan.r >= chan.s >= 1):
            raise TripletOrderViolation(f"channel {i}: {chan.triplet} violates k >= r >= s >= 1")
        _check_rate(chan.mu, f"mu of channel {i}")
        if chan.triplet in seen:
            raise DuplicateTriplet(f"channel {i}: triplet {chan.triplet} appears twice")
        seen.add(chan.triplet)
    return spec


def propensities(spec: ModelSpec, N: int, m: int) -> np.ndarray:
    """Transition rates out of excited count ``m`` in a system of ``N`` particles.

    Entry 0 is pumping, ``mu0 * (N - m)``. Entry ``i`` is radiation through
    channel ``i``:

    * density mode: ``N * mu_i * Q(m/N, r_i) * Q(1 - m/N, k_i - r_i)``
    * binomial mode: ``mu_i / N**(k_i - 1) * C(m, r_i) * C(N - m, k_i - r_i)``

    Density-mode values are polynomial and stay positive for ``0 < m < N``
    even where the binomial count vanishes; see :func:`feasible_propensities`
    for the rates the simulator actually uses.
    """
    N = int(N)
    m = int(m)
    if N < 1 or not 0 <= m <= N:
        raise StateOutOfRange(f"need 0 <= m <= N with N >= 1, got m={m}, N={N}")
    out = np.empty(spec.d + 1)
    out[0] = spec.mu0 * (N - m)
    if spec.propensity_mode == "binomial":
        if N < max(c.k for c in spec.channels):
            raise StateOutOfRange(f"binomial mode needs N >= max k_i, got N={N}")
        for i, c in enumerate(spec.channels, start=1):
            out[i] = c.mu / N ** (c.k - 1) * math.comb(m, c.r) * math.comb(N - m, c.k - c.r)
    else:
        x = m / N
        for i, c in enumerate(spec.channels, start=1):
            out[i] = N * c.mu * cluster_factor(x, c.k, c.r)
    return out


def feasible_propensities(spec: ModelSpec, N: int, m: int) -> np.ndarray:
    """:func:`propensities` with jumps that would leave ``[0, N]`` switched off."""
    out = propensities(spec, N, m)
    out[1:][m < spec.s] = 0.0
    return out


def fluid_drift(spec: ModelSpec, x0):
    """Law-of-large-numbers velocities ``(dx0/dt, dx_1/dt, ..., dx_d/dt)`` at ``x0``."""
    flux = np.array([c.mu * c.s * cluster_factor(x0, c.k, c.r) for c in spec.channels])
    return np.concatenate(([spec.mu0 * (1.0 - x0) - flux.sum()], flux))


# -- model documents ---------------------------------------------------------

def model_from_dict(doc) -> ModelSpec:
    """Build a :class:`ModelSpec` from a parsed JSON document.

    Structural problems raise :class:`ModelFileError` naming the field path
    (``channels[1].k``); semantic ones raise the model's own errors.
    """
    if not isinstance(doc, dict):
        raise ModelFileError("", "model document must be a JSON object")
    extra = set(doc) - {"mu0", "channels", "propensity_mode", "name"}
    if extra:
        raise ModelFileError(sorted(extra)[0], "unknown field")
    mu0 = _number(doc, "mu0", "mu0")
    channels = doc.get("channels")
    if not isinstance(channels, list) or not channels:
        raise ModelFileError("channels", "expected a non-empty list")
    parsed = []
    for i, item in enumerate(channels):
        where = f"channels[{i}]"
        if not isinstance(item, dict):
            raise ModelFileError(where, "expected an object with k, r, s, mu")
        extra = set(item) - {"k", "r", "s", "mu"}
        if extra:
            raise ModelFileError(f"{where}.{sorted(extra)[0]}", "unknown field")
        ints = []
        for key in ("k", "r", "s"):
            value = item.get(key)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ModelFileError(f"{where}.{key}", f"expected positive integer, got {value!r}")
            ints.append(value)
        parsed.append((ReactionTriplet(*ints), _number(item, "mu", f"{where}.mu")))
    mode = doc.get("propensity_mode", "density")
    if mode not in PROPENSITY_MODES:
        raise ModelFileError("propensity_mode", f"expected one of {PROPENSITY_MODES}, got {mode!r}")
    return ModelSpec(mu0=mu0, channels=parsed, propensity_mode=mode)


def _number(doc, key, path):
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFileError(path, f"expected a number, got {value!r}")
    return float(value)


def load_model(source) -> ModelSpec:
    """Load a model from a JSON file path or a bundled model name.

    ``"linear"`` and, when no such file exists, ``"linear.json"`` both name
    the bundled linear model.
    """
    if isinstance(source, str) and source not in BUNDLED_MODELS and not Path(source).exists():
        stem = source[:-5] if source.endswith(".json") else None
        if stem in BUNDLED_MODELS and Path(source).name == source:
            source = stem
    if isinstance(source, str) and source in BUNDLED_MODELS:
        text = resources.files("luminescence.models").joinpath(f"{source}.json").read_text()
        where = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ModelFileError("", f"cannot read {path}: {exc.strerror}") from None
        where = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError("", f"{where}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return model_from_dict(doc)


def dump_model(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
