"""Bounded discrete priors.

Every prior is a finite list of atoms ``(value, weight)``. Exact Gibbs
enumeration needs a finite single-site state space, so continuous bounded
priors enter only through :func:`quantize_prior`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

NORMALIZATION_TOL = 1e-12

PriorSpec = Union[str, Sequence[Sequence[float]], "DiscretePrior"]


class PriorError(ValueError):
    """Raised for malformed prior specifications."""


@dataclass(frozen=True)
class DiscretePrior:
    values: tuple[float, ...]
    weights: tuple[float, ...]
    bound: float
    name: str = "custom"

    def __post_init__(self):
        if len(self.values) == 0:
            raise PriorError("prior needs at least one atom")
        if len(self.values) != len(self.weights):
            raise PriorError("values and weights differ in length")
        if abs(sum(self.weights) - 1.0) > NORMALIZATION_TOL:
            raise PriorError(f"weights sum to {sum(self.weights)!r}, expected 1")
        if min(self.weights) < 0:
            raise PriorError("negative weight")
        if max(abs(v) for v in self.values) > self.bound:
            raise PriorError("atom outside the stated support bound")

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values, self.weights))

    @property
    def n_atoms(self) -> int:
        return len(self.values)

    @property
    def values_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        idx = rng.choice(self.n_atoms, size=size, p=self.weights_array)
        return self.values_array[idx]

    def to_spec(self):
        """Config-file representation (list of ``[value, weight]`` pairs)."""
        return [[v, w] for v, w in self.atoms]


def _from_atoms(atoms, name="custom") -> DiscretePrior:
    atoms = list(atoms)
    if not atoms:
        raise PriorError("empty atom list")
    values, weights = [], []
    for atom in atoms:
        if len(atom) != 2:
            raise PriorError(f"atom {atom!r} is not a (value, weight) pair")
        v, w = float(atom[0]), float(atom[1])
        if not (math.isfinite(v) and math.isfinite(w)):
            raise PriorError(f"non-finite atom {atom!r}")
        if w < 0:
            raise PriorError(f"negative weight in atom {atom!r}")
        values.append(v)
        weights.append(w)
    total = math.fsum(weights)
    if total <= 0:
        raise PriorError("weights sum to zero")
    weights = [w / total for w in weights]
    # re-normalize the largest weight so the sum is 1 to working precision
    residual = 1.0 - math.fsum(weights)
    imax = int(np.argmax(weights))
    weights[imax] += residual
    bound = max(abs(v) for v in values)
    return DiscretePrior(tuple(values), tuple(weights), bound, name)


def make_prior(spec: PriorSpec) -> DiscretePrior:
    """Build a prior from a name or an explicit atom list.

    Accepted names:

    * ``"rademacher"``: mass 1/2 at -1 and +1.
    * ``"uniform:v1,v2,..."``: equal mass on the listed values.
    * ``"biased-binary:q"``: mass ``q`` at +1 and ``1 - q`` at -1.

    Atom lists are ``[[value, weight], ...]`` and are normalized.
    """
    if isinstance(spec, DiscretePrior):
        return spec
    if isinstance(spec, str):
        name, _, arg = spec.strip().partition(":")
        name = name.lower()
        if name == "rademacher" and not arg:
            return _from_atoms([(-1.0, 0.5), (1.0, 0.5)], "rademacher")
        if name == "uniform":
            try:
                vals = [float(a) for a in arg.split(",") if a.strip()]
            except ValueError as exc:
                raise PriorError(f"bad uniform prior {spec!r}") from exc
            if not vals:
                raise PriorError("uniform prior needs at least one value")
            return _from_atoms([(v, 1.0) for v in vals], spec)
        if name == "biased-binary":
            try:
                q = float(arg)
            except ValueError as exc:
                raise PriorError(f"bad biased-binary parameter in {spec!r}") from exc
            if not 0.0 <= q <= 1.0:
                raise PriorError(f"biased-binary parameter must lie in [0, 1], got {q}")
            return _from_atoms([(-1.0, 1.0 - q), (1.0, q)], spec)
        raise PriorError(f"unknown prior name {spec!r}")
    return _from_atoms(spec)


def prior_moments(prior: DiscretePrior) -> tuple[float, float]:
    """Return ``(mean, second_moment)``."""
    v, w = prior.values_array, prior.weights_array
    return float(np.dot(w, v)), float(np.dot(w, v * v))


def quantize_prior(ppf, k: int, name: str = "quantized") -> DiscretePrior:
    """Approximate a bounded continuous law by ``k`` equal-mass atoms.

    ``ppf`` is the quantile function; atoms sit at the mid-quantiles
    ``(i + 1/2) / k``.
    """
    if k < 1:
        raise PriorError("k must be >= 1")
    q = (np.arange(k) + 0.5) / k
    vals = np.asarray(ppf(q), dtype=float)
    return _from_atoms([(v, 1.0) for v in vals], name)
