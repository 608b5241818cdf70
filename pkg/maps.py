"""Closed-form maps f_i, word compositions and Picard iteration.

Word compositions follow the usual IFS convention: the word a1 a2 ... an
stands for f_a1 o f_a2 o ... o f_an, so the last symbol is applied first.
"""

import abc
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from geometry import PointSet, as_point, dist
from ifs_errors import (
    DimensionMismatchError,
    MapError,
    MapOutOfBoxError,
    NonConvergenceError,
    handle_numeric_exception,
)

logger = logging.getLogger(__name__)

LIPSCHITZ_SAMPLES = 10001
POWER_ITERATION_TOL = 1e-12
POWER_ITERATION_MAX = 10000
SELF_MAP_GRID_POINTS = 4096
SELF_MAP_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class DomainBox:
    """Axis-aligned box [lo, hi] standing in for the ambient space X."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.array(self.lo, dtype=float))
        hi = np.atleast_1d(np.array(self.hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError(f"Box bounds must be vectors of equal length, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("Box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"Box requires lo < hi componentwise, got lo={lo.tolist()} hi={hi.tolist()}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @property
    def dim(self) -> int:
        return int(self.lo.shape[0])

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def vertices(self) -> np.ndarray:
        corners = itertools.product(*zip(self.lo, self.hi))
        return np.array(list(corners), dtype=float)

    def grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(l, h, per_axis) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def contains(self, points: np.ndarray, atol: float = SELF_MAP_ATOL) -> bool:
        pts = np.atleast_2d(points)
        return bool(np.all(pts >= self.lo - atol) and np.all(pts <= self.hi + atol))

    def to_config(self) -> Dict[str, Any]:
        return {'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


class LipschitzBound(NamedTuple):
    value: float
    exact: bool


class MapDescriptor(abc.ABC):
    """A map R^dim -> R^dim given in closed form."""

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        ...

    @abc.abstractmethod
    def apply(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an (n, dim) array of points."""

    @abc.abstractmethod
    def to_config(self) -> Dict[str, Any]:
        ...

    def __call__(self, p) -> np.ndarray:
        return eval_map(self, p)

    def image(self, A: PointSet) -> PointSet:
        if A.dim != self.dim:
            raise DimensionMismatchError(f"Map of dimension {self.dim} applied to cloud of dimension {A.dim}")
        return PointSet(self.apply(A.points))


class AffineMap(MapDescriptor):
    """x -> matrix @ x + offset."""

    def __init__(self, matrix, offset) -> None:
        m = np.atleast_2d(np.array(matrix, dtype=float))
        b = np.atleast_1d(np.array(offset, dtype=float))
        if m.shape[0] != m.shape[1] or m.shape[0] != b.shape[0]:
            raise MapError(f"Affine map needs a square matrix matching its offset, got {m.shape} and {b.shape}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
            raise MapError("Affine map entries must be finite")
        m.setflags(write=False)
        b.setflags(write=False)
        self.matrix = m
        self.offset = b

    @property
    def dim(self) -> int:
        return int(self.offset.shape[0])

    @handle_numeric_exception
    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + self.offset

    def to_config(self) -> Dict[str, Any]:
        return {'type': 'affine', 'matrix': self.matrix.tolist(), 'offset': self.offset.tolist()}

    def __repr__(self) -> str:
        return f"AffineMap(matrix={self.matrix.tolist()}, offset={self.offset.tolist()})"


class Poly1DMap(MapDescriptor):
    """x -> c0 + c1 x + c2 x^2 + ... on the real line."""

    def __init__(self, coefficients: Sequence[float]) -> None:
        c = np.atleast_1d(np.array(coefficients, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise MapError("Polynomial map needs a non-empty coefficient list")
        if not np.all(np.isfinite(c)):
            raise MapError("Polynomial coefficients must be finite")
        c.setflags(write=False)
        self.coefficients = c

    @property
    def dim(self) -> int:
        return 1

    @handle_numeric_exception
    def apply(self, points: np.ndarray) -> np.ndarray:
        return P.polyval(points[:, 0], self.coefficients).reshape(-1, 1)

    @handle_numeric_exception
    def derivative(self, x: np.ndarray) -> np.ndarray:
        return P.polyval(x, P.polyder(self.coefficients))

    def to_config(self) -> Dict[str, Any]:
        return {'type': 'poly1d', 'coefficients': self.coefficients.tolist()}

    def __repr__(self) -> str:
        return f"Poly1DMap({self.coefficients.tolist()})"


class CompositeMap(MapDescriptor):
    """components[0] o components[1] o ... o components[-1]."""

    def __init__(self, components: Sequence[MapDescriptor]) -> None:
        parts = tuple(components)
        if not parts:
            raise MapError("Composite map needs at least one component")
        dims = {f.dim for f in parts}
        if len(dims) != 1:
            raise DimensionMismatchError(f"Composite components disagree on dimension: {sorted(dims)}")
        self.components = parts

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def apply(self, points: np.ndarray) -> np.ndarray:
        for f in reversed(self.components):
            points = f.apply(points)
        return points

    def to_config(self) -> Dict[str, Any]:
        return {'type': 'composite', 'components': [f.to_config() for f in self.components]}

    def __repr__(self) -> str:
        return f"CompositeMap({list(self.components)})"


def eval_map(f: MapDescriptor, p) -> np.ndarray:
    """Evaluate f at a single point."""
    x = as_point(p)
    if x.shape[0] != f.dim:
        raise DimensionMismatchError(f"Map of dimension {f.dim} evaluated at point of dimension {x.shape[0]}")
    return f.apply(x.reshape(1, -1))[0]


def compose_word(maps: Mapping[str, MapDescriptor], word: Sequence[str]) -> MapDescriptor:
    """f_{w1 w2 ... wn} = f_w1 o f_w2 o ... o f_wn."""
    if len(word) == 0:
        raise MapError("Cannot compose the empty word")
    unknown = [s for s in word if s not in maps]
    if unknown:
        raise MapError(f"Unknown map symbol(s) {unknown} in word {''.join(word)}")
    if len(word) == 1:
        return maps[word[0]]
    return CompositeMap([maps[s] for s in word])


def spectral_norm(matrix: np.ndarray) -> float:
    """Largest singular value; closed form up to 2x2, power iteration beyond."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = m.shape[0]
    if n == 1:
        return float(abs(m[0, 0]))
    if n == 2:
        frob = float(np.sum(np.square(m)))
        det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
        disc = max(0.0, frob * frob - 4.0 * det * det)
        return float(np.sqrt((frob + np.sqrt(disc)) / 2.0))
    gram = m.T @ m
    v = np.random.default_rng(0).normal(size=n)
    v /= np.linalg.norm(v)
    eig = 0.0
    for _ in range(POWER_ITERATION_MAX):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_eig = float(v @ gram @ v)
        if abs(new_eig - eig) <= POWER_ITERATION_TOL * max(1.0, new_eig):
            return float(np.sqrt(new_eig))
        eig = new_eig
    logger.warning("Power iteration did not settle; falling back to SVD for the spectral norm")
    return float(np.linalg.norm(m, 2))


def lipschitz_report(f: MapDescriptor, box: DomainBox) -> LipschitzBound:
    """Lipschitz bound of f on box, flagged exact or sampled."""
    if isinstance(f, AffineMap):
        return LipschitzBound(spectral_norm(f.matrix), True)
    if isinstance(f, Poly1DMap):
        xs = np.linspace(box.lo[0], box.hi[0], LIPSCHITZ_SAMPLES)
        return LipschitzBound(float(np.max(np.abs(f.derivative(xs)))), False)
    if isinstance(f, CompositeMap):
        parts = [lipschitz_report(g, box) for g in f.components]
        return LipschitzBound(float(np.prod([p.value for p in parts])), all(p.exact for p in parts))
    raise MapError(f"No Lipschitz analysis for {type(f).__name__}")


def lipschitz_bound(f: MapDescriptor, box: DomainBox) -> float:
    return lipschitz_report(f, box).value


def check_self_map(f: MapDescriptor, box: DomainBox, samples: int = 1000, seed: int = 0,
                   symbol: Optional[str] = None) -> None:
    """Raise MapOutOfBoxError unless f sends a dense sample of box into box.

    symbol, when given, is carried on the error.
    """
    per_axis = max(2, int(round(SELF_MAP_GRID_POINTS ** (1.0 / box.dim))))
    pts = np.concatenate([
        box.vertices(),
        box.grid(per_axis),
        box.sample(samples, np.random.default_rng(seed)),
    ])
    images = f.apply(pts)
    below = box.lo - images
    above = images - box.hi
    excess = np.maximum(below, above).max(axis=1)
    worst = int(np.argmax(excess))
    if excess[worst] > SELF_MAP_ATOL:
        raise MapOutOfBoxError(
            f"{f!r} maps {pts[worst].tolist()} to {images[worst].tolist()}, outside the box "
            f"[{box.lo.tolist()}, {box.hi.tolist()}]", symbol=symbol)


class PicardResult(NamedTuple):
    point: np.ndarray
    iterations: int
    residual: float


def picard_fixed_point(f: MapDescriptor, x0, tol: float, max_iter: int) -> PicardResult:
    """Iterate x -> f(x) until dist(x, f(x)) <= tol.

    The stopping rule is on the residual, not on the step: for a convex
    contraction single steps need not shrink, only pairs of steps do.
    """
    x = as_point(x0)
    fx = eval_map(f, x)
    residual = dist(x, fx)
    for iteration in range(max_iter + 1):
        logger.debug(f"Picard step {iteration}: x={x.tolist()} residual={residual:.3e}")
        if residual <= tol:
            logger.info(f"Picard iteration converged after {iteration} steps (residual {residual:.3e})")
            return PicardResult(x, iteration, residual)
        if iteration == max_iter:
            break
        x = fx
        fx = eval_map(f, x)
        residual = dist(x, fx)
    raise NonConvergenceError(
        f"Picard iteration did not reach residual {tol} within {max_iter} steps (last residual {residual:.3e})",
        iterations=max_iter, last_state=x)
