"""Iterated function systems consisting of convex contractions.

A system is a finite family of maps (f_i) on a box together with a table
of constants (a_ij, b_ij, c_ij) such that

    |f_i f_j x - f_i f_j y| <= a_ij |x - y| + b_ij |f_i x - f_i y| + c_ij |f_j x - f_j y|

for all x, y and d = max(a_ij + b_ij + c_ij) < 1. The maps themselves need
not be contractions. This module holds the table checks, the set function
F_S(B) = U f_i(B), the attractor loop with its a-priori error bound, and
the x_n / y_n sequences used to check the convergence argument numerically.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from geometry import PointSet, decimate, delta_sup, hausdorff
from ifs_errors import (
    AlphaConditionError,
    BudgetExceededError,
    CoefficientError,
    DimensionMismatchError,
    MapError,
    NonConvergenceError,
)
from maps import AffineMap, DomainBox, MapDescriptor, check_self_map, lipschitz_report

logger = logging.getLogger(__name__)

BETA_SLACK = 1e-12
# Share of falsifier pairs drawn as close neighbours rather than independently.
LOCAL_PAIR_FRACTION = 0.5
LOCAL_PAIR_RADIUS = 1e-2
WORD_BUDGET = 3 ** 12
MAX_CLOUD_POINTS = 1 << 21


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """The (a_ij, b_ij, c_ij) constants indexed by map symbols."""
    symbols: Tuple[str, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        k = len(self.symbols)
        if k == 0:
            raise CoefficientError("Coefficient table needs at least one symbol")
        if len(set(self.symbols)) != k:
            raise CoefficientError(f"Duplicate symbols in coefficient table: {self.symbols}")
        for name in ('a', 'b', 'c'):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (k, k):
                raise CoefficientError(f"Coefficient matrix '{name}' must be {k}x{k}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise CoefficientError(f"Coefficient matrix '{name}' has non-finite entries")
            if np.any(arr < 0):
                raise CoefficientError(f"Coefficient matrix '{name}' has negative entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, 'symbols', tuple(self.symbols))

    @classmethod
    def zeros(cls, symbols: Sequence[str]) -> 'CoefficientTable':
        k = len(symbols)
        return cls(tuple(symbols), np.zeros((k, k)), np.zeros((k, k)), np.zeros((k, k)))

    @classmethod
    def from_entries(cls, symbols: Sequence[str], entries: Iterable[Mapping[str, Any]]) -> 'CoefficientTable':
        """Sparse {i, j, a, b, c} entries; anything not listed is 0."""
        index = {s: n for n, s in enumerate(symbols)}
        k = len(symbols)
        mats = {name: np.zeros((k, k)) for name in ('a', 'b', 'c')}
        seen = set()
        for entry in entries:
            i, j = str(entry['i']), str(entry['j'])
            if i not in index or j not in index:
                raise CoefficientError(f"Coefficient entry ({i}, {j}) references an unknown map")
            if (i, j) in seen:
                raise CoefficientError(f"Coefficient entry ({i}, {j}) given twice")
            seen.add((i, j))
            for name in ('a', 'b', 'c'):
                mats[name][index[i], index[j]] = float(entry.get(name, 0.0))
        return cls(tuple(symbols), mats['a'], mats['b'], mats['c'])

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise CoefficientError(f"Unknown symbol '{symbol}' in coefficient table") from None

    def entry(self, i: str, j: str) -> Tuple[float, float, float]:
        p, q = self.index(i), self.index(j)
        return float(self.a[p, q]), float(self.b[p, q]), float(self.c[p, q])

    def with_entry(self, i: str, j: str, a: float, b: float, c: float) -> 'CoefficientTable':
        p, q = self.index(i), self.index(j)
        mats = [m.copy() for m in (self.a, self.b, self.c)]
        for m, value in zip(mats, (a, b, c)):
            m[p, q] = value
        return CoefficientTable(self.symbols, *mats)

    @property
    def d_matrix(self) -> np.ndarray:
        return self.a + self.b + self.c

    @property
    def d(self) -> float:
        return float(self.d_matrix.max())

    def to_entries(self) -> List[Dict[str, Any]]:
        """Non-zero entries in row-major order."""
        out = []
        for p, i in enumerate(self.symbols):
            for q, j in enumerate(self.symbols):
                a, b, c = float(self.a[p, q]), float(self.b[p, q]), float(self.c[p, q])
                if a or b or c:
                    out.append({'i': i, 'j': j, 'a': a, 'b': b, 'c': c})
        return out


def validate_alpha(table: CoefficientTable) -> float:
    """Return d = max d_ij, rejecting the table when d >= 1."""
    dm = table.d_matrix
    bad = np.argwhere(dm >= 1.0)
    if bad.size:
        p, q = (int(v) for v in bad[0])
        i, j = table.symbols[p], table.symbols[q]
        raise AlphaConditionError(
            f"Condition alpha fails at ({i}, {j}): a+b+c = {dm[p, q]:.6g} >= 1", i, j, float(dm[p, q]))
    return table.d


@dataclass(frozen=True, eq=False)
class IFSSystem:
    """Maps indexed by symbol, their coefficient table and the ambient box."""
    maps: Dict[str, MapDescriptor]
    table: CoefficientTable
    box: DomainBox
    name: str = ''
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.maps:
            raise MapError("An IFS needs at least one map")
        object.__setattr__(self, 'maps', dict(self.maps))
        for symbol, f in self.maps.items():
            if f.dim != self.box.dim:
                raise DimensionMismatchError(f"Map '{symbol}' has dimension {f.dim}, box has {self.box.dim}")
        if tuple(self.maps) != self.table.symbols:
            raise CoefficientError(
                f"Coefficient table symbols {self.table.symbols} do not match maps {tuple(self.maps)}")
        for symbol, f in self.maps.items():
            check_self_map(f, self.box, symbol=symbol)
        validate_alpha(self.table)
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def symbols(self) -> Tuple[str, ...]:
        return self.table.symbols

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def d(self) -> float:
        return self.table.d

    def with_table(self, table: CoefficientTable) -> 'IFSSystem':
        return IFSSystem(self.maps, table, self.box, self.name, self.threads)


def synthesize_affine_coeffs(maps: Mapping[str, MapDescriptor], box: DomainBox) -> CoefficientTable:
    """Sound table for affine maps: c_ij = Lip(f_i), a_ij = b_ij = 0."""
    symbols = tuple(maps)
    k = len(symbols)
    c = np.zeros((k, k))
    for p, i in enumerate(symbols):
        f = maps[i]
        if not isinstance(f, AffineMap):
            raise MapError(f"Coefficient synthesis needs affine maps; '{i}' is {type(f).__name__}")
        lip = lipschitz_report(f, box).value
        if lip >= 1.0:
            raise AlphaConditionError(f"Map '{i}' has Lipschitz constant {lip:.6g} >= 1", i, i, lip)
        c[p, :] = lip
    logger.debug(f"Synthesized affine coefficients: c rows {c[:, 0].tolist()}")
    return CoefficientTable(symbols, np.zeros((k, k)), np.zeros((k, k)), c)


@dataclass(frozen=True, eq=False)
class BetaCounterexample:
    i: str
    j: str
    x: np.ndarray
    y: np.ndarray
    lhs: float
    rhs: float

    def to_dict(self) -> Dict[str, Any]:
        return {'i': self.i, 'j': self.j, 'x': self.x.tolist(), 'y': self.y.tolist(),
                'lhs': self.lhs, 'rhs': self.rhs}


def _norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(v), axis=1))


def falsify_beta(system: IFSSystem, samples: int, seed: int) -> Optional[BetaCounterexample]:
    """Search seeded random pairs for the worst violation of the beta inequality.

    Half of the pairs are independent uniform draws from the box, half are
    close neighbours. Returning None is evidence, not proof.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    box = system.box
    n_local = int(samples * LOCAL_PAIR_FRACTION)
    worst: Optional[BetaCounterexample] = None
    worst_gap = BETA_SLACK
    for i in system.symbols:
        fi = system.maps[i]
        for j in system.symbols:
            fj = system.maps[j]
            a, b, c = system.table.entry(i, j)
            x = box.sample(samples, rng)
            y = box.sample(samples, rng)
            shift = rng.uniform(-LOCAL_PAIR_RADIUS, LOCAL_PAIR_RADIUS, size=(n_local, box.dim)) * box.extent
            y[:n_local] = np.clip(x[:n_local] + shift, box.lo, box.hi)
            fjx, fjy = fj.apply(x), fj.apply(y)
            lhs = _norms(fi.apply(fjx) - fi.apply(fjy))
            rhs = a * _norms(x - y) + b * _norms(fi.apply(x) - fi.apply(y)) + c * _norms(fjx - fjy)
            gap = lhs - rhs
            k = int(np.argmax(gap))
            logger.debug(f"beta({i},{j}): worst lhs-rhs = {gap[k]:.3e} over {samples} pairs")
            if gap[k] > worst_gap:
                worst_gap = float(gap[k])
                worst = BetaCounterexample(i, j, x[k].copy(), y[k].copy(), float(lhs[k]), float(rhs[k]))
    if worst is not None:
        logger.warning(f"beta violated at ({worst.i}, {worst.j}): lhs={worst.lhs:.6g} > rhs={worst.rhs:.6g}")
    else:
        logger.info(f"No beta violation found in {samples} pairs per (i, j)")
    return worst


def hutchinson(system: IFSSystem, B: PointSet) -> PointSet:
    """F_S(B): images of B under every map, concatenated in symbol order."""
    if B.dim != system.dim:
        raise DimensionMismatchError(f"Cloud dimension {B.dim} does not match system dimension {system.dim}")
    maps = [system.maps[s] for s in system.symbols]
    if system.threads > 1 and len(maps) > 1:
        with ThreadPoolExecutor(max_workers=system.threads) as pool:
            images = list(pool.map(lambda f: f.apply(B.points), maps))
    else:
        images = [f.apply(B.points) for f in maps]
    return PointSet(np.concatenate(images, axis=0))


def _guard_size(system: IFSSystem, B: PointSet, limit: int) -> None:
    predicted = len(B) * len(system.symbols)
    if predicted > limit:
        raise BudgetExceededError(
            f"Next cloud would hold {predicted} points (limit {limit}); use a positive decimation radius")


def iterate(system: IFSSystem, B: PointSet, n: int, eps_decimate: float = 0.0,
            max_points: int = MAX_CLOUD_POINTS) -> PointSet:
    """F_S^[n](B), decimated with eps_decimate after each step (0 only merges duplicates)."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    current = B
    for _ in range(n):
        _guard_size(system, current, max_points)
        current = decimate(hutchinson(system, current), eps_decimate, workers=system.threads)
    return current


@dataclass(frozen=True, eq=False)
class AttractorResult:
    cloud: PointSet
    iterations: int
    step_gap: float
    rate_bound: float
    decimation_budget: float

    def to_report(self, cloud_file: Optional[str] = None) -> Dict[str, Any]:
        return {
            'iterations': self.iterations,
            'step_gap': self.step_gap,
            'rate_bound': self.rate_bound,
            'decimation_budget': self.decimation_budget,
            'cloud_file': cloud_file,
        }


def attractor(system: IFSSystem, B0: PointSet, tol: float, eps_decimate: float, max_iter: int) -> AttractorResult:
    """Iterate B -> decimate(F_S(B)) until consecutive clouds are within tol.

    The returned rate_bound is the a-priori bound at the final step and
    decimation_budget the sum of the radii used; neither is folded into the
    other.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if eps_decimate < 0:
        raise ValueError(f"eps_decimate must be non-negative, got {eps_decimate}")
    if not system.box.contains(B0.points):
        raise ValueError("Initial cloud must lie inside the system box")
    logger.info(f"Attractor iteration for '{system.name}' from {len(B0)} points (tol={tol}, eps={eps_decimate})")
    current = B0
    budget = 0.0
    gap = float('inf')
    for n in range(1, max_iter + 1):
        _guard_size(system, current, MAX_CLOUD_POINTS)
        nxt = decimate(hutchinson(system, current), eps_decimate, workers=system.threads)
        budget += eps_decimate
        gap = hausdorff(current, nxt, workers=system.threads)
        logger.debug(f"Iteration {n}: {len(nxt)} points, step gap {gap:.3e}")
        if gap <= tol:
            bound = rate_certificate(system, B0, n)
            logger.info(f"Converged after {n} iterations: {len(nxt)} points, gap {gap:.3e}, rate bound {bound:.3e}")
            return AttractorResult(nxt, n, gap, bound, budget)
        current = nxt
    raise NonConvergenceError(
        f"Attractor iteration did not reach step gap {tol} within {max_iter} iterations (last gap {gap:.3e})",
        iterations=max_iter, last_state=current)


def rate_certificate(system: IFSSystem, B0: PointSet, n: int) -> float:
    """d^floor(n/2) / (1 - d) * (x_0 + x_1) with x_k taken for the pair (B0, F_S(B0))."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    FB = hutchinson(system, B0)
    x0 = delta_sup(B0, FB)
    x1 = max(delta_sup(f.image(B0), f.image(FB)) for f in system.maps.values())
    d = system.d
    return d ** (n // 2) / (1.0 - d) * (x0 + x1)


def walk_word_images(system: IFSSystem, clouds: Sequence[np.ndarray], n_max: int,
                     budget: int = WORD_BUDGET) -> Iterator[Tuple[Tuple[str, ...], List[np.ndarray]]]:
    """Depth-first walk over all words w of length <= n_max, yielding (w, [f_w(C) for C in clouds]).

    Children are built by prepending a symbol, f_{s w}(C) = f_s(f_w(C)), so
    each node costs one map application per cloud.
    """
    k = len(system.symbols)
    if k ** n_max > budget:
        allowed = 0
        while k ** (allowed + 1) <= budget:
            allowed += 1
        raise BudgetExceededError(
            f"{k}^{n_max} words exceed the enumeration budget {budget}; use depth <= {allowed}")
    stack: List[Tuple[Tuple[str, ...], List[np.ndarray]]] = [((), list(clouds))]
    while stack:
        word, images = stack.pop()
        yield word, images
        if len(word) < n_max:
            for s in reversed(system.symbols):
                f = system.maps[s]
                stack.append(((s,) + word, [f.apply(c) for c in images]))


@dataclass(frozen=True)
class XYDiagnostics:
    """x_k for k = 0..n_max and y_k = max(x_{k-1}, x_k) for k >= 1 (ys[0] is None)."""
    xs: Tuple[float, ...]
    ys: Tuple[Optional[float], ...]

    @property
    def n_max(self) -> int:
        return len(self.xs) - 1

    def to_dict(self) -> Dict[str, Any]:
        return {'x': list(self.xs), 'y': list(self.ys)}


def diagnostics_xy(system: IFSSystem, Y: PointSet, Z: PointSet, n_max: int,
                   budget: int = WORD_BUDGET) -> XYDiagnostics:
    """Exact x_k(Y, Z) = max over words w of length k of delta(f_w(Y), f_w(Z))."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if Y.dim != system.dim or Z.dim != system.dim:
        raise DimensionMismatchError("Diagnostic clouds must match the system dimension")
    xs = [0.0] * (n_max + 1)
    for word, (fy, fz) in walk_word_images(system, [Y.points, Z.points], n_max, budget):
        value = delta_sup(PointSet(fy), PointSet(fz))
        if value > xs[len(word)]:
            xs[len(word)] = value
    ys: List[Optional[float]] = [None] + [max(xs[k - 1], xs[k]) for k in range(1, n_max + 1)]
    return XYDiagnostics(tuple(xs), tuple(ys))


def iterate_gaps(system: IFSSystem, Y: PointSet, Z: PointSet, n_max: int) -> List[float]:
    """h(F_S^[k](Y), F_S^[k](Z)) for k = 0..n_max, without decimation."""
    gaps = []
    fy, fz = Y, Z
    for k in range(n_max + 1):
        if k:
            fy = iterate(system, fy, 1)
            fz = iterate(system, fz, 1)
        gaps.append(hausdorff(fy, fz, workers=system.threads))
    return gaps


@dataclass
class ProofCheck:
    """Indices k at which each inequality of the convergence argument fails."""
    violations: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())

    def to_dict(self) -> Dict[str, Any]:
        return {name: {'passed': not ks, 'violations': ks} for name, ks in self.violations.items()}


def check_proof_inequalities(diag: XYDiagnostics, d: float, slack: float = BETA_SLACK,
                             hausdorff_gaps: Optional[Sequence[float]] = None) -> ProofCheck:
    """Check y_{k+1} <= y_k, x_{k+1} <= d y_k, y_{k+2} <= d y_k and h(F^k Y, F^k Z) <= x_k."""
    xs, ys, n = diag.xs, diag.ys, diag.n_max
    check = ProofCheck()
    check.violations['y_non_increasing'] = [k for k in range(1, n) if ys[k + 1] > ys[k] + slack]
    check.violations['x_next_le_d_y'] = [k for k in range(1, n) if xs[k + 1] > d * ys[k] + slack]
    check.violations['y_two_step_le_d_y'] = [k for k in range(1, n - 1) if ys[k + 2] > d * ys[k] + slack]
    if hausdorff_gaps is not None:
        check.violations['hausdorff_le_x'] = [
            k for k, gap in enumerate(hausdorff_gaps[:n + 1]) if gap > xs[k] + slack]
    for name, ks in check.violations.items():
        if ks:
            logger.warning(f"Inequality '{name}' fails at k = {ks}")
    return check


def tail_bound(diag: XYDiagnostics, n: int, d: float) -> float:
    """Upper bound on sum_{k >= n} x_k from the computed values plus a geometric tail.

    Past the computed depth N, x_{N+2j-1} and x_{N+2j} are both <= d^j y_N.
    """
    N = diag.n_max
    if not 0 <= n <= N:
        raise ValueError(f"n must lie in [0, {N}], got {n}")
    return float(sum(diag.xs[n:]) + 2.0 * diag.ys[N] * d / (1.0 - d))


def continuity_of_hutchinson(system: IFSSystem, sequence: Sequence[PointSet],
                             reference: PointSet) -> List[Tuple[float, float]]:
    """(h(Y_n, Y), h(F_S(Y_n), F_S(Y))) along a sequence Y_n approaching Y."""
    FY = hutchinson(system, reference)
    out = []
    for Yn in sequence:
        out.append((hausdorff(Yn, reference, workers=system.threads),
                    hausdorff(hutchinson(system, Yn), FY, workers=system.threads)))
    return out
