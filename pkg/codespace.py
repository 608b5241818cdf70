"""Code space: infinite words over the map symbols and the projection onto the attractor.

Infinite words are kept eventually periodic (preamble followed by a
repeating cycle), which is exact and dense in the code space. A stream
with an empty cycle is a truncation: only its first len(preamble)
symbols are known.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Collection, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np

from geometry import PointSet, diameter, dist
from ifs_errors import BudgetExceededError, MapError, NonConvergenceError
from ifs_system import WORD_BUDGET, IFSSystem, hutchinson, walk_word_images
from maps import compose_word, eval_map

logger = logging.getLogger(__name__)

Word = Tuple[str, ...]

PROJECTION_MAX_DEPTH = 4096


def parse_word(text: str, commas: Optional[bool] = None) -> Word:
    """'121' -> ('1', '2', '1'); comma separated when symbols are longer than one character."""
    text = text.strip()
    if commas is None:
        commas = ',' in text
    if commas:
        return tuple(s.strip() for s in text.split(',') if s.strip())
    return tuple(text)


def format_word(word: Sequence[str], commas: Optional[bool] = None) -> str:
    if commas is None:
        commas = any(len(s) != 1 for s in word)
    if not commas:
        return ''.join(word)
    return ','.join(word)


@dataclass(frozen=True)
class CodeStream:
    preamble: Word = ()
    cycle: Word = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, 'preamble', tuple(self.preamble))
        object.__setattr__(self, 'cycle', tuple(self.cycle))

    @classmethod
    def parse(cls, text: str) -> 'CodeStream':
        """'pre|cycle' for eventually periodic words; a bare word is a truncation."""
        if '|' in text:
            pre, cyc = text.split('|', 1)
            commas = ',' in text
            stream = cls(parse_word(pre, commas), parse_word(cyc, commas))
            if not stream.cycle:
                raise ValueError(f"Periodic word '{text}' needs a non-empty cycle after '|'")
            return stream
        return cls(parse_word(text), ())

    @classmethod
    def periodic(cls, cycle: Sequence[str], preamble: Sequence[str] = ()) -> 'CodeStream':
        if not cycle:
            raise ValueError("A periodic stream needs a non-empty cycle")
        return cls(tuple(preamble), tuple(cycle))

    @property
    def is_periodic(self) -> bool:
        return bool(self.cycle)

    @property
    def known_length(self) -> Optional[int]:
        """Number of known symbols; None when the stream is infinite."""
        return None if self.is_periodic else len(self.preamble)

    def symbols(self) -> Set[str]:
        return set(self.preamble) | set(self.cycle)

    def symbol(self, n: int) -> str:
        """The n-th symbol, counting from 1."""
        if n < 1:
            raise ValueError(f"Symbols are indexed from 1, got {n}")
        if n <= len(self.preamble):
            return self.preamble[n - 1]
        if not self.is_periodic:
            raise ValueError(f"Truncated stream knows only {len(self.preamble)} symbols, asked for {n}")
        return self.cycle[(n - len(self.preamble) - 1) % len(self.cycle)]

    def first(self, m: int) -> Word:
        return tuple(self.symbol(n) for n in range(1, m + 1))

    def __str__(self) -> str:
        if self.is_periodic:
            commas = any(len(s) != 1 for s in self.preamble + self.cycle)
            return f"{format_word(self.preamble, commas)}|{format_word(self.cycle, commas)}"
        return format_word(self.preamble)


def prefix(w: Union[CodeStream, Sequence[str]], m: int) -> Word:
    """[w]_m, the first m symbols; m = 0 gives the empty word."""
    if m < 0:
        raise ValueError(f"Prefix length must be >= 0, got {m}")
    if isinstance(w, CodeStream):
        known = w.known_length
        if known is not None and m > known:
            raise ValueError(f"Prefix of length {m} exceeds truncated stream of length {known}")
        return w.first(m)
    if m > len(w):
        raise ValueError(f"Prefix of length {m} exceeds word of length {len(w)}")
    return tuple(w[:m])


class CodeDistance(NamedTuple):
    value: float
    # False when the streams agree as far as they could be compared and value is only an upper bound.
    exact: bool


def code_distance(alpha: CodeStream, beta: CodeStream, horizon: int) -> CodeDistance:
    """d(alpha, beta) = 2^-n with n the first index where they differ, 0 if equal."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if alpha.is_periodic and beta.is_periodic:
        # Two eventually periodic words agreeing this far agree everywhere.
        limit = max(len(alpha.preamble), len(beta.preamble)) + math.lcm(len(alpha.cycle), len(beta.cycle))
        exact_when_equal = True
    else:
        limit = min(horizon, *(s.known_length for s in (alpha, beta) if s.known_length is not None))
        exact_when_equal = False
    for n in range(1, limit + 1):
        if alpha.symbol(n) != beta.symbol(n):
            return CodeDistance(2.0 ** -n, True)
    if exact_when_equal:
        return CodeDistance(0.0, True)
    logger.debug(f"Streams {alpha} and {beta} indistinguishable up to depth {limit}")
    return CodeDistance(2.0 ** -limit, False)


def shift_prepend(i: str, alpha: CodeStream, alphabet: Optional[Collection[str]] = None) -> CodeStream:
    """F_i(alpha) = i alpha."""
    if alphabet is not None and i not in alphabet:
        raise MapError(f"Unknown symbol '{i}' (alphabet {sorted(alphabet)})")
    return CodeStream((i,) + alpha.preamble, alpha.cycle)


class ProjectionResult(NamedTuple):
    point: np.ndarray
    depth: int
    residual_diam: float


def _check_stream(system: IFSSystem, omega: CodeStream) -> None:
    unknown = omega.symbols() - set(system.symbols)
    if unknown:
        raise MapError(f"Stream {omega} uses unknown symbols {sorted(unknown)}")


def _seed_cloud(system: IFSSystem, B: Optional[PointSet]) -> PointSet:
    # B together with F(B): the image under f_w then holds both f_w(B) and
    # f_{w s}(B), so its diameter bounds the step between consecutive depths.
    base = PointSet(system.box.vertices()) if B is None else B
    return PointSet(np.concatenate([base.points, hutchinson(system, base).points]))


def _doubling_depths(cap: int) -> List[int]:
    depths = []
    n = 1
    while n < cap:
        depths.append(n)
        n *= 2
    if cap >= 1:
        depths.append(cap)
    return depths


def project(system: IFSSystem, omega: CodeStream, B: Optional[PointSet] = None, tol: float = 1e-9,
            max_depth: int = PROJECTION_MAX_DEPTH) -> ProjectionResult:
    """a_omega: shrink f_{[omega]_n}(B) until its diameter is at most tol.

    B defaults to the box vertices and is always extended by F(B). The
    residual diameter then bounds the gap between f_{[omega]_n}(B) and
    f_{[omega]_{n+1}}(B), so a map that folds B onto one point cannot stop
    the search early. Depths are tried as 1, 2, 4, ...
    (capped), so the total work stays proportional to the depth reached.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_stream(system, omega)
    cloud = _seed_cloud(system, B)
    depth_cap = max_depth if omega.known_length is None else min(max_depth, omega.known_length)
    residual = diameter(cloud)
    for n in _doubling_depths(depth_cap):
        pts = cloud.points
        for s in reversed(omega.first(n)):
            pts = system.maps[s].apply(pts)
        residual = diameter(PointSet(pts))
        if residual <= tol:
            logger.debug(f"Projection of {omega} settled at depth {n} (diameter {residual:.3e})")
            return ProjectionResult(pts[0].copy(), n, residual)
    raise NonConvergenceError(
        f"Projection of {omega} did not shrink below {tol} within depth {depth_cap} (diameter {residual:.3e})",
        iterations=depth_cap, last_state=residual)


def cylinder(system: IFSSystem, w: Sequence[str], A: PointSet) -> PointSet:
    """A_w = f_w(A)."""
    return compose_word(system.maps, tuple(w)).image(A)


class EquivarianceReport(NamedTuple):
    max_error: float
    passed: bool
    worst_stream: Optional[str]
    worst_symbol: Optional[str]


def check_equivariance(system: IFSSystem, streams: Sequence[CodeStream], tol: float,
                       projection_tol: Optional[float] = None,
                       B: Optional[PointSet] = None) -> EquivarianceReport:
    """max over streams and symbols of dist(pi(i omega), f_i(pi(omega)))."""
    if not streams:
        raise ValueError("check_equivariance needs at least one stream")
    ptol = projection_tol if projection_tol is not None else tol / 100.0
    worst = (0.0, None, None)
    for omega in streams:
        base = project(system, omega, B, ptol).point
        for i in system.symbols:
            shifted = project(system, shift_prepend(i, omega, system.symbols), B, ptol).point
            err = dist(shifted, eval_map(system.maps[i], base))
            if err > worst[0] or worst[1] is None:
                worst = (err, str(omega), i)
    passed = worst[0] <= tol
    log = logger.info if passed else logger.warning
    log(f"Equivariance max error {worst[0]:.3e} over {len(streams)} streams (tol {tol})")
    return EquivarianceReport(worst[0], passed, worst[1], worst[2])


def continuity_modulus(system: IFSSystem, A: PointSet, n: int, budget: int = WORD_BUDGET) -> float:
    """max over words w of length n of diameter(A_w).

    Streams sharing an n-prefix project into the same cylinder, so this
    bounds dist(pi(alpha), pi(beta)) whenever d(alpha, beta) <= 2^-n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    best = 0.0
    for word, (image,) in walk_word_images(system, [A.points], n, budget):
        if len(word) == n:
            best = max(best, diameter(PointSet(image)))
    return best


def enumerate_words(symbols: Sequence[str], n: int, budget: int = WORD_BUDGET) -> List[Word]:
    """All words of length n in lexicographic order of the given symbol order."""
    if len(symbols) ** n > budget:
        raise BudgetExceededError(f"{len(symbols)}^{n} words exceed the enumeration budget {budget}")
    return [tuple(w) for w in itertools.product(symbols, repeat=n)]


def projection_cloud(system: IFSSystem, n: int, tol: float, B: Optional[PointSet] = None,
                     budget: int = WORD_BUDGET) -> PointSet:
    """{pi(w w w ...) : w of length n}, a finite sample of the attractor."""
    points = [project(system, CodeStream.periodic(w), B, tol).point
              for w in enumerate_words(system.symbols, n, budget)]
    return PointSet(np.array(points))
