"""Harmonic-oscillator overlap integrals for contact and p-wave collisions.

``s(n1, n2, n3, n4)`` is the integral of four normalized 1D Hermite functions,
``p(n1, n2, n3, n4)`` the matching integral of the antisymmetrized derivative
pairs ``(phi_1' phi_2 - phi_1 phi_2') (phi_3' phi_4 - phi_3 phi_4')`` in the
dimensionless oscillator coordinate.

Two routes are provided:

* :func:`s_overlap` / :func:`p_overlap` evaluate the exact four-index
  recursion, memoized on the sorted index tuple. Indices are capped at
  :data:`N_CAP`.
* :class:`PairOverlaps` serves the energy-conserving slice
  ``s(a, b, b, a)``, ``p(a, b, b, a)`` needed by the Hamiltonian. Small
  indices go through the recursion; transverse indices reach ~10**3, where
  the four-index closure is intractable, so those use trapezoidal quadrature
  of Hermite functions on a grid that resolves their full bandwidth.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache

import numpy as np

N_CAP = 64
# slice indices up to this value use the recursion in PairOverlaps
SLICE_RECURSION_CAP = 24

S_GROUND = 1.0 / math.sqrt(2.0 * math.pi)

_s_memo: dict[tuple[int, int, int, int], float] = {(0, 0, 0, 0): S_GROUND}
_memo_lock = threading.Lock()


class OverlapIndexError(ValueError):
    pass


def _check(indices) -> None:
    for n in indices:
        if n > N_CAP:
            raise OverlapIndexError(f"overlap index {n} exceeds cap {N_CAP}")


def _s(key: tuple[int, int, int, int]) -> float:
    # key sorted ascending, all >= 0, even sum
    cached = _s_memo.get(key)
    if cached is not None:
        return cached
    # lower the largest index: every coefficient is then <= 1, which keeps the
    # alternating sum stable (raising the smallest index loses ~1e-7 by n=15)
    k = key[3]
    rest = key[:3]
    total = 0.0
    for j in range(3):
        nj = rest[j]
        if nj:
            child = list(rest)
            child[j] -= 1
            child.append(k - 1)
            total += math.sqrt(nj / k) * _s(tuple(sorted(child)))
    if k >= 2:
        total -= math.sqrt((k - 1) / k) * _s(tuple(sorted(rest + (k - 2,))))
    value = 0.5 * total
    with _memo_lock:
        _s_memo[key] = value
    return value


def s_overlap(n1: int, n2: int, n3: int, n4: int) -> float:
    """Four-Hermite-function overlap; exactly 0.0 for odd index sums."""
    idx = (n1, n2, n3, n4)
    if min(idx) < 0:
        return 0.0
    _check(idx)
    if sum(idx) % 2:
        return 0.0
    return _s(tuple(sorted(idx)))


def p_overlap(n1: int, n2: int, n3: int, n4: int) -> float:
    """Derivative-pair overlap assembled from four shifted ``s`` values."""
    _check((n1, n2, n3, n4))
    total = 0.0
    if n1 and n3:
        total += 2.0 * math.sqrt(n1 * n3) * s_overlap(n1 - 1, n2, n3 - 1, n4)
    if n2 and n3:
        total -= 2.0 * math.sqrt(n2 * n3) * s_overlap(n1, n2 - 1, n3 - 1, n4)
    if n1 and n4:
        total -= 2.0 * math.sqrt(n1 * n4) * s_overlap(n1 - 1, n2, n3, n4 - 1)
    if n2 and n4:
        total += 2.0 * math.sqrt(n2 * n4) * s_overlap(n1, n2 - 1, n3, n4 - 1)
    return total


def overlap_cache_size() -> int:
    return len(_s_memo)


class HermiteGrid:
    """Normalized Hermite functions phi_0..phi_nmax sampled on a uniform grid.

    The step resolves the bandwidth of any product of four functions of
    order <= nmax, so trapezoidal sums of such products are spectrally
    accurate. The three-term recurrence runs in rescaled form because
    exp(-xi**2/2) underflows long before the high-order functions decay.
    """

    def __init__(self, nmax: int, x_pad: float = 10.0, k_pad: float = 24.0):
        self.nmax = int(nmax)
        edge = math.sqrt(2 * self.nmax + 1)
        self.step = 2.0 * math.pi / (4.0 * edge + k_pad)
        half = int(math.ceil((edge + x_pad) / self.step))
        xi = self.step * np.arange(-half, half + 1)
        phi = np.empty((self.nmax + 1, xi.size))
        log_scale = -0.5 * xi**2
        prev = np.zeros_like(xi)
        cur = np.full_like(xi, math.pi**-0.25)
        phi[0] = cur * np.exp(log_scale)
        big = 1e150
        for n in range(self.nmax):
            nxt = math.sqrt(2.0 / (n + 1)) * xi * cur - math.sqrt(n / (n + 1)) * prev
            prev, cur = cur, nxt
            over = np.abs(cur) > big
            if over.any():
                cur[over] /= big
                prev[over] /= big
                log_scale[over] += math.log(big)
            phi[n + 1] = cur * np.exp(log_scale)
        self.xi = xi
        self.phi = phi

    def _psi(self, a: int, b: int) -> np.ndarray:
        phi = self.phi
        left = math.sqrt(2 * a) * phi[a - 1] * phi[b] if a else 0.0
        right = math.sqrt(2 * b) * phi[a] * phi[b - 1] if b else 0.0
        return left - right

    def s_pair(self, a: int, b: int) -> float:
        return self.step * float(np.dot(self.phi[a] ** 2, self.phi[b] ** 2))

    def p_pair(self, a: int, b: int) -> float:
        psi = self._psi(a, b)
        if np.isscalar(psi):
            return 0.0
        # (phi_a' phi_b - phi_a phi_b') is antisymmetric, so the (a,b,b,a) slice is -|psi|^2
        return -self.step * float(np.dot(psi, psi))


@lru_cache(maxsize=4)
def hermite_grid(nmax: int) -> HermiteGrid:
    return HermiteGrid(nmax)


class PairOverlaps:
    """Memoized ``(s(a,b,b,a), p(a,b,b,a))`` for one axis with indices <= nmax."""

    def __init__(self, nmax: int):
        self.nmax = int(nmax)
        self._memo: dict[tuple[int, int], tuple[float, float]] = {}
        self._grid: HermiteGrid | None = None

    @property
    def grid(self) -> HermiteGrid:
        if self._grid is None:
            self._grid = hermite_grid(max(self.nmax, SLICE_RECURSION_CAP))
        return self._grid

    def __call__(self, a: int, b: int) -> tuple[float, float]:
        key = (a, b) if a <= b else (b, a)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        lo, hi = key
        if hi > max(self.nmax, SLICE_RECURSION_CAP) or lo < 0:
            raise OverlapIndexError(f"mode index {hi} outside [0, {self.nmax}]")
        if hi <= SLICE_RECURSION_CAP:
            value = (s_overlap(lo, hi, hi, lo), p_overlap(lo, hi, hi, lo))
        else:
            value = (self.grid.s_pair(lo, hi), self.grid.p_pair(lo, hi))
        self._memo[key] = value
        return value
