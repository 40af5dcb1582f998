"""Spectra, smoothness weights, and signal primitives for the sequence
observation model ``y_k = b_k * theta_k + eps * xi_k``.

The forward operator enters only through its positive spectrum ``b = (b_k)``;
signal regularity is encoded by a non-decreasing weight sequence ``a = (a_k)``
through the ellipsoid ``{theta : sum_k a_k^2 theta_k^2 <= 1}``.  Everything
downstream (thresholds, radius bounds, bandwidth selection) is built from the
partial sums of ``b_k^-2`` and ``b_k^-4`` defined here.

Sequence values are computed lazily by formula and accumulated with Neumaier
compensation; exponentially ill-posed spectra overflow to ``+inf`` instead of
raising, so optimisation loops can simply skip past the overflowed tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

WELL_POSED = "well_posed"
MILDLY_ILL_POSED = "mildly_ill_posed"
SEVERELY_ILL_POSED = "severely_ill_posed"
ORDINARY_SMOOTH = "ordinary_smooth"
SUPER_SMOOTH = "super_smooth"
CUSTOM = "custom"

OPERATOR_KINDS = (WELL_POSED, MILDLY_ILL_POSED, SEVERELY_ILL_POSED, CUSTOM)
SMOOTHNESS_KINDS = (ORDINARY_SMOOTH, SUPER_SMOOTH, CUSTOM)

#: Default truncation of the (conceptually infinite) index set for all
#: optimisations over the bandwidth D.
DEFAULT_D_MAX = 1 << 16

_SCAN_CHUNK = 4096
_MEMBERSHIP_SLACK = 1e-12


def _exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _pow_or_inf(base: float, exponent: float) -> float:
    try:
        return math.pow(base, exponent)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class OperatorFamily:
    """Positive spectrum b = (b_k) of the forward operator.

    Named kinds: ``well_posed`` (b_k = scale), ``mildly_ill_posed``
    (b_k = scale * k^-exponent) and ``severely_ill_posed``
    (b_k = scale * exp(-k * exponent)); ``custom`` wraps an explicit positive
    sequence.  For the named kinds the inverse spectrum b_k^-1 is
    non-decreasing in k.
    """

    kind: str
    exponent: float = 0.0
    scale: float = 1.0
    values: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("operator scale must be positive")
        if self.kind in (MILDLY_ILL_POSED, SEVERELY_ILL_POSED):
            if not self.exponent > 0:
                raise ValueError(f"{self.kind} requires a positive exponent")
        if self.kind == CUSTOM:
            if not self.values:
                raise ValueError("custom operator requires explicit values")
            if any(not v > 0 or not math.isfinite(v) for v in self.values):
                raise ValueError("custom operator values must be positive and finite")
        elif self.values is not None:
            raise ValueError("explicit values are only valid for the custom kind")

    @classmethod
    def well_posed(cls, scale: float = 1.0) -> "OperatorFamily":
        return cls(WELL_POSED, scale=scale)

    @classmethod
    def mildly_ill_posed(cls, exponent: float, scale: float = 1.0) -> "OperatorFamily":
        return cls(MILDLY_ILL_POSED, exponent=exponent, scale=scale)

    @classmethod
    def severely_ill_posed(cls, exponent: float, scale: float = 1.0) -> "OperatorFamily":
        return cls(SEVERELY_ILL_POSED, exponent=exponent, scale=scale)

    @classmethod
    def custom(cls, values: Iterable[float], scale: float = 1.0) -> "OperatorFamily":
        return cls(CUSTOM, scale=scale, values=tuple(float(v) for v in values))

    @property
    def max_index(self) -> int | None:
        """Largest valid index, or None when the family is unbounded."""
        return len(self.values) if self.values is not None else None

    def value(self, k: int) -> float:
        """b_k (underflows to 0.0 for extreme severely ill-posed indices)."""
        self._check_index(k)
        if self.kind == WELL_POSED:
            return self.scale
        if self.kind == MILDLY_ILL_POSED:
            return self.scale * _pow_or_inf(k, -self.exponent)
        if self.kind == SEVERELY_ILL_POSED:
            return self.scale * math.exp(-self.exponent * k)
        return self.scale * self.values[k - 1]

    def inv_sq(self, k: int) -> float:
        """b_k^-2, computed directly so ill-posed spectra overflow to +inf."""
        self._check_index(k)
        inv_scale_sq = 1.0 / (self.scale * self.scale)
        if self.kind == WELL_POSED:
            return inv_scale_sq
        if self.kind == MILDLY_ILL_POSED:
            return inv_scale_sq * _pow_or_inf(k, 2.0 * self.exponent)
        if self.kind == SEVERELY_ILL_POSED:
            return inv_scale_sq * _exp_or_inf(2.0 * self.exponent * k)
        v = self.values[k - 1]
        return inv_scale_sq / (v * v)

    def inv_sq_array(self, ks: np.ndarray) -> np.ndarray:
        """Vectorised b_k^-2 over an index array (overflow maps to +inf)."""
        inv_scale_sq = 1.0 / (self.scale * self.scale)
        with np.errstate(over="ignore"):
            if self.kind == WELL_POSED:
                return np.full(len(ks), inv_scale_sq)
            if self.kind == MILDLY_ILL_POSED:
                return inv_scale_sq * np.asarray(ks, dtype=float) ** (2.0 * self.exponent)
            if self.kind == SEVERELY_ILL_POSED:
                return inv_scale_sq * np.exp(2.0 * self.exponent * np.asarray(ks, dtype=float))
            vals = np.asarray(self.values, dtype=float)[np.asarray(ks) - 1]
            return inv_scale_sq / (vals * vals)

    def consecutive_ratio(self, k: int) -> float:
        """b_{k-1} / b_k for k >= 2, evaluated in a form that cannot overflow
        for the named kinds."""
        if k < 2:
            raise ValueError("consecutive ratio needs k >= 2")
        self._check_index(k)
        if self.kind == WELL_POSED:
            return 1.0
        if self.kind == MILDLY_ILL_POSED:
            return math.pow(k / (k - 1), self.exponent)
        if self.kind == SEVERELY_ILL_POSED:
            return _exp_or_inf(self.exponent)
        return self.values[k - 2] / self.values[k - 1]

    def _check_index(self, k: int) -> None:
        if k < 1:
            raise ValueError("sequence indices start at 1")
        if self.values is not None and k > len(self.values):
            raise ValueError(f"index {k} beyond custom sequence of length {len(self.values)}")


@dataclass(frozen=True)
class SmoothnessFamily:
    """Non-decreasing positive weights a = (a_k) defining the ellipsoid.

    ``ordinary_smooth`` has a_k = scale * k^exponent, ``super_smooth`` has
    a_k = scale * exp(k * exponent); both diverge, so tail mass beyond any
    bandwidth D is at most a_D^-2 for ellipsoid members.
    """

    kind: str
    exponent: float = 0.0
    scale: float = 1.0
    values: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in SMOOTHNESS_KINDS:
            raise ValueError(f"unknown smoothness kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("smoothness scale must be positive")
        if self.kind != CUSTOM and not self.exponent > 0:
            raise ValueError(f"{self.kind} requires a positive exponent")
        if self.kind == CUSTOM:
            if not self.values:
                raise ValueError("custom smoothness requires explicit values")
            vals = self.values
            if any(not v > 0 or not math.isfinite(v) for v in vals):
                raise ValueError("custom smoothness values must be positive and finite")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError("smoothness values must be non-decreasing")
        elif self.values is not None:
            raise ValueError("explicit values are only valid for the custom kind")

    @classmethod
    def ordinary_smooth(cls, exponent: float, scale: float = 1.0) -> "SmoothnessFamily":
        return cls(ORDINARY_SMOOTH, exponent=exponent, scale=scale)

    @classmethod
    def super_smooth(cls, exponent: float, scale: float = 1.0) -> "SmoothnessFamily":
        return cls(SUPER_SMOOTH, exponent=exponent, scale=scale)

    @classmethod
    def custom(cls, values: Iterable[float], scale: float = 1.0) -> "SmoothnessFamily":
        return cls(CUSTOM, scale=scale, values=tuple(float(v) for v in values))

    @property
    def max_index(self) -> int | None:
        return len(self.values) if self.values is not None else None

    def value(self, k: int) -> float:
        """a_k (overflows to +inf for extreme super-smooth indices)."""
        self._check_index(k)
        if self.kind == ORDINARY_SMOOTH:
            return self.scale * _pow_or_inf(k, self.exponent)
        if self.kind == SUPER_SMOOTH:
            return self.scale * _exp_or_inf(self.exponent * k)
        return self.scale * self.values[k - 1]

    def inv_sq(self, k: int) -> float:
        """a_k^-2; underflows to 0.0 once a_k exceeds the double range."""
        self._check_index(k)
        inv_scale_sq = 1.0 / (self.scale * self.scale)
        if self.kind == ORDINARY_SMOOTH:
            return inv_scale_sq * math.pow(k, -2.0 * self.exponent)
        if self.kind == SUPER_SMOOTH:
            return inv_scale_sq * math.exp(-2.0 * self.exponent * k)
        v = self.values[k - 1]
        return inv_scale_sq / (v * v)

    def inv_sq_array(self, ks: np.ndarray) -> np.ndarray:
        inv_scale_sq = 1.0 / (self.scale * self.scale)
        if self.kind == ORDINARY_SMOOTH:
            return inv_scale_sq * np.asarray(ks, dtype=float) ** (-2.0 * self.exponent)
        if self.kind == SUPER_SMOOTH:
            return inv_scale_sq * np.exp(-2.0 * self.exponent * np.asarray(ks, dtype=float))
        vals = np.asarray(self.values, dtype=float)[np.asarray(ks) - 1]
        return inv_scale_sq / (vals * vals)

    def consecutive_ratio(self, k: int) -> float:
        """a_{k-1} / a_k for k >= 2 (always <= 1 for valid families)."""
        if k < 2:
            raise ValueError("consecutive ratio needs k >= 2")
        self._check_index(k)
        if self.kind == ORDINARY_SMOOTH:
            return math.pow((k - 1) / k, self.exponent)
        if self.kind == SUPER_SMOOTH:
            return math.exp(-self.exponent)
        return self.values[k - 2] / self.values[k - 1]

    def _check_index(self, k: int) -> None:
        if k < 1:
            raise ValueError("sequence indices start at 1")
        if self.values is not None and k > len(self.values):
            raise ValueError(f"index {k} beyond custom sequence of length {len(self.values)}")


@dataclass(frozen=True)
class ProblemSpec:
    """Full geometry of one detection experiment.

    Attributes:
      operator: spectrum b of the forward operator.
      smoothness: ellipsoid weights a.
      eps: noise level, strictly positive.
      n_max: size of a finite index set, or None for the unbounded set.
      fourth_moment_bound: the class constant C with sup_k E[xi_k^4] <= C;
        C >= 1 because unit variance forces E[xi^4] >= 1.
      d_max: truncation bound for optimisations over the bandwidth D.
    """

    operator: OperatorFamily
    smoothness: SmoothnessFamily
    eps: float
    n_max: int | None = None
    fourth_moment_bound: float = 3.0
    d_max: int = DEFAULT_D_MAX

    def __post_init__(self) -> None:
        if not self.eps > 0 or not math.isfinite(self.eps):
            raise ValueError("noise level eps must be positive and finite")
        if self.fourth_moment_bound < 1.0:
            raise ValueError("fourth moment bound below 1 contradicts unit variance")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("finite index set must contain at least one index")
        if self.d_max < 1:
            raise ValueError("d_max must be at least 1")

    @property
    def bandwidth_limit(self) -> int:
        """Largest bandwidth any optimisation or sum may touch."""
        limit = self.d_max
        if self.n_max is not None:
            limit = min(limit, self.n_max)
        for family in (self.operator, self.smoothness):
            if family.max_index is not None:
                limit = min(limit, family.max_index)
        return limit

    def check_bandwidth(self, d: int) -> None:
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ValueError(f"bandwidth must be a positive integer, got {d!r}")
        if d > self.bandwidth_limit:
            raise ValueError(
                f"bandwidth {d} exceeds the usable index range (limit {self.bandwidth_limit})"
            )


@dataclass(frozen=True)
class Signal:
    """Finite-support signal: explicit coefficients, zero beyond the support."""

    coefficients: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if any(not math.isfinite(c) for c in self.coefficients):
            raise ValueError("signal coefficients must be finite")

    @classmethod
    def zero(cls) -> "Signal":
        return cls(())

    @property
    def support(self) -> int:
        return len(self.coefficients)

    def coefficient(self, k: int) -> float:
        if k < 1:
            raise ValueError("sequence indices start at 1")
        return self.coefficients[k - 1] if k <= len(self.coefficients) else 0.0

    def norm_sq(self) -> float:
        return math.fsum(c * c for c in self.coefficients)

    def array(self, d: int) -> np.ndarray:
        """First d coefficients as a dense vector."""
        out = np.zeros(d)
        m = min(d, len(self.coefficients))
        out[:m] = self.coefficients[:m]
        return out


def compensated_sum(terms: Iterable[float]) -> float:
    """Neumaier-compensated sum; returns +inf as soon as a term overflows."""
    total = 0.0
    comp = 0.0
    for x in terms:
        if math.isinf(x):
            return math.inf
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        if math.isinf(total):
            return math.inf
    return total + comp


def sum_inv_b_sq(spec: ProblemSpec, d: int) -> float:
    """Partial sum of b_k^-2 for k = 1..d (the variance driver of the test)."""
    spec.check_bandwidth(d)
    op = spec.operator
    return compensated_sum(op.inv_sq(k) for k in range(1, d + 1))


def sum_inv_b_4(spec: ProblemSpec, d: int) -> float:
    """Partial sum of b_k^-4 for k = 1..d.

    Always dominated by ``sum_inv_b_sq(spec, d) ** 2`` since the terms are the
    squares of a non-negative sequence.
    """
    spec.check_bandwidth(d)
    op = spec.operator

    def terms():
        for k in range(1, d + 1):
            w = op.inv_sq(k)
            yield w * w

    return compensated_sum(terms())


def bias_term(spec: ProblemSpec, d: int) -> float:
    """a_d^-2: the worst-case signal mass hiding beyond bandwidth d."""
    spec.check_bandwidth(d)
    return spec.smoothness.inv_sq(d)


class EllipsoidCheck(NamedTuple):
    value: float
    inside: bool


def ellipsoid_membership(smoothness: SmoothnessFamily, theta: Signal) -> EllipsoidCheck:
    """Weighted mass sum_k a_k^2 theta_k^2 and the membership verdict.

    The boundary value 1 counts as inside.
    """

    def terms():
        for k, c in enumerate(theta.coefficients, start=1):
            if c == 0.0:
                continue
            a = smoothness.value(k)
            yield (a * c) * (a * c)

    value = compensated_sum(terms())
    return EllipsoidCheck(value, value <= 1.0)


def boundary_signal(spec: ProblemSpec, d: int, r: float) -> Signal:
    """Single-spike signal theta with theta_d = r and zeros elsewhere.

    Requires r^2 <= a_d^-2 so that the spike stays inside the ellipsoid.
    """
    spec.check_bandwidth(d)
    if not r > 0 or not math.isfinite(r):
        raise ValueError("signal radius must be positive and finite")
    cap = bias_term(spec, d)
    if r * r > cap * (1.0 + _MEMBERSHIP_SLACK):
        raise ValueError(
            f"radius^2 {r * r:.6g} exceeds the ellipsoid cap a_D^-2 = {cap:.6g} at D={d}"
        )
    return Signal((0.0,) * (d - 1) + (float(r),))


class ScanResult(NamedTuple):
    d: int
    value: float
    truncated: bool


def scan_bandwidth(
    term_fn: Callable[[np.ndarray], np.ndarray],
    value_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    limit: int,
    *,
    maximize: bool = False,
    patience: int = 64,
    chunk_size: int = _SCAN_CHUNK,
) -> ScanResult:
    """Optimise ``value_fn(k, cumsum(term_fn))`` over integer bandwidths 1..limit.

    Exact integer search in chunks, with an early exit once `patience`
    consecutive bandwidths fail to improve on the incumbent (the objectives
    used here are unimodal after their crossover point).  The running prefix
    sum is carried across chunks with an exactly rounded fsum, so compensated
    accuracy is preserved at chunk granularity.  Ties keep the smaller
    bandwidth; `truncated` is set when the optimiser lands on the scan limit.
    """
    if limit < 1:
        raise ValueError("bandwidth limit must be at least 1")
    best_d = 0
    best = -math.inf if maximize else math.inf
    carry = 0.0
    k0 = 1
    while k0 <= limit:
        k1 = min(k0 + chunk_size - 1, limit)
        ks = np.arange(k0, k1 + 1)
        terms = term_fn(ks)
        with np.errstate(over="ignore", invalid="ignore"):
            sums = carry + np.cumsum(terms)
            vals = value_fn(ks, sums)
        idx = int(np.argmax(vals) if maximize else np.argmin(vals))
        candidate = float(vals[idx])
        if (candidate > best) if maximize else (candidate < best):
            best = candidate
            best_d = int(ks[idx])
        if k1 - best_d >= patience:
            return ScanResult(best_d, best, False)
        if math.isinf(carry) or not np.all(np.isfinite(terms)):
            carry = math.inf
        else:
            try:
                carry = math.fsum([carry, *terms.tolist()])
            except OverflowError:
                carry = math.inf
        k0 = k1 + 1
    return ScanResult(best_d, best, best_d == limit)
