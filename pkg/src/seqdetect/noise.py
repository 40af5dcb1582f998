"""Noise families with zero mean, unit variance, and bounded fourth moments.

Every model here claims membership of the moment class with constant
``claimed_fourth_moment`` (written C below): E[xi_k] = 0, E[xi_k^2] = 1 and
sup_k E[xi_k^4] <= C.  Independence and Gaussianity are deliberately NOT part
of the class; the correlated families below are the whole point.

Shipped families:

  IidGaussian              C = 3 exactly
  IidRademacher            xi in {-1, +1}, C = 1 exactly
  IidScaledUniform         uniform on [-sqrt(3), sqrt(3)], C = 9/5 exactly
  CorrelatedGaussian       explicit correlation matrix, sampled through its
                           symmetric square root
  LongRangeGaussian        stationary kernel |k-l|^-s scaled by an amplitude
                           c, repaired to the nearest correlation matrix
  AdversarialEquicorrelated  the common-factor construction
                           xi_k = d_k eta_0 + sqrt(1 - d_k^2) eta_k with
                           d_k in [1/sqrt(2), 1), which forces every
                           off-diagonal correlation to be at least 1/2

For jointly Gaussian coordinates the second-order structure of the squared
noise follows from the Gaussian product-moment identity:
Cov(xi_k^2, xi_l^2) = 2 Cov(xi_k, xi_l)^2 and E[(xi_k^2 - 1) xi_l] = 0.
"""

from __future__ import annotations

import abc
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .sequences import ProblemSpec

_EIG_TOLERANCE = 1e-10
_MIN_LONG_RANGE_AMPLITUDE = 1e-3
_LONG_RANGE_SHRINK = 0.8
_D_MIN_EQUICORRELATED = 1.0 / math.sqrt(2.0)

GAUSSIAN_FOURTH_MOMENT = 3.0


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric PSD matrix with unit diagonal.

    Construction validates symmetry, the unit diagonal, and that the smallest
    eigenvalue is above -1e-10 (tiny negative values from upstream numerics
    are accepted; anything worse is rejected).  ``validate_psd=False`` skips
    the eigenvalue check for matrices whose spectrum was just verified by the
    caller.
    """

    entries: np.ndarray
    validate_psd: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(m, m.T, atol=1e-10, rtol=0.0):
            raise ValueError("correlation matrix must be symmetric")
        m = (m + m.T) / 2.0
        if not np.allclose(np.diag(m), 1.0, atol=1e-8, rtol=0.0):
            raise ValueError("correlation matrix must have unit diagonal")
        if self.validate_psd and m.shape[0] > 1:
            if float(np.linalg.eigvalsh(m)[0]) < -_EIG_TOLERANCE:
                raise ValueError("correlation matrix is not positive semidefinite")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def identity(cls, dimension: int) -> "CorrelationMatrix":
        return cls(np.eye(dimension), validate_psd=False)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    def submatrix(self, d: int) -> np.ndarray:
        if d < 1 or d > self.dimension:
            raise ValueError(f"submatrix size {d} out of range for dimension {self.dimension}")
        return self.entries[:d, :d]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


def _symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root, clipping tiny negative eigenvalues."""
    w, v = np.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def adversarial_sigma(dimension: int, d: Iterable[float] | float) -> CorrelationMatrix:
    """Correlation matrix of the common-factor construction: entries d_k d_l.

    Requires 1/sqrt(2) <= d_k < 1, which pins every off-diagonal entry at or
    above 1/2.  The matrix is PSD by construction: it equals
    I - diag(d^2) + d d', a rank-one bump of a positive diagonal.
    """
    if dimension < 1:
        raise ValueError("dimension must be positive")
    dv = np.asarray(d, dtype=float)
    if dv.ndim == 0:
        dv = np.full(dimension, float(dv))
    if dv.shape != (dimension,):
        raise ValueError(f"need {dimension} factor loadings, got shape {dv.shape}")
    if np.any(dv < _D_MIN_EQUICORRELATED - 1e-12) or np.any(dv >= 1.0):
        raise ValueError("factor loadings must lie in [1/sqrt(2), 1)")
    m = np.outer(dv, dv)
    np.fill_diagonal(m, 1.0)
    return CorrelationMatrix(m, validate_psd=False)


def long_range_correlation(dimension: int, s: float, c: float = 0.5) -> CorrelationMatrix:
    """Correlation matrix with polynomially decaying entries c |k-l|^-s.

    The proposal is repaired to the nearest-in-spirit correlation matrix by
    eigenvalue clipping followed by diagonal renormalisation; the repaired
    matrix must still satisfy the decay envelope |Sigma_kl| <= c |k-l|^-s,
    otherwise the amplitude is shrunk geometrically (factor 0.8) and the
    construction retried.  Fails below amplitude 1e-3.
    """
    if dimension < 1:
        raise ValueError("dimension must be positive")
    if not s > 0:
        raise ValueError("decay exponent must be positive")
    if not 0.0 < c <= 1.0:
        raise ValueError("amplitude must lie in (0, 1]")

    idx = np.arange(dimension)
    gaps = np.abs(idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(divide="ignore"):
        decay = np.where(gaps > 0, gaps ** (-s), 1.0)
    envelope = c * decay
    np.fill_diagonal(envelope, 1.0)

    c_try = c
    while c_try >= _MIN_LONG_RANGE_AMPLITUDE:
        proposal = c_try * decay
        np.fill_diagonal(proposal, 1.0)
        if dimension == 1:
            return CorrelationMatrix(proposal, validate_psd=False)
        eigmin = float(np.linalg.eigvalsh(proposal)[0])
        if eigmin >= -_EIG_TOLERANCE:
            repaired = proposal
        else:
            w, v = np.linalg.eigh(proposal)
            clipped = (v * np.clip(w, 0.0, None)) @ v.T
            diag = np.sqrt(np.clip(np.diag(clipped), 1e-300, None))
            repaired = clipped / np.outer(diag, diag)
            repaired = (repaired + repaired.T) / 2.0
            np.fill_diagonal(repaired, 1.0)
        off = ~np.eye(dimension, dtype=bool)
        if np.all(np.abs(repaired[off]) <= envelope[off] + 1e-12):
            return CorrelationMatrix(repaired, validate_psd=False)
        c_try *= _LONG_RANGE_SHRINK
    raise ValueError(
        f"no amplitude >= {_MIN_LONG_RANGE_AMPLITUDE} yields a PSD matrix within the "
        f"decay envelope (dimension {dimension}, s = {s}, c = {c})"
    )


class NoiseModel(abc.ABC):
    """Sampleable noise law claiming membership of the moment class."""

    kind: str
    claimed_fourth_moment: float
    #: Fixed coordinate count, or None when the model samples any dimension.
    dimension: int | None = None

    def sample(self, d: int, rng: np.random.Generator) -> np.ndarray:
        """One draw (xi_1, ..., xi_d); deterministic given the generator state."""
        return self.sample_block(1, d, rng)[0]

    @abc.abstractmethod
    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        """n independent draws stacked as an (n, d) array."""

    def correlation(self, d: int) -> CorrelationMatrix | None:
        """Exact correlation matrix for Gaussian kinds, else None."""
        return None

    def _check_dimension(self, d: int) -> None:
        if d < 1:
            raise ValueError("dimension must be positive")
        if self.dimension is not None and d != self.dimension:
            raise ValueError(
                f"{self.kind} noise is fixed at dimension {self.dimension}, got {d}"
            )


class IidGaussian(NoiseModel):
    kind = "iid_gaussian"

    def __init__(self, claimed_fourth_moment: float = GAUSSIAN_FOURTH_MOMENT):
        self.claimed_fourth_moment = float(claimed_fourth_moment)

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        return rng.standard_normal((n, d))

    def correlation(self, d: int) -> CorrelationMatrix:
        self._check_dimension(d)
        return CorrelationMatrix.identity(d)


class IidRademacher(NoiseModel):
    """Symmetric signs; every moment is +-1 so the class constant is exactly 1."""

    kind = "iid_rademacher"

    def __init__(self, claimed_fourth_moment: float = 1.0):
        self.claimed_fourth_moment = float(claimed_fourth_moment)

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        return rng.integers(0, 2, size=(n, d)).astype(float) * 2.0 - 1.0


class IidScaledUniform(NoiseModel):
    """Uniform on [-sqrt(3), sqrt(3)]: unit variance, fourth moment 9/5."""

    kind = "iid_scaled_uniform"

    def __init__(self, claimed_fourth_moment: float = 1.8):
        self.claimed_fourth_moment = float(claimed_fourth_moment)

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        half = math.sqrt(3.0)
        return rng.uniform(-half, half, size=(n, d))


class CorrelatedGaussian(NoiseModel):
    """Centred Gaussian vector with an explicit correlation matrix.

    Sampling applies the symmetric square root of the matrix to an iid
    standard Gaussian vector.
    """

    kind = "correlated_gaussian"

    def __init__(
        self,
        cov: CorrelationMatrix,
        claimed_fourth_moment: float = GAUSSIAN_FOURTH_MOMENT,
    ):
        self.claimed_fourth_moment = float(claimed_fourth_moment)
        self._cov = cov
        self.dimension = cov.dimension
        self._factor = _symmetric_sqrt(cov.entries)

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        z = rng.standard_normal((n, d))
        return z @ self._factor

    def correlation(self, d: int) -> CorrelationMatrix:
        self._check_dimension(d)
        return self._cov


class LongRangeGaussian(NoiseModel):
    """Gaussian noise with |k-l|^-s correlation decay at amplitude c <= 1."""

    kind = "long_range_gaussian"

    def __init__(
        self,
        s: float,
        c: float = 0.5,
        claimed_fourth_moment: float = GAUSSIAN_FOURTH_MOMENT,
    ):
        if not s > 0:
            raise ValueError("decay exponent must be positive")
        if not 0.0 < c <= 1.0:
            raise ValueError("amplitude must lie in (0, 1]")
        self.s = float(s)
        self.c = float(c)
        self.claimed_fourth_moment = float(claimed_fourth_moment)
        self._cache: dict[int, tuple[CorrelationMatrix, np.ndarray]] = {}
        self._lock = threading.Lock()

    def _prepared(self, d: int) -> tuple[CorrelationMatrix, np.ndarray]:
        with self._lock:
            hit = self._cache.get(d)
            if hit is None:
                cov = long_range_correlation(d, self.s, self.c)
                hit = (cov, _symmetric_sqrt(cov.entries))
                self._cache[d] = hit
            return hit

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        _, factor = self._prepared(d)
        return rng.standard_normal((n, d)) @ factor

    def correlation(self, d: int) -> CorrelationMatrix:
        self._check_dimension(d)
        return self._prepared(d)[0]


class AdversarialEquicorrelated(NoiseModel):
    """Common-factor Gaussian noise: xi_k = d_k eta_0 + sqrt(1 - d_k^2) eta_k.

    Each coordinate is exactly standard Gaussian (fourth moment 3), while the
    shared factor eta_0 pushes every pairwise correlation to d_k d_l >= 1/2.
    Sampling draws the shared factor plus independent remainders directly,
    which is both cheaper than a matrix factor and exactly the defining
    representation.
    """

    kind = "adversarial_equicorrelated"

    def __init__(
        self,
        dimension: int,
        d: Iterable[float] | float = _D_MIN_EQUICORRELATED,
        claimed_fourth_moment: float = GAUSSIAN_FOURTH_MOMENT,
    ):
        self._sigma = adversarial_sigma(dimension, d)
        dv = np.asarray(d, dtype=float)
        if dv.ndim == 0:
            dv = np.full(dimension, float(dv))
        self._loadings = dv
        self._residual = np.sqrt(1.0 - dv * dv)
        self.dimension = int(dimension)
        self.claimed_fourth_moment = float(claimed_fourth_moment)

    @property
    def loadings(self) -> np.ndarray:
        return self._loadings.copy()

    def sample_block(self, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
        self._check_dimension(d)
        shared = rng.standard_normal((n, 1))
        residual = rng.standard_normal((n, d))
        return self._loadings * shared + self._residual * residual

    def correlation(self, d: int) -> CorrelationMatrix:
        self._check_dimension(d)
        return self._sigma


@dataclass(frozen=True)
class MomentReport:
    """Per-coordinate empirical moments with standard errors.

    ``within_xi`` is True when every coordinate has |mean| <= 3 SE,
    |variance - 1| <= 3 SE, and fourth moment <= claimed_C + 3 SE.
    """

    mean: np.ndarray
    variance: np.ndarray
    fourth_moment: np.ndarray
    mean_se: np.ndarray
    variance_se: np.ndarray
    fourth_moment_se: np.ndarray
    claimed_fourth_moment: float
    reps: int
    within_xi: bool


def validate_moments(
    model: NoiseModel,
    reps: int,
    rng: np.random.Generator,
    d: int | None = None,
) -> MomentReport:
    """Empirical moment check of a noise model against its claimed constant.

    Report-only: nothing is raised when the model falls outside the class.
    """
    if reps < 10_000:
        raise ValueError("moment validation needs at least 10^4 replications")
    if d is None:
        d = model.dimension if model.dimension is not None else 8
    x = model.sample_block(reps, d, rng)
    n = float(reps)

    mean = x.mean(axis=0)
    sq = x * x
    # the class pins the raw second moment E[xi^2] = 1 (the mean is checked
    # separately), so no mean correction is applied here
    variance = sq.mean(axis=0)
    fourth = (sq * sq).mean(axis=0)

    mean_se = x.std(axis=0, ddof=1) / math.sqrt(n)
    variance_se = sq.std(axis=0, ddof=1) / math.sqrt(n)
    fourth_se = (sq * sq).std(axis=0, ddof=1) / math.sqrt(n)

    claimed = model.claimed_fourth_moment
    ok = (
        bool(np.all(np.abs(mean) <= 3.0 * mean_se))
        and bool(np.all(np.abs(variance - 1.0) <= 3.0 * variance_se))
        and bool(np.all(fourth <= claimed + 3.0 * fourth_se))
    )
    return MomentReport(
        mean=mean,
        variance=variance,
        fourth_moment=fourth,
        mean_se=mean_se,
        variance_se=variance_se,
        fourth_moment_se=fourth_se,
        claimed_fourth_moment=claimed,
        reps=reps,
        within_xi=ok,
    )


def isserlis_cov_sq(cov: CorrelationMatrix) -> np.ndarray:
    """Cov(xi_k^2, xi_l^2) for jointly Gaussian unit-variance coordinates.

    Equals 2 Sigma_kl^2 entrywise; the diagonal is Var(xi_k^2) = 2.
    """
    return 2.0 * cov.entries * cov.entries


def null_variance_decomposition(
    spec: ProblemSpec, cov: CorrelationMatrix, d: int
) -> tuple[float, float]:
    """Split of Var(T_d) under the null for Gaussian noise with matrix cov.

    Returns (R0, S0): the diagonal part
    R0 = 2 eps^4 sum_k b_k^-4 and the cross part
    S0 = 2 eps^4 sum_{k != l} b_k^-2 b_l^-2 Sigma_kl^2.
    S0 vanishes for independent coordinates.
    """
    spec.check_bandwidth(d)
    if cov.dimension < d:
        raise ValueError(f"covariance of dimension {cov.dimension} cannot cover bandwidth {d}")
    w = spec.operator.inv_sq_array(np.arange(1, d + 1))
    eps4 = spec.eps**4
    m = isserlis_cov_sq(CorrelationMatrix(cov.submatrix(d), validate_psd=False))
    with np.errstate(over="ignore", invalid="ignore"):
        r0 = eps4 * float(np.dot(w, w)) * 2.0
        cross = float(w @ m @ w) - float(np.dot(w * w, np.diag(m)))
        s0 = eps4 * cross
    return r0, s0
