"""Information amount of a category from its embedding covariance.

The covariance estimated from m samples in p dimensions is denoised by
eigenvalue clipping: eigenvalues below lambda_- = (1 - sqrt(p/m))^2 are
lifted to that floor, which removes the spurious near-zero directions a
small sample produces. The information amount is then

    I = 1/2 * log2 det(Id + Sigma') = 1/2 * sum_k log2(1 + lambda'_k)

computed from the eigenvalues directly rather than through a determinant,
so it stays finite and stable for any spectrum.

The floor is the raw square, never clamped: for m < p it grows past 1, and
a single-sample category (zero covariance, m=1) is deliberately inflated
to lambda_- in every direction rather than special-cased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .stats import GlobalStats

__all__ = [
    "ShrinkageSpec",
    "InfoAmountTable",
    "shrink_covariance",
    "information_amount",
    "information_amount_from_embeddings",
    "information_amounts_from_stats",
    "info_table_to_json",
    "info_table_from_json",
]

# Relative asymmetry beyond this is a malformed input, not float noise.
_SYM_RTOL = 1e-8
# Eigenvalues below this are a genuinely non-PSD input; above it they are
# rounding debris and get floored at zero.
_PSD_SLACK = -1e-6


@dataclass(frozen=True)
class ShrinkageSpec:
    """Clipping parameters for a covariance built from m samples in p dims.

    Attributes
    ----------
    p : embedding dimension, >= 1.
    m : number of samples behind the covariance estimate, >= 1.
    """

    p: int
    m: int

    def __post_init__(self):
        if self.p < 1:
            raise InputError(f"p must be >= 1, got {self.p}")
        if self.m < 1:
            raise InputError(f"m must be >= 1, got {self.m}")

    @property
    def lambda_minus(self) -> float:
        """(1 - sqrt(p/m))^2; zero exactly when p = m."""
        return float((1.0 - np.sqrt(self.p / self.m)) ** 2)


@dataclass(frozen=True)
class InfoAmountTable:
    """Information amounts keyed by category id, tagged with the epoch."""

    amounts: dict[int, float]
    epoch: int = 0

    def ordered(self) -> list[tuple[int, float]]:
        return sorted(self.amounts.items())

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(category ids, amounts) as parallel arrays sorted by id."""
        items = self.ordered()
        ids = np.array([c for c, _ in items], dtype=np.int64)
        vals = np.array([v for _, v in items], dtype=np.float64)
        return ids, vals


def _checked_symmetric(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InputError(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise InputError("non-finite entries in covariance")
    scale = np.abs(cov).max()
    asym = np.abs(cov - cov.T).max()
    if asym > _SYM_RTOL * max(scale, 1.0):
        raise InputError(
            f"covariance is not symmetric: max |A - A^T| = {asym:.3g} "
            f"against scale {scale:.3g}"
        )
    return 0.5 * (cov + cov.T)


def _eigh(sym: np.ndarray):
    try:
        return np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc


def shrink_covariance(cov: np.ndarray, spec: ShrinkageSpec) -> np.ndarray:
    """Covariance with its spectrum clipped at lambda_-.

    Eigenvectors are kept; each eigenvalue becomes max(lambda, lambda_-),
    after flooring small negative rounding debris at zero. The result is
    symmetric with minimum eigenvalue >= lambda_-.
    """
    sym = _checked_symmetric(cov)
    if sym.shape[0] != spec.p:
        raise InputError(f"covariance is {sym.shape[0]}x{sym.shape[0]} but spec has p={spec.p}")
    eigvals, eigvecs = _eigh(sym)
    if eigvals.min() < _PSD_SLACK:
        raise InputError(
            f"covariance is not positive semidefinite: eigenvalue {eigvals.min():.3g}"
        )
    clipped = np.maximum(np.maximum(eigvals, 0.0), spec.lambda_minus)
    out = (eigvecs * clipped) @ eigvecs.T
    return 0.5 * (out + out.T)


def information_amount(cov_shrunk: np.ndarray) -> float:
    """1/2 * log2 det(Id + Sigma) via the eigenvalue sum.

    The input is scored as given (no clipping); run `shrink_covariance`
    first for the denoised variant. Eigenvalues below -1e-6 are rejected
    as non-PSD; smaller negatives are treated as zero.
    """
    sym = _checked_symmetric(cov_shrunk)
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals.min() < _PSD_SLACK:
        raise InputError(
            f"covariance is not positive semidefinite: eigenvalue {eigvals.min():.3g}"
        )
    eigvals = np.maximum(eigvals, 0.0)
    return float(np.sum(np.log2(1.0 + eigvals)) / 2.0)


def information_amount_from_embeddings(X: np.ndarray) -> float:
    """Information amount of one category from raw embeddings.

    Centers the rows of X, forms the population covariance, clips its
    spectrum for m = len(X) samples, and scores it. This is literally the
    composition of `shrink_covariance` and `information_amount`.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError(f"expected a nonempty (m, p) embedding matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite coordinates in embeddings")
    m, p = X.shape
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / m
    cov = 0.5 * (cov + cov.T)
    return information_amount(shrink_covariance(cov, ShrinkageSpec(p=p, m=m)))


def information_amounts_from_stats(stats: GlobalStats, epoch: int = 0) -> InfoAmountTable:
    """Information amount per category from merged epoch statistics.

    The clip threshold for each category uses that category's own merged
    sample count N_i, since the merged covariance represents N_i samples
    regardless of how the windows sliced them.
    """
    amounts = {
        cat: information_amount(
            shrink_covariance(cs.cov, ShrinkageSpec(p=stats.p, m=cs.total))
        )
        for cat, cs in stats.categories.items()
    }
    return InfoAmountTable(amounts=amounts, epoch=epoch)


def info_table_to_json(table: InfoAmountTable) -> dict:
    """JSON-ready form: {"epoch": int, "info": {"<category-id>": amount}}."""
    return {
        "epoch": table.epoch,
        "info": {str(cat): float(val) for cat, val in table.ordered()},
    }


def info_table_from_json(doc: dict) -> InfoAmountTable:
    try:
        epoch = int(doc["epoch"])
        info = doc["info"]
        amounts = {int(cat): float(val) for cat, val in info.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed information-amount document: {exc}") from exc
    for cat, val in amounts.items():
        if not np.isfinite(val) or val < 0:
            raise InputError(f"category {cat}: information amount must be finite >= 0, got {val}")
    return InfoAmountTable(amounts=amounts, epoch=epoch)
