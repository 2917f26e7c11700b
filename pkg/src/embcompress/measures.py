"""Compression-quality measures for a pair (X, Xt) of embedding matrices.

The central quantity is the eigenspace overlap score: the normalized squared
Frobenius norm of the inner product of the two left-singular-vector bases.
Also provided: PIP loss (Gram-matrix distance), plain and projected
reconstruction error, and the spectral approximation constants of the
lambda-regularized Gram pencil.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import (
    LinalgError,
    ThinSVD,
    as_matrix,
    joint_orthonormal_basis,
    sq_fro_norm,
    sym_generalized_eigs,
    thin_svd,
)


class RankDeficiencyWarning(UserWarning):
    """An input matrix was numerically rank-deficient; retained singular
    vectors were used in place of the declared dimension's worth."""


@dataclass(frozen=True)
class QualityReport:
    """All quality measures for one (X, Xt) pair plus shape/rank metadata.

    ``reconstruction_error`` is None when the two matrices have different
    widths.  ``delta_max`` is +inf when delta1 reaches 1.
    """

    eigenspace_overlap: float
    pip_loss: float
    reconstruction_error: float | None
    projected_reconstruction_error: float
    delta1: float
    delta2: float
    delta: float
    delta_max: float
    lambda_used: float
    rank_x: int
    rank_xt: int
    n: int
    d: int
    k: int

    def value(self, measure: str):
        """Look up a measure by its report field name."""
        if measure not in MEASURE_NAMES:
            raise KeyError(f"unknown measure {measure!r}")
        return getattr(self, measure)


MEASURE_NAMES = (
    "eigenspace_overlap",
    "pip_loss",
    "reconstruction_error",
    "projected_reconstruction_error",
    "delta1",
    "delta2",
    "delta",
    "delta_max",
)


def _check_rows(X: np.ndarray, Xt: np.ndarray) -> None:
    if X.shape[0] != Xt.shape[0]:
        raise ValueError(f"row count mismatch: {X.shape[0]} vs {Xt.shape[0]}")


def _retained_basis(f: ThinSVD, name: str) -> np.ndarray:
    rank = f.rank()
    cols = f.V.shape[0]
    if rank < cols:
        warnings.warn(
            f"{name} is numerically rank-deficient (rank {rank} < {cols}); "
            "using the retained singular vectors",
            RankDeficiencyWarning,
            stacklevel=3,
        )
    return f.U[:, :rank]


def _overlap_from_bases(U: np.ndarray, Ut: np.ndarray, d: int, k: int) -> float:
    return sq_fro_norm(U.T @ Ut) / max(d, k)


def eigenspace_overlap(X, Xt) -> float:
    """Overlap of the left-singular-vector spans, in [0, 1].

    Equals ||U^T Ut||_F^2 / max(d, k); 1 when the spans coincide, 0 when they
    are orthogonal.  Symmetric in its arguments.  Rank-deficient inputs fall
    back to their retained singular vectors with a warning; the declared
    column counts still normalize.
    """
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    _check_rows(X, Xt)
    U = _retained_basis(thin_svd(X), "X")
    Ut = _retained_basis(thin_svd(Xt), "Xt")
    return float(_overlap_from_bases(U, Ut, X.shape[1], Xt.shape[1]))


def pip_loss(X, Xt) -> float:
    """Frobenius distance of the Gram matrices, ||X X^T - Xt Xt^T||_F.

    Computed from the small cross-Gram blocks so the n x n matrices are never
    materialized: ||XX^T||_F^2 = ||X^T X||_F^2 and the cross term is
    ||X^T Xt||_F^2.
    """
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    _check_rows(X, Xt)
    sq = sq_fro_norm(X.T @ X) + sq_fro_norm(Xt.T @ Xt) - 2.0 * sq_fro_norm(X.T @ Xt)
    return math.sqrt(max(sq, 0.0))


def reconstruction_error(X, Xt) -> float:
    """||X - Xt||_F; the matrices must have identical shape."""
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    if X.shape != Xt.shape:
        raise ValueError(
            f"reconstruction error needs identical shapes, got {X.shape} and {Xt.shape}"
        )
    return math.sqrt(sq_fro_norm(X - Xt))


def projected_reconstruction_error(X, Xt) -> float:
    """min over linear maps P of ||Xt P - X||_F^2, via the closed form
    ||X||_F^2 - ||Ut^T X||_F^2.  Requires Xt with full column rank."""
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    _check_rows(X, Xt)
    ft = thin_svd(Xt)
    rank = ft.rank()
    if rank < Xt.shape[1]:
        raise LinalgError(
            f"Xt is rank-deficient (rank {rank} < {Xt.shape[1]} columns)"
        )
    return _projected_err_from_basis(X, ft.U[:, :rank])


def _projected_err_from_basis(X: np.ndarray, Ut: np.ndarray) -> float:
    return sq_fro_norm(X) - sq_fro_norm(Ut.T @ X)


def default_lambda(X) -> float:
    """Smallest nonzero eigenvalue of the Gram matrix X X^T: the square of
    the smallest singular value above the numerical-rank threshold."""
    X = as_matrix(X, "X")
    f = thin_svd(X)
    rank = f.rank()
    if rank == 0:
        raise ValueError("zero matrix has no nonzero Gram eigenvalue")
    return float(f.s[rank - 1] ** 2)


def spectral_deltas(X, Xt, lam: float):
    """Tightest (delta1, delta2) with
    (1-delta1)(XX^T+lam I) <= Xt Xt^T + lam I <= (1+delta2)(XX^T+lam I)
    in the semidefinite order, plus delta = max of the two and
    delta_max = max(1/(1-delta1), delta2).

    Solved on the joint column span of the two singular bases (dimension
    m <= d+k); on the orthogonal complement both regularized Grams act as
    lam*I, contributing the generalized eigenvalue 1.  delta_max is +inf when
    delta1 >= 1.
    """
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    _check_rows(X, Xt)
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive, got {lam}")
    U = _retained_basis(thin_svd(X), "X")
    Ut = _retained_basis(thin_svd(Xt), "Xt")
    return _deltas_from_bases(X, Xt, U, Ut, lam)


def _deltas_from_bases(X, Xt, U, Ut, lam: float):
    n = X.shape[0]
    Q = joint_orthonormal_basis(U, Ut)
    m = Q.shape[1]
    Px = Q.T @ X
    Pt = Q.T @ Xt
    A = Pt @ Pt.T + lam * np.eye(m)
    B = Px @ Px.T + lam * np.eye(m)
    mus = sym_generalized_eigs(0.5 * (A + A.T), 0.5 * (B + B.T))
    mu_min = float(mus[0])
    mu_max = float(mus[-1])
    if n > m:
        mu_min = min(mu_min, 1.0)
        mu_max = max(mu_max, 1.0)
    delta1 = 1.0 - mu_min
    delta2 = mu_max - 1.0
    delta = max(delta1, delta2)
    if delta1 >= 1.0:
        delta_max = math.inf
    else:
        delta_max = max(1.0 / (1.0 - delta1), delta2)
    return delta1, delta2, delta, delta_max


def quality_report(X, Xt, lam: float | None = None) -> QualityReport:
    """Compute every measure for the pair, sharing one SVD per input.

    ``lam`` defaults to the smallest nonzero Gram eigenvalue of X.
    Rank-deficient inputs use their retained singular vectors (with a
    warning); the recorded ranks make that auditable.
    """
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    _check_rows(X, Xt)
    fx = thin_svd(X)
    ft = thin_svd(Xt)
    rank_x = fx.rank()
    rank_xt = ft.rank()
    U = _retained_basis(fx, "X")
    Ut = _retained_basis(ft, "Xt")
    n, d = X.shape
    k = Xt.shape[1]
    if lam is None:
        if rank_x == 0:
            raise ValueError("zero matrix has no nonzero Gram eigenvalue")
        lam = float(fx.s[rank_x - 1] ** 2)
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"lambda must be positive, got {lam}")
    delta1, delta2, delta, delta_max = _deltas_from_bases(X, Xt, U, Ut, lam)
    recon = reconstruction_error(X, Xt) if X.shape == Xt.shape else None
    return QualityReport(
        eigenspace_overlap=float(_overlap_from_bases(U, Ut, d, k)),
        pip_loss=pip_loss(X, Xt),
        reconstruction_error=recon,
        projected_reconstruction_error=max(_projected_err_from_basis(X, Ut), 0.0),
        delta1=delta1,
        delta2=delta2,
        delta=delta,
        delta_max=delta_max,
        lambda_used=float(lam),
        rank_x=rank_x,
        rank_xt=rank_xt,
        n=n,
        d=d,
        k=k,
    )
