"""Fréchet distance between two Gaussians, dense and low-rank paths.

The distance is ||mu_r - mu_g||^2 + Tr(S_r) + Tr(S_g) - 2 Tr((S_r S_g)^{1/2}).

Dense path: the cross term is computed as Tr((S S_g S)^{1/2}) with
S = S_r^{1/2} from a symmetric eigendecomposition. S_r S_g and S S_g S share
eigenvalues (similar matrices), so the traces of their square roots agree,
and only symmetric decompositions are ever needed.

Low-rank path: with factors A_r (N_r x D), A_g (N_g x D) and covariances
A^T A, the nonzero eigenvalues of S_r S_g equal the squared singular values
of the small cross matrix M = A_r A_g^T, so the cross term is exactly the
nuclear norm of M. No D x D matrix is ever formed.

Eigen/singular values below 1e-12 of the largest magnitude are clamped to
zero; the number of negative eigenvalues clamped is reported for
diagnosability. If a decomposition fails or returns non-finite values, the
dense path retries once with 1e-6 added to both covariance diagonals and
flags the result as regularized.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NumericalFailure, RepresentationMismatch
from .stats import DENSE_MAX_DIM, GaussianStats

CLAMP_REL_TOL = 1e-12

REGULARIZATION_EPS = 1e-6


@dataclass(frozen=True)
class FrechetBreakdown:
    """Per-term decomposition of one Fréchet distance evaluation."""

    mean_term: float
    trace_r: float
    trace_g: float
    cross_term: float
    total: float
    clamped_eigenvalues: int
    path: str
    regularized: bool = False

    def as_dict(self) -> dict:
        return {
            "mean_term": self.mean_term,
            "trace_r": self.trace_r,
            "trace_g": self.trace_g,
            "cross_term": self.cross_term,
            "total": self.total,
            "clamped_eigenvalues": self.clamped_eigenvalues,
            "path": self.path,
            "regularized": self.regularized,
        }


def _clamp_spectrum(values: np.ndarray) -> tuple:
    """Zero out values below tolerance; count the negative ones clamped."""
    if values.size == 0:
        return values, 0
    tol = CLAMP_REL_TOL * float(np.max(np.abs(values)))
    negatives = int(np.sum(values < 0))
    return np.where(values < tol, 0.0, values), negatives


def _sym_sqrt(mat: np.ndarray) -> tuple:
    w, v = np.linalg.eigh(mat)
    w, clamped = _clamp_spectrum(w)
    return (v * np.sqrt(w)) @ v.T, clamped


def _dense_cross_term(cov_r: np.ndarray, cov_g: np.ndarray) -> tuple:
    s, clamped_1 = _sym_sqrt(cov_r)
    inner = s @ cov_g @ s
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    w, clamped_2 = _clamp_spectrum(w)
    return float(np.sum(np.sqrt(w))), clamped_1 + clamped_2


def _check_dims(r: GaussianStats, g: GaussianStats):
    if r.dim != g.dim:
        raise DimensionMismatch(f"stats dims differ: {r.dim} vs {g.dim}")


def _mean_term(r: GaussianStats, g: GaussianStats) -> float:
    d = r.mean - g.mean
    return float(d @ d)


def _assemble(mean_term, trace_r, trace_g, cross, clamped, path, regularized=False):
    total = mean_term + trace_r + trace_g - 2.0 * cross
    return FrechetBreakdown(
        mean_term=mean_term,
        trace_r=trace_r,
        trace_g=trace_g,
        cross_term=cross,
        total=max(0.0, total),
        clamped_eigenvalues=clamped,
        path=path,
        regularized=regularized,
    )


def frechet_dense(r: GaussianStats, g: GaussianStats) -> FrechetBreakdown:
    """Eq.-3 distance for two dense-covariance Gaussians."""
    _check_dims(r, g)
    if r.representation != "dense" or g.representation != "dense":
        raise RepresentationMismatch("frechet_dense requires dense covariances on both sides")
    regularized = False
    try:
        cross, clamped = _dense_cross_term(r.cov, g.cov)
        ok = np.isfinite(cross)
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        regularized = True
        eye = REGULARIZATION_EPS * np.eye(r.dim)
        try:
            cross, clamped = _dense_cross_term(r.cov + eye, g.cov + eye)
        except np.linalg.LinAlgError as e:
            raise NumericalFailure(f"eigendecomposition failed even after regularization: {e}")
        if not np.isfinite(cross):
            raise NumericalFailure("cross term non-finite after regularization")
    return _assemble(
        _mean_term(r, g),
        float(np.trace(r.cov)),
        float(np.trace(g.cov)),
        cross,
        clamped,
        "dense",
        regularized,
    )


def frechet_lowrank(r: GaussianStats, g: GaussianStats) -> FrechetBreakdown:
    """Same distance via the nuclear norm of the N_r x N_g cross factor."""
    _check_dims(r, g)
    if r.representation != "lowrank" or g.representation != "lowrank":
        raise RepresentationMismatch("frechet_lowrank requires lowrank factors on both sides")
    cross_matrix = r.factor @ g.factor.T
    regularized = False
    try:
        singulars = np.linalg.svd(cross_matrix, compute_uv=False)
    except np.linalg.LinAlgError:
        # svd of M M^T as fallback; eigvalsh is more forgiving than svd here
        regularized = True
        try:
            eigs = np.linalg.eigvalsh(cross_matrix @ cross_matrix.T)
        except np.linalg.LinAlgError as e:
            raise NumericalFailure(f"SVD of cross factor failed: {e}")
        singulars = np.sqrt(np.maximum(eigs, 0.0))
    singulars, clamped = _clamp_spectrum(singulars)
    return _assemble(
        _mean_term(r, g),
        float(np.sum(r.factor * r.factor)),
        float(np.sum(g.factor * g.factor)),
        float(np.sum(singulars)),
        clamped,
        "lowrank",
        regularized,
    )


def frechet(r: GaussianStats, g: GaussianStats) -> FrechetBreakdown:
    """Dispatch to the matching path; mixed representations are reconciled
    by materializing the lowrank side only when the dimension permits."""
    _check_dims(r, g)
    if r.representation == g.representation:
        if r.representation == "dense":
            return frechet_dense(r, g)
        return frechet_lowrank(r, g)
    if r.dim > DENSE_MAX_DIM:
        raise RepresentationMismatch(
            f"mixed representations at dim {r.dim}: both sides must be lowrank "
            f"above the {DENSE_MAX_DIM} dense ceiling"
        )

    def lift(s: GaussianStats) -> GaussianStats:
        if s.representation == "dense":
            return s
        return GaussianStats(s.dim, s.count, s.mean, cov=s.implied_cov())

    return frechet_dense(lift(r), lift(g))
