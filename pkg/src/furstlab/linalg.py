"""Small dense linear algebra for d <= 8: canonical QR, restricted determinants,
principal angles and numerical subspace intersections.

All subspaces are represented by matrices with orthonormal columns.  Values are
immutable after construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, IllConditioned, NonFinite, SingularInput

SINGULAR_TOL = 1e-13
ORTHO_TOL = 1e-10
INTERSECT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Subspace:
    """A k-dimensional subspace of R^d given by an orthonormal frame (d x k)."""

    frame: np.ndarray

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        if frame.ndim != 2:
            raise DimensionMismatch("frame must be a d x k matrix")
        object.__setattr__(self, "frame", frame)
        frame.setflags(write=False)
        gram = frame.T @ frame
        if not np.allclose(gram, np.eye(self.k), atol=ORTHO_TOL):
            raise DimensionMismatch("frame columns are not orthonormal")

    @property
    def d(self) -> int:
        return self.frame.shape[0]

    @property
    def k(self) -> int:
        return self.frame.shape[1]

    @classmethod
    def from_spanning(cls, vectors: np.ndarray) -> "Subspace":
        """Orthonormalize a (d x k) spanning set into a canonical frame."""
        q, _ = qr_positive(np.asarray(vectors, dtype=float), allow_rectangular=True)
        return cls(q)

    @classmethod
    def span(cls, d: int, indices) -> "Subspace":
        """Coordinate subspace spanned by the given 1-based axis indices."""
        cols = [np.eye(d)[:, i - 1] for i in indices]
        if not cols:
            return cls(np.zeros((d, 0)))
        return cls(np.column_stack(cols))

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def complement(self) -> "Subspace":
        """Orthogonal complement."""
        full, _ = np.linalg.qr(
            np.column_stack([self.frame, np.eye(self.d)]) if self.k else np.eye(self.d)
        )
        # Columns of full past the first k span the complement.
        comp = full[:, self.k : self.d]
        return Subspace.from_spanning(comp) if comp.shape[1] else Subspace(comp)

    def apply(self, g: np.ndarray) -> "Subspace":
        """Image g(self), re-orthonormalized."""
        return Subspace.from_spanning(np.asarray(g, dtype=float) @ self.frame)


def qr_positive(m: np.ndarray, allow_rectangular: bool = False):
    """QR factorization with positive diagonal of R (unique for nonsingular m).

    Raises SingularInput when a pivot falls below 1e-13.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise NonFinite("non-finite entries in QR input")
    if m.ndim != 2 or (not allow_rectangular and m.shape[0] != m.shape[1]):
        raise DimensionMismatch("expected a square matrix")
    q, r = np.linalg.qr(m)
    diag = np.diagonal(r).copy()
    if m.shape[1] and np.min(np.abs(diag)) < SINGULAR_TOL:
        raise SingularInput(f"pivot magnitude {np.min(np.abs(diag)):.3e} below 1e-13")
    signs = np.sign(diag)
    q = q * signs[np.newaxis, :]
    r = r * signs[:, np.newaxis]
    return q, r


def qr_positive_batch(ms: np.ndarray):
    """Vectorized qr_positive over a stack of matrices (..., d, d)."""
    q, r = np.linalg.qr(ms)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    signs = np.sign(diag)
    signs[signs == 0] = 1.0
    q = q * signs[..., np.newaxis, :]
    r = r * signs[..., :, np.newaxis]
    return q, r


def restricted_det(g: np.ndarray, u: Subspace) -> float:
    """Volume distortion of g from u onto g(u): sqrt(det(F^T g^T g F))."""
    g = np.asarray(g, dtype=float)
    if u.k < 1:
        raise DimensionMismatch("restricted_det requires dim(u) >= 1")
    gf = g @ u.frame
    val = np.sqrt(np.linalg.det(gf.T @ gf))
    if not np.isfinite(val):
        raise NonFinite("restricted determinant overflowed")
    return float(val)


def restricted_det_batch(g: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """restricted_det(g, .) over a stack of frames (n, d, k)."""
    gf = np.einsum("ij,njk->nik", np.asarray(g, dtype=float), frames)
    grams = np.einsum("nik,nil->nkl", gf, gf)
    return np.sqrt(np.linalg.det(grams))


def _angles_from_frames(f: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Principal angles (ascending) between frame column spans, accurate at
    both ends: cosine SVD for large angles, sine SVD for small ones."""
    cos = np.linalg.svd(f.T @ f2, compute_uv=False)  # descending = ascending angle
    residual = f2 - f @ (f.T @ f2)
    sin = np.linalg.svd(residual, compute_uv=False)[::-1]  # ascending = ascending angle
    from_cos = np.arccos(np.clip(cos, 0.0, 1.0))
    from_sin = np.arcsin(np.clip(sin, 0.0, 1.0))
    return np.where(cos > 0.7, from_sin, from_cos)


def principal_angles(s: Subspace, s2: Subspace) -> np.ndarray:
    """Principal angles between equidimensional subspaces, nonincreasing, in [0, pi/2]."""
    if s.k != s2.k:
        raise DimensionMismatch(f"subspace dimensions differ: {s.k} vs {s2.k}")
    if s.d != s2.d:
        raise DimensionMismatch("ambient dimensions differ")
    return _angles_from_frames(s.frame, s2.frame)[::-1].copy()


def subspace_distance(s: Subspace, s2: Subspace) -> float:
    """Geodesic Grassmannian distance: l2 norm of the principal angles.

    When dim(s + s2) = k + 1 this reduces to the single nonzero principal
    angle, i.e. the quotient-angle distance.
    """
    return float(np.linalg.norm(principal_angles(s, s2)))


def angles_batch(frame: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Principal angles (n, k) from one frame (d x k) to a stack (n, d, k),
    hybrid cosine/sine computation as in principal_angles."""
    prods = np.einsum("ji,njl->nil", frame, frames)
    cos = np.linalg.svd(prods, compute_uv=False)
    residual = frames - np.einsum("jk,nkl->njl", frame, prods)
    sin = np.linalg.svd(residual, compute_uv=False)[:, ::-1]
    from_cos = np.arccos(np.clip(cos, 0.0, 1.0))
    from_sin = np.arcsin(np.clip(sin, 0.0, 1.0))
    return np.where(cos > 0.7, from_sin, from_cos)


def subspace_distance_batch(frame: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Distance from one frame (d x k) to a stack of frames (n, d, k)."""
    return np.linalg.norm(angles_batch(frame, frames), axis=-1)


def subspace_sum(s: Subspace, s2: Subspace) -> Subspace:
    """Orthonormal frame of s + s2 (numerical rank at tolerance 1e-10)."""
    stacked = np.column_stack([s.frame, s2.frame])
    if stacked.shape[1] == 0:
        return Subspace(np.zeros((s.d, 0)))
    u, sv, _ = np.linalg.svd(stacked, full_matrices=False)
    rank = int(np.sum(sv > 1e-10))
    return Subspace(u[:, :rank])


def subspace_intersect(s: Subspace, s2: Subspace, tol: float = INTERSECT_TOL) -> Subspace:
    """Numerical intersection of two subspaces.

    Stacks the orthogonal-complement projectors and keeps right-singular
    directions with singular value below tol.  Raises IllConditioned when a
    singular value lands in the ambiguous band [tol/10, 10*tol].
    """
    d = s.d
    if d != s2.d:
        raise DimensionMismatch("ambient dimensions differ")
    stacked = np.vstack([np.eye(d) - s.projector(), np.eye(d) - s2.projector()])
    _, sv, vt = np.linalg.svd(stacked)
    ambiguous = (sv >= tol / 10.0) & (sv <= 10.0 * tol)
    if np.any(ambiguous):
        raise IllConditioned(
            f"intersection ambiguous: singular values {sv[ambiguous]} near tol={tol}"
        )
    keep = sv < tol
    basis = vt[keep].T
    if basis.shape[1] == 0:
        return Subspace(np.zeros((d, 0)))
    return Subspace.from_spanning(basis)


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    q, _ = qr_positive(rng.standard_normal((d, d)))
    return q


def haar_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed special orthogonal matrix."""
    q = haar_orthogonal(d, rng)
    if np.linalg.det(q) < 0:
        q = q.copy()
        q[:, [0, 1]] = q[:, [1, 0]]
    return q
