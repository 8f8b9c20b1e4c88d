"""Finite-dimensional operator algebra.

Hermitian operators and density matrices are plain ``numpy`` arrays (or
``scipy.sparse`` matrices for the grid operators); the validation helpers
below check their invariants and hand the array back.  Projectors carry an
orthonormal basis of their range so that rank-1 states cost O(dim) storage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NumericalConsistencyError, StructuralError

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9
NORM_TOL = 1e-10
DEGENERACY_TOL = 1e-10
EIGENVALUE_FLOOR = 1e-14


def to_dense(a):
    """Return ``a`` as a dense complex array."""
    if sp.issparse(a):
        return a.toarray().astype(complex)
    return np.asarray(a, dtype=complex)


def _check_square(a, name="operator"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"{name} must be a square matrix, got shape {a.shape}")


def hermitian_residual(a) -> float:
    """Largest entry of ``a - a*`` relative to the largest entry of ``a``."""
    if sp.issparse(a):
        diff = abs(a - a.conj().T)
        worst = diff.max() if diff.nnz else 0.0
        scale = abs(a).max() if a.nnz else 0.0
    else:
        a = np.asarray(a)
        worst = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
        scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(worst / scale)


def as_hermitian(a, tol: float = HERMITIAN_TOL):
    """Validate that ``a`` is Hermitian and return it unchanged.

    Sparse input stays sparse; everything else is converted to a complex array.
    """
    if not sp.issparse(a):
        a = np.asarray(a, dtype=complex)
    _check_square(a)
    res = hermitian_residual(a)
    if res > tol:
        raise StructuralError(f"operator is not Hermitian (relative residual {res:.3e})")
    return a


def as_density_matrix(rho, trace_tol: float = TRACE_TOL,
                      positivity_tol: float | None = POSITIVITY_TOL) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, and (optionally) positive.

    Pass ``positivity_tol=None`` to skip the eigenvalue check.
    """
    rho = np.asarray(to_dense(rho))
    _check_square(rho, "density matrix")
    as_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise StructuralError(f"density matrix trace is {tr!r}, expected 1")
    if positivity_tol is not None:
        low = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        if low < -positivity_tol:
            raise StructuralError(f"density matrix has negative eigenvalue {low:.3e}")
    return rho


def as_pure_state(psi, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a normalized state vector."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or psi.size == 0:
        raise StructuralError("a pure state is a non-empty 1-d vector")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > tol:
        raise StructuralError(f"pure state has norm {nrm!r}")
    return psi


def basis_vector(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projection stored through an orthonormal basis of its range.

    ``basis`` has shape ``(dim, rank)``.  Use the ``from_*`` constructors
    rather than the raw initializer unless the columns are already orthonormal.
    """

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex)
        if b.ndim != 2 or b.shape[1] < 1 or b.shape[1] > b.shape[0]:
            raise StructuralError(f"projector basis must be (dim, rank>=1), got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @classmethod
    def from_vector(cls, v) -> "Projector":
        v = np.asarray(v, dtype=complex).ravel()
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            raise StructuralError("cannot project onto the zero vector")
        return cls((v / nrm)[:, None])

    @classmethod
    def from_basis(cls, vectors) -> "Projector":
        """Projector onto the span of the columns of ``vectors`` (orthonormalized)."""
        vectors = np.asarray(vectors, dtype=complex)
        if vectors.ndim == 1:
            return cls.from_vector(vectors)
        q, r = np.linalg.qr(vectors)
        keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
        if not keep.any():
            raise StructuralError("basis vectors span the zero space")
        return cls(q[:, keep])

    @classmethod
    def from_matrix(cls, p, tol: float = 1e-10) -> "Projector":
        """Recover the range basis of a dense projection matrix."""
        p = np.asarray(to_dense(p))
        _check_square(p, "projector")
        if np.max(np.abs(p @ p - p), initial=0.0) > tol or hermitian_residual(p) > tol:
            raise StructuralError("matrix is not an orthogonal projection")
        w, v = np.linalg.eigh(0.5 * (p + p.conj().T))
        keep = w > 0.5
        if not keep.any():
            raise StructuralError("projector has rank 0")
        return cls(v[:, keep])

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def vector(self) -> np.ndarray:
        """Unit vector spanning the range (rank-1 projectors only)."""
        if self.rank != 1:
            raise StructuralError(f"projector has rank {self.rank}, not 1")
        return self.basis[:, 0]

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def density(self) -> np.ndarray:
        """The normalized state ``P / rank``."""
        return self.matrix() / self.rank

    def overlap(self, other: "Projector") -> float:
        """``Tr(P Q)``."""
        g = self.basis.conj().T @ other.basis
        return float(np.sum(np.abs(g) ** 2))

    def apply(self, x):
        return self.basis @ (self.basis.conj().T @ x)


@dataclass(frozen=True)
class Branch:
    weight: float
    projector: Projector

    @property
    def probability(self) -> float:
        """Selection frequency ``weight * rank``."""
        return self.weight * self.projector.rank


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenbranches of a density matrix, weights strictly decreasing.

    ``residual`` is the total weight of the eigenvalues dropped below the floor
    (it is *not* redistributed over the retained branches).
    """

    branches: tuple
    residual: float = 0.0

    def __len__(self):
        return len(self.branches)

    def __getitem__(self, i) -> Branch:
        return self.branches[i]

    @property
    def weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.branches])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([b.probability for b in self.branches])

    def total_weight(self) -> float:
        return float(self.probabilities.sum())


def _group_spectrum(w: np.ndarray, v: np.ndarray, tol: float):
    """Merge eigenvalues closer than ``tol * max|w|``; ``w`` ascending on input."""
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    scale = np.max(np.abs(w)) if w.size else 0.0
    gap = tol * (scale if scale > 0 else 1.0)
    groups = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i - 1] - w[i] > gap:
            groups.append((float(np.mean(w[start:i])), v[:, start:i]))
            start = i
    return groups


def eigendecompose(h, degeneracy_tol: float = DEGENERACY_TOL):
    """Eigenvalues (descending) and eigenprojectors of a Hermitian operator.

    Eigenvalues within ``degeneracy_tol * ||h||`` of their neighbour are
    merged into a single eigenprojector whose rank is the multiplicity.

    Returns
    -------
    list of (float, Projector)
    """
    if degeneracy_tol <= 0:
        raise ValueError("degeneracy_tol must be positive")
    h = np.asarray(to_dense(as_hermitian(h)))
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return [(lam, Projector(vecs)) for lam, vecs in _group_spectrum(w, v, degeneracy_tol)]


def _branches(groups, floor):
    kept = [Branch(lam, Projector(vecs)) for lam, vecs in groups if lam >= floor]
    return tuple(kept)


def spectral_decompose(rho, degeneracy_tol: float = DEGENERACY_TOL,
                       floor: float = EIGENVALUE_FLOOR) -> SpectralDecomposition:
    """Spectral branches of a density matrix.

    Only Hermiticity and the trace are checked: states produced by a
    first-order step carry O(dt^2) negative eigenvalues, which fall under
    ``floor`` and are dropped together with the numerically-zero ones.
    """
    rho = np.asarray(to_dense(rho))
    _check_square(rho, "density matrix")
    as_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StructuralError(f"density matrix trace is {tr!r}, expected 1")
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    branches = _branches(_group_spectrum(w, v, degeneracy_tol), floor)
    decomp = SpectralDecomposition(branches)
    return SpectralDecomposition(branches, residual=tr - decomp.total_weight())


def spectral_decompose_factored(vectors: np.ndarray, coeffs: np.ndarray,
                                degeneracy_tol: float = DEGENERACY_TOL,
                                floor: float = EIGENVALUE_FLOOR) -> SpectralDecomposition:
    """Spectral branches of ``rho = V C V*`` without forming ``rho``.

    ``vectors`` is ``(dim, m)``, ``coeffs`` a Hermitian ``(m, m)`` matrix.  The
    eigenproblem is solved on the range of ``V``; its orthogonal complement has
    eigenvalue zero and is dropped by the floor exactly as in
    :func:`spectral_decompose`.
    """
    q, r = np.linalg.qr(vectors)
    small = r @ coeffs @ r.conj().T
    small = 0.5 * (small + small.conj().T)
    tr = np.trace(small).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StructuralError(f"density matrix trace is {tr!r}, expected 1")
    w, v = np.linalg.eigh(small)
    groups = [(lam, q @ vecs) for lam, vecs in _group_spectrum(w, v, degeneracy_tol)]
    branches = _branches(groups, floor)
    decomp = SpectralDecomposition(branches)
    return SpectralDecomposition(branches, residual=tr - decomp.total_weight())


def _trace_product(rho, x) -> complex:
    """``Tr(rho x)`` for dense ``rho`` and dense or sparse ``x``."""
    if sp.issparse(x):
        return complex(x.T.multiply(rho).sum())
    return complex(np.sum(rho * np.asarray(x).T))


def _check_pair(rho, x):
    rho = np.asarray(to_dense(rho))
    _check_square(rho, "density matrix")
    if x.shape != rho.shape:
        raise StructuralError(f"dimension mismatch: state {rho.shape}, observable {x.shape}")
    as_density_matrix(rho, positivity_tol=None)
    return rho


def expectation(rho, x) -> float:
    """``Tr(rho x)`` for a density matrix and a Hermitian observable."""
    x = as_hermitian(x)
    rho = _check_pair(rho, x)
    val = _trace_product(rho, x)
    if abs(val.imag) > 1e-10:
        raise NumericalConsistencyError(f"expectation has imaginary part {val.imag:.3e}")
    return val.real


def uncertainty(rho, x) -> float:
    """Standard deviation ``sqrt(Tr(rho x^2) - Tr(rho x)^2)``."""
    x = as_hermitian(x)
    rho = _check_pair(rho, x)
    mean = _trace_product(rho, x).real
    second = _trace_product(rho, x @ x).real
    radicand = second - mean ** 2
    if radicand < 0:
        if radicand < -1e-12 * max(1.0, abs(second)):
            raise NumericalConsistencyError(f"negative variance {radicand:.3e}")
        return 0.0
    return float(np.sqrt(radicand))


def projector_distance(a: Projector, b: Projector) -> float:
    """Operator-norm distance ``||A - B||`` (largest singular value)."""
    if a.dim != b.dim:
        raise StructuralError(f"dimension mismatch: {a.dim} vs {b.dim}")
    q, r = np.linalg.qr(np.hstack([a.basis, b.basis]))
    signs = np.concatenate([np.ones(a.rank), -np.ones(b.rank)])
    small = (r * signs) @ r.conj().T
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (small + small.conj().T)))))


def trace_distance(a, b) -> float:
    """``0.5 * ||a - b||_1`` for Hermitian matrices."""
    d = np.asarray(to_dense(a)) - np.asarray(to_dense(b))
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def operator_norm(a) -> float:
    """Spectral norm; dense SVD for small operators, ARPACK for sparse ones."""
    if sp.issparse(a):
        if min(a.shape) <= 64:
            return float(np.linalg.norm(a.toarray(), 2))
        s = spla.svds(a.tocsc().astype(complex), k=1, return_singular_vectors=False)
        return float(s[0])
    return float(np.linalg.norm(np.asarray(a), 2))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None):
    """Random full- or fixed-rank density matrix (used by tests and validation)."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (g + g.conj().T)


__all__ = [
    "Branch", "Projector", "SpectralDecomposition", "as_density_matrix",
    "as_hermitian", "as_pure_state", "basis_vector", "eigendecompose",
    "expectation", "hermitian_residual", "operator_norm", "projector_distance",
    "random_density_matrix", "random_hermitian", "spectral_decompose",
    "spectral_decompose_factored", "to_dense", "trace_distance", "uncertainty",
]
