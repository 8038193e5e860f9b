"""Hermitian operator bases, coherence-vector maps and eigen primitives.

The traceless basis elements are normalized to ``Tr[s_i s_j] = 2 delta_ij``
and the last element is the identity.  With that normalization a pure state
has squared coherence-vector length ``D(D-1)/2`` and purity obeys
``Tr[rho^2] = 1/D + (2/D^2) x.x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import ConvergenceError, DimensionError, NormalizationError, ShapeError

__all__ = [
    "OperatorBasis",
    "Superoperator",
    "Spectrum",
    "EigenCluster",
    "build_basis",
    "rho_to_bloch",
    "bloch_to_rho",
    "pure_radius_sq",
    "eig_full",
]


def pure_radius_sq(dim: int) -> float:
    """Squared coherence-vector length of a pure state, D(D-1)/2."""
    return dim * (dim - 1) / 2.0


@dataclass(frozen=True)
class OperatorBasis:
    """Orthogonal Hermitian basis with the identity in the last slot."""

    dim: int
    elements: np.ndarray  # (dim^2, dim, dim) complex

    def __post_init__(self):
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=complex))

    @property
    def traceless(self) -> np.ndarray:
        """The dim^2 - 1 traceless elements."""
        return self.elements[:-1]


def build_basis(dim: int) -> OperatorBasis:
    """Generalized Gell-Mann basis: symmetric, antisymmetric, diagonal families.

    For ``dim == 2`` this is exactly the Pauli set (sx, sy, sz, identity).
    """
    if dim < 2:
        raise DimensionError(f"basis needs dim >= 2, got {dim}")
    mats = []
    # Symmetric off-diagonal family (sigma_x-like).
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            mats.append(m)
    # Antisymmetric off-diagonal family (sigma_y-like).
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = -1.0j
            m[k, j] = 1.0j
            mats.append(m)
    # Diagonal family (sigma_z-like), Tr[m^2] = 2.
    for l in range(1, dim):
        d = np.zeros(dim, dtype=complex)
        d[:l] = 1.0
        d[l] = -l
        mats.append(np.diag(d) * np.sqrt(2.0 / (l * (l + 1))))
    mats.append(np.eye(dim, dtype=complex))
    return OperatorBasis(dim=dim, elements=np.array(mats))


def rho_to_bloch(rho: np.ndarray, basis: OperatorBasis) -> np.ndarray:
    """Coherence vector x_i = (D/2) Tr[rho s_i] of a unit-trace matrix."""
    rho = np.asarray(rho, dtype=complex)
    d = basis.dim
    if rho.shape != (d, d):
        raise ShapeError(f"expected {(d, d)} matrix, got {rho.shape}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > 1e-10:
        raise NormalizationError(f"matrix trace {tr} is not 1 within 1e-10")
    x = 0.5 * d * np.einsum("kij,ji->k", basis.traceless, rho)
    return x.real


def bloch_to_rho(x: np.ndarray, basis: OperatorBasis) -> np.ndarray:
    """Reconstruct rho = (1/D)(1 + sum_j x_j s_j); Hermitian with unit trace.

    No positivity check is made: vectors on the pure-radius sphere may still
    map outside the state set for D > 2.
    """
    x = np.asarray(x, dtype=float)
    d = basis.dim
    if x.shape != (d * d - 1,):
        raise ShapeError(f"expected coherence vector of length {d * d - 1}, got {x.shape}")
    rho = (np.eye(d, dtype=complex) + np.tensordot(x, basis.traceless, axes=1)) / d
    return rho


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random mixed state from a Ginibre factor (full rank by default)."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_pure_ket(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unit ket."""
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


class Superoperator:
    """Linear map on D x D matrices, held as its images on basis elements."""

    def __init__(self, action, dim: int):
        self._action = action
        self.dim = dim
        self._rep = None

    def apply(self, mat: np.ndarray) -> np.ndarray:
        return self._action(np.asarray(mat, dtype=complex))

    def __call__(self, mat: np.ndarray) -> np.ndarray:
        return self.apply(mat)

    def matrix_rep(self, basis: OperatorBasis) -> np.ndarray:
        """Real D^2 x D^2 representation acting on the coordinate vector r
        (r_j = D Tr[s_j rho] / Tr[s_j^2], identity slot last)."""
        if self._rep is None:
            d2 = self.dim * self.dim
            rep = np.empty((d2, d2))
            norms = np.array([2.0] * (d2 - 1) + [float(self.dim)])
            for j in range(d2):
                img = self.apply(basis.elements[j])
                rep[:, j] = (np.einsum("kab,ba->k", basis.elements, img) / norms).real
            self._rep = rep
        return self._rep


@dataclass
class EigenCluster:
    """One eigenvalue cluster with multiplicities and any Jordan chains."""

    value: complex
    algebraic: int
    geometric: int
    vectors: np.ndarray  # (n, geometric) ordinary eigenvectors, columns
    jordan_chains: list = field(default_factory=list)  # each a list of vectors

    @property
    def defective(self) -> bool:
        return self.geometric < self.algebraic


@dataclass
class Spectrum:
    """Full eigen-decomposition with a defect report."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, as returned by the eigensolver
    clusters: list
    tol: float

    @property
    def defective(self) -> bool:
        return any(c.defective for c in self.clusters)

    def real_eigenpairs(self) -> list:
        """(value, unit vector) for clusters with real value and real vector."""
        out = []
        for c in self.clusters:
            if abs(c.value.imag) > self.tol:
                continue
            for i in range(c.vectors.shape[1]):
                v = c.vectors[:, i]
                # Rotate the global phase to make the vector as real as possible.
                k = np.argmax(np.abs(v))
                v = v * np.exp(-1j * np.angle(v[k]))
                if np.max(np.abs(v.imag)) <= self.tol * 10:
                    out.append((c.value.real, v.real / np.linalg.norm(v.real)))
        return out

    def complex_pairs(self) -> list:
        """One (value, vector) per conjugate pair, Im(value) > 0."""
        out = []
        for c in self.clusters:
            if c.value.imag > self.tol:
                for i in range(c.vectors.shape[1]):
                    out.append((c.value, c.vectors[:, i]))
        return out


def eig_full(m: np.ndarray, tol_scale: float = 1e-8) -> Spectrum:
    """Eigen-decomposition with tolerance-clustered multiplicities.

    Eigenvalues closer than ``tol_scale * ||m||`` are merged into one cluster.
    For each cluster the geometric multiplicity is the SVD-rank deficiency of
    ``m - value*I``; when it falls short of the algebraic multiplicity,
    Jordan chains ``(m - value) e_j = e_{j-1}`` are built on top of each
    ordinary eigenvector.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ShapeError("matrix has non-finite entries")
    n = m.shape[0]
    try:
        vals, vecs = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    resid = np.linalg.norm(m @ vecs - vecs * vals, axis=0)
    scale = max(np.linalg.norm(m, 2), 1e-300)
    if np.any(resid > 1e-6 * scale):
        raise ConvergenceError("eigenpair residual too large", residual=float(resid.max()))
    tol = tol_scale * scale

    order = np.lexsort((vals.imag, vals.real))
    clusters = []
    used = np.zeros(n, dtype=bool)
    for i in order:
        if used[i]:
            continue
        group = [j for j in range(n) if not used[j] and abs(vals[j] - vals[i]) <= tol]
        for j in group:
            used[j] = True
        value = vals[group].mean()
        shifted = m - value * np.eye(n)
        null = la.null_space(shifted, rcond=tol / scale)
        geometric = null.shape[1] if null.size else 0
        cluster = EigenCluster(
            value=value,
            algebraic=len(group),
            geometric=max(geometric, 1),
            vectors=null if null.size else vecs[:, group[:1]],
        )
        if cluster.defective:
            cluster.jordan_chains = _jordan_chains(shifted, cluster, tol)
        clusters.append(cluster)
    return Spectrum(eigenvalues=vals, eigenvectors=vecs, clusters=clusters, tol=tol)


def _jordan_chains(shifted: np.ndarray, cluster: EigenCluster, tol: float) -> list:
    """Extend each ordinary eigenvector by generalized ones while consistent."""
    chains = []
    budget = cluster.algebraic - cluster.geometric
    for i in range(cluster.vectors.shape[1]):
        chain = [cluster.vectors[:, i]]
        while budget > 0:
            nxt, *_ = np.linalg.lstsq(shifted, chain[-1], rcond=None)
            if np.linalg.norm(shifted @ nxt - chain[-1]) > tol * max(1.0, np.linalg.norm(nxt)):
                break
            chain.append(nxt)
            budget -= 1
        chains.append(chain)
    return chains
