"""PRE constraint systems, ensemble validation and counting heuristics.

An ensemble of K pure states with transition rates kappa_jk >= 0 (rate of
j <- k) is physically realizable iff for every member

    L |phi_k><phi_k| = sum_j kappa_jk (|phi_j><phi_j| - |phi_k><phi_k|),

equivalently in coherence coordinates

    l0 x_k + b = sum_j kappa_jk (x_j - x_k),      |x_k|^2 = D(D-1)/2.

This module assembles that system over a chosen transition graph, in the
full coordinate space, restricted to an invariant subspace, or reduced by a
Wigner symmetry, and verifies candidate ensembles through the independent
projector-form residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.sparse.csgraph import connected_components

from .algebra import build_basis, bloch_to_rho, pure_radius_sq
from .errors import EnsembleError, PermutationError, SubspaceError
from .model import BlochModel, lindbladian

__all__ = [
    "Ensemble",
    "ConstraintSystem",
    "VerificationReport",
    "transition_edges",
    "build_full",
    "build_subspace_reduced",
    "build_wigner_reduced",
    "verify",
    "heuristic_min_k",
]

KAPPA_CLAMP = 1e-9
KAPPA_REJECT = -1e-6
PURITY_TOL = 1e-9


def transition_edges(graph, k: int) -> list:
    """Directed edges (j, k) carrying free rates j <- k.

    ``graph`` is ``'cyclic'`` (the single cycle k -> k+1), ``'full'``
    (all off-diagonal rates) or an explicit list of index pairs.
    """
    if isinstance(graph, str):
        if graph == "cyclic":
            return [((k0 + 1) % k, k0) for k0 in range(k)]
        if graph == "full":
            return [(j, k0) for k0 in range(k) for j in range(k) if j != k0]
        raise ValueError(f"unknown graph '{graph}'")
    edges = [(int(j), int(k0)) for j, k0 in graph]
    if any(j == k0 or not (0 <= j < k) or not (0 <= k0 < k) for j, k0 in edges):
        raise ValueError("edge list contains self-loops or out-of-range indices")
    return edges


def stationary_occupations(kappa: np.ndarray) -> np.ndarray:
    """Stationary distribution of the rate matrix (kappa_jk = rate j <- k)."""
    k = kappa.shape[0]
    gen = kappa - np.diag(kappa.sum(axis=0))
    null = la.null_space(gen, rcond=1e-10)
    if null.shape[1] != 1:
        raise EnsembleError("rate matrix has no unique stationary distribution")
    w = null[:, 0].real
    w = w / w.sum()
    if np.min(w) < -1e-10:
        raise EnsembleError("stationary distribution has negative entries")
    return np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum()


def is_strongly_connected(kappa: np.ndarray, tol: float = KAPPA_CLAMP) -> bool:
    adj = (kappa > tol).astype(int)
    n_comp, _ = connected_components(adj.T, directed=True, connection="strong")
    return n_comp == 1


@dataclass(frozen=True)
class Ensemble:
    """K pure states (coherence vectors), transition rates and occupations."""

    dim: int
    states: np.ndarray  # (K, D^2 - 1)
    kappa: np.ndarray  # (K, K), kappa[j, k] = rate j <- k, zero diagonal
    occupations: np.ndarray  # (K,)

    @classmethod
    def from_states_kappa(cls, dim: int, states, kappa, validate: bool = True) -> "Ensemble":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        kappa = np.asarray(kappa, dtype=float).copy()
        if np.min(kappa) < KAPPA_REJECT:
            raise EnsembleError(f"negative transition rate {np.min(kappa):g}")
        kappa[kappa < KAPPA_CLAMP] = 0.0
        np.fill_diagonal(kappa, 0.0)
        if validate:
            radius_sq = pure_radius_sq(dim)
            basis = build_basis(dim)
            for x in states:
                if abs(x @ x - radius_sq) > 1e-6:
                    raise EnsembleError("member is not on the pure-state sphere")
                if np.min(np.linalg.eigvalsh(bloch_to_rho(x, basis))) < -PURITY_TOL:
                    raise EnsembleError("member maps to a non-positive matrix")
            if not is_strongly_connected(kappa):
                raise EnsembleError("transition graph is not strongly connected")
        occupations = stationary_occupations(kappa)
        return cls(dim=dim, states=states, kappa=kappa, occupations=occupations)

    @property
    def k(self) -> int:
        return self.states.shape[0]

    def projectors(self, basis=None) -> np.ndarray:
        basis = build_basis(self.dim) if basis is None else basis
        return np.array([bloch_to_rho(x, basis) for x in self.states])

    def kets(self, basis=None) -> np.ndarray:
        """Member states as kets (largest-eigenvalue vectors of the projectors)."""
        kets = []
        for p in self.projectors(basis):
            vals, vecs = np.linalg.eigh(p)
            kets.append(vecs[:, -1])
        return np.array(kets)

    def average(self) -> np.ndarray:
        return self.occupations @ self.states


@dataclass
class ConstraintSystem:
    """Residual map for candidate ensembles over a fixed transition graph."""

    bm: BlochModel
    k: int
    edges: list
    structure: dict
    n_params: int
    n_constraints: int
    _residual: callable
    _jacobian: callable
    _unpack: callable
    _sample: callable
    graph_consistent: bool = True
    inconsistency_reason: str = ""
    notes: dict = field(default_factory=dict)

    def residual(self, theta: np.ndarray) -> np.ndarray:
        return self._residual(np.asarray(theta, dtype=float))

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        return self._jacobian(np.asarray(theta, dtype=float))

    def unpack(self, theta: np.ndarray):
        """(states, kappa) for a parameter vector."""
        return self._unpack(np.asarray(theta, dtype=float))

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        return self._sample(rng)

    def ensemble(self, theta: np.ndarray, validate: bool = True) -> Ensemble:
        states, kappa = self.unpack(theta)
        return Ensemble.from_states_kappa(self.bm.dim, states, kappa, validate=validate)


def _sample_pure_state(bm: BlochModel, rng: np.random.Generator) -> np.ndarray:
    """Coherence vector of a Haar-random ket."""
    d = bm.dim
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    return 0.5 * d * np.einsum("kij,ji->k", bm.basis.traceless, rho).real


def _sample_kappa(n_edges: int, bm: BlochModel, rng: np.random.Generator) -> np.ndarray:
    scale = np.linalg.norm(bm.l0, 2)
    return scale * 10.0 ** rng.uniform(-2.0, 1.0, size=n_edges)


def build_full(bm: BlochModel, k: int, graph="cyclic") -> ConstraintSystem:
    """Constraint system over the full coherence space.

    Parameters are the K member vectors plus one rate per graph edge;
    constraints are K Bloch rows of length D^2-1 plus K purity rows.
    """
    if k < 2:
        raise ValueError("need at least two ensemble members")
    n = bm.n_coords
    edges = transition_edges(graph, k)
    n_edges = len(edges)
    radius_sq = pure_radius_sq(bm.dim)
    l0, b = bm.l0, bm.b

    def unpack(theta):
        states = theta[: k * n].reshape(k, n)
        kappa = np.zeros((k, k))
        for e, (j, k0) in enumerate(edges):
            kappa[j, k0] = theta[k * n + e]
        return states, kappa

    def residual(theta):
        states, kappa = unpack(theta)
        out = np.empty(k * n + k)
        flow = states @ l0.T + b  # rows: l0 x_k + b
        for k0 in range(k):
            acc = flow[k0].copy()
            for j, kk in edges:
                if kk == k0:
                    acc -= kappa[j, k0] * (states[j] - states[k0])
            out[k0 * n : (k0 + 1) * n] = acc
        out[k * n :] = np.einsum("ki,ki->k", states, states) - radius_sq
        return out

    def jacobian(theta):
        states, kappa = unpack(theta)
        jac = np.zeros((k * n + k, k * n + n_edges))
        for k0 in range(k):
            rows = slice(k0 * n, (k0 + 1) * n)
            jac[rows, k0 * n : (k0 + 1) * n] = l0
            for e, (j, kk) in enumerate(edges):
                if kk != k0:
                    continue
                jac[rows, k0 * n : (k0 + 1) * n] += kappa[j, k0] * np.eye(n)
                jac[rows, j * n : (j + 1) * n] -= kappa[j, k0] * np.eye(n)
                jac[rows, k * n + e] = -(states[j] - states[k0])
            jac[k * n + k0, k0 * n : (k0 + 1) * n] = 2.0 * states[k0]
        return jac

    def sample(rng):
        theta = np.empty(k * n + n_edges)
        for k0 in range(k):
            theta[k0 * n : (k0 + 1) * n] = _sample_pure_state(bm, rng)
        theta[k * n :] = _sample_kappa(n_edges, bm, rng)
        return theta

    return ConstraintSystem(
        bm=bm,
        k=k,
        edges=edges,
        structure={"kind": "full"},
        n_params=k * n + n_edges,
        n_constraints=k * n + k,
        _residual=residual,
        _jacobian=jacobian,
        _unpack=unpack,
        _sample=sample,
    )


def build_subspace_reduced(bm: BlochModel, sub, k: int, graph="cyclic") -> ConstraintSystem:
    """Constraint system with all members confined to an invariant subspace.

    Members are parametrized by their components along the subspace basis
    (translated by the steady state), shrinking the row count from
    K(D^2-1) + K to K(N+1).
    """
    if k < 2:
        raise ValueError("need at least two ensemble members")
    if sub.pure_witness is None:
        raise SubspaceError("subspace admits no pure state: nothing to search")
    basis_i0 = np.asarray(sub.basis_i0, dtype=float)
    n_sub = basis_i0.shape[1]
    edges = transition_edges(graph, k)
    n_edges = len(edges)
    radius_sq = pure_radius_sq(bm.dim)
    l_sub = basis_i0.T @ bm.l0 @ basis_i0
    x_ss = bm.x_ss
    proj_ss = basis_i0.T @ x_ss

    def unpack(theta):
        coeffs = theta[: k * n_sub].reshape(k, n_sub)
        kappa = np.zeros((k, k))
        for e, (j, k0) in enumerate(edges):
            kappa[j, k0] = theta[k * n_sub + e]
        return x_ss + coeffs @ basis_i0.T, kappa

    def residual(theta):
        coeffs = theta[: k * n_sub].reshape(k, n_sub)
        kappa = np.zeros((k, k))
        for e, (j, k0) in enumerate(edges):
            kappa[j, k0] = theta[k * n_sub + e]
        out = np.empty(k * n_sub + k)
        flow = coeffs @ l_sub.T
        for k0 in range(k):
            acc = flow[k0].copy()
            for j, kk in edges:
                if kk == k0:
                    acc -= kappa[j, k0] * (coeffs[j] - coeffs[k0])
            out[k0 * n_sub : (k0 + 1) * n_sub] = acc
        norms = np.einsum("ki,ki->k", coeffs, coeffs) + 2.0 * coeffs @ proj_ss
        out[k * n_sub :] = norms + x_ss @ x_ss - radius_sq
        return out

    def jacobian(theta):
        coeffs = theta[: k * n_sub].reshape(k, n_sub)
        kappa = np.zeros((k, k))
        for e, (j, k0) in enumerate(edges):
            kappa[j, k0] = theta[k * n_sub + e]
        jac = np.zeros((k * n_sub + k, k * n_sub + n_edges))
        for k0 in range(k):
            rows = slice(k0 * n_sub, (k0 + 1) * n_sub)
            jac[rows, k0 * n_sub : (k0 + 1) * n_sub] = l_sub
            for e, (j, kk) in enumerate(edges):
                if kk != k0:
                    continue
                jac[rows, k0 * n_sub : (k0 + 1) * n_sub] += kappa[j, k0] * np.eye(n_sub)
                jac[rows, j * n_sub : (j + 1) * n_sub] -= kappa[j, k0] * np.eye(n_sub)
                jac[rows, k * n_sub + e] = -(coeffs[j] - coeffs[k0])
            jac[k * n_sub + k0, k0 * n_sub : (k0 + 1) * n_sub] = 2.0 * (coeffs[k0] + proj_ss)
        return jac

    # Pure states within the slice sit on a sphere in coefficient space.
    centre = -proj_ss
    slice_radius_sq = radius_sq - x_ss @ x_ss + proj_ss @ proj_ss

    def sample(rng):
        theta = np.empty(k * n_sub + n_edges)
        r = math.sqrt(max(slice_radius_sq, 0.0))
        for k0 in range(k):
            direction = rng.normal(size=n_sub)
            direction /= np.linalg.norm(direction)
            theta[k0 * n_sub : (k0 + 1) * n_sub] = centre + r * direction
        theta[k * n_sub :] = _sample_kappa(n_edges, bm, rng)
        return theta

    return ConstraintSystem(
        bm=bm,
        k=k,
        edges=edges,
        structure={"kind": "subspace", "n": n_sub},
        n_params=k * n_sub + n_edges,
        n_constraints=k * (n_sub + 1),
        _residual=residual,
        _jacobian=jacobian,
        _unpack=unpack,
        _sample=sample,
    )


def _perm_order(perm: tuple) -> int:
    order = 1
    current = perm
    ident = tuple(range(len(perm)))
    while current != ident:
        current = tuple(perm[i] for i in current)
        order += 1
        if order > len(perm) + 1:
            raise PermutationError("permutation does not generate a finite cycle")
    return order


def _matrix_order(t0: np.ndarray, cap: int = 64) -> int | None:
    power = t0.copy()
    for q in range(1, cap + 1):
        if np.max(np.abs(power - np.eye(t0.shape[0]))) < 1e-8:
            return q
        power = power @ t0
    return None


def build_wigner_reduced(bm: BlochModel, w, perm, k: int, graph="cyclic") -> ConstraintSystem:
    """Constraint system with members identified along symmetry orbits.

    ``perm`` assigns each member its image index under the symmetry action
    (x_{perm[k]} = t0 x_k, with matching rates).  Only one member per orbit
    is free; its residual rows imply the rest.  Orbit representatives whose
    orbit closes after s steps are confined to the fixed space of t0^s.
    """
    if k < 2:
        raise ValueError("need at least two ensemble members")
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(k)):
        raise PermutationError(f"{perm} is not a permutation of 0..{k - 1}")
    t0 = np.asarray(w.t0, dtype=float)
    order = _matrix_order(t0)
    p_order = _perm_order(perm)
    if order is not None and order % p_order != 0 and p_order % order != 0:
        raise PermutationError(
            f"permutation order {p_order} incompatible with symmetry order {order}"
        )

    # Orbits of the member permutation.
    orbits = []
    seen = set()
    for start in range(k):
        if start in seen:
            continue
        orbit = [start]
        seen.add(start)
        current = perm[start]
        while current != start:
            orbit.append(current)
            seen.add(current)
            current = perm[current]
        orbits.append(orbit)

    n = bm.n_coords
    member_of = {}
    for o_idx, orbit in enumerate(orbits):
        for p, member in enumerate(orbit):
            member_of[member] = (o_idx, p)

    # Fixed-space bases: representative of an orbit of size s satisfies
    # t0^s x = x.  An absolute singular-value cut keeps the full space when
    # the power returns to the identity up to roundoff.
    def fixed_space(mat):
        _, s_vals, vh = np.linalg.svd(mat - np.eye(n))
        return vh[s_vals <= 1e-8].T

    fix_bases = []
    t_powers = [np.eye(n)]
    for _ in range(k + 1):
        t_powers.append(t_powers[-1] @ t0)
    for orbit in orbits:
        s = len(orbit)
        fix = fixed_space(t_powers[s])
        if fix.size == 0:
            raise PermutationError("symmetry power has no fixed space: empty orbit constraint")
        fix_bases.append(fix)

    # Rate symmetry: orbits of edges under (j, k) -> (perm[j], perm[k]).
    edges = transition_edges(graph, k)
    edge_set = set(edges)
    edge_orbit_of = {}
    edge_orbits = []
    graph_consistent = True
    reason = ""
    for e in edges:
        if e in edge_orbit_of:
            continue
        orbit = [e]
        edge_orbit_of[e] = len(edge_orbits)
        current = (perm[e[0]], perm[e[1]])
        forced_zero = False
        while current != e:
            if current not in edge_set:
                forced_zero = True
                graph_consistent = False
                reason = (
                    f"symmetry maps edge {e} onto {current}, absent from the "
                    "graph: its rate is forced to zero"
                )
            else:
                if current in edge_orbit_of:
                    break
                edge_orbit_of[current] = len(edge_orbits)
                orbit.append(current)
            current = (perm[current[0]], perm[current[1]])
        edge_orbits.append({"edges": orbit, "forced_zero": forced_zero})

    state_dims = [fb.shape[1] for fb in fix_bases]
    state_offsets = np.concatenate([[0], np.cumsum(state_dims)])
    n_state_params = int(state_offsets[-1])
    n_rate = len(edge_orbits)
    radius_sq = pure_radius_sq(bm.dim)
    l0, b = bm.l0, bm.b

    def unpack(theta):
        states = np.empty((k, n))
        for o_idx, orbit in enumerate(orbits):
            a = theta[state_offsets[o_idx] : state_offsets[o_idx + 1]]
            x_rep = fix_bases[o_idx] @ a
            for p, member in enumerate(orbit):
                states[member] = t_powers[p] @ x_rep
        kappa = np.zeros((k, k))
        for eo_idx, eo in enumerate(edge_orbits):
            value = 0.0 if eo["forced_zero"] else theta[n_state_params + eo_idx]
            for j, k0 in eo["edges"]:
                kappa[j, k0] = value
        return states, kappa

    def residual(theta):
        states, kappa = unpack(theta)
        rows = []
        for o_idx, orbit in enumerate(orbits):
            rep = orbit[0]
            acc = l0 @ states[rep] + b
            for j, kk in edges:
                if kk == rep:
                    acc = acc - kappa[j, rep] * (states[j] - states[rep])
            rows.append(acc)
            rows.append([states[rep] @ states[rep] - radius_sq])
        return np.concatenate(rows)

    def jacobian(theta):
        # Orbit expansion makes analytic rows awkward; the systems are small.
        eps = 1e-7
        base = residual(theta)
        jac = np.empty((base.size, theta.size))
        for i in range(theta.size):
            bumped = theta.copy()
            bumped[i] += eps
            jac[:, i] = (residual(bumped) - base) / eps
        return jac

    def sample(rng):
        theta = np.empty(n_state_params + n_rate)
        for o_idx, orbit in enumerate(orbits):
            fix = fix_bases[o_idx]
            proj_ss = fix.T @ bm.x_ss
            centre = -proj_ss  # sphere of pure states inside the fixed space
            rad_sq = radius_sq - bm.x_ss @ bm.x_ss + proj_ss @ proj_ss
            direction = rng.normal(size=fix.shape[1])
            direction /= np.linalg.norm(direction)
            a = fix.T @ bm.x_ss + centre + math.sqrt(max(rad_sq, 0.0)) * direction
            theta[state_offsets[o_idx] : state_offsets[o_idx + 1]] = a
        theta[n_state_params:] = _sample_kappa(n_rate, bm, rng)
        return theta

    return ConstraintSystem(
        bm=bm,
        k=k,
        edges=edges,
        structure={
            "kind": "wigner",
            "perm": perm,
            "n_orbits": len(orbits),
            "orbits": orbits,
        },
        n_params=n_state_params + n_rate,
        n_constraints=len(orbits) * (n + 1),
        _residual=residual,
        _jacobian=jacobian,
        _unpack=unpack,
        _sample=sample,
        graph_consistent=graph_consistent,
        inconsistency_reason=reason,
        notes={"edge_orbits": edge_orbits, "fix_dims": state_dims},
    )


@dataclass
class VerificationReport:
    """Outcome of the projector-form check of a candidate ensemble."""

    residuals: np.ndarray
    max_residual: float
    purity_margins: np.ndarray
    positivity_margins: np.ndarray
    kappa_min: float
    strongly_connected: bool
    occupations: np.ndarray
    ensemble_average_error: float
    tol: float
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max residual {self.max_residual:.3e} (tol {self.tol:.1e}), "
            f"min rate {self.kappa_min:.3e}, "
            f"connected={self.strongly_connected}, "
            f"average error {self.ensemble_average_error:.3e}"
        )


def verify(bm: BlochModel, ens: Ensemble, tol: float = 1e-8) -> VerificationReport:
    """Check an ensemble against the projector-form condition.

    This path evaluates the generator on the member projectors directly and
    is independent of the coherence-space residual used by the solvers.
    """
    liou = lindbladian(bm.me)
    projectors = ens.projectors(bm.basis)
    residuals = np.empty(ens.k)
    purity = np.empty(ens.k)
    positivity = np.empty(ens.k)
    radius_sq = pure_radius_sq(bm.dim)
    for k0 in range(ens.k):
        lhs = liou.apply(projectors[k0])
        rhs = sum(
            ens.kappa[j, k0] * (projectors[j] - projectors[k0])
            for j in range(ens.k)
            if j != k0
        )
        residuals[k0] = np.linalg.norm(lhs - rhs)
        purity[k0] = ens.states[k0] @ ens.states[k0] - radius_sq
        positivity[k0] = np.min(np.linalg.eigvalsh(projectors[k0]))
    connected = is_strongly_connected(ens.kappa)
    avg_err = float(np.linalg.norm(ens.average() - bm.x_ss))
    max_residual = float(residuals.max())
    passed = (
        max_residual <= tol
        and connected
        and float(np.min(ens.kappa)) >= KAPPA_REJECT
        and np.all(np.abs(purity) <= 1e-6)
        and np.all(positivity >= -1e-6)
    )
    return VerificationReport(
        residuals=residuals,
        max_residual=max_residual,
        purity_margins=purity,
        positivity_margins=positivity,
        kappa_min=float(ens.kappa[~np.eye(ens.k, dtype=bool)].min()),
        strongly_connected=connected,
        occupations=ens.occupations,
        ensemble_average_error=avg_err,
        tol=tol,
        passed=passed,
    )


def heuristic_min_k(d: int, real_subspace: bool = False) -> int:
    """Parameter-counting lower bound on the ensemble size.

    ``d*d - 2*d + 2`` in general; restricting states and matrices to real
    values halves the leading coefficient, giving ``ceil((d*d - d + 2)/2)``.
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    if real_subspace:
        return math.ceil((d * d - d + 2) / 2)
    return d * d - 2 * d + 2
