"""Producing ensembles: closed forms, symmetric linear families, multistart.

Three routes are implemented.

* ``analytic_k2``: every real eigenvector of l0 supplies a two-member
  ensemble on the line through the steady state, with rates fixed by the
  eigenvalue and the stationarity split.
* ``solve_wigner_family``: when the generator admits an azimuthal rotation
  symmetry, K equally spaced members on the symmetry circle reduce the
  whole system to two linear equations for the rates out of one member;
  the nonnegative solution polytope is returned through its vertices.
* ``solve_numeric``: seeded multistart Levenberg-Marquardt on any
  assembled constraint system, with acceptance filtering, independent
  projector-form verification and permutation-aware deduplication.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .algebra import eig_full, pure_radius_sq
from .constraints import (
    KAPPA_REJECT,
    ConstraintSystem,
    Ensemble,
    is_strongly_connected,
    verify,
)
from .errors import EnsembleError
from .model import BlochModel
from .symmetry import certify_wigner, lie_element

__all__ = [
    "SolverConfig",
    "SolutionSet",
    "analytic_k2",
    "solve_wigner_family",
    "solve_numeric",
    "scan_existence",
    "ensemble_distance",
    "dedup",
]


@dataclass(frozen=True)
class SolverConfig:
    """Multistart settings; identical rng_seed gives identical output."""

    tol: float = 1e-10
    seeds: int = 512
    max_iter: int = 200
    rng_seed: int = 0
    dedup_eps: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.seeds < 1:
            raise ValueError("need at least one start")


@dataclass
class SolutionSet:
    """Deduplicated ensembles plus per-start convergence bookkeeping."""

    ensembles: list
    diagnostics: dict = field(default_factory=dict)
    family_tags: list = field(default_factory=list)

    def __len__(self):
        return len(self.ensembles)


def ensemble_distance(e1: Ensemble, e2: Ensemble, rate_scale: float = 1.0) -> float:
    """Label-free distance: minimum over member relabelings of the largest
    member displacement plus the scaled rate-matrix mismatch."""
    if e1.k != e2.k or e1.dim != e2.dim:
        return np.inf
    best = np.inf
    k = e1.k
    for perm in itertools.permutations(range(k)):
        perm = list(perm)
        d_states = np.max(np.linalg.norm(e1.states - e2.states[perm], axis=1))
        if d_states >= best:
            continue
        d_kappa = np.max(np.abs(e1.kappa - e2.kappa[np.ix_(perm, perm)]))
        best = min(best, d_states + d_kappa / rate_scale)
    return float(best)


def dedup(ensembles: list, eps: float = 1e-6, rate_scale: float = 1.0) -> list:
    """Drop duplicates up to member relabeling; order-stable and idempotent."""
    kept = []
    for ens in ensembles:
        if all(ensemble_distance(ens, other, rate_scale) > eps for other in kept):
            kept.append(ens)
    return kept


def _canonical_sort(ensembles: list) -> list:
    return sorted(
        ensembles,
        key=lambda e: np.round(np.sort(e.states, axis=0), 9).tobytes(),
    )


def analytic_k2(bm: BlochModel) -> SolutionSet:
    """Two-member ensembles from the real eigenvectors of l0.

    The member pair sits where the line through the steady state along an
    eigenvector pierces the pure-state sphere; the rate sum is the negated
    eigenvalue and the split follows the stationary occupations.  Degenerate
    eigenspaces yield one representative tagged as a rotation family.
    """
    spec = eig_full(bm.l0)
    radius_sq = pure_radius_sq(bm.dim)
    out = []
    tags = []
    diagnostics = {"eigenvalues": [], "skipped": []}
    for cluster in spec.clusters:
        if abs(cluster.value.imag) > spec.tol:
            continue
        lam = cluster.value.real
        pairs = [(i, cluster.vectors[:, i]) for i in range(cluster.vectors.shape[1])]
        degenerate = cluster.geometric >= 2 and not cluster.defective
        reps = pairs[:1] if degenerate else pairs
        for _, e in reps:
            e = np.real_if_close(e)
            if np.max(np.abs(np.imag(e))) > 1e-10:
                continue
            e = np.real(e)
            e = e / np.linalg.norm(e)
            # |x_ss + t e|^2 = R^2
            dot = e @ bm.x_ss
            disc = dot * dot - (bm.x_ss @ bm.x_ss - radius_sq)
            if disc <= 0:
                diagnostics["skipped"].append((lam, "line misses the pure sphere"))
                continue
            t_plus = -dot + np.sqrt(disc)
            t_minus = -dot - np.sqrt(disc)
            x1 = bm.x_ss + t_plus * e
            x2 = bm.x_ss + t_minus * e
            eta1, eta2 = t_plus, -t_minus
            kappa = np.zeros((2, 2))
            kappa[1, 0] = -lam * eta1 / (eta1 + eta2)  # rate 2 <- 1
            kappa[0, 1] = -lam * eta2 / (eta1 + eta2)
            try:
                ens = Ensemble.from_states_kappa(bm.dim, np.array([x1, x2]), kappa)
            except EnsembleError as exc:
                diagnostics["skipped"].append((lam, str(exc)))
                continue
            out.append(ens)
            tags.append(
                {
                    "eigenvalue": lam,
                    "family": "rotation within degenerate eigenspace" if degenerate else None,
                }
            )
            diagnostics["eigenvalues"].append(lam)
    order = np.argsort([t["eigenvalue"] for t in tags]) if tags else []
    return SolutionSet(
        ensembles=[out[i] for i in order],
        diagnostics=diagnostics,
        family_tags=[tags[i] for i in order],
    )


def _azimuthal_frame(bm: BlochModel, k: int):
    """Rotation generator certified at angle 2*pi/k, its plane and radius."""
    spec = eig_full(bm.l0)
    for cluster in spec.clusters:
        if abs(cluster.value.imag) > spec.tol or cluster.geometric < 2:
            continue
        space = np.real(cluster.vectors[:, :2])
        q, _ = np.linalg.qr(space)
        e1, e2 = q[:, 0], q[:, 1]
        gen = np.outer(e2, e1) - np.outer(e1, e2)
        t0 = lie_element(gen, 2 * np.pi / k)
        if certify_wigner(bm, t0)["certified"]:
            return gen, e1, e2
    return None


def solve_wigner_family(bm: BlochModel, k: int) -> SolutionSet:
    """Maximally symmetric K-member ensembles on the symmetry circle.

    Needs an azimuthal rotation symmetry (certified internally).  Members
    are pinned at angles 2*pi*j/K on the circle of pure states around the
    symmetry axis, one of them on the canonical in-plane axis; the rates
    out of the first member satisfy two linear equations whose nonnegative
    polytope is returned via its vertices plus one interior point.
    """
    if k < 2:
        raise ValueError("need at least two ensemble members")
    frame = _azimuthal_frame(bm, k)
    if frame is None:
        return SolutionSet(ensembles=[], diagnostics={"reason": "no azimuthal symmetry"})
    gen, e1, e2 = frame
    radius_sq = pure_radius_sq(bm.dim)
    r_sq = radius_sq - bm.x_ss @ bm.x_ss + (e1 @ bm.x_ss) ** 2 + (e2 @ bm.x_ss) ** 2
    if r_sq <= 0:
        return SolutionSet(ensembles=[], diagnostics={"reason": "symmetry circle is empty"})
    r = np.sqrt(r_sq)
    angles = 2 * np.pi * np.arange(k) / k
    states = np.array(
        [bm.x_ss + r * (np.cos(a) * e1 + np.sin(a) * e2) for a in angles]
    )

    # Constraint row for member 0 projected on the plane:
    #   sum_j kappa_j0 (cos th_j - 1) = a,  sum_j kappa_j0 sin th_j = c.
    lhs = bm.l0 @ states[0] + bm.b
    a_coef = e1 @ lhs / r
    c_coef = e2 @ lhs / r
    cols = np.array([[np.cos(a) - 1.0, np.sin(a)] for a in angles[1:]]).T  # (2, k-1)
    rhs = np.array([a_coef, c_coef])

    # Vertices of {kappa >= 0 : cols @ kappa = rhs}: basic feasible solutions.
    n_free = k - 1
    rank = np.linalg.matrix_rank(cols, tol=1e-12)
    vertices = []
    for support in itertools.combinations(range(n_free), min(rank, n_free)):
        sub = cols[:, support]
        sol, res, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        full = np.zeros(n_free)
        full[list(support)] = sol
        if np.linalg.norm(cols @ full - rhs) > 1e-10 * max(1.0, np.linalg.norm(rhs)):
            continue
        if np.min(full) < -1e-12:
            continue
        full = np.clip(full, 0.0, None)
        if not any(np.max(np.abs(full - v)) < 1e-10 for v in vertices):
            vertices.append(full)
    diagnostics = {
        "linear_system": {"matrix": cols, "rhs": rhs},
        "vertices": vertices,
        "radius": r,
    }
    candidates = list(vertices)
    if len(vertices) > 1:
        candidates.append(np.mean(vertices, axis=0))  # interior point
    out = []
    tags = []
    for rates in candidates:
        kappa = np.zeros((k, k))
        for shift, value in enumerate(rates, start=1):
            if value <= 0:
                continue
            for k0 in range(k):
                kappa[(k0 + shift) % k, k0] = value
        if not is_strongly_connected(kappa):
            diagnostics.setdefault("dropped", []).append(
                {"rates": rates, "reason": "not strongly connected"}
            )
            continue
        try:
            ens = Ensemble.from_states_kappa(bm.dim, states, kappa)
        except EnsembleError as exc:
            diagnostics.setdefault("dropped", []).append({"rates": rates, "reason": str(exc)})
            continue
        if not verify(bm, ens, tol=1e-8).passed:
            diagnostics.setdefault("dropped", []).append(
                {"rates": rates, "reason": "verification failed"}
            )
            continue
        out.append(ens)
        tags.append({"family": "azimuthal rotation", "generator": gen, "rates_out": rates})
    return SolutionSet(ensembles=out, diagnostics=diagnostics, family_tags=tags)


def _max_workers() -> int:
    raw = os.environ.get("PRE_FORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def solve_numeric(cs: ConstraintSystem, cfg: SolverConfig | None = None) -> SolutionSet:
    """Multistart root finding on an assembled constraint system.

    Starts are drawn from the pure-state set (or its subspace slice) with
    log-uniform rates; converged points are kept when the residual meets
    ``cfg.tol``, rates are nonnegative up to clamping, the graph stays
    strongly connected and the independent projector-form check passes.
    """
    cfg = SolverConfig() if cfg is None else cfg
    diagnostics = {
        "n_starts": cfg.seeds,
        "n_converged": 0,
        "n_accepted": 0,
        "rejections": {},
        "graph_consistent": cs.graph_consistent,
    }
    if not cs.graph_consistent:
        diagnostics["reason"] = cs.inconsistency_reason
        return SolutionSet(ensembles=[], diagnostics=diagnostics)

    def reject(reason):
        diagnostics["rejections"][reason] = diagnostics["rejections"].get(reason, 0) + 1

    # LM needs at least as many rows as parameters; underdetermined systems
    # (e.g. full transition graphs) fall back to the trust-region solver.
    method = "lm" if cs.n_constraints >= cs.n_params else "trf"

    def run_start(index):
        rng = np.random.default_rng([cfg.rng_seed, index])
        theta0 = cs.sample_start(rng)
        try:
            res = least_squares(
                cs.residual,
                theta0,
                jac=cs.jacobian,
                method=method,
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=cfg.max_iter,
            )
        except Exception:  # singular jacobians on stray starts
            return None
        return res.x

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(run_start, range(cfg.seeds)))
    else:
        raw = [run_start(i) for i in range(cfg.seeds)]

    rate_scale = max(np.linalg.norm(cs.bm.l0, 2), 1e-300)
    accepted = []
    for theta in raw:
        if theta is None:
            reject("solver failure")
            continue
        resid = np.max(np.abs(cs.residual(theta)))
        if resid > cfg.tol:
            reject("residual above tolerance")
            continue
        diagnostics["n_converged"] += 1
        states, kappa = cs.unpack(theta)
        if np.min(kappa) < KAPPA_REJECT:
            reject("negative rate")
            continue
        try:
            ens = cs.ensemble(theta)
        except EnsembleError as exc:
            reject(str(exc))
            continue
        if not verify(cs.bm, ens, tol=10 * cfg.tol).passed:
            reject("projector-form verification failed")
            continue
        accepted.append(ens)
        diagnostics["n_accepted"] += 1
    unique = dedup(_canonical_sort(accepted), cfg.dedup_eps, rate_scale)
    return SolutionSet(ensembles=unique, diagnostics=diagnostics)


def family_equivalent(e1: Ensemble, e2: Ensemble, generator: np.ndarray, eps: float = 1e-6) -> bool:
    """Whether two ensembles differ only by a rotation of the given family."""
    if e1.k != e2.k:
        return False
    gen = np.asarray(generator, dtype=float)
    # Align each member of e2 in turn with member 0 of e1; the plane basis
    # from the SVD carries no orientation, so both senses are tried.
    u, _, _ = np.linalg.svd(gen)
    plane = u[:, :2]
    p1 = plane.T @ e1.states[0]
    a1 = np.arctan2(p1[1], p1[0])
    for j in range(e2.k):
        p2 = plane.T @ e2.states[j]
        if np.linalg.norm(p2) < 1e-12 or abs(np.linalg.norm(p2) - np.linalg.norm(p1)) > eps:
            continue
        theta = a1 - np.arctan2(p2[1], p2[0])
        for angle in (theta, -theta):
            rotated = Ensemble.from_states_kappa(
                e2.dim, e2.states @ lie_element(gen, angle).T, e2.kappa.copy(), validate=False
            )
            if ensemble_distance(e1, rotated) <= eps:
                return True
    return False


@dataclass
class ExistenceTable:
    """Distinct-solution counts over a parameter grid plus change points."""

    parameter: str
    values: np.ndarray
    counts: np.ndarray
    thresholds: list

    def rows(self):
        return list(zip(self.values.tolist(), self.counts.tolist()))


def scan_existence(
    bm_factory,
    values,
    cs_builder,
    cfg: SolverConfig | None = None,
    parameter: str = "parameter",
    quotient_generator: np.ndarray | None = None,
) -> ExistenceTable:
    """Count distinct ensembles at each grid value and locate count changes.

    ``bm_factory`` maps a grid value to a Bloch model, ``cs_builder`` maps
    that model to the constraint system to solve.  With a family generator
    supplied, solutions related by the continuous symmetry are counted once.
    """
    cfg = SolverConfig() if cfg is None else cfg
    values = np.asarray(list(values), dtype=float)
    counts = np.empty(len(values), dtype=int)
    for i, value in enumerate(values):
        bm = bm_factory(value)
        solset = solve_numeric(cs_builder(bm), cfg)
        ensembles = solset.ensembles
        if quotient_generator is not None:
            reduced = []
            for ens in ensembles:
                if not any(
                    family_equivalent(kept, ens, quotient_generator, cfg.dedup_eps)
                    for kept in reduced
                ):
                    reduced.append(ens)
            ensembles = reduced
        counts[i] = len(ensembles)
    thresholds = [
        float(0.5 * (values[i] + values[i + 1]))
        for i in range(len(values) - 1)
        if counts[i] != counts[i + 1]
    ]
    return ExistenceTable(parameter=parameter, values=values, counts=counts, thresholds=thresholds)
