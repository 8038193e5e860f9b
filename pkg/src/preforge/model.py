"""Master-equation definition, Bloch-space reduction and unravellings.

A master equation is fixed by a Hermitian Hamiltonian H and jump operators
c_l; its generator acts as

    L rho = -i(H_eff rho - rho H_eff^dag) + sum_l c_l rho c_l^dag,
    H_eff = H - (i/2) sum_l c_l^dag c_l.

Detection settings are parametrized by a semi-unitary matrix S and
local-oscillator amplitudes beta, under which the generator is invariant:

    c'_m = sum_l S_ml c_l + beta_m,
    H'   = H - (i/2) sum_m (conj(beta_m) c'_m - beta_m c'_m^dag).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .algebra import OperatorBasis, Superoperator, build_basis, bloch_to_rho
from .errors import (
    AssumptionError,
    InvalidSettingError,
    NormalizationError,
    ShapeError,
    SteadyStateError,
)

__all__ = [
    "MasterEquation",
    "BlochModel",
    "UnravellingSetting",
    "lindbladian",
    "vectorize",
    "apply_unravelling",
    "no_jump_generator",
]

_HERM_TOL = 1e-12


@dataclass(frozen=True)
class MasterEquation:
    """Hamiltonian (rate units) plus jump operators (sqrt-rate units).

    Jump operators are made traceless on construction; the discarded trace is
    absorbed into the Hamiltonian so the generator is unchanged.
    """

    dim: int
    hamiltonian: np.ndarray
    lindblads: tuple

    def __init__(self, dim, hamiltonian, lindblads):
        hamiltonian = np.asarray(hamiltonian, dtype=complex)
        if hamiltonian.shape != (dim, dim):
            raise ShapeError(f"hamiltonian must be {dim}x{dim}")
        if np.max(np.abs(hamiltonian - hamiltonian.conj().T)) > _HERM_TOL * max(
            1.0, np.linalg.norm(hamiltonian)
        ):
            raise NormalizationError("hamiltonian is not Hermitian to 1e-12")
        cleaned = []
        ham = hamiltonian.copy()
        for c in lindblads:
            c = np.asarray(c, dtype=complex)
            if c.shape != (dim, dim):
                raise ShapeError(f"jump operator must be {dim}x{dim}")
            alpha = np.trace(c) / dim
            if abs(alpha) > 1e-12:
                warnings.warn(
                    "jump operator has nonzero trace; removing it and "
                    "correcting the Hamiltonian so the generator is unchanged",
                    stacklevel=2,
                )
                c = c - alpha * np.eye(dim)
                # c -> c - alpha is the beta = -alpha relabelling.
                ham = ham + (0.5j) * (np.conj(alpha) * c - alpha * c.conj().T)
            cleaned.append(c)
        if cleaned:
            flat = np.array([c.ravel() for c in cleaned])
            if np.linalg.matrix_rank(flat, tol=1e-10) < len(cleaned):
                raise AssumptionError("jump operators must be linearly independent")
            if len(cleaned) > dim * dim - 1:
                raise AssumptionError("at most D^2 - 1 independent jump operators")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "hamiltonian", ham)
        object.__setattr__(self, "lindblads", tuple(cleaned))

    @property
    def n_channels(self) -> int:
        return len(self.lindblads)

    def effective_hamiltonian(self) -> np.ndarray:
        """H_eff = H - (i/2) sum c^dag c (non-Hermitian)."""
        sink = sum(c.conj().T @ c for c in self.lindblads)
        return self.hamiltonian - 0.5j * sink


def lindbladian(me: MasterEquation) -> Superoperator:
    """The generator as a superoperator."""
    h_eff = me.effective_hamiltonian()

    def action(rho):
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for c in me.lindblads:
            out = out + c @ rho @ c.conj().T
        return out

    return Superoperator(action, me.dim)


@dataclass(frozen=True)
class BlochModel:
    """Coherence-space reduction: xdot = l0 x + b, steady state x_ss."""

    me: MasterEquation
    basis: OperatorBasis
    l0: np.ndarray
    b: np.ndarray
    x_ss: np.ndarray

    @property
    def dim(self) -> int:
        return self.me.dim

    @property
    def n_coords(self) -> int:
        return self.dim * self.dim - 1

    def steady_rho(self) -> np.ndarray:
        return bloch_to_rho(self.x_ss, self.basis)


def vectorize(me: MasterEquation, basis: OperatorBasis | None = None) -> BlochModel:
    """Build (l0, b, x_ss) with l0_ij = Tr[s_i L(s_j)]/2, b_i = Tr[s_i L(1)]/2.

    Raises if l0 is singular (no unique steady state), if the dynamics is
    unstable, or if the steady state is rank deficient.
    """
    basis = build_basis(me.dim) if basis is None else basis
    liou = lindbladian(me)
    n = me.dim * me.dim - 1
    l0 = np.empty((n, n))
    for j in range(n):
        img = liou.apply(basis.traceless[j])
        l0[:, j] = 0.5 * np.einsum("kab,ba->k", basis.traceless, img).real
    b = 0.5 * np.einsum(
        "kab,ba->k", basis.traceless, liou.apply(np.eye(me.dim, dtype=complex))
    ).real

    if np.linalg.cond(l0) > 1e12:
        raise SteadyStateError("l0 is singular: no unique steady state")
    x_ss = np.linalg.solve(l0, -b)
    if np.max(np.linalg.eigvals(l0).real) >= -1e-12:
        raise SteadyStateError("l0 has a non-decaying mode: steady state not attracting")
    rho_ss = bloch_to_rho(x_ss, basis)
    if np.min(np.linalg.eigvalsh(rho_ss)) <= 1e-12:
        raise AssumptionError("steady state is rank deficient")
    return BlochModel(me=me, basis=basis, l0=l0, b=b, x_ss=x_ss)


@dataclass(frozen=True)
class UnravellingSetting:
    """Detection setting: semi-unitary s (M x L) and amplitude vector beta (M)."""

    s: np.ndarray
    beta: np.ndarray

    def __init__(self, s, beta):
        s = np.atleast_2d(np.asarray(s, dtype=complex))
        beta = np.atleast_1d(np.asarray(beta, dtype=complex))
        m, l = s.shape
        if m < l:
            raise InvalidSettingError("need at least as many detectors as channels")
        if beta.shape != (m,):
            raise InvalidSettingError(f"beta must have length {m}")
        if np.max(np.abs(s.conj().T @ s - np.eye(l))) > 1e-10:
            raise InvalidSettingError("s is not semi-unitary (s^dag s != 1)")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def identity(cls, n_channels: int) -> "UnravellingSetting":
        return cls(np.eye(n_channels), np.zeros(n_channels))

    @property
    def n_detectors(self) -> int:
        return self.s.shape[0]


def apply_unravelling(me: MasterEquation, u: UnravellingSetting):
    """Jump operators and Hamiltonian of the transformed unravelling.

    Returns ``(jumps, h_prime)`` with ``jumps[m] = sum_l S_ml c_l + beta_m``
    and the compensated Hamiltonian; the generator rebuilt from them equals
    the original.
    """
    if u.s.shape[1] != me.n_channels:
        raise InvalidSettingError(
            f"setting mixes {u.s.shape[1]} channels, model has {me.n_channels}"
        )
    eye = np.eye(me.dim)
    jumps = [
        sum(u.s[m, l] * me.lindblads[l] for l in range(me.n_channels)) + u.beta[m] * eye
        for m in range(u.n_detectors)
    ]
    h = me.hamiltonian.copy()
    for m, c in enumerate(jumps):
        h = h - 0.5j * (np.conj(u.beta[m]) * c - u.beta[m] * c.conj().T)
    return jumps, h


def no_jump_generator(me: MasterEquation, u: UnravellingSetting) -> np.ndarray:
    """Non-Hermitian no-jump operator H'_eff of a detection setting."""
    jumps, h = apply_unravelling(me, u)
    sink = sum(c.conj().T @ c for c in jumps)
    return h - 0.5j * sink


def unravelled_lindbladian(me: MasterEquation, u: UnravellingSetting) -> Superoperator:
    """Generator rebuilt from the transformed operators (for invariance checks)."""
    jumps, h = apply_unravelling(me, u)
    h_eff = h - 0.5j * sum(c.conj().T @ c for c in jumps)

    def action(rho):
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for c in jumps:
            out = out + c @ rho @ c.conj().T
        return out

    return Superoperator(action, me.dim)
