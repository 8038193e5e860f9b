"""Piecewise-deterministic jump simulation with adaptive setting switching.

Between detections the pure state follows first-order norm-decay stepping
under the active setting's no-jump operator (with renormalization); each
step, detector m clicks with probability ||c'_m psi||^2 dt, collapsing the
state and switching the active setting according to the scheme's routing
table.  The stepping chain is evaluated in vectorized blocks through the
eigendecomposition of the one-step map, which reproduces the per-step
sequence to floating-point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .algebra import bloch_to_rho, rho_to_bloch
from .constraints import Ensemble
from .errors import RealizationError
from .measurement import NO_TARGET, AdaptiveScheme
from .model import MasterEquation, lindbladian, vectorize

__all__ = [
    "TrajectoryConfig",
    "TrajectoryStats",
    "simulate",
    "unconditional_check",
]


@dataclass(frozen=True)
class TrajectoryConfig:
    """Step size, stopping target and bookkeeping options."""

    dt: float | None = None  # default 1e-3 / ||l0||
    t_max: float | None = None
    n_jumps: int | None = None
    rng_seed: int = 0
    record: str = "jumps-only"  # or "strided"
    stride: int = 1000
    burn_in_jumps: int = 20
    drift_tol: float = 1e-4

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.record not in ("jumps-only", "strided"):
            raise ValueError("record policy must be 'jumps-only' or 'strided'")


@dataclass
class TrajectoryStats:
    """Time-resolved statistics accumulated after burn-in."""

    occupancy: np.ndarray  # fraction of time per member label
    jump_counts: np.ndarray  # (K, K), off-diagonal transitions j <- k
    self_loop_counts: np.ndarray  # (K,)
    max_state_drift: float
    n_jumps: int
    total_time: float
    events: list = field(default_factory=list)  # (time, channel, from, to)
    snapshots: list = field(default_factory=list)  # (time, coherence vector)


class _MemberEngine:
    """Precomputed one-step map and click operators for one setting."""

    def __init__(self, me, scheme, k, dt, block=8192):
        jumps, h_eff = scheme.jumps_and_generator(me, k)
        self.jump_ops = np.array(jumps)
        self.routing = scheme.jump_map[k]
        self.dt = dt
        self.block = block
        a = np.eye(me.dim) - 1j * dt * h_eff
        lam, v = np.linalg.eig(a)
        self.diagonalizable = np.linalg.cond(v) < 1e8
        self.a = a
        self.lam = lam
        self.v = v
        self.vinv = np.linalg.inv(v) if self.diagonalizable else None
        if self.diagonalizable:
            # Eigenvalue powers are state independent: cache the whole block.
            self._powers = lam[:, None] ** np.arange(block + 1)[None, :]

    def propagate_block(self, psi, n_steps):
        """Unnormalized states before steps 0..n_steps (inclusive carry)."""
        if self.diagonalizable:
            w0 = self.vinv @ psi
            return self.v @ (self._powers[:, : n_steps + 1] * w0[:, None])
        states = np.empty((psi.size, n_steps + 1), dtype=complex)
        states[:, 0] = psi
        for s in range(n_steps):  # defective one-step map: plain chain
            states[:, s + 1] = self.a @ states[:, s]
        return states


def _default_dt(me):
    return 1e-3 / max(np.linalg.norm(vectorize(me).l0, 2), 1e-300)


def _advance(engine, psi, max_steps, rng):
    """Run the stepping chain until a click or for max_steps.

    Returns (steps_consumed, clicked_channel, pre_click_state, next_state).
    Channel is None when the block ran out without a click.
    """
    states = engine.propagate_block(psi, max_steps)
    norms_sq = np.einsum("ib,ib->b", states.conj(), states).real
    amps = engine.jump_ops @ states[:, :-1]
    rates = np.einsum("mib,mib->mb", amps.conj(), amps).real / norms_sq[:-1]
    p_click = engine.dt * rates.sum(axis=0)
    u = rng.random(max_steps)
    fired = u < p_click
    if not fired.any():
        return max_steps, None, None, states[:, -1] / np.sqrt(norms_sq[-1])
    s = int(np.argmax(fired))
    pre = states[:, s] / np.sqrt(norms_sq[s])
    weights = rates[:, s] / rates[:, s].sum()
    channel = int(rng.choice(len(weights), p=weights))
    post = engine.jump_ops[channel] @ pre
    post = post / np.linalg.norm(post)
    return s + 1, channel, pre, post


def simulate(
    me: MasterEquation,
    scheme: AdaptiveScheme,
    ens: Ensemble,
    cfg: TrajectoryConfig | None = None,
) -> TrajectoryStats:
    """Simulate one adaptive trajectory started in member 0.

    Statistics are accumulated after a burn-in of ``cfg.burn_in_jumps``
    detections; a pre-click state further than ``cfg.drift_tol`` (coherence
    distance) from its nominal member raises :class:`RealizationError`.
    """
    cfg = TrajectoryConfig() if cfg is None else cfg
    bm = vectorize(me)
    dt = _default_dt(me) if cfg.dt is None else cfg.dt
    n_jumps_target = cfg.n_jumps if cfg.n_jumps is not None else 10_000
    kets = ens.kets()

    # Block sizes around twice the expected steps between clicks.
    rates = []
    for k in range(ens.k):
        jumps, _ = scheme.jumps_and_generator(me, k)
        amps = np.array(jumps) @ kets[k]
        rates.append(float(np.einsum("mi,mi->", amps.conj(), amps).real))
    engines = [
        _MemberEngine(
            me,
            scheme,
            k,
            dt,
            block=int(np.clip(2.0 / (dt * max(rate, 1e-12)), 256, 16384)),
        )
        for k, rate in enumerate(rates)
    ]

    max_rate = max(rates)
    if dt * max_rate > 0.05:
        raise ValueError(
            f"dt too coarse: dt*max_rate = {dt * max_rate:.3g} > 0.05"
        )

    rng = np.random.default_rng([cfg.rng_seed, 0])
    psi = kets[0].astype(complex)
    label = 0
    k_members = ens.k

    dwell = np.zeros(k_members)
    jump_counts = np.zeros((k_members, k_members), dtype=np.int64)
    self_loops = np.zeros(k_members, dtype=np.int64)
    events = []
    snapshots = []
    max_drift = 0.0
    n_recorded = 0
    n_total_jumps = 0
    t = 0.0
    burning = True
    steps_since_snapshot = 0

    while n_recorded < n_jumps_target:
        if cfg.t_max is not None and t >= cfg.t_max:
            break
        engine = engines[label]
        steps, channel, pre, post = _advance(engine, psi, engine.block, rng)
        span = steps * dt
        t += span
        if not burning:
            dwell[label] += span
        if cfg.record == "strided":
            steps_since_snapshot += steps
            if steps_since_snapshot >= cfg.stride:
                snapshots.append((t, rho_to_bloch(np.outer(post, post.conj()), bm.basis)))
                steps_since_snapshot = 0
        psi = post
        if channel is None:
            continue
        n_total_jumps += 1
        drift = float(
            np.linalg.norm(
                rho_to_bloch(np.outer(pre, pre.conj()), bm.basis) - ens.states[label]
            )
        )
        if drift > cfg.drift_tol:
            raise RealizationError(
                f"pre-click state drifted {drift:.3e} from member {label} "
                f"after {n_total_jumps} clicks: scheme does not pin the ensemble"
            )
        target = int(scheme.jump_map[label, channel])
        if burning and n_total_jumps >= cfg.burn_in_jumps:
            burning = False
            t = 0.0
        elif not burning:
            max_drift = max(max_drift, drift)
            n_recorded += 1
            if target == label or target == NO_TARGET:
                self_loops[label] += 1
            else:
                jump_counts[target, label] += 1
            events.append((t, channel, label, label if target == NO_TARGET else target))
        label = label if target == NO_TARGET else target

    total_time = float(dwell.sum())
    occupancy = dwell / total_time if total_time > 0 else dwell
    return TrajectoryStats(
        occupancy=occupancy,
        jump_counts=jump_counts,
        self_loop_counts=self_loops,
        max_state_drift=max_drift,
        n_jumps=n_recorded,
        total_time=total_time,
        events=events,
        snapshots=snapshots,
    )


@dataclass
class UnconditionalReport:
    """Monte-Carlo average against exact generator propagation."""

    times: np.ndarray
    distances: np.ndarray
    tol: float
    passed: bool
    n_trajectories: int
    averages: np.ndarray | None = None  # (n_times, D, D) sampled means
    exact: np.ndarray | None = None  # (n_times, D, D) reference propagation


def unconditional_check(
    me: MasterEquation,
    scheme: AdaptiveScheme,
    cfg: TrajectoryConfig | None = None,
    psi0: np.ndarray | None = None,
    times=None,
    n_trajectories: int = 200,
    tol: float = 5e-3,
) -> UnconditionalReport:
    """Average many trajectories and compare with exp(L t) propagation.

    The initial label is 0 regardless of ``psi0``; any unit ket is allowed.
    The reference is the exact matrix-exponential propagation of the
    generator in coordinate representation.
    """
    cfg = TrajectoryConfig() if cfg is None else cfg
    bm = vectorize(me)
    dt = _default_dt(me) if cfg.dt is None else cfg.dt
    t_max = cfg.t_max if cfg.t_max is not None else 2.0 / max(np.linalg.norm(bm.l0, 2), 1e-300)
    if times is None:
        times = np.linspace(0.0, t_max, 5)[1:]
    times = np.asarray(times, dtype=float)
    checkpoints = np.unique(np.round(times / dt).astype(int))
    checkpoints = checkpoints[checkpoints > 0]

    engines = [_MemberEngine(me, scheme, k, dt) for k in range(len(scheme.settings))]
    dim = me.dim
    if psi0 is None:
        psi0 = np.zeros(dim, complex)
        psi0[0] = 1.0
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)

    averages = np.zeros((len(checkpoints), dim, dim), dtype=complex)
    for traj in range(n_trajectories):
        rng = np.random.default_rng([cfg.rng_seed, 1000 + traj])
        psi = psi0.copy()
        label = 0
        step_now = 0
        for c_idx, step_target in enumerate(checkpoints):
            while step_now < step_target:
                engine = engines[label]
                budget = min(engine.block, step_target - step_now)
                steps, channel, _, post = _advance(engine, psi, budget, rng)
                step_now += steps
                psi = post
                if channel is not None:
                    target = int(scheme.jump_map[label, channel])
                    label = label if target == NO_TARGET else target
            averages[c_idx] += np.outer(psi, psi.conj())
    averages /= n_trajectories

    liou = lindbladian(me)
    rep = liou.matrix_rep(bm.basis)
    n = bm.n_coords
    r0 = np.concatenate([rho_to_bloch(np.outer(psi0, psi0.conj()), bm.basis), [1.0]])
    distances = np.empty(len(checkpoints))
    exact = np.empty_like(averages)
    for c_idx, step_target in enumerate(checkpoints):
        r_t = la.expm(rep * (step_target * dt)) @ r0
        exact[c_idx] = bloch_to_rho(r_t[:n] / r_t[n], bm.basis)
        distances[c_idx] = float(np.linalg.norm(averages[c_idx] - exact[c_idx]))
    return UnconditionalReport(
        times=checkpoints * dt,
        distances=distances,
        tol=tol,
        passed=bool(np.max(distances) <= tol),
        n_trajectories=n_trajectories,
        averages=averages,
        exact=exact,
    )
