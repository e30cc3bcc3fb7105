"""Euler-Maruyama integration of the norm-preserving stochastic collapse
equation, trajectory/ensemble drivers, and the density-matrix oracle.

One step evolves the state by

    psi' = normalize( psi - i H psi dt - (1/2) b(b psi) dt + (b psi) dxi )

where ``b psi = V psi - <V> psi`` is evaluated at the pre-step state and
``dxi`` is a Wiener increment with E[dxi] = 0 and E[|dxi|^2] = dt
(complex by default: (dW1 + i dW2)/sqrt(2); optionally real).  Because
``<psi|b psi> = 0`` the pre-renormalization squared norm is a martingale;
the per-step renormalization removes the residual O(dt) fluctuation and
its size is recorded for convergence checks.

Ensemble averages of the projector must reproduce the linear master
equation  d rho/dt = -i[H, rho] + V rho V - (1/2){V^2, rho}, which
:func:`lindblad_oracle` integrates with RK4 as the validation target.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .entanglement import Bipartition, vn_entropy
from .errors import DimensionError, NumericalError, StabilityError
from .hilbert import CompositeSpace, StateVector
from .operators import AssembledOperator, _beta_terms

if TYPE_CHECKING:
    from .config import ScenarioConfig

__all__ = [
    "IntegrationPlan",
    "Observable",
    "Branch",
    "RealizedScenario",
    "TrajectoryRecord",
    "EnsembleStats",
    "ito_step",
    "run_trajectory",
    "run_ensemble",
    "lindblad_oracle",
    "trace_distance",
    "check_stability",
]

STABILITY_LIMIT = 0.1
DEFAULT_COLLAPSE_THRESHOLD = 1.0 - 1e-6


@dataclass(frozen=True)
class IntegrationPlan:
    """Time grid, RNG seed, and noise/recording policy for one trajectory.

    The RNG is NumPy's default PCG64 generator seeded with ``seed``; a
    given (plan, scenario) pair reproduces the identical trajectory on one
    platform and identical statistics across platforms.
    """

    dt: float
    n_steps: int
    seed: int = 0
    noise_kind: str = "complex"
    record_every: int = 1
    collapse_threshold: float = DEFAULT_COLLAPSE_THRESHOLD

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive and finite")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if self.noise_kind not in ("complex", "real"):
            raise ValueError("noise_kind must be 'complex' or 'real'")
        if not (1 <= self.record_every <= self.n_steps):
            raise ValueError("record_every must be in [1, n_steps]")
        if self.n_steps % self.record_every != 0:
            raise ValueError("n_steps must be a multiple of record_every")
        if not (0.0 < self.collapse_threshold < 1.0):
            raise ValueError("collapse_threshold must be in (0, 1)")

    @property
    def n_records(self) -> int:
        return 1 + self.n_steps // self.record_every


def check_stability(plan: IntegrationPlan, vhat: AssembledOperator | None) -> None:
    """Explicit-scheme guard: dt * max|V|^2 must not exceed 0.1."""
    if vhat is None:
        return
    vmax = vhat.max_abs()
    if plan.dt * vmax**2 > STABILITY_LIMIT:
        raise StabilityError(
            f"dt * max|V|^2 = {plan.dt * vmax ** 2:.3g} exceeds the stability "
            f"limit {STABILITY_LIMIT}; reduce dt or the collapse rate"
        )


@dataclass(frozen=True, eq=False)
class Observable:
    """Recorded quantity; ``kind`` selects the evaluation rule.

    diag:           real expectation of a diagonal operator (fast path)
    matrix:         real expectation of a Hermitian operator
    matrix_complex: complex expectation (symmetry generators)
    width:          sqrt(<x^2> - <x>^2) from two diagonals
    """

    name: str
    kind: str
    matrix: object = None
    diag: np.ndarray | None = None
    diag2: np.ndarray | None = None

    def evaluate(self, psi: np.ndarray):
        if self.kind == "diag":
            p = np.abs(psi) ** 2
            return float(np.real(np.dot(p, self.diag)))
        if self.kind == "matrix":
            return float(np.real(np.vdot(psi, self.matrix @ psi)))
        if self.kind == "matrix_complex":
            return complex(np.vdot(psi, self.matrix @ psi))
        if self.kind == "width":
            p = np.abs(psi) ** 2
            mean = float(np.real(np.dot(p, self.diag)))
            mean2 = float(np.real(np.dot(p, self.diag2)))
            return float(np.sqrt(max(mean2 - mean**2, 0.0)))
        raise ValueError(f"unknown observable kind {self.kind!r}")

    @property
    def is_complex(self) -> bool:
        return self.kind == "matrix_complex"


@dataclass(frozen=True, eq=False)
class Branch:
    """Named diagonal projector, stored as the basis indices it keeps."""

    label: str
    indices: np.ndarray

    def weight(self, psi: np.ndarray) -> float:
        return float(np.sum(np.abs(psi[self.indices]) ** 2))


@dataclass(eq=False)
class RealizedScenario:
    """Everything the integrator needs, with operators already assembled."""

    space: CompositeSpace
    hamiltonian: AssembledOperator | None
    collapse_op: AssembledOperator | None
    psi0: StateVector
    plan: IntegrationPlan
    observables: tuple[Observable, ...] = ()
    branches: tuple[Branch, ...] = ()
    bipartitions: tuple[Bipartition, ...] = ()
    qv_tracks: tuple[tuple[str, object], ...] = ()
    config: "ScenarioConfig | None" = None


@dataclass(eq=False)
class TrajectoryRecord:
    """Time series of state-derived quantities for one trajectory.

    All series share length ``1 + n_steps / record_every``.  Branch weights
    at each recorded time sum to 1.  ``norms_pre_renorm`` holds the norm of
    the raw update that produced the recorded state (1.0 at t = 0);
    ``norm_drift_mean`` averages (norm - 1) over every step, recorded or
    not.  ``qv_series`` accumulates the realized quadratic variation of
    tracked expectations, used by audit bounds.
    """

    times: np.ndarray
    norms_pre_renorm: np.ndarray
    observables: dict[str, np.ndarray]
    branch_weights: dict[str, np.ndarray]
    entropy_series: dict[str, np.ndarray]
    final_state: StateVector
    seed: int
    plan: IntegrationPlan
    collapsed_branch: str | None = None
    collapse_step: int | None = None
    norm_drift_mean: float = 0.0
    norm_drift_count: int = 0
    qv_series: dict[str, np.ndarray] = field(default_factory=dict)
    states: np.ndarray | None = None  # (n_records, dim) when requested

    def __post_init__(self):
        n = len(self.times)
        series = [self.norms_pre_renorm, *self.observables.values(),
                  *self.branch_weights.values(), *self.entropy_series.values(),
                  *self.qv_series.values()]
        for arr in series:
            if len(arr) != n:
                raise DimensionError("trajectory series lengths differ")
        if self.branch_weights:
            sums = np.sum(list(self.branch_weights.values()), axis=0)
            if np.max(np.abs(sums - 1.0)) > 1e-9:
                raise NumericalError(
                    "branch weights do not partition probability "
                    f"(max deviation {np.max(np.abs(sums - 1.0)):.3e})"
                )

    @property
    def collapse_time(self) -> float | None:
        if self.collapse_step is None:
            return None
        return self.collapse_step * self.plan.dt


def _prep_matrix(op: AssembledOperator | np.ndarray | None):
    """Dense for small dims (fast matvec), sparse otherwise."""
    if op is None:
        return None
    mat = op.matrix if isinstance(op, AssembledOperator) else op
    if sp.issparse(mat):
        if mat.shape[0] <= 256:
            return np.asarray(mat.todense())
        return sp.csr_array(mat)
    return np.asarray(mat, dtype=np.complex128)


def _draw_noise(rng: np.random.Generator, kind: str, dt: float) -> complex:
    if kind == "complex":
        w = rng.standard_normal(2)
        return complex(w[0], w[1]) * np.sqrt(dt / 2.0)
    return complex(rng.standard_normal() * np.sqrt(dt), 0.0)


def _step(psi: np.ndarray, h, v, dt: float, dxi: complex) -> tuple[np.ndarray, float]:
    """One raw update; returns (normalized state, pre-renormalization norm)."""
    if v is not None:
        bpsi, v_mean = _beta_terms(v, psi)
        b2psi = (v @ bpsi) - v_mean.real * bpsi
        dpsi = (-0.5 * dt) * b2psi + dxi * bpsi
        if h is not None:
            dpsi += (-1j * dt) * (h @ psi)
    elif h is not None:
        dpsi = (-1j * dt) * (h @ psi)
    else:
        dpsi = np.zeros_like(psi)
    new = psi + dpsi
    nrm = float(np.linalg.norm(new))
    if not np.isfinite(nrm) or nrm == 0.0:
        raise NumericalError("state norm became non-finite during integration")
    return new / nrm, nrm


def ito_step(
    psi: StateVector,
    hamiltonian: AssembledOperator | None,
    vhat: AssembledOperator | None,
    dt: float,
    noise: complex,
) -> StateVector:
    """One renormalized Euler-Maruyama step with an externally drawn increment.

    The deviation operator is evaluated at the pre-step state; the supplied
    ``noise`` must satisfy E[noise] = 0, E[|noise|^2] = dt.
    """
    if dt <= 0 or not np.isfinite(dt):
        raise ValueError("dt must be positive and finite")
    if vhat is not None:
        check_stability(IntegrationPlan(dt=dt, n_steps=1), vhat)
    h = _prep_matrix(hamiltonian)
    v = _prep_matrix(vhat)
    new, _ = _step(psi.amplitudes, h, v, dt, complex(noise))
    return StateVector(psi.space, new)


def _bipartition_axes(space: CompositeSpace, part: Bipartition):
    axes_a = [i for i, s in enumerate(space.subsystems) if s.label in part.side_a]
    axes_b = [i for i, s in enumerate(space.subsystems) if s.label in part.side_b]
    dims = space.dims
    da = int(np.prod([dims[i] for i in axes_a]))
    db = int(np.prod([dims[i] for i in axes_b]))
    return tuple(axes_a + axes_b), da, db


def _entropy_of(psi: np.ndarray, dims, perm, da, db) -> float:
    m = np.transpose(psi.reshape(dims), perm).reshape(da, db)
    s = np.linalg.svd(m, compute_uv=False)
    return vn_entropy(s**2)


def run_trajectory(
    scenario: "RealizedScenario | ScenarioConfig",
    seed: int | None = None,
    *,
    record_states: bool = False,
) -> TrajectoryRecord:
    """Integrate one trajectory; deterministic given the seed.

    Accepts a declarative config (realized on the fly) or an already
    realized scenario.  ``seed`` overrides the plan seed when given;
    ``record_states`` additionally stores the state at each recorded time.
    """
    sc = _ensure_realized(scenario)
    plan = sc.plan if seed is None else replace(sc.plan, seed=seed)
    check_stability(plan, sc.collapse_op)

    h = _prep_matrix(sc.hamiltonian)
    v = _prep_matrix(sc.collapse_op)
    qv_mats = [(name, _prep_matrix(m)) for name, m in sc.qv_tracks]
    rng = np.random.default_rng(plan.seed)
    psi = sc.psi0.amplitudes.copy()

    dims = sc.space.dims
    parts = []
    for part in sc.bipartitions:
        perm, da, db = _bipartition_axes(sc.space, part)
        parts.append((part.name(), perm, da, db))

    n_rec = plan.n_records
    states = np.empty((n_rec, sc.space.total_dim), dtype=np.complex128) \
        if record_states else None
    times = np.empty(n_rec)
    norms = np.empty(n_rec)
    obs = {
        o.name: np.empty(n_rec, dtype=complex if o.is_complex else float)
        for o in sc.observables
    }
    weights = {b.label: np.empty(n_rec) for b in sc.branches}
    entropies = {name: np.empty(n_rec) for name, *_ in parts}
    qv = {name: np.empty(n_rec) for name, _ in qv_mats}
    qv_accum = {name: 0.0 for name, _ in qv_mats}

    collapsed_branch: str | None = None
    collapse_step: int | None = None
    drift_sum = 0.0

    def record(idx: int, step: int, pre_norm: float):
        times[idx] = step * plan.dt
        norms[idx] = pre_norm
        for o in sc.observables:
            obs[o.name][idx] = o.evaluate(psi)
        for b in sc.branches:
            weights[b.label][idx] = b.weight(psi)
        for name, perm, da, db in parts:
            entropies[name][idx] = _entropy_of(psi, dims, perm, da, db)
        for name, _ in qv_mats:
            qv[name][idx] = qv_accum[name]
        if states is not None:
            states[idx] = psi

    def check_collapse(step: int):
        nonlocal collapsed_branch, collapse_step
        if collapsed_branch is not None:
            return
        for b in sc.branches:
            if b.weight(psi) >= plan.collapse_threshold:
                collapsed_branch = b.label
                collapse_step = step
                return

    record(0, 0, 1.0)
    check_collapse(0)

    idx = 1
    for step in range(1, plan.n_steps + 1):
        if v is not None:
            # quadratic-variation tracking uses the pre-step state
            if qv_mats:
                bpsi, _ = _beta_terms(v, psi)
                for name, qmat in qv_mats:
                    c = np.vdot(qmat @ psi, bpsi)
                    rate = 2.0 * abs(c) ** 2 if plan.noise_kind == "complex" \
                        else 4.0 * c.real**2
                    qv_accum[name] += rate * plan.dt
            dxi = _draw_noise(rng, plan.noise_kind, plan.dt)
        else:
            dxi = 0.0 + 0.0j
        psi, pre_norm = _step(psi, h, v, plan.dt, dxi)
        drift_sum += pre_norm - 1.0
        check_collapse(step)
        if step % plan.record_every == 0:
            record(idx, step, pre_norm)
            idx += 1

    return TrajectoryRecord(
        times=times,
        norms_pre_renorm=norms,
        observables=obs,
        branch_weights=weights,
        entropy_series=entropies,
        final_state=StateVector(sc.space, psi),
        seed=plan.seed,
        plan=plan,
        collapsed_branch=collapsed_branch,
        collapse_step=collapse_step,
        norm_drift_mean=drift_sum / plan.n_steps,
        norm_drift_count=plan.n_steps,
        qv_series=qv,
        states=states,
    )


@dataclass(eq=False)
class EnsembleStats:
    """Per-time-point statistics over independent trajectories.

    Outcome counts tally the collapse flag ('uncollapsed' for trajectories
    that never crossed the threshold).  ``mean_density`` is the averaged
    projector at each recorded time when density recording was requested.
    """

    times: np.ndarray
    n_traj: int
    observable_mean: dict[str, np.ndarray]
    observable_var: dict[str, np.ndarray]
    observable_stderr: dict[str, np.ndarray]
    branch_weight_mean: dict[str, np.ndarray]
    branch_weight_stderr: dict[str, np.ndarray]
    entropy_mean: dict[str, np.ndarray]
    outcome_counts: dict[str, int]
    norm_drift_mean: float
    norm_drift_stderr: float
    mean_density: np.ndarray | None = None
    base_seed: int = 0

    def outcome_frequency(self, label: str) -> float:
        return self.outcome_counts.get(label, 0) / self.n_traj

    def outcome_stderr(self, label: str) -> float:
        p = self.outcome_frequency(label)
        return float(np.sqrt(p * (1.0 - p) / self.n_traj))


def _ensure_realized(scenario) -> RealizedScenario:
    if isinstance(scenario, RealizedScenario):
        return scenario
    from .scenarios import realize  # deferred: scenarios builds on this module's types

    return realize(scenario)


def run_ensemble(
    scenario: "RealizedScenario | ScenarioConfig",
    n_traj: int,
    base_seed: int = 0,
    *,
    record_density: bool = False,
    keep_records: bool = False,
    max_workers: int | None = None,
) -> tuple[EnsembleStats, list[TrajectoryRecord]]:
    """Run ``n_traj`` trajectories with seeds base_seed + index.

    Reduction is in seed order regardless of scheduling, so results are
    reproducible.  Parallel workers are used when COLLAPSE_LAB_THREADS (or
    ``max_workers``) exceeds 1; trajectories are otherwise run serially.
    Returns (stats, records); ``records`` is empty unless ``keep_records``.
    """
    if n_traj < 2:
        raise ValueError("an ensemble needs n_traj >= 2")
    sc = _ensure_realized(scenario)
    if record_density and sc.space.total_dim > 64:
        raise DimensionError(
            "density recording is limited to total_dim <= 64; average "
            "projectors of larger systems are not materialized"
        )

    if max_workers is None:
        max_workers = int(os.environ.get("COLLAPSE_LAB_THREADS", "1"))

    seeds = [base_seed + i for i in range(n_traj)]
    acc = _EnsembleAccumulator(sc, record_density)
    records: list[TrajectoryRecord] = []

    if sc.space.total_dim <= BATCH_DENSE_LIMIT and max_workers <= 1:
        for start in range(0, n_traj, BATCH_CHUNK):
            chunk = seeds[start:start + BATCH_CHUNK]
            for rec in _run_chunk_batched(sc, chunk, record_density):
                acc.add(rec)
                if keep_records:
                    records.append(rec)
    elif max_workers > 1 and n_traj > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            for rec in pool.map(_run_one, [(sc, s, record_density) for s in seeds],
                                chunksize=max(1, n_traj // (4 * max_workers))):
                acc.add(rec)
                if keep_records:
                    records.append(rec)
    else:
        for s in seeds:
            rec = run_trajectory(sc, seed=s, record_states=record_density)
            acc.add(rec)
            if keep_records:
                records.append(rec)

    return acc.finish(base_seed), records


def _run_one(args):
    scenario, seed, record_states = args
    return run_trajectory(scenario, seed=seed, record_states=record_states)


BATCH_DENSE_LIMIT = 64  # dims up to this run ensembles in lock-step batches
BATCH_CHUNK = 512


def _run_chunk_batched(
    sc: RealizedScenario, seeds: list[int], record_states: bool
) -> list[TrajectoryRecord]:
    """Integrate a block of trajectories in lock-step.

    Each trajectory consumes exactly the same noise stream it would get
    from :func:`run_trajectory` (generator draws are batch-size
    invariant), so the batching is purely a throughput optimization.
    """
    plan = sc.plan
    b = len(seeds)
    d = sc.space.total_dim
    dt = plan.dt
    h = _prep_matrix(sc.hamiltonian)
    v = _prep_matrix(sc.collapse_op)
    ht = None if h is None else np.asarray(h).T.copy()
    vt = None if v is None else np.asarray(v).T.copy()
    qv_mats = [(name, np.asarray(_prep_matrix(m)).T.copy()) for name, m in sc.qv_tracks]

    if v is not None:
        if plan.noise_kind == "complex":
            noise = np.empty((b, plan.n_steps), dtype=np.complex128)
            scale = np.sqrt(dt / 2.0)
            for i, s in enumerate(seeds):
                w = np.random.default_rng(s).standard_normal(2 * plan.n_steps)
                noise[i] = (w[0::2] + 1j * w[1::2]) * scale
        else:
            noise = np.empty((b, plan.n_steps), dtype=np.complex128)
            for i, s in enumerate(seeds):
                w = np.random.default_rng(s).standard_normal(plan.n_steps)
                noise[i] = w * np.sqrt(dt)
    else:
        noise = None

    psi = np.tile(sc.psi0.amplitudes, (b, 1))

    dims = sc.space.dims
    parts = []
    for part in sc.bipartitions:
        perm, da, db = _bipartition_axes(sc.space, part)
        parts.append((part.name(), perm, da, db))

    n_rec = plan.n_records
    times = np.arange(n_rec) * (plan.record_every * dt)
    norms = np.empty((b, n_rec))
    obs = {
        o.name: np.empty((b, n_rec), dtype=complex if o.is_complex else float)
        for o in sc.observables
    }
    weights = {br.label: np.empty((b, n_rec)) for br in sc.branches}
    entropies = {name: np.empty((b, n_rec)) for name, *_ in parts}
    qv = {name: np.empty((b, n_rec)) for name, _ in qv_mats}
    qv_accum = {name: np.zeros(b) for name, _ in qv_mats}
    states = np.empty((b, n_rec, d), dtype=np.complex128) if record_states else None

    collapse_step = np.full(b, -1, dtype=np.int64)
    collapse_branch = np.full(b, -1, dtype=np.int64)
    drift_sum = np.zeros(b)

    def eval_obs(o: Observable) -> np.ndarray:
        if o.kind == "diag":
            return (np.abs(psi) ** 2) @ o.diag
        if o.kind == "matrix":
            m = o.matrix
            mp = psi @ np.asarray(m.todense()).T if sp.issparse(m) else psi @ m.T
            return np.einsum("bi,bi->b", psi.conj(), mp).real
        if o.kind == "matrix_complex":
            m = o.matrix
            mp = psi @ np.asarray(m.todense()).T if sp.issparse(m) else psi @ m.T
            return np.einsum("bi,bi->b", psi.conj(), mp)
        if o.kind == "width":
            p = np.abs(psi) ** 2
            mean = p @ o.diag
            mean2 = p @ o.diag2
            return np.sqrt(np.maximum(mean2 - mean**2, 0.0))
        raise ValueError(o.kind)

    def record(idx: int, pre_norms: np.ndarray):
        norms[:, idx] = pre_norms
        for o in sc.observables:
            obs[o.name][:, idx] = eval_obs(o)
        for br in sc.branches:
            weights[br.label][:, idx] = np.sum(np.abs(psi[:, br.indices]) ** 2, axis=1)
        for name, perm, da, db in parts:
            tensors = psi.reshape((b,) + dims)
            moved = np.transpose(tensors, (0,) + tuple(ax + 1 for ax in perm))
            mats = moved.reshape(b, da, db)
            svals = np.linalg.svd(mats, compute_uv=False)
            w2 = np.clip(svals**2, 0.0, None)
            with np.errstate(divide="ignore", invalid="ignore"):
                logs = np.where(w2 > 0.0, np.log(w2), 0.0)
            entropies[name][:, idx] = -np.sum(w2 * logs, axis=1)
        for name, _ in qv_mats:
            qv[name][:, idx] = qv_accum[name]
        if states is not None:
            states[:, idx, :] = psi

    def check_collapse(step: int):
        open_mask = collapse_step < 0
        if not np.any(open_mask):
            return
        for bi, br in enumerate(sc.branches):
            w = np.sum(np.abs(psi[:, br.indices]) ** 2, axis=1)
            hit = open_mask & (w >= plan.collapse_threshold)
            collapse_step[hit] = step
            collapse_branch[hit] = bi
            open_mask &= ~hit

    record(0, np.ones(b))
    check_collapse(0)

    idx = 1
    for step in range(1, plan.n_steps + 1):
        if vt is not None:
            vpsi = psi @ vt
            vmean = np.einsum("bi,bi->b", psi.conj(), vpsi).real
            bpsi = vpsi - vmean[:, None] * psi
            for name, qt in qv_mats:
                c = np.einsum("bi,bi->b", (psi @ qt).conj(), bpsi)
                if plan.noise_kind == "complex":
                    qv_accum[name] += 2.0 * np.abs(c) ** 2 * dt
                else:
                    qv_accum[name] += 4.0 * c.real**2 * dt
            b2 = (bpsi @ vt) - vmean[:, None] * bpsi
            dpsi = (-0.5 * dt) * b2 + noise[:, step - 1][:, None] * bpsi
            if ht is not None:
                dpsi += (-1j * dt) * (psi @ ht)
        elif ht is not None:
            dpsi = (-1j * dt) * (psi @ ht)
        else:
            dpsi = 0.0
        new = psi + dpsi
        nrm = np.linalg.norm(new, axis=1)
        if not np.all(np.isfinite(nrm)) or np.any(nrm == 0.0):
            raise NumericalError("state norm became non-finite during integration")
        psi = new / nrm[:, None]
        drift_sum += nrm - 1.0
        check_collapse(step)
        if step % plan.record_every == 0:
            record(idx, nrm)
            idx += 1

    out = []
    for i, seed in enumerate(seeds):
        cb = None if collapse_branch[i] < 0 else sc.branches[collapse_branch[i]].label
        cs = None if collapse_step[i] < 0 else int(collapse_step[i])
        out.append(
            TrajectoryRecord(
                times=times.copy(),
                norms_pre_renorm=norms[i].copy(),
                observables={k: a[i].copy() for k, a in obs.items()},
                branch_weights={k: a[i].copy() for k, a in weights.items()},
                entropy_series={k: a[i].copy() for k, a in entropies.items()},
                final_state=StateVector(sc.space, psi[i]),
                seed=seed,
                plan=replace(plan, seed=seed),
                collapsed_branch=cb,
                collapse_step=cs,
                norm_drift_mean=float(drift_sum[i]) / plan.n_steps,
                norm_drift_count=plan.n_steps,
                qv_series={k: a[i].copy() for k, a in qv.items()},
                states=None if states is None else states[i].copy(),
            )
        )
    return out


class _EnsembleAccumulator:
    """Fixed-order streaming moments for ensemble statistics."""

    def __init__(self, sc: RealizedScenario, record_density: bool):
        self.sc = sc
        n_rec = sc.plan.n_records
        self.n = 0
        self.obs_sum = {
            o.name: np.zeros(n_rec, dtype=complex if o.is_complex else float)
            for o in sc.observables
        }
        self.obs_sumsq = {o.name: np.zeros(n_rec) for o in sc.observables}
        self.w_sum = {b.label: np.zeros(n_rec) for b in sc.branches}
        self.w_sumsq = {b.label: np.zeros(n_rec) for b in sc.branches}
        self.ent_sum = {}
        self.outcomes: dict[str, int] = {}
        self.drift_vals: list[float] = []
        self.times = None
        self.density = None
        if record_density:
            d = sc.space.total_dim
            self.density = np.zeros((n_rec, d, d), dtype=np.complex128)
        self.record_density = record_density

    def add(self, rec: TrajectoryRecord):
        self.n += 1
        if self.times is None:
            self.times = rec.times
            self.ent_sum = {k: np.zeros_like(v) for k, v in rec.entropy_series.items()}
        for k, v in rec.observables.items():
            self.obs_sum[k] += v
            self.obs_sumsq[k] += np.abs(v) ** 2
        for k, v in rec.branch_weights.items():
            self.w_sum[k] += v
            self.w_sumsq[k] += v**2
        for k, v in rec.entropy_series.items():
            self.ent_sum[k] += v
        label = rec.collapsed_branch or "uncollapsed"
        self.outcomes[label] = self.outcomes.get(label, 0) + 1
        self.drift_vals.append(rec.norm_drift_mean)
        if self.record_density:
            if rec.states is None:
                raise NumericalError("density recording needs per-record states")
            self.density += np.einsum("ti,tj->tij", rec.states, rec.states.conj())

    def finish(self, base_seed: int) -> EnsembleStats:
        n = self.n
        mean, var, se = {}, {}, {}
        for k, s in self.obs_sum.items():
            m = s / n
            v = np.maximum(self.obs_sumsq[k] / n - np.abs(m) ** 2, 0.0)
            v = v * n / max(n - 1, 1)
            mean[k], var[k], se[k] = m, v, np.sqrt(v / n)
        wmean, wse = {}, {}
        for k, s in self.w_sum.items():
            m = s / n
            v = np.maximum(self.w_sumsq[k] / n - m**2, 0.0) * n / max(n - 1, 1)
            wmean[k], wse[k] = m, np.sqrt(v / n)
        drift = np.asarray(self.drift_vals)
        drift_se = float(np.std(drift, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return EnsembleStats(
            times=self.times,
            n_traj=n,
            observable_mean=mean,
            observable_var=var,
            observable_stderr=se,
            branch_weight_mean=wmean,
            branch_weight_stderr=wse,
            entropy_mean={k: v / n for k, v in self.ent_sum.items()},
            outcome_counts=dict(sorted(self.outcomes.items())),
            norm_drift_mean=float(drift.mean()),
            norm_drift_stderr=drift_se,
            mean_density=None if self.density is None else self.density / n,
            base_seed=base_seed,
        )


# --------------------------------------------------------------------------
# density-matrix oracle
# --------------------------------------------------------------------------

def lindblad_oracle(
    hamiltonian: AssembledOperator | np.ndarray | None,
    vhat: AssembledOperator | np.ndarray | None,
    rho0: np.ndarray,
    dt: float,
    n_steps: int,
) -> np.ndarray:
    """RK4 integration of d rho/dt = -i[H, rho] + V rho V - (1/2){V^2, rho}.

    Hermiticity is enforced by symmetrization each step and the trace is
    checked to stay within 1e-9 of its initial value.  Returns the series
    of density matrices, shape (n_steps + 1, d, d).
    """
    rho = np.array(rho0, dtype=np.complex128)
    d = rho.shape[0]
    if rho.shape != (d, d):
        raise DimensionError("rho0 must be square")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise NumericalError("rho0 is not Hermitian")
    eigs = np.linalg.eigvalsh(rho)
    if eigs.min() < -1e-10:
        raise NumericalError(f"rho0 has negative eigenvalue {eigs.min():.3e}")
    tr0 = float(np.real(np.trace(rho)))
    if abs(tr0 - 1.0) > 1e-8:
        raise NumericalError(f"rho0 trace {tr0} is not 1")

    h = None if hamiltonian is None else _as_dense(hamiltonian, d)
    v = None if vhat is None else _as_dense(vhat, d)
    v2 = None if v is None else v @ v

    def rhs(r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        if h is not None:
            out += -1j * (h @ r - r @ h)
        if v is not None:
            out += v @ r @ v - 0.5 * (v2 @ r + r @ v2)
        return out

    series = np.empty((n_steps + 1, d, d), dtype=np.complex128)
    series[0] = rho
    for i in range(1, n_steps + 1):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        tr = float(np.real(np.trace(rho)))
        if abs(tr - tr0) > 1e-9:
            raise NumericalError(
                f"oracle trace drifted by {abs(tr - tr0):.3e} at step {i}; "
                "reduce dt"
            )
        series[i] = rho
    return series


def _as_dense(op, d: int) -> np.ndarray:
    mat = op.matrix if isinstance(op, AssembledOperator) else op
    arr = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=np.complex128)
    if arr.shape != (d, d):
        raise DimensionError("operator and density-matrix dimensions differ")
    return arr


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/2) * trace norm of (a - b) for Hermitian matrices."""
    diff = np.asarray(a) - np.asarray(b)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))
