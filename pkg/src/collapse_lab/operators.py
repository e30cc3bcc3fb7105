"""Operator assembly on composite spaces.

Builds Hamiltonians from kinetic, external, pair-interaction, and
spin-pointer terms; the mass-scaled interaction sum
``sum_ij V_ij / (m_i + m_j)``; the dimensionless-noise collapse operator
obtained by dividing that sum by ``c_scale**2 * sqrt(tau0)``; and the
state-dependent deviation operator applied by :func:`beta_apply`.

Pair potentials depend only on the separation ``x_i - x_j``.  On periodic
grids, separations use the minimum-image convention computed from integer
site offsets, which makes the simultaneous one-site shift of all lattice
subsystems commute with every interaction term exactly (not just to
rounding).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, OperatorError
from .hilbert import CompositeSpace, StateVector, SubsystemSpec

__all__ = [
    "PairPotential",
    "gaussian_well",
    "soft_coulomb",
    "square_barrier",
    "tabulated",
    "KineticTerm",
    "ExternalPotentialTerm",
    "InteractionTerm",
    "SpinCouplingTerm",
    "OperatorSpec",
    "AssembledOperator",
    "CollapseParams",
    "assemble_hamiltonian",
    "scaled_interaction_sum",
    "collapse_operator",
    "beta_apply",
    "embed_operator",
    "embed_diagonal",
    "kinetic_matrix",
    "position_diagonal",
    "spin_z_matrix",
    "momentum_operator",
    "pair_potential_from_config",
]

HERMITICITY_TOL = 1e-12


# --------------------------------------------------------------------------
# pair potential families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PairPotential:
    """Distance-dependent pair potential ``V(x_i - x_j)``.

    ``family`` and ``params`` identify the functional form for config
    round-trips; ``func`` is the vectorized evaluation.
    """

    family: str
    params: tuple[tuple[str, object], ...]
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def __call__(self, separation) -> np.ndarray:
        return self.func(np.asarray(separation, dtype=float))

    def params_dict(self) -> dict:
        return {k: v for k, v in self.params}


def gaussian_well(depth: float, width: float) -> PairPotential:
    """Attractive well -depth * exp(-d^2 / (2 width^2))."""
    if not (depth > 0 and width > 0):
        raise OperatorError("gaussian_well needs depth > 0 and width > 0")
    return PairPotential(
        "gaussian_well",
        (("depth", float(depth)), ("width", float(width))),
        lambda d: -depth * np.exp(-(d**2) / (2.0 * width**2)),
    )


def soft_coulomb(strength: float, softening: float) -> PairPotential:
    """strength / sqrt(d^2 + softening^2); repulsive for strength > 0."""
    if softening <= 0:
        raise OperatorError("soft_coulomb needs softening > 0")
    return PairPotential(
        "soft_coulomb",
        (("strength", float(strength)), ("softening", float(softening))),
        lambda d: strength / np.sqrt(d**2 + softening**2),
    )


def square_barrier(height: float, half_width: float) -> PairPotential:
    """height inside |d| <= half_width, zero outside."""
    if half_width <= 0:
        raise OperatorError("square_barrier needs half_width > 0")
    return PairPotential(
        "square_barrier",
        (("height", float(height)), ("half_width", float(half_width))),
        lambda d: np.where(np.abs(d) <= half_width, float(height), 0.0),
    )


def tabulated(separations: Sequence[float], values: Sequence[float]) -> PairPotential:
    """Linear interpolation of sampled values; zero outside the table."""
    xs = np.asarray(separations, dtype=float)
    vs = np.asarray(values, dtype=float)
    if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2:
        raise OperatorError("tabulated potential needs matching 1D tables, >= 2 points")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(vs))):
        raise OperatorError("tabulated potential contains non-finite samples")
    order = np.argsort(xs)
    xs, vs = xs[order], vs[order]
    return PairPotential(
        "tabulated",
        (("separations", tuple(xs.tolist())), ("values", tuple(vs.tolist()))),
        lambda d: np.interp(d, xs, vs, left=0.0, right=0.0),
    )


_FAMILIES = {
    "gaussian_well": gaussian_well,
    "soft_coulomb": soft_coulomb,
    "square_barrier": square_barrier,
    "tabulated": tabulated,
}


def pair_potential_from_config(family: str, params: Mapping[str, object]) -> PairPotential:
    if family not in _FAMILIES:
        raise OperatorError(
            f"unknown pair potential family {family!r}; options: {sorted(_FAMILIES)}"
        )
    return _FAMILIES[family](**params)


# --------------------------------------------------------------------------
# operator specification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KineticTerm:
    """Three-point-stencil kinetic energy on one lattice subsystem.

    ``mass`` overrides the subsystem mass when given (test convenience).
    """

    subsystem: str
    mass: float | None = None


@dataclass(frozen=True)
class ExternalPotentialTerm:
    """Diagonal one-subsystem potential from explicit samples.

    Test-only: external potentials break the closed-system premise, so
    they are excluded from the collapse operator and conservation audits
    refuse configurations containing them.
    """

    subsystem: str
    samples: tuple[float, ...]

    def __init__(self, subsystem: str, samples: Sequence[float]):
        object.__setattr__(self, "subsystem", subsystem)
        object.__setattr__(self, "samples", tuple(float(v) for v in samples))


@dataclass(frozen=True)
class InteractionTerm:
    """Pair potential V(x_i - x_j) between two lattice subsystems."""

    subsystem_i: str
    subsystem_j: str
    potential: PairPotential


@dataclass(frozen=True)
class SpinCouplingTerm:
    """Spin-pointer coupling g * sigma_z(spin) (x) x_hat(pointer).

    Position-coupling model of an inhomogeneous-field spin analyzer; the
    pointer is a lattice subsystem whose displacement records the spin.
    Counts as an interaction for collapse-operator purposes, with mass
    scaling 1 / (m_spin + m_pointer).
    """

    spin_subsystem: str
    pointer_subsystem: str
    strength: float


Term = KineticTerm | ExternalPotentialTerm | InteractionTerm | SpinCouplingTerm


@dataclass(frozen=True)
class OperatorSpec:
    terms: tuple[Term, ...]

    def __init__(self, terms: Sequence[Term]):
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def has_external_potential(self) -> bool:
        return any(isinstance(t, ExternalPotentialTerm) for t in self.terms)

    @property
    def interaction_terms(self) -> tuple[Term, ...]:
        return tuple(
            t for t in self.terms if isinstance(t, (InteractionTerm, SpinCouplingTerm))
        )


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Concrete matrix over a composite space, with structure flags.

    ``hermitian`` is validated at construction (max-norm deviation from
    the adjoint below 1e-12).  ``unitary`` marks symmetry generators such
    as the total lattice shift; those are deliberately not Hermitian.
    """

    space: CompositeSpace
    matrix: sp.csr_array
    hermitian: bool = True
    unitary: bool = False

    def __post_init__(self):
        m = self.matrix
        if not sp.issparse(m):
            m = sp.csr_array(np.asarray(m, dtype=np.complex128))
        else:
            m = sp.csr_array(m).astype(np.complex128)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise DimensionError(f"operator shape {m.shape} does not match dim {n}")
        if self.hermitian:
            dev = _max_abs(m - m.conj().T)
            if dev > HERMITICITY_TOL:
                raise OperatorError(
                    f"operator flagged hermitian but max |M - M^dag| = {dev:.3e}"
                )
        object.__setattr__(self, "matrix", m)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def max_abs(self) -> float:
        return _max_abs(self.matrix)

    def scaled(self, factor: float) -> "AssembledOperator":
        return AssembledOperator(
            self.space, self.matrix * factor, self.hermitian, self.unitary
        )


def _max_abs(m) -> float:
    if sp.issparse(m):
        data = m.data
        return float(np.max(np.abs(data))) if data.size else 0.0
    arr = np.asarray(m)
    return float(np.max(np.abs(arr))) if arr.size else 0.0


@dataclass(frozen=True)
class CollapseParams:
    """Scaling constants for the collapse operator.

    ``c_scale`` has velocity units and ``tau0`` time units; together they
    make the stochastic term dimensionless: the collapse operator is the
    mass-scaled interaction sum divided by c_scale^2 * sqrt(tau0), so its
    units are 1/sqrt(time) and multiplying by a Wiener increment of units
    sqrt(time) yields a pure number.
    """

    c_scale: float
    tau0: float

    def __post_init__(self):
        if not (np.isfinite(self.c_scale) and self.c_scale > 0):
            raise OperatorError("c_scale must be positive and finite")
        if not (np.isfinite(self.tau0) and self.tau0 > 0):
            raise OperatorError("tau0 must be positive and finite")


# --------------------------------------------------------------------------
# elementary building blocks
# --------------------------------------------------------------------------

def kinetic_matrix(sub: SubsystemSpec, mass: float | None = None) -> sp.csr_array:
    """-1/(2m) * (psi_{j+1} - 2 psi_j + psi_{j-1}) / dx^2 as a matrix.

    Periodic lattices wrap the stencil; hard-wall lattices drop it at the
    edges (Dirichlet).
    """
    if not sub.is_lattice:
        raise OperatorError(f"kinetic term needs a lattice subsystem, got {sub.kind}")
    m = float(sub.mass if mass is None else mass)
    if not (np.isfinite(m) and m > 0):
        raise OperatorError("kinetic mass must be positive and finite")
    d = sub.dim
    coeff = 1.0 / (2.0 * m * float(sub.grid_spacing) ** 2)
    diag = np.full(d, 2.0 * coeff)
    off = np.full(d - 1, -coeff)
    mat = sp.diags_array([off, diag, off], offsets=[-1, 0, 1], format="lil")
    if sub.periodic:
        mat[0, d - 1] = -coeff
        mat[d - 1, 0] = -coeff
    return sp.csr_array(mat, dtype=np.complex128)


def position_diagonal(sub: SubsystemSpec) -> np.ndarray:
    """Diagonal of the position operator on a lattice subsystem."""
    return sub.positions()


def spin_z_matrix(dim: int = 2) -> np.ndarray:
    if dim != 2:
        raise OperatorError("spin_z is only defined for two-level subsystems here")
    return np.diag([1.0 + 0j, -1.0 + 0j])


def momentum_operator(space: CompositeSpace, label: str) -> AssembledOperator:
    """Hermitian lattice momentum, diagonal in the discrete Fourier basis.

    Reporting aid for periodic lattices; exact momentum-sector bookkeeping
    goes through the unitary total-shift generator instead.
    """
    sub = space.subsystem(label)
    if not (sub.is_lattice and sub.periodic):
        raise OperatorError("momentum_operator needs a periodic lattice subsystem")
    d = sub.dim
    k = 2.0 * np.pi * np.fft.fftfreq(d, d=float(sub.grid_spacing))
    f = np.fft.ifft(np.eye(d), axis=0, norm="ortho")  # columns: plane waves
    mat = (f * k) @ f.conj().T
    mat = 0.5 * (mat + mat.conj().T)
    return AssembledOperator(space, embed_operator(space, {label: mat}), hermitian=True)


def embed_operator(space: CompositeSpace, ops: Mapping[str, np.ndarray]) -> sp.csr_array:
    """Kronecker-embed per-subsystem matrices with identities elsewhere."""
    out = None
    for sub in space.subsystems:
        if sub.label in ops:
            block = sp.csr_array(np.asarray(ops[sub.label], dtype=np.complex128))
            if block.shape != (sub.dim, sub.dim):
                raise DimensionError(
                    f"operator for {sub.label!r} has shape {block.shape}, "
                    f"expected ({sub.dim}, {sub.dim})"
                )
        else:
            block = sp.eye_array(sub.dim, dtype=np.complex128, format="csr")
        out = block if out is None else sp.kron(out, block, format="csr")
    unknown = set(ops) - set(space.labels)
    if unknown:
        raise OperatorError(f"unknown subsystem labels {sorted(unknown)}")
    return sp.csr_array(out)


def embed_diagonal(space: CompositeSpace, diags: Mapping[str, np.ndarray]) -> np.ndarray:
    """Full-space diagonal of a product over per-subsystem diagonals.

    For a two-axis table, pass it via :func:`pair_diagonal` instead.
    """
    full = np.ones(1, dtype=np.complex128)
    for sub in space.subsystems:
        if sub.label in diags:
            vec = np.asarray(diags[sub.label], dtype=np.complex128).ravel()
            if vec.size != sub.dim:
                raise DimensionError(
                    f"diagonal for {sub.label!r} has length {vec.size}, expected {sub.dim}"
                )
        else:
            vec = np.ones(sub.dim, dtype=np.complex128)
        full = np.kron(full, vec)
    return full


def _pair_diagonal(space: CompositeSpace, ai: int, aj: int, table: np.ndarray) -> np.ndarray:
    """Broadcast a (dim_ai, dim_aj) table to a diagonal over the full space."""
    dims = space.dims
    arr = table if ai < aj else table.T
    a, b = min(ai, aj), max(ai, aj)
    shp = [1] * len(dims)
    shp[a] = dims[a]
    shp[b] = dims[b]
    view = arr.reshape(shp)
    return np.ascontiguousarray(np.broadcast_to(view, dims)).reshape(-1)


def separation_table(space: CompositeSpace, label_i: str, label_j: str) -> np.ndarray:
    """(dim_i, dim_j) table of separations x_i - x_j.

    If both lattices are periodic they must share dim and spacing, and the
    separation is minimum-imaged from the integer site offset; this keeps
    simultaneous-shift invariance exact.
    """
    si = space.subsystem(label_i)
    sj = space.subsystem(label_j)
    if not (si.is_lattice and sj.is_lattice):
        raise OperatorError("pair interaction needs two lattice subsystems")
    if si.periodic and sj.periodic:
        if si.dim != sj.dim or si.grid_spacing != sj.grid_spacing:
            raise OperatorError(
                "periodic pair interaction needs matching grid (dim, spacing) "
                f"for {label_i!r} and {label_j!r}"
            )
        d = si.dim
        offsets = np.arange(d)[:, None] - np.arange(d)[None, :]
        offsets = (offsets + d // 2) % d - d // 2  # integer minimum image
        return offsets * float(si.grid_spacing)
    xi = si.positions()
    xj = sj.positions()
    return xi[:, None] - xj[None, :]


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def _zero(space: CompositeSpace) -> sp.csr_array:
    n = space.total_dim
    return sp.csr_array((n, n), dtype=np.complex128)


def _interaction_matrix(space: CompositeSpace, term: Term) -> sp.csr_array:
    if isinstance(term, InteractionTerm):
        seps = separation_table(space, term.subsystem_i, term.subsystem_j)
        vals = term.potential(seps)
        if not np.all(np.isfinite(vals)):
            raise OperatorError(
                f"pair potential {term.potential.family!r} produced non-finite values"
            )
        ai = space.axis(term.subsystem_i)
        aj = space.axis(term.subsystem_j)
        diag = _pair_diagonal(space, ai, aj, vals.astype(np.complex128))
        return sp.csr_array(sp.diags_array([diag], offsets=[0], format="csr"))
    if isinstance(term, SpinCouplingTerm):
        spin_sub = space.subsystem(term.spin_subsystem)
        pointer_sub = space.subsystem(term.pointer_subsystem)
        if spin_sub.kind != "spin":
            raise OperatorError(
                f"spin_coupling needs a spin subsystem, got {spin_sub.kind}"
            )
        if not pointer_sub.is_lattice:
            raise OperatorError("spin_coupling pointer must be a lattice subsystem")
        if not np.isfinite(term.strength):
            raise OperatorError("spin_coupling strength must be finite")
        sz = np.diag(spin_z_matrix(spin_sub.dim)).astype(np.complex128)
        xs = pointer_sub.positions().astype(np.complex128)
        diag = embed_diagonal(
            space, {term.spin_subsystem: sz, term.pointer_subsystem: xs}
        )
        return sp.csr_array(
            sp.diags_array([term.strength * diag], offsets=[0], format="csr")
        )
    raise OperatorError(f"not an interaction term: {term}")


def _term_masses(space: CompositeSpace, term: Term) -> float:
    if isinstance(term, InteractionTerm):
        return space.subsystem(term.subsystem_i).mass + space.subsystem(term.subsystem_j).mass
    if isinstance(term, SpinCouplingTerm):
        return (
            space.subsystem(term.spin_subsystem).mass
            + space.subsystem(term.pointer_subsystem).mass
        )
    raise OperatorError(f"not an interaction term: {term}")


def assemble_hamiltonian(spec: OperatorSpec, space: CompositeSpace) -> AssembledOperator:
    """Sum all declared terms into a Hermitian matrix.

    Kinetic terms use the three-point stencil; interaction and
    spin-coupling terms are diagonal in the position basis; external
    potentials are diagonal one-subsystem samples.
    """
    total = _zero(space)
    for term in spec.terms:
        if isinstance(term, KineticTerm):
            sub = space.subsystem(term.subsystem)
            total = total + embed_operator(
                space, {term.subsystem: kinetic_matrix(sub, term.mass).toarray()}
            )
        elif isinstance(term, ExternalPotentialTerm):
            sub = space.subsystem(term.subsystem)
            samples = np.asarray(term.samples, dtype=float)
            if samples.size != sub.dim:
                raise DimensionError(
                    f"external potential for {term.subsystem!r} has {samples.size} "
                    f"samples, expected {sub.dim}"
                )
            if not np.all(np.isfinite(samples)):
                raise OperatorError("external potential contains non-finite samples")
            diag = embed_diagonal(space, {term.subsystem: samples.astype(np.complex128)})
            total = total + sp.diags_array([diag], offsets=[0], format="csr")
        elif isinstance(term, (InteractionTerm, SpinCouplingTerm)):
            total = total + _interaction_matrix(space, term)
        else:
            raise OperatorError(f"unknown term type {type(term).__name__}")
    return AssembledOperator(space, sp.csr_array(total), hermitian=True)


def scaled_interaction_sum(spec: OperatorSpec, space: CompositeSpace) -> AssembledOperator:
    """Sum of interaction terms, each divided by the pair's combined mass.

    Kinetic and external terms are excluded.  With no interaction terms at
    all the result is the zero operator and the stochastic dynamics
    degenerates to plain unitary evolution; that case is flagged with a
    warning rather than an error.
    """
    terms = spec.interaction_terms
    if not terms:
        warnings.warn(
            "no interaction terms: mass-scaled interaction sum is zero, so the "
            "stochastic term vanishes",
            stacklevel=2,
        )
        return AssembledOperator(space, _zero(space), hermitian=True)
    total = _zero(space)
    for term in terms:
        total = total + _interaction_matrix(space, term) * (1.0 / _term_masses(space, term))
    return AssembledOperator(space, sp.csr_array(total), hermitian=True)


def collapse_operator(vprime: AssembledOperator, params: CollapseParams) -> AssembledOperator:
    """Scale the mass-scaled interaction sum to units of 1/sqrt(time)."""
    if not vprime.hermitian:
        raise OperatorError("collapse operator must come from a Hermitian input")
    factor = 1.0 / (params.c_scale**2 * np.sqrt(params.tau0))
    return vprime.scaled(factor)


def beta_apply(
    vhat: AssembledOperator, psi: StateVector | np.ndarray
) -> tuple[np.ndarray, float]:
    """Apply the deviation operator: returns (vhat psi - <vhat> psi, <vhat>).

    The returned vector is orthogonal to psi; that orthogonality is what
    makes the squared-norm increment of the stochastic step mean-zero.
    """
    if not vhat.hermitian:
        raise OperatorError("beta_apply requires a Hermitian operator")
    amps = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi)
    if amps.shape != (vhat.space.total_dim,):
        raise DimensionError("state and operator dimensions differ")
    vec, v_mean = _beta_terms(vhat.matrix, amps)
    if abs(v_mean.imag) > 1e-10:
        raise OperatorError(
            f"expectation has imaginary part {v_mean.imag:.3e}; operator not Hermitian?"
        )
    return vec, float(v_mean.real)


def _beta_terms(matrix, amps: np.ndarray) -> tuple[np.ndarray, complex]:
    """Shared kernel: (matrix @ psi - <matrix> psi, <matrix>)."""
    mpsi = matrix @ amps
    v_mean = np.vdot(amps, mpsi)
    return mpsi - v_mean.real * amps, v_mean
