"""Scenario library and config realization.

Builds concrete spaces, operators, and initial states from a validated
:class:`~collapse_lab.config.ScenarioConfig`, and ships a small library of
ready-made scenarios:

qnd-two-level
    A two-level system coupled to a frozen one-site pointer, so the
    collapse operator acts as kappa * sigma_z on the system: branch
    weights are martingales and terminal outcomes follow the initial
    weights.
beamsplitter
    Static two-branch state (photon x mirror) with mirror overlap
    1 - delta; exercises the entanglement closed forms.
two-particle-collision
    Light particle scattering off a heavy one through a Gaussian well on
    a shared periodic lattice; the workhorse for momentum-sector and
    entanglement-growth checks.  The 100:1 mass ratio stands in for the
    much larger system/apparatus asymmetry at desk scale.
stern-gerlach
    Spin-1/2 coupled to a heavy pointer lattice through sigma_z * x; the
    pointer displacement records the spin and spin-z is the audited
    quantity.
free-packet
    Single free Gaussian packet; collapse disabled.  Bridges the lattice
    propagator to the closed-form spreading law.
"""

from __future__ import annotations

import math

import numpy as np

from .config import ScenarioConfig, from_dict
from .conservation import ConservedQuantity, single_shift_generator, total_shift_generator
from .entanglement import Bipartition, build_two_branch_state
from .errors import ConfigError, StateError
from .hilbert import (
    CompositeSpace,
    StateVector,
    SubsystemSpec,
    gaussian_packet,
    make_product_state,
    renormalize,
)
from .integrator import Branch, Observable, RealizedScenario
from .operators import (
    AssembledOperator,
    CollapseParams,
    ExternalPotentialTerm,
    InteractionTerm,
    KineticTerm,
    OperatorSpec,
    SpinCouplingTerm,
    assemble_hamiltonian,
    collapse_operator,
    embed_diagonal,
    momentum_operator,
    pair_potential_from_config,
    scaled_interaction_sum,
    spin_z_matrix,
    position_diagonal,
)

__all__ = [
    "realize",
    "realize_audits",
    "builtin_scenario",
    "builtin_names",
    "BUILTIN_DESCRIPTIONS",
]


def build_space(config: ScenarioConfig) -> CompositeSpace:
    subs = []
    for s in config.space["subsystems"]:
        subs.append(
            SubsystemSpec(
                label=s["label"],
                kind=s["kind"],
                dim=s["dim"],
                mass=s.get("mass", 1.0),
                grid_spacing=s.get("grid_spacing"),
                periodic=bool(s.get("periodic", False)),
                x_min=s.get("x_min"),
            )
        )
    return CompositeSpace(subs)


def build_operator_spec(terms: list[dict]) -> OperatorSpec:
    out = []
    for t in terms:
        ttype = t["type"]
        if ttype == "kinetic":
            out.append(KineticTerm(t["subsystem"], t.get("mass")))
        elif ttype == "external_potential":
            out.append(ExternalPotentialTerm(t["subsystem"], t["samples"]))
        elif ttype == "interaction":
            pot = dict(t["potential"])
            family = pot.pop("family")
            out.append(
                InteractionTerm(
                    t["subsystem_i"], t["subsystem_j"],
                    pair_potential_from_config(family, pot),
                )
            )
        elif ttype == "spin_coupling":
            out.append(
                SpinCouplingTerm(
                    t["spin_subsystem"], t["pointer_subsystem"], t["strength"]
                )
            )
        else:
            raise ConfigError([f"operators.terms: unknown term type {ttype!r}"])
    return OperatorSpec(out)


def _factor_array(space: CompositeSpace, label: str, fac) -> np.ndarray:
    if isinstance(fac, dict) and "gaussian" in fac:
        g = fac["gaussian"]
        return gaussian_packet(
            space, label,
            center=g.get("center", 0.0),
            width=g.get("width", 1.0),
            momentum=g.get("momentum", 0.0),
        )
    arr = np.asarray([complex(re, im) for re, im in fac], dtype=np.complex128)
    return arr


def project_shift_sector(psi: StateVector, sector: int) -> StateVector:
    """Project onto the eigenspace of the simultaneous one-site shift.

    The shift eigenvalue of sector k is exp(-2 pi i k / d); all periodic
    lattice subsystems must share the site count d.
    """
    space = psi.space
    lattice_axes = [i for i, s in enumerate(space.subsystems) if s.is_lattice]
    if not lattice_axes:
        raise StateError("sector projection needs lattice subsystems")
    dims = space.dims
    d = dims[lattice_axes[0]]
    if any(dims[ax] != d for ax in lattice_axes):
        raise StateError("sector projection needs equal lattice dimensions")
    tensor = psi.reshaped()
    acc = np.zeros_like(tensor)
    for s in range(d):
        shifted = tensor
        for ax in lattice_axes:
            shifted = np.roll(shifted, s, axis=ax)
        acc = acc + np.exp(2j * np.pi * sector * s / d) * shifted
    acc /= d
    flat = acc.reshape(-1)
    if np.linalg.norm(flat) < 1e-12:
        raise StateError(f"initial state has no weight in shift sector {sector}")
    return renormalize(flat, space)


def build_initial_state(config: ScenarioConfig, space: CompositeSpace) -> StateVector:
    init = config.initial_state
    if init["kind"] == "product":
        factors = {
            lbl: _factor_array(space, lbl, fac) for lbl, fac in init["factors"].items()
        }
        psi = make_product_state(space, factors)
        if init.get("shift_sector") is not None:
            psi = project_shift_sector(psi, int(init["shift_sector"]))
        return psi
    if init["kind"] == "two_branch":
        return build_two_branch_state(
            init["delta"],
            init.get("model", "two-mode"),
            space=space,
            branch_label=init["branch_subsystem"],
            mirror_label=init["mirror_subsystem"],
            mirror_width=init.get("mirror_width", 1.0),
        )
    raise ConfigError([f"initial_state.kind: unknown kind {init['kind']!r}"])


def _realize_observable(
    spec: dict,
    space: CompositeSpace,
    hamiltonian: AssembledOperator,
    vhat: AssembledOperator | None,
) -> Observable:
    name, kind = spec["name"], spec["kind"]
    if kind == "energy":
        return Observable(name, "matrix", matrix=hamiltonian.matrix)
    if kind == "collapse_potential":
        if vhat is None:
            raise ConfigError(
                [f"observables: {name!r} needs collapse enabled"]
            )
        return Observable(name, "matrix", matrix=vhat.matrix)
    if kind == "spin_z":
        sub = space.subsystem(spec["subsystem"])
        diag = np.diag(spin_z_matrix(sub.dim)).astype(np.complex128)
        return Observable(
            name, "diag", diag=embed_diagonal(space, {spec["subsystem"]: diag}).real
        )
    if kind == "position":
        xs = position_diagonal(space.subsystem(spec["subsystem"]))
        return Observable(
            name, "diag",
            diag=embed_diagonal(space, {spec["subsystem"]: xs.astype(complex)}).real,
        )
    if kind == "width":
        sub = space.subsystem(spec["subsystem"])
        xs = position_diagonal(sub)
        x1 = embed_diagonal(space, {spec["subsystem"]: xs.astype(complex)}).real
        x2 = embed_diagonal(space, {spec["subsystem"]: (xs**2).astype(complex)}).real
        return Observable(name, "width", diag=x1, diag2=x2)
    if kind == "momentum":
        return Observable(
            name, "matrix", matrix=momentum_operator(space, spec["subsystem"]).matrix
        )
    if kind == "total_shift":
        return Observable(
            name, "matrix_complex", matrix=total_shift_generator(space).matrix
        )
    raise ConfigError([f"observables: unknown kind {kind!r}"])


def realize_audits(
    config: ScenarioConfig,
    space: CompositeSpace,
    hamiltonian: AssembledOperator,
) -> list[ConservedQuantity]:
    """Build the conserved-quantity operators declared in the config."""
    out = []
    for a in config.audits:
        kind = a["kind"]
        if kind == "energy":
            out.append(ConservedQuantity(a["name"], hamiltonian, "energy"))
        elif kind == "total_quasimomentum":
            out.append(
                ConservedQuantity(
                    a["name"], total_shift_generator(space), "total_quasimomentum"
                )
            )
        elif kind == "spin_z":
            sub = space.subsystem(a["subsystem"])
            diag = np.diag(spin_z_matrix(sub.dim)).astype(np.complex128)
            mat = np.diag(embed_diagonal(space, {a["subsystem"]: diag}))
            out.append(
                ConservedQuantity(
                    a["name"],
                    AssembledOperator(space, mat, hermitian=True),
                    "spin_z",
                    subsystem=a["subsystem"],
                )
            )
        elif kind == "custom":
            op = assemble_hamiltonian(build_operator_spec(a["terms"]), space)
            out.append(ConservedQuantity(a["name"], op, "custom"))
        else:
            raise ConfigError([f"audits: unknown kind {kind!r}"])
    return out


def realize(config: ScenarioConfig) -> RealizedScenario:
    """Assemble a config into integrator-ready operators and state.

    Audit quantities are recorded automatically: each audit contributes an
    observable series under its own name (plus per-lattice shift marginals
    for quasimomentum audits), and energy audits with collapse enabled
    track the realized quadratic variation used by audit bounds.
    """
    space = build_space(config)
    op_spec = build_operator_spec(config.operators["terms"])
    hamiltonian = assemble_hamiltonian(op_spec, space)

    vhat = None
    if config.collapse_enabled:
        params = CollapseParams(config.collapse["c_scale"], config.collapse["tau0"])
        vhat = collapse_operator(scaled_interaction_sum(op_spec, space), params)

    psi0 = build_initial_state(config, space)
    plan = config.integration_plan()

    observables = [
        _realize_observable(o, space, hamiltonian, vhat) for o in config.observables
    ]
    names = {o.name for o in observables}

    qv_tracks: list[tuple[str, object]] = []
    quantities = realize_audits(config, space, hamiltonian)
    for q in quantities:
        if q.name not in names:
            kind = "matrix_complex" if q.operator.unitary else "matrix"
            observables.append(Observable(q.name, kind, matrix=q.operator.matrix))
            names.add(q.name)
        if q.kind == "total_quasimomentum":
            for sub in space.subsystems:
                if sub.is_lattice:
                    mname = f"{q.name}.{sub.label}"
                    if mname not in names:
                        observables.append(
                            Observable(
                                mname, "matrix_complex",
                                matrix=single_shift_generator(space, sub.label).matrix,
                            )
                        )
                        names.add(mname)
        if q.kind == "energy" and vhat is not None:
            qv_tracks.append((q.name, hamiltonian.matrix))

    branches = tuple(
        Branch(b["label"], _branch_indices(space, b["subsystem"], b["sites"]))
        for b in config.branches
    )
    bipartitions = tuple(
        Bipartition.of(space, side) for side in config.bipartitions
    )

    if hamiltonian.matrix.nnz == 0:
        hamiltonian_arg = None
    else:
        hamiltonian_arg = hamiltonian
    if vhat is not None and vhat.matrix.nnz == 0:
        vhat = None

    return RealizedScenario(
        space=space,
        hamiltonian=hamiltonian_arg,
        collapse_op=vhat,
        psi0=psi0,
        plan=plan,
        observables=tuple(observables),
        branches=branches,
        bipartitions=bipartitions,
        qv_tracks=tuple(qv_tracks),
        config=config,
    )


def _branch_indices(space: CompositeSpace, label: str, sites) -> np.ndarray:
    indicator = np.zeros(space.subsystem(label).dim, dtype=np.complex128)
    indicator[list(sites)] = 1.0
    mask = embed_diagonal(space, {label: indicator}).real > 0.5
    return np.nonzero(mask)[0]


# --------------------------------------------------------------------------
# built-in scenarios
# --------------------------------------------------------------------------

BUILTIN_DESCRIPTIONS = {
    "qnd-two-level": "two-level system with a frozen pointer; branch martingale",
    "beamsplitter": "static two-branch photon/mirror state, overlap 1 - delta",
    "two-particle-collision": "light/heavy scattering on a periodic lattice",
    "stern-gerlach": "spin-1/2 recorded by a heavy pointer lattice",
    "free-packet": "free Gaussian packet, collapse disabled",
}


def builtin_names() -> list[str]:
    return sorted(BUILTIN_DESCRIPTIONS)


def builtin_scenario(name: str) -> ScenarioConfig:
    """Return one of the documented built-in configurations by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(
            [f"unknown scenario {name!r}; options: {builtin_names()}"]
        ) from None
    return from_dict(factory())


def _qnd_two_level() -> dict:
    w0 = math.sqrt(0.3)
    w1 = math.sqrt(0.7)
    return {
        "name": "qnd-two-level",
        "space": {
            "subsystems": [
                {"label": "spin", "kind": "spin", "dim": 2, "mass": 1.0},
                {"label": "pointer", "kind": "lattice1d", "dim": 2,
                 "grid_spacing": 1.0, "mass": 1.0},
            ]
        },
        # pointer held in its upper site (x = +0.5): the coupling acts as
        # kappa * sigma_z on the spin with kappa = strength * 0.5 / 2
        "operators": {
            "terms": [
                {"type": "spin_coupling", "spin_subsystem": "spin",
                 "pointer_subsystem": "pointer", "strength": 8.0},
            ]
        },
        "collapse": {"enabled": True, "c_scale": 1.0, "tau0": 1.0},
        "initial_state": {
            "kind": "product",
            "factors": {"spin": [w0, w1], "pointer": [0.0, 1.0]},
        },
        "plan": {"dt": 1e-3, "n_steps": 5000, "seed": 1, "record_every": 100},
        "observables": [
            {"name": "sz", "kind": "spin_z", "subsystem": "spin"},
            {"name": "vhat", "kind": "collapse_potential"},
        ],
        "branches": [
            {"label": "up", "subsystem": "spin", "sites": [0]},
            {"label": "down", "subsystem": "spin", "sites": [1]},
        ],
        "bipartitions": [["spin"]],
        "audits": [{"name": "sz_audit", "kind": "spin_z", "subsystem": "spin"}],
    }


def _beamsplitter() -> dict:
    return {
        "name": "beamsplitter",
        "space": {
            "subsystems": [
                {"label": "photon", "kind": "discrete", "dim": 2, "mass": 1.0},
                {"label": "mirror", "kind": "discrete", "dim": 2, "mass": 1e6},
            ]
        },
        "operators": {"terms": []},
        "collapse": {"enabled": False},
        "initial_state": {
            "kind": "two_branch",
            "delta": 0.01,
            "model": "two-mode",
            "branch_subsystem": "photon",
            "mirror_subsystem": "mirror",
        },
        "plan": {"dt": 1e-3, "n_steps": 10, "seed": 3, "record_every": 5},
        "observables": [],
        "branches": [
            {"label": "reflected", "subsystem": "photon", "sites": [0]},
            {"label": "transmitted", "subsystem": "photon", "sites": [1]},
        ],
        "bipartitions": [["photon"]],
        "audits": [],
    }


def _two_particle_collision() -> dict:
    return {
        "name": "two-particle-collision",
        "space": {
            "subsystems": [
                {"label": "particle", "kind": "lattice1d", "dim": 64,
                 "grid_spacing": 0.25, "mass": 1.0, "periodic": True},
                {"label": "apparatus", "kind": "lattice1d", "dim": 64,
                 "grid_spacing": 0.25, "mass": 100.0, "periodic": True},
            ]
        },
        "operators": {
            "terms": [
                {"type": "kinetic", "subsystem": "particle"},
                {"type": "kinetic", "subsystem": "apparatus"},
                {"type": "interaction", "subsystem_i": "particle",
                 "subsystem_j": "apparatus",
                 "potential": {"family": "gaussian_well", "depth": 2.0, "width": 0.7}},
            ]
        },
        "collapse": {"enabled": True, "c_scale": 0.1, "tau0": 1.0},
        "initial_state": {
            "kind": "product",
            "factors": {
                "particle": {"gaussian": {"center": -3.0, "width": 0.8,
                                          "momentum": 1.2}},
                "apparatus": {"gaussian": {"center": 1.0, "width": 0.8,
                                           "momentum": 0.0}},
            },
        },
        "plan": {"dt": 1e-3, "n_steps": 10000, "seed": 5, "record_every": 250},
        "observables": [
            {"name": "x1", "kind": "position", "subsystem": "particle"},
            {"name": "x2", "kind": "position", "subsystem": "apparatus"},
        ],
        "branches": [],
        "bipartitions": [["particle"]],
        "audits": [
            {"name": "energy", "kind": "energy"},
            {"name": "tshift", "kind": "total_quasimomentum"},
        ],
    }


def _stern_gerlach() -> dict:
    return {
        "name": "stern-gerlach",
        "space": {
            "subsystems": [
                {"label": "spin", "kind": "spin", "dim": 2, "mass": 1.0},
                {"label": "pointer", "kind": "lattice1d", "dim": 48,
                 "grid_spacing": 0.5, "mass": 100.0},
            ]
        },
        "operators": {
            "terms": [
                {"type": "kinetic", "subsystem": "pointer"},
                {"type": "spin_coupling", "spin_subsystem": "spin",
                 "pointer_subsystem": "pointer", "strength": 0.5},
            ]
        },
        "collapse": {"enabled": True, "c_scale": 0.1, "tau0": 1.0},
        "initial_state": {
            "kind": "product",
            "factors": {
                "spin": [1.0, 1.0],  # x-up, normalized on construction
                "pointer": {"gaussian": {"center": 0.0, "width": 1.5,
                                         "momentum": 0.0}},
            },
        },
        "plan": {"dt": 2e-3, "n_steps": 1500, "seed": 7, "record_every": 50},
        "observables": [
            {"name": "sz", "kind": "spin_z", "subsystem": "spin"},
            {"name": "pointer_x", "kind": "position", "subsystem": "pointer"},
        ],
        "branches": [
            {"label": "up", "subsystem": "spin", "sites": [0]},
            {"label": "down", "subsystem": "spin", "sites": [1]},
        ],
        "bipartitions": [["spin"]],
        "audits": [{"name": "sz_audit", "kind": "spin_z", "subsystem": "spin"}],
    }


def _free_packet() -> dict:
    return {
        "name": "free-packet",
        "space": {
            "subsystems": [
                {"label": "particle", "kind": "lattice1d", "dim": 256,
                 "grid_spacing": 0.125, "mass": 1.0, "periodic": True},
            ]
        },
        "operators": {"terms": [{"type": "kinetic", "subsystem": "particle"}]},
        "collapse": {"enabled": False},
        "initial_state": {
            "kind": "product",
            "factors": {
                "particle": {"gaussian": {"center": 0.0, "width": 1.0,
                                          "momentum": 0.0}},
            },
        },
        "plan": {"dt": 1e-4, "n_steps": 20000, "seed": 11, "record_every": 2000},
        "observables": [
            {"name": "x", "kind": "position", "subsystem": "particle"},
            {"name": "width", "kind": "width", "subsystem": "particle"},
        ],
        "branches": [],
        "bipartitions": [],
        "audits": [],
    }


_BUILTINS = {
    "qnd-two-level": _qnd_two_level,
    "beamsplitter": _beamsplitter,
    "two-particle-collision": _two_particle_collision,
    "stern-gerlach": _stern_gerlach,
    "free-packet": _free_packet,
}
