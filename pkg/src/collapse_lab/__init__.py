"""Stochastic collapse dynamics on composite quantum systems.

Integrates a norm-preserving stochastic extension of unitary evolution
whose noise operator is built from the interaction potentials, and audits
conserved quantities (energy, lattice quasi-momentum sectors, spin) along
trajectories and ensembles.
"""

__version__ = "0.1.0"

from .conservation import (
    AuditReport,
    ConservedQuantity,
    audit_run,
    audit_trajectory,
    commutator_certificate,
    expectation,
    subsystem_marginal,
    total_shift_generator,
)
from .config import ScenarioConfig, config_hash, load_config, serialize
from .entanglement import (
    Bipartition,
    SchmidtResult,
    build_two_branch_state,
    purity,
    reduced_density,
    schmidt,
    two_branch_entropy_approx,
    two_branch_entropy_exact,
    vn_entropy,
)
from .hilbert import (
    CompositeSpace,
    StateVector,
    SubsystemSpec,
    discrete,
    gaussian_packet,
    lattice,
    make_product_state,
    norm,
    renormalize,
    spin,
)
from .integrator import (
    EnsembleStats,
    IntegrationPlan,
    RealizedScenario,
    TrajectoryRecord,
    ito_step,
    lindblad_oracle,
    run_ensemble,
    run_trajectory,
    trace_distance,
)
from .operators import (
    AssembledOperator,
    CollapseParams,
    ExternalPotentialTerm,
    InteractionTerm,
    KineticTerm,
    OperatorSpec,
    SpinCouplingTerm,
    assemble_hamiltonian,
    beta_apply,
    collapse_operator,
    gaussian_well,
    scaled_interaction_sum,
    soft_coulomb,
    square_barrier,
    tabulated,
)
from .scenarios import builtin_scenario, realize, realize_audits
from .wavepacket import (
    PacketParams,
    PostSelection,
    dominant_momentum,
    evolved_packet,
    packet_width,
    polar_decomposition,
    postselected_momentum_closed,
    postselected_momentum_quadrature,
)

__all__ = [
    "__version__",
    "AssembledOperator",
    "AuditReport",
    "Bipartition",
    "CollapseParams",
    "CompositeSpace",
    "ConservedQuantity",
    "EnsembleStats",
    "ExternalPotentialTerm",
    "IntegrationPlan",
    "InteractionTerm",
    "KineticTerm",
    "OperatorSpec",
    "PacketParams",
    "PostSelection",
    "RealizedScenario",
    "ScenarioConfig",
    "SchmidtResult",
    "SpinCouplingTerm",
    "StateVector",
    "SubsystemSpec",
    "TrajectoryRecord",
    "assemble_hamiltonian",
    "audit_run",
    "audit_trajectory",
    "beta_apply",
    "build_two_branch_state",
    "builtin_scenario",
    "collapse_operator",
    "commutator_certificate",
    "config_hash",
    "discrete",
    "dominant_momentum",
    "evolved_packet",
    "expectation",
    "gaussian_packet",
    "gaussian_well",
    "ito_step",
    "lattice",
    "lindblad_oracle",
    "load_config",
    "make_product_state",
    "norm",
    "packet_width",
    "polar_decomposition",
    "postselected_momentum_closed",
    "postselected_momentum_quadrature",
    "purity",
    "realize",
    "realize_audits",
    "reduced_density",
    "renormalize",
    "run_ensemble",
    "run_trajectory",
    "scaled_interaction_sum",
    "schmidt",
    "serialize",
    "soft_coulomb",
    "spin",
    "square_barrier",
    "subsystem_marginal",
    "tabulated",
    "total_shift_generator",
    "trace_distance",
    "two_branch_entropy_approx",
    "two_branch_entropy_exact",
    "vn_entropy",
]
