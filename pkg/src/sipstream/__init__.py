"""Context-aware privacy for correlated data streams.

Perturbation mechanisms for instantaneous and batched release, Bayesian
belief tracking, budget composition, and brute-force leakage auditing that
verifies the guarantees on small instances.
"""

from .belief import BeliefState, ZeroProbabilityError, init_batch_belief, init_belief, update_batch, update_inst
from .mech import (
    PrivacyBudget,
    ReleasePolicy,
    compose_advanced,
    compose_advanced_batched,
    compose_linear,
    crr_policy,
    privatize_step,
    rr_ldp_policy,
    uniform_schedule,
)
from .model import (
    BatchModel,
    MarkovModel,
    batch_transition,
    estimate_markov,
    load_model,
    read_corpus,
    sample_sequence,
    save_model,
    write_corpus,
)
from .optimize import (
    BatchObjective,
    batch_distance,
    check_feasibility,
    exact_oracle_small,
    solve_batch_policy,
    symbol_distance,
)
from .audit import (
    CrrMechanism,
    KrrMechanism,
    LeakageReport,
    audit_report,
    bil_exact,
    expected_distortion,
    iil_exact,
    ldp_log_ratio,
    mutual_information,
    sil_exact,
)
from .stream import backend_name, privatize_batched_stream, privatize_crr_stream, privatize_krr_stream

__version__ = "0.1.0"
