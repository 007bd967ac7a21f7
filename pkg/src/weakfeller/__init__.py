"""Exact non-linear filtering on finite partially observed models, with
numerical audits of the continuity of the filter kernel."""

from .measures import (
    FiniteMeasure,
    MetricSpace,
    StructuralError,
    TestFamily,
    bl_distance,
    default_test_family,
    rho_distance,
    tv_distance,
)
from .lp import InfeasibleError, LpError, UnboundedError, lp_solve
from .models import (
    ConfigurationError,
    NoiseDensity,
    PomdpModel,
    build_additive_model,
    build_counterexample_model,
    check_tv_channel,
    check_tv_kernel,
)
from .filter import (
    NullObservationError,
    bayes_update,
    filter_kernel,
    joint_kernel,
    lifted_cost,
    predict_observation,
)
from .audit import (
    AuditReport,
    CapabilityError,
    Scenario,
    Thresholds,
    condition_m_modulus,
    decomposition_check,
    eta_continuity_audit,
    make_scenario,
    posterior_distance_audit,
    predictor_tv_audit,
    run_audits,
)
from .beliefmdp import BeliefGrid, QuantizedMdp, quantize, refinement_study, value_iteration
from .modelio import load_model, save_model

__version__ = "0.1.0"
