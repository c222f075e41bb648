"""Numerical certification of dominated, partially hyperbolic and singular
hyperbolic structure for smooth flows, using only the vector field and its
Jacobian: compound-matrix machinery, indefinite-quadratic-form cone criteria,
splitting estimation and singular adapted metrics."""

from ._version import __version__
from .certifier import Certificate, CriterionResult, SamplingPlan, certify
from .exterior import (
    KVector,
    codim1_generator,
    cofactor_operator,
    compound_operator,
    enumerate_multi_indices,
    hodge_expand,
    hodge_identify,
    induced_inner_product,
    recover_base_operator,
    wedge_coordinates,
)
from .flows import (
    CocycleSample,
    OrbitSegment,
    VectorFieldModel,
    compound_cocycle,
    find_singularities,
    integrate_cocycle,
    integrate_orbit,
    make_system,
    subbundle_rates,
)
from .quadforms import (
    QuadFormField,
    cone_classify,
    default_form,
    eval_form,
    integrate_rate,
    select_rate,
    separation_interval,
)
from .splitting import (
    build_adapted_metric,
    estimate_center_bundle,
    estimate_splitting,
    estimate_stable_direction,
    flow_in_center_check,
    verify_adaptedness,
)

__all__ = [
    "__version__",
    "Certificate", "CriterionResult", "SamplingPlan", "certify",
    "KVector", "codim1_generator", "cofactor_operator", "compound_operator",
    "enumerate_multi_indices", "hodge_expand", "hodge_identify",
    "induced_inner_product", "recover_base_operator", "wedge_coordinates",
    "CocycleSample", "OrbitSegment", "VectorFieldModel", "compound_cocycle",
    "find_singularities", "integrate_cocycle", "integrate_orbit", "make_system",
    "subbundle_rates",
    "QuadFormField", "cone_classify", "default_form", "eval_form",
    "integrate_rate", "select_rate", "separation_interval",
    "build_adapted_metric", "estimate_center_bundle", "estimate_splitting",
    "estimate_stable_direction", "flow_in_center_check", "verify_adaptedness",
]
