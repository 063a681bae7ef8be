"""Explanation operations over any predict-capable target: attributions
(local surrogate and Shapley), what-if probes, counterfactual search,
prototype/criticism selection, and similar-example retrieval."""

from .common import (
    Attribution,
    Counterfactual,
    CounterfactualSearchResult,
    PredictTarget,
    PrototypeSet,
    RankedExamples,
    WhatIfResult,
    target_from_model,
    target_from_pipeline,
)
from .counterfactual import explain_counterfactual
from .examples import explain_examples
from .lime import explain_lime
from .prototypes import (
    explain_prototypes,
    median_bandwidth,
    rbf_kernel,
    select_criticisms,
    select_prototypes,
    witness,
)
from .shap import explain_shap
from .whatif import explain_whatif

__all__ = [
    "Attribution",
    "Counterfactual",
    "CounterfactualSearchResult",
    "PredictTarget",
    "PrototypeSet",
    "RankedExamples",
    "WhatIfResult",
    "explain_counterfactual",
    "explain_examples",
    "explain_lime",
    "explain_prototypes",
    "explain_shap",
    "explain_whatif",
    "median_bandwidth",
    "rbf_kernel",
    "select_criticisms",
    "select_prototypes",
    "target_from_model",
    "target_from_pipeline",
    "witness",
]
