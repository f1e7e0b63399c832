from .bounds import BoundInputs, DeterministicBound, deterministic_bound, kl_gaussian_diag, pac_bayes_bound, pac_bayes_terms
from .cka import UndefinedSimilarity, cka_rewind_table, linear_cka
from .complexity import dti, module_fro, nop, operator_norm, pfn, psn, sosp
from .ranking import is_constant, kendall_tau
from .report import (
    MEASURES,
    MeasureReport,
    PacBayesMeasure,
    default_margin,
    deterministic_inputs,
    measure_report,
    pac_bayes_inputs,
    pac_bayes_measure,
)

__all__ = [
    "BoundInputs",
    "DeterministicBound",
    "deterministic_bound",
    "kl_gaussian_diag",
    "pac_bayes_bound",
    "pac_bayes_terms",
    "UndefinedSimilarity",
    "cka_rewind_table",
    "linear_cka",
    "dti",
    "module_fro",
    "nop",
    "operator_norm",
    "pfn",
    "psn",
    "sosp",
    "is_constant",
    "kendall_tau",
    "MEASURES",
    "MeasureReport",
    "PacBayesMeasure",
    "default_margin",
    "deterministic_inputs",
    "measure_report",
    "pac_bayes_inputs",
    "pac_bayes_measure",
]
