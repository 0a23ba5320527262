"""Dynamic prediction of conditional restricted mean survival time (cRMST).

Landmark datasets are built at a grid of prediction times, each subject at
risk gets a jackknife pseudo-value of the w-year cRMST as response, and a
least-squares supermodel with polynomial time functions is fitted to the
stacked data.
"""

from importlib.resources import files

from .dataset import (
    CovariateSchema,
    DataError,
    LongitudinalDataset,
    load_schema,
    parse_longitudinal,
    summarize,
)
from .evaluation import harrell_c, monte_carlo_cv, prediction_error
from .landmark import LandmarkGrid, ModelSpec, design_matrix, stack
from .model import (
    FittedDynamicModel,
    coefficient_curve,
    fit_clustered_ls,
    fit_dynamic,
    fit_static_rmst,
    predict_crmst,
    select_interactions,
)
from .pseudo import pseudo_values_crmst, pseudo_values_rmst
from .survival import crmst, kaplan_meier, rmst

__all__ = [
    "CovariateSchema", "DataError", "LongitudinalDataset", "load_schema", "parse_longitudinal",
    "summarize", "harrell_c", "monte_carlo_cv", "prediction_error", "LandmarkGrid", "ModelSpec",
    "design_matrix", "stack", "FittedDynamicModel", "coefficient_curve", "fit_clustered_ls",
    "fit_dynamic", "fit_static_rmst", "predict_crmst", "select_interactions",
    "pseudo_values_crmst", "pseudo_values_rmst", "crmst", "kaplan_meier", "rmst", "load_pbc",
]


def load_pbc() -> LongitudinalDataset:
    """The bundled Mayo Clinic PBC follow-up data (312 patients, 1945 visits)."""
    base = files("dynrmst") / "data"
    schema = load_schema(base / "pbc2_schema.yaml")
    return parse_longitudinal(base / "pbc2.csv", schema)
