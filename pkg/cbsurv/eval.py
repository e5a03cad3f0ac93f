import numpy as np
import pandas as pd
from rich.table import Table

from cbsurv.design import build_design_matrix
from cbsurv.errors import DataError
from cbsurv.model import HazardModel, aic, fit_design, lrt, summary_table
from cbsurv.rep import spec_to_str
from cbsurv.sampling import PersonMomentTable
from cbsurv.slogging import Logger
from cbsurv.utils import fingerprint_frame


def compare_models(table: PersonMomentTable, specs) -> pd.DataFrame:
    """
    Fits every spec on the same person-moment table and builds an analysis
    of deviance: each model is tested against the one before it when the
    earlier one is nested in it.
    """
    if len(specs) == 0:
        raise DataError("nothing to compare")

    fingerprint = fingerprint_frame(table.frame)
    models = [fit_design(build_design_matrix(table, s), fingerprint) for s in specs]

    rows = []
    for k, model in enumerate(models):
        row = {
            "model": spec_to_str(model.spec),
            "df": model.n_parameters,
            "deviance": model.fit.deviance,
            "aic": aic(model),
            "lrt": np.nan,
            "lrt_df": np.nan,
            "p": np.nan,
        }
        if k > 0:
            try:
                test = lrt(models[k - 1], model)
                row.update(lrt=test.statistic, lrt_df=test.df, p=test.p)
            except DataError:
                pass
        rows.append(row)

    return pd.DataFrame(rows)


def _fmt(value):
    if isinstance(value, str):
        return value
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{value:.4g}"


def frame_table(frame: pd.DataFrame, title=None) -> Table:
    table = Table(title=title)
    for col in frame.columns:
        table.add_column(str(col), justify="left" if frame[col].dtype == object else "right")
    for row in frame.itertuples(index=False):
        table.add_row(*[_fmt(v) for v in row])
    return table


def print_summary(model: HazardModel):
    if model.covariance is None or not model.fit.converged:
        frame = pd.DataFrame(
            {
                "cause": np.repeat(np.arange(1, model.causes + 1), len(model.column_names)),
                "term": model.column_names * model.causes,
                "estimate": model.coefficients.reshape(-1),
            }
        )
        title = "Estimates only"
        if model.fit.penalized:
            title = f"Penalized fit, lambda = {model.fit.lambda_:.4g}"
    else:
        frame = summary_table(model)
        title = f"Deviance {model.fit.deviance:.4f} on {model.fit.n_obs} person-moments"

    Logger.table(frame_table(frame, title))
