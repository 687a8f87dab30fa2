"""Synthetic bank-marketing-like data for desk-scale experiments and CI.

The generator mimics the shape of a retail-bank telemarketing table: a few
demographic categoricals, a banking profile with a rare "default" flag, and
a subscribe/not-subscribe label. The default rate is controllable, default
status is driven by a latent financial-health factor that also moves
balance, housing and loan, and the label depends on call duration, health
and default status. That coupling is what makes the default rate of a
training subset leave a readable trace in a fitted model.
"""

import numpy as np

from .data import CATEGORICAL, NUMERIC, Column, Schema, TabularDataset

JOBS = ("admin", "blue-collar", "management", "services", "technician")
MARITAL = ("divorced", "married", "single")
EDUCATION = ("primary", "secondary", "tertiary")
YESNO = ("no", "yes")


def bank_like_schema() -> Schema:
    cols = (
        Column("age", NUMERIC),
        Column("job", CATEGORICAL, JOBS),
        Column("marital", CATEGORICAL, MARITAL),
        Column("education", CATEGORICAL, EDUCATION),
        Column("default", CATEGORICAL, YESNO),
        Column("balance", NUMERIC),
        Column("housing", CATEGORICAL, YESNO),
        Column("loan", CATEGORICAL, YESNO),
        Column("duration", NUMERIC),
        Column("campaign", NUMERIC),
        Column("y", CATEGORICAL, YESNO),
    )
    return Schema(cols, label_column="y", property_column="default")


def make_synthetic_bank(n_rows: int, default_rate: float = 0.05, seed: int = 0,
                        label_bias: float = -2.65) -> TabularDataset:
    """Draw n_rows records with the given expected default rate."""
    rng = np.random.default_rng(seed)
    f = rng.normal(size=n_rows)  # latent financial health

    age = rng.integers(18, 71, size=n_rows).astype(np.float64)
    job = rng.integers(0, len(JOBS), size=n_rows)
    marital = rng.integers(0, len(MARITAL), size=n_rows)
    education = rng.integers(0, len(EDUCATION), size=n_rows)

    # E[2*sigmoid(-1.5 f)] = 1 over a symmetric f, so the mean rate is exact
    p_def = np.clip(default_rate * 2.0 / (1.0 + np.exp(1.5 * f)), 0.0, 1.0)
    default = (rng.random(n_rows) < p_def).astype(np.int64)

    balance = np.round(1400.0 * np.exp(0.7 * f) - 250.0 + 220.0 * rng.normal(size=n_rows), 2)
    housing = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(-0.4 * f))).astype(np.int64)
    loan = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(0.8 - 0.4 * f))).astype(np.int64)

    dur_z = rng.normal(size=n_rows)
    duration = np.round(185.0 * np.exp(0.55 * dur_z), 1)
    campaign = (1 + rng.poisson(1.6, size=n_rows)).astype(np.float64)

    logit = (label_bias + 1.9 * dur_z + 0.9 * f - 2.2 * default
             - 0.4 * loan + 0.3 * housing - 0.12 * (campaign - 2.6))
    y = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)

    cols = {
        "age": age, "job": job, "marital": marital, "education": education,
        "default": default, "balance": balance, "housing": housing,
        "loan": loan, "duration": duration, "campaign": campaign, "y": y,
    }
    return TabularDataset(bank_like_schema(), cols)
