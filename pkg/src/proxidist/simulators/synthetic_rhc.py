"""Synthetic table with the RHC column layout, for exercising the real-data pipeline.

A latent severity score drives treatment, hospital stay and both proxy
pairs; covariates include categorical columns and scattered missing cells.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.special import expit


def synthetic_rhc_frame(n=2000, seed=0, effect=0.10, missing_rate=0.03):
    """Raw RHC-style frame (date columns, ``swang1`` labels, proxies, covariates)."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    age = 62 + 14 * rng.standard_normal(n)
    sex = rng.choice(["Male", "Female"], n, p=[0.56, 0.44])
    cat1 = rng.choice(["ARF", "CHF", "COPD", "MOSF w/Sepsis"], n, p=[0.43, 0.08, 0.08, 0.41])
    aps1 = 55 + 12 * u + 8 * rng.standard_normal(n)
    meanbp1 = 78 - 6 * u + 25 * rng.standard_normal(n)
    wtkg = 67 + 20 * rng.standard_normal(n)
    resp1 = 28 + 3 * u + 12 * rng.standard_normal(n)
    pafi1 = 230 - 45 * u + 70 * rng.standard_normal(n)
    paco21 = 38 + 4 * u + 9 * rng.standard_normal(n)
    ph1 = 7.39 - 0.05 * u + 0.08 * rng.standard_normal(n)
    hema1 = 31 - 2.5 * u + 6 * rng.standard_normal(n)
    sepsis = (cat1 == "MOSF w/Sepsis").astype(float)
    p_treat = expit(-0.55 + 0.9 * u - 0.004 * (pafi1 - 230) + 0.03 * (paco21 - 38)
                    + 0.3 * sepsis + 0.01 * (aps1 - 55))
    treated = rng.random(n) < p_treat
    log_stay = (2.45 + effect * treated + 0.35 * u + 0.002 * (age - 62) + 0.15 * sepsis
                - 0.6 * (ph1 - 7.39) - 0.01 * (hema1 - 31) + 0.55 * rng.standard_normal(n))
    days = np.maximum(1, np.round(np.expm1(np.maximum(log_stay, 0.1))))
    days[rng.random(n) < 0.004] = 0
    sadmdte = rng.integers(10_800, 12_600, n)
    died = rng.random(n) < 0.05
    dschdte = (sadmdte + days).astype(float)
    dthdte = np.where(died, sadmdte + days, np.nan)
    dschdte[died & (rng.random(n) < 0.5)] = np.nan
    frame = pd.DataFrame({
        "ptid": np.arange(1, n + 1), "sadmdte": sadmdte, "dschdte": dschdte, "dthdte": dthdte,
        "swang1": np.where(treated, "RHC", "No RHC"), "age": age, "sex": sex, "cat1": cat1,
        "aps1": aps1, "meanbp1": meanbp1, "wtkg1": wtkg, "resp1": resp1,
        "pafi1": pafi1, "paco21": paco21, "ph1": ph1, "hema1": hema1,
    })
    for col in ("age", "meanbp1", "wtkg1", "resp1", "cat1"):
        frame.loc[rng.random(n) < missing_rate, col] = np.nan
    return frame
