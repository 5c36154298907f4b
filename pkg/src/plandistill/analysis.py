"""Post-run analysis: horizon trends, model-error trends, report building.

Statistics here are deliberately small and self-contained (rank
correlation with average ranks, exact binomial sign test) so reports have
no dependencies beyond numpy and stay bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .artifact import MetricsRow


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks over ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    if len(x) < 2:
        return 0.0

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1, dtype=np.float64)
        for val in np.unique(v):
            mask = v == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx = ranks(x) - (len(x) + 1) / 2.0
    ry = ranks(y) - (len(y) + 1) / 2.0
    denom = math.sqrt(float((rx**2).sum() * (ry**2).sum()))
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0


def sign_test_p_value(n_success: int, n_trials: int) -> float:
    """One-sided exact binomial tail P(X >= n_success) under p = 1/2."""
    if not (0 <= n_success <= n_trials):
        raise ValueError("need 0 <= n_success <= n_trials")
    total = sum(math.comb(n_trials, k) for k in range(n_success, n_trials + 1))
    return total / 2.0**n_trials


def adaptive_horizon_stats(rows: list) -> dict:
    """Mean achieved horizon per interval plus its trend over training.

    Intervals before the first model fit carry no horizon data (NaN) and
    are excluded from the trend statistic.
    """
    if not rows:
        raise ValueError("run artifact contains no metrics rows")
    steps = np.array([r.env_step for r in rows], dtype=np.float64)
    horizons = np.array([r.achieved_horizon_mean for r in rows], dtype=np.float64)
    valid = ~np.isnan(horizons)
    series = [{"env_step": int(s), "achieved_horizon_mean": float(h)}
              for s, h in zip(steps, horizons)]
    if valid.sum() < 2:
        return {"per_interval": series, "spearman_horizon_vs_step": 0.0,
                "mean_horizon": float("nan")}
    return {
        "per_interval": series,
        "spearman_horizon_vs_step": spearman(steps[valid], horizons[valid]),
        "mean_horizon": float(horizons[valid].mean()),
    }


def _nan_mean(values: np.ndarray) -> float:
    valid = values[~np.isnan(values)]
    return float(valid.mean()) if valid.size else float("nan")


def run_mean_model_error(rows: list, skip_fraction: float = 0.2) -> float:
    """Mean on-policy model error, ignoring the warmup fraction of the run."""
    errors = np.array([r.model_error_l2_mean for r in rows], dtype=np.float64)
    start = int(len(errors) * skip_fraction)
    return _nan_mean(errors[start:])


def build_report(config_json: dict, rows: list, oracle_value: float | None = None,
                 final_return: float | None = None) -> dict:
    """Machine-readable run summary (the plot-ready data, no plotting)."""
    report: dict = {
        "env": config_json.get("env"),
        "seed": config_json.get("seed"),
        "intervals": len(rows),
        "columns": {},
    }
    if rows:
        arr = {name: np.array([getattr(r, name) for r in rows], dtype=np.float64)
               for name in ("env_step", "episode_return_mean", "achieved_horizon_mean",
                            "model_error_l2_mean", "critic_loss", "policy_objective")}
        horizon_stats = adaptive_horizon_stats(rows)
        steps = arr["env_step"]
        merr = arr["model_error_l2_mean"]
        valid = ~np.isnan(merr)
        report.update({
            "final_env_step": int(steps[-1]),
            "final_episode_return_mean": float(arr["episode_return_mean"][-1]),
            "mean_model_error": run_mean_model_error(rows),
            "model_error_trend_spearman": spearman(steps[valid], merr[valid])
            if valid.sum() >= 2 else 0.0,
            "horizon_trend_spearman": horizon_stats["spearman_horizon_vs_step"],
            "mean_achieved_horizon": horizon_stats["mean_horizon"],
        })
        report["columns"] = {name: [float(v) for v in series]
                             for name, series in arr.items()}
    if oracle_value is not None:
        report["oracle_soft_optimal_return"] = float(oracle_value)
    if final_return is not None:
        report["final_greedy_return"] = float(final_return)
        if oracle_value:
            report["greedy_return_relative_gap"] = float(
                abs(oracle_value - final_return) / abs(oracle_value))
    return report
