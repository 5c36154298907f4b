"""Run artifacts: metrics.csv, config.json, snapshot.json.

Artifacts are fully deterministic functions of the seed: floats are
written with shortest-roundtrip repr and the wall_ms column is zero-filled
(real timings go to the progress log on stdout, never into the artifact,
so that byte-identical reruns stay byte-identical).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

METRICS_COLUMNS = ("env_step", "episode_return_mean", "achieved_horizon_mean",
                   "model_error_l2_mean", "critic_loss", "policy_objective", "wall_ms")


class ArtifactError(RuntimeError):
    """Missing or malformed run artifact."""


@dataclass
class MetricsRow:
    env_step: int
    episode_return_mean: float
    achieved_horizon_mean: float
    model_error_l2_mean: float
    critic_loss: float
    policy_objective: float
    wall_ms: float = 0.0

    def to_csv_line(self) -> str:
        parts = [str(int(self.env_step))]
        for name in METRICS_COLUMNS[1:]:
            parts.append(repr(float(getattr(self, name))))
        return ",".join(parts)


def write_metrics(path: str | Path, rows: list) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    lines.extend(row.to_csv_line() for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path: str | Path) -> list:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"metrics file not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header.split(",") != list(METRICS_COLUMNS):
            raise ArtifactError(f"{path}:1: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(METRICS_COLUMNS):
                raise ArtifactError(
                    f"{path}:{lineno}: expected {len(METRICS_COLUMNS)} fields, "
                    f"got {len(parts)}")
            try:
                rows.append(MetricsRow(env_step=int(parts[0]),
                                       **{name: float(v) for name, v
                                          in zip(METRICS_COLUMNS[1:], parts[1:])}))
            except ValueError as err:
                raise ArtifactError(f"{path}:{lineno}: {err}") from err
    return rows


def save_artifact(out_dir: str | Path, config_json: dict, rows: list,
                  snapshot: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_json, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_metrics(out / "metrics.csv", rows)
    with open(out / "snapshot.json", "w", encoding="utf-8") as fh:
        json.dump({"version": 1, **snapshot}, fh, sort_keys=True)
        fh.write("\n")
    return out


def load_artifact(out_dir: str | Path) -> tuple[dict, list, dict]:
    out = Path(out_dir)
    if not out.is_dir():
        raise ArtifactError(f"artifact directory not found: {out}")
    config_path = out / "config.json"
    if not config_path.exists():
        raise ArtifactError(f"missing config.json in {out}")
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            config_json = json.load(fh)
    except json.JSONDecodeError as err:
        raise ArtifactError(f"{config_path}: invalid JSON ({err})") from err
    rows = read_metrics(out / "metrics.csv")
    snapshot_path = out / "snapshot.json"
    snapshot = {}
    if snapshot_path.exists():
        try:
            with open(snapshot_path, "r", encoding="utf-8") as fh:
                snapshot = json.load(fh)
        except json.JSONDecodeError as err:
            raise ArtifactError(f"{snapshot_path}: invalid JSON ({err})") from err
    return config_json, rows, snapshot
