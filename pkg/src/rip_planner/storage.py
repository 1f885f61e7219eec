"""JSON, JSON Lines and CSV persistence with byte-stable output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .adaptation import AdaptationPoint
from .density import Architecture, DensityModel
from .diffmath import ParamVector
from .ensemble import EnsemblePosterior
from .errors import ContractError
from .types import (
    Demonstration,
    EgoState,
    EpisodeLog,
    Infraction,
    InfractionKind,
    ResultRow,
    SceneContext,
    Trajectory,
    TrajectoryLibrary,
)

FORMAT_VERSION = 1
RESULT_COLUMNS = (
    "method",
    "suite",
    "trials",
    "success_rate",
    "success_se",
    "infractions_per_km",
    "infra_se",
    "detection_auroc",
    "detection_corr",
    "recovery_score",
    "mean_min_ade1",
    "mean_min_ade5",
    "mean_min_fde1",
)
ADAPTATION_COLUMNS = ("budget", "success_rate", "success_se", "queries", "episodes", "buffer_scope")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _finite_or_none(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def _check_version(data: dict, path) -> None:
    if data.get("format_version") != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported format_version {data.get('format_version')!r}")


def model_to_dict(model: DensityModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "params": [repr(float(v)) for v in model.params.values],
        "train_meta": model.train_meta,
    }


def model_from_dict(data: dict) -> DensityModel:
    arch = Architecture.from_dict(data["arch"])
    values = np.array([float(v) for v in data["params"]], dtype=np.float64)
    params = ParamVector.from_shapes(arch.param_shapes(), values)
    return DensityModel(arch, params, dict(data.get("train_meta", {})))


def save_model(model: DensityModel, path: str | Path) -> None:
    _write_text(path, dumps(model_to_dict(model)) + "\n")


def load_model(path: str | Path) -> DensityModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    _check_version(data, path)
    return model_from_dict(data)


def save_ensemble(posterior: EnsemblePosterior, directory: str | Path) -> None:
    directory = Path(directory)
    files = [f"member_{i:02d}.json" for i in range(len(posterior))]
    for name, member in zip(files, posterior.members):
        save_model(member, directory / name)
    index = {
        "format_version": FORMAT_VERSION,
        "K": len(posterior),
        "weights": [repr(float(w)) for w in posterior.weights],
        "member_files": files,
    }
    _write_text(directory / "ensemble.json", dumps(index) + "\n")


def load_ensemble(directory: str | Path) -> EnsemblePosterior:
    directory = Path(directory)
    index = json.loads((directory / "ensemble.json").read_text(encoding="utf-8"))
    _check_version(index, directory / "ensemble.json")
    if len(index["member_files"]) != index["K"]:
        raise ContractError("ensemble index lists the wrong number of members")
    members = [load_model(directory / name) for name in index["member_files"]]
    return EnsemblePosterior(members, [float(w) for w in index["weights"]])


def save_library(library: TrajectoryLibrary, path: str | Path) -> None:
    data = {
        "format_version": FORMAT_VERSION,
        "T": int(library.centroids.shape[1]),
        "dt": library.dt,
        "centroids": library.centroids.tolist(),
        "source_meta": library.source_meta,
    }
    _write_text(path, dumps(data) + "\n")


def load_library(path: str | Path) -> TrajectoryLibrary:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    _check_version(data, path)
    library = TrajectoryLibrary(np.array(data["centroids"]), data["dt"], data["source_meta"])
    if library.centroids.shape[1] != data["T"]:
        raise ContractError(f"{path}: centroid horizon does not match T")
    return library


def _demo_to_dict(demo: Demonstration) -> dict:
    return {
        "scene_id": demo.scene_id,
        "step": demo.step,
        "ctx": {
            "past": demo.ctx.past.tolist(),
            "scan": demo.ctx.scan.tolist(),
            "goal": demo.ctx.goal.tolist(),
        },
        "plan": demo.plan.states.tolist(),
    }


def write_demonstrations(demos: Iterable[Demonstration], path: str | Path) -> None:
    _write_text(path, "".join(dumps(_demo_to_dict(d)) + "\n" for d in demos))


def read_demonstrations(path: str | Path, dt: float = 0.25) -> list[Demonstration]:
    demos = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            ctx = SceneContext(**{k: np.array(v) for k, v in row["ctx"].items()})
            demos.append(
                Demonstration(row["scene_id"], int(row["step"]), ctx, Trajectory(np.array(row["plan"]), dt=dt))
            )
    return demos


def _log_to_dict(log: EpisodeLog) -> dict:
    return {
        "scene_id": log.scene_id,
        "seed": log.seed,
        "states": [[s.x, s.y, s.heading, s.speed] for s in log.states],
        "infractions": [{"step": i.step, "kind": i.kind.value} for i in log.infractions],
        "uncertainty_trace": [_finite_or_none(u) for u in log.uncertainty_trace],
        "nll_trace": [_finite_or_none(v) for v in log.nll_trace],
        "success": log.success,
        "distance_driven": log.distance_driven,
        "expert_queries": log.expert_queries,
    }


def _trace(values: list) -> list[float]:
    return [math.nan if v is None else float(v) for v in values]


def write_episode_logs(logs: Iterable[EpisodeLog], path: str | Path) -> None:
    _write_text(path, "".join(dumps(_log_to_dict(log)) + "\n" for log in logs))


def read_episode_logs(path: str | Path) -> list[EpisodeLog]:
    logs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            logs.append(
                EpisodeLog(
                    scene_id=row["scene_id"],
                    seed=int(row["seed"]),
                    states=[EgoState(*s) for s in row["states"]],
                    infractions=[Infraction(i["step"], InfractionKind(i["kind"])) for i in row["infractions"]],
                    uncertainty_trace=_trace(row["uncertainty_trace"]),
                    nll_trace=_trace(row["nll_trace"]),
                    success=bool(row["success"]),
                    distance_driven=float(row["distance_driven"]),
                    expert_queries=int(row.get("expert_queries", 0)),
                )
            )
    return logs


def _cell(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return "NA" if not math.isfinite(value) else repr(value)
    return str(value)


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_results_csv(rows: Iterable[ResultRow], path: str | Path) -> None:
    _write_csv(path, RESULT_COLUMNS, ([getattr(r, c) for c in RESULT_COLUMNS] for r in rows))


def write_adaptation_csv(points: Iterable[AdaptationPoint], path: str | Path) -> None:
    _write_csv(
        path,
        ADAPTATION_COLUMNS,
        ([p.budget, p.success_rate, p.success_se, p.queries, p.episodes, "suite"] for p in points),
    )


FORECAST_COLUMNS = ("method", "records", "candidates", "mean_min_ade1", "mean_min_ade5", "mean_min_fde1")


def write_forecast_csv(rows: Iterable[Sequence], path: str | Path) -> None:
    """Rows of (method, records, candidates, minADE1, minADE5, minFDE1)."""
    _write_csv(path, FORECAST_COLUMNS, rows)
