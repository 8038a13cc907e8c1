"""File-level orchestration behind the command line.

Each ``run_*`` function reads its inputs, runs one stage, writes its
artifacts into an output directory and returns a :class:`PipelineRun`.
Deterministic outputs (meshes, ``metrics.json``, ``energy_log.jsonl``) never
contain timings or absolute paths; those go to ``run.json`` only, so two runs
on identical inputs give byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RegistrationConfig, read_config
from .errors import FormatError, MeshIOError, MorphfitError, ValidationError
from .landmarks import read_landmarks
from .meshio import load_mesh, load_target, save_mesh
from .partition import build_partition, read_partition_spec, write_partition_map
from .prewarp import SmoothingConfig, prewarp_pipeline
from .solver import register

__all__ = [
    "METRICS_HEADER",
    "PipelineRun",
    "run_partition",
    "run_prewarp",
    "run_register",
    "read_metrics",
    "compare_metrics",
    "format_comparison",
]

logger = logging.getLogger(__name__)

METRICS_HEADER = "morphfit-metrics v1"
COMPARE_KEYS = ("rms_distance", "landmark_rms", "ground_truth_rms", "iterations", "final_energy")


@dataclass
class PipelineRun:
    """Record of one command: inputs, resolved config, timings, artifacts, metric summary."""

    command: str
    inputs: dict
    config: dict = None
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def write(self, out_dir):
        path = Path(out_dir) / "run.json"
        self.outputs["run"] = str(path)
        payload = {
            "format": "morphfit-run v1",
            "command": self.command,
            "inputs": self.inputs,
            "config": self.config,
            "timings": self.timings,
            "outputs": self.outputs,
            "metrics": self.metrics,
        }
        _write_json(path, payload)
        return path


class _Timer:
    def __init__(self, timings, name):
        self.timings, self.name = timings, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.name] = time.perf_counter() - self.t0


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _describe_inputs(**paths):
    out = {}
    for name, p in paths.items():
        if p is None:
            continue
        if not os.path.isfile(p):
            raise MeshIOError(f"no such file: {p}")
        out[name] = {"path": str(Path(p).resolve()), "sha256": _sha256(p)}
    return out


def _digests(inputs):
    return {k: v["sha256"] for k, v in inputs.items()}


def _write_json(path, payload):
    try:
        with open(path, "w", newline="\n") as fh:
            json.dump(payload, fh, indent=1, sort_keys=False, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from None


def _prepare_out_dir(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MeshIOError(f"cannot create output directory {out}: {exc}") from None
    return out


def _save(path, mesh, **kw):
    try:
        save_mesh(path, mesh, **kw)
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from None
    return str(path)


def _load_config(path, paper_literal=False, no_normal_term=False) -> RegistrationConfig:
    cfg = read_config(path) if path else RegistrationConfig()
    if paper_literal:
        cfg = cfg.replace(smoothing=SmoothingConfig(cfg.smoothing.delta, paper_literal=True))
    if no_normal_term:
        cfg = cfg.replace(normal_term=False)
    return cfg


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def run_partition(template, landmarks, partition_spec, out_dir) -> PipelineRun:
    """Partition the template; writes ``partition_map.json`` and ``partition_labels.ply``."""
    inputs = _describe_inputs(template=template, landmarks=landmarks, partition_spec=partition_spec)
    run = PipelineRun("partition", inputs)
    out = _prepare_out_dir(out_dir)
    with _Timer(run.timings, "load"):
        mesh = load_mesh(template)
        lm = read_landmarks(landmarks)
        spec = read_partition_spec(partition_spec)
    if not spec.chains:
        logger.warning("partition spec has no boundaries; the whole template is one part")
    with _Timer(run.timings, "partition"):
        pmap = build_partition(mesh, lm, spec)
    map_path = out / "partition_map.json"
    write_partition_map(map_path, pmap)
    run.outputs["partition_map"] = str(map_path)
    run.outputs["labels_mesh"] = _save(out / "partition_labels.ply", mesh,
                                       vertex_scalars={"part": pmap.labels})
    run.metrics = {
        "n_parts": pmap.n_parts,
        "n_boundaries": len(pmap.boundaries),
        "part_sizes": [int(np.sum(pmap.labels == p)) for p in range(1, pmap.n_parts + 1)],
    }
    run.write(out)
    return run


def run_prewarp(template, landmarks, partition_spec, out_dir, config=None,
                paper_literal_smooth=False) -> PipelineRun:
    """Partition, fit per-part affines and blend; writes the scaled and final meshes."""
    inputs = _describe_inputs(template=template, landmarks=landmarks,
                              partition_spec=partition_spec, config=config)
    cfg = _load_config(config, paper_literal_smooth)
    run = PipelineRun("prewarp", inputs, cfg.to_dict())
    out = _prepare_out_dir(out_dir)
    with _Timer(run.timings, "load"):
        mesh = load_mesh(template)
        lm = read_landmarks(landmarks)
        spec = read_partition_spec(partition_spec)
    with _Timer(run.timings, "prewarp"):
        res = prewarp_pipeline(mesh, lm, spec, cfg.smoothing)
    run.outputs.update(_write_prewarp(out, mesh, res))
    run.metrics = _prewarp_summary(res)
    run.write(out)
    return run


def _write_prewarp(out, mesh, res):
    outputs = {
        "scaled_mesh": _save(out / "prewarp_scaled.ply", mesh.with_vertices(res.scaled_vertices)),
        "prewarped_mesh": _save(out / "prewarped.ply", res.mesh,
                                vertex_scalars={"part": res.partition.labels}),
    }
    map_path = out / "partition_map.json"
    write_partition_map(map_path, res.partition)
    outputs["partition_map"] = str(map_path)
    aff_path = out / "prewarp.json"
    _write_json(aff_path, _prewarp_summary(res))
    outputs["prewarp_report"] = str(aff_path)
    return outputs


def _prewarp_summary(res):
    d = dict(res.diagnostics)
    d["affines"] = [a.matrix.tolist() for a in res.affines]
    return d


def _ground_truth(path, n):
    truth = load_mesh(path)
    if truth.n_vertices != n:
        raise ValidationError(
            f"{path}: ground truth has {truth.n_vertices} vertices, template has {n}"
        )
    return truth.vertices


def run_register(template, target, out_dir, landmarks=None, partition_spec=None, config=None,
                 baseline=False, paper_literal_smooth=False, no_normal_term=False,
                 ground_truth=None) -> PipelineRun:
    """Pre-warp (unless ``baseline`` or no spec) and register; write mesh, metrics and log.

    Outputs: ``warped.ply``, ``metrics.json`` (format ``morphfit-metrics v1``),
    ``energy_log.jsonl``, ``run.json``; with a pre-warp also its artifacts.
    """
    inputs = _describe_inputs(template=template, target=target, landmarks=landmarks,
                              partition_spec=partition_spec, config=config,
                              ground_truth=ground_truth)
    cfg = _load_config(config, paper_literal_smooth, no_normal_term)
    run = PipelineRun("register", inputs, cfg.to_dict())
    out = _prepare_out_dir(out_dir)
    with _Timer(run.timings, "load"):
        mesh = load_mesh(template)
        tgt = load_target(target)
        lm = read_landmarks(landmarks) if landmarks else None
        spec = read_partition_spec(partition_spec) if partition_spec else None
        truth = _ground_truth(ground_truth, mesh.n_vertices) if ground_truth else None
    if lm is not None:
        lm.check_against(mesh.n_vertices)
    use_prewarp = spec is not None and not baseline
    if use_prewarp and lm is None:
        raise ValidationError("pre-warp needs --landmarks")
    start = mesh
    prewarp_info = None
    if use_prewarp:
        with _Timer(run.timings, "prewarp"):
            res = prewarp_pipeline(mesh, lm, spec, cfg.smoothing)
        run.outputs.update(_write_prewarp(out, mesh, res))
        start = res.mesh
        prewarp_info = _prewarp_summary(res)
        del prewarp_info["affines"]
    with _Timer(run.timings, "register"):
        try:
            result = register(start, tgt, lm, cfg)
        except MorphfitError as exc:
            if exc.stage is None:
                raise type(exc)(str(exc), stage="register") from exc
            raise
    warped = result.mesh
    run.outputs["warped_mesh"] = _save(out / "warped.ply", warped)

    log_path = out / "energy_log.jsonl"
    try:
        with open(log_path, "w", newline="\n") as fh:
            for rec in result.log:
                fh.write(json.dumps(rec.as_dict()) + "\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write {log_path}: {exc}") from None
    run.outputs["energy_log"] = str(log_path)

    dist = result.correspondences.distances
    metrics = {
        "format": METRICS_HEADER,
        "method": "prewarp+register" if use_prewarp else "baseline",
        "inputs": _digests(inputs),
        "n_vertices": mesh.n_vertices,
        "rms_distance": float(np.sqrt(np.mean(dist * dist))),
        "max_distance": float(dist.max()),
        "landmark_rms": _finite_or_none(lm.rms_error(warped.vertices)) if lm is not None and len(lm) else None,
        "ground_truth_rms": None,
        "iterations": result.iterations,
        "stages": len(cfg.beta_schedule),
        "final_energy": result.log[-1].as_dict() if result.log else None,
        "prewarp": prewarp_info,
        "config": cfg.to_dict(),
        "energy_log": log_path.name,
    }
    if truth is not None:
        err = np.linalg.norm(warped.vertices - truth, axis=1)
        metrics["ground_truth_rms"] = float(np.sqrt(np.mean(err * err)))
        metrics["ground_truth_max"] = float(err.max())
    metrics_path = out / "metrics.json"
    _write_json(metrics_path, metrics)
    run.outputs["metrics"] = str(metrics_path)
    run.metrics = {k: metrics[k] for k in ("rms_distance", "landmark_rms", "ground_truth_rms", "iterations")}
    run.write(out)
    return run


def read_metrics(path) -> dict:
    """Load a ``metrics.json``; the ``format`` field must be ``morphfit-metrics v1``."""
    path = os.fspath(path)
    try:
        with open(path, "r") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise MeshIOError(f"no such file: {path}") from None
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a metrics file ({exc})") from None
    fmt = data.get("format", "") if isinstance(data, dict) else ""
    kind, _, version = str(fmt).partition(" ")
    if kind != METRICS_HEADER.split()[0]:
        raise FormatError(f"{path}: not a metrics file")
    if version != METRICS_HEADER.split()[1]:
        raise FormatError(f"{path}: unsupported metrics version {version!r}")
    return data


def _wall_time(metrics_path):
    run_path = Path(metrics_path).with_name("run.json")
    try:
        with open(run_path) as fh:
            timings = json.load(fh).get("timings", {})
        return float(sum(timings.values()))
    except (OSError, ValueError, TypeError, AttributeError):
        return None


def _scalar(metrics, key):
    v = metrics.get(key)
    if key == "final_energy" and isinstance(v, dict):
        v = v.get("total")
    return v


def compare_metrics(path_a, path_b) -> dict:
    """Side-by-side comparison of two metrics files (B minus A deltas).

    Wall time comes from the ``run.json`` next to each metrics file when it
    exists, since metrics files themselves carry no timings.
    """
    a, b = read_metrics(path_a), read_metrics(path_b)
    rows = []
    for key in COMPARE_KEYS + ("wall_time",):
        if key == "wall_time":
            va, vb = _wall_time(path_a), _wall_time(path_b)
        else:
            va, vb = _scalar(a, key), _scalar(b, key)
        delta = vb - va if isinstance(va, (int, float)) and isinstance(vb, (int, float)) else None
        rows.append({"metric": key, "a": va, "b": vb, "delta": delta})
    return {
        "format": "morphfit-comparison v1",
        "a": {"path": os.fspath(path_a), "method": a.get("method")},
        "b": {"path": os.fspath(path_b), "method": b.get("method")},
        "rows": rows,
    }


def format_comparison(report) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, int):
            return str(v)
        return f"{v:.6g}"

    head = ("metric", f"A ({report['a']['method']})", f"B ({report['b']['method']})", "B - A")
    lines = [[r["metric"], cell(r["a"]), cell(r["b"]), cell(r["delta"])] for r in report["rows"]]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*row) for row in lines]
    return "\n".join(out)
