"""Pipeline stages and the workdir artifact layout.

Each stage reads only persisted artifacts and writes its own, so any stage can
be re-run on its own once its upstream stages have completed.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from analyzers.detection_metrics import Metrics, evaluate as evaluate_detections
from imaging.annotations import AnnotationSet, DetectionSet, read_points_csv, write_points_csv
from imaging.frames import FrameSequence, downscale, load_sequence
from imaging.morphology import BinaryVolume
from models.event_sim import EventSimConfig
from models.m1_mapper import (
    M1Config,
    activated_channels,
    extract_cell_maps,
    load_m1,
    m1_train,
    save_m1,
    select_cell_channel,
)
from models.m2_predictor import (
    EventStats,
    KRecommendation,
    M2Config,
    event_statistics,
    load_m2,
    m2_infer,
    m2_train,
    recommend_k,
    save_m2,
    statistics_from_lengths,
)
from models.m3_detector import M3Config, build_labels, load_m3, m3_detect, m3_train, save_m3
from numerics.checkpoint import MANIFEST
from numerics.ctn import load_ctn, save_ctn
from tools import reporting
from tools.synthcells import SceneConfig, load_ground_truth, save_scene, simulate
from utils.config import AUTO, Config, ConfigError
from utils.progress import ProgressTracker


class MissingArtifactError(FileNotFoundError):
    """Raised when a stage's input has not been produced yet."""

    def __init__(self, stage: str, path: Path):
        super().__init__(f"Missing {path}; run the '{stage}' stage first")
        self.stage = stage
        self.path = path


@dataclass(frozen=True)
class Workdir:
    root: Path

    @property
    def simulation(self) -> Path:
        return self.root / "simulation"

    @property
    def m1(self) -> Path:
        return self.root / "m1"

    @property
    def maps(self) -> Path:
        return self.root / "maps" / "y.ctn"

    @property
    def m2(self) -> Path:
        return self.root / "m2"

    @property
    def e_prime(self) -> Path:
        return self.root / "m2" / "e_prime.ctn"

    @property
    def event_stats(self) -> Path:
        return self.root / "stats" / "event_stats.json"

    @property
    def histogram(self) -> Path:
        return self.root / "stats" / "length_histogram.csv"

    @property
    def k_recommendation(self) -> Path:
        return self.root / "stats" / "k_recommendation.json"

    @property
    def m3(self) -> Path:
        return self.root / "m3"

    @property
    def detections(self) -> Path:
        return self.root / "detections.csv"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.json"

    @property
    def sweep(self) -> Path:
        return self.root / "sweep"


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(stage, path)
    return path


def _require_checkpoint(directory: Path, stage: str) -> Path:
    return _require(directory / MANIFEST, stage).parent


def _workdir(config: Config, work: Optional[Workdir]) -> Workdir:
    return work or Workdir(config.workdir)


def _load_raw(config: Config) -> FrameSequence:
    if not config.video_dir.is_dir():
        raise MissingArtifactError("simulate", config.video_dir)
    return load_sequence(config.video_dir)


def _load_video(config: Config) -> FrameSequence:
    """The full video at model resolution."""
    return downscale(_load_raw(config), config.downscale)


def _load_annotations(config: Config) -> AnnotationSet:
    return read_points_csv(_require(config.annotations_path, "simulate"))


def _split(config: Config, frames: int) -> int:
    split = config.train_frames
    if split >= frames:
        raise ConfigError(f"'train_frames' = {split} leaves no test frames in a {frames}-frame video", "train_frames")
    return split


# stages


def run_simulate(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None):
    work = _workdir(config, work)
    cfg = SceneConfig.from_section(config.section("scene"), config.seed)
    progress.step("Simulating cell video", f"{cfg.frames} frames of {cfg.height}x{cfg.width}, {cfg.cells} cells")
    seq, truth = simulate(cfg)
    save_scene(seq, truth, work.simulation, cfg)
    progress.success(f"{len(truth.annotations)} mitoses planted; scene in {work.simulation}")
    return seq, truth


def run_train_m1(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None):
    work = _workdir(config, work)
    seq = _load_video(config)
    train = seq.slice(0, _split(config, len(seq)))
    cfg = M1Config.from_section(config.section("m1"), config.seed)
    progress.step("Training M1", f"n={cfg.n}, {cfg.iterations} iterations on {len(train)} frames")
    model, trace = m1_train(train, cfg, progress)
    override = config.get("m1.channel")
    model.selected_channel = select_cell_channel(model, train, cfg, None if override == AUTO else override)
    model.activated = activated_channels(model, train)
    save_m1(model, work.m1, cfg)
    if trace.losses:
        progress.info(f"final loss {trace.losses[-1]:.4f}")
    progress.success(f"cell channel {model.selected_channel}; activated channels {model.activated}")
    return model


def run_extract_maps(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None) -> BinaryVolume:
    work = _workdir(config, work)
    model = load_m1(_require_checkpoint(work.m1, "train-m1"))
    seq = _load_video(config)
    progress.step("Extracting normal-cell maps", f"channel {model.selected_channel} over {len(seq)} frames")
    y = extract_cell_maps(model, seq, workers=config.get("m3.workers"))
    save_ctn(work.maps, y.voxels)
    progress.success(f"{y.count()} cell voxels written to {work.maps}")
    return y


def _load_maps(config: Config, work: Workdir) -> BinaryVolume:
    y = BinaryVolume(load_ctn(_require(work.maps, "extract-maps")).astype(np.uint8))
    return y.window(0, _split(config, y.shape[0]))


def run_train_m2(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None):
    work = _workdir(config, work)
    y = _load_maps(config, work)
    sim_cfg = EventSimConfig.from_section(config.section("event_sim"), config.seed, config.link_overlap)
    cfg = M2Config.from_section(config.section("m2"), config.seed)
    progress.step("Training M2", f"window {cfg.window}, {cfg.iterations} iterations")
    model, trace = m2_train(y, sim_cfg, cfg, progress)
    save_m2(model, work.m2, cfg)
    if trace.losses:
        progress.info(f"final loss {trace.losses[-1]:.4f}")
    progress.success(f"M2 checkpoint in {work.m2}")
    return model


def _true_statistics(config: Config, work: Workdir) -> Optional[EventStats]:
    if not (work.simulation / "ground_truth.json").exists():
        return None
    truth = load_ground_truth(work.simulation)
    lengths = [e.length for e in truth.events if e.start < config.train_frames]
    return statistics_from_lengths(lengths, config.get("m2.percentile_rule"))


def run_stats(config: Config, progress: ProgressTracker,
              work: Optional[Workdir] = None) -> Tuple[EventStats, Optional[KRecommendation]]:
    work = _workdir(config, work)
    model = load_m2(_require_checkpoint(work.m2, "train-m2"))
    y = _load_maps(config, work)
    progress.step("Predicting events", f"{y.shape[0]} frames")
    e_prime = m2_infer(model, y)
    save_ctn(work.e_prime, e_prime)
    stats = event_statistics(e_prime, config.get("m2.percentile_rule"), config.link_overlap)
    reporting.write_event_stats(work.event_stats, stats, _true_statistics(config, work))
    reporting.write_length_histogram(work.histogram, stats.lengths)
    if stats.empty:
        progress.warning("M2 predicted no events; no sequence length can be recommended")
        return stats, None
    recommendation = recommend_k(stats)
    reporting.write_k_recommendation(work.k_recommendation, recommendation)
    progress.success(f"mean / std / p50 / p75 = {stats.format()} over {stats.count} events; "
                     f"k = {recommendation.k}, annotate {recommendation.frames_primary} frames")
    return stats, recommendation


def resolve_sequence_length(config: Config, work: Workdir) -> Tuple[int, int]:
    """(k, frames) from the config, falling back to the stats recommendation for 'auto'."""
    k, frames = config.get("m3.k"), config.get("m3.frames")
    recommendation = None
    if k == AUTO:
        recommendation = reporting.read_json(_require(work.k_recommendation, "stats"))
        k = recommendation["k"]
    if frames == AUTO:
        frames = recommendation["frames_primary"] if recommendation else k + 6
    return int(k), int(frames)


def _m3_range(config: Config, frames: int) -> int:
    start = config.get("m3.train_start")
    if start is None:
        start = config.train_frames - frames
    if start < 0 or start + frames > config.train_frames:
        raise ConfigError(f"M3 frames [{start}, {start + frames}) fall outside the training range "
                          f"[0, {config.train_frames})", "m3.frames")
    return start


def run_train_m3(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None):
    work = _workdir(config, work)
    k, frames = resolve_sequence_length(config, work)
    raw = _load_raw(config)
    _split(config, len(raw))
    seq = downscale(raw, config.downscale)
    start = _m3_range(config, frames)
    annotations = _load_annotations(config)
    height, width = raw.height, raw.width
    in_range = annotations.within(start, start + frames)
    labels = build_labels(in_range, (frames, height, width), config.downscale)
    cfg = M3Config.from_section(config.section("m3"), config.seed, k)
    progress.step("Training M3", f"k = {k}, frames = {frames} [{start}, {start + frames}), "
                                 f"{len(in_range)} annotated events")
    model, trace = m3_train(seq.slice(start, start + frames), labels, cfg, progress)
    save_m3(model, work.m3, cfg, {"train_start": start, "frames": frames, "events": len(in_range)})
    if trace.losses:
        progress.info(f"final loss {trace.losses[-1]:.4f}")
    progress.success(f"M3 checkpoint in {work.m3}")
    return model


def run_detect(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None) -> DetectionSet:
    work = _workdir(config, work)
    model, _ = load_m3(_require_checkpoint(work.m3, "train-m3"))
    raw = _load_raw(config)
    seq = downscale(raw, config.downscale)
    split = _split(config, len(seq))
    progress.step("Detecting mitoses", f"frames [{split}, {len(seq)}) with k = {model.k}")
    detections = m3_detect(model, seq.slice(split, len(seq)), config.downscale, frame_offset=split,
                           stride=config.get("m3.stride"), workers=config.get("m3.workers"),
                           link_overlap=config.link_overlap, frame_shape=(raw.height, raw.width))
    write_points_csv(detections, work.detections)
    progress.success(f"{len(detections)} detections written to {work.detections}")
    return detections


def run_evaluate(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None) -> List[Metrics]:
    work = _workdir(config, work)
    detections = read_points_csv(_require(work.detections, "detect"), DetectionSet)
    annotations = _load_annotations(config)
    test = AnnotationSet([p for p in annotations if p.frame >= config.train_frames])
    progress.step("Evaluating", f"{len(detections)} detections against {len(test)} annotations")
    metrics = evaluate_detections(detections, test, config.get("evaluation.spatial_tolerance"),
                                  tuple(config.temporal_tolerances))
    reporting.write_metrics(work.metrics, metrics)
    for m in metrics:
        progress.info(reporting.format_metrics(m))
    progress.success(f"metrics written to {work.metrics}")
    return metrics


def run_all(config: Config, progress: ProgressTracker) -> List[Metrics]:
    """Every stage in order; simulates a scene first unless a video directory is configured."""
    synthetic = config.get("paths.video_dir") is None
    stages = [run_train_m1, run_extract_maps, run_train_m2, run_stats, run_train_m3, run_detect, run_evaluate]
    if synthetic:
        stages.insert(0, run_simulate)
    progress.set_total_steps(len(stages))
    result = None
    for stage in stages:
        result = stage(config, progress)
    return result


# sweep over (k, frames)


def _sweep_cell(settings: Dict[str, Any], k: int, frames: int, cell_dir: str) -> List[Dict[str, Any]]:
    config = Config(data=settings, overrides={"m3.k": k, "m3.frames": frames, "m3.train_start": None})
    quiet = ProgressTracker(verbose=False)
    work = Workdir(Path(cell_dir))
    run_train_m3(config, quiet, work)
    run_detect(config, quiet, work)
    events = reporting.read_json(work.m3 / "manifest.json")["events"]
    return [{"k": k, "frames": frames, "events": events, **m.to_dict()}
            for m in run_evaluate(config, quiet, work)]


def run_sweep(config: Config, progress: ProgressTracker, work: Optional[Workdir] = None):
    """Train/detect/evaluate M3 on every (k, frames) cell with frames >= k."""
    work = _workdir(config, work)
    k_values, frame_values = config.get("sweep.k_values"), config.get("sweep.frame_values")
    cells = [(k, f) for k in k_values for f in frame_values if k <= f <= config.train_frames]
    settings = config.as_dict()
    settings["paths"]["video_dir"] = str(config.video_dir.resolve())
    settings["paths"]["annotations"] = str(config.annotations_path.resolve())
    progress.step("Sweeping sequence length and frame budget", f"{len(cells)} cells")
    jobs = [(settings, k, f, str((work.sweep / f"k{k}_f{f}").resolve())) for k, f in cells]
    rows: List[Dict[str, Any]] = []
    workers = config.get("sweep.workers")
    if workers > 1 and jobs:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell_rows in progress.track(pool.map(_sweep_cell, *zip(*jobs)), "sweep", total=len(jobs)):
                rows.extend(cell_rows)
    else:
        for job in progress.track(jobs, "sweep"):
            rows.extend(_sweep_cell(*job))
    annotations = _load_annotations(config)
    event_counts = {f: len(annotations.within(config.train_frames - f, config.train_frames))
                    for f in frame_values if f <= config.train_frames}
    results = reporting.sweep_frame(rows)
    written = reporting.write_sweep(work.sweep, results, k_values, frame_values,
                                    config.temporal_tolerances, event_counts)
    progress.success(f"sweep tables written: {', '.join(p.name for p in written)}")
    return results
