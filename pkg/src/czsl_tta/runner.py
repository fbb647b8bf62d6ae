"""Run orchestration: warm-start, stream the test set once, persist results."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import EngineConfig
from .engine import Engine, PredictionRecord
from .io import Bundle, dump_record
from .metrics import compute_metrics
from .space import CompositionSpace, l2_normalize


@dataclass
class RunOutput:
    records: list[PredictionRecord]
    metrics: dict
    config: dict
    latency: dict
    queue_snapshot: Optional[list] = None
    space: Optional[CompositionSpace] = field(default=None, repr=False)


def stream_order(n: int, order_seed: Optional[int]) -> np.ndarray:
    if order_seed is None:
        return np.arange(n)
    return np.random.default_rng(order_seed).permutation(n)


def build_engine(bundle: Bundle, config: EngineConfig, world: Optional[str] = None) -> Engine:
    space = bundle.space(world)
    text = bundle.candidate_text(space)
    train = l2_normalize(bundle.train_features) if len(bundle.train_labels) else None
    return Engine(space, text, config, train, bundle.train_labels if train is not None else None)


def run(
    config: EngineConfig,
    bundle: Bundle,
    order_seed: Optional[int] = None,
    out_dir=None,
    world: Optional[str] = None,
    save_queues: bool = False,
    stride: int = 10,
) -> RunOutput:
    """Stream every test sample through a fresh engine exactly once.

    With ``out_dir`` set, records are appended and flushed one per line as
    they are produced, so a crash leaves a valid prefix on disk.
    """
    bundle.validate()
    engine = build_engine(bundle, config, world)
    space = engine.space
    features = l2_normalize(bundle.test_features)
    order = stream_order(len(bundle.test_labels), order_seed)

    out = Path(out_dir) if out_dir is not None else None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
        fh = open(out / "records.jsonl", "w")

    records = []
    latencies = []
    try:
        for i in order:
            t0 = time.perf_counter()
            rec = engine.process_sample(features[i], bundle.test_labels[i])
            latencies.append(time.perf_counter() - t0)
            records.append(rec)
            if fh is not None:
                dump_record(fh, rec)
    finally:
        if fh is not None:
            fh.close()

    metrics = compute_metrics(records, space, stride=stride)
    lat = np.array(latencies) * 1e3
    latency = {
        "samples": len(lat),
        "mean_ms": float(lat.mean()) if lat.size else 0.0,
        "p50_ms": float(np.percentile(lat, 50)) if lat.size else 0.0,
        "p95_ms": float(np.percentile(lat, 95)) if lat.size else 0.0,
        "max_ms": float(lat.max()) if lat.size else 0.0,
        "failed_steps": engine.n_failed_steps,
    }
    snapshot = engine.queue_snapshot() if save_queues else None
    if out is not None:
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
        (out / "run_stats.json").write_text(json.dumps(latency, indent=2) + "\n")
        if snapshot is not None:
            (out / "queues.json").write_text(json.dumps(snapshot) + "\n")
    return RunOutput(records, metrics, config.to_dict(), latency, snapshot, space)
