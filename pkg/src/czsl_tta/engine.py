"""Online adaptation engine: one pass over an unlabeled test stream."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .config import EngineConfig
from .fusion import DegenerateDeltaError, adaptive_update_weight, pseudo_label, refresh_prototypes
from .learning import (
    Adam,
    KamState,
    NonFiniteGradientError,
    StepProblem,
    compute_gradients,
    forward,
    sgd_step,
)
from .prototypes import ConfidenceQueue, prediction_entropy, visual_prototypes, warm_start_queues
from .space import CompositionSpace, Pair

logger = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    sample_index: int
    true_pair: Optional[list]
    pseudo_pair: list
    pred_pair: list
    entropy: float
    queued: bool
    best_seen_pair: Optional[list]
    best_seen_logit: Optional[float]
    best_unseen_pair: Optional[list]
    best_unseen_logit: Optional[float]
    loss_pe: float
    loss_mcrl: float
    loss_total: float
    step_failed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionRecord":
        return cls(**data)


class Engine:
    """Holds the adaptation state for one test stream.

    ``text`` must have one row per candidate of ``space`` (candidate order).
    Training features, when given, warm-start the seen-class queues.
    """

    def __init__(
        self,
        space: CompositionSpace,
        text: np.ndarray,
        config: EngineConfig,
        train_features=None,
        train_labels: Optional[Sequence[Pair]] = None,
    ):
        self.space = space
        self.config = config
        self.t = np.asarray(text, dtype=np.float64)
        if self.t.shape[0] != space.n_candidates:
            raise ValueError(f"text has {self.t.shape[0]} rows for {space.n_candidates} candidates")
        n, d = self.t.shape
        self.dim = d
        self.seen_mask = space.seen_mask
        self._seen_idx = np.flatnonzero(self.seen_mask)
        self._other_idx = np.flatnonzero(~self.seen_mask)

        sw = config.switches
        if sw.enable_queue and train_features is not None:
            self.queues = warm_start_queues(space, self.t, train_features, config, train_labels)
        elif sw.enable_queue and sw.warmstart_unseen:
            self.queues = warm_start_queues(space, self.t, {}, config.replace(warmstart_seen=False))
        else:
            self.queues = [ConfidenceQueue(config.K) for _ in range(n)]
        self.kam = KamState.zeros(n, d)
        self._adam = Adam(config.learning_rate) if config.optimizer == "adam" else None
        self.n_processed = 0
        self.n_failed_steps = 0

    @property
    def logit_scale(self) -> float:
        return 1.0 / self.config.tau if self.config.scale_logits_by_tau else 1.0

    def _weights(self, f: np.ndarray, base: np.ndarray) -> np.ndarray:
        if not self.config.switches.enable_auw:
            return np.ones(base.shape[0])
        return adaptive_update_weight(f, base, self.config.theta)

    def visual_prototypes(self):
        return visual_prototypes(self.queues, self.t)

    def process_sample(self, f: np.ndarray, true_pair: Optional[Sequence[int]] = None) -> PredictionRecord:
        cfg = self.config
        sw = cfg.switches
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.dim,) or not np.all(np.isfinite(f)):
            raise ValueError(f"sample must be a finite vector of length {self.dim}")

        # 1. refreshed text prototypes for this sample
        w_t = self._weights(f, self.t)
        t_tilde = refresh_prototypes(self.t, self.kam.delta_t, w_t) if sw.enable_textual_kam else self.t

        # 2. confidence and pseudo-label
        admit_against = t_tilde if cfg.admission_prototypes == "refreshed" else self.t
        h, p_admit = prediction_entropy(f, admit_against, cfg.tau)
        c_p = pseudo_label(p_admit)

        # 3. queue update
        queued = self.queues[c_p].insert(h, f) if sw.enable_queue else False

        # 4. fused prediction with visual prototypes from the updated queues
        v = w_v = None
        if sw.enable_queue:
            v, _ = self.visual_prototypes()
            w_v = self._weights(f, v)
        problem = StepProblem(
            f=f,
            t=self.t,
            v=v,
            w_t=w_t,
            w_v=w_v,
            alpha=cfg.alpha,
            beta=cfg.beta,
            tau=cfg.tau,
            lambda_mcrl=cfg.lambda_mcrl,
            logit_scale=self.logit_scale,
            textual_kam=sw.enable_textual_kam,
            visual_kam=sw.enable_visual_kam and sw.enable_queue,
            use_pe=sw.enable_l_pe,
            use_mcrl=sw.enable_l_mcrl,
        )
        fwd = forward(problem, self.kam)
        record = self._record(true_pair, c_p, h, queued, fwd)

        # 5. deferred update of the deltas
        trains = (problem.textual_kam or problem.visual_kam) and (problem.use_pe or problem.use_mcrl)
        if trains:
            record.step_failed = not self._step(problem, fwd)
        self.n_processed += 1
        return record

    def _step(self, problem: StepProblem, fwd) -> bool:
        saved = self.kam.copy()
        try:
            for i in range(self.config.steps_per_sample):
                if i > 0:
                    fwd = forward(problem, self.kam)
                if not np.isfinite(fwd.loss.total):
                    raise FloatingPointError("non-finite loss")
                _, g = compute_gradients(problem, self.kam, fwd)
                if self._adam is not None:
                    new = self._adam.step(self.kam, g, problem.textual_kam, problem.visual_kam)
                else:
                    new = sgd_step(self.kam, g, self.config.learning_rate, problem.textual_kam, problem.visual_kam)
                if not (np.all(np.isfinite(new.delta_t)) and np.all(np.isfinite(new.delta_v))):
                    raise FloatingPointError("non-finite delta after step")
                self.kam = new
        except (FloatingPointError, NonFiniteGradientError, DegenerateDeltaError) as exc:
            logger.warning("gradient step rolled back at sample %d: %s", self.n_processed, exc)
            self.kam = saved
            self.n_failed_steps += 1
            return False
        return True

    def _record(self, true_pair, c_p: int, h: float, queued: bool, fwd) -> PredictionRecord:
        cands = self.space.candidates
        z = fwd.z
        best_seen_pair = best_seen_logit = best_unseen_pair = best_unseen_logit = None
        if self._seen_idx.size:
            i = self._seen_idx[int(np.argmax(z[self._seen_idx]))]
            best_seen_pair, best_seen_logit = list(cands[i]), float(z[i])
        if self._other_idx.size:
            j = self._other_idx[int(np.argmax(z[self._other_idx]))]
            best_unseen_pair, best_unseen_logit = list(cands[j]), float(z[j])
        return PredictionRecord(
            sample_index=self.n_processed,
            true_pair=None if true_pair is None else [int(true_pair[0]), int(true_pair[1])],
            pseudo_pair=list(cands[c_p]),
            pred_pair=list(cands[pseudo_label(fwd.p)]),
            entropy=float(h),
            queued=bool(queued),
            best_seen_pair=best_seen_pair,
            best_seen_logit=best_seen_logit,
            best_unseen_pair=best_unseen_pair,
            best_unseen_logit=best_unseen_logit,
            loss_pe=float(fwd.loss.l_pe),
            loss_mcrl=float(fwd.loss.l_mcrl),
            loss_total=float(fwd.loss.total),
        )

    def queue_snapshot(self) -> list[dict]:
        return [
            {"pair": list(pair), **q.to_dict()} for pair, q in zip(self.space.candidates, self.queues)
        ]


def process_stream(engine: Engine, features: np.ndarray, labels=None) -> list[PredictionRecord]:
    labels = labels if labels is not None else [None] * len(features)
    return [engine.process_sample(f, lab) for f, lab in zip(features, labels)]
