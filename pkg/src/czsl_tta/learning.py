"""Test-time objective, its analytical gradients and the optimizers.

The objective is the entropy of the fused prediction plus a weighted
symmetric contrastive term aligning textual and visual prototypes.
Gradients flow only into the two delta matrices; base prototypes, queue
features and the adaptive weights are constants of a step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, log_softmax

from .fusion import affinity, fused_logits, refresh_prototypes

logger = logging.getLogger(__name__)


@dataclass
class KamState:
    delta_t: np.ndarray
    delta_v: np.ndarray

    @classmethod
    def zeros(cls, n: int, d: int) -> "KamState":
        return cls(np.zeros((n, d)), np.zeros((n, d)))

    def copy(self) -> "KamState":
        return KamState(self.delta_t.copy(), self.delta_v.copy())


@dataclass
class GradientPair:
    g_delta_t: np.ndarray
    g_delta_v: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    l_pe: float
    l_mcrl: float
    total: float


@dataclass
class StepProblem:
    """Everything a gradient step treats as constant for one sample.

    ``v=None`` means the visual branch is absent: the fused logits use text
    only and the contrastive term is skipped.
    """

    f: np.ndarray
    t: np.ndarray
    v: Optional[np.ndarray]
    w_t: np.ndarray
    w_v: Optional[np.ndarray]
    alpha: float
    beta: float
    tau: float
    lambda_mcrl: float
    logit_scale: float = 1.0
    textual_kam: bool = True
    visual_kam: bool = True
    use_pe: bool = True
    use_mcrl: bool = True


@dataclass
class Forward:
    t_tilde: np.ndarray
    v_tilde: Optional[np.ndarray]
    z: np.ndarray
    logp: np.ndarray
    p: np.ndarray
    loss: LossBreakdown


def loss_pe(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(min(max(-terms.sum(), 0.0), math.log(p.size)))


def _entropy_from_logp(logp: np.ndarray) -> float:
    p = np.exp(logp)
    return float(-np.sum(np.where(p > 0, p * logp, 0.0)))


def loss_mcrl(t_tilde: np.ndarray, v_tilde: np.ndarray, tau: float) -> float:
    S = (t_tilde @ v_tilde.T) / tau
    diag = np.arange(S.shape[0])
    row = log_softmax(S, axis=1)[diag, diag]
    col = log_softmax(S, axis=0)[diag, diag]
    return float(-(row + col).sum() / (2 * S.shape[0]))


def _refreshed(problem: StepProblem, kam: KamState):
    t_tilde = refresh_prototypes(problem.t, kam.delta_t, problem.w_t) if problem.textual_kam else problem.t
    if problem.v is None:
        return t_tilde, None
    v_tilde = refresh_prototypes(problem.v, kam.delta_v, problem.w_v) if problem.visual_kam else problem.v
    return t_tilde, v_tilde


def forward(problem: StepProblem, kam: KamState) -> Forward:
    t_tilde, v_tilde = _refreshed(problem, kam)
    z = fused_logits(problem.f, t_tilde, v_tilde, problem.alpha, problem.beta, problem.logit_scale)
    logp = log_softmax(z)
    p = np.exp(logp)
    l_pe = min(max(_entropy_from_logp(logp), 0.0), math.log(z.size))
    l_mcrl = loss_mcrl(t_tilde, v_tilde, problem.tau) if v_tilde is not None else 0.0
    total = (l_pe if problem.use_pe else 0.0) + (problem.lambda_mcrl * l_mcrl if problem.use_mcrl else 0.0)
    return Forward(t_tilde, v_tilde, z, logp, p, LossBreakdown(l_pe, l_mcrl, total))


def objective(problem: StepProblem, kam: KamState) -> float:
    return forward(problem, kam).loss.total


def _normalize_backward(grad_out: np.ndarray, base, delta, w, out: np.ndarray) -> np.ndarray:
    # d/d(delta) of normalize(base + w*delta): w * (I - o o^T) / ||u||
    u = base + w[:, None] * delta
    norms = np.linalg.norm(u, axis=1)
    radial = np.sum(out * grad_out, axis=1, keepdims=True)
    return w[:, None] * (grad_out - out * radial) / norms[:, None]


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, block: str, cls: int):
        super().__init__(f"non-finite gradient in {block} for class {cls}")
        self.block = block
        self.cls = cls


def compute_gradients(problem: StepProblem, kam: KamState, fwd: Optional[Forward] = None):
    """Return ``(LossBreakdown, GradientPair)`` for the current sample."""
    if fwd is None:
        fwd = forward(problem, kam)
    f = problem.f
    n, d = problem.t.shape
    g_tt = np.zeros((n, d))
    g_vt = np.zeros((n, d)) if fwd.v_tilde is not None else None

    if problem.use_pe:
        # dH/dz_c = -p_c (log p_c + H)
        g_z = -fwd.p * (fwd.logp + fwd.loss.l_pe)
        g_tt += problem.logit_scale * np.outer(g_z, f)
        if g_vt is not None and problem.alpha != 0:
            A = affinity(f, fwd.v_tilde, problem.beta)
            g_vt += np.outer(g_z * problem.alpha * problem.beta * A, f)

    if problem.use_mcrl and fwd.v_tilde is not None and problem.lambda_mcrl != 0:
        S = (fwd.t_tilde @ fwd.v_tilde.T) / problem.tau
        R = np.exp(log_softmax(S, axis=1))
        C = np.exp(log_softmax(S, axis=0))
        G = (R + C - 2.0 * np.eye(n)) / (2 * n)
        scale = problem.lambda_mcrl / problem.tau
        g_tt += scale * (G @ fwd.v_tilde)
        g_vt += scale * (G.T @ fwd.t_tilde)

    g_dt = np.zeros((n, d))
    g_dv = np.zeros((n, d))
    if problem.textual_kam:
        g_dt = _normalize_backward(g_tt, problem.t, kam.delta_t, np.asarray(problem.w_t, float), fwd.t_tilde)
    if problem.visual_kam and g_vt is not None:
        g_dv = _normalize_backward(g_vt, problem.v, kam.delta_v, np.asarray(problem.w_v, float), fwd.v_tilde)

    for name, g in (("delta_t", g_dt), ("delta_v", g_dv)):
        bad = np.argwhere(~np.isfinite(g))
        if bad.size:
            raise NonFiniteGradientError(name, int(bad[0, 0]))
    return fwd.loss, GradientPair(g_dt, g_dv)


def sgd_step(kam: KamState, g: GradientPair, learning_rate: float, textual: bool = True, visual: bool = True) -> KamState:
    return KamState(
        kam.delta_t - learning_rate * g.g_delta_t if textual else kam.delta_t.copy(),
        kam.delta_v - learning_rate * g.g_delta_v if visual else kam.delta_v.copy(),
    )


@dataclass
class Adam:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: Optional[GradientPair] = None
    _v: Optional[GradientPair] = None
    _t: int = 0

    def step(self, kam: KamState, g: GradientPair, textual: bool = True, visual: bool = True) -> KamState:
        if self._m is None:
            self._m = GradientPair(np.zeros_like(g.g_delta_t), np.zeros_like(g.g_delta_v))
            self._v = GradientPair(np.zeros_like(g.g_delta_t), np.zeros_like(g.g_delta_v))
        self._t += 1
        out = []
        for attr, enabled, delta in (("g_delta_t", textual, kam.delta_t), ("g_delta_v", visual, kam.delta_v)):
            if not enabled:
                out.append(delta.copy())
                continue
            grad = getattr(g, attr)
            m = self.beta1 * getattr(self._m, attr) + (1 - self.beta1) * grad
            v = self.beta2 * getattr(self._v, attr) + (1 - self.beta2) * grad**2
            setattr(self._m, attr, m)
            setattr(self._v, attr, v)
            m_hat = m / (1 - self.beta1**self._t)
            v_hat = v / (1 - self.beta2**self._t)
            out.append(delta - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps))
        return KamState(*out)


@dataclass
class BlockReport:
    name: str
    n_checked: int
    max_rel_error: float
    mean_rel_error: float
    flagged: bool


@dataclass
class FDReport:
    blocks: list[BlockReport]
    warnings: list[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def ok(self) -> bool:
        return not any(b.flagged for b in self.blocks)


def finite_difference_check(
    problem: StepProblem,
    kam: KamState,
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int = 200,
    rng: Optional[np.random.Generator] = None,
    grads: Optional[GradientPair] = None,
    floor: float = 1e-6,
) -> FDReport:
    """Compare analytical gradients against central differences.

    At most ``n_coords`` coordinates are probed across both blocks (all of
    them when the instance is smaller). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    warnings = []
    if h < 1e-7:
        msg = f"perturbation h={h:g} is below the floating-point noise floor"
        logger.warning(msg)
        warnings.append(msg)
    elif h > 1e-3:
        msg = f"perturbation h={h:g} is large; truncation error may dominate"
        logger.warning(msg)
        warnings.append(msg)
    if grads is None:
        _, grads = compute_gradients(problem, kam)
    rng = rng if rng is not None else np.random.default_rng(0)

    n, d = kam.delta_t.shape
    coords = [("delta_t", i) for i in range(n * d)] + [("delta_v", i) for i in range(n * d)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    errors: dict[str, list[float]] = {"delta_t": [], "delta_v": []}
    for name, flat in coords:
        analytic = getattr(grads, "g_" + name).flat[flat]
        plus, minus = kam.copy(), kam.copy()
        getattr(plus, name).flat[flat] += h
        getattr(minus, name).flat[flat] -= h
        numeric = (objective(problem, plus) - objective(problem, minus)) / (2 * h)
        errors[name].append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))

    blocks = []
    for name, errs in errors.items():
        if not errs:
            continue
        mx = float(max(errs))
        blocks.append(BlockReport(name, len(errs), mx, float(np.mean(errs)), mx > tol))
    return FDReport(blocks, warnings)


def random_problem(rng: np.random.Generator, n: int, d: int, **overrides) -> tuple[StepProblem, KamState]:
    """A small random instance with unit prototypes and moderate deltas."""

    def unit(*shape):
        x = rng.standard_normal(shape)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    f = unit(d)
    t = unit(n, d)
    v = unit(n, d)
    theta = rng.uniform(0.0, 3.0)
    tau = rng.uniform(0.1, 1.0)
    kwargs = dict(
        f=f,
        t=t,
        v=v,
        w_t=expit(-theta * (t @ f)),
        w_v=expit(-theta * (v @ f)),
        alpha=rng.uniform(0.1, 2.0),
        beta=rng.uniform(0.5, 5.0),
        tau=tau,
        lambda_mcrl=rng.uniform(0.0, 3.0),
        logit_scale=1.0 if rng.random() < 0.5 else 1.0 / tau,
    )
    kwargs.update(overrides)
    scale = 0.2 / math.sqrt(d)
    kam = KamState(rng.standard_normal((n, d)) * scale, rng.standard_normal((n, d)) * scale)
    return StepProblem(**kwargs), kam
