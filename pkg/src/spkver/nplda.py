"""Discriminative quadratic pair scorer initialized from generative PLDA.

Score form for a pair (e, t):

    s(e, t) = e^T L t + e^T G e + t^T G t + c^T (e + t) + k

with L used symmetrized, so the score is symmetric in its arguments.
Initialization expands the two-covariance log-likelihood ratio into
(L, G, c, k) exactly; training is plain full-batch gradient descent on a
differentiable detection-cost surrogate over same-phrase pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .backend import PldaModel, _logdet_and_chol
from .core import NumericalError
from .metrics import DcfParams, min_dcf_from_arrays


@dataclass(frozen=True, eq=False)
class NpldaParams:
    lam: np.ndarray  # (D, D) cross term
    gamma: np.ndarray  # (D, D) self term, symmetric
    c: np.ndarray  # (D,)
    k: float

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(gamma))
                and np.all(np.isfinite(c)) and np.isfinite(self.k)):
            raise ValueError("non-finite NPLDA parameters")
        if not np.allclose(gamma, gamma.T, atol=1e-10):
            raise ValueError("gamma must be symmetric")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "k", float(self.k))

    @property
    def dim(self) -> int:
        return int(self.c.shape[0])


@dataclass(frozen=True)
class NpldaTrainConfig:
    learning_rate: float = 5e-5
    epochs: int = 5
    alpha: float = 10.0  # sigmoid sharpness of the soft detection cost
    dcf: DcfParams = field(default_factory=DcfParams)
    theta: Optional[float] = None  # None: init at the generative minDCF threshold

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def init_from_plda(model: PldaModel) -> NpldaParams:
    """Expand the generative LLR into quadratic parameters, exactly.

    With T = Sigma_b + Sigma_w and Schur complement S = T - B T^{-1} B:
    L = S^{-1} B T^{-1}, G = (T^{-1} - S^{-1}) / 2, c = -(L + 2G) mu,
    k = (logdet T - logdet S) / 2 - mu^T c.
    """
    b = model.sigma_b
    t_cov = b + model.sigma_w
    try:
        t_inv = np.linalg.inv(t_cov)
        schur = t_cov - b @ t_inv @ b
        s_inv = np.linalg.inv(schur)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"non-invertible PLDA covariances: {exc}") from exc
    ldet_t, _ = _logdet_and_chol(t_cov)
    ldet_s, _ = _logdet_and_chol(schur)
    lam = s_inv @ b @ t_inv
    lam = 0.5 * (lam + lam.T)
    gamma = 0.5 * (t_inv - s_inv)
    gamma = 0.5 * (gamma + gamma.T)
    c = -(lam + 2.0 * gamma) @ model.mu
    k = 0.5 * (ldet_t - ldet_s) - float(model.mu @ c)
    return NpldaParams(lam=lam, gamma=gamma, c=c, k=k)


def nplda_scores(params: NpldaParams, e: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the quadratic score for row-aligned pair batches."""
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    if e.shape != t.shape or e.shape[1] != params.dim:
        raise ValueError("pair batch shape mismatch with NPLDA parameters")
    lam_sym = 0.5 * (params.lam + params.lam.T)
    cross = np.sum((e @ lam_sym) * t, axis=1)
    self_e = np.sum((e @ params.gamma) * e, axis=1)
    self_t = np.sum((t @ params.gamma) * t, axis=1)
    lin = (e + t) @ params.c
    return cross + self_e + self_t + lin + params.k


def nplda_score(params: NpldaParams, e: np.ndarray, t: np.ndarray) -> float:
    return float(nplda_scores(params, e, t)[0])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_detcost(
    scores: np.ndarray,
    labels: np.ndarray,
    theta: float,
    alpha: float,
    cost_params: DcfParams = DcfParams(),
) -> Tuple[float, np.ndarray, float]:
    """Differentiable normalized detection cost.

    P_miss and P_fa are replaced by sigmoid-smoothed counts with sharpness
    alpha around the threshold theta. Returns (loss, d_loss/d_scores,
    d_loss/d_theta); the gradients are exact.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_tar = int(labels.sum())
    n_non = int((~labels).sum())
    if n_tar == 0 or n_non == 0:
        raise ValueError("soft_detcost needs both target and nontarget scores")
    w_miss = cost_params.c_miss * cost_params.p_target
    w_fa = cost_params.c_fa * (1.0 - cost_params.p_target)
    denom = min(w_miss, w_fa)

    z_miss = alpha * (theta - scores[labels])
    z_fa = alpha * (scores[~labels] - theta)
    sig_miss = _sigmoid(z_miss)
    sig_fa = _sigmoid(z_fa)
    loss = (w_miss * float(sig_miss.mean()) + w_fa * float(sig_fa.mean())) / denom

    d_scores = np.zeros_like(scores)
    d_scores[labels] = -w_miss * alpha * sig_miss * (1.0 - sig_miss) / (n_tar * denom)
    d_scores[~labels] = w_fa * alpha * sig_fa * (1.0 - sig_fa) / (n_non * denom)
    d_theta = (
        w_miss * alpha * float((sig_miss * (1.0 - sig_miss)).mean())
        - w_fa * alpha * float((sig_fa * (1.0 - sig_fa)).mean())
    ) / denom
    return loss, d_scores, d_theta


@dataclass(frozen=True)
class NpldaTrainResult:
    params: NpldaParams
    theta: float
    loss_trace: tuple  # soft cost before training and after each epoch


def train_nplda(
    params: NpldaParams,
    enroll_vecs: np.ndarray,
    test_vecs: np.ndarray,
    labels: Sequence[bool],
    enroll_phrases: Sequence,
    test_phrases: Sequence,
    config: NpldaTrainConfig = NpldaTrainConfig(),
) -> NpldaTrainResult:
    """Full-batch gradient descent on the soft detection cost.

    Every training pair must be same-phrase; a violating pair aborts before
    any update. theta is learned jointly, starting (by default) from the
    threshold that minimizes the generative minDCF on the initial scores.
    """
    e = np.atleast_2d(np.asarray(enroll_vecs, dtype=np.float64))
    t = np.atleast_2d(np.asarray(test_vecs, dtype=np.float64))
    lab = np.asarray(labels, dtype=bool)
    for i, (pe, pt) in enumerate(zip(enroll_phrases, test_phrases)):
        if pe != pt:
            raise ValueError(f"same-phrase constraint violated by training pair {i}")
    if lab.all() or not lab.any():
        raise ValueError("training pairs must include both classes")

    lam = params.lam.copy()
    gamma = params.gamma.copy()
    c = params.c.copy()
    k = params.k

    def score_now() -> np.ndarray:
        return nplda_scores(NpldaParams(lam, gamma, c, k), e, t)

    scores = score_now()
    if config.theta is not None:
        theta = float(config.theta)
    else:
        _, theta = min_dcf_from_arrays(scores[lab], scores[~lab], config.dcf)
        if not np.isfinite(theta):
            theta = float(np.median(scores))

    loss0, _, _ = soft_detcost(scores, lab, theta, config.alpha, config.dcf)
    trace = [loss0]
    lr = config.learning_rate
    for _ in range(config.epochs):
        scores = score_now()
        _, d_scores, d_theta = soft_detcost(scores, lab, theta, config.alpha, config.dcf)
        # d score / d params, accumulated over the batch
        de = d_scores[:, None] * e
        dt = d_scores[:, None] * t
        d_lam = 0.5 * (de.T @ t + dt.T @ e)
        d_gamma = de.T @ e + dt.T @ t
        d_gamma = 0.5 * (d_gamma + d_gamma.T)
        d_c = (de + dt).sum(axis=0)
        d_k = float(d_scores.sum())
        lam -= lr * d_lam
        gamma -= lr * d_gamma
        c -= lr * d_c
        k -= lr * d_k
        theta -= lr * d_theta
        loss, _, _ = soft_detcost(score_now(), lab, theta, config.alpha, config.dcf)
        trace.append(loss)

    return NpldaTrainResult(
        params=NpldaParams(lam=lam, gamma=gamma, c=c, k=k),
        theta=theta,
        loss_trace=tuple(trace),
    )
