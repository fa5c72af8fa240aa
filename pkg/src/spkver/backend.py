"""Generative scoring: cosine similarity and two-covariance PLDA.

The PLDA model is x = mu + y + eps with speaker factor y ~ N(0, Sigma_b)
and residual eps ~ N(0, Sigma_w). Training is EM on (Sigma_b, Sigma_w)
with mu fixed at the grand mean; the verification score is the closed-form
log-likelihood ratio of same-speaker vs different-speaker hypotheses,
evaluated through the stacked joint Gaussian of the pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class PldaModel:
    mu: np.ndarray  # (D,)
    sigma_b: np.ndarray  # (D, D), symmetric PSD
    sigma_w: np.ndarray  # (D, D), symmetric PD

    def __post_init__(self) -> None:
        for name in ("mu", "sigma_b", "sigma_w"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.sigma_b.shape != self.sigma_w.shape or self.mu.shape[0] != self.sigma_b.shape[0]:
            raise ValueError("inconsistent model shapes")
        for name in ("sigma_b", "sigma_w"):
            arr = getattr(self, name)
            if not np.allclose(arr, arr.T, atol=1e-10):
                raise ValueError(f"{name} must be symmetric")

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])


@dataclass(frozen=True)
class PhrasePldaBank:
    """One independently trained PLDA model per phrase."""

    models: dict  # phrase_id -> PldaModel


def cosine_score(e: np.ndarray, t: np.ndarray) -> float:
    """Inner product over the product of norms, in [-1, 1]."""
    e = np.asarray(e, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"dimension mismatch: {e.shape} vs {t.shape}")
    ne = float(np.linalg.norm(e))
    nt = float(np.linalg.norm(t))
    if ne == 0.0 or nt == 0.0:
        raise NumericalError("cosine of a zero vector is undefined")
    return float(np.dot(e, t) / (ne * nt))


def _logdet_and_chol(mat: np.ndarray) -> Tuple[float, np.ndarray]:
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance not positive definite: {exc}") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol)))), chol

def _chol_quad(chol: np.ndarray, x: np.ndarray) -> np.ndarray:
    """x^T M^{-1} x for M = chol @ chol.T, batched over rows of x."""
    z = np.linalg.solve(chol, x.T)
    return np.sum(z * z, axis=0)


def _marginal_loglik(x: np.ndarray, labels: np.ndarray,
                     sigma_b: np.ndarray, sigma_w: np.ndarray, mu: np.ndarray) -> float:
    """Observed-data log-likelihood of the two-covariance model.

    Per speaker with n utterances the joint covariance is
    I_n (x) Sigma_w + 1_n 1_n^T (x) Sigma_b, whose determinant and inverse
    have closed forms; this evaluates the marginal exactly without building
    the stacked matrix.
    """
    d = x.shape[1]
    xc = x - mu
    ldet_w, chol_w = _logdet_and_chol(sigma_w)
    w_inv = np.linalg.inv(sigma_w)
    total = 0.0
    for spk in np.unique(labels):
        rows = xc[labels == spk]
        n = rows.shape[0]
        f = rows.sum(axis=0)
        ldet_m, chol_m = _logdet_and_chol(sigma_w + n * sigma_b)
        quad = float(np.sum(_chol_quad(chol_w, rows)))
        # coupling term: f^T (Sigma_w + n Sigma_b)^{-1} Sigma_b Sigma_w^{-1} f
        coup = float(f @ np.linalg.solve(sigma_w + n * sigma_b, sigma_b @ w_inv @ f))
        total += -0.5 * (n * d * LOG_2PI + (n - 1) * ldet_w + ldet_m + quad - coup)
    return total


def plda_em_train(
    embeddings: np.ndarray,
    speaker_labels: Sequence,
    iters: int = 20,
    ridge: Optional[float] = None,
) -> Tuple[PldaModel, list]:
    """EM for the two-covariance model; returns (model, log-likelihood trace).

    The trace holds the observed-data log-likelihood of the initial model
    and of the model after each iteration; EM guarantees it never decreases
    (up to the small ridge added for conditioning; default 1e-6*trace/D).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(speaker_labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ValueError("embeddings must be (N, D) with one label per row")
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2:
        raise ValueError("PLDA training needs at least 2 speakers")
    if not np.any(counts >= 2):
        raise ValueError("PLDA training needs a speaker with >= 2 utterances")
    n, d = x.shape

    mu = x.mean(axis=0)
    xc = x - mu
    total_cov = (xc.T @ xc) / n
    if float(np.trace(total_cov)) < 1e-12 * d:
        raise NumericalError("degenerate data: zero total scatter")

    def _ridge_for(cov: np.ndarray) -> float:
        if ridge is not None:
            return float(ridge)
        return 1e-6 * float(np.trace(cov)) / d

    sigma_b = 0.5 * total_cov
    sigma_w = 0.5 * total_cov
    trace = [_marginal_loglik(x, labels, sigma_b, sigma_w, mu)]

    groups = [(xc[labels == spk], int(cnt)) for spk, cnt in zip(uniq, counts)]
    for _ in range(iters):
        b_inv = np.linalg.inv(sigma_b)
        w_inv = np.linalg.inv(sigma_w)
        acc_b = np.zeros((d, d))
        acc_w = np.zeros((d, d))
        for rows, cnt in groups:
            post_cov = np.linalg.inv(b_inv + cnt * w_inv)
            post_mean = post_cov @ (w_inv @ rows.sum(axis=0))
            acc_b += post_cov + np.outer(post_mean, post_mean)
            resid = rows - post_mean
            acc_w += resid.T @ resid + cnt * post_cov
        sigma_b = acc_b / len(groups)
        sigma_w = acc_w / n
        sigma_b = 0.5 * (sigma_b + sigma_b.T) + _ridge_for(sigma_b) * np.eye(d)
        sigma_w = 0.5 * (sigma_w + sigma_w.T) + _ridge_for(sigma_w) * np.eye(d)
        trace.append(_marginal_loglik(x, labels, sigma_b, sigma_w, mu))

    return PldaModel(mu=mu, sigma_b=sigma_b, sigma_w=sigma_w), trace


class PldaScorer:
    """Log-likelihood-ratio scorer with the pair factorizations precomputed.

    Same-speaker hypothesis: the stacked pair [e; t] is jointly Gaussian
    with covariance [[T, B], [B, T]], T = Sigma_b + Sigma_w. Different
    speakers: two independent N(mu, T) draws.
    """

    def __init__(self, model: PldaModel):
        self.model = model
        d = model.dim
        t_cov = model.sigma_b + model.sigma_w
        joint = np.block([[t_cov, model.sigma_b], [model.sigma_b, t_cov]])
        self._ldet_t, self._chol_t = _logdet_and_chol(t_cov)
        self._ldet_j, self._chol_j = _logdet_and_chol(joint)
        self._d = d

    def score(self, e: np.ndarray, t: np.ndarray) -> float:
        return float(self.score_many(np.atleast_2d(e), np.atleast_2d(t))[0])

    def score_many(self, e: np.ndarray, t: np.ndarray) -> np.ndarray:
        e = np.atleast_2d(np.asarray(e, dtype=np.float64)) - self.model.mu
        t = np.atleast_2d(np.asarray(t, dtype=np.float64)) - self.model.mu
        if e.shape[1] != self._d or t.shape[1] != self._d:
            raise ValueError("dimension mismatch with PLDA model")
        stacked = np.concatenate([e, t], axis=1)
        log_same = -0.5 * (2 * self._d * LOG_2PI + self._ldet_j + _chol_quad(self._chol_j, stacked))
        log_diff = -0.5 * (
            2 * self._d * LOG_2PI
            + 2 * self._ldet_t
            + _chol_quad(self._chol_t, e)
            + _chol_quad(self._chol_t, t)
        )
        return log_same - log_diff


def plda_llr_score(model: PldaModel, e: np.ndarray, t: np.ndarray) -> float:
    """log p(e,t | same speaker) - log p(e,t | different speakers)."""
    return PldaScorer(model).score(e, t)


def train_phrase_plda_bank(
    embeddings: np.ndarray,
    speaker_labels: Sequence,
    phrase_labels: Sequence,
    iters: int = 20,
) -> Tuple[PhrasePldaBank, dict]:
    """Train one PLDA model per phrase on that phrase's subset.

    Phrases with insufficient data are reported in the returned failure map
    (phrase_id -> reason) instead of aborting the bank.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    spk = np.asarray(speaker_labels)
    phr = np.asarray(phrase_labels)
    models: Dict[str, PldaModel] = {}
    failures: Dict[str, str] = {}
    for phrase in dict.fromkeys(phr.tolist()):
        mask = phr == phrase
        try:
            model, _ = plda_em_train(x[mask], spk[mask], iters=iters)
            models[phrase] = model
        except (ValueError, NumericalError) as exc:
            failures[phrase] = str(exc)
    return PhrasePldaBank(models=models), failures
