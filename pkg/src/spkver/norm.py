"""Adaptive symmetric score normalization and the embedding-space language
identifier that supplies test-utterance language labels.

The normalized score is

    (s - mu_t) / sigma_t + (s - mu_e) / sigma_e

with each (mu, sigma) taken over the anchor's top-N cohort scores. The
language-dependent variant restricts the enroll-side cohort to the test
utterance's language; the test-side cohort is never language-filtered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .core import Embedding, Language, NumericalError, UttMeta

Scorer = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True, eq=False)
class CohortEntry:
    utt_id: str
    vec: np.ndarray
    language: Language


@dataclass(frozen=True)
class Cohort:
    entries: tuple

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("cohort must be non-empty")
        dims = {e.vec.shape[0] for e in entries}
        if len(dims) != 1:
            raise ValueError("cohort embeddings must share one dimension")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def filtered(self, language: Optional[Language]):
        if language is None:
            return self.entries
        return tuple(e for e in self.entries if e.language is language)


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float
    n_top: int


def build_cohort(embeddings: Sequence[Embedding], metas: Sequence[UttMeta]) -> Cohort:
    """One averaged embedding per (speaker, language) pair.

    Averaging per language keeps each entry's language tag well defined,
    which the language-dependent filter needs.
    """
    meta_by_utt = {m.utt_id: m for m in metas}
    groups: Dict[tuple, list] = {}
    for emb in embeddings:
        meta = meta_by_utt.get(emb.utt_id)
        if meta is None:
            raise ValueError(f"no metadata for cohort utterance {emb.utt_id}")
        groups.setdefault((meta.speaker_id, meta.language), []).append(emb.vec)
    entries = [
        CohortEntry(
            utt_id=f"{spk}:{lang.value}",
            vec=np.mean(vecs, axis=0),
            language=lang,
        )
        for (spk, lang), vecs in groups.items()
    ]
    return Cohort(tuple(entries))


def cohort_stats(
    anchor: np.ndarray,
    cohort: Cohort,
    scorer: Scorer,
    n_top: int,
    language_filter: Optional[Language] = None,
) -> NormStats:
    """Mean / population standard deviation of the anchor's top-N cohort scores."""
    if n_top < 2:
        raise ValueError("n_top must be >= 2")
    entries = cohort.filtered(language_filter)
    if len(entries) < n_top:
        raise ValueError(
            f"cohort has {len(entries)} usable entries after filtering, need {n_top}"
        )
    scores = np.asarray([scorer(anchor, e.vec) for e in entries], dtype=np.float64)
    top = np.sort(scores)[-n_top:]
    mu = float(top.mean())
    sigma = float(top.std())  # population divisor
    if sigma == 0.0:
        raise NumericalError(f"zero variance among top cohort scores (mu={mu})")
    return NormStats(mu=mu, sigma=sigma, n_top=n_top)


def as_norm(raw_score: float, enroll_stats: NormStats, test_stats: NormStats) -> float:
    if enroll_stats.sigma <= 0.0 or test_stats.sigma <= 0.0:
        raise NumericalError("normalization stats need positive sigma")
    return (raw_score - test_stats.mu) / test_stats.sigma + (
        raw_score - enroll_stats.mu
    ) / enroll_stats.sigma


def language_dependent_as_norm(
    raw_score: float,
    enroll_vec: np.ndarray,
    test_vec: np.ndarray,
    cohort: Cohort,
    scorer: Scorer,
    n_top: int,
    test_language: Language,
) -> float:
    """AS-Norm with the enroll-side cohort restricted to the test language."""
    enroll_stats = cohort_stats(enroll_vec, cohort, scorer, n_top,
                                language_filter=test_language)
    test_stats = cohort_stats(test_vec, cohort, scorer, n_top, language_filter=None)
    return as_norm(raw_score, enroll_stats, test_stats)


def effective_n_top(n_top: int, cohort: Cohort, language_dependent: bool) -> int:
    """Clamp a configured cohort depth to what the cohort can support."""
    limit = len(cohort)
    if language_dependent:
        for lang in Language:
            subset = len(cohort.filtered(lang))
            if subset:
                limit = min(limit, subset)
    return max(2, min(n_top, limit))


# ---------------------------------------------------------------------------
# language identification on embeddings


@dataclass
class LangClassifier:
    """Multinomial logistic model over embedding space."""

    weights: np.ndarray  # (n_languages, D)
    bias: np.ndarray  # (n_languages,)
    languages: tuple = (Language.L1, Language.L2)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def train_language_id(
    embeddings: np.ndarray,
    language_labels: Sequence[Language],
    epochs: int = 200,
    lr: float = 0.5,
) -> LangClassifier:
    """Gradient-descent logistic regression from embeddings to languages.

    Parameters start at zero, so the epochs=0 classifier predicts uniform
    posteriors; training is deterministic with no randomness at all.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    languages = (Language.L1, Language.L2)
    idx = {lang: i for i, lang in enumerate(languages)}
    y = np.asarray([idx[l] for l in language_labels])
    if len(set(y.tolist())) < 2:
        raise ValueError("language-id training needs both languages")
    n, d = x.shape

    w = np.zeros((len(languages), d))
    b = np.zeros(len(languages))
    onehot = np.zeros((n, len(languages)))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        probs = _softmax(x @ w.T + b)
        delta = (probs - onehot) / n
        w -= lr * (delta.T @ x)
        b -= lr * delta.sum(axis=0)
    return LangClassifier(weights=w, bias=b, languages=languages)


def predict_language(classifier: LangClassifier, embedding: np.ndarray):
    """Argmax language plus the softmax posterior; ties go to the
    lower-indexed language."""
    vec = np.asarray(embedding, dtype=np.float64)
    if vec.shape[0] != classifier.dim:
        raise ValueError("embedding dimension does not match the classifier")
    posterior = _softmax(classifier.weights @ vec + classifier.bias)
    return classifier.languages[int(np.argmax(posterior))], posterior
