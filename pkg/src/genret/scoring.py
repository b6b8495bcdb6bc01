"""Scoring engine: turn (image, sentence) pairs into retrieval losses.

Two losses, both in nats, both "lower is better":

- generative: the cross-entropy of generating the sentence token by token
  under an image-conditioned prefix model, the sum of -log p(token | image,
  prefix) over positions, plus a terminal term when the backend declares
  one.  Position 0 conditions on the image alone.
- contrastive: the euclidean distance between unit-norm image and sentence
  embeddings, which lives in [0, 2] and decreases monotonically in cosine
  similarity.

Summed log probabilities favor shorter sentences; the length_normalize flag
divides the generative value by token count and is off by default.  Note the
cost asymmetry: generative scoring spends one decoding step per token where
contrastive spends a single encoding per sentence.

Candidates are ranked by ascending score with ties broken by candidate
index, so rankings are deterministic and invariant under any per-instance
monotone transform of the scores.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .backends.base import ScorerBackend, SentenceScoreSource, TokenDistribution
from .backends.cached import read_score_cache, write_score_cache  # noqa: F401  (re-export)
from .core import AnchorKind, Method, RankingInstance, ScoredInstance, Slot, Template, render
from .errors import (
    BatchScoringError,
    ConfigurationError,
    InfiniteLossError,
    NormalizationError,
    VocabularyError,
)

_NORM_TOL = 1e-6


@dataclass(frozen=True)
class GenerativeLoss:
    """Summed token losses; per_token[i] is position i's term, and the
    terminal term (when present) is the final entry."""

    value: float
    per_token: tuple[float, ...]


@dataclass(frozen=True)
class ContrastiveLoss:
    value: float


def ranking_order(scores: Sequence[float]) -> tuple[int, ...]:
    """Candidate indices, best first: ascending score, index-stable ties."""
    return tuple(sorted(range(len(scores)), key=lambda i: (scores[i], i)))


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigurationError(message)


def _check_vocabulary(backend: ScorerBackend, sentence: tuple[str, ...]):
    if backend.vocabulary is not None:
        unknown = [t for t in sentence if t not in backend.vocabulary]
        if unknown:
            raise VocabularyError(f"tokens not in backend vocabulary: {unknown}")


def _check_distribution(dist: TokenDistribution, has_terminal: bool, prefix):
    total = dist.total()
    if abs(total - 1.0) > _NORM_TOL:
        raise NormalizationError(
            f"distribution for prefix {list(prefix)} sums to {total:.9f}"
        )
    if has_terminal and dist.terminal_p is None:
        raise NormalizationError(
            f"backend declares a terminal token but served none for {list(prefix)}"
        )
    if any(p < 0 for p in dist.probs.values()) or (dist.terminal_p or 0.0) < 0:
        raise NormalizationError(f"negative probability for prefix {list(prefix)}")


def _neg_log(p: float, what: str) -> float:
    if p <= 0.0:
        raise InfiniteLossError(f"zero probability for {what}")
    return -math.log(p)


def _distributions_for(
    backend: ScorerBackend,
    image_id: str,
    region,
    sentences: Sequence[tuple[str, ...]],
) -> dict[tuple[str, ...], TokenDistribution]:
    """Fetch every prefix distribution the sentences need, deduplicated.

    Sentences sharing a prefix share the fetched distribution, which is both
    the batching win for remote backends and the shared-prefix reuse that
    makes template families cheap to score.
    """
    has_terminal = backend.capabilities.has_terminal_token
    needed: dict[tuple[str, ...], None] = {}
    for s in sentences:
        last = len(s) + 1 if has_terminal else len(s)
        for i in range(last):
            needed.setdefault(s[:i], None)
    prefixes = list(needed)
    dists = backend.next_token_distributions(image_id, region, prefixes)
    out = {}
    for prefix, dist in zip(prefixes, dists):
        _check_distribution(dist, has_terminal, prefix)
        out[prefix] = dist
    return out


def _assemble_loss(
    sentence: tuple[str, ...],
    dists: dict[tuple[str, ...], TokenDistribution],
    has_terminal: bool,
) -> GenerativeLoss:
    per_token = []
    for i, tok in enumerate(sentence):
        dist = dists[sentence[:i]]
        p = dist.probs.get(tok)
        if p is None:
            raise VocabularyError(f"token {tok!r} missing from served distribution")
        per_token.append(_neg_log(p, f"token {tok!r} at position {i}"))
    if has_terminal:
        per_token.append(
            _neg_log(dists[sentence].terminal_p, "the terminal token")
        )
    return GenerativeLoss(value=float(sum(per_token)), per_token=tuple(per_token))


def generative_loss(
    backend: ScorerBackend,
    image_id: str,
    region,
    sentence: Sequence[str],
) -> GenerativeLoss:
    """Cross-entropy of one sentence under the backend's prefix model."""
    sentence = tuple(sentence)
    if not sentence:
        raise ValueError("cannot score an empty sentence")
    _require(backend.capabilities.has_generative, "backend has no generative support")
    _check_vocabulary(backend, sentence)
    dists = _distributions_for(backend, image_id, region, [sentence])
    return _assemble_loss(sentence, dists, backend.capabilities.has_terminal_token)


def _check_embedding(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > _NORM_TOL:
        raise NormalizationError(f"{what} embedding has norm {norm:.9f}, expected 1")
    return vec


def contrastive_loss(
    backend: ScorerBackend,
    image_id: str,
    region,
    sentence: Sequence[str],
) -> ContrastiveLoss:
    """Euclidean distance between unit-norm image and sentence embeddings."""
    sentence = tuple(sentence)
    if not sentence:
        raise ValueError("cannot score an empty sentence")
    _require(backend.capabilities.has_contrastive, "backend has no contrastive support")
    _check_vocabulary(backend, sentence)
    f = _check_embedding(backend.embed_image(image_id, region), "image")
    g = _check_embedding(backend.embed_text(sentence), "text")
    return ContrastiveLoss(value=float(np.linalg.norm(f - g)))


def _candidate_sentence(
    instance: RankingInstance, template: Template, candidate: str
) -> tuple[str, ...]:
    if instance.anchor_kind is AnchorKind.OBJECT:
        return render(template, attribute=candidate, obj=instance.anchor)
    return render(template, attribute=instance.anchor, obj=candidate)


def rank_instance(
    backend,
    instance: RankingInstance,
    template: Template,
    method: Method,
    length_normalize: bool = False,
) -> ScoredInstance:
    """Score every candidate of one instance.

    The template must contain the slot of the ranked kind (attribute slot
    for object anchors and vice versa).  A SentenceScoreSource (cache
    replay) is consulted by key and returns scores exactly as recorded,
    length_normalize included; token-level backends compute fresh.
    """
    method = Method(method)
    ranked_slot = (
        Slot.ATTRIBUTE if instance.anchor_kind is AnchorKind.OBJECT else Slot.OBJECT
    )
    _require(
        ranked_slot in template.slots,
        f"template {template.name!r} has no {{{ranked_slot.value}}} slot to rank "
        f"{instance.anchor_kind.ranked.value} candidates",
    )

    if isinstance(backend, SentenceScoreSource):
        scores = []
        rows = []
        for cand in instance.candidates:
            loss, per = backend.sentence_score(
                instance.image_id, instance.region, instance.anchor,
                template.name, method, cand,
            )
            scores.append(loss)
            rows.append(per)
        per_token = tuple(rows) if method is Method.GENERATIVE else None
        if per_token is not None and any(r is None for r in per_token):
            per_token = None
        return ScoredInstance(
            instance=instance,
            template_name=template.name,
            method=method,
            scores=tuple(scores),
            per_token=per_token,
        )

    sentences = [_candidate_sentence(instance, template, c) for c in instance.candidates]
    if method is Method.GENERATIVE:
        _require(backend.capabilities.has_generative, "backend has no generative support")
        for s in sentences:
            _check_vocabulary(backend, s)
        dists = _distributions_for(backend, instance.image_id, instance.region, sentences)
        has_terminal = backend.capabilities.has_terminal_token
        losses = [_assemble_loss(s, dists, has_terminal) for s in sentences]
        scores = tuple(
            l.value / len(s) if length_normalize else l.value
            for l, s in zip(losses, sentences)
        )
        return ScoredInstance(
            instance=instance,
            template_name=template.name,
            method=method,
            scores=scores,
            per_token=tuple(l.per_token for l in losses),
        )

    _require(backend.capabilities.has_contrastive, "backend has no contrastive support")
    for s in sentences:
        _check_vocabulary(backend, s)
    f = _check_embedding(
        backend.embed_image(instance.image_id, instance.region), "image"
    )
    scores = []
    for s in sentences:
        g = _check_embedding(backend.embed_text(s), "text")
        scores.append(float(np.linalg.norm(f - g)))
    return ScoredInstance(
        instance=instance,
        template_name=template.name,
        method=method,
        scores=tuple(scores),
        per_token=None,
    )


class _SerializedBackend(ScorerBackend):
    """Mutex wrapper the engine puts around non-concurrent-safe backends."""

    def __init__(self, inner: ScorerBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.capabilities = inner.capabilities
        self.vocabulary = inner.vocabulary

    def next_token_distribution(self, image_id, region, prefix):
        with self._lock:
            return self._inner.next_token_distribution(image_id, region, prefix)

    def next_token_distributions(self, image_id, region, prefixes):
        with self._lock:
            return self._inner.next_token_distributions(image_id, region, prefixes)

    def embed_image(self, image_id, region):
        with self._lock:
            return self._inner.embed_image(image_id, region)

    def embed_text(self, tokens):
        with self._lock:
            return self._inner.embed_text(tokens)


def batch_rank(
    backend,
    instances: Sequence[RankingInstance],
    template: Template,
    method: Method,
    parallelism: int = 1,
    length_normalize: bool = False,
) -> list[ScoredInstance]:
    """rank_instance over a batch, optionally across worker threads.

    Results keep input order and match sequential execution bit for bit.
    Failures do not stop the batch: after the whole batch ran, if anything
    failed a BatchScoringError is raised carrying per-instance failures and
    the completed results.
    """
    if not isinstance(parallelism, int) or parallelism < 1:
        raise ConfigurationError(f"parallelism must be a positive integer, got {parallelism}")
    if (
        parallelism > 1
        and isinstance(backend, ScorerBackend)
        and not backend.capabilities.concurrent_safe
    ):
        backend = _SerializedBackend(backend)

    def one(inst: RankingInstance) -> ScoredInstance:
        return rank_instance(backend, inst, template, method, length_normalize)

    results: list[ScoredInstance | None] = [None] * len(instances)
    failures: list[tuple[int, Exception]] = []
    if parallelism == 1:
        for i, inst in enumerate(instances):
            try:
                results[i] = one(inst)
            except Exception as exc:  # noqa: BLE001 - collected per instance
                failures.append((i, exc))
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = {i: pool.submit(one, inst) for i, inst in enumerate(instances)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append((i, exc))
    if failures:
        completed = [(i, r) for i, r in enumerate(results) if r is not None]
        raise BatchScoringError(sorted(failures), completed)
    return [r for r in results if r is not None]
