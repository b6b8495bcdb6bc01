"""Backend interfaces the scoring engine runs against.

A ScorerBackend answers token-level questions: the next-token distribution
under an image-conditioned prefix, and unit-norm embeddings for the
contrastive path.  A SentenceScoreSource answers at sentence granularity
(ready-made losses); score-cache replay lives there.  The engine accepts
either.

Capabilities describe what a backend can do, and the engine refuses
mismatched requests up front instead of failing mid-batch:

- has_generative: next_token_distribution works
- has_contrastive: embed_image / embed_text work
- has_terminal_token: distributions carry an end-of-sentence probability,
  and generative losses get a terminal term
- concurrent_safe: queries may run concurrently; otherwise the engine
  serializes access behind a lock
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import Method
from ..errors import ConfigurationError


@dataclass(frozen=True)
class Capabilities:
    has_generative: bool = False
    has_contrastive: bool = False
    has_terminal_token: bool = False
    concurrent_safe: bool = True


@dataclass(frozen=True)
class TokenDistribution:
    """One next-token distribution; terminal_p is the end-of-sentence mass."""

    probs: dict[str, float]
    terminal_p: float | None = None

    def total(self) -> float:
        return float(sum(self.probs.values())) + (self.terminal_p or 0.0)


Region = "tuple[float, float, float, float] | None"


class ScorerBackend(ABC):
    """Token-level scorer. Region is forwarded opaquely; backends that see
    whole images may ignore it."""

    capabilities: Capabilities = Capabilities()
    #: finite token set, or None when the backend cannot enumerate it
    vocabulary: frozenset[str] | None = None

    @abstractmethod
    def next_token_distribution(
        self, image_id: str, region, prefix: tuple[str, ...]
    ) -> TokenDistribution:
        ...

    def next_token_distributions(
        self, image_id: str, region, prefixes: Sequence[tuple[str, ...]]
    ) -> list[TokenDistribution]:
        """Batch form; backends with per-call overhead should override."""
        return [self.next_token_distribution(image_id, region, p) for p in prefixes]

    def embed_image(self, image_id: str, region) -> np.ndarray:
        raise ConfigurationError(
            f"{type(self).__name__} has no contrastive support"
        )

    def embed_text(self, tokens: tuple[str, ...]) -> np.ndarray:
        raise ConfigurationError(
            f"{type(self).__name__} has no contrastive support"
        )


class SentenceScoreSource(ABC):
    """Sentence-level scorer: returns (loss, per_token or None) directly."""

    @abstractmethod
    def sentence_score(
        self,
        image_id: str,
        region,
        anchor: str,
        template_name: str,
        method: Method,
        candidate: str,
    ) -> tuple[float, tuple[float, ...] | None]:
        ...
