"""Trivial backends for tests and worked examples."""

from __future__ import annotations

from .base import Capabilities, ScorerBackend, TokenDistribution


class UniformBackend(ScorerBackend):
    """Assigns every vocabulary token the same probability at every step.

    A sentence of n tokens scores n * log(V); with include_terminal the
    distribution spreads over V + 1 outcomes instead.
    """

    def __init__(self, vocabulary, include_terminal: bool = False):
        self.vocab_order = tuple(sorted(set(vocabulary)))
        if not self.vocab_order:
            raise ValueError("vocabulary is empty")
        self.vocabulary = frozenset(self.vocab_order)
        self.include_terminal = include_terminal
        self.capabilities = Capabilities(
            has_generative=True,
            has_contrastive=False,
            has_terminal_token=include_terminal,
            concurrent_safe=True,
        )

    def next_token_distribution(self, image_id, region, prefix) -> TokenDistribution:
        n = len(self.vocab_order) + (1 if self.include_terminal else 0)
        u = 1.0 / n
        return TokenDistribution(
            probs={t: u for t in self.vocab_order},
            terminal_p=u if self.include_terminal else None,
        )
