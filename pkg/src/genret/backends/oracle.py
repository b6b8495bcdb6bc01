"""Exact scorer for synthetic scenes.

Every answer is derived from the scene's closed-form caption distribution.
For a prefix p, the unsmoothed next-token probability of t is

    mass(captions extending p + [t]) / mass(captions extending p)

and the terminal probability is the mass of captions equal to p over the
mass extending p.  Multiplying the served values along a full caption
(terminal step included) therefore recovers the caption's exact emission
probability when smoothing is 0.

Additive smoothing lifts every outcome by `smoothing` and renormalizes, so
counterfactual sentences keep finite losses; a prefix no caption starts
with gets the uniform floor distribution.  The contrastive side is a
bag-of-words embedder: text maps to normalized token counts, an image to
normalized expected token frequencies under its caption distribution, which
makes it order-invariant by construction.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable

import numpy as np

from ..errors import UnknownImageError, VocabularyError
from ..world import SyntheticScene, WorldSpec, caption_process
from .base import Capabilities, ScorerBackend, TokenDistribution


class _TrieNode:
    __slots__ = ("mass", "end", "children")

    def __init__(self):
        self.mass = Fraction(0)
        self.end = Fraction(0)
        self.children: dict[str, _TrieNode] = {}


def _build_trie(dist: dict[tuple[str, ...], Fraction]) -> _TrieNode:
    root = _TrieNode()
    for caption, p in dist.items():
        node = root
        node.mass += p
        for tok in caption:
            node = node.children.setdefault(tok, _TrieNode())
            node.mass += p
        node.end += p
    return root


class OracleBackend(ScorerBackend):
    """Ground-truth backend over registered synthetic scenes.

    Image identifiers are scene ids.  The region argument is accepted and
    ignored: the oracle conditions on the whole scene.  Scene registration
    precomputes the caption trie and the image embedding; queries afterwards
    are read-only, hence concurrent-safe.
    """

    def __init__(
        self,
        spec: WorldSpec,
        scenes: Iterable[SyntheticScene] = (),
        smoothing: float = 1e-6,
    ):
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.spec = spec
        self.smoothing = float(smoothing)
        self.vocab_order: tuple[str, ...] = spec.vocabulary()
        self.vocabulary = frozenset(self.vocab_order)
        self.capabilities = Capabilities(
            has_generative=True,
            has_contrastive=True,
            has_terminal_token=True,
            concurrent_safe=True,
        )
        self._index = {t: i for i, t in enumerate(self.vocab_order)}
        self._tries: dict[str, _TrieNode] = {}
        self._image_vecs: dict[str, np.ndarray] = {}
        for sc in scenes:
            self.register_scene(sc)

    def register_scene(self, scene: SyntheticScene) -> None:
        dist = caption_process(scene)
        self._tries[scene.scene_id] = _build_trie(dist)
        freq = np.zeros(len(self.vocab_order))
        for caption, p in dist.items():
            fp = float(p)
            for tok in caption:
                freq[self._index[tok]] += fp
        norm = float(np.linalg.norm(freq))
        self._image_vecs[scene.scene_id] = freq / norm

    def scene_ids(self) -> tuple[str, ...]:
        return tuple(self._tries)

    # -- generative ---------------------------------------------------

    def next_token_distribution(self, image_id, region, prefix) -> TokenDistribution:
        trie = self._tries.get(image_id)
        if trie is None:
            raise UnknownImageError(f"no scene registered under {image_id!r}")
        node = trie
        for tok in prefix:
            node = node.children.get(tok)
            if node is None or node.mass == 0:
                break
        n_outcomes = len(self.vocab_order) + 1  # tokens plus terminal
        if node is None or node.mass == 0:
            # no caption starts with this prefix: uniform floor
            u = 1.0 / n_outcomes
            return TokenDistribution(
                probs={t: u for t in self.vocab_order}, terminal_p=u
            )
        lam = self.smoothing
        denom = 1.0 + n_outcomes * lam
        probs = {}
        for tok in self.vocab_order:
            child = node.children.get(tok)
            c = float(child.mass / node.mass) if child is not None else 0.0
            probs[tok] = (c + lam) / denom
        terminal = (float(node.end / node.mass) + lam) / denom
        return TokenDistribution(probs=probs, terminal_p=terminal)

    # -- contrastive ---------------------------------------------------

    def embed_image(self, image_id, region) -> np.ndarray:
        vec = self._image_vecs.get(image_id)
        if vec is None:
            raise UnknownImageError(f"no scene registered under {image_id!r}")
        return vec.copy()

    def embed_text(self, tokens) -> np.ndarray:
        if not tokens:
            raise ValueError("cannot embed an empty sentence")
        counts = np.zeros(len(self.vocab_order))
        for tok in tokens:
            idx = self._index.get(tok)
            if idx is None:
                raise VocabularyError(f"token {tok!r} not in oracle vocabulary")
            counts[idx] += 1.0
        return counts / float(np.linalg.norm(counts))
