from .base import Capabilities, ScorerBackend, SentenceScoreSource, TokenDistribution
from .cached import (
    CachedScoreBackend,
    read_score_cache,
    scored_to_records,
    write_score_cache,
)
from .loopback import LoopbackServer
from .mock import UniformBackend
from .oracle import OracleBackend
from .remote import RemoteBackend

__all__ = [
    "Capabilities",
    "ScorerBackend",
    "SentenceScoreSource",
    "TokenDistribution",
    "CachedScoreBackend",
    "read_score_cache",
    "scored_to_records",
    "write_score_cache",
    "LoopbackServer",
    "UniformBackend",
    "OracleBackend",
    "RemoteBackend",
]
