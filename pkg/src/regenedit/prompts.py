"""Deterministic toy text embedding and edit directions.

Tokens map to fixed unit-norm vectors derived from a seeded hash of the
token string, so embeddings are bitwise-reproducible everywhere.  Edit
directions are mean differences of pooled sentence vectors between two
banks of paired sentences; the prompt ladder adds that direction at
increasing weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .rng import SeededRng, derive_seed

EMBED_DIM = 16
VOCAB_SEED = 7340121

VOCABULARY = (
    "a", "an", "the", "this", "that", "one", "it", "is", "of", "on",
    "with", "and", "drawn", "shown", "centered", "image", "picture",
    "drawing", "shape", "figure", "object", "small", "large", "tiny",
    "big", "round", "curved", "cornered", "edged", "flat", "plain",
    "filled", "solid", "striped", "banded", "lined", "smooth",
    "patterned", "disc", "circle", "square", "block", "box", "ring",
    "dot", "grid", "dark", "bright", "light", "gray", "white", "black",
    "background", "canvas", "center", "simple", "single", "texture",
    "surface", "pattern", "stripes", "bars",
)

_TOKEN_CACHE: dict = {}


def token_vector(token: str) -> np.ndarray:
    """Fixed unit-norm embedding row for one vocabulary token."""
    if token not in VOCABULARY:
        raise ParameterError(f"token {token!r} is not in the toy vocabulary")
    cached = _TOKEN_CACHE.get(token)
    if cached is None:
        raw = SeededRng(derive_seed(VOCAB_SEED, "tok", token)).normal((EMBED_DIM,))
        cached = (raw / np.linalg.norm(raw.astype(np.float64))).astype(np.float32)
        _TOKEN_CACHE[token] = cached
    return cached.copy()


@dataclass(frozen=True)
class PromptEmbedding:
    tokens: tuple
    matrix: np.ndarray  # (L, EMBED_DIM) float32

    @classmethod
    def empty(cls) -> "PromptEmbedding":
        """Null conditioning: a single all-zero row."""
        return cls(tokens=(), matrix=np.zeros((1, EMBED_DIM), dtype=np.float32))

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EditDirection:
    vector: np.ndarray  # (EMBED_DIM,)
    source_label: str
    target_label: str

    @classmethod
    def zero(cls) -> "EditDirection":
        return cls(
            vector=np.zeros(EMBED_DIM, dtype=np.float32),
            source_label="",
            target_label="",
        )


@dataclass(frozen=True)
class RichPromptLadder:
    """Base prompt plus two harder variants at increasing direction weights."""

    base: PromptEmbedding
    mid: PromptEmbedding
    high: PromptEmbedding
    w_mid: float
    w_high: float


def embed_tokens(tokens: Sequence[str]) -> PromptEmbedding:
    """Stack per-token embedding rows; same token always gives the same row."""
    tokens = tuple(tokens)
    if not tokens:
        raise ParameterError("embed_tokens needs at least one token")
    matrix = np.stack([token_vector(t) for t in tokens], axis=0)
    return PromptEmbedding(tokens=tokens, matrix=matrix)


def embed_sentence(sentence: str) -> PromptEmbedding:
    return embed_tokens(sentence.strip().lower().split())


def sentence_vector(e: PromptEmbedding) -> np.ndarray:
    """Pooled sentence representation: mean of token rows."""
    return (
        np.sum(e.matrix.astype(np.float64), axis=0) / e.matrix.shape[0]
    ).astype(np.float32)


def edit_direction(
    source_sentences: Sequence[str],
    target_sentences: Sequence[str],
    source_label: str = "source",
    target_label: str = "target",
) -> EditDirection:
    """Mean pooled-vector disparity, target minus source, over paired lines."""
    if not source_sentences or not target_sentences:
        raise ParameterError("edit_direction needs non-empty sentence sets")
    if len(source_sentences) != len(target_sentences):
        raise ParameterError(
            f"sentence sets differ in length: {len(source_sentences)} "
            f"vs {len(target_sentences)}"
        )
    acc = np.zeros(EMBED_DIM, dtype=np.float64)
    for src, tgt in zip(source_sentences, target_sentences):
        acc += sentence_vector(embed_sentence(tgt)).astype(np.float64)
        acc -= sentence_vector(embed_sentence(src)).astype(np.float64)
    vector = (acc / len(source_sentences)).astype(np.float32)
    return EditDirection(
        vector=vector, source_label=source_label, target_label=target_label
    )


def apply_direction(
    c: PromptEmbedding, direction: EditDirection, w: float
) -> PromptEmbedding:
    """Add w * direction to every token row; w = 0 returns c unchanged."""
    if w == 0.0:
        return PromptEmbedding(tokens=c.tokens, matrix=c.matrix.copy())
    matrix = (
        c.matrix + np.float32(w) * direction.vector[None, :]
    ).astype(np.float32)
    return PromptEmbedding(tokens=c.tokens, matrix=matrix)


def make_ladder(
    c: PromptEmbedding,
    direction: EditDirection,
    w_mid: float = 0.5,
    w_high: float = 1.0,
) -> RichPromptLadder:
    """Prompt ladder at weights (0, w_mid, w_high); needs 0 < w_mid < w_high."""
    if not 0.0 < w_mid < w_high:
        raise ParameterError(
            f"ladder weights must satisfy 0 < w_mid < w_high, got "
            f"{w_mid}, {w_high}"
        )
    return RichPromptLadder(
        base=apply_direction(c, direction, 0.0),
        mid=apply_direction(c, direction, w_mid),
        high=apply_direction(c, direction, w_high),
        w_mid=float(w_mid),
        w_high=float(w_high),
    )


# -- sentence banks -------------------------------------------------------

def _default_banks_dir() -> Path:
    return Path(resources.files("regenedit").joinpath("data", "banks"))


def available_banks(banks_dir: Optional[Path] = None) -> List[str]:
    root = Path(banks_dir) if banks_dir is not None else _default_banks_dir()
    return sorted(p.stem for p in root.glob("*.txt"))


def load_bank(word: str, banks_dir: Optional[Path] = None) -> List[str]:
    """One sentence per line, UTF-8; paired by line number across banks."""
    root = Path(banks_dir) if banks_dir is not None else _default_banks_dir()
    path = root / f"{word}.txt"
    if not path.is_file():
        raise ParameterError(
            f"no sentence bank for {word!r}; available: "
            f"{', '.join(available_banks(banks_dir)) or '(none)'}"
        )
    lines = [
        ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()
    ]
    return [ln for ln in lines if ln]


def direction_from_banks(
    source_word: str, target_word: str, banks_dir: Optional[Path] = None
) -> EditDirection:
    source = load_bank(source_word, banks_dir)
    target = load_bank(target_word, banks_dir)
    return edit_direction(
        source, target, source_label=source_word, target_label=target_word
    )
