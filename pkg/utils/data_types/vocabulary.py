from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from utils.errors import DataError

BLANK, SOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<blank>", "<sos>", "<eos>", "<unk>")
SPACE_TOKEN = "<space>"


class Vocabulary:
    """Character inventory with the four special tokens in front.

    Token ids: `<blank>`=0, `<sos>`=1, `<eos>`=2, `<unk>`=3, characters from 4.
    The two output heads use compact index spaces:

    - CTC head: position 0 is blank, position p >= 1 is token id p + 2
      (unk then characters, no sos/eos).
    - decoder / LM head: position 0 is eos, position p >= 1 is token id p + 2
      (unk then characters, no blank/sos).
    """

    def __init__(self, characters: Iterable[str], language: str = "en") -> None:
        chars = list(characters)
        if len(set(chars)) != len(chars):
            raise DataError("Vocabulary characters must be unique")
        for c in chars:
            if len(c) != 1:
                raise DataError(f"Vocabulary entries must be single characters, got {c!r}")
        self.characters = chars
        self.language = language
        self.tokens = list(SPECIALS) + chars
        self._index = {c: i + len(SPECIALS) for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def head_size(self) -> int:
        """Width of both output heads: one special slot, unk, characters."""
        return len(self.characters) + 2

    def encode(self, text: str) -> list[int]:
        return [self._index.get(c, UNK) for c in text]

    def unknown_characters(self, text: str) -> set[str]:
        return {c for c in text if c not in self._index}

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if i >= len(SPECIALS) and i < len(self.tokens):
                out.append(self.tokens[i])
            elif i == UNK:
                out.append("?")
        return "".join(out)

    # -- head index maps ------------------------------------------------
    @staticmethod
    def to_ctc(token: int) -> int:
        if token == BLANK:
            return 0
        if token < UNK:
            raise DataError(f"Token {token} has no CTC output")
        return token - 2

    @staticmethod
    def from_ctc(position: int) -> int:
        return BLANK if position == 0 else position + 2

    @staticmethod
    def to_output(token: int) -> int:
        if token == EOS:
            return 0
        if token < UNK:
            raise DataError(f"Token {token} has no decoder output")
        return token - 2

    @staticmethod
    def from_output(position: int) -> int:
        return EOS if position == 0 else position + 2

    # -- persistence ----------------------------------------------------
    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for token in self.tokens:
                f.write((SPACE_TOKEN if token == " " else token) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path], language: Optional[str] = None) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise DataError(f"Vocabulary file {path} must start with {SPECIALS}")
        chars = [" " if t == SPACE_TOKEN else t for t in lines[len(SPECIALS) :]]
        return cls(chars, language or "en")

    @classmethod
    def from_texts(cls, texts: Iterable[str], language: str = "en") -> "Vocabulary":
        return cls(sorted({c for text in texts for c in text}), language)
