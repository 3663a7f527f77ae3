"""Token vocabulary and LaTeX tokenisation."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

PAD, SOS, EOS = 0, 1, 2
RESERVED = ("<pad>", "<sos>", "<eos>")


class TokenizeError(ValueError):
    def __init__(self, text: str, position: int):
        self.text = text
        self.position = position
        snippet = text[position:position + 12]
        super().__init__(f"unknown token at position {position}: {snippet!r}")


class Vocab:
    """Bijection between markup tokens and ids; ids 0, 1, 2 are PAD, SOS, EOS."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            tok = tok.strip()
            if not tok:
                continue
            if tok in self.stoi:
                raise ValueError(f"duplicate or reserved token {tok!r}")
            if any(c.isspace() for c in tok):
                raise ValueError(f"token {tok!r} contains whitespace")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        self._max_len = max((len(t) for t in self.itos[3:]), default=1)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.itos[3:]

    def dumps(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        return cls(text.splitlines())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def tokenize(self, text: str) -> list[int]:
        return tokenize(text, self)

    def detokenize(self, ids: Sequence[int]) -> str:
        return detokenize(ids, self)


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match segmentation of ``text`` into vocabulary ids."""
    ids = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        for size in range(min(vocab._max_len, n - i), 0, -1):
            piece = text[i:i + size]
            tid = vocab.stoi.get(piece)
            if tid is not None and tid > EOS:
                ids.append(tid)
                i += size
                break
        else:
            raise TokenizeError(text, i)
    return ids


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    """Space-joined tokens; reserved ids are dropped."""
    return " ".join(vocab.itos[i] for i in ids if i > EOS)


def canonical(text: str, vocab: Vocab) -> str:
    return detokenize(tokenize(text, vocab), vocab)


def load_default_vocab(name: str = "crohme") -> Vocab:
    """Bundled vocabularies: ``crohme`` (CROHME-style symbol set) or ``synth``."""
    path = Path(__file__).with_name(f"{name}_vocab.txt")
    return Vocab.load(path)
