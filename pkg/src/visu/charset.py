"""Symbol tables. Class ids: symbols first, then EOS, then PAD."""

from __future__ import annotations

from dataclasses import dataclass

DIGITS = "0123456789"
ALNUM36 = "0123456789abcdefghijklmnopqrstuvwxyz"


class CharsetError(ValueError):
    pass


@dataclass(frozen=True)
class Charset:
    symbols: str = ALNUM36

    @property
    def eos(self) -> int:
        return len(self.symbols)

    @property
    def pad(self) -> int:
        return len(self.symbols) + 1

    @property
    def size(self) -> int:
        """Number of classes including EOS and PAD."""
        return len(self.symbols) + 2

    def __contains__(self, ch: str) -> bool:
        return len(ch) == 1 and ch.lower() in self.symbols

    def normalize(self, text: str) -> str:
        text = text.lower()
        for ch in text:
            if ch not in self.symbols:
                raise CharsetError(f"character {ch!r} is not in the charset")
        return text

    def encode(self, text: str, seq_len: int) -> list[int]:
        """Ids for ``text`` + EOS, padded with PAD to ``seq_len``."""
        text = self.normalize(text)
        if len(text) > seq_len - 1:
            raise CharsetError(f"label {text!r} longer than {seq_len - 1} characters")
        ids = [self.symbols.index(c) for c in text] + [self.eos]
        return ids + [self.pad] * (seq_len - len(ids))

    def decode(self, ids) -> str:
        out = []
        for k in ids:
            k = int(k)
            if k == self.eos:
                break
            if k < len(self.symbols):
                out.append(self.symbols[k])
        return "".join(out)
