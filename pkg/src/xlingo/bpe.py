"""Shared byte-pair-encoding subword vocabulary.

One vocabulary is learned over the pooled corpora of every language and
then encodes all of them; ids are dense, with pad/bos/eos/unk pinned to
0..3. Words split into characters followed by a trailing ``</w>`` marker
symbol (which merges may absorb); merges apply greedily in learned order.

Vocab file format (UTF-8 text, bit-exact round trip):
    line 1: "XLBPE 1"
    line 2: alphabet, space-separated escaped symbols, sorted
    rest:   one merge per line, "left right"
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
UNK_RENDER = "⟨unk⟩"  # ⟨unk⟩ sentinel in decoded text
EOW = "</w>"

_MAGIC = "XLBPE 1"


def pretokenize(text: str) -> list[str]:
    """Whitespace split, then detach punctuation as standalone tokens."""
    words: list[str] = []
    for chunk in text.split():
        run = ""
        for ch in chunk:
            if ch.isalnum():
                run += ch
            else:
                if run:
                    words.append(run)
                    run = ""
                words.append(ch)
        if run:
            words.append(run)
    return words


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word) + (EOW,)


@dataclass
class EncodedSequence:
    ids: list[int]
    original_text: str

    def __len__(self):
        return len(self.ids)


class SubwordVocab:
    """Ordered merge list plus the token<->id table it induces."""

    def __init__(self, alphabet: list[str], merges: list[tuple[str, str]]):
        self.alphabet = sorted(alphabet)
        self.merges = list(merges)
        self.id_to_token: list[str] = list(RESERVED) + self.alphabet
        self.token_to_id: dict[str, int] = {
            tok: i for i, tok in enumerate(self.id_to_token)
        }
        for left, right in self.merges:
            tok = left + right
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)
        self._word_cache: dict[str, tuple[str, ...]] = {}

    def __len__(self):
        return len(self.id_to_token)

    def _apply_merges(self, word: str) -> tuple[str, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(_word_symbols(word))
        for left, right in self.merges:
            if len(symbols) < 2:
                break
            merged = []
            i = 0
            while i < len(symbols):
                if (
                    i + 1 < len(symbols)
                    and symbols[i] == left
                    and symbols[i + 1] == right
                ):
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        self._word_cache[word] = out
        return out

    def encode(self, text: str) -> EncodedSequence:
        """Subword ids for text; unknown symbols map to unk. No bos/eos."""
        ids: list[int] = []
        for word in pretokenize(text):
            for sym in self._apply_merges(word):
                ids.append(self.token_to_id.get(sym, UNK_ID))
        return EncodedSequence(ids=ids, original_text=text)

    def decode(self, ids) -> str:
        """Inverse of encode up to unk-lossiness; reserved ids are stripped."""
        pieces: list[str] = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise DataError(f"token id out of range: {i}")
            if i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            pieces.append(UNK_RENDER if i == UNK_ID else self.id_to_token[i])
        words = "".join(pieces).split(EOW)
        if words and words[-1] == "":
            words.pop()
        return " ".join(words)

    def oov_rate(self, corpus) -> float:
        """Fraction of (non-whitespace) characters that cannot be encoded
        without unk, over an iterable of text lines."""
        total = 0
        oov = 0
        for line in corpus:
            for word in pretokenize(line):
                total += len(word)
                for sym in self._apply_merges(word):
                    if sym not in self.token_to_id:
                        oov += len(sym.replace(EOW, ""))
        return oov / total if total else 0.0


def _read_corpora(corpora) -> Counter:
    counts: Counter = Counter()
    for item in corpora:
        if isinstance(item, (str, Path)) and Path(item).exists():
            text = Path(item).read_text(encoding="utf-8")
            lines = text.splitlines()
        else:
            raise DataError(f"corpus file not found: {item}")
        for line in lines:
            counts.update(pretokenize(line))
    return counts


def learn_bpe(corpora, target_size: int) -> SubwordVocab:
    """Learn merges over the pooled corpora until the vocab has target_size
    tokens. Ties break on (higher frequency, lexicographically smaller pair).
    """
    word_counts = _read_corpora(corpora)
    if not word_counts:
        raise DataError("cannot learn a vocabulary from an empty corpus")
    words = {w: list(_word_symbols(w)) for w in word_counts}
    alphabet = sorted({sym for syms in words.values() for sym in syms})
    base = len(RESERVED) + len(alphabet)
    if target_size < base:
        raise DataError(
            f"target_size {target_size} below alphabet+reserved size {base}"
        )
    merges: list[tuple[str, str]] = []
    vocab_tokens = set(alphabet)
    size = base
    while size < target_size:
        pairs: Counter = Counter()
        for w, syms in words.items():
            c = word_counts[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += c
        if not pairs:
            raise DataError(
                f"target_size {target_size} unreachable: no pairs left at size {size}"
            )
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        left, right = best
        fused = left + right
        for w, syms in words.items():
            if len(syms) < 2:
                continue
            merged = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    merged.append(fused)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[w] = merged
        if fused not in vocab_tokens:
            vocab_tokens.add(fused)
            size += 1
    return SubwordVocab(alphabet=alphabet, merges=merges)


_ESCAPES = [("\\", "\\\\"), (" ", "\\s"), ("\n", "\\n"), ("\t", "\\t")]


def _escape(sym: str) -> str:
    for raw, esc in _ESCAPES:
        sym = sym.replace(raw, esc)
    return sym


def _unescape(sym: str) -> str:
    out = []
    i = 0
    while i < len(sym):
        if sym[i] == "\\" and i + 1 < len(sym):
            nxt = sym[i + 1]
            out.append({"\\": "\\", "s": " ", "n": "\n", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(sym[i])
            i += 1
    return "".join(out)


def save_vocab(vocab: SubwordVocab, path) -> None:
    lines = [_MAGIC, " ".join(_escape(s) for s in vocab.alphabet)]
    lines += [f"{_escape(a)} {_escape(b)}" for a, b in vocab.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> SubwordVocab:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines or lines[0] != _MAGIC:
        raise DataError(f"not a vocab file (bad magic): {path}")
    if len(lines) < 2:
        raise DataError(f"truncated vocab file: {path}")
    alphabet = [_unescape(s) for s in lines[1].split(" ") if s]
    merges = []
    for ln, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise DataError(f"{path}:{ln}: malformed merge line")
        merges.append((_unescape(parts[0]), _unescape(parts[1])))
    return SubwordVocab(alphabet=alphabet, merges=merges)
