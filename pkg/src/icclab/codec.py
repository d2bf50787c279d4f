"""Character-level episode tokenizer with exact per-point token spans.

Numbers are spelled out digit by digit; every cluster label is a single
token so its sequence position can be used directly when aggregating
attention. The full template is

    BOS INSTR(c) [ point_1 , point_2 , ... ] SEP [ LBL , LBL , ... ] EOS

where each point renders as "[x1, x2]" with fixed two-decimal coordinates
and the label region uses bare commas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .episodes import Episode, format_point

MAX_CLUSTERS = 8


class VocabOverflow(ValueError):
    """Episode needs more cluster labels than the vocabulary carries."""


class MalformedOutput(ValueError):
    """Generated label region does not parse; `found` counts parsed labels."""

    def __init__(self, message: str, found: int = 0):
        super().__init__(message)
        self.found = found


class Vocabulary:
    """Fixed symbol table: special tokens, label tokens, then characters."""

    def __init__(self):
        symbols = ["<pad>", "<bos>", "<eos>", "<sep>"]
        symbols += [f"<instr:{k}>" for k in range(1, MAX_CLUSTERS + 1)]
        symbols += [f"<lbl:{j}>" for j in range(MAX_CLUSTERS)]
        symbols += list("0123456789-., []")
        self._symbols = symbols
        self._ids = {s: i for i, s in enumerate(symbols)}
        assert len(self._ids) == len(symbols) < 64

        self.pad = self._ids["<pad>"]
        self.bos = self._ids["<bos>"]
        self.eos = self._ids["<eos>"]
        self.sep = self._ids["<sep>"]
        self.lbl0 = self._ids["<lbl:0>"]
        self.comma = self._ids[","]
        self.lbracket = self._ids["["]
        self.rbracket = self._ids["]"]

    def __len__(self) -> int:
        return len(self._symbols)

    def instr(self, c: int) -> int:
        if not 1 <= c <= MAX_CLUSTERS:
            raise VocabOverflow(f"no instruction token for c={c}")
        return self._ids[f"<instr:{c}>"]

    def label(self, j: int) -> int:
        if not 0 <= j < MAX_CLUSTERS:
            raise VocabOverflow(f"no label token for cluster id {j}")
        return self._ids[f"<lbl:{j}>"]

    def is_label(self, token: int) -> bool:
        return self.lbl0 <= token < self.lbl0 + MAX_CLUSTERS

    def label_value(self, token: int) -> int:
        if not self.is_label(token):
            raise ValueError(f"token {token} is not a label token")
        return token - self.lbl0

    def instr_value(self, token: int) -> int:
        sym = self._symbols[token]
        if not sym.startswith("<instr:"):
            raise ValueError(f"token {token} is not an instruction token")
        return int(sym[7:-1])

    def encode_chars(self, text: str) -> list[int]:
        return [self._ids[ch] for ch in text]

    def decode(self, tokens) -> str:
        """Human-readable rendering; special tokens appear as <...> markers."""
        return "".join(self._symbols[int(t)] for t in tokens)

    def decode_chars(self, tokens) -> str:
        """Character tokens only; raises on specials (used for span fidelity)."""
        out = []
        for t in tokens:
            sym = self._symbols[int(t)]
            if len(sym) != 1:
                raise ValueError(f"non-character token {sym} in span")
            out.append(sym)
        return "".join(out)


VOCAB = Vocabulary()


@dataclass
class TokenizedEpisode:
    """Token ids plus the structural indices the analysis code needs.

    spans[i] = (s_i, e_i), inclusive token range of point i's rendering.
    label_positions[i] = index of the single token holding point i's label
    (teacher-forced encodings only). loss_mask flags the supervised targets.
    """

    tokens: np.ndarray
    spans: list[tuple[int, int]]
    num_points: int
    label_positions: list[int] | None = None
    loss_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def to_json(self) -> str:
        return json.dumps(
            {
                "tokens": [int(t) for t in self.tokens],
                "spans": [[int(s), int(e)] for s, e in self.spans],
                "label_positions": None
                if self.label_positions is None
                else [int(t) for t in self.label_positions],
            }
        )

    @staticmethod
    def from_json(line: str) -> "TokenizedEpisode":
        d = json.loads(line)
        lp = d.get("label_positions")
        return TokenizedEpisode(
            tokens=np.array(d["tokens"], dtype=np.int64),
            spans=[(int(s), int(e)) for s, e in d["spans"]],
            num_points=len(d["spans"]),
            label_positions=None if lp is None else [int(t) for t in lp],
        )


def encode_prompt(ep: Episode) -> TokenizedEpisode:
    """Tokenize the data prompt and record each point's inclusive span."""
    c = ep.spec.num_clusters
    if c > MAX_CLUSTERS:
        raise VocabOverflow(f"c={c} exceeds the {MAX_CLUSTERS}-label vocabulary")
    tokens = [VOCAB.bos, VOCAB.instr(c), VOCAB.lbracket]
    spans = []
    for i, p in enumerate(ep.points):
        if i > 0:
            tokens.append(VOCAB.comma)
            tokens.extend(VOCAB.encode_chars(" "))
        start = len(tokens)
        tokens.extend(VOCAB.encode_chars(format_point(p)))
        spans.append((start, len(tokens) - 1))
    tokens.append(VOCAB.rbracket)
    tokens.append(VOCAB.sep)
    return TokenizedEpisode(
        tokens=np.array(tokens, dtype=np.int64),
        spans=spans,
        num_points=ep.num_points,
    )


def encode_supervised(ep: Episode) -> TokenizedEpisode:
    """Prompt plus the teacher-forced label region and its loss mask."""
    enc = encode_prompt(ep)
    tokens = list(enc.tokens)
    mask_from = len(tokens)
    label_positions = []
    tokens.append(VOCAB.lbracket)
    for i, y in enumerate(ep.labels):
        if i > 0:
            tokens.append(VOCAB.comma)
        label_positions.append(len(tokens))
        tokens.append(VOCAB.label(int(y)))
    tokens.append(VOCAB.rbracket)
    tokens.append(VOCAB.eos)
    mask = np.zeros(len(tokens), dtype=bool)
    mask[mask_from:] = True
    return TokenizedEpisode(
        tokens=np.array(tokens, dtype=np.int64),
        spans=enc.spans,
        num_points=ep.num_points,
        label_positions=label_positions,
        loss_mask=mask,
    )


def decode_labels(tokens, m: int) -> list[int]:
    """Parse the label region after SEP; strict about shape and count.

    Raises MalformedOutput with the number of labels actually found when the
    region is truncated, has the wrong count, or contains stray tokens.
    """
    toks = [int(t) for t in tokens]
    try:
        start = toks.index(VOCAB.sep) + 1
    except ValueError:
        raise MalformedOutput("no label separator in sequence", found=0)
    labels: list[int] = []
    pos = start
    if pos >= len(toks) or toks[pos] != VOCAB.lbracket:
        raise MalformedOutput("label region does not open with '['", found=0)
    pos += 1
    expect_label = True
    while pos < len(toks):
        t = toks[pos]
        if expect_label:
            if not VOCAB.is_label(t):
                raise MalformedOutput(
                    f"expected a label token, got {VOCAB.decode([t])!r}", found=len(labels)
                )
            labels.append(VOCAB.label_value(t))
            expect_label = False
        else:
            if t == VOCAB.comma:
                expect_label = True
            elif t == VOCAB.rbracket:
                if len(labels) != m:
                    raise MalformedOutput(
                        f"found {len(labels)} labels, expected {m}", found=len(labels)
                    )
                return labels
            else:
                raise MalformedOutput(
                    f"expected ',' or ']', got {VOCAB.decode([t])!r}", found=len(labels)
                )
        pos += 1
    raise MalformedOutput("label region truncated", found=len(labels))


def decode_points(enc: TokenizedEpisode) -> np.ndarray:
    """Recover the numeric points from the span renderings (round-trip check)."""
    rows = []
    for s, e in enc.spans:
        text = VOCAB.decode_chars(enc.tokens[s : e + 1])
        assert text.startswith("[") and text.endswith("]")
        rows.append([float(x) for x in text[1:-1].split(",")])
    return np.array(rows, dtype=np.float64)
