"""Greedy autoregressive decoding with optional template constraints.

Constrained mode forces the structural tokens of the label region
('[' , commas, ']' and EOS) and restricts label slots to the cluster
labels allowed by the instruction token, so the output always parses.
"""

from __future__ import annotations

import numpy as np

from ..codec import VOCAB, TokenizedEpisode


def _label_slots(m: int) -> list[int | None]:
    """Template of the label region: forced token id or None for a label slot."""
    slots: list[int | None] = [VOCAB.lbracket]
    for i in range(m):
        if i > 0:
            slots.append(VOCAB.comma)
        slots.append(None)
    slots.append(VOCAB.rbracket)
    slots.append(VOCAB.eos)
    return slots


def generate(model, prompt: TokenizedEpisode, constrain: bool = True) -> np.ndarray:
    """Greedy decode after the prompt; returns the full token sequence.

    Decoding stops at EOS or after 3m+4 generated tokens. The prompt must
    end at the label separator.
    """
    tokens = list(int(t) for t in prompt.tokens)
    if tokens[-1] != VOCAB.sep:
        raise ValueError("prompt must end at the label separator")
    m = prompt.num_points
    cap = 3 * m + 4
    max_seq = model.config.max_seq

    if constrain:
        c = VOCAB.instr_value(tokens[1])
        lo = VOCAB.lbl0
        for slot in _label_slots(m):
            if len(tokens) >= max_seq:
                break
            if slot is not None:
                tokens.append(slot)
                continue
            logits, _ = model.forward_batch(np.asarray(tokens, dtype=np.int64)[None])
            row = logits[0, -1, lo: lo + c]
            tokens.append(lo + int(np.argmax(row)))
        return np.asarray(tokens, dtype=np.int64)

    for _ in range(cap):
        if len(tokens) >= max_seq:
            break
        logits, _ = model.forward_batch(np.asarray(tokens, dtype=np.int64)[None])
        nxt = int(np.argmax(logits[0, -1]))
        tokens.append(nxt)
        if nxt == VOCAB.eos:
            break
    return np.asarray(tokens, dtype=np.int64)
