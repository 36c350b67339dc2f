"""Trainable toy encoder-decoder LM.

A deliberately small transformer (<= 2 layers, dim <= 64 in practice) that
implements the ConditionalLM contract: bidirectional self-attention over the
context, autoregressive decoding with cross-attention.  Runs in float64 on CPU
so next-token distributions meet the 1e-9 normalization tolerance and gradient
checks are clean.  Training minimizes the summed negative log-likelihood of
the target sequences given their contexts.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .lm import ConditionalLM
from .vocab import BOS, PAD, Vocabulary


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class ToyEncDecLM(nn.Module, ConditionalLM):
    """Small transformer encoder-decoder over a word/char vocabulary."""

    def __init__(
        self,
        vocab: Vocabulary,
        dim: int = 32,
        layers: int = 1,
        heads: int = 2,
        ffn_dim: int | None = None,
        max_context_len: int = 640,
        max_target_len: int = 128,
        seed: int = 0,
    ):
        nn.Module.__init__(self)
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.vocab = vocab
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.ffn_dim = ffn_dim or 2 * dim
        self.max_context_len = max_context_len
        self.max_target_len = max_target_len
        self.init_seed = seed

        torch.manual_seed(seed)
        vocab_size = len(vocab)
        self.embed = nn.Embedding(vocab_size, dim)
        self.enc_pos = nn.Embedding(max_context_len, dim)
        self.dec_pos = nn.Embedding(max_target_len + 1, dim)  # +1 for the BOS slot
        enc_layer = nn.TransformerEncoderLayer(
            dim, heads, self.ffn_dim, dropout=0.0, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, layers, enable_nested_tensor=False)
        dec_layer = nn.TransformerDecoderLayer(
            dim, heads, self.ffn_dim, dropout=0.0, batch_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, layers)
        self.out_proj = nn.Linear(dim, vocab_size)
        self.double()
        self.eval()

    # --- ConditionalLM interface ---

    def encode(self, context: Sequence[int]) -> torch.Tensor:
        ids = list(context) or [PAD]  # empty context gets a single null token
        if len(ids) > self.max_context_len:
            raise ValueError(
                f"context of {len(ids)} tokens exceeds max_context_len={self.max_context_len}"
            )
        with torch.no_grad():
            return self._encode_batch(torch.tensor([ids], dtype=torch.long))[0]

    def next_distribution(self, state: torch.Tensor, prefix: Sequence[int]) -> np.ndarray:
        prefix = list(prefix)
        if len(prefix) > self.max_target_len:
            raise ValueError(
                f"prefix of {len(prefix)} tokens exceeds max_target_len={self.max_target_len}"
            )
        dec_in = torch.tensor([[BOS] + prefix], dtype=torch.long)
        with torch.no_grad():
            hidden = self._decode_batch(state.unsqueeze(0), dec_in)
            logits = self.out_proj(hidden[0, -1])
            probs = torch.softmax(logits, dim=-1)
        return probs.numpy()

    # --- internals ---

    def _encode_batch(self, src: torch.Tensor, src_pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        positions = torch.arange(src.size(1))
        x = self.embed(src) * math.sqrt(self.dim) + self.enc_pos(positions)
        return self.encoder(x, src_key_padding_mask=src_pad_mask)

    def _decode_batch(
        self,
        memory: torch.Tensor,
        dec_in: torch.Tensor,
        memory_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        length = dec_in.size(1)
        positions = torch.arange(length)
        y = self.embed(dec_in) * math.sqrt(self.dim) + self.dec_pos(positions)
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
        return self.decoder(y, memory, tgt_mask=causal, memory_key_padding_mask=memory_pad_mask)

    def batch_loss(self, contexts: list[list[int]], targets: list[list[int]]) -> tuple[torch.Tensor, int]:
        """Summed NLL of the targets given their contexts, and the token count."""
        src_len = max(len(c) or 1 for c in contexts)
        tgt_len = max(len(t) for t in targets)
        src = torch.full((len(contexts), src_len), PAD, dtype=torch.long)
        src_pad = torch.ones(len(contexts), src_len, dtype=torch.bool)
        for i, ctx in enumerate(contexts):
            ids = ctx or [PAD]
            src[i, : len(ids)] = torch.tensor(ids)
            src_pad[i, : len(ids)] = False
        dec_in = torch.full((len(targets), tgt_len), PAD, dtype=torch.long)
        labels = torch.full((len(targets), tgt_len), PAD, dtype=torch.long)
        dec_in[:, 0] = BOS
        for i, tgt in enumerate(targets):
            labels[i, : len(tgt)] = torch.tensor(tgt)
            dec_in[i, 1 : len(tgt)] = torch.tensor(tgt[:-1])
        memory = self._encode_batch(src, src_pad)
        hidden = self._decode_batch(memory, dec_in, src_pad)
        logits = self.out_proj(hidden)
        loss = nn.functional.cross_entropy(
            logits.reshape(-1, logits.size(-1)), labels.reshape(-1),
            ignore_index=PAD, reduction="sum",
        )
        n_tokens = sum(len(t) for t in targets)
        return loss, n_tokens


def train_mle(
    lm: ToyEncDecLM,
    data: list[tuple[list[int], list[int]]],
    config: TrainConfig,
) -> tuple[ToyEncDecLM, list[float]]:
    """Fit lm on (context, target) pairs by minimizing summed NLL.

    Returns the trained model and the per-epoch mean NLL per token.
    Deterministic for a fixed config.seed; raises TrainingError on a
    non-finite loss, naming the offending batch.
    """
    if not data:
        raise ValueError("training data must be non-empty")
    for context, target in data:
        if not target:
            raise ValueError("every training target must be non-empty")
        if len(context) > lm.max_context_len:
            raise ValueError(f"context of {len(context)} tokens exceeds the model limit")
        if len(target) > lm.max_target_len:
            raise ValueError(f"target of {len(target)} tokens exceeds the model limit")
    trace: list[float] = []
    if config.epochs == 0:
        return lm, trace

    torch.manual_seed(config.seed)
    shuffler = random.Random(config.seed)
    optimizer = torch.optim.Adam(lm.parameters(), lr=config.learning_rate)
    lm.train()
    try:
        for epoch in range(config.epochs):
            order = list(range(len(data)))
            shuffler.shuffle(order)
            epoch_loss = 0.0
            epoch_tokens = 0
            for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
                rows = order[start : start + config.batch_size]
                contexts = [list(data[i][0]) for i in rows]
                targets = [list(data[i][1]) for i in rows]
                loss, n_tokens = lm.batch_loss(contexts, targets)
                if not math.isfinite(loss.item()):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.item()
                epoch_tokens += n_tokens
            trace.append(epoch_loss / epoch_tokens)
    finally:
        lm.eval()
    return lm, trace
