"""Self-describing JSON model checkpoints.

A checkpoint carries a mandatory format version, the model type, the full
vocabulary, hyperparameters, and the parameter arrays (or the scripted
distribution table), so a file alone reconstructs the model exactly.
float64 values survive the JSON round-trip bit-exactly.
"""

from __future__ import annotations

from pathlib import Path
import json

import numpy as np
import torch

from .lm import ConditionalLM, ScriptedLM
from .toy_lm import ToyEncDecLM
from .util import atomic_write_text, dump_json
from .vocab import Vocabulary

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(lm: ConditionalLM, path: str | Path) -> None:
    if isinstance(lm, ToyEncDecLM):
        payload = {
            "format_version": FORMAT_VERSION,
            "model_type": "toy_encdec",
            "vocab": list(lm.vocab.tokens),
            "hparams": {
                "dim": lm.dim,
                "layers": lm.layers,
                "heads": lm.heads,
                "ffn_dim": lm.ffn_dim,
                "max_context_len": lm.max_context_len,
                "max_target_len": lm.max_target_len,
            },
            "parameters": {
                name: {"shape": list(tensor.shape), "data": tensor.reshape(-1).tolist()}
                for name, tensor in lm.state_dict().items()
            },
        }
    elif isinstance(lm, ScriptedLM):
        entries = sorted(lm.table.items(), key=lambda kv: kv[0])
        payload = {
            "format_version": FORMAT_VERSION,
            "model_type": "scripted",
            "vocab": list(lm.vocab.tokens),
            "table": [
                {"context": list(ctx), "prefix": list(prefix), "probs": probs.tolist()}
                for (ctx, prefix), probs in entries
            ],
        }
    else:
        raise CheckpointError(f"cannot checkpoint model of type {type(lm).__name__}")
    atomic_write_text(path, dump_json(payload))


def load_checkpoint(path: str | Path) -> ConditionalLM:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    version = payload.get("format_version")
    if version is None:
        raise CheckpointError(f"{path}: missing mandatory format_version field")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {version}")
    vocab = Vocabulary(tuple(payload["vocab"]))
    model_type = payload.get("model_type")
    if model_type == "toy_encdec":
        lm = ToyEncDecLM(vocab, **payload["hparams"])
        state = {
            name: torch.tensor(
                np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            )
            for name, entry in payload["parameters"].items()
        }
        lm.load_state_dict(state)
        lm.eval()
        return lm
    if model_type == "scripted":
        lm = ScriptedLM(vocab)
        for entry in payload["table"]:
            lm.add(entry["context"], entry["prefix"], entry["probs"])
        return lm
    raise CheckpointError(f"{path}: unknown model_type {model_type!r}")
