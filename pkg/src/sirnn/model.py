"""A trained (or trainable) selector bound to its parameters and vocabulary."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .corpus import SelectionSample, Vocab
from .encoders import (BatchLayout, encode_batch_dynamic, encode_batch_sirnn, encode_dialog_dynamic,
                       encode_dialog_sirnn, encode_utterance, encode_utterances_batch, encoder_params,
                       encoder_shapes)
from .numkit import ParameterStore, Tensor, load_checkpoint, save_checkpoint
from .selector import (EncodedSample, HeadTables, ScoredPair, SelectorParams, batch_loss,
                       batch_tables, select_joint_tables, select_separate_tables, selector_shapes)

CHECKPOINT_FILE = "model.ckpt"
VOCAB_FILE = "vocab.json"
CONFIG_FILE = "config.json"


def model_shapes(config: TrainConfig) -> dict[str, tuple[int, ...]]:
    shapes = encoder_shapes(config)
    shapes.update(selector_shapes(config))
    return shapes


class Model:
    def __init__(self, config: TrainConfig, store: ParameterStore, vocab: Vocab):
        self.config = config
        self.store = store
        self.vocab = vocab
        if vocab.dim != config.d_w:
            raise ValueError(f"word vectors have dimension {vocab.dim}, config says d_w={config.d_w}")
        missing = set(model_shapes(config)) - set(store.params)
        if missing:
            raise ValueError(f"parameter store lacks {sorted(missing)}")

    @property
    def joint(self) -> bool:
        return self.config.mode == "sirnn" and not self.config.no_joint_selection

    @property
    def name(self) -> str:
        if self.config.mode == "dynamic":
            return "dynamic"
        tags = [t for t, on in (("shared-igrus", self.config.shared_igrus),
                                ("no-joint", self.config.no_joint_selection)) if on]
        return "sirnn" + "".join(f"[{t}]" for t in tags)

    def _vectors(self) -> np.ndarray:
        return self.store["embedding"].data if "embedding" in self.store else self.vocab.vectors

    # per-sample reference path -------------------------------------------

    def encode(self, sample: SelectionSample) -> EncodedSample:
        enc = encoder_params(self.store, self.config)
        vocab = self._vocab_view()
        if self.config.mode == "dynamic":
            states = encode_dialog_dynamic(sample.context, vocab, enc, sample.responder)
        else:
            states = encode_dialog_sirnn(sample.context, vocab, enc, sample.responder)
        responses = [encode_utterance(c, vocab, enc.utt) for c in sample.candidates]
        return EncodedSample(states, responses)

    def _vocab_view(self) -> Vocab:
        vec = self._vectors()
        if vec is self.vocab.vectors:
            return self.vocab
        return Vocab(list(self.vocab.tokens), np.array(vec))

    # batched path -------------------------------------------------------

    def forward(self, samples: Sequence[SelectionSample]):
        layout = BatchLayout.build(samples, self.vocab)
        enc = encoder_params(self.store, self.config)
        U_all = encode_utterances_batch(layout, self._vectors(), enc.utt)
        if self.config.mode == "dynamic":
            A = encode_batch_dynamic(layout, U_all, enc)
        else:
            A = encode_batch_sirnn(layout, U_all, enc)
        return layout, A, U_all

    def loss(self, samples: Sequence[SelectionSample]) -> Tensor:
        layout, A, U_all = self.forward(samples)
        return batch_loss(layout, A, U_all, SelectorParams.from_store(self.store), self.config.mode)

    def tables(self, samples: Sequence[SelectionSample], chunk: int | None = None) -> list[HeadTables]:
        chunk = chunk or max(self.config.batch_size, 256)
        sel = SelectorParams.from_store(self.store)
        out = []
        for i in range(0, len(samples), chunk):
            layout, A, U_all = self.forward(samples[i:i + chunk])
            out.extend(batch_tables(layout, A, U_all, sel))
        return out

    def select_tables(self, tables: HeadTables) -> ScoredPair:
        if self.joint:
            return select_joint_tables(tables, self.config.joint_rule)
        return select_separate_tables(tables, self.config.joint_rule)

    def predict(self, samples: Sequence[SelectionSample]) -> list[ScoredPair]:
        return [self.select_tables(t) for t in self.tables(samples)]

    def __call__(self, sample: SelectionSample) -> ScoredPair:
        return self.predict([sample])[0]

    # persistence ----------------------------------------------------------

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = self.store.to_entries()
        if "frozen/embedding" not in entries:
            entries["frozen/embedding"] = self.vocab.vectors
        save_checkpoint(d / CHECKPOINT_FILE, entries)
        (d / VOCAB_FILE).write_text(json.dumps(self.vocab.to_json()) + "\n", encoding="utf-8")
        self.config.save(d / CONFIG_FILE)
        return d

    @classmethod
    def load(cls, directory, dtype: str | None = None) -> "Model":
        d = Path(directory)
        config = TrainConfig.load(d / CONFIG_FILE)
        if dtype is not None:
            config.dtype = dtype
        store = ParameterStore.from_entries(load_checkpoint(d / CHECKPOINT_FILE)).astype(config.dtype)
        tokens = json.loads((d / VOCAB_FILE).read_text(encoding="utf-8"))["tokens"]
        vocab = Vocab(tokens, store["embedding"].data.astype(np.float64))
        return cls(config, store, vocab)
