"""Shared-encoder multilingual translation model.

One encoder and one embedding table serve every direction; each target
language owns a separate decoder (4 stacked LSTM layers whose first layer
is fed by additive attention over the encoder states) plus its own output
projection. Training interleaves directions round-robin per minibatch and
steps only the shared parameters plus the active direction's decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bleu import bleu
from .bpe import BOS_ID, EOS_ID, PAD_ID, SubwordVocab
from .errors import DataError, ShapeError
from .layers import (
    LN_EPS,
    AdditiveAttention,
    Encoder,
    LstmLayer,
    ParamSet,
    make_embedding,
    uniform_init,
)
from .optim import AdamState, RegularizerConfig, adam_step, clear_grads, clip_global_norm
from .rng import Rng


@dataclass
class ContextSet:
    """Final-layer encoder states, one per source position, plus validity
    mask; masked positions never influence attention or pooling."""

    states: Tensor  # (B, T, H)
    mask: np.ndarray  # (B, T) in {0., 1.}

    def __len__(self):
        return self.states.data.shape[1]


@dataclass
class SeqBatch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.src.shape[0]


def pad_ids(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id rows with pad=0; returns (ids, mask) arrays."""
    if not rows:
        raise DataError("cannot pad an empty batch")
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return ids, mask


def make_batch(pairs: list[tuple[list[int], list[int]]]) -> SeqBatch:
    """Teacher-forcing batch: source gets bos/eos, target input is
    bos-shifted and target output eos-terminated."""
    src_rows = [[BOS_ID] + list(s) + [EOS_ID] for s, _ in pairs]
    tin_rows = [[BOS_ID] + list(t) for _, t in pairs]
    tout_rows = [list(t) + [EOS_ID] for _, t in pairs]
    src, src_mask = pad_ids(src_rows)
    tin, _ = pad_ids(tin_rows)
    tout, tgt_mask = pad_ids(tout_rows)
    return SeqBatch(src, src_mask, tin, tout, tgt_mask)


class Decoder:
    """Per-target-language decoder; layer 1 consumes the attention context
    concatenated with the token embedding, upper layers are residual."""

    def __init__(self, ps: ParamSet, lang: str, d_emb: int, d_h: int,
                 vocab_size: int, n_layers: int, rng, init_range: float):
        if n_layers < 2:
            raise ValueError("decoder needs at least 2 layers")
        self.lang = lang
        self.d_h = d_h
        prefix = f"decoder.{lang}"
        self.we = ps.add(f"{prefix}/l1/We", uniform_init(rng, (d_emb, 4 * d_h), init_range))
        self.wc = ps.add(f"{prefix}/l1/Wc", uniform_init(rng, (d_h, 4 * d_h), init_range))
        self.wh = ps.add(f"{prefix}/l1/Wh", uniform_init(rng, (d_h, 4 * d_h), init_range))
        self.l1_gain = ps.add(f"{prefix}/l1/ln_gain", np.ones(4 * d_h))
        bias = np.zeros(4 * d_h)
        bias[d_h : 2 * d_h] = 1.0
        self.l1_bias = ps.add(f"{prefix}/l1/ln_bias", bias)
        self.attn = AdditiveAttention(ps, f"{prefix}/attn", d_h, rng, init_range)
        self.upper = [
            LstmLayer(ps, f"{prefix}/l{k}", d_h, d_h, rng, init_range)
            for k in range(2, n_layers + 1)
        ]
        self.out_gain = ps.add(f"{prefix}/out/ln_gain", np.ones(d_h))
        self.out_bias = ps.add(f"{prefix}/out/ln_bias", np.zeros(d_h))
        self.out_w = ps.add(f"{prefix}/out/W", uniform_init(rng, (d_h, vocab_size), init_range))

    def _layer1_step(self, e_t: Tensor, ctx: Tensor, h: Tensor, c: Tensor):
        a = ad.add(ad.matmul(e_t, self.we), ad.matmul(ctx, self.wc))
        a = ad.add(a, ad.matmul(h, self.wh))
        a = ad.layer_norm(a, self.l1_gain, self.l1_bias, LN_EPS, nblocks=4)
        return ad.lstm_cell(a, c)

    def _project(self, h: Tensor) -> Tensor:
        normed = ad.layer_norm(h, self.out_gain, self.out_bias, LN_EPS)
        return ad.matmul(normed, self.out_w)

    def teacher_forcing(self, embed: Tensor, context: ContextSet,
                        tgt_in: np.ndarray, training: bool, rng,
                        dropout_rate: float) -> Tensor:
        """Logits (B,T,V) for gold-prefixed target inputs."""
        b, t_len = tgt_in.shape
        emb = ad.embedding(embed, tgt_in)
        emb = ad.dropout(emb, dropout_rate, rng, training)
        prepared = self.attn.prepare(context.states)
        h1 = ad.zeros((b, self.d_h))
        c1 = ad.zeros((b, self.d_h))
        outs = []
        for t in range(t_len):
            ctx, _ = self.attn.step(prepared, context.states, context.mask, h1)
            h1, c1 = self._layer1_step(ad.timestep(emb, t), ctx, h1, c1)
            outs.append(h1)
        h = ad.stack_steps(outs)
        for layer in self.upper:
            out = layer.run(h, None)
            out = ad.dropout(out, dropout_rate, rng, training)
            h = ad.add(h, out)
        flat = ad.reshape(h, (b * t_len, self.d_h))
        v = self.out_w.data.shape[1]
        return ad.reshape(self._project(flat), (b, t_len, v))

    def init_state(self, b: int) -> dict:
        n = 1 + len(self.upper)
        return {
            "h": [ad.zeros((b, self.d_h)) for _ in range(n)],
            "c": [ad.zeros((b, self.d_h)) for _ in range(n)],
        }

    def decode_step(self, embed: Tensor, prepared: Tensor, context: ContextSet,
                    prev_ids: np.ndarray, state: dict) -> tuple[Tensor, dict]:
        e = ad.embedding(embed, prev_ids)
        ctx, _ = self.attn.step(prepared, context.states, context.mask, state["h"][0])
        h1, c1 = self._layer1_step(e, ctx, state["h"][0], state["c"][0])
        new_h, new_c = [h1], [c1]
        x = h1
        for k, layer in enumerate(self.upper, start=1):
            hk, ck = layer.step(x, state["h"][k], state["c"][k])
            new_h.append(hk)
            new_c.append(ck)
            x = ad.add(x, hk)
        return self._project(x), {"h": new_h, "c": new_c}


class MultilingualNMT:
    """One shared encoder + embedding, one decoder per target language."""

    def __init__(self, vocab_size: int, target_langs: list[str],
                 d_emb: int = 64, d_h: int = 64, n_uni: int = 2,
                 dec_layers: int = 4, init_range: float = 0.08,
                 seed: int = 0):
        self.vocab_size = vocab_size
        self.d_emb = d_emb
        self.d_h = d_h
        self.n_uni = n_uni
        self.dec_layers = dec_layers
        self.ps = ParamSet()
        rng = Rng(seed).spawn("nmt-init")
        self.embed = make_embedding(self.ps, "embed/shared", vocab_size, d_emb,
                                    rng, init_range)
        self.encoder = Encoder(self.ps, d_emb, d_h, n_uni, rng, init_range)
        self.decoders = {
            lang: Decoder(self.ps, lang, d_emb, d_h, vocab_size, dec_layers,
                          rng, init_range)
            for lang in target_langs
        }

    def decoder_for(self, direction: tuple[str, str]) -> Decoder:
        tgt = direction[1]
        if tgt not in self.decoders:
            raise DataError(f"no decoder for direction {direction[0]}->{tgt}")
        return self.decoders[tgt]

    def encode_source(self, ids: np.ndarray, mask: np.ndarray,
                      training: bool = False, rng=None,
                      dropout_rate: float = 0.0) -> ContextSet:
        if ids.size and ids.max() >= self.vocab_size:
            raise ShapeError("source id out of range")
        states = self.encoder.encode(self.embed, ids, mask, training, rng,
                                     dropout_rate)
        return ContextSet(states=states, mask=mask)

    def loss_on_batch(self, batch: SeqBatch, direction: tuple[str, str],
                      reg: RegularizerConfig, training: bool = True,
                      rng=None) -> Tensor:
        decoder = self.decoder_for(direction)
        drop = reg.dropout_rate if training else 0.0
        context = self.encode_source(batch.src, batch.src_mask, training, rng, drop)
        logits = decoder.teacher_forcing(self.embed, context, batch.tgt_in,
                                         training, rng, drop)
        b, t_len, v = logits.data.shape
        flat = ad.reshape(logits, (b * t_len, v))
        return ad.smoothed_cross_entropy(
            flat, batch.tgt_out.reshape(-1), reg.label_smoothing,
            weights=batch.tgt_mask.reshape(-1),
        )

    def trainable_names(self, direction: tuple[str, str]) -> list[str]:
        return self.ps.names("encoder/", "embed/", f"decoder.{direction[1]}/")

    def train_step(self, batch: SeqBatch, direction: tuple[str, str],
                   reg: RegularizerConfig, adam: AdamState,
                   clip_norm: float = 5.0, rng=None) -> float:
        loss = self.loss_on_batch(batch, direction, reg, training=True, rng=rng)
        ad.backward(loss)
        names = self.trainable_names(direction)
        clip_global_norm(self.ps.as_dict(), clip_norm, names)
        adam_step(self.ps.as_dict(), adam, reg, names)
        clear_grads(self.ps.as_dict())
        return loss.item()

    def greedy_decode(self, src_rows: list[list[int]],
                      direction: tuple[str, str], max_len: int) -> list[list[int]]:
        """Argmax decoding from bos until eos or max_len, batched."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        decoder = self.decoder_for(direction)
        with ad.no_grad():
            src, src_mask = pad_ids([[BOS_ID] + r + [EOS_ID] for r in src_rows])
            context = self.encode_source(src, src_mask)
            prepared = decoder.attn.prepare(context.states)
            b = src.shape[0]
            prev = np.full(b, BOS_ID, dtype=np.int64)
            state = decoder.init_state(b)
            done = np.zeros(b, dtype=bool)
            outputs: list[list[int]] = [[] for _ in range(b)]
            for _ in range(max_len):
                logits, state = decoder.decode_step(self.embed, prepared,
                                                    context, prev, state)
                nxt = logits.data.argmax(axis=1).astype(np.int64)
                for i in range(b):
                    if not done[i]:
                        if nxt[i] == EOS_ID:
                            done[i] = True
                        else:
                            outputs[i].append(int(nxt[i]))
                if done.all():
                    break
                prev = nxt
        return outputs


def tokenize_pairs(pairs: list[tuple[str, str]], vocab: SubwordVocab,
                   max_len: int = 64) -> list[tuple[list[int], list[int]]]:
    """Subword-encode sentence pairs, dropping any pair whose side exceeds
    max_len subwords."""
    out = []
    for s, t in pairs:
        si = vocab.encode(s).ids
        ti = vocab.encode(t).ids
        if si and ti and len(si) <= max_len and len(ti) <= max_len:
            out.append((si, ti))
    return out


def shuffled_batches(pairs: list, batch_size: int, rng: Rng):
    """Infinite minibatch stream; reshuffles at every epoch wrap."""
    if not pairs:
        raise DataError("empty pair list")
    order = list(range(len(pairs)))
    while True:
        rng.shuffle(order)
        for lo in range(0, len(order), batch_size):
            chunk = [pairs[i] for i in order[lo : lo + batch_size]]
            yield chunk


def interleave(streams: list):
    """Strict round-robin over (infinite) per-direction streams."""
    if not streams:
        raise DataError("interleave needs at least one stream")
    while True:
        for s in streams:
            yield next(s)


def dev_bleu(model: MultilingualNMT, pairs: list[tuple[str, str]],
             vocab: SubwordVocab, direction: tuple[str, str],
             max_len: int = 80, limit: int | None = None,
             decode_batch: int = 64) -> float:
    """Greedy-decode dev sources and score corpus BLEU against references."""
    use = pairs[:limit] if limit else pairs
    if not use:
        raise DataError("empty dev set")
    hyps: list[str] = []
    refs: list[str] = []
    for lo in range(0, len(use), decode_batch):
        chunk = use[lo : lo + decode_batch]
        src_rows = [vocab.encode(s).ids for s, _ in chunk]
        out_rows = model.greedy_decode(src_rows, direction, max_len)
        hyps.extend(vocab.decode(row) for row in out_rows)
        refs.extend(t for _, t in chunk)
    return bleu(hyps, refs)


def select_best(scores: list[tuple[int, dict]]) -> int:
    """Checkpoint step with the best unweighted mean dev BLEU across
    directions; ties resolve to the earliest step.

    scores: [(step, {direction: bleu})], every entry must cover the same
    directions.
    """
    if not scores:
        raise DataError("no checkpoints to select from")
    directions = set(scores[0][1])
    if not directions:
        raise DataError("missing dev set: no per-direction scores")
    for step, table in scores:
        if set(table) != directions:
            raise DataError(f"missing dev set for checkpoint at step {step}")
    best_step, _ = min(
        ((step, table) for step, table in scores),
        key=lambda item: (-(sum(item[1].values()) / len(item[1])), item[0]),
    )
    return best_step
