"""Classifiers built on a (transplanted, optionally frozen or truncated)
translation encoder.

Single-source: sentence vector q = f_post(f_pool(f_pre(C))) followed by a
softmax projection. The simple head is exactly one d x K projection plus
bias on the pooled states; the complex head wraps pooling in positionwise
feed-forward nets (d -> d/4 -> d/16, tanh, layer-normed inputs).

Dual-source: two separate encoders (independent parameter copies), a
co-attention block feeding per-side feed-forward stacks, max pooling, and
relation features |h_p - h_h| (+) h_p * h_h into a 3-way softmax.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bpe import BOS_ID, EOS_ID, SubwordVocab, UNK_ID
from .errors import DataError, ShapeError
from .layers import LN_EPS, Encoder, ParamSet, make_embedding, uniform_init
from .nmt import ContextSet, pad_ids
from .optim import AdamState, RegularizerConfig, adam_step, clear_grads, clip_global_norm
from .rng import Rng

DOC_TRUNCATE_WORDS = 200


def pool(context: ContextSet, kind: str) -> Tensor:
    """Masked pooling over time: elementwise max or arithmetic mean of the
    unmasked positions."""
    return ad.masked_pool(context.states, context.mask, kind)


def relation_features(h_p: Tensor, h_h: Tensor) -> Tensor:
    """concat(|h_p - h_h|, h_p * h_h); output width 2d."""
    if h_p.data.shape != h_h.data.shape:
        raise ShapeError("relation_features: dim mismatch")
    diff = ad.abs_(ad.add(h_p, ad.neg(h_h)))
    prod = ad.mul(h_p, h_h)
    return ad.concat([diff, prod], axis=1)


def co_attend(c_p: ContextSet, c_h: ContextSet, w: Tensor
              ) -> tuple[Tensor, Tensor]:
    """Bilinear co-attention between premise and hypothesis context sets.

    Affinity A_ij = p_i^T W q_j; each side attends over the other with a
    masked softmax, and returns its states concatenated with the attended
    summary of the other side.
    """
    b, tp, d = c_p.states.data.shape
    if c_h.states.data.shape[0] != b or c_h.states.data.shape[2] != d:
        raise ShapeError("co_attend: incompatible context sets")
    pw = ad.reshape(ad.matmul(ad.reshape(c_p.states, (b * tp, d)), w), (b, tp, d))
    affinity = ad.bmm(pw, ad.transpose_last2(c_h.states))  # (B,Tp,Th)
    w_p = ad.masked_softmax_cols(affinity, c_h.mask)
    summary_p = ad.bmm(w_p, c_h.states)
    w_h = ad.masked_softmax_cols(ad.transpose_last2(affinity), c_p.mask)
    summary_h = ad.bmm(w_h, c_p.states)
    x_p = ad.concat([c_p.states, summary_p], axis=2)
    x_h = ad.concat([c_h.states, summary_h], axis=2)
    return x_p, x_h


class _FF:
    """LN -> linear -> tanh block applied positionwise or on vectors."""

    def __init__(self, ps: ParamSet, prefix: str, d_in: int, d_out: int, rng,
                 init_range: float):
        self.gain = ps.add(f"{prefix}/ln_gain", np.ones(d_in))
        self.bias = ps.add(f"{prefix}/ln_bias", np.zeros(d_in))
        self.w = ps.add(f"{prefix}/W", uniform_init(rng, (d_in, d_out), init_range))

    def apply2d(self, x: Tensor) -> Tensor:
        normed = ad.layer_norm(x, self.gain, self.bias, LN_EPS)
        return ad.tanh(ad.matmul(normed, self.w))

    def apply3d(self, x: Tensor) -> Tensor:
        b, t, d = x.data.shape
        flat = self.apply2d(ad.reshape(x, (b * t, d)))
        return ad.reshape(flat, (b, t, flat.data.shape[1]))


class TextClassifier:
    """Single-source encoder + head; parameter names match the NMT encoder
    ("encoder/...", "embed/shared") so transplant is an identity map."""

    FROZEN_PREFIXES = ("encoder/", "embed/")

    def __init__(self, vocab_size: int, n_classes: int, d_emb: int = 64,
                 d_h: int = 64, n_uni: int = 2, depth: int | None = None,
                 head: str = "complex", pooling: str = "max",
                 init_range: float = 0.08, seed: int = 0):
        if head not in ("simple", "complex"):
            raise ValueError(f"unknown head kind: {head}")
        if pooling not in ("mean", "max"):
            raise ValueError(f"unknown pooling kind: {pooling}")
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.head = head
        self.pooling = pooling
        self.freeze = False
        self.ps = ParamSet()
        rng = Rng(seed).spawn("classifier-init")
        self.embed = make_embedding(self.ps, "embed/shared", vocab_size, d_emb,
                                    rng, init_range)
        self.encoder = Encoder(self.ps, d_emb, d_h, n_uni, rng, init_range)
        if depth is not None:
            self.encoder.set_depth(depth)
        c_dim = self.encoder.out_dim()
        if head == "complex":
            d4 = max(c_dim // 4, 2)
            d16 = max(c_dim // 16, 2)
            self.f_pre = _FF(self.ps, "head/pre", c_dim, d4, rng, init_range)
            self.f_post = _FF(self.ps, "head/post", d4, d16, rng, init_range)
            out_dim = d16
        else:
            self.f_pre = None
            self.f_post = None
            out_dim = c_dim
        self.out_w = self.ps.add("head/out/W",
                                 uniform_init(rng, (out_dim, n_classes), init_range))
        self.out_b = self.ps.add("head/out/b", np.zeros(n_classes))

    def sentence_vector(self, context: ContextSet) -> Tensor:
        if self.head == "complex":
            pre = self.f_pre.apply3d(context.states)
            pooled = pool(ContextSet(pre, context.mask), self.pooling)
            return self.f_post.apply2d(pooled)
        return pool(context, self.pooling)

    def logits_batch(self, ids: np.ndarray, mask: np.ndarray,
                     training: bool = False, rng=None,
                     dropout_rate: float = 0.0) -> Tensor:
        states = self.encoder.encode(self.embed, ids, mask, training, rng,
                                     dropout_rate)
        q = self.sentence_vector(ContextSet(states, mask))
        return ad.add_bias(ad.matmul(q, self.out_w), self.out_b)

    def loss_on_batch(self, batch, reg: RegularizerConfig, training: bool,
                      rng=None) -> Tensor:
        ids, mask, labels = batch
        drop = reg.dropout_rate if training else 0.0
        logits = self.logits_batch(ids, mask, training, rng, drop)
        return ad.smoothed_cross_entropy(logits, labels, reg.label_smoothing)

    def classify(self, ids: list[int]) -> np.ndarray:
        """Class distribution for one id sequence (unbatched, unpadded)."""
        if not ids:
            raise DataError("cannot classify an empty sequence")
        with ad.no_grad():
            arr = np.asarray([ids], dtype=np.int64)
            mask = np.ones((1, len(ids)))
            logits = self.logits_batch(arr, mask)
            return ad.softmax(logits).data[0]

    def predict_batch(self, rows: list[list[int]]) -> np.ndarray:
        with ad.no_grad():
            ids, mask = pad_ids(rows)
            logits = self.logits_batch(ids, mask)
            return logits.data.argmax(axis=1)

    def make_batch(self, encoded_rows: list) -> tuple:
        labels = np.asarray([r[0] for r in encoded_rows], dtype=np.int64)
        ids, mask = pad_ids([r[1] for r in encoded_rows])
        return ids, mask, labels

    def predict_rows(self, encoded_rows: list, batch: int = 64) -> np.ndarray:
        preds = []
        for lo in range(0, len(encoded_rows), batch):
            preds.append(self.predict_batch([r[1] for r in encoded_rows[lo : lo + batch]]))
        return np.concatenate(preds)

    def trainable_names(self) -> list[str]:
        if not self.freeze:
            return list(self.ps)
        return [n for n in self.ps
                if not n.startswith(self.FROZEN_PREFIXES)]


class PairClassifier:
    """Dual-source classifier for premise/hypothesis tasks (3 classes)."""

    FROZEN_PREFIXES = ("premise/", "hypothesis/")

    def __init__(self, vocab_size: int, n_classes: int = 3, d_emb: int = 64,
                 d_h: int = 64, n_uni: int = 2, depth: int | None = None,
                 pooling: str = "max", init_range: float = 0.08, seed: int = 0):
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.pooling = pooling
        self.freeze = False
        self.ps = ParamSet()
        rng = Rng(seed).spawn("pair-classifier-init")
        self.sides = {}
        for side in ("premise", "hypothesis"):
            embed = make_embedding(self.ps, f"{side}/embed/shared", vocab_size,
                                   d_emb, rng, init_range)
            enc = Encoder(self.ps, d_emb, d_h, n_uni, rng, init_range,
                          prefix=f"{side}/encoder")
            if depth is not None:
                enc.set_depth(depth)
            self.sides[side] = (embed, enc)
        c_dim = self.sides["premise"][1].out_dim()
        self.coattn_w = self.ps.add("head/coattn/W",
                                    uniform_init(rng, (c_dim, c_dim), init_range))
        d_h_eff = c_dim
        self.pre = {}
        self.post = {}
        for tag in ("p", "h"):
            self.pre[tag] = (
                _FF(self.ps, f"head/pre_{tag}/l1", 2 * c_dim, d_h_eff, rng, init_range),
                _FF(self.ps, f"head/pre_{tag}/l2", d_h_eff, d_h_eff, rng, init_range),
            )
            self.post[tag] = (
                _FF(self.ps, f"head/post_{tag}/l1", d_h_eff, d_h_eff, rng, init_range),
                _FF(self.ps, f"head/post_{tag}/l2", d_h_eff, d_h_eff, rng, init_range),
            )
        self.out_w = self.ps.add("head/out/W",
                                 uniform_init(rng, (2 * d_h_eff, n_classes), init_range))
        self.out_b = self.ps.add("head/out/b", np.zeros(n_classes))

    def _encode_side(self, side: str, ids, mask, training, rng, drop) -> ContextSet:
        embed, enc = self.sides[side]
        states = enc.encode(embed, ids, mask, training, rng, drop)
        return ContextSet(states, mask)

    def _side_vector(self, tag: str, x: Tensor, mask: np.ndarray) -> Tensor:
        l1, l2 = self.pre[tag]
        h = l1.apply3d(x)
        h = ad.add(h, l2.apply3d(h))  # residual second layer
        pooled = ad.masked_pool(h, mask, self.pooling)
        p1, p2 = self.post[tag]
        v = ad.add(pooled, p1.apply2d(pooled))
        v = ad.add(v, p2.apply2d(v))
        return v

    def logits_batch(self, ids_p, mask_p, ids_h, mask_h, training=False,
                     rng=None, dropout_rate: float = 0.0) -> Tensor:
        c_p = self._encode_side("premise", ids_p, mask_p, training, rng, dropout_rate)
        c_h = self._encode_side("hypothesis", ids_h, mask_h, training, rng, dropout_rate)
        x_p, x_h = co_attend(c_p, c_h, self.coattn_w)
        h_p = self._side_vector("p", x_p, mask_p)
        h_h = self._side_vector("h", x_h, mask_h)
        rel = relation_features(h_p, h_h)
        return ad.add_bias(ad.matmul(rel, self.out_w), self.out_b)

    def loss_on_batch(self, batch, reg: RegularizerConfig, training: bool,
                      rng=None) -> Tensor:
        ids_p, mask_p, ids_h, mask_h, labels = batch
        drop = reg.dropout_rate if training else 0.0
        logits = self.logits_batch(ids_p, mask_p, ids_h, mask_h, training, rng, drop)
        return ad.smoothed_cross_entropy(logits, labels, reg.label_smoothing)

    def classify(self, ids_p: list[int], ids_h: list[int]) -> np.ndarray:
        if not ids_p or not ids_h:
            raise DataError("cannot classify an empty sequence pair")
        with ad.no_grad():
            logits = self.logits_batch(
                np.asarray([ids_p], dtype=np.int64), np.ones((1, len(ids_p))),
                np.asarray([ids_h], dtype=np.int64), np.ones((1, len(ids_h))),
            )
            return ad.softmax(logits).data[0]

    def make_batch(self, encoded_rows: list) -> tuple:
        labels = np.asarray([r[0] for r in encoded_rows], dtype=np.int64)
        ids_p, mask_p = pad_ids([r[1] for r in encoded_rows])
        ids_h, mask_h = pad_ids([r[2] for r in encoded_rows])
        return ids_p, mask_p, ids_h, mask_h, labels

    def predict_rows(self, encoded_rows: list, batch: int = 64) -> np.ndarray:
        preds = []
        with ad.no_grad():
            for lo in range(0, len(encoded_rows), batch):
                chunk = encoded_rows[lo : lo + batch]
                ids_p, mask_p = pad_ids([r[1] for r in chunk])
                ids_h, mask_h = pad_ids([r[2] for r in chunk])
                logits = self.logits_batch(ids_p, mask_p, ids_h, mask_h)
                preds.append(logits.data.argmax(axis=1))
        return np.concatenate(preds)

    def trainable_names(self) -> list[str]:
        if not self.freeze:
            return list(self.ps)
        return [n for n in self.ps
                if not n.startswith(self.FROZEN_PREFIXES)]


def encode_rows(rows: list, vocab: SubwordVocab, n_classes: int) -> list:
    """Subword-encode labeled rows; text is truncated to the first 200
    whitespace words, then wrapped in bos/eos."""
    out = []
    for row in rows:
        label = row[0]
        if not 0 <= label < n_classes:
            raise DataError(f"label {label} out of range [0,{n_classes})")
        encoded = [label]
        for text in row[1:]:
            words = text.split()[:DOC_TRUNCATE_WORDS]
            ids = vocab.encode(" ".join(words)).ids
            encoded.append([BOS_ID] + ids + [EOS_ID])
        out.append(tuple(encoded))
    return out


def unk_fraction(encoded_rows: list) -> float:
    total = 0
    unk = 0
    for row in encoded_rows:
        for ids in row[1:]:
            total += len(ids)
            unk += sum(1 for i in ids if i == UNK_ID)
    return unk / total if total else 0.0


def accuracy(model, encoded_rows: list) -> float:
    if not encoded_rows:
        raise DataError("cannot evaluate on an empty dataset")
    preds = model.predict_rows(encoded_rows)
    labels = np.asarray([r[0] for r in encoded_rows])
    return float((preds == labels).mean())


def train_classifier(model, train_rows: list, dev_rows: list,
                     adam: AdamState, reg: RegularizerConfig, steps: int,
                     batch_size: int, rng: Rng, eval_every: int = 20,
                     freeze: bool = False, clip_norm: float = 5.0,
                     probe=None):
    """Minibatch training with dev-accuracy model selection.

    Keeps the parameter snapshot with the highest dev accuracy (ties to the
    earliest step) and restores it before returning. With freeze set, only
    head parameters receive updates. ``probe(step)`` may record extra
    metrics at every eval point. Returns (trace, best_step, best_acc);
    trace rows are (step, train_loss, dev_acc).
    """
    if not train_rows:
        raise DataError("empty training dataset")
    model.freeze = freeze
    names = model.trainable_names()
    params = model.ps.as_dict()
    order = list(range(len(train_rows)))
    trace = []
    best_acc = -1.0
    best_step = 0
    best_state = model.ps.state_arrays()
    pos = len(order)
    step = 0
    while step < steps:
        if pos >= len(order):
            rng.shuffle(order)
            pos = 0
        chunk = [train_rows[i] for i in order[pos : pos + batch_size]]
        pos += batch_size
        batch = model.make_batch(chunk)
        loss = model.loss_on_batch(batch, reg, training=True, rng=rng)
        ad.backward(loss)
        clip_global_norm(params, clip_norm, names)
        adam_step(params, adam, reg, names)
        clear_grads(params)
        step += 1
        if step % eval_every == 0 or step == steps:
            dev_acc = accuracy(model, dev_rows) if dev_rows else 0.0
            trace.append((step, loss.item(), dev_acc))
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_step = step
                best_state = model.ps.state_arrays()
            if probe is not None:
                probe(step)
    model.ps.load_arrays(best_state)
    return trace, best_step, best_acc
