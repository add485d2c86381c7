"""Character-level transformer over phonetic transcripts.

Transcripts are short strings of uppercase letters, so the vocabulary is the
26 letters plus five specials (31 ids). The same encoder body serves masked
language-model pretraining and 3-class sentiment fine-tuning; the fine-tuning
loop records the per-epoch train/validation curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySplit, NonFiniteLoss, ShapeMismatch
from .neural import Adam, EncoderBlockParams, Linear, encoder_block, init_uniform, positional_encoding, warmup_linear
from .neural import load_checkpoint, save_checkpoint
from .neural import tensor as T
from .neural.tensor import Tensor
from .rng import RandomStream

PAD, CLS, SEP, MASK, UNK = range(5)
_N_SPECIALS = 5
VOCAB_SIZE = _N_SPECIALS + 26
LABELS = ("negative", "neutral", "positive")


def letter_id(ch: str) -> int:
    """A-Z -> token id; anything else -> UNK."""
    o = ord(ch.upper())
    return _N_SPECIALS + o - 65 if 65 <= o <= 90 else UNK


def id_to_char(i: int) -> str:
    return chr(65 + i - _N_SPECIALS) if i >= _N_SPECIALS else ""


@dataclass(frozen=True)
class PhoneticTranscript:
    text: str
    source: str = ""
    cohort: str | None = None


@dataclass
class TokenSequence:
    ids: np.ndarray        # [max_len] int token ids
    specials: np.ndarray   # bool mask, True at CLS/SEP/PAD/MASK/UNK positions

    @property
    def special_positions(self) -> np.ndarray:
        return np.nonzero(self.specials)[0]


def _special_mask(ids: np.ndarray) -> np.ndarray:
    return ids < _N_SPECIALS


def tokenize(t: PhoneticTranscript | str, max_len: int) -> TokenSequence:
    """CLS + character ids + SEP, truncated so SEP survives, padded with PAD."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    text = t.text if isinstance(t, PhoneticTranscript) else t
    body = [letter_id(c) for c in text][: max_len - 2]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1 : 1 + len(body)] = body
    ids[1 + len(body)] = SEP
    return TokenSequence(ids, _special_mask(ids))


def detokenize(seq: TokenSequence) -> str:
    """Letters between CLS and SEP (UNK positions drop out)."""
    out = []
    for i in seq.ids[1:]:
        if i == SEP:
            break
        out.append(id_to_char(int(i)))
    return "".join(out)


def mlm_corrupt(seq: TokenSequence, p: float = 0.15,
                rng: RandomStream | None = None) -> tuple[TokenSequence, dict[int, int]]:
    """Select non-special positions with probability p; of those, 80% become
    MASK, 10% a random letter, 10% stay. Returns (corrupted, {pos: original})."""
    if rng is None:
        raise ValueError("mlm_corrupt needs a RandomStream")
    ids = seq.ids.copy()
    labels: dict[int, int] = {}
    candidates = np.nonzero(~seq.specials)[0]
    if p > 0 and len(candidates):
        selected = candidates[rng.uniform((len(candidates),)) < p]
        for pos in selected:
            labels[int(pos)] = int(ids[pos])
            r = rng.uniform()
            if r < 0.8:
                ids[pos] = MASK
            elif r < 0.9:
                ids[pos] = _N_SPECIALS + rng.integers(26)
    return TokenSequence(ids, _special_mask(ids)), labels


@dataclass
class SentimentResult:
    label: str
    probs: tuple[float, float, float]  # (negative, neutral, positive), sums to 1


@dataclass
class TrainingCurve:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def curve_csv(curve: TrainingCurve) -> str:
    lines = ["epoch,train_loss,val_loss,train_acc,val_acc"]
    for i in range(curve.epochs):
        lines.append(f"{i + 1},{curve.train_loss[i]!r},{curve.val_loss[i]!r},"
                     f"{curve.train_acc[i]!r},{curve.val_acc[i]!r}")
    return "\n".join(lines) + "\n"


@dataclass
class TextModel:
    embed: Tensor
    blocks: list[EncoderBlockParams]
    final_ln_g: Tensor
    final_ln_b: Tensor
    mlm_head: Linear
    cls_head: Linear
    d_model: int
    max_len: int
    dropout_p: float

    @classmethod
    def create(cls, rng: RandomStream, d_model: int = 64, heads: int = 4,
               n_blocks: int = 2, max_len: int = 64, dropout_p: float = 0.1) -> "TextModel":
        return cls(
            embed=init_uniform(rng, d_model, (VOCAB_SIZE, d_model)),
            blocks=[EncoderBlockParams.create(rng, d_model, heads, dropout_p)
                    for _ in range(n_blocks)],
            final_ln_g=Tensor(np.ones(d_model), requires_grad=True),
            final_ln_b=Tensor(np.zeros(d_model), requires_grad=True),
            mlm_head=Linear.create(rng, d_model, VOCAB_SIZE),
            cls_head=Linear.create(rng, d_model, len(LABELS)),
            d_model=d_model,
            max_len=max_len,
            dropout_p=dropout_p,
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {"embed": self.embed, "final_ln_g": self.final_ln_g, "final_ln_b": self.final_ln_b,
               "mlm_head.w": self.mlm_head.w, "mlm_head.b": self.mlm_head.b,
               "cls_head.w": self.cls_head.w, "cls_head.b": self.cls_head.b}
        for i, blk in enumerate(self.blocks):
            out.update(blk.parameters(f"block{i}."))
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            p.data = snap[k].copy()

    def encode(self, ids: np.ndarray, training: bool = False,
               rng: RandomStream | None = None) -> Tensor:
        """Token ids [B, T] -> contextual states [B, T, d]; PAD keys masked out."""
        ids = np.atleast_2d(ids)
        if ids.shape[1] > self.max_len:
            raise ShapeMismatch(f"sequence length {ids.shape[1]} > max_len {self.max_len}")
        h = T.embedding(self.embed, ids) + Tensor(positional_encoding(ids.shape[1], self.d_model))
        h = T.dropout(h, self.dropout_p, rng, training)
        key_mask = (ids == PAD)[:, None, None, :]  # broadcast over heads and queries
        for blk in self.blocks:
            h = encoder_block(h, blk, training=training, rng=rng, mask=key_mask)
        return T.layer_norm(h, self.final_ln_g, self.final_ln_b)

    def mlm_logits(self, ids: np.ndarray, training: bool = False,
                   rng: RandomStream | None = None) -> Tensor:
        return self.mlm_head(self.encode(ids, training, rng))

    def class_logits(self, ids: np.ndarray, training: bool = False,
                     rng: RandomStream | None = None) -> Tensor:
        h = self.encode(ids, training, rng)
        return self.cls_head(T.gather(h, (slice(None), 0)))  # CLS position


def classify(t: PhoneticTranscript | str, model: TextModel) -> SentimentResult:
    """Deterministic inference: CLS state -> linear head -> 3-way softmax."""
    seq = tokenize(t, model.max_len)
    logits = model.class_logits(seq.ids[None, :]).data[0]
    probs = T.softmax(Tensor(logits)).data
    return SentimentResult(LABELS[int(np.argmax(probs))],
                           (float(probs[0]), float(probs[1]), float(probs[2])))


@dataclass
class MlmConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 3e-4
    mask_prob: float = 0.15
    d_model: int = 64
    heads: int = 4
    n_blocks: int = 2
    max_len: int = 64
    dropout_p: float = 0.1


def pretrain_mlm(corpus: list, config: MlmConfig | None = None,
                 seed: int = 0) -> tuple[TextModel, list[float]]:
    """Masked-token pretraining; cross-entropy is taken at corrupted positions
    only. Returns the model and the per-epoch mean loss curve."""
    cfg = config or MlmConfig()
    if not corpus:
        raise EmptySplit("MLM corpus is empty")
    model = TextModel.create(RandomStream(seed, "text", "init"), cfg.d_model,
                             cfg.heads, cfg.n_blocks, cfg.max_len, cfg.dropout_p)
    data_rng = RandomStream(seed, "text", "data")
    mask_rng = RandomStream(seed, "text", "mask")
    drop_rng = RandomStream(seed, "text", "dropout")
    sequences = [tokenize(t, cfg.max_len) for t in corpus]
    opt = Adam(model.parameters(), cfg.learning_rate)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(len(sequences))
        losses: list[float] = []
        for b in range(0, len(order), cfg.batch_size):
            batch = [sequences[int(i)] for i in order[b : b + cfg.batch_size]]
            ids = []
            positions: list[tuple[int, int, int]] = []  # (row, pos, target)
            for row, seq in enumerate(batch):
                corrupted, labels = mlm_corrupt(seq, cfg.mask_prob, mask_rng)
                ids.append(corrupted.ids)
                positions.extend((row, pos, tgt) for pos, tgt in sorted(labels.items()))
            if not positions:
                continue
            ids = np.stack(ids)
            opt.zero_grad()
            logits = model.mlm_logits(ids, training=True, rng=drop_rng)
            rows = np.array([p[0] for p in positions])
            cols = np.array([p[1] for p in positions])
            targets = np.array([p[2] for p in positions])
            loss = T.cross_entropy(T.gather(logits, (rows, cols)), targets)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"MLM epoch {epoch}: loss {loss.data!r}")
            loss.backward()
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)) if losses else 0.0)
    return model, curve


def masked_accuracy(model: TextModel, corpus: list, p: float, seed: int) -> float:
    """Fraction of corrupted positions recovered at argmax (no dropout)."""
    rng = RandomStream(seed, "text", "eval-mask")
    hits = total = 0
    for t in corpus:
        seq = tokenize(t, model.max_len)
        corrupted, labels = mlm_corrupt(seq, p, rng)
        if not labels:
            continue
        pred = model.mlm_logits(corrupted.ids[None, :]).data[0].argmax(axis=-1)
        for pos, tgt in labels.items():
            hits += int(pred[pos] == tgt)
            total += 1
    return hits / total if total else 0.0


@dataclass
class ClassifierConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 3e-4
    warmup_frac: float = 0.1
    d_model: int = 64
    heads: int = 4
    n_blocks: int = 2
    max_len: int = 64
    dropout_p: float = 0.1


def _as_labeled(items) -> list[tuple[PhoneticTranscript, int]]:
    out = []
    for t, label in items:
        if isinstance(label, str):
            if label not in LABELS:
                raise ValueError(f"unknown label {label!r}")
            label = LABELS.index(label)
        out.append((t, int(label)))
    return out


def _eval_classifier(model: TextModel, data: list, batch_size: int) -> tuple[float, float]:
    losses = []
    hits = 0
    for b in range(0, len(data), batch_size):
        chunk = data[b : b + batch_size]
        ids = np.stack([tokenize(t, model.max_len).ids for t, _ in chunk])
        targets = np.array([y for _, y in chunk])
        logits = model.class_logits(ids)
        losses.append(T.cross_entropy(logits, targets).item() * len(chunk))
        hits += int((logits.data.argmax(axis=-1) == targets).sum())
    return float(np.sum(losses) / len(data)), hits / len(data)


def train_classifier(
    train: list, val: list, epochs: int = 15,
    config: ClassifierConfig | None = None, seed: int = 0,
    base: TextModel | None = None,
) -> tuple[TextModel, TrainingCurve]:
    """Fine-tune 3-class sentiment with dropout and a warmup + linear-decay
    learning rate. Returns the model from the best validation-accuracy epoch
    (earliest on ties) plus the full per-epoch curve.

    train/val are iterables of (transcript, label) with labels as strings or
    class indices.
    """
    cfg = config or ClassifierConfig()
    if not train:
        raise EmptySplit("training split is empty")
    if not val:
        raise EmptySplit("validation split is empty")
    train = _as_labeled(train)
    val = _as_labeled(val)

    if base is not None:
        model = TextModel.create(RandomStream(seed, "text", "init"), base.d_model,
                                 base.blocks[0].heads, len(base.blocks),
                                 base.max_len, base.dropout_p)
        model.restore(base.snapshot())
    else:
        model = TextModel.create(RandomStream(seed, "text", "init"), cfg.d_model,
                                 cfg.heads, cfg.n_blocks, cfg.max_len, cfg.dropout_p)
    data_rng = RandomStream(seed, "text", "data")
    drop_rng = RandomStream(seed, "text", "dropout")
    opt = Adam(model.parameters(), cfg.learning_rate)

    curve = TrainingCurve()
    n_batches = max(1, -(-len(train) // cfg.batch_size))
    total_steps = max(1, epochs * n_batches)
    best = (-1.0, -1, None)  # (val_acc, epoch, snapshot)
    step = 0
    for epoch in range(epochs):
        order = data_rng.permutation(len(train))
        losses = []
        hits = 0
        for b in range(0, len(order), cfg.batch_size):
            chunk = [train[int(i)] for i in order[b : b + cfg.batch_size]]
            ids = np.stack([tokenize(t, model.max_len).ids for t, _ in chunk])
            targets = np.array([y for _, y in chunk])
            opt.zero_grad()
            logits = model.class_logits(ids, training=True, rng=drop_rng)
            loss = T.cross_entropy(logits, targets)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"classifier epoch {epoch}: loss {loss.data!r}")
            loss.backward()
            opt.step(lr=cfg.learning_rate * warmup_linear(step, total_steps, cfg.warmup_frac))
            step += 1
            losses.append(loss.item() * len(chunk))
            hits += int((logits.data.argmax(axis=-1) == targets).sum())
        val_loss, val_acc = _eval_classifier(model, val, cfg.batch_size)
        curve.train_loss.append(float(np.sum(losses) / len(train)))
        curve.train_acc.append(hits / len(train))
        curve.val_loss.append(val_loss)
        curve.val_acc.append(val_acc)
        if val_acc > best[0]:
            best = (val_acc, epoch, model.snapshot())
    if best[2] is not None:
        model.restore(best[2])
    return model, curve


# -- persistence -------------------------------------------------------------

def save_text(path, model: TextModel, kind: str = "text-classifier") -> None:
    hyper = {
        "kind": kind,
        "d_model": model.d_model,
        "heads": model.blocks[0].heads if model.blocks else 0,
        "n_blocks": len(model.blocks),
        "max_len": model.max_len,
        "dropout_p": model.dropout_p,
        "labels": list(LABELS),
    }
    save_checkpoint(path, hyper, model.parameters())


def load_text(path) -> TextModel:
    hyper, params = load_checkpoint(path)
    if not str(hyper.get("kind", "")).startswith("text"):
        raise ValueError(f"not a text checkpoint: kind={hyper.get('kind')!r}")
    model = TextModel.create(RandomStream(0), hyper["d_model"], hyper["heads"],
                             hyper["n_blocks"], hyper["max_len"], hyper["dropout_p"])
    for name, tensor in model.parameters().items():
        tensor.data = params[name].copy()
    return model
