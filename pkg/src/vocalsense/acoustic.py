"""Self-supervised acoustic pathway.

A strided 1-D conv stack turns canonical audio into latent frames (hop 320
samples, 20 ms); a grouped Gumbel-softmax quantizer snaps frames to a finite
code inventory; a small transformer predicts masked frames against negatives
(contrastive objective). Trained codes map to a phonetic alphabet, giving the
pseudo-transcripts the text side of the pipeline consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import Segment
from .errors import DegenerateVector, EmptyEncoding, NonFiniteLoss
from .neural import Adam, EncoderBlockParams, Linear, encoder_block, init_uniform, positional_encoding
from .neural import load_checkpoint, save_checkpoint
from .neural import tensor as T
from .neural.tensor import Tensor
from .rng import RandomStream

# (kernel, stride) per conv layer; composed hop 320 samples, receptive field 400
STRIDE_SCHEDULE = ((10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2))

BLANK = "-"
VOWELS = "AEOIU"  # assignment order for the most-used codes
CONSONANTS = "BCDGHKLMNPRSTWYZ"


def frame_count(n_samples: int, schedule=STRIDE_SCHEDULE) -> int:
    """Compose floor((L - k) / s) + 1 through the stack; 0 once any layer starves."""
    length = n_samples
    for k, s in schedule:
        if length < k:
            return 0
        length = (length - k) // s + 1
    return length


def _hop(schedule=STRIDE_SCHEDULE) -> int:
    hop = 1
    for _, s in schedule:
        hop *= s
    return hop


def _receptive_field(schedule=STRIDE_SCHEDULE) -> int:
    rf, jump = 1, 1
    for k, s in schedule:
        rf += (k - 1) * jump
        jump *= s
    return rf


@dataclass
class LatentFrames:
    frames: Tensor  # [F, d_latent]
    frame_rate: float
    receptive_field: int


@dataclass
class Codebooks:
    """groups x entries_per_group code vectors of dimension d_code / groups."""

    entries: Tensor  # [G, V, d_code // G]
    temperature: float = 2.0

    @property
    def groups(self) -> int:
        return self.entries.shape[0]

    @property
    def entries_per_group(self) -> int:
        return self.entries.shape[1]

    @property
    def vocabulary(self) -> int:
        return self.entries_per_group**self.groups


@dataclass
class QuantizedUnits:
    ids: np.ndarray       # [F] composite code ids in [0, V^G)
    vectors: Tensor       # [F, d_code], rows drawn from the code inventory
    soft: Tensor | None = None   # [F, G, V] Gumbel-soft assignments (training only)
    probs: Tensor | None = None  # [F, G, V] plain softmax of logits (training only)


@dataclass
class SpanMask:
    masked: np.ndarray            # bool per frame
    spans: list[tuple[int, int]]  # merged (start, length) runs


@dataclass
class ConvLayer:
    w: Tensor
    b: Tensor
    ln_g: Tensor
    ln_b: Tensor
    stride: int


@dataclass
class AcousticEncoder:
    conv: list[ConvLayer]
    proj: Linear               # d_latent -> groups * entries_per_group logits
    codebooks: Codebooks
    mask_embed: Tensor         # learned replacement for masked frames
    blocks: list[EncoderBlockParams]
    contrast_head: Linear      # context states -> code space for the loss
    d_latent: int
    d_model: int
    sample_rate: int = 16000

    @classmethod
    def create(cls, rng: RandomStream, d_latent: int = 64, d_model: int = 64,
               groups: int = 2, entries_per_group: int = 16, n_blocks: int = 2,
               heads: int = 4, dropout_p: float = 0.05) -> "AcousticEncoder":
        if d_model % groups:
            raise ValueError("d_model must divide evenly across codebook groups")
        conv = []
        c_in = 1
        for k, s in STRIDE_SCHEDULE:
            conv.append(ConvLayer(
                w=init_uniform(rng, k * c_in, (k, c_in, d_latent)),
                b=Tensor(np.zeros(d_latent), requires_grad=True),
                ln_g=Tensor(np.ones(d_latent), requires_grad=True),
                ln_b=Tensor(np.zeros(d_latent), requires_grad=True),
                stride=s,
            ))
            c_in = d_latent
        return cls(
            conv=conv,
            proj=Linear.create(rng, d_latent, groups * entries_per_group),
            codebooks=Codebooks(init_uniform(rng, entries_per_group,
                                             (groups, entries_per_group, d_model // groups))),
            mask_embed=init_uniform(rng, d_model, (d_model,)),
            blocks=[EncoderBlockParams.create(rng, d_model, heads, dropout_p)
                    for _ in range(n_blocks)],
            contrast_head=Linear.create(rng, d_model, d_model),
            d_latent=d_latent,
            d_model=d_model,
        )

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv):
            out[f"conv{i}.w"] = layer.w
            out[f"conv{i}.b"] = layer.b
            out[f"conv{i}.ln_g"] = layer.ln_g
            out[f"conv{i}.ln_b"] = layer.ln_b
        out["proj.w"] = self.proj.w
        out["proj.b"] = self.proj.b
        out["codebooks"] = self.codebooks.entries
        out["mask_embed"] = self.mask_embed
        out["contrast_head.w"] = self.contrast_head.w
        out["contrast_head.b"] = self.contrast_head.b
        for i, blk in enumerate(self.blocks):
            out.update(blk.parameters(f"block{i}."))
        return out


def conv_encode(s: Segment, enc: AcousticEncoder) -> LatentFrames:
    """Run the conv stack: per layer conv1d, layer norm over channels, GELU."""
    if frame_count(s.n_samples) < 1:
        raise EmptyEncoding(f"{s.n_samples} samples yield zero frames")
    x = Tensor(s.samples[:, None])
    for layer in enc.conv:
        x = T.conv1d(x, layer.w, layer.b, layer.stride)
        x = T.layer_norm(x, layer.ln_g, layer.ln_b)
        x = T.gelu(x)
    return LatentFrames(x, enc.sample_rate / _hop(), _receptive_field())


def composite_ids(per_group: np.ndarray, entries_per_group: int) -> np.ndarray:
    """[F, G] per-group indices -> [F] composite ids, group 0 most significant."""
    groups = per_group.shape[1]
    weights = entries_per_group ** np.arange(groups - 1, -1, -1)
    return (per_group * weights).sum(axis=1)


LOGIT_SCALE = 8.0  # keeps code picks content-driven against unit Gumbel noise


def quantize(frames: LatentFrames, enc: AcousticEncoder, training: bool = False,
             rng: RandomStream | None = None, temperature: float | None = None) -> QuantizedUnits:
    """Snap latent frames to one code per group.

    Inference takes the argmax per group (ties to the lowest index). Training
    draws a Gumbel-softmax sample and is straight-through: the hard one-hot
    goes forward, the soft distribution carries the gradient.
    """
    cb = enc.codebooks
    groups, v = cb.groups, cb.entries_per_group
    logits = (enc.proj(frames.frames) * LOGIT_SCALE).reshape(-1, groups, v)  # [F, G, V]

    probs = None
    if training:
        if rng is None:
            raise ValueError("training-mode quantization needs a RandomStream")
        tau = cb.temperature if temperature is None else temperature
        noisy = logits + Tensor(rng.gumbel(logits.shape))
        soft = T.softmax(noisy * (1.0 / tau), axis=-1)
        probs = T.softmax(logits, axis=-1)
        pick = soft.data.argmax(axis=-1)                      # [F, G]
        hard = np.zeros_like(soft.data)
        np.put_along_axis(hard, pick[:, :, None], 1.0, axis=-1)
        onehot = T.straight_through(soft, hard)
    else:
        pick = logits.data.argmax(axis=-1)
        hard = np.zeros(logits.shape)
        np.put_along_axis(hard, pick[:, :, None], 1.0, axis=-1)
        soft = None
        onehot = Tensor(hard)

    # [F, G, V] x [G, V, D/G] -> [F, G, D/G] -> [F, D]
    chosen = T.matmul(onehot.swapaxes(0, 1), cb.entries).swapaxes(0, 1)
    vectors = chosen.reshape(pick.shape[0], -1)
    return QuantizedUnits(composite_ids(pick, v), vectors, soft, probs)


def span_mask(n_frames: int, p: float, span: int, rng: RandomStream) -> SpanMask:
    """Bernoulli(p) span starts, each covering `span` frames, clipped and merged."""
    if span < 1:
        raise ValueError("span must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("start probability must be in [0, 1]")
    starts = rng.uniform((n_frames,)) < p if n_frames else np.zeros(0, bool)
    masked = np.zeros(n_frames, dtype=bool)
    for i in np.nonzero(starts)[0]:
        masked[i : i + span] = True
    spans = []
    i = 0
    while i < n_frames:
        if masked[i]:
            j = i
            while j < n_frames and masked[j]:
                j += 1
            spans.append((i, j - i))
            i = j
        else:
            i += 1
    return SpanMask(masked, spans)


def _unit_rows(x: Tensor, what: str) -> Tensor:
    norm = T.sqrt(T.tsum(x * x, axis=-1, keepdims=True))
    if np.any(norm.data == 0.0):
        raise DegenerateVector(f"zero-norm {what} vector in cosine similarity")
    return x / norm


def contrastive_loss(context: Tensor, targets: QuantizedUnits, mask: SpanMask,
                     k_distractors: int, kappa: float, rng: RandomStream) -> Tensor:
    """Mean over masked frames of -log softmax of cos(c_t, q_t)/kappa against
    distractor codes drawn uniformly from the other masked frames.

    Returns exactly 0 when nothing is masked or no distractors are requested.
    """
    masked_idx = np.nonzero(mask.masked)[0]
    m = len(masked_idx)
    if m == 0:
        return Tensor(0.0)
    c = _unit_rows(T.gather(context, masked_idx), "context")
    q = _unit_rows(T.gather(targets.vectors, masked_idx), "target")

    if k_distractors > 0 and m > 1:
        draws = rng.integers(m - 1, (m, k_distractors))
        draws = draws + (draws >= np.arange(m)[:, None])  # skip self
        cand_idx = np.concatenate([np.arange(m)[:, None], draws], axis=1)
    else:
        cand_idx = np.arange(m)[:, None]
    cand = T.gather(q, cand_idx)                              # [m, K+1, d]
    cos = T.tsum(c.reshape(m, 1, -1) * cand, axis=-1)         # [m, K+1]
    return T.cross_entropy(cos * (1.0 / kappa), np.zeros(m, dtype=int))


def diversity_penalty(probs: Tensor, sharpen: float = 0.1) -> Tensor:
    """1 - H/H_max of the frame-mean code distribution, averaged over groups.

    The noise-free softmax is re-sharpened at a low temperature first so the
    distribution tracks what argmax inference will actually pick; without
    that, near-uniform logits score full entropy while the argmax sits on one
    code. Zero when every code is used equally; keeps tiny models from
    collapsing onto a few codes.
    """
    sharp = T.softmax(T.log(probs + 1e-12) * (1.0 / sharpen), axis=-1)
    pbar = T.tmean(sharp, axis=0)  # [G, V]
    v = pbar.shape[-1]
    h = -T.tsum(pbar * T.log(pbar + 1e-12), axis=-1)
    return T.tmean(1.0 - h * (1.0 / np.log(v)))


@dataclass
class AcousticPretrainConfig:
    epochs: int = 5
    batch_size: int = 4
    learning_rate: float = 2e-3
    mask_prob: float = 0.065
    mask_span: int = 10
    distractors: int = 10
    kappa: float = 0.1
    diversity_weight: float = 0.1
    diversity_boost: float = 1.0    # stronger early pressure spreads codes fast
    diversity_boost_frac: float = 0.15
    gumbel_start: float = 2.0
    gumbel_end: float = 0.5
    # model geometry (desk-scale defaults, small enough to train on a laptop CPU)
    d_latent: int = 64
    d_model: int = 64
    groups: int = 2
    entries_per_group: int = 16
    n_blocks: int = 2
    heads: int = 4
    dropout_p: float = 0.05


@dataclass
class PretrainResult:
    encoder: AcousticEncoder
    loss_curve: list[float]           # per-epoch mean contrastive loss
    diversity_curve: list[float]      # per-epoch mean diversity penalty
    usage: np.ndarray                 # composite-id counts over the corpus
    alphabet: list[str]


def _context_forward(enc: AcousticEncoder, latent: Tensor, masked: np.ndarray,
                     training: bool, rng: RandomStream | None) -> Tensor:
    n = latent.shape[0]
    keep = Tensor((~masked[:, None]).astype(np.float64))
    fill = Tensor(masked[:, None].astype(np.float64))
    h = latent * keep + enc.mask_embed.reshape(1, -1) * fill
    h = h + Tensor(positional_encoding(n, enc.d_model))
    for blk in enc.blocks:
        h = encoder_block(h, blk, training=training, rng=rng)
    return h


def code_usage(enc: AcousticEncoder, corpus: list[Segment]) -> np.ndarray:
    """Composite-id histogram over a corpus at inference settings."""
    counts = np.zeros(enc.codebooks.vocabulary, dtype=np.int64)
    for seg in corpus:
        units = quantize(conv_encode(seg, enc), enc)
        np.add.at(counts, units.ids, 1)
    return counts


def build_alphabet(usage: np.ndarray) -> list[str]:
    """id -> character map: id 0 is BLANK, the most-used codes become vowels,
    everything else cycles through the consonant inventory by ascending id."""
    size = len(usage)
    chars = [""] * size
    chars[0] = BLANK
    others = [i for i in range(1, size)]
    by_usage = sorted(others, key=lambda i: (-int(usage[i]), i))
    vowel_ids = by_usage[: len(VOWELS)]
    for ch, i in zip(VOWELS, vowel_ids):
        chars[i] = ch
    rest = sorted(set(others) - set(vowel_ids))
    for j, i in enumerate(rest):
        chars[i] = CONSONANTS[j % len(CONSONANTS)]
    return chars


def transcribe(units: QuantizedUnits, alphabet) -> str:
    """Map each frame id to its character and delete BLANKs. Runs are kept
    as-is (no repeat collapse), so steady codes show up as 'AAA'-style runs."""
    return "".join(c for c in (alphabet[i] for i in units.ids) if c != BLANK)


def pretrain(corpus: list[Segment], config: AcousticPretrainConfig | None = None,
             seed: int = 0) -> PretrainResult:
    """Contrastive pretraining loop; bit-reproducible for a fixed seed.

    Per batch: conv-encode, span-mask, quantize (Gumbel straight-through),
    contextualise with the transformer, score masked frames against
    distractors, and take an Adam step. Gumbel temperature anneals linearly
    across all steps. Raises NonFiniteLoss with the failing step in the
    message if the loss ever leaves the reals.
    """
    cfg = config or AcousticPretrainConfig()
    if not corpus:
        raise ValueError("pretraining corpus is empty")
    enc = AcousticEncoder.create(
        RandomStream(seed, "acoustic", "init"), cfg.d_latent, cfg.d_model,
        cfg.groups, cfg.entries_per_group, cfg.n_blocks, cfg.heads, cfg.dropout_p)
    data_rng = RandomStream(seed, "acoustic", "data")
    mask_rng = RandomStream(seed, "acoustic", "mask")
    gumbel_rng = RandomStream(seed, "acoustic", "gumbel")
    drop_rng = RandomStream(seed, "acoustic", "dropout")

    opt = Adam(enc.parameters(), cfg.learning_rate)
    n_batches = max(1, -(-len(corpus) // cfg.batch_size))
    total_steps = max(1, cfg.epochs * n_batches)
    curve: list[float] = []
    div_curve: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(len(corpus))
        epoch_main: list[float] = []
        epoch_div: list[float] = []
        for b in range(n_batches):
            batch = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(batch) == 0:
                continue
            frac = step / max(1, total_steps - 1)
            tau = cfg.gumbel_start + (cfg.gumbel_end - cfg.gumbel_start) * frac
            w_div = cfg.diversity_boost if frac < cfg.diversity_boost_frac else cfg.diversity_weight
            opt.zero_grad()
            main = Tensor(0.0)
            div = Tensor(0.0)
            for i in batch:
                seg = corpus[int(i)]
                latent = conv_encode(seg, enc)
                n_frames = latent.frames.shape[0]
                mask = span_mask(n_frames, cfg.mask_prob, cfg.mask_span, mask_rng)
                units = quantize(latent, enc, training=True, rng=gumbel_rng, temperature=tau)
                ctx = enc.contrast_head(
                    _context_forward(enc, latent.frames, mask.masked, True, drop_rng))
                main = main + contrastive_loss(ctx, units, mask, cfg.distractors, cfg.kappa, mask_rng)
                div = div + diversity_penalty(units.probs)
            main = main * (1.0 / len(batch))
            div = div * (1.0 / len(batch))
            total = main + w_div * div
            if not np.isfinite(total.data):
                raise NonFiniteLoss(f"epoch {epoch} step {step}: loss {total.data!r}")
            total.backward()
            opt.step()
            epoch_main.append(main.item())
            epoch_div.append(div.item())
            step += 1
        curve.append(float(np.mean(epoch_main)))
        div_curve.append(float(np.mean(epoch_div)))
    usage = code_usage(enc, corpus)
    return PretrainResult(enc, curve, div_curve, usage, build_alphabet(usage))


def encode_and_transcribe(seg: Segment, enc: AcousticEncoder, alphabet) -> str:
    return transcribe(quantize(conv_encode(seg, enc), enc), alphabet)


# -- persistence -------------------------------------------------------------

def save_acoustic(path, enc: AcousticEncoder, alphabet: list[str]) -> None:
    hyper = {
        "kind": "acoustic",
        "d_latent": enc.d_latent,
        "d_model": enc.d_model,
        "groups": enc.codebooks.groups,
        "entries_per_group": enc.codebooks.entries_per_group,
        "heads": enc.blocks[0].heads if enc.blocks else 0,
        "n_blocks": len(enc.blocks),
        "dropout_p": enc.blocks[0].dropout_p if enc.blocks else 0.0,
        "stride_schedule": [list(p) for p in STRIDE_SCHEDULE],
        "sample_rate": enc.sample_rate,
        "alphabet": list(alphabet),
    }
    save_checkpoint(path, hyper, enc.parameters())


def load_acoustic(path) -> tuple[AcousticEncoder, list[str]]:
    hyper, params = load_checkpoint(path)
    if hyper.get("kind") != "acoustic":
        raise ValueError(f"not an acoustic checkpoint: kind={hyper.get('kind')!r}")
    enc = AcousticEncoder.create(
        RandomStream(0), hyper["d_latent"], hyper["d_model"], hyper["groups"],
        hyper["entries_per_group"], hyper["n_blocks"], hyper["heads"],
        hyper["dropout_p"])
    enc.sample_rate = hyper["sample_rate"]
    for name, tensor in enc.parameters().items():
        tensor.data = params[name].copy()
    return enc, list(hyper["alphabet"])
