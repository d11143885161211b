"""Text-conditioned autoregressive motion-token generation: a small word
vocabulary with UNK fallback stands in for a pretrained text encoder, a
decoder-only transformer attends bidirectionally over the text prefix and
causally over motion tokens, and sampling walks token-by-token to EOS.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import nn
from .motion_data import clip_from_rows
from .kinematics import fk_keypoints
from .tokenizer import DivergenceError, TokenizerModel, TrainingCurve, detokenize_tokens

UNK_ID = 0

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class Vocabulary:
    """Motion ids live in [0, K); BOS/EOS/PAD follow at K, K+1, K+2. Words
    map to a separate text id space with UNK at 0."""

    motion_vocab: int                 # K = stage-1 codebook size
    words: tuple[str, ...]            # text ids 1..len(words); 0 is UNK

    def __post_init__(self):
        if self.motion_vocab < 1:
            raise ValueError("motion_vocab must be positive")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    @property
    def bos(self) -> int:
        return self.motion_vocab

    @property
    def eos(self) -> int:
        return self.motion_vocab + 1

    @property
    def pad(self) -> int:
        return self.motion_vocab + 2

    @property
    def motion_ids(self) -> int:
        """Size of the motion-side id space including the control ids."""
        return self.motion_vocab + 3

    @property
    def text_ids(self) -> int:
        return len(self.words) + 1

    @property
    def word_to_id(self) -> dict:
        return {w: i + 1 for i, w in enumerate(self.words)}


def build_vocabulary(texts, motion_vocab: int) -> Vocabulary:
    """Sorted word list over the corpus; sorting keeps ids reproducible."""
    words = set()
    for t in texts:
        words.update(_WORD_RE.findall(t.lower()))
    return Vocabulary(motion_vocab=motion_vocab, words=tuple(sorted(words)))


def text_tokenize(text: str, vocab: Vocabulary) -> list:
    """Lowercase words/digit runs to ids; unknown words become UNK."""
    table = vocab.word_to_id
    return [table.get(w, UNK_ID) for w in _WORD_RE.findall(text.lower())]


class TokenSequence(NamedTuple):
    text_ids: tuple
    motion_ids: tuple


@dataclass(frozen=True)
class GeneratorConfig:
    layers: int = 2
    heads: int = 4
    embed_dim: int = 64
    ff_dim: int = 256
    max_seq_len: int = 384
    lr: float = 3e-4
    lr_final: float | None = None
    warmup_steps: int = 0
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    temperature: float = 1.0
    top_k: int = 50
    max_len: int = 256

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.max_seq_len < 2:
            raise ValueError("need at least one layer and a usable sequence length")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in (
            "layers", "heads", "embed_dim", "ff_dim", "max_seq_len", "lr",
            "lr_final", "warmup_steps", "batch_size", "steps", "seed",
            "temperature", "top_k", "max_len")}

    @staticmethod
    def from_dict(doc: dict) -> "GeneratorConfig":
        return GeneratorConfig(**doc)


def build_prefix_mask(n_text: int, n_motion: int) -> np.ndarray:
    """allowed(q, k): every position sees all text; motion positions are
    causal over motion; text positions never look at motion."""
    if n_text < 0 or n_motion < 0:
        raise ValueError("lengths must be non-negative")
    S = n_text + n_motion
    q = np.arange(S)[:, None]
    k = np.arange(S)[None, :]
    return (k < n_text) | ((q >= n_text) & (k <= q))


# ---------------------------------------------------------------------------
# model


def init_generator_params(config: GeneratorConfig, vocab: Vocabulary,
                          rng: np.random.Generator) -> dict:
    E, F = config.embed_dim, config.ff_dim
    p: dict[str, nn.Tensor] = {}

    def mat(name, rows, cols, std):
        p[name] = nn.parameter(rng.normal(0.0, std, (rows, cols)))

    mat("text_emb", vocab.text_ids, E, 0.02)
    mat("motion_emb", vocab.motion_ids, E, 0.02)
    mat("pos_text", config.max_seq_len, E, 0.02)
    mat("pos_motion", config.max_seq_len, E, 0.02)
    out_std = 0.02 / math.sqrt(2.0 * config.layers)
    for l in range(config.layers):
        p[f"l{l}_ln1_g"] = nn.parameter(np.ones(E))
        mat(f"l{l}_wq", E, E, 0.02)
        mat(f"l{l}_wk", E, E, 0.02)
        mat(f"l{l}_wv", E, E, 0.02)
        mat(f"l{l}_wo", E, E, out_std)
        p[f"l{l}_ln2_g"] = nn.parameter(np.ones(E))
        mat(f"l{l}_w1", E, F, 0.02)
        p[f"l{l}_b1"] = nn.parameter(np.zeros(F))
        mat(f"l{l}_w2", F, E, out_std)
        p[f"l{l}_b2"] = nn.parameter(np.zeros(E))
    p["final_g"] = nn.parameter(np.ones(E))
    # zero output projection: training starts from a uniform softmax
    p["out_w"] = nn.parameter(np.zeros((E, vocab.motion_ids)))
    return p


def _attention(p, x, allowed, config: GeneratorConfig, l: int):
    B, S, E = x.data.shape
    h, hd = config.heads, config.head_dim
    a = nn.rmsnorm(x, p[f"l{l}_ln1_g"])

    def split_heads(t):
        return nn.transpose(nn.reshape(t, (B, S, h, hd)), (0, 2, 1, 3))

    q = split_heads(nn.matmul(a, p[f"l{l}_wq"]))
    k = split_heads(nn.matmul(a, p[f"l{l}_wk"]))
    v = split_heads(nn.matmul(a, p[f"l{l}_wv"]))
    scores = nn.scale(nn.matmul(q, nn.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    scores = nn.masked_fill(scores, ~allowed[:, None, :, :], -1e30)
    ctx = nn.matmul(nn.softmax(scores, axis=-1), v)
    ctx = nn.reshape(nn.transpose(ctx, (0, 2, 1, 3)), (B, S, E))
    return x + nn.matmul(ctx, p[f"l{l}_wo"])


def _ffn(p, x, config: GeneratorConfig, l: int):
    a = nn.rmsnorm(x, p[f"l{l}_ln2_g"])
    hidden = nn.relu(nn.matmul(a, p[f"l{l}_w1"]) + p[f"l{l}_b1"])
    return x + nn.matmul(hidden, p[f"l{l}_w2"]) + p[f"l{l}_b2"]


def forward_batch(params, config: GeneratorConfig, text_ids: np.ndarray,
                  motion_in: np.ndarray, n_text: np.ndarray, n_motion: np.ndarray):
    """Logits (B, S_motion, vocab) for motion positions. text_ids (B, S_text)
    and motion_in (B, S_motion) are right-padded; the per-sample lengths
    drive the attention mask so pad positions are never keys."""
    B, S_t = text_ids.shape
    S_m = motion_in.shape[1]
    if S_t + S_m > config.max_seq_len:
        raise ValueError(f"sequence length {S_t + S_m} exceeds max {config.max_seq_len}")
    q = np.arange(S_t + S_m)[None, :, None]
    k = np.arange(S_t + S_m)[None, None, :]
    nt = np.asarray(n_text)[:, None, None]
    nm = np.asarray(n_motion)[:, None, None]
    # real text keys for everyone; causal real motion keys for motion queries.
    # pad slots are never keys, so per-sample masks match build_prefix_mask
    # applied to the unpadded sequence
    allowed = (k < nt) | ((q >= S_t) & (k >= S_t) & (k <= q) & (k < S_t + nm))
    te = nn.embedding_lookup(params["text_emb"], text_ids)
    te = te + nn.getitem(params["pos_text"], slice(0, S_t))
    me = nn.embedding_lookup(params["motion_emb"], motion_in)
    me = me + nn.getitem(params["pos_motion"], slice(0, S_m))
    x = nn.concat([te, me], axis=1)
    for l in range(config.layers):
        x = _attention(params, x, allowed, config, l)
        x = _ffn(params, x, config, l)
    x = nn.rmsnorm(x, params["final_g"])
    motion_x = nn.getitem(x, (slice(None), slice(S_t, None)))
    return nn.matmul(motion_x, params["out_w"])


def forward_sequence(params, config: GeneratorConfig, text_ids, motion_in):
    """Single-sequence logits (len(motion_in), vocab)."""
    text_ids = np.asarray(text_ids, dtype=np.int64).reshape(1, -1)
    motion_in = np.asarray(motion_in, dtype=np.int64).reshape(1, -1)
    logits = forward_batch(params, config, text_ids, motion_in,
                           np.array([text_ids.shape[1]]), np.array([motion_in.shape[1]]))
    return nn.getitem(logits, 0)


def nll_loss(logits, targets, pad_id: int):
    """Mean -log p over motion positions whose target is not PAD."""
    return nn.cross_entropy(logits, np.asarray(targets), ignore_index=pad_id)


# ---------------------------------------------------------------------------
# training


@dataclass
class GeneratorModel:
    config: GeneratorConfig
    params: dict
    vocab: Vocabulary
    tokenizer_hash: str = ""


def _pack_batch(vocab: Vocabulary, seqs: list):
    """Right-pad a list of TokenSequence into id arrays plus lengths.
    Motion input is BOS + ids; the target appends EOS and pads with PAD."""
    B = len(seqs)
    n_text = np.array([len(s.text_ids) for s in seqs], dtype=np.int64)
    n_motion = np.array([len(s.motion_ids) + 1 for s in seqs], dtype=np.int64)
    S_t, S_m = max(int(n_text.max()), 1), int(n_motion.max())
    text = np.full((B, S_t), UNK_ID, dtype=np.int64)
    motion_in = np.full((B, S_m), vocab.pad, dtype=np.int64)
    targets = np.full((B, S_m), vocab.pad, dtype=np.int64)
    for b, s in enumerate(seqs):
        text[b, :len(s.text_ids)] = s.text_ids
        ids = list(s.motion_ids)
        motion_in[b, 0] = vocab.bos
        motion_in[b, 1:1 + len(ids)] = ids
        targets[b, :len(ids)] = ids
        targets[b, len(ids)] = vocab.eos
    return text, motion_in, targets, n_text, n_motion


def train_generator(config: GeneratorConfig, sequences: list, vocab: Vocabulary,
                    log_every: int = 0) -> tuple[GeneratorModel, TrainingCurve]:
    """Seeded Adam on next-token NLL over (text, motion-token) pairs."""
    if not sequences:
        raise ValueError("empty token corpus")
    seqs = [TokenSequence(tuple(s[0]), tuple(s[1])) if not isinstance(s, TokenSequence) else s
            for s in sequences]
    for s in seqs:
        if any(i < 0 or i >= vocab.motion_vocab for i in s.motion_ids):
            raise ValueError("motion token outside the stage-1 codebook")
    rng = np.random.default_rng(config.seed)
    params = init_generator_params(config, vocab, rng)
    state = nn.AdamState(lr=config.lr)
    curve = TrainingCurve()
    order: list[int] = []
    for step in range(1, config.steps + 1):
        if config.warmup_steps and step <= config.warmup_steps:
            state.lr = config.lr * step / config.warmup_steps
        elif config.lr_final is not None:
            u = (step - config.warmup_steps - 1) / max(1, config.steps - config.warmup_steps - 1)
            state.lr = config.lr_final + (config.lr - config.lr_final) * 0.5 * (1.0 + math.cos(math.pi * u))
        batch = []
        for _ in range(min(config.batch_size, len(seqs))):
            if not order:
                order = list(rng.permutation(len(seqs)))
            batch.append(seqs[order.pop()])
        text, motion_in, targets, n_text, n_motion = _pack_batch(vocab, batch)
        tape = nn.Tape()
        with nn.record(tape):
            logits = forward_batch(params, config, text, motion_in, n_text, n_motion)
            loss = nll_loss(logits, targets, vocab.pad)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"training diverged at step {step}")
        nn.backward(tape, loss)
        nn.adam_step(params, state)
        nn.zero_grads(params)
        curve.steps.append(step)
        curve.loss.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"step {step} nll {loss.data:.6f}")
    return GeneratorModel(config=config, params=params, vocab=vocab), curve


def sequence_log_prob(model: GeneratorModel, text_ids, motion_ids) -> float:
    """Teacher-forced log-probability of the full sequence including EOS."""
    vocab = model.vocab
    seq = TokenSequence(tuple(text_ids), tuple(motion_ids))
    text, motion_in, targets, n_text, n_motion = _pack_batch(vocab, [seq])
    logits = forward_batch(model.params, model.config, text, motion_in, n_text, n_motion)
    z = logits.data[0] - logits.data[0].max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    total = 0.0
    for t, tgt in enumerate(targets[0]):
        if tgt != vocab.pad:
            total += float(logp[t, tgt])
    return total


# ---------------------------------------------------------------------------
# sampling


def _top_k_filter(logits: np.ndarray, top_k: int) -> np.ndarray:
    if top_k >= logits.size:
        return logits
    # stable cut: order by (-logit, index) so ties keep the lowest index
    order = np.lexsort((np.arange(logits.size), -logits))
    out = np.full_like(logits, -np.inf)
    keep = order[:top_k]
    out[keep] = logits[keep]
    return out


def sample(model: GeneratorModel, text: str | list, temperature: float | None = None,
           top_k: int | None = None, max_len: int | None = None, seed: int = 0) -> list:
    """Seeded ancestral sampling; temperature 0 is greedy argmax."""
    cfg = model.config
    vocab = model.vocab
    temperature = cfg.temperature if temperature is None else temperature
    top_k = cfg.top_k if top_k is None else top_k
    max_len = cfg.max_len if max_len is None else max_len
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    text_ids = text_tokenize(text, vocab) if isinstance(text, str) else list(text)
    rng = np.random.default_rng(seed)
    ids: list[int] = []
    while len(ids) < max_len:
        motion_in = [vocab.bos] + ids
        if len(text_ids) + len(motion_in) >= cfg.max_seq_len:
            break
        logits = forward_sequence(model.params, cfg, text_ids, motion_in).data[-1].copy()
        logits[vocab.bos] = -np.inf    # controls other than EOS are not emittable
        logits[vocab.pad] = -np.inf
        if temperature == 0.0:
            nxt = int(np.argmax(logits))
        else:
            kept = _top_k_filter(logits / temperature, top_k)
            kept = kept - kept.max()
            p = np.exp(kept)
            p /= p.sum()
            nxt = int(rng.choice(p.size, p=p))
        if nxt == vocab.eos:
            break
        ids.append(nxt)
    return ids


def greedy_decode(model: GeneratorModel, text: str | list, max_len: int | None = None) -> list:
    return sample(model, text, temperature=0.0, max_len=max_len)


# ---------------------------------------------------------------------------
# persistence


def save_generator(path, model: GeneratorModel) -> None:
    tensors = {k: v.data for k, v in model.params.items()}
    meta = {
        "kind": "generator",
        "config": model.config.to_dict(),
        "vocab": {"motion_vocab": model.vocab.motion_vocab, "words": list(model.vocab.words)},
        "tokenizer_hash": model.tokenizer_hash,
    }
    nn.save_checkpoint(path, tensors, meta)


def load_generator(path) -> GeneratorModel:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "generator":
        raise nn.CheckpointError(f"{path} is not a generator checkpoint")
    vocab = Vocabulary(motion_vocab=meta["vocab"]["motion_vocab"],
                       words=tuple(meta["vocab"]["words"]))
    return GeneratorModel(
        config=GeneratorConfig.from_dict(meta["config"]),
        params={k: nn.parameter(v) for k, v in tensors.items()},
        vocab=vocab,
        tokenizer_hash=meta.get("tokenizer_hash", ""))


# ---------------------------------------------------------------------------
# back to motion


def detokenize_to_clip(motion_ids, tokenizer: TokenizerModel, robot_model,
                       fps: float = 30.0, text: str = "", clip_id: str = "generated"):
    """Generated ids -> MotionClip plus an FK-consistency metric: the mean
    keypoint gap (meters) between the decoded keypoint channels and FK of
    the decoded root/DoF frames."""
    ids = np.asarray(motion_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no motion tokens to decode")
    K = tokenizer.config.codebook_size
    if (ids < 0).any() or (ids >= K).any():
        raise ValueError(f"motion token outside the stage-1 codebook of size {K}")
    if tokenizer.model_hash and tokenizer.model_hash != robot_model.content_hash():
        raise ValueError("tokenizer was trained against a different robot model")
    rows = detokenize_tokens(tokenizer, ids)
    clip = clip_from_rows(rows, robot_model, fps=fps, text=text, clip_id=clip_id)
    d = robot_model.dof_count
    n = robot_model.keypoint_count
    kp_rows = rows[:, 6 + d:6 + d + 3 * n].reshape(-1, n, 3)
    kp_fk, _ = fk_keypoints(robot_model, clip.root_pos, clip.root_rpy, clip.dofs)
    consistency = float(np.linalg.norm(kp_rows - kp_fk, axis=2).mean())
    return clip, consistency

