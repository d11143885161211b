"""Reconstruction metrics, the contrastive text-motion evaluator, feature FID,
and retrieval recall.

MPJPE/MPKPE are reported in meters, with both clips expressed per frame in
the reference clip's root frame, so the numbers are invariant to a common
world offset but still penalize relative drift. FID runs over the
evaluator's final (unit-norm) embeddings.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .kinematics import RobotModel, fk_joints, fk_keypoints
from .motion_data import NormStats, normalize
from .tokenizer import DivergenceError, TrainingCurve

_WORD_RE = re.compile(r"[a-z0-9]+")


# ---------------------------------------------------------------------------
# reconstruction metrics


def _check_paired(pred, ref):
    if len(pred) != len(ref):
        raise ValueError(f"clip count mismatch: {len(pred)} vs {len(ref)}")
    if not pred:
        raise ValueError("empty clip lists")
    for p, r in zip(pred, ref):
        if p.n_frames != r.n_frames:
            raise ValueError(
                f"frame count mismatch for {p.clip_id}: {p.n_frames} vs {r.n_frames}")


def mpjpe(pred_clips, ref_clips, model: RobotModel) -> float:
    """Mean per-joint position error in meters, in the reference root frame."""
    _check_paired(pred_clips, ref_clips)
    total, count = 0.0, 0
    for p, r in zip(pred_clips, ref_clips):
        pj, _ = fk_joints(model, p.root_pos, p.root_rpy, p.dofs)
        rj, _ = fk_joints(model, r.root_pos, r.root_rpy, r.dofs)
        pj = pj - r.root_pos[:, None, :]
        rj = rj - r.root_pos[:, None, :]
        d = np.linalg.norm(pj - rj, axis=-1)
        total += d.sum()
        count += d.size
    return total / count


def mpkpe(pred_clips, ref_clips, model: RobotModel) -> float:
    """Mean position error over the virtual keypoints, meters, in the
    reference root frame."""
    _check_paired(pred_clips, ref_clips)
    total, count = 0.0, 0
    for p, r in zip(pred_clips, ref_clips):
        pk, _ = fk_keypoints(model, p.root_pos, p.root_rpy, p.dofs)
        rk, _ = fk_keypoints(model, r.root_pos, r.root_rpy, r.dofs)
        pk = pk - r.root_pos[:, None, :]
        rk = rk - r.root_pos[:, None, :]
        d = np.linalg.norm(pk - rk, axis=-1)
        total += d.sum()
        count += d.size
    return total / count


def l1_metric(pred_rows: np.ndarray, ref_rows: np.ndarray) -> float:
    """Mean absolute error over all channels of the normalized representation."""
    pred_rows = np.asarray(pred_rows, dtype=np.float64)
    ref_rows = np.asarray(ref_rows, dtype=np.float64)
    if pred_rows.shape != ref_rows.shape:
        raise ValueError(f"shape mismatch: {pred_rows.shape} vs {ref_rows.shape}")
    return float(np.abs(pred_rows - ref_rows).mean())


# ---------------------------------------------------------------------------
# contrastive text-motion evaluator


@dataclass(frozen=True)
class EvaluatorConfig:
    embed_dim: int = 64
    width: int = 64
    window: int = 48
    input_dim: int = 137
    lr: float = 1e-3
    lr_final: float | None = None
    warmup_steps: int = 0
    batch_size: int = 16
    steps: int = 800
    temp_init: float = 14.0   # initial logit scale, kept in (0, 100) by a sigmoid
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("contrastive training needs batch_size >= 2")
        if not 0.0 < self.temp_init < 100.0:
            raise ValueError("temp_init must be in (0, 100)")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim, "width": self.width,
            "window": self.window, "input_dim": self.input_dim,
            "lr": self.lr, "lr_final": self.lr_final,
            "warmup_steps": self.warmup_steps, "batch_size": self.batch_size,
            "steps": self.steps, "temp_init": self.temp_init, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatorConfig":
        return cls(**d)


@dataclass(frozen=True)
class EvaluatorModel:
    config: EvaluatorConfig
    params: dict
    words: tuple
    stats: NormStats


def _evaluator_words(texts) -> tuple:
    seen = set()
    for t in texts:
        seen.update(_WORD_RE.findall(t.lower()))
    return tuple(sorted(seen))


def _bag_rows(words: tuple, texts) -> np.ndarray:
    """(B, V+1) normalized word histograms; slot 0 collects unknown words."""
    ids = {w: i + 1 for i, w in enumerate(words)}
    out = np.zeros((len(texts), len(words) + 1))
    for r, t in enumerate(texts):
        toks = _WORD_RE.findall(t.lower())
        for w in toks:
            out[r, ids.get(w, 0)] += 1.0
        out[r] /= max(1, len(toks))
    return out


def init_evaluator_params(config: EvaluatorConfig, vocab_size: int,
                          rng: np.random.Generator) -> dict:
    W, E, D = config.width, config.embed_dim, config.input_dim

    def conv(k, cin, cout):
        return nn.parameter(rng.normal(0.0, math.sqrt(2.0 / (k * cin)), (k, cin, cout)))

    s0 = math.log(config.temp_init / (100.0 - config.temp_init))
    return {
        "conv1_w": conv(4, D, W), "conv1_b": nn.parameter(np.zeros(W)),
        "conv2_w": conv(4, W, W), "conv2_b": nn.parameter(np.zeros(W)),
        "conv3_w": conv(3, W, W), "conv3_b": nn.parameter(np.zeros(W)),
        "m_proj_w": nn.parameter(rng.normal(0.0, math.sqrt(1.0 / W), (W, E))),
        "m_proj_b": nn.parameter(np.zeros(E)),
        "t_emb": nn.parameter(rng.normal(0.0, 0.02, (vocab_size + 1, E))),
        "t_proj_w": nn.parameter(rng.normal(0.0, math.sqrt(1.0 / E), (E, E))),
        "t_proj_b": nn.parameter(np.zeros(E)),
        "logit_scale": nn.parameter(np.array([s0])),
    }


def _unit_norm(t, dim: int):
    # rms-normalizing with a fixed 1/sqrt(dim) gain lands on the unit sphere;
    # the norm is scale-invariant, so pre-scaling keeps the eps inside
    # rmsnorm negligible even when the raw activations are tiny
    gain = nn.constant(np.full(dim, dim ** -0.5))
    return nn.rmsnorm(nn.scale(t, 1e6), gain, eps=1e-12)


def motion_embedding(params: dict, config: EvaluatorConfig, rows_norm) -> "nn.Tensor":
    """(B, T, D) normalized rows -> (B, E) unit-norm embeddings."""
    x = rows_norm if isinstance(rows_norm, nn.Tensor) else nn.constant(rows_norm)
    x = nn.relu(nn.conv1d(x, params["conv1_w"], params["conv1_b"], stride=2, padding=1))
    x = nn.relu(nn.conv1d(x, params["conv2_w"], params["conv2_b"], stride=2, padding=1))
    x = nn.relu(nn.conv1d(x, params["conv3_w"], params["conv3_b"], stride=1, padding=1))
    pooled = nn.mean_(x, axis=1)
    e = nn.add(nn.matmul(pooled, params["m_proj_w"]), params["m_proj_b"])
    return _unit_norm(e, config.embed_dim)


def text_embedding(params: dict, config: EvaluatorConfig, bags) -> "nn.Tensor":
    """(B, V+1) word histograms -> (B, E) unit-norm embeddings."""
    b = bags if isinstance(bags, nn.Tensor) else nn.constant(bags)
    pooled = nn.matmul(b, params["t_emb"])
    e = nn.add(nn.matmul(pooled, params["t_proj_w"]), params["t_proj_b"])
    return _unit_norm(e, config.embed_dim)


def _logit_scale(params: dict) -> "nn.Tensor":
    return nn.scale(nn.sigmoid(params["logit_scale"]), 100.0)


def contrastive_loss(params: dict, config: EvaluatorConfig, rows_norm,
                     bags) -> "nn.Tensor":
    """Symmetric in-batch cross-entropy over the scaled similarity matrix."""
    m = motion_embedding(params, config, rows_norm)
    t = text_embedding(params, config, bags)
    sims = nn.matmul(m, nn.transpose(t, (1, 0)))
    logits = nn.mul(sims, nn.reshape(_logit_scale(params), (1, 1)))
    targets = np.arange(logits.data.shape[0])
    loss_m = nn.cross_entropy(logits, targets)
    loss_t = nn.cross_entropy(nn.transpose(logits, (1, 0)), targets)
    return nn.scale(nn.add(loss_m, loss_t), 0.5)


def _window(rng: np.random.Generator, rows: np.ndarray, window: int) -> np.ndarray:
    T = rows.shape[0]
    if T < window:
        return np.pad(rows, ((0, window - T), (0, 0)), mode="edge")
    start = int(rng.integers(0, T - window + 1))
    return rows[start:start + window]


def train_evaluator(config: EvaluatorConfig, pairs: list, stats: NormStats,
                    log_every: int = 0) -> tuple[EvaluatorModel, TrainingCurve]:
    """Seeded contrastive training on (raw rows, caption) pairs."""
    if not pairs:
        raise ValueError("empty paired corpus")
    if config.batch_size < 2:
        raise ValueError("contrastive training needs batch_size >= 2")
    rows_list = [normalize(np.asarray(r, dtype=np.float64), stats) for r, _ in pairs]
    texts = [t for _, t in pairs]
    words = _evaluator_words(texts)
    bags = _bag_rows(words, texts)
    rng = np.random.default_rng(config.seed)
    params = init_evaluator_params(config, len(words), rng)
    state = nn.AdamState(lr=config.lr)
    curve = TrainingCurve()
    for step in range(1, config.steps + 1):
        if config.warmup_steps and step <= config.warmup_steps:
            state.lr = config.lr * step / config.warmup_steps
        elif config.lr_final is not None:
            u = (step - config.warmup_steps - 1) / max(1, config.steps - config.warmup_steps - 1)
            state.lr = config.lr_final + (config.lr - config.lr_final) * 0.5 * (1.0 + math.cos(math.pi * u))
        pick = rng.choice(len(pairs), size=min(config.batch_size, len(pairs)),
                          replace=len(pairs) < config.batch_size)
        batch_rows = np.stack([_window(rng, rows_list[i], config.window) for i in pick])
        tape = nn.Tape()
        with nn.record(tape):
            loss = contrastive_loss(params, config, batch_rows, bags[pick])
        if not np.isfinite(loss.data):
            raise DivergenceError(f"training diverged at step {step}")
        nn.backward(tape, loss)
        nn.adam_step(params, state)
        nn.zero_grads(params)
        curve.steps.append(step)
        curve.loss.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"step {step} contrastive {loss.data:.6f}")
    return EvaluatorModel(config=config, params=params, words=words, stats=stats), curve


def embed_motions(model: EvaluatorModel, rows_list) -> np.ndarray:
    """Raw (T_i, D) rows -> (N, E) embeddings; full-length, one clip at a time."""
    out = np.empty((len(rows_list), model.config.embed_dim))
    for i, rows in enumerate(rows_list):
        n = normalize(np.asarray(rows, dtype=np.float64), model.stats)
        if n.shape[0] < 8:
            n = np.pad(n, ((0, 8 - n.shape[0]), (0, 0)), mode="edge")
        out[i] = motion_embedding(model.params, model.config, n[None]).data[0]
    return out


def embed_texts(model: EvaluatorModel, texts) -> np.ndarray:
    bags = _bag_rows(model.words, texts)
    return text_embedding(model.params, model.config, bags).data


# ---------------------------------------------------------------------------
# distribution and retrieval metrics


def _cov(feats: np.ndarray) -> np.ndarray:
    if feats.shape[0] < 2:
        return np.zeros((feats.shape[1], feats.shape[1]))
    return np.cov(feats, rowvar=False, ddof=1)


def _psd_sqrt_trace(S: np.ndarray) -> float:
    """Trace of the matrix square root, clamping eigenvalue noise at -1e-8."""
    w = np.linalg.eigvalsh((S + S.T) / 2.0)
    if w.min() < -1e-8:
        raise ValueError(f"matrix has a significantly negative eigenvalue: {w.min():.3g}")
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature shapes {fa.shape} and {fb.shape} do not pair up")
    if not (np.isfinite(fa).all() and np.isfinite(fb).all()):
        raise ValueError("non-finite features")
    E = fa.shape[1]
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a, cov_b = _cov(fa), _cov(fb)
    if fa.shape[0] < E + 1 or fb.shape[0] < E + 1:
        cov_a = cov_a + 1e-6 * np.eye(E)
        cov_b = cov_b + 1e-6 * np.eye(E)
    # sqrt(cov_a) @ cov_b @ sqrt(cov_a) shares eigenvalues with cov_a @ cov_b
    # but is symmetric, which keeps the decomposition well-behaved
    wa, va = np.linalg.eigh((cov_a + cov_a.T) / 2.0)
    if wa.min() < -1e-8:
        raise ValueError(f"covariance has a significantly negative eigenvalue: {wa.min():.3g}")
    ra = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    tr_cross = _psd_sqrt_trace(ra @ cov_b @ ra)
    d2 = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b)
               - 2.0 * tr_cross)
    return max(d2, 0.0)


def retrieval_rk(motion_emb: np.ndarray, text_emb: np.ndarray, k: int) -> float:
    """Fraction of texts whose paired motion ranks in the top k by cosine."""
    m = np.asarray(motion_emb, dtype=np.float64)
    t = np.asarray(text_emb, dtype=np.float64)
    if m.shape != t.shape or m.ndim != 2:
        raise ValueError(f"embedding shapes {m.shape} and {t.shape} do not pair up")
    N = m.shape[0]
    if k < 1 or k > N:
        raise ValueError(f"k={k} outside 1..{N}")
    m = m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)
    t = t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
    sims = t @ m.T
    hits = 0
    for i in range(N):
        order = np.lexsort((np.arange(N), -sims[i]))  # ties -> lowest index
        hits += int(i in order[:k])
    return hits / N


# ---------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class MetricReport:
    mpjpe: float
    mpkpe: float
    l1: float
    usage: float
    fid: float
    r_at: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.mpjpe, self.mpkpe, self.l1, self.usage, self.fid,
                *self.r_at.values()]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("metric report contains non-finite values")
        fracs = {"usage": self.usage, **{f"r@{k}": v for k, v in self.r_at.items()}}
        for name, v in fracs.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "mpjpe": self.mpjpe, "mpkpe": self.mpkpe, "l1": self.l1,
            "usage": self.usage, "fid": self.fid,
            "r_at": {str(k): v for k, v in self.r_at.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(mpjpe=d["mpjpe"], mpkpe=d["mpkpe"], l1=d["l1"],
                   usage=d["usage"], fid=d["fid"],
                   r_at={int(k): v for k, v in d.get("r_at", {}).items()})


# ---------------------------------------------------------------------------
# persistence


def save_evaluator(path, model: EvaluatorModel) -> None:
    meta = {
        "kind": "evaluator",
        "config": model.config.to_dict(),
        "words": list(model.words),
        "stats": model.stats.to_dict(),
    }
    nn.save_checkpoint(path, {k: v.data for k, v in model.params.items()}, meta)


def load_evaluator(path) -> EvaluatorModel:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "evaluator":
        raise nn.CheckpointError(f"{path} is not an evaluator checkpoint")
    return EvaluatorModel(
        config=EvaluatorConfig.from_dict(meta["config"]),
        params={k: nn.parameter(v) for k, v in tensors.items()},
        words=tuple(meta["words"]),
        stats=NormStats.from_dict(meta["stats"]),
    )
