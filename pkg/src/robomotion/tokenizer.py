"""Motion tokenization: a strided convolutional autoencoder over feature rows
with a pluggable quantizer bottleneck — EMA vector quantization with codebook
reset, or finite scalar quantization (FSQ) with an implicit codebook.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .motion_data import NormStats, denormalize, normalize

# level ladders realizing the swept codebook sizes
FSQ_LEVELS = {
    64: (4, 4, 4),
    256: (4, 4, 4, 4),
    1024: (4, 4, 4, 4, 4),
    4096: (8, 8, 8, 8),
    65536: (16, 16, 16, 16),
}


@dataclass(frozen=True)
class FsqConfig:
    levels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if not self.levels or any(L < 2 for L in self.levels):
            raise ValueError(f"levels must all be >= 2, got {self.levels}")
        if math.prod(self.levels) > 2 ** 62:
            raise ValueError("prod(levels) too large for int64 token ids")

    @property
    def codebook_size(self) -> int:
        return math.prod(self.levels)


@dataclass(frozen=True)
class VqConfig:
    codebook_size: int
    code_dim: int = 8
    commitment: float = 0.25
    ema_decay: float = 0.99
    reset_threshold: int = 16

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if not self.commitment > 0:
            raise ValueError("commitment weight must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass(frozen=True)
class TokenizerConfig:
    quantizer: VqConfig | FsqConfig
    input_dim: int = 137
    width: int = 256
    res_blocks: int = 2
    downsample_factor: int = 4
    lr: float = 1e-3
    lr_final: float | None = None   # cosine-anneal target; None = constant
    warmup_steps: int = 0
    batch_size: int = 16
    steps: int = 3000
    window: int = 64
    input_noise: float = 0.0    # train-time dither on normalized rows
    round_dither: float = 0.0   # initial stochastic rounding amplitude, annealed to 0
    seed: int = 0

    def __post_init__(self):
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of 2, got {f}")
        if self.window % f != 0:
            raise ValueError(f"window {self.window} not divisible by factor {f}")

    @property
    def latent_dim(self) -> int:
        if isinstance(self.quantizer, FsqConfig):
            return len(self.quantizer.levels)
        return self.quantizer.code_dim

    @property
    def codebook_size(self) -> int:
        return self.quantizer.codebook_size

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.downsample_factor))

    def to_dict(self) -> dict:
        q = self.quantizer
        if isinstance(q, FsqConfig):
            qd = {"kind": "fsq", "levels": list(q.levels)}
        else:
            qd = {"kind": "vq", "codebook_size": q.codebook_size, "code_dim": q.code_dim,
                  "commitment": q.commitment, "ema_decay": q.ema_decay,
                  "reset_threshold": q.reset_threshold}
        return {
            "quantizer": qd, "input_dim": self.input_dim, "width": self.width,
            "res_blocks": self.res_blocks, "downsample_factor": self.downsample_factor,
            "lr": self.lr, "lr_final": self.lr_final, "warmup_steps": self.warmup_steps,
            "batch_size": self.batch_size,
            "steps": self.steps, "window": self.window,
            "input_noise": self.input_noise, "round_dither": self.round_dither,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "TokenizerConfig":
        qd = dict(doc["quantizer"])
        kind = qd.pop("kind")
        quantizer = FsqConfig(tuple(qd["levels"])) if kind == "fsq" else VqConfig(**qd)
        rest = {k: v for k, v in doc.items() if k != "quantizer"}
        return TokenizerConfig(quantizer=quantizer, **rest)


# ---------------------------------------------------------------------------
# FSQ primitives


def fsq_bound(z, levels) -> np.ndarray:
    """Per channel: (L_i - 1) * sigmoid(z_i), range (0, L_i - 1)."""
    z = np.asarray(z, dtype=np.float64)
    levels = np.asarray(levels)
    if z.shape[-1] != levels.shape[0]:
        raise ValueError(f"latent width {z.shape[-1]} != len(levels) {levels.shape[0]}")
    return (levels - 1) * nn.autograd._sigmoid(z)


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5)


def fsq_quantize(z, levels):
    """Integer codes and the bounded row; half-up rounding."""
    bounded = fsq_bound(z, levels)
    codes = round_half_up(bounded).astype(np.int64)
    return codes, bounded


def fsq_index_weights(levels) -> np.ndarray:
    """Big-endian mixed-radix place values: w_i = prod of levels after i."""
    levels = np.asarray(levels, dtype=np.int64)
    return np.concatenate([np.cumprod(levels[::-1])[::-1][1:], [1]])


def fsq_index_encode(codes, levels) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    if (codes < 0).any() or (codes >= levels).any():
        raise ValueError("code outside its level range")
    return codes @ fsq_index_weights(levels)


def fsq_index_decode(indices, levels) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    size = int(np.prod(levels))
    if (indices < 0).any() or (indices >= size).any():
        raise ValueError(f"index outside [0, {size})")
    out = np.empty(indices.shape + (levels.shape[0],), dtype=np.int64)
    rem = indices
    for i, w in enumerate(fsq_index_weights(levels)):
        out[..., i], rem = np.divmod(rem, w)
    return out


# ---------------------------------------------------------------------------
# VQ primitives


def vq_quantize(z, codebook):
    """Nearest codebook rows by squared Euclidean distance; ties break to the
    lowest index. Returns (quantized rows, indices)."""
    z = np.asarray(z, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ValueError("codebook must be a non-empty (S, code_dim) matrix")
    if z.shape[-1] != codebook.shape[1]:
        raise ValueError(f"latent width {z.shape[-1]} != code_dim {codebook.shape[1]}")
    flat = z.reshape(-1, z.shape[-1])
    d = ((flat ** 2).sum(1, keepdims=True)
         - 2.0 * flat @ codebook.T
         + (codebook ** 2).sum(1))
    indices = np.argmin(d, axis=1)
    return codebook[indices].reshape(z.shape), indices.reshape(z.shape[:-1])


@dataclass
class VqState:
    codebook: np.ndarray    # (S, code_dim)
    ema_size: np.ndarray    # (S,)
    ema_sum: np.ndarray     # (S, code_dim)
    unused: np.ndarray      # (S,) consecutive batches without an assignment

    @staticmethod
    def init(codebook: np.ndarray) -> "VqState":
        S = codebook.shape[0]
        return VqState(codebook=codebook.copy(), ema_size=np.ones(S),
                       ema_sum=codebook.copy(), unused=np.zeros(S, dtype=np.int64))


def vq_ema_update(state: VqState, z_batch: np.ndarray, indices: np.ndarray,
                  config: VqConfig, rng: np.random.Generator) -> None:
    """EMA codebook update with Laplace smoothing and stale-code reset."""
    S, C = state.codebook.shape
    flat = z_batch.reshape(-1, C)
    idx = indices.reshape(-1)
    counts = np.bincount(idx, minlength=S).astype(np.float64)
    sums = np.zeros((S, C))
    np.add.at(sums, idx, flat)
    d = config.ema_decay
    state.ema_size = d * state.ema_size + (1.0 - d) * counts
    state.ema_sum = d * state.ema_sum + (1.0 - d) * sums
    eps = 1e-5
    n = state.ema_size.sum()
    smoothed = (state.ema_size + eps) / (n + S * eps) * n
    state.codebook = state.ema_sum / smoothed[:, None]
    state.unused = np.where(counts > 0, 0, state.unused + 1)
    stale = np.nonzero(state.unused >= config.reset_threshold)[0]
    for k in stale:
        pick = flat[rng.integers(0, flat.shape[0])]
        state.codebook[k] = pick
        state.ema_sum[k] = pick
        state.ema_size[k] = 1.0
        state.unused[k] = 0


def fsq_loss(x, recon):
    """Plain MSE through the straight-through path; no auxiliary terms."""
    err = recon - x
    return nn.mean_(err * err)


def vq_loss(x, recon, z, zq, commitment: float):
    """MSE plus the commitment pull of z toward its code. zq must enter as a
    constant so the second term never pushes on the codebook."""
    err = recon - x
    dz = z - zq
    return nn.mean_(err * err) + nn.mean_(dz * dz) * commitment


def codebook_usage(tokens, codebook_size: int) -> float:
    """Distinct token ids observed / codebook size."""
    tokens = np.asarray(tokens).reshape(-1)
    if tokens.size and ((tokens < 0).any() or (tokens >= codebook_size).any()):
        raise ValueError("token id outside the codebook")
    return np.unique(tokens).size / codebook_size


# ---------------------------------------------------------------------------
# encoder / decoder


def init_tokenizer_params(config: TokenizerConfig, rng: np.random.Generator) -> dict:
    """He-initialized conv stacks for both halves, as named Tensors."""
    p: dict[str, nn.Tensor] = {}

    def conv(name, k, cin, cout, scale=1.0):
        std = scale * np.sqrt(2.0 / (k * cin))
        p[f"{name}_w"] = nn.parameter(rng.normal(0.0, std, (k, cin, cout)))
        p[f"{name}_b"] = nn.parameter(np.zeros(cout))

    def block(name, w):
        conv(f"{name}_a", 3, w, w)
        conv(f"{name}_b", 1, w, w, scale=0.5)
        p[f"{name}_g"] = nn.parameter(np.ones(w))

    W, D, L = config.width, config.input_dim, config.latent_dim
    conv("enc_in", 3, D, W)
    for s in range(config.n_stages):
        conv(f"enc_down{s}", 4, W, W)
        for r in range(config.res_blocks):
            block(f"enc_res{s}_{r}", W)
    for r in range(config.res_blocks):  # trunk at the bottleneck rate
        block(f"enc_trunk{r}", W)
    # normalize before the head so the quantizer bound stays in range
    p["enc_norm_g"] = nn.parameter(np.ones(W))
    conv("enc_head", 1, W, L)
    if isinstance(config.quantizer, FsqConfig):
        # running stats of the head output: mean/covariance for whitening and
        # per-dim quantile knots for histogram equalization, so the sigmoid
        # bound sees values whose levels come out uniformly occupied. tracked,
        # not trained (entered as constants in the forward)
        p["latent_mu"] = nn.parameter(np.zeros(L))
        p["latent_cov"] = nn.parameter(np.eye(L))
        p["latent_knots"] = nn.parameter(
            np.tile(np.linspace(-2.5, 2.5, N_KNOTS), (L, 1)))
    conv("dec_in", 1, L, W)
    for r in range(config.res_blocks):
        block(f"dec_trunk{r}", W)
    for s in range(config.n_stages):
        for r in range(config.res_blocks):
            block(f"dec_res{s}_{r}", W)
        conv(f"dec_up{s}", 4, W, W)
    conv("dec_out", 3, W, D, scale=0.5)
    return p


def _res_block(x, p, prefix):
    h = nn.rmsnorm(x, p[f"{prefix}_g"])
    h = nn.conv1d(nn.relu(h), p[f"{prefix}_a_w"], p[f"{prefix}_a_b"], stride=1, padding=1)
    h = nn.conv1d(nn.relu(h), p[f"{prefix}_b_w"], p[f"{prefix}_b_b"], stride=1, padding=0)
    return x + h


N_KNOTS = 31


def _whitener(cov: np.ndarray) -> np.ndarray:
    """Matrix M with (z - mu) @ M having unit covariance; symmetric square
    root so the result does not depend on an eigenvector ordering."""
    lam, V = np.linalg.eigh(cov)
    return (V * np.maximum(lam, 1e-8) ** -0.5) @ V.T


def _equalize(zw, knots: np.ndarray, levels):
    """Histogram equalization of each latent dim, in logit space. A piecewise-
    linear map through the running quantile knots sends the whitened latent to
    its CDF value; a second piecewise map widens the two end cells (the
    rounding grid gives them only half a cell of bound range); the logit then
    lets the quantizer's sigmoid bound recover the equalized value, so every
    level of every dim comes out near-uniformly occupied. Monotone in z,
    hence information-preserving."""
    m = knots.shape[-1]
    gaps = np.maximum(np.diff(knots, axis=-1), 1e-6)
    slopes = (1.0 / m) / gaps  # equal probability mass between adjacent knots
    zx = nn.reshape(zw, zw.shape + (1,))
    span = nn.relu(zx - knots[:, :-1]) - nn.relu(zx - knots[:, 1:])
    u = nn.sum_(span * slopes, axis=-1) + 0.5 / m
    L = np.asarray(levels, dtype=np.float64)
    s0 = 0.5 * L / (L - 1.0)
    u = u * s0 + (nn.relu(u - 1.0 / L) - nn.relu(u - (L - 1.0) / L)) * (L / (L - 1.0) - s0)
    return nn.log(u) - nn.log(1.0 - u)


def encoder_forward(params, x, config: TokenizerConfig, aux: dict | None = None):
    """x: (B, T, D) Tensor -> (B, T/factor, latent_dim) Tensor. With an aux
    dict the raw and whitened head outputs are exposed for stat tracking."""
    h = nn.conv1d(x, params["enc_in_w"], params["enc_in_b"], stride=1, padding=1)
    for s in range(config.n_stages):
        h = nn.conv1d(h, params[f"enc_down{s}_w"], params[f"enc_down{s}_b"],
                      stride=2, padding=1)
        for r in range(config.res_blocks):
            h = _res_block(h, params, f"enc_res{s}_{r}")
    for r in range(config.res_blocks):
        h = _res_block(h, params, f"enc_trunk{r}")
    h = nn.rmsnorm(h, params["enc_norm_g"])
    z = nn.conv1d(h, params["enc_head_w"], params["enc_head_b"], stride=1, padding=0)
    if "latent_mu" in params:
        # whiten (joint decorrelation) then equalize (marginal flattening);
        # .data on purpose: the running stats are tracked, not trained
        M = _whitener(params["latent_cov"].data)
        zw = nn.matmul(z - params["latent_mu"].data, nn.constant(M))
        if aux is not None:
            aux["z_raw"], aux["z_w"] = z.data, zw.data
        return _equalize(zw, params["latent_knots"].data, config.quantizer.levels)
    return z


def decoder_forward(params, z, config: TokenizerConfig):
    """z: (B, T', latent_dim) Tensor -> (B, T'*factor, D) Tensor."""
    h = nn.conv1d(z, params["dec_in_w"], params["dec_in_b"], stride=1, padding=0)
    for r in range(config.res_blocks):
        h = _res_block(h, params, f"dec_trunk{r}")
    for s in range(config.n_stages):
        for r in range(config.res_blocks):
            h = _res_block(h, params, f"dec_res{s}_{r}")
        h = nn.conv1d_transpose(h, params[f"dec_up{s}_w"], params[f"dec_up{s}_b"],
                                stride=2, padding=1)
    return nn.conv1d(h, params["dec_out_w"], params["dec_out_b"], stride=1, padding=1)


def pad_to_multiple(rows: np.ndarray, factor: int):
    """Edge-replicate rows so the length divides the factor; returns
    (padded, original_length)."""
    rows = np.asarray(rows, dtype=np.float64)
    T = rows.shape[0]
    pad = (-T) % factor
    if pad:
        rows = np.concatenate([rows, np.repeat(rows[-1:], pad, axis=0)])
    return rows, T


# ---------------------------------------------------------------------------
# the trained artifact


@dataclass
class TokenizerModel:
    config: TokenizerConfig
    params: dict
    stats: NormStats
    codebook: np.ndarray | None = None   # VQ only
    model_hash: str = ""

    @property
    def is_fsq(self) -> bool:
        return isinstance(self.config.quantizer, FsqConfig)


def encode_rows(model: TokenizerModel, rows_norm: np.ndarray) -> np.ndarray:
    """Normalized (T, D) rows -> (T/factor, latent_dim) latents; T must
    already divide the downsample factor."""
    rows_norm = np.asarray(rows_norm, dtype=np.float64)
    if rows_norm.ndim != 2 or rows_norm.shape[1] != model.config.input_dim:
        raise ValueError(f"rows shape {rows_norm.shape} != (T, {model.config.input_dim})")
    if rows_norm.shape[0] % model.config.downsample_factor != 0:
        raise ValueError("row count must divide the downsample factor (pad first)")
    z = encoder_forward(model.params, nn.constant(rows_norm[None]), model.config)
    return z.data[0]


def decode_latents(model: TokenizerModel, latents: np.ndarray) -> np.ndarray:
    """(T', latent_dim) quantized latents -> normalized (T'*factor, D) rows."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != model.config.latent_dim:
        raise ValueError(f"latent shape {latents.shape} != (T', {model.config.latent_dim})")
    x = decoder_forward(model.params, nn.constant(latents[None]), model.config)
    return x.data[0]


def tokenize_rows(model: TokenizerModel, rows: np.ndarray):
    """Raw (T, D) rows -> (token ids (T'',), original length)."""
    padded, orig = pad_to_multiple(rows, model.config.downsample_factor)
    z = encode_rows(model, normalize(padded, model.stats))
    if model.is_fsq:
        codes, _ = fsq_quantize(z, model.config.quantizer.levels)
        return fsq_index_encode(codes, model.config.quantizer.levels), orig
    _, idx = vq_quantize(z, model.codebook)
    return idx, orig


def detokenize_tokens(model: TokenizerModel, tokens, orig_len: int | None = None) -> np.ndarray:
    """Token ids -> raw (orig_len, D) rows."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if model.is_fsq:
        latents = fsq_index_decode(tokens, model.config.quantizer.levels).astype(np.float64)
    else:
        if (tokens < 0).any() or (tokens >= model.codebook.shape[0]).any():
            raise ValueError("token id outside the codebook")
        latents = model.codebook[tokens]
    rows = denormalize(decode_latents(model, latents), model.stats)
    return rows if orig_len is None else rows[:orig_len]


def reconstruct_rows(model: TokenizerModel, rows: np.ndarray) -> np.ndarray:
    """Round trip through the quantized bottleneck, in raw units."""
    tokens, orig = tokenize_rows(model, rows)
    return detokenize_tokens(model, tokens, orig)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingCurve:
    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    usage_steps: list = field(default_factory=list)
    usage: list = field(default_factory=list)


class DivergenceError(RuntimeError):
    pass


class _WindowSampler:
    """Round-robin clip coverage (reshuffled each epoch), random offsets."""

    def __init__(self, rng, rows_list, window):
        self.rng = rng
        self.rows_list = rows_list
        self.window = window
        self.queue: list[int] = []

    def _next_clip(self) -> np.ndarray:
        if not self.queue:
            self.queue = list(self.rng.permutation(len(self.rows_list)))
        return self.rows_list[self.queue.pop()]

    def batch(self, batch_size: int) -> np.ndarray:
        out = np.empty((batch_size, self.window, self.rows_list[0].shape[1]))
        for b in range(batch_size):
            rows = self._next_clip()
            T = rows.shape[0]
            if T <= self.window:
                padded, _ = pad_to_multiple(rows, self.window)
                out[b] = padded[:self.window]
            else:
                start = self.rng.integers(0, T - self.window + 1)
                out[b] = rows[start:start + self.window]
        return out


def _quantize_for_training(z, quantizer, codebook, rng=None, dither: float = 0.0):
    """Straight-through bottleneck. Returns (decoder input Tensor,
    commitment target or None, flat latents, flat indices).

    dither > 0 randomizes the rounding boundary during training (forward
    still lands on a lattice point; backward is still identity)."""
    if isinstance(quantizer, FsqConfig):
        levels = np.asarray(quantizer.levels, dtype=np.float64)
        bounded = nn.sigmoid(z) * (levels - 1.0)
        b = bounded.data
        if dither > 0.0:
            b = b + rng.uniform(-dither, dither, b.shape)
        # a diverging encoder emits non-finite latents; keep the codes legal
        # so the step reaches the loss check, which reports the divergence
        b = np.where(np.isfinite(b), b, 0.0)
        codes = np.clip(round_half_up(b), 0, levels - 1).astype(np.int64)
        ste = bounded + nn.constant(codes - bounded.data)
        idx = fsq_index_encode(codes.reshape(-1, len(quantizer.levels)), quantizer.levels)
        return ste, None, None, idx
    zq, idx = vq_quantize(z.data, codebook)
    ste = z + nn.constant(zq - z.data)
    return ste, nn.constant(zq), z.data.reshape(-1, z.data.shape[-1]), idx.reshape(-1)


def train_tokenizer(config: TokenizerConfig, corpus_rows: list, stats: NormStats,
                    log_every: int = 0) -> tuple[TokenizerModel, TrainingCurve]:
    """Seeded Adam training on random windows of normalized rows.

    corpus_rows: list of raw (T_i, D) matrices. stats must come from the
    training split only. Raises DivergenceError on a non-finite loss.
    """
    if not corpus_rows:
        raise ValueError("empty corpus")
    rows_list = [normalize(np.asarray(r, dtype=np.float64), stats) for r in corpus_rows]
    rng = np.random.default_rng(config.seed)
    params = init_tokenizer_params(config, rng)
    sampler = _WindowSampler(rng, rows_list, config.window)
    q = config.quantizer
    vq_state = None
    if isinstance(q, VqConfig):
        # seed the codebook from first-batch encoder outputs
        x0 = sampler.batch(config.batch_size)
        z0 = encoder_forward(params, nn.constant(x0), config).data.reshape(-1, q.code_dim)
        picks = rng.integers(0, z0.shape[0], q.codebook_size)
        vq_state = VqState.init(z0[picks])

    state = nn.AdamState(lr=config.lr)
    curve = TrainingCurve()
    usage_every = max(1, config.steps // 8)
    for step in range(1, config.steps + 1):
        if step <= config.warmup_steps:
            state.lr = config.lr * step / config.warmup_steps
        elif config.lr_final is not None:
            u = (step - config.warmup_steps - 1) / max(1, config.steps - config.warmup_steps - 1)
            state.lr = config.lr_final + (config.lr - config.lr_final) * 0.5 * (1.0 + math.cos(math.pi * u))
        x = sampler.batch(config.batch_size)
        x_in = x if config.input_noise <= 0 else x + rng.normal(0.0, config.input_noise, x.shape)
        tape = nn.Tape()
        aux: dict = {}
        with nn.record(tape):
            xt = nn.constant(x)
            z = encoder_forward(params, nn.constant(x_in), config, aux=aux)
            # rounding noise holds through the bulk of training (it smooths the
            # straight-through objective) and anneals out over the last stretch
            # so the final decoder sees the hard boundaries evaluation will
            ste, commit_target, z_flat, idx = _quantize_for_training(
                z, q, None if vq_state is None else vq_state.codebook,
                rng=rng,
                dither=config.round_dither * min(1.0, (1.0 - step / config.steps) / 0.15))
            recon = decoder_forward(params, ste, config)
            if commit_target is None:
                loss = fsq_loss(xt, recon)
            else:
                loss = vq_loss(xt, recon, z, commit_target, q.commitment)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"training diverged at step {step}")
        nn.backward(tape, loss)
        nn.adam_step(params, state)
        nn.zero_grads(params)
        if vq_state is not None:
            vq_ema_update(vq_state, z_flat, idx, q, rng)
        elif step <= 0.85 * config.steps:
            # EMA of the head-output stats this step exposed via aux; frozen
            # over the same final stretch the rounding noise anneals out, so
            # the encoder settles against fixed cell boundaries
            raw = aux["z_raw"].reshape(-1, aux["z_raw"].shape[-1])
            zw = aux["z_w"].reshape(-1, raw.shape[-1])
            mu, cov = params["latent_mu"].data, params["latent_cov"].data
            centered = raw - raw.mean(0)
            params["latent_mu"].data = 0.99 * mu + 0.01 * raw.mean(0)
            params["latent_cov"].data = (
                0.99 * cov + 0.01 * centered.T @ centered / max(len(raw), 1))
            probs = (np.arange(N_KNOTS) + 0.5) / N_KNOTS
            bq = np.quantile(zw, probs, axis=0).T
            params["latent_knots"].data = (
                0.99 * params["latent_knots"].data + 0.01 * bq)
        curve.steps.append(step)
        curve.loss.append(float(loss.data))
        if step % usage_every == 0 or step == config.steps:
            curve.usage_steps.append(step)
            curve.usage.append(codebook_usage(idx, config.codebook_size))
        if log_every and step % log_every == 0:
            print(f"step {step} loss {loss.data:.6f}")
    model = TokenizerModel(
        config=config, params=params, stats=stats,
        codebook=None if vq_state is None else vq_state.codebook)
    return model, curve


# ---------------------------------------------------------------------------
# persistence


def save_tokenizer(path, model: TokenizerModel) -> None:
    tensors = {k: v.data for k, v in model.params.items()}
    if model.codebook is not None:
        tensors["codebook"] = model.codebook
    meta = {
        "kind": "tokenizer",
        "config": model.config.to_dict(),
        "stats": model.stats.to_dict(),
        "model_hash": model.model_hash,
    }
    nn.save_checkpoint(path, tensors, meta)


def load_tokenizer(path) -> TokenizerModel:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "tokenizer":
        raise nn.CheckpointError(f"{path} is not a tokenizer checkpoint")
    config = TokenizerConfig.from_dict(meta["config"])
    codebook = tensors.pop("codebook", None)
    params = {k: nn.parameter(v) for k, v in tensors.items()}
    return TokenizerModel(config=config, params=params,
                          stats=NormStats.from_dict(meta["stats"]),
                          codebook=codebook, model_hash=meta.get("model_hash", ""))


def write_token_file(path, model: TokenizerModel, entries: list, model_hash: str = "") -> None:
    """Header with the quantizer geometry, then one record per clip:
    {"id", "text", "fps", "orig_len", "tokens"}."""
    q = model.config.quantizer
    header = {
        "format_version": 1,
        "codebook_size": model.config.codebook_size,
        "levels": list(q.levels) if isinstance(q, FsqConfig) else None,
        "downsample_factor": model.config.downsample_factor,
        "model_hash": model_hash or model.model_hash,
    }
    lines = [json.dumps(header, ensure_ascii=False)]
    for e in entries:
        lines.append(json.dumps({
            "id": e["id"], "text": e["text"], "fps": e["fps"],
            "orig_len": int(e["orig_len"]),
            "tokens": [int(t) for t in e["tokens"]],
        }, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n")


def read_token_file(path) -> tuple[dict, list]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty token file")
    header = json.loads(lines[0])
    if header.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    entries = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = json.loads(line)
        size = header["codebook_size"]
        toks = rec["tokens"]
        if any(t < 0 or t >= size for t in toks):
            raise ValueError(f"{path}: line {i}: token outside codebook of size {size}")
        entries.append(rec)
    return header, entries
