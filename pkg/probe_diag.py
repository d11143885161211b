"""Diagnose FSQ usage limits: per-dim marginals, inter-dim coupling, temporal
repeat rate, and usage growth on held-out data."""

import sys
import time

import numpy as np

from robomotion.kinematics import default_model
from robomotion.motion_data import clip_to_rows, compute_norm_stats, split_dataset, synth_corpus
from robomotion.tokenizer import (FSQ_LEVELS, FsqConfig, TokenizerConfig,
                                  fsq_index_decode, tokenize_rows, train_tokenizer)

K = int(sys.argv[1]) if len(sys.argv) > 1 else 4096
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 5000
dur = (float(sys.argv[3]), float(sys.argv[4])) if len(sys.argv) > 4 else (6.0, 12.0)

model = default_model()
t0 = time.time()
clips = synth_corpus(model, n_clips=200, seed=42, duration_range=dur)
train, test, val = split_dataset(clips, (0.6, 0.35, 0.05), seed=0)
rows_tr = [clip_to_rows(c, model) for c in train]
stats = compute_norm_stats(np.concatenate(rows_tr, axis=0))
print(f"corpus {time.time()-t0:.0f}s  train {len(train)} held {len(test)}", flush=True)

levels = FSQ_LEVELS[K]
cfg = TokenizerConfig(input_dim=137, width=64, res_blocks=2, downsample_factor=1,
                      quantizer=FsqConfig(levels=levels), lr=5e-3, lr_final=1e-4,
                      warmup_steps=200, batch_size=12, steps=steps, window=48,
                      input_noise=0.0, round_dither=0.5, seed=0)
t0 = time.time()
tok, curve = train_tokenizer(cfg, rows_tr, stats)
print(f"train {time.time()-t0:.0f}s  final loss {curve.loss[-1]:.4f}", flush=True)

ids = []
for c in test:
    ids.append(tokenize_rows(tok, clip_to_rows(c, model))[0])
flat = np.concatenate(ids)
n = flat.size
distinct = np.unique(flat).size
print(f"tokens {n}  distinct {distinct}  usage {distinct/K:.4f}")

codes = fsq_index_decode(flat, levels)  # (n, ndim)
for d in range(codes.shape[1]):
    h = np.bincount(codes[:, d], minlength=levels[d]) / n
    ent = -(h[h > 0] * np.log2(h[h > 0])).sum()
    print(f"dim{d}: ent {ent:.2f}/{np.log2(levels[d]):.1f} bits  bins {np.round(h, 3)}")

joint_ent_pairs = []
for a in range(codes.shape[1]):
    for b in range(a + 1, codes.shape[1]):
        pair = codes[:, a] * levels[b] + codes[:, b]
        h = np.bincount(pair, minlength=levels[a] * levels[b]) / n
        je = -(h[h > 0] * np.log2(h[h > 0])).sum()
        ha = -(lambda x: (x[x > 0] * np.log2(x[x > 0])).sum())(np.bincount(codes[:, a], minlength=levels[a]) / n)
        hb = -(lambda x: (x[x > 0] * np.log2(x[x > 0])).sum())(np.bincount(codes[:, b], minlength=levels[b]) / n)
        joint_ent_pairs.append((a, b, ha + hb - je))
for a, b, mi in joint_ent_pairs:
    print(f"MI(dim{a},dim{b}) = {mi:.3f} bits")

rep = float(np.mean([np.mean(i[1:] == i[:-1]) for i in ids]))
print(f"consecutive repeat rate {rep:.3f}")

h = np.bincount(flat, minlength=K) / n
ent = -(h[h > 0] * np.log2(h[h > 0])).sum()
print(f"joint entropy {ent:.2f}/{np.log2(K):.1f} bits")

rng = np.random.default_rng(0)
perm = rng.permutation(n)
for f in (0.25, 0.5, 1.0):
    m = int(n * f)
    print(f"usage at {m} shuffled tokens: {np.unique(flat[perm[:m]]).size / K:.4f}")
