"""Held-out codebook usage probe for the tokenizer on the synthetic corpus.

Usage: python3 probe_usage.py <kind> <codebook> <window> <steps> [seed]
"""
import sys
import time

import numpy as np

from robomotion.kinematics import default_model
from robomotion.motion_data import (
    clip_to_rows, compute_norm_stats, normalize, split_dataset, synth_corpus)
from robomotion.tokenizer import (
    FSQ_LEVELS, FsqConfig, TokenizerConfig, VqConfig, codebook_usage,
    reconstruct_rows, tokenize_rows, train_tokenizer)


def main() -> None:
    kind, K, width, steps = sys.argv[1], int(sys.argv[2]), int(sys.argv[3]), int(sys.argv[4])
    seed = int(sys.argv[5]) if len(sys.argv) > 5 else 0
    factor = int(sys.argv[6]) if len(sys.argv) > 6 else 1
    dur = (float(sys.argv[7]), float(sys.argv[8])) if len(sys.argv) > 8 else (6.0, 12.0)
    noise = float(sys.argv[9]) if len(sys.argv) > 9 else 0.1
    r_train = float(sys.argv[10]) if len(sys.argv) > 10 else 0.6
    r_held = float(sys.argv[11]) if len(sys.argv) > 11 else 0.35
    model = default_model()
    clips = synth_corpus(model, n_clips=200, seed=42, duration_range=dur)
    train, val, test = split_dataset(clips, ratios=(r_train, r_held, 1.0 - r_train - r_held), seed=0)
    train_rows = [clip_to_rows(c, model) for c in train]
    held_rows = [clip_to_rows(c, model) for c in val]
    stats = compute_norm_stats(np.concatenate(train_rows, axis=0))

    q = FsqConfig(levels=FSQ_LEVELS[K]) if kind == "fsq" else VqConfig(
        codebook_size=K, code_dim=8)
    cfg = TokenizerConfig(
        quantizer=q, input_dim=137, width=width, res_blocks=2,
        downsample_factor=factor, lr=5e-3, lr_final=1e-4,
        warmup_steps=300 if steps > 6000 else 200, batch_size=12,
        steps=steps, window=48, input_noise=noise,
        round_dither=0.5 if kind == "fsq" else 0.0, seed=seed)
    t0 = time.time()
    tok, curve = train_tokenizer(cfg, train_rows, stats)
    dt = time.time() - t0

    all_t = np.concatenate([tokenize_rows(tok, r)[0] for r in held_rows])
    usage = codebook_usage(all_t, K)
    counts = np.bincount(all_t, minlength=K)
    p = counts / counts.sum()
    ent = -(p[p > 0] * np.log2(p[p > 0])).sum()
    l1s = []
    for r in held_rows:
        n = normalize(r, stats)
        rec_n = normalize(reconstruct_rows(tok, r), stats)
        l1s.append(np.abs(rec_n - n).mean())
    print(f"{kind}{K} w{width} s{steps} seed{seed}: usage {usage:.4f} "
          f"entropy {ent:.2f} bits  L1 {np.median(l1s):.4f}  "
          f"tokens {all_t.size}  loss {curve.loss[-1]:.4f}  {dt:.0f}s")


if __name__ == "__main__":
    main()
