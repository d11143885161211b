"""Pipeline driver: one executable, eleven subcommands, files in between.

Every subcommand reads a YAML config (``--config``), writes its artifacts
into an output directory (``--out``), and prints progress as JSON records,
one per line. Each output directory is self-describing: the exact resolved
config (``config.yaml``), the content hashes of every input artifact plus
the tool version (``inputs.json``), and the primary outputs. Re-running a
subcommand with the same config and inputs reproduces the primary outputs
byte for byte; seeds only ever come from the config or ``--seed``.

Input artifacts in the config are given as a path, or as a mapping
``{path: ..., sha256: ...}`` when the caller wants the hash verified.
Relative input paths resolve against the config file's directory.

Exit codes: 0 success, 1 config/input validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .evaluation import (
    EvaluatorConfig, MetricReport, embed_motions, embed_texts, fid,
    l1_metric, load_evaluator, mpjpe, mpkpe, retrieval_rk, save_evaluator,
    train_evaluator,
)
from .generator import (
    GeneratorConfig, TokenSequence, build_vocabulary, detokenize_to_clip,
    load_generator, sample, save_generator, sequence_log_prob, text_tokenize,
    train_generator,
)
from .hashing import file_sha256
from .kinematics import (
    Frame, IkConfig, default_model, fk_keypoints, height_correct,
    load_robot_model, retarget_ik, rows_to_arrays, scale_keypoints, smooth,
    tpose_scale_calibration,
)
from .motion_data import (
    FilterLimits, clip_to_rows, compute_norm_stats, feasibility_filter,
    normalize, read_motion_file, split_dataset, synth_corpus,
    write_motion_file,
)
from .tokenizer import (
    FSQ_LEVELS, FsqConfig, TokenizerConfig, VqConfig, codebook_usage,
    load_tokenizer, reconstruct_rows, save_tokenizer, tokenize_rows,
    train_tokenizer, write_token_file,
)

MODEL_SIZES = {"s": (2, 64), "m": (4, 128), "l": (6, 256)}


class ConfigError(ValueError):
    """Validation failure: bad config field, missing artifact, hash mismatch."""


def emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"missing artifact 'config': {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config field '<document>': not valid YAML ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError("config field '<document>': expected a mapping")
    doc["_config_dir"] = str(p.parent)
    return doc


def _field(cfg: dict, key: str, kind, default=None, required: bool = False):
    if key not in cfg or cfg[key] is None:
        if required:
            raise ConfigError(f"config field '{key}': required but missing")
        return default
    v = cfg[key]
    if kind is float and isinstance(v, int):
        v = float(v)
    if not isinstance(v, kind):
        raise ConfigError(
            f"config field '{key}': expected {getattr(kind, '__name__', kind)}, "
            f"got {type(v).__name__}")
    return v


def _resolve_input(cfg: dict, key: str) -> Path:
    """Path of a required input artifact, existence- and hash-checked."""
    entry = cfg.get(key)
    if entry is None:
        raise ConfigError(f"config field '{key}': required but missing")
    if isinstance(entry, dict):
        raw, expected = entry.get("path"), entry.get("sha256")
        if not raw:
            raise ConfigError(f"config field '{key}.path': required but missing")
    elif isinstance(entry, str):
        raw, expected = entry, None
    else:
        raise ConfigError(f"config field '{key}': expected path or {{path, sha256}}")
    path = Path(raw)
    if not path.is_absolute():
        path = Path(cfg.get("_config_dir", ".")) / path
    if not path.is_file():
        raise ConfigError(f"missing artifact '{key}': {path}")
    if expected is not None:
        got = file_sha256(path)
        if got != expected:
            raise ConfigError(
                f"hash mismatch for '{key}': expected {expected}, got {got}")
    return path


def _write_run_dir(out: Path, resolved: dict, inputs: dict[str, Path]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {k: v for k, v in resolved.items() if not k.startswith("_")}
    (out / "config.yaml").write_text(
        yaml.safe_dump(doc, sort_keys=True, default_flow_style=False))
    (out / "inputs.json").write_text(json.dumps({
        "tool_version": __version__,
        "inputs": {k: {"path": str(p), "sha256": file_sha256(p)}
                   for k, p in sorted(inputs.items())},
    }, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _write_curve(path: Path, curve) -> None:
    _write_csv(path, ["step", "loss"],
               list(zip(curve.steps, curve.loss)))


def _robot_model(cfg: dict):
    if cfg.get("robot_model"):
        return load_robot_model(_resolve_input(cfg, "robot_model"))
    return default_model()


def _seed_of(cfg: dict, args, default: int = 0) -> int:
    if args is not None and args.seed is not None:
        return int(args.seed)
    v = cfg.get("seed", default)
    if not isinstance(v, int):
        raise ConfigError(f"config field 'seed': expected int, got {type(v).__name__}")
    return v


# ---------------------------------------------------------------------------
# module-config builders


def _tokenizer_config(cfg: dict, args, seed: int) -> TokenizerConfig:
    qcfg = dict(_field(cfg, "quantizer", dict, default={}))
    kind = qcfg.pop("kind", "fsq")
    if args is not None and args.quantizer:
        kind = args.quantizer
    if kind not in ("vq", "fsq"):
        raise ConfigError(f"config field 'quantizer.kind': expected vq or fsq, got {kind!r}")
    size = qcfg.pop("codebook_size", None)
    if args is not None and args.codebook_size:
        size = args.codebook_size
    if kind == "fsq":
        levels = qcfg.pop("levels", None)
        if levels is None:
            if size is None:
                raise ConfigError("config field 'quantizer.codebook_size': required for fsq")
            if size not in FSQ_LEVELS:
                raise ConfigError(
                    f"config field 'quantizer.codebook_size': no level ladder for {size}; "
                    f"known sizes {sorted(FSQ_LEVELS)}")
            levels = FSQ_LEVELS[size]
        quantizer = FsqConfig(tuple(levels))
    else:
        if size is None:
            raise ConfigError("config field 'quantizer.codebook_size': required for vq")
        quantizer = VqConfig(codebook_size=int(size), **qcfg)
    tcfg = dict(_field(cfg, "tokenizer", dict, default={}))
    tcfg["seed"] = seed
    try:
        return TokenizerConfig(quantizer=quantizer, **tcfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'tokenizer': {e}") from e


def _generator_config(cfg: dict, args, seed: int) -> GeneratorConfig:
    gcfg = dict(_field(cfg, "generator", dict, default={}))
    if args is not None and args.model_size:
        layers, embed = MODEL_SIZES[args.model_size]
        gcfg.update(layers=layers, embed_dim=embed, ff_dim=4 * embed)
    gcfg["seed"] = seed
    try:
        return GeneratorConfig(**gcfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'generator': {e}") from e


def _evaluator_config(cfg: dict, seed: int) -> EvaluatorConfig:
    ecfg = dict(_field(cfg, "evaluator", dict, default={}))
    ecfg["seed"] = seed
    try:
        return EvaluatorConfig(**ecfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'evaluator': {e}") from e


def _clip_entries(model, tok, clips) -> list[dict]:
    entries = []
    for c in clips:
        tokens, orig = tokenize_rows(tok, clip_to_rows(c, model))
        entries.append({"id": c.clip_id, "text": c.text, "fps": c.fps,
                        "orig_len": orig, "tokens": [int(t) for t in tokens]})
    return entries


def _sequences(entries: list[dict], vocab) -> list[TokenSequence]:
    return [TokenSequence(tuple(text_tokenize(e["text"], vocab)),
                          tuple(e["tokens"])) for e in entries]


def _mean_nll(model, seqs) -> float:
    lp, count = 0.0, 0
    for s in seqs:
        lp += sequence_log_prob(model, list(s.text_ids), list(s.motion_ids))
        count += len(s.motion_ids) + 1  # EOS counts as a prediction
    return -lp / max(count, 1)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    seed = _seed_of(cfg, args)
    n_clips = _field(cfg, "n_clips", int, required=True)
    duration = tuple(_field(cfg, "duration", list, default=[3.0, 8.0]))
    if len(duration) != 2 or not all(isinstance(v, (int, float)) for v in duration):
        raise ConfigError("config field 'duration': expected [lo, hi] seconds")
    fps = _field(cfg, "fps", float, default=30.0)
    weights = _field(cfg, "family_weights", dict, default=None)
    resolved = {**cfg, "seed": seed}
    _write_run_dir(out, resolved, {})
    clips = synth_corpus(model, n_clips, seed=seed, duration_range=duration,
                         fps=fps, family_weights=weights)
    dest = out / _field(cfg, "output", str, default="corpus.mjson")
    write_motion_file(clips, dest)
    emit({"event": "synth", "clips": len(clips), "frames": sum(c.n_frames for c in clips),
          "out": str(dest)})


def _cmd_retarget(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    src_path = _resolve_input(cfg, "input")
    scale = _field(cfg, "source_scale", float, default=1.1)
    window = _field(cfg, "smooth_window", int, default=5)
    ikcfg_doc = _field(cfg, "ik", dict, default={})
    try:
        ikcfg = IkConfig(**ikcfg_doc)
    except TypeError as e:
        raise ConfigError(f"config field 'ik': {e}") from e
    resolved = {**cfg, "source_scale": scale, "smooth_window": window}
    _write_run_dir(out, resolved, {"input": src_path})

    clips = read_motion_file(src_path)
    # the source skeleton is this robot uniformly scaled; its own FK traces
    # stand in for mocap keypoints, so IK quality is directly checkable
    tpose = Frame(root_pos=np.zeros(3), root_rpy=np.zeros(3), dofs=model.tpose)
    src_tpose_kp, _ = fk_keypoints(model, tpose.root_pos[None],
                                   tpose.root_rpy[None], tpose.dofs[None])
    scales = tpose_scale_calibration(model, src_tpose_kp[0] * scale)
    done = []
    for c in clips:
        kp, _ = fk_keypoints(model, c.root_pos, c.root_rpy, c.dofs)
        targets_all = scale_keypoints(model, scales, kp * scale)
        prev = tpose
        frames, errs, conv = [], [], 0
        for t in range(c.n_frames):
            res = retarget_ik(model, targets_all[t], prev, ikcfg)
            frames.append(res.frame)
            errs.append(res.mean_error)
            conv += int(res.converged)
            prev = res.frame
        new = dataclasses.replace(
            c,
            root_pos=np.stack([f.root_pos for f in frames]),
            root_rpy=np.stack([f.root_rpy for f in frames]),
            dofs=np.stack([f.dofs for f in frames]),
            source_tag="retargeted",
        )
        new = height_correct(new, model)
        if window > 1 and window <= new.n_frames:
            new = smooth(new, window)
        done.append(new)
        emit({"event": "retarget", "clip": c.clip_id,
              "mean_error_m": round(float(np.mean(errs)), 6),
              "converged": conv / max(c.n_frames, 1)})
    dest = out / _field(cfg, "output", str, default="retargeted.mjson")
    write_motion_file(done, dest)
    emit({"event": "done", "clips": len(done), "out": str(dest)})


def _cmd_filter(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    src_path = _resolve_input(cfg, "input")
    lim_doc = _field(cfg, "limits", dict, default={})
    try:
        limits = FilterLimits(**lim_doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'limits': {e}") from e
    _write_run_dir(out, cfg, {"input": src_path})
    clips = read_motion_file(src_path)
    kept, reports = [], []
    for c in clips:
        rep = feasibility_filter(c, model, limits)
        reports.append({
            "clip_id": rep.clip_id, "verdict": rep.verdict,
            "violations": [{"rule": v.rule, "frame": v.frame,
                            "value": v.value, "threshold": v.threshold}
                           for v in rep.violations],
        })
        if rep.keep:
            kept.append(c)
    dest = out / _field(cfg, "output", str, default="kept.mjson")
    write_motion_file(kept, dest)
    _write_json(out / "filter_report.json", reports)
    emit({"event": "filter", "kept": len(kept),
          "rejected": len(clips) - len(kept), "out": str(dest)})


def _cmd_split(cfg: dict, args, out: Path) -> None:
    src_path = _resolve_input(cfg, "input")
    seed = _seed_of(cfg, args)
    ratios = tuple(_field(cfg, "ratios", list, default=[0.8, 0.15, 0.05]))
    resolved = {**cfg, "seed": seed, "ratios": list(ratios)}
    _write_run_dir(out, resolved, {"input": src_path})
    clips = read_motion_file(src_path)
    try:
        train, test, val = split_dataset(clips, ratios=ratios, seed=seed)
    except ValueError as e:
        raise ConfigError(f"config field 'ratios': {e}") from e
    manifest = {}
    for name, part in (("train", train), ("test", test), ("val", val)):
        write_motion_file(part, out / f"{name}.mjson")
        manifest[name] = {"count": len(part), "clip_ids": [c.clip_id for c in part]}
    _write_json(out / "manifest.json", manifest)
    emit({"event": "split", "train": len(train), "test": len(test),
          "val": len(val), "out": str(out)})


def _train_tokenizer_once(model, cfg_t: TokenizerConfig, train_clips,
                          heldout_clips):
    """Shared by the train-tokenizer command and both sweeps."""
    train_rows = [clip_to_rows(c, model) for c in train_clips]
    stats = compute_norm_stats(np.concatenate(train_rows))
    tok, curve = train_tokenizer(cfg_t, train_rows, stats)
    tok.model_hash = model.content_hash()
    metrics = {"final_loss": curve.loss[-1]}
    if heldout_clips:
        refs = [clip_to_rows(c, model) for c in heldout_clips]
        tokens = [tokenize_rows(tok, r)[0] for r in refs]
        recon = [reconstruct_rows(tok, r) for r in refs]
        pred_clips = []
        for c, rows in zip(heldout_clips, recon):
            rp, rr, df = rows_to_arrays(rows, model)
            pred_clips.append(dataclasses.replace(c, root_pos=rp, root_rpy=rr, dofs=df))
        metrics.update(
            usage=codebook_usage(np.concatenate(tokens), cfg_t.codebook_size),
            mpjpe=mpjpe(pred_clips, list(heldout_clips), model),
            mpkpe=mpkpe(pred_clips, list(heldout_clips), model),
            l1=l1_metric(normalize(np.concatenate(recon), stats),
                         normalize(np.concatenate(refs), stats)),
        )
    return tok, curve, metrics


def _cmd_train_tokenizer(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    seed = _seed_of(cfg, args)
    corpus_path = _resolve_input(cfg, "corpus")
    inputs = {"corpus": corpus_path}
    heldout = []
    if cfg.get("heldout"):
        inputs["heldout"] = _resolve_input(cfg, "heldout")
        heldout = read_motion_file(inputs["heldout"])
    cfg_t = _tokenizer_config(cfg, args, seed)
    resolved = {**cfg, "seed": seed, "tokenizer": cfg_t.to_dict()}
    _write_run_dir(out, resolved, inputs)
    clips = read_motion_file(corpus_path)
    emit({"event": "start", "command": "train-tokenizer",
          "quantizer": "fsq" if isinstance(cfg_t.quantizer, FsqConfig) else "vq",
          "codebook_size": cfg_t.codebook_size, "clips": len(clips)})
    tok, curve, metrics = _train_tokenizer_once(model, cfg_t, clips, heldout)
    save_tokenizer(out / "tokenizer.ckpt", tok)
    _write_curve(out / "curve.csv", curve)
    _write_csv(out / "usage.csv", ["step", "usage"],
               list(zip(curve.usage_steps, curve.usage)))
    _write_json(out / "metrics.json", metrics)
    emit({"event": "done", **{k: round(float(v), 6) for k, v in metrics.items()},
          "out": str(out / "tokenizer.ckpt")})


def _cmd_train_generator(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    seed = _seed_of(cfg, args)
    corpus_path = _resolve_input(cfg, "corpus")
    tok_path = _resolve_input(cfg, "tokenizer")
    inputs = {"corpus": corpus_path, "tokenizer": tok_path}
    val_clips = []
    if cfg.get("val"):
        inputs["val"] = _resolve_input(cfg, "val")
        val_clips = read_motion_file(inputs["val"])
    cfg_g = _generator_config(cfg, args, seed)
    resolved = {**cfg, "seed": seed, "generator": cfg_g.to_dict()}
    _write_run_dir(out, resolved, inputs)
    tok = load_tokenizer(tok_path)
    clips = read_motion_file(corpus_path)
    entries = _clip_entries(model, tok, clips)
    write_token_file(out / "tokens.jsonl", tok, entries)
    vocab = build_vocabulary([e["text"] for e in entries], tok.config.codebook_size)
    seqs = _sequences(entries, vocab)
    emit({"event": "start", "command": "train-generator", "sequences": len(seqs),
          "layers": cfg_g.layers, "embed_dim": cfg_g.embed_dim})
    gen, curve = train_generator(cfg_g, seqs, vocab)
    gen.tokenizer_hash = tok.model_hash
    save_generator(out / "generator.ckpt", gen)
    _write_curve(out / "curve.csv", curve)
    metrics = {"train_nll": _mean_nll(gen, seqs)}
    if val_clips:
        metrics["val_nll"] = _mean_nll(
            gen, _sequences(_clip_entries(model, tok, val_clips), vocab))
    _write_json(out / "metrics.json", metrics)
    emit({"event": "done", **{k: round(float(v), 6) for k, v in metrics.items()},
          "out": str(out / "generator.ckpt")})


def _cmd_train_evaluator(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    seed = _seed_of(cfg, args)
    corpus_path = _resolve_input(cfg, "corpus")
    cfg_e = _evaluator_config(cfg, seed)
    resolved = {**cfg, "seed": seed, "evaluator": cfg_e.to_dict()}
    _write_run_dir(out, resolved, {"corpus": corpus_path})
    clips = read_motion_file(corpus_path)
    rows = [clip_to_rows(c, model) for c in clips]
    stats = compute_norm_stats(np.concatenate(rows))
    pairs = [(r, c.text) for r, c in zip(rows, clips)]
    emit({"event": "start", "command": "train-evaluator", "pairs": len(pairs)})
    ev, curve = train_evaluator(cfg_e, pairs, stats)
    save_evaluator(out / "evaluator.ckpt", ev)
    _write_curve(out / "curve.csv", curve)
    m_emb = embed_motions(ev, rows)
    t_emb = embed_texts(ev, [c.text for c in clips])
    metrics = {"train_r_at_1": retrieval_rk(m_emb, t_emb, 1)}
    _write_json(out / "metrics.json", metrics)
    emit({"event": "done", **{k: round(float(v), 6) for k, v in metrics.items()},
          "out": str(out / "evaluator.ckpt")})


def _generate_clips(gen, tok, model, prompts, n_per, temperature, top_k,
                    max_len, fps, seed):
    """Sample token sequences per prompt and detokenize; empty samples fall
    back to greedy so a cold model still yields a clip per prompt."""
    clips, gaps = [], []
    for i, text in enumerate(prompts):
        for j in range(n_per):
            ids = sample(gen, text, temperature=temperature, top_k=top_k,
                         max_len=max_len, seed=seed + 1000003 * i + j)
            if not ids:
                ids = sample(gen, text, temperature=0.0, max_len=max_len, seed=0)
            if not ids:
                continue
            clip, gap = detokenize_to_clip(ids, tok, model, fps=fps, text=text,
                                           clip_id=f"gen-{i:04d}-{j}")
            clips.append(clip)
            gaps.append(gap)
    return clips, gaps


def _cmd_generate(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    seed = _seed_of(cfg, args)
    gen_path = _resolve_input(cfg, "generator")
    tok_path = _resolve_input(cfg, "tokenizer")
    inputs = {"generator": gen_path, "tokenizer": tok_path}
    prompts = _field(cfg, "prompts", list, default=None)
    if prompts is None:
        if not cfg.get("prompts_from"):
            raise ConfigError("config field 'prompts': required (or 'prompts_from')")
        inputs["prompts_from"] = _resolve_input(cfg, "prompts_from")
        prompts = [c.text for c in read_motion_file(inputs["prompts_from"])]
    if not prompts:
        raise ConfigError("config field 'prompts': empty prompt list")
    n_per = _field(cfg, "samples_per_prompt", int, default=1)
    temperature = _field(cfg, "temperature", float, default=1.0)
    top_k = _field(cfg, "top_k", int, default=50)
    max_len = _field(cfg, "max_len", int, default=256)
    fps = _field(cfg, "fps", float, default=30.0)
    resolved = {**cfg, "seed": seed, "prompts": list(prompts)}
    _write_run_dir(out, resolved, inputs)
    gen, tok = load_generator(gen_path), load_tokenizer(tok_path)
    clips, gaps = _generate_clips(gen, tok, model, prompts, n_per, temperature,
                                  top_k, max_len, fps, seed)
    if not clips:
        raise RuntimeError("generation produced no non-empty token sequences")
    dest = out / _field(cfg, "output", str, default="generated.mjson")
    write_motion_file(clips, dest)
    _write_json(out / "metrics.json", {
        "clips": len(clips), "mean_consistency_gap_m": float(np.mean(gaps))})
    emit({"event": "generate", "clips": len(clips),
          "mean_consistency_gap_m": round(float(np.mean(gaps)), 6), "out": str(dest)})


def _cmd_eval(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    cand_path = _resolve_input(cfg, "candidates")
    ref_path = _resolve_input(cfg, "references")
    ev_path = _resolve_input(cfg, "evaluator")
    tok_path = _resolve_input(cfg, "tokenizer")
    _write_run_dir(out, cfg, {"candidates": cand_path, "references": ref_path,
                              "evaluator": ev_path, "tokenizer": tok_path})
    cands = read_motion_file(cand_path)
    refs = read_motion_file(ref_path)
    if len(cands) != len(refs):
        raise ConfigError(
            f"config field 'candidates': {len(cands)} clips vs {len(refs)} references; "
            "paired metrics need equal counts")
    ev, tok = load_evaluator(ev_path), load_tokenizer(tok_path)
    # paired position metrics compare the overlapping prefix of each pair
    pairs = []
    for c, r in zip(cands, refs):
        T = min(c.n_frames, r.n_frames)
        pairs.append((dataclasses.replace(c, root_pos=c.root_pos[:T],
                                          root_rpy=c.root_rpy[:T], dofs=c.dofs[:T]),
                      dataclasses.replace(r, root_pos=r.root_pos[:T],
                                          root_rpy=r.root_rpy[:T], dofs=r.dofs[:T])))
    pred_rows = [clip_to_rows(p, model) for p, _ in pairs]
    ref_rows = [clip_to_rows(r, model) for _, r in pairs]
    cand_rows = [clip_to_rows(c, model) for c in cands]
    full_ref_rows = [clip_to_rows(r, model) for r in refs]
    tokens = [tokenize_rows(tok, r)[0] for r in cand_rows]
    m_emb = embed_motions(ev, cand_rows)
    t_emb = embed_texts(ev, [c.text for c in cands])
    report = MetricReport(
        mpjpe=mpjpe([p for p, _ in pairs], [r for _, r in pairs], model),
        mpkpe=mpkpe([p for p, _ in pairs], [r for _, r in pairs], model),
        l1=l1_metric(normalize(np.concatenate(pred_rows), tok.stats),
                     normalize(np.concatenate(ref_rows), tok.stats)),
        usage=codebook_usage(np.concatenate(tokens), tok.config.codebook_size),
        fid=fid(embed_motions(ev, cand_rows), embed_motions(ev, full_ref_rows)),
        r_at={k: retrieval_rk(m_emb, t_emb, k)
              for k in (1, 2, 3) if k <= len(cands)},
    )
    _write_json(out / "report.json", report.to_dict())
    emit({"event": "eval", **{k: (round(v, 6) if isinstance(v, float) else
                                  {kk: round(vv, 6) for kk, vv in v.items()})
                              for k, v in report.to_dict().items()}})


# ---------------------------------------------------------------------------
# sweeps


def _plot_csv(path: Path, series: dict) -> None:
    """series: {x: [values across seeds]} -> x, median, min, max rows."""
    rows = []
    for x in sorted(series):
        vs = sorted(float(v) for v in series[x])
        rows.append([x, float(np.median(vs)), vs[0], vs[-1]])
    _write_csv(path, ["x", "median", "min", "max"], rows)


def _sweep_codebook_run(payload: dict) -> dict:
    """One (quantizer, codebook size, seed) tokenizer run; sweep worker."""
    cfg = payload["cfg"]
    model = _robot_model(cfg)
    clips = read_motion_file(payload["corpus"])
    split = cfg.get("split", {})
    train, heldout, _ = split_dataset(
        clips, ratios=tuple(split.get("ratios", (0.8, 0.15, 0.05))),
        seed=int(split.get("seed", 0)))
    sub = {"quantizer": {"kind": payload["quantizer"],
                         "codebook_size": payload["codebook_size"],
                         **cfg.get("vq" if payload["quantizer"] == "vq" else "fsq", {})},
           "tokenizer": cfg.get("tokenizer", {})}
    cfg_t = _tokenizer_config(sub, None, payload["seed"])
    run_dir = Path(payload["run_dir"])
    _write_run_dir(run_dir, {**sub, "seed": payload["seed"]},
                   {"corpus": Path(payload["corpus"])})
    tok, curve, metrics = _train_tokenizer_once(model, cfg_t, train, heldout)
    save_tokenizer(run_dir / "tokenizer.ckpt", tok)
    _write_curve(run_dir / "curve.csv", curve)
    _write_json(run_dir / "metrics.json", metrics)
    return {"quantizer": payload["quantizer"],
            "codebook_size": payload["codebook_size"],
            "seed": payload["seed"], **metrics}


def _fan_out(jobs: list[dict], worker, processes: int) -> list[dict]:
    if processes <= 1 or len(jobs) <= 1:
        return [worker(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=processes) as pool:
        return list(pool.map(worker, jobs))


def _cmd_sweep_codebook(cfg: dict, args, out: Path) -> None:
    corpus_path = _resolve_input(cfg, "corpus")
    ladder = _field(cfg, "ladder", list, default=[64, 256, 1024, 4096])
    quantizers = _field(cfg, "quantizers", list, default=["vq", "fsq"])
    seeds = _field(cfg, "seeds", list, default=[0, 1, 2])
    processes = _field(cfg, "processes", int, default=1)
    _write_run_dir(out, cfg, {"corpus": corpus_path})
    jobs = []
    for q in quantizers:
        for size in ladder:
            for seed in seeds:
                jobs.append({"cfg": cfg, "corpus": str(corpus_path),
                             "quantizer": q, "codebook_size": int(size),
                             "seed": int(seed),
                             "run_dir": str(out / "runs" / f"{q}-{size}-s{seed}")})
    emit({"event": "start", "command": "sweep-codebook", "runs": len(jobs),
          "processes": processes})
    results = _fan_out(jobs, _sweep_codebook_run, processes)
    results.sort(key=lambda r: (r["quantizer"], r["codebook_size"], r["seed"]))
    header = ["quantizer", "codebook_size", "seed", "usage", "mpjpe", "mpkpe", "l1"]
    _write_csv(out / "runs.csv", header,
               [[r[k] for k in header] for r in results])
    for metric in ("usage", "mpjpe", "mpkpe", "l1"):
        for q in quantizers:
            series: dict = {}
            for r in results:
                if r["quantizer"] == q:
                    series.setdefault(r["codebook_size"], []).append(r[metric])
            _plot_csv(out / f"plot_{metric}_{q}.csv", series)
    for r in results:
        emit({"event": "run", **{k: (round(float(v), 6) if isinstance(v, float) else v)
                                 for k, v in r.items()}})
    emit({"event": "done", "rows": len(results), "out": str(out / "runs.csv")})


def _sweep_model_size_run(payload: dict) -> dict:
    """One (ladder rung, codebook, seed) generator run; sweep worker."""
    cfg = payload["cfg"]
    model = _robot_model(cfg)
    tok = load_tokenizer(payload["tokenizer"])
    ev = load_evaluator(payload["evaluator"])
    train_clips = read_motion_file(payload["train"])
    val_clips = read_motion_file(payload["val"])
    layers, embed = payload["layers"], payload["embed_dim"]
    gcfg = dict(cfg.get("generator", {}))
    gcfg.update(layers=layers, embed_dim=embed, ff_dim=4 * embed,
                seed=payload["seed"])
    cfg_g = GeneratorConfig(**gcfg)
    train_entries = _clip_entries(model, tok, train_clips)
    val_entries = _clip_entries(model, tok, val_clips)
    vocab = build_vocabulary([e["text"] for e in train_entries],
                             tok.config.codebook_size)
    gen, curve = train_generator(cfg_g, _sequences(train_entries, vocab), vocab)
    run_dir = Path(payload["run_dir"])
    _write_run_dir(run_dir, {"generator": cfg_g.to_dict(),
                             "codebook_size": tok.config.codebook_size,
                             "seed": payload["seed"]},
                   {"train": Path(payload["train"]), "val": Path(payload["val"]),
                    "tokenizer": Path(payload["tokenizer"])})
    save_generator(run_dir / "generator.ckpt", gen)
    _write_curve(run_dir / "curve.csv", curve)
    val_nll = _mean_nll(gen, _sequences(val_entries, vocab))
    gencfg = cfg.get("generate", {})
    clips, _gaps = _generate_clips(
        gen, tok, model, [c.text for c in val_clips],
        int(gencfg.get("samples_per_prompt", 1)),
        float(gencfg.get("temperature", 1.0)), int(gencfg.get("top_k", 50)),
        int(gencfg.get("max_len", 256)), float(val_clips[0].fps), payload["seed"])
    gen_rows = [clip_to_rows(c, model) for c in clips]
    val_rows = [clip_to_rows(c, model) for c in val_clips]
    m_emb = embed_motions(ev, gen_rows)
    t_emb = embed_texts(ev, [c.text for c in clips])
    metrics = {
        "val_nll": float(val_nll),
        "fid": fid(m_emb, embed_motions(ev, val_rows)),
        "r_at_1": retrieval_rk(m_emb, t_emb, 1),
    }
    _write_json(run_dir / "metrics.json", metrics)
    return {"size": payload["size"], "layers": layers, "embed_dim": embed,
            "codebook_size": tok.config.codebook_size, "seed": payload["seed"],
            **metrics}


def _cmd_sweep_model_size(cfg: dict, args, out: Path) -> None:
    model = _robot_model(cfg)
    corpus_path = _resolve_input(cfg, "corpus")
    seeds = [int(s) for s in _field(cfg, "seeds", list, default=[0, 1, 2])]
    ladder = _field(cfg, "ladder", list, default=[[2, 64], [4, 128], [6, 256]])
    codebooks = [int(k) for k in _field(cfg, "codebooks", list, default=[64, 1024])]
    processes = _field(cfg, "processes", int, default=1)
    _write_run_dir(out, cfg, {"corpus": corpus_path})
    clips = read_motion_file(corpus_path)
    split = cfg.get("split", {})
    train, test, val = split_dataset(
        clips, ratios=tuple(split.get("ratios", (0.8, 0.15, 0.05))),
        seed=int(split.get("seed", 0)))
    shared = out / "shared"
    shared.mkdir(parents=True, exist_ok=True)
    write_motion_file(train, shared / "train.mjson")
    write_motion_file(val, shared / "val.mjson")

    # stage-1 tokenizers and the evaluator are shared across ladder runs
    tok_paths = {}
    for size in codebooks:
        sub = {"quantizer": {"kind": cfg.get("stage1_quantizer", "fsq"),
                             "codebook_size": size},
               "tokenizer": cfg.get("tokenizer", {})}
        cfg_t = _tokenizer_config(sub, None, int(cfg.get("tokenizer", {}).get("seed", 0)))
        emit({"event": "stage1", "codebook_size": size, "steps": cfg_t.steps})
        tok, _curve, tmetrics = _train_tokenizer_once(model, cfg_t, train, test)
        path = shared / f"tokenizer_{size}.ckpt"
        save_tokenizer(path, tok)
        tok_paths[size] = str(path)
        emit({"event": "stage1-done", "codebook_size": size,
              **{k: round(float(v), 6) for k, v in tmetrics.items()}})
    cfg_e = _evaluator_config(cfg, int(cfg.get("evaluator", {}).get("seed", 0)))
    rows = [clip_to_rows(c, model) for c in train]
    stats = compute_norm_stats(np.concatenate(rows))
    ev, _ = train_evaluator(cfg_e, [(r, c.text) for r, c in zip(rows, train)], stats)
    ev_path = shared / "evaluator.ckpt"
    save_evaluator(ev_path, ev)
    emit({"event": "evaluator-done", "pairs": len(rows)})

    sizes = [("s", "m", "l")[i] if i < 3 else f"x{i}" for i in range(len(ladder))]
    jobs = []
    for i, (layers, embed) in enumerate(ladder):
        for seed in seeds:
            jobs.append({"cfg": cfg, "size": sizes[i], "layers": int(layers),
                         "embed_dim": int(embed), "seed": int(seed),
                         "tokenizer": tok_paths[codebooks[0]],
                         "evaluator": str(ev_path),
                         "train": str(shared / "train.mjson"),
                         "val": str(shared / "val.mjson"),
                         "run_dir": str(out / "runs" / f"{sizes[i]}-k{codebooks[0]}-s{seed}")})
    # the codebook comparison reruns only the largest rung on the other sizes
    layers, embed = ladder[-1]
    for size in codebooks[1:]:
        for seed in seeds:
            jobs.append({"cfg": cfg, "size": sizes[len(ladder) - 1],
                         "layers": int(layers), "embed_dim": int(embed),
                         "seed": int(seed), "tokenizer": tok_paths[size],
                         "evaluator": str(ev_path),
                         "train": str(shared / "train.mjson"),
                         "val": str(shared / "val.mjson"),
                         "run_dir": str(out / "runs" / f"{sizes[len(ladder) - 1]}-k{size}-s{seed}")})
    emit({"event": "start", "command": "sweep-model-size", "runs": len(jobs),
          "processes": processes})
    results = _fan_out(jobs, _sweep_model_size_run, processes)
    results.sort(key=lambda r: (r["embed_dim"], r["codebook_size"], r["seed"]))
    header = ["size", "layers", "embed_dim", "codebook_size", "seed",
              "val_nll", "fid", "r_at_1"]
    _write_csv(out / "runs.csv", header,
               [[r[k] for k in header] for r in results])
    for metric in ("val_nll", "fid", "r_at_1"):
        series: dict = {}
        for r in results:
            if r["codebook_size"] == codebooks[0]:
                series.setdefault(r["embed_dim"], []).append(r[metric])
        _plot_csv(out / f"plot_{metric}.csv", series)
    for r in results:
        emit({"event": "run", **{k: (round(float(v), 6) if isinstance(v, float) else v)
                                 for k, v in r.items()}})
    emit({"event": "done", "rows": len(results), "out": str(out / "runs.csv")})


# ---------------------------------------------------------------------------
# entry point


_HANDLERS = {
    "synth": _cmd_synth,
    "retarget": _cmd_retarget,
    "filter": _cmd_filter,
    "split": _cmd_split,
    "train-tokenizer": _cmd_train_tokenizer,
    "train-generator": _cmd_train_generator,
    "train-evaluator": _cmd_train_evaluator,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "sweep-codebook": _cmd_sweep_codebook,
    "sweep-model-size": _cmd_sweep_model_size,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="robomotion",
        description="text-to-motion pipeline: synthesis, retargeting, "
                    "filtering, tokenization, generation, evaluation, sweeps")
    parser.add_argument("command", choices=sorted(_HANDLERS))
    parser.add_argument("--config", required=True, help="YAML run config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--quantizer", choices=["vq", "fsq"], default=None)
    parser.add_argument("--codebook-size", type=int, default=None)
    parser.add_argument("--model-size", choices=sorted(MODEL_SIZES), default=None)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = _load_config(args.config)
        out = Path(args.out) if args.out else Path(cfg.get("out", "."))
        _HANDLERS[args.command](cfg, args, out)
    except ConfigError as e:
        emit({"event": "error", "kind": "validation", "message": str(e)})
        return 1
    except Exception as e:  # noqa: BLE001 - boundary of the process
        emit({"event": "error", "kind": "runtime",
              "message": f"{type(e).__name__}: {e}"})
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
