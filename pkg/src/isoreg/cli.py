"""Command-line entry point: ``isoreg <command> [flags]``.

Commands: synth, pretrain, eval, isotropy, whiten, sweep, report.  Each run
that writes files also writes ``manifest.json`` next to them, holding the
parsed config, the seed, and git-style blob hashes of every input and
primary output.  Wall-clock timings are written to separate files, which
the manifest lists as non-primary.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, SplitSpec, SynthConfig, default_split, generate_synthetic,
                   load_jsonl, save_jsonl, select_domains, split_by_domain)
from .errors import (CheckpointError, ConfigError, ContractViolation, DataFormatError,
                     DegenerateInputError, SamplingError, UsageError)
from .fewshot import EpisodeSpec, EvalReport, combine_reports, evaluate_reps
from .geometry import (correlation, covariance, fit_whitening, isotropy, load_embeddings,
                       save_embeddings)
from .model import checkpoint_load, checkpoint_save, embed_texts
from .numcore import make_rng
from .objectives import ObjectiveConfig
from .plots import heatmap, line_plot, write_svg
from .training import TrainConfig, TrainLog, train

log = logging.getLogger("isoreg")

USAGE_ERRORS = (ConfigError, DataFormatError, CheckpointError, ContractViolation,
                DegenerateInputError, SamplingError, UsageError)

CHECKPOINT = "model.ckpt"
TRAINLOG = "trainlog.jsonl"
TIMING = "timing.json"
MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# small I/O helpers
# ---------------------------------------------------------------------------

def blob_hash(path) -> str:
    """Content hash computed the way ``git hash-object`` does it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def need_file(path, what: str = "input file") -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_manifest(out: Path, command: str, config: dict, seed, inputs, outputs,
                   nonprimary=()) -> None:
    write_json(out / MANIFEST, {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": {str(p): blob_hash(p) for p in inputs},
        "outputs": {name: blob_hash(out / name) for name in outputs},
        "nonprimary": sorted(nonprimary),
    })


def parse_ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def parse_floats(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("no values given")
    return vals


def load_split(path) -> SplitSpec | None:
    return None if path is None else SplitSpec.from_json(path)


def load_corpus(path) -> Dataset:
    return load_jsonl(need_file(path, "corpus"))


def load_model(path):
    return checkpoint_load(need_file(path, "checkpoint"))


def target_of(data: Dataset, split: SplitSpec | None) -> Dataset:
    """Held-out domains of ``split``, or the whole corpus without one."""
    if split is None:
        return data
    if not split.excluded:
        raise ConfigError("split has no excluded (target) domains")
    return select_domains(data, split.excluded)


def source_and_val(data: Dataset, split: SplitSpec | None):
    if split is None:
        return data, Dataset.from_records([])
    return split_by_domain(data, split)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig()
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(need_file(args.config, "config").read_text()))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    spec, _ = default_split(cfg, args.n_val, args.n_target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_synthetic(cfg)
    save_jsonl(data, out / "corpus.jsonl")
    write_json(out / "split.json", {"train": list(spec.train),
                                    "validation": list(spec.validation),
                                    "excluded": list(spec.excluded)})
    inputs = [args.config] if args.config else []
    write_manifest(out, "synth", cfg.to_dict(), cfg.seed, inputs, ["corpus.jsonl", "split.json"])
    print(f"{len(data)} utterances, {data.n_classes} intents, {len(data.domain_names)} domains "
          f"-> {out}")
    return 0


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

def _train_config(path, seed=None) -> TrainConfig:
    cfg = TrainConfig.from_json(path)
    return cfg if seed is None else replace(cfg, seed=seed)


def run_pretrain(cfg: TrainConfig, source: Dataset, val: Dataset, out: Path):
    """Train and write checkpoint, timing-free log and timing summary into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    params, trainlog = train(source, val, cfg)
    checkpoint_save(params, out / CHECKPOINT,
                    meta={"seed": cfg.seed, "best_step": trainlog.best_step})
    trainlog.write_jsonl(out / TRAINLOG, timings=False)
    write_json(out / TIMING, timing_record(trainlog))
    return params, trainlog


def timing_record(trainlog: TrainLog) -> dict:
    totals = trainlog.timing_summary()
    epochs = len(trainlog.steps) / trainlog.epoch_size if trainlog.epoch_size else 0.0
    last = trainlog.steps[-1] if trainlog.steps else {}
    return {
        "seconds_total": totals,
        "seconds_per_epoch": {k: v / epochs for k, v in totals.items()} if epochs else {},
        "steps": len(trainlog.steps),
        "steps_per_epoch": trainlog.epoch_size,
        "final_breakdown": last,
    }


def cmd_pretrain(args) -> int:
    cfg = _train_config(args.config, args.seed)
    data = load_corpus(args.data)
    split = load_split(args.split)
    source, val = source_and_val(data, split)
    out = Path(args.out)
    _, trainlog = run_pretrain(cfg, source, val, out)
    inputs = [p for p in (args.config, args.data, args.split) if p]
    write_manifest(out, "pretrain", cfg.to_dict(), cfg.seed, inputs, [CHECKPOINT, TRAINLOG],
                   nonprimary=[TIMING])
    cor = trainlog.epoch_means("cor")
    print(f"steps {len(trainlog.steps)} ({trainlog.stop_reason}), best step {trainlog.best_step}, "
          f"best val acc {trainlog.best_val_acc:.4f}")
    if cor and cfg.objective.use_cor:
        print(f"cor term: first epoch {cor[0]:.6f}, last epoch {cor[-1]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def paired_difference(a: EvalReport, b: EvalReport) -> dict:
    diff = np.asarray(b.per_episode) - np.asarray(a.per_episode)
    se = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return {"mean_diff": float(diff.mean()), "se": se, "n": int(len(diff))}


def unpaired_difference(a: EvalReport, b: EvalReport) -> dict:
    xa, xb = np.asarray(a.per_episode), np.asarray(b.per_episode)
    se = float(np.sqrt(xa.var(ddof=1) / len(xa) + xb.var(ddof=1) / len(xb)))
    return {"mean_diff": float(xb.mean() - xa.mean()), "se": se, "n": int(len(xa))}


def evaluate_checkpoint(reps, labels, C, Ks, Q, episodes, seeds, offset=None) -> dict:
    """{K: report pooled over episode seeds}; ``offset`` decorrelates episode draws."""
    out = {}
    for K in Ks:
        spec = EpisodeSpec(C=C, K=K, Q=Q, episodes=episodes)
        reports = []
        for s in seeds:
            seed = s if offset is None else s + 100_003 * offset
            reports.append(evaluate_reps(reps, labels, spec, seed=seed))
        out[K] = combine_reports(reports)
    return out


def cmd_eval(args) -> int:
    seeds = parse_ints(args.seeds)
    if not seeds:
        raise ConfigError("--seeds is empty")
    target = target_of(load_corpus(args.target), load_split(args.split))
    if len(target) == 0:
        raise ConfigError("target set is empty")
    models = [load_model(p) for p in args.checkpoint]
    cached = None
    if args.embeddings:
        if len(models) != 1:
            raise ConfigError("--embeddings needs exactly one --checkpoint")
        cached = load_embeddings(args.embeddings)
        d = models[0].config.d_out
        if cached.shape[1] != d:
            raise ConfigError(f"embedding width {cached.shape[1]} does not match checkpoint "
                              f"d_out={d}")
        if cached.shape[0] != len(target):
            raise ConfigError(f"{cached.shape[0]} embedding rows for {len(target)} target "
                              f"utterances")

    results = []
    for i, params in enumerate(models):
        reps = cached if cached is not None else embed_texts(params, target.texts)
        offset = i if args.independent_episodes else None
        results.append(evaluate_checkpoint(reps, target.labels, args.C, args.K, args.Q,
                                           args.episodes, seeds, offset))

    doc = {"target": str(args.target), "C": args.C, "Q": args.Q, "episodes": args.episodes,
           "seeds": seeds, "paired": not args.independent_episodes, "models": [],
           "differences": []}
    lines = []
    for path, params, res in zip(args.checkpoint, models, results):
        entry = {"checkpoint": str(path), "fingerprint": params.fingerprint(), "results": {}}
        for K, rep in res.items():
            entry["results"][str(K)] = rep.to_dict()
            lines.append(f"{path}  {args.C}-way {K}-shot  {rep.summary()}")
        doc["models"].append(entry)
    diff_fn = unpaired_difference if args.independent_episodes else paired_difference
    for i in range(1, len(models)):
        for K in args.K:
            d = diff_fn(results[0][K], results[i][K])
            d.update({"K": K, "baseline": str(args.checkpoint[0]),
                      "model": str(args.checkpoint[i])})
            doc["differences"].append(d)
            kind = "unpaired" if args.independent_episodes else "paired"
            lines.append(f"{kind} diff {args.checkpoint[i]} - {args.checkpoint[0]}  {K}-shot  "
                         f"{100 * d['mean_diff']:+.2f} points (se {100 * d['se']:.2f})")
    print("\n".join(lines))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "eval.json", doc)
        write_csv(out / "eval.csv", ["checkpoint", "C", "K", "mean_acc", "std_acc", "n_episodes"],
                  [(m["checkpoint"], args.C, int(K), r["mean"], r["std"], r["n_episodes"])
                   for m in doc["models"] for K, r in m["results"].items()])
        inputs = list(args.checkpoint) + [args.target] + [p for p in (args.split, args.embeddings)
                                                          if p]
        write_manifest(out, "eval", {k: doc[k] for k in ("C", "Q", "episodes", "paired")}
                       | {"K": args.K}, seeds, inputs, ["eval.json", "eval.csv"])
    return 0


# ---------------------------------------------------------------------------
# isotropy
# ---------------------------------------------------------------------------

def subsample(n: int, k: int | None, rng) -> np.ndarray:
    if k is None or k >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def isotropy_table(V, groups, names, k, seed) -> list:
    """[(name, n, isotropy)] per group then overall; subsampling is per group."""
    rng = make_rng(seed)
    rows = []
    if groups is not None:
        for g, name in enumerate(names):
            idx = np.flatnonzero(groups == g)
            idx = idx[subsample(len(idx), k, rng)]
            rows.append((name, len(idx), isotropy(V[idx])))
    idx = subsample(len(V), k, rng)
    rows.append(("all", len(idx), isotropy(V[idx])))
    return rows


def cmd_isotropy(args) -> int:
    if args.embeddings and (args.checkpoint or args.data):
        raise ConfigError("give either --embeddings or --checkpoint with --data, not both")
    inputs = []
    groups = names = None
    if args.embeddings:
        if args.per_domain:
            raise ConfigError("--per-domain needs --checkpoint and --data")
        V = load_embeddings(need_file(args.embeddings, "embeddings file"))
        inputs.append(args.embeddings)
    elif args.checkpoint and args.data:
        params = load_model(args.checkpoint)
        data = target_of(load_corpus(args.data), load_split(args.split))
        V = embed_texts(params, data.texts)
        if args.per_domain:
            groups, names = data.domains, data.domain_names
        inputs += [p for p in (args.checkpoint, args.data, args.split) if p]
    else:
        raise ConfigError("need --embeddings, or --checkpoint together with --data")
    if args.subsample is not None and args.subsample < 2:
        raise ConfigError("--subsample must be at least 2")

    rows = isotropy_table(V, groups, names, args.subsample, args.seed)
    if groups is None:
        print(f"{rows[-1][2]:.6f}")
    else:
        for name, n, iso in rows:
            print(f"{name}\t{n}\t{iso:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "isotropy.csv", ["domain", "n", "isotropy"], rows)
        write_manifest(out, "isotropy", {"subsample": args.subsample, "per_domain":
                                         args.per_domain}, args.seed, inputs, ["isotropy.csv"])
    return 0


# ---------------------------------------------------------------------------
# whiten
# ---------------------------------------------------------------------------

def cmd_whiten(args) -> int:
    V = load_embeddings(need_file(args.embeddings, "embeddings file"))
    fit_src = load_embeddings(need_file(args.fit_on, "embeddings file")) if args.fit_on else V
    wmap = fit_whitening(fit_src)
    W = wmap.apply(V)
    before, after = isotropy(V), isotropy(W)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_embeddings(out / "whitened.txt", W)
    write_json(out / "whitening.json", {"mean": wmap.mean.tolist(),
                                        "transform": wmap.transform.tolist()})
    write_json(out / "isotropy.json", {"before": before, "after": after})
    inputs = [args.embeddings] + ([args.fit_on] if args.fit_on else [])
    write_manifest(out, "whiten", {"fit_on": args.fit_on}, None, inputs,
                   ["whitened.txt", "whitening.json", "isotropy.json"])
    print(f"isotropy before {before:.6f} after {after:.6f}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_OBJ_FIELDS = {f.name: f.type for f in fields(ObjectiveConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"objective", "model"}


def with_param(cfg: TrainConfig, name: str, value: float) -> TrainConfig:
    """Set one swept parameter.

    ``lambda`` is the weight of the active regularizer: ``lam`` for a single
    one, ``lam2`` (the Cor/Cov weight) when CL-Reg and Cor-Reg are combined.
    """
    obj = cfg.objective
    if name == "lambda":
        if not obj.any_regularizer:
            raise ConfigError("--param lambda needs a config with an active regularizer")
        name = "lam2" if obj.use_cl and (obj.use_cor or obj.use_cov) else "lam"
    if name in _OBJ_FIELDS:
        return cfg.with_objective(**{name: value})
    if name in _TRAIN_FIELDS:
        current = getattr(cfg, name)
        return replace(cfg, **{name: type(current)(value)})
    raise ConfigError(f"unknown sweep parameter {name!r}")


def _sweep_run(job):
    cfg, source, val, target, spec, out = job
    params, trainlog = run_pretrain(cfg, source, val, out)
    (out / CHECKPOINT).unlink()
    reps = embed_texts(params, target.texts)
    rep = evaluate_reps(reps, target.labels, spec)
    return isotropy(reps), rep.mean, trainlog.best_step


def cmd_sweep(args) -> int:
    base = _train_config(args.config)
    values = parse_floats(args.values)
    seeds = parse_ints(args.seeds)
    data = load_corpus(args.data)
    split = load_split(args.split)
    if split is None:
        raise ConfigError("sweep needs --split with excluded target domains")
    source, val = source_and_val(data, split)
    target = target_of(data, split)
    spec = EpisodeSpec(C=args.C, K=args.K, Q=args.Q, episodes=args.episodes)
    out = Path(args.out)
    jobs, keys = [], []
    for v in values:
        for s in seeds:
            cfg = replace(with_param(base, args.param, v), seed=s)
            run_dir = out / "runs" / f"{args.param}={v!r}" / f"seed{s}"
            jobs.append((cfg, source, val, target, spec, run_dir))
            keys.append((v, s))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_run, jobs))
    else:
        results = [_sweep_run(j) for j in jobs]

    per_run = [(v, s, iso, acc, best) for (v, s), (iso, acc, best) in zip(keys, results)]
    rows = []
    for v in values:
        r = np.array([(iso, acc) for vv, _, iso, acc, _ in per_run if vv == v])
        std = float(r[:, 1].std(ddof=1)) if len(r) > 1 else 0.0
        rows.append((v, float(r[:, 0].mean()), float(r[:, 1].mean()), std))
    write_csv(out / "sweep.csv", [args.param, "isotropy", "mean_acc", "std_acc"], rows)
    write_csv(out / "runs.csv", [args.param, "seed", "isotropy", "acc", "best_step"], per_run)
    write_svg(out / "sweep.svg", line_plot([("", [r[1] for r in rows], [r[2] for r in rows])],
                                           "isotropy", "accuracy",
                                           f"accuracy vs isotropy over {args.param}"))
    inputs = [p for p in (args.config, args.data, args.split) if p]
    write_manifest(out, "sweep", base.to_dict() | {"param": args.param, "values": values,
                                                   "episodes": args.episodes},
                   seeds, inputs, ["sweep.csv", "runs.csv", "sweep.svg"])
    for v, iso, acc, std in rows:
        print(f"{args.param}={v:g}\tisotropy {iso:.4f}\tacc {100 * acc:.2f}% ± {100 * std:.2f}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def mean_abs_offdiag(M) -> float:
    M = np.asarray(M)
    d = M.shape[0]
    return float(np.abs(M[~np.eye(d, dtype=bool)]).mean()) if d > 1 else 0.0


def cmd_report(args) -> int:
    ckpt = need_file(args.checkpoint, "checkpoint")
    params = load_model(ckpt)
    data = load_corpus(args.data)
    split = load_split(args.split)
    target = target_of(data, split)
    V = embed_texts(params, target.texts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cov, cor = covariance(V), correlation(V)
    header = [f"d{j}" for j in range(V.shape[1])]
    write_csv(out / "covariance.csv", header, cov.tolist())
    write_csv(out / "correlation.csv", header, cor.tolist())
    write_svg(out / "covariance.svg", heatmap(cov, "covariance"))
    write_svg(out / "correlation.svg", heatmap(cor, "correlation", vmax=1.0))
    iso_rows = isotropy_table(V, target.domains, target.domain_names, None, 0)
    write_csv(out / "isotropy.csv", ["domain", "n", "isotropy"], iso_rows)

    log_dir = Path(args.log) if args.log else ckpt.parent
    timing_file = log_dir / TIMING
    lines = [f"# Report for {ckpt}", "",
             f"utterances: {len(target)}, dimensions: {V.shape[1]}",
             f"mean |off-diagonal correlation|: {mean_abs_offdiag(cor):.6f}",
             f"mean |off-diagonal covariance|: {mean_abs_offdiag(cov):.6f}", "",
             "## Isotropy", "", "| domain | n | isotropy |", "|---|---|---|"]
    lines += [f"| {name} | {n} | {iso:.6f} |" for name, n, iso in iso_rows]
    lines += ["", "## Timing", ""]
    outputs = ["covariance.csv", "correlation.csv", "covariance.svg", "correlation.svg",
               "isotropy.csv"]
    inputs = [ckpt, args.data] + ([args.split] if args.split else [])
    nonprimary = []
    if timing_file.is_file():
        # wall-clock seconds differ between identical runs: kept out of report.md
        timing = json.loads(timing_file.read_text(encoding="utf-8"))
        per_epoch = timing.get("seconds_per_epoch") or {}
        totals = timing.get("seconds_total") or {}
        grand = sum(totals.values()) or 1.0
        trows = [(k, totals[k], per_epoch.get(k, 0.0), totals[k] / grand) for k in sorted(totals)]
        write_csv(out / "timing.csv", ["term", "seconds_total", "seconds_per_epoch", "share"],
                  trows)
        nonprimary.append("timing.csv")
        lines.append(f"per-term seconds (total, per epoch, share) in timing.csv, from {timing_file}")
    else:
        lines.append("unavailable (no training log found)")
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append("report.md")
    write_manifest(out, "report", {"split": args.split, "log": str(log_dir)}, None, inputs,
                   outputs, nonprimary=nonprimary)
    print(f"mean |off-diag corr| {mean_abs_offdiag(cor):.6f}; "
          f"isotropy {iso_rows[-1][2]:.6f}; report -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isoreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus and a domain split")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with synthetic corpus settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-val", type=int, default=2)
    p.add_argument("--n-target", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="supervised pre-training with optional regularizers")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="JSONL corpus")
    p.add_argument("--split", help="JSON domain split (train/validation/excluded)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="few-shot evaluation of one or more checkpoints")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--target", required=True, help="JSONL corpus with target utterances")
    p.add_argument("--split", help="restrict the target to the split's excluded domains")
    p.add_argument("--embeddings", help="precomputed target representations")
    p.add_argument("--C", type=int, default=5)
    p.add_argument("--K", type=int, nargs="+", default=[2, 10])
    p.add_argument("--Q", type=int, default=5)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--seeds", default="1,2,3,4,5", help="episode sampling seeds")
    p.add_argument("--independent-episodes", action="store_true",
                   help="draw separate episodes per checkpoint instead of shared ones")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("isotropy", help="isotropy of embeddings")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", help="restrict to the split's excluded domains")
    p.add_argument("--per-domain", action="store_true")
    p.add_argument("--subsample", type=int, help="rows per group (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_isotropy)

    p = sub.add_parser("whiten", help="fit and apply a whitening map")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--fit-on", help="fit the map on this file and apply it to --embeddings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whiten)

    p = sub.add_parser("sweep", help="train and evaluate one model per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--param", default="lambda")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="1,2,3,4,5", help="training seeds shared across values")
    p.add_argument("--C", type=int, default=5)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--Q", type=int, default=5)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="covariance/correlation heatmaps, isotropy and timing")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="report on the split's excluded domains")
    p.add_argument("--log", help="directory holding the training timing (default: beside "
                                 "the checkpoint)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"isoreg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"isoreg {args.command}: runtime error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
