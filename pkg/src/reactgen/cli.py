"""Command-line surface.

Commands: synth, train, predict, eval, sample, check. Every command accepts
--config (flat key=value file) and --seed (overrides the config seed).
Exit codes: 0 ok, 2 input error, 3 invariant failure, 4 numeric failure.
"""

import argparse
import json
import os
import sys

from . import afrdl, gmgd, metrics, regnn
from .config import ConfigError, RunConfig, load_config, serialize_config
from .graphs import read_clips, write_clips
from .numeric import DomainError, NumericError, Rng, derive_seed
from .synth import generate_corpus, read_corpus, write_corpus

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_NUMERIC = 4


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _init_state(cfg):
    return afrdl.init_pipeline(
        cfg.attributes, cfg.frames, cfg.coeffs, cfg.top_k, cfg.layers,
        cfg.reactions, cfg.train_config(), att_dim=cfg.att_dim,
        hidden_dim=cfg.hidden_dim, shared_mefl=cfg.shared_mefl)


def _resolve(cfg_value, arg_value, flag):
    value = arg_value or cfg_value
    if not value:
        raise ConfigError(f"{flag} is required (flag or config key)")
    return value


def cmd_synth(args):
    cfg = _load_run_config(args)
    out = _resolve(cfg.out_dir, args.out, "--out")
    behaviors = generate_corpus(cfg.synth_spec())
    os.makedirs(out, exist_ok=True)
    write_corpus(out, behaviors)
    print(f"wrote {len(behaviors)} behaviours "
          f"({sum(len(b.listeners) for b in behaviors)} listener clips) to {out}")
    return EXIT_OK


def _format_float(x):
    return repr(float(x))


def cmd_train(args):
    cfg = _load_run_config(args)
    corpus_dir = _resolve(cfg.corpus_dir, args.corpus, "--corpus")
    out = _resolve(cfg.out_dir, args.out, "--out")
    corpus = read_corpus(corpus_dir)
    first = corpus[0]
    if (first.speaker.attributes != cfg.attributes
            or first.speaker.frames != cfg.frames
            or any(len(b.listeners) != cfg.reactions for b in corpus)):
        raise ConfigError(
            "corpus shape does not match the config "
            f"(attributes={first.speaker.attributes}, "
            f"frames={first.speaker.frames}, "
            f"reactions={len(first.listeners)})")
    train_cfg = cfg.train_config()
    if args.resume:
        state, optimizer, epoch, _ = afrdl.load_checkpoint(args.resume)
        print(f"resuming from {args.resume} at epoch {epoch}")
    else:
        state, optimizer, epoch = _init_state(cfg), None, 0
    state.config = train_cfg
    os.makedirs(out, exist_ok=True)
    log_path = os.path.join(out, "loss_log.csv")
    mode = "a" if args.resume and os.path.exists(log_path) else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write("epoch,loss_eq7,loss_eq9,total\n")
        history = []

        def record(entry):
            log.write(f"{entry['epoch']},{_format_float(entry['align'])},"
                      f"{_format_float(entry['dist'])},"
                      f"{_format_float(entry['total'])}\n")
            history.append(entry)

        optimizer = optimizer or afrdl.Adam(train_cfg.learning_rate)
        afrdl.train(state, corpus, train_cfg, optimizer=optimizer,
                    start_epoch=epoch, on_epoch=record)
    ckpt = os.path.join(out, "checkpoint.json")
    afrdl.save_checkpoint(ckpt, state, optimizer, epoch=train_cfg.epochs,
                          rng_state=Rng(train_cfg.seed).state())
    if args.plots and history:
        from . import plots
        plots.save_loss_curves(history, os.path.join(out, "loss_curves.png"))
    final = history[-1] if history else {"total": float("nan")}
    print(f"trained to epoch {train_cfg.epochs}; final total loss "
          f"{final['total']:.6g}; checkpoint at {ckpt}")
    return EXIT_OK


def cmd_predict(args):
    cfg = _load_run_config(args)
    corpus_dir = _resolve(cfg.corpus_dir, args.corpus, "--corpus")
    ckpt = _resolve(cfg.checkpoint, args.checkpoint, "--checkpoint")
    out = _resolve(cfg.out_dir, args.out, "--out")
    corpus = read_corpus(corpus_dir)
    state, _, _, _ = afrdl.load_checkpoint(ckpt)
    samples = args.samples or cfg.samples
    sigma = args.sigma if args.sigma is not None else (cfg.predict_sigma or None)
    clips_dir = os.path.join(out, "clips")
    os.makedirs(clips_dir, exist_ok=True)
    manifest = {}
    for behavior in corpus:
        rng = Rng(derive_seed(cfg.seed, "predict", behavior.behavior_id))
        clips = afrdl.predict_reactions(
            state, behavior.speaker, samples, rng, sigma=sigma,
            clip_id_prefix=f"{behavior.behavior_id}_gen")
        paths = []
        for clip in clips:
            rel = os.path.join("clips", f"{clip.clip_id}.jsonl")
            write_clips(os.path.join(out, rel), [clip])
            paths.append(rel)
        manifest[behavior.behavior_id] = {"generated": paths}
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {samples} generated clips for {len(corpus)} behaviours to {out}")
    return EXIT_OK


def read_predictions(directory):
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DomainError(f"no manifest.json under {directory}") from None
    except json.JSONDecodeError as err:
        raise DomainError(f"{path}: invalid JSON ({err.msg})") from None
    out = {}
    for behavior_id, entry in manifest.items():
        clips = []
        for rel in entry["generated"]:
            found = read_clips(os.path.join(directory, rel))
            clips.extend(found)
        if not clips:
            raise DomainError(f"{path}: behaviour {behavior_id!r} has no clips")
        out[behavior_id] = clips
    return out


def cmd_eval(args):
    cfg = _load_run_config(args)
    corpus_dir = _resolve(cfg.corpus_dir, args.corpus, "--corpus")
    out = _resolve(cfg.out_dir, args.out, "--out")
    corpus = read_corpus(corpus_dir)
    generated = read_predictions(args.predictions)
    pairs = []
    for behavior in corpus:
        if behavior.behavior_id not in generated:
            raise DomainError(
                f"predictions are missing behaviour {behavior.behavior_id!r}")
        pairs.append(metrics.EvalPair(
            behavior.behavior_id, behavior.speaker,
            generated[behavior.behavior_id], behavior.listeners))
    window = cfg.metric_window or None
    report = metrics.evaluate(pairs, window=window)
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for name in sorted(report.values):
            fh.write(f"{name},{_format_float(report.values[name])}\n")
    if args.plots:
        from . import plots
        plots.save_metric_summary(report, os.path.join(out, "metric_summary.png"))
        plots.save_reaction_traces(pairs[0], os.path.join(out, "reaction_traces.png"))
    for name in sorted(report.values):
        print(f"{name}: {report.values[name]:.6g}")
    print(f"report at {report_path}")
    return EXIT_OK


def cmd_sample(args):
    cfg = _load_run_config(args)
    with open(args.dist, "r", encoding="utf-8") as fh:
        dist = gmgd.from_json(fh.read())
    rng = Rng(derive_seed(cfg.seed, "sample"))
    latents = [gmgd.sample(dist, rng, component_mode=cfg.component_mode)
               for _ in range(args.n)]
    payload = {"latents": [[list(map(float, row)) for row in g.node_features]
                           for g in latents]}
    if args.checkpoint:
        state, _, _, _ = afrdl.load_checkpoint(args.checkpoint)
        clips = [afrdl.decode_latent(state, g.node_features,
                                     seed=derive_seed(cfg.seed, "decode", i),
                                     clip_id=f"sample_{i:03d}")
                 for i, g in enumerate(latents)]
        payload["clips"] = [{
            "clip_id": c.clip_id,
            "attributes": c.attributes,
            "frames": c.frames,
            "values": [[float(x) for x in row] for row in c.values],
        } for c in clips]
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_check(args):
    from . import diagnostics
    cfg = _load_run_config(args)
    if args.checkpoint:
        state, _, _, _ = afrdl.load_checkpoint(args.checkpoint)
    else:
        state = _init_state(cfg)
    results = diagnostics.run_checks(state, seed=cfg.seed,
                                     graphs=args.graphs, pairs=args.pairs)
    failed = [r for r in results if not r.ok]
    for result in results:
        status = "ok  " if result.ok else "FAIL"
        print(f"[{status}] {result.name}: {result.detail}")
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return EXIT_INVARIANT
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reactgen",
        description="Dyadic facial-reaction distribution learning at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", help="corpus output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a corpus")
    common(p)
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--no-plots", dest="plots", action="store_false",
                   help="skip figure rendering")
    p.set_defaults(func=cmd_train, plots=True)

    p = sub.add_parser("predict", help="generate reactions for each behaviour")
    common(p)
    p.add_argument("--corpus", help="corpus directory (speaker clips)")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--out", help="predictions output directory")
    p.add_argument("--samples", type=int, help="samples per behaviour")
    p.add_argument("--sigma", type=float, help="sampling sigma override")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a corpus")
    common(p)
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--predictions", required=True, help="predictions directory")
    p.add_argument("--out", help="report output directory")
    p.add_argument("--no-plots", dest="plots", action="store_false",
                   help="skip figure rendering")
    p.set_defaults(func=cmd_eval, plots=True)

    p = sub.add_parser("sample", help="sample latent graphs from a distribution JSON")
    common(p)
    p.add_argument("--dist", required=True, help="distribution JSON document")
    p.add_argument("--n", type=int, default=1, help="number of samples")
    p.add_argument("--checkpoint", help="decode samples to clips with this checkpoint")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="run the invariant suite")
    common(p)
    p.add_argument("--checkpoint", help="check a trained checkpoint instead "
                                        "of a fresh model")
    p.add_argument("--graphs", type=int, default=10,
                   help="seeded graphs per check")
    p.add_argument("--pairs", type=int, default=1000,
                   help="input pairs for the contraction estimate")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("show-config", help="print the effective configuration")
    common(p)
    p.set_defaults(func=lambda a: print(serialize_config(_load_run_config(a)),
                                        end="") or EXIT_OK)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileNotFoundError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except regnn.ContractViolationError as err:
        print(f"invariant failure: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
