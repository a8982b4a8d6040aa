"""Command line entry point: ``scenemem {gen,train,eval,ablate,curve,stability}``.

Exit codes: 0 success, 2 configuration/input error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import plotting
from .agent import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .harness import (
    PROTOCOLS,
    Protocol,
    compare,
    comparison_csv,
    curve_csv,
    mean_metrics,
    progress_curve,
    read_records,
    records_jsonl,
    run_eval,
    stability_report,
    summarize_records,
    summary_csv,
)
from .memory import SnapshotError
from .metrics import METRIC_NAMES
from .training import NumericFault, train, write_log
from .world import Dataset, WorldError, make_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("scenemem")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_data(path: str) -> Dataset:
    try:
        return Dataset.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc


def _load_ckpt(path: str):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc


def cmd_gen(args: argparse.Namespace) -> int:
    w = load_config(args.config).world if args.config else ExperimentConfig().world
    kw = w.dataset_kwargs()
    if args.v_lm is not None:
        kw["v_lm"] = args.v_lm
    if args.landmark_dropout is not None:
        kw["landmark_dropout"] = args.landmark_dropout
    ds = make_dataset(
        args.seed, args.scenes, args.episodes_per_scene, args.nodes,
        args.mean_degree if args.mean_degree is not None else w.mean_degree, **kw,
    )
    ds.meta.update({"seed": args.seed, "nodes": args.nodes, **kw})
    ds.save(args.out)
    print(f"wrote {len(ds.scenes)} scenes, {len(ds.episodes)} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    data = _load_data(args.data)
    val = _load_data(args.val) if args.val else None
    if args.seed is not None:
        cfg.training.seed = args.seed
    if args.iterations is not None:
        cfg.training.iterations = args.iterations
    out = _out_dir(args.out)
    res = train(data, cfg.agent, cfg.training, val_dataset=val)
    write_log(out / "train_log.jsonl", res.log)
    save_checkpoint(out / "checkpoint.json", res.params, cfg.agent, {"training": cfg.to_dict()["training"]})
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'checkpoint.json'} and {out / 'train_log.jsonl'}")
    return EXIT_OK


def _protocol(args: argparse.Namespace, kind: str | None = None) -> Protocol:
    return Protocol(kind or args.protocol, args.shuffle_seed, getattr(args, "freeze_second_pass", False))


def cmd_eval(args: argparse.Namespace) -> int:
    params, cfg, _ = _load_ckpt(args.checkpoint)
    data = _load_data(args.data)
    recs = run_eval(params, cfg, data, _protocol(args), seed=args.shuffle_seed)
    out = _out_dir(args.out)
    (out / "records.jsonl").write_text(records_jsonl(recs))
    (out / "summary.csv").write_text(summary_csv(summarize_records(recs)))
    print(summary_csv(summarize_records(recs)), end="")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    params, cfg, _ = _load_ckpt(args.checkpoint)
    data = _load_data(args.data)
    out = _out_dir(args.out)
    runs = {}
    for kind in PROTOCOLS:
        recs = run_eval(params, cfg, data, Protocol(kind, args.shuffle_seed), seed=args.shuffle_seed)
        (out / f"records_{kind}.jsonl").write_text(records_jsonl(recs))
        runs[kind] = recs
    means = {k: mean_metrics(v) for k, v in runs.items()}
    lines = ["protocol," + ",".join(METRIC_NAMES)]
    lines += [k + "," + ",".join(repr(means[k][n]) for n in METRIC_NAMES) for k in PROTOCOLS]
    (out / "protocols.csv").write_text("\n".join(lines) + "\n")
    comps = {f"single-{k}": compare(runs["single"], runs[k]) for k in PROTOCOLS if k != "single"}
    (out / "comparison.csv").write_text(comparison_csv(comps))
    plotting.plot_protocols({k: means[k][args.metric] for k in PROTOCOLS}, args.metric, out / "protocols.png")
    print("\n".join(lines))
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    if args.records:
        recs = read_records(args.records)
    else:
        if not (args.checkpoint and args.data):
            raise ConfigError("curve needs --records or both --checkpoint and --data")
        params, cfg, _ = _load_ckpt(args.checkpoint)
        recs = run_eval(params, cfg, _load_data(args.data), _protocol(args), seed=args.shuffle_seed)
    window = args.window if args.window is not None else max(1, len(recs) // 10)
    pts = progress_curve(recs, window, args.metric)
    out = _out_dir(args.out)
    (out / f"curve_{args.metric}.csv").write_text(curve_csv(pts, args.metric))
    plotting.plot_curve(pts, args.metric, out / f"curve_{args.metric}.png")
    print(f"wrote {len(pts)} points to {out / f'curve_{args.metric}.csv'}")
    return EXIT_OK


def cmd_stability(args: argparse.Namespace) -> int:
    params, cfg, _ = _load_ckpt(args.checkpoint)
    data = _load_data(args.data)
    rep = stability_report(params, cfg, data, args.orders, kind=args.protocol, base_seed=args.base_seed)
    out = _out_dir(args.out)
    lines = ["metric,mean,std," + ",".join(f"order{s}" for s in rep.orders)]
    for n in METRIC_NAMES:
        vals = ",".join(repr(m[n]) for m in rep.per_order)
        lines.append(f"{n},{rep.mean[n]!r},{rep.std[n]!r},{vals}")
    (out / f"stability_{args.protocol}.csv").write_text("\n".join(lines) + "\n")
    plotting.plot_stability(
        [m[args.metric] for m in rep.per_order], rep.orders, args.metric, out / f"stability_{args.protocol}.png"
    )
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenemem", description="Episodic scene memory navigation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate scenes and episodes")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--episodes-per-scene", type=int, required=True)
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--mean-degree", type=float)
    g.add_argument("--v-lm", type=int)
    g.add_argument("--landmark-dropout", type=float)
    g.add_argument("--config", help="take remaining world settings from this config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    def evalargs(sp, protocol=True):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", required=True)
        if protocol:
            sp.add_argument("--protocol", choices=PROTOCOLS, default="single")
        sp.add_argument("--shuffle-seed", type=int)
        sp.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate one protocol")
    evalargs(e)
    e.add_argument("--freeze-second-pass", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run all four protocols and compare")
    evalargs(a, protocol=False)
    a.add_argument("--metric", choices=METRIC_NAMES, default="spl")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("curve", help="smoothed metric over inference progress")
    c.add_argument("--records", help="records JSONL from eval")
    c.add_argument("--checkpoint")
    c.add_argument("--data")
    c.add_argument("--protocol", choices=PROTOCOLS, default="single")
    c.add_argument("--shuffle-seed", type=int)
    c.add_argument("--metric", choices=("spl", "cls"), default="spl")
    c.add_argument("--window", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curve)

    s = sub.add_parser("stability", help="metric spread over shuffled episode orders")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--orders", type=int, default=5)
    s.add_argument("--base-seed", type=int, default=0)
    s.add_argument("--protocol", choices=PROTOCOLS, default="single")
    s.add_argument("--metric", choices=METRIC_NAMES, default="spl")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stability)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, WorldError, SnapshotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
