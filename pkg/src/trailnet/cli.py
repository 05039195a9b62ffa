"""Command-line entry point: trailnet <command> [flags]."""
from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
import time
from pathlib import Path

from . import datapipe, simloop, trainer
from .errors import ConfigurationError, InputError, TrailnetError
from .models import CROP_FRACTIONS, KIND_CODES, ROW_ORDERS, ModelSpec, TrailModel
from .scenegen import generate_world, get_style, STYLES

log = logging.getLogger("trailnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}") from None


def _seed_line(seed):
    print(f"seed\t{seed}", flush=True)


def _write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# gen-data

def cmd_gen_data(args) -> int:
    from .scenegen.capture import collect_dataset, write_dataset

    _seed_line(args.seed)
    world = generate_world(args.seed)
    col = collect_dataset(world, get_style(args.style), args.count, args.step)
    write_dataset(args.out, col.samples)
    counts = "\t".join(f"{n}={c}" for n, c in zip(("left", "center", "right"), col.class_counts()))
    print(f"images\t{len(col.samples)}\t{counts}")
    print(f"images_per_minute\t{col.images_per_minute:.0f}")
    for note in col.notes:
        print(f"note\t{note}")
    return 0


# train / eval / xfer-eval / ablate

def _spec(args) -> ModelSpec:
    if args.row_order is not None and args.model != "rnn":
        raise ConfigurationError("--row-order only applies to --model rnn")
    return ModelSpec(args.model, args.row_order or "top-to-bottom", CROP_FRACTIONS[args.crop])


def _splits(data_dir, seed):
    data = datapipe.load_dataset(data_dir)
    return datapipe.split(data, datapipe.SplitSpec(seed=seed))


def cmd_train(args) -> int:
    spec = _spec(args)
    _seed_line(args.seed)
    config = trainer.TrainConfig(spec, args.epochs, args.batch, args.lr, args.seed,
                                 args.checkpoint_interval, args.checkpoint_dir)
    train_set, val_set, test_set = _splits(args.data, args.seed)
    print(f"split\ttrain={len(train_set)}\tval={len(val_set)}\ttest={len(test_set)}")
    model, history = trainer.train(config, train_set, val_set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(model, out)
    hist_path = Path(args.history) if args.history else out.with_suffix(".history.tsv")
    _write(hist_path, history.to_tsv())
    print(f"weights\t{out}\nhistory\t{hist_path}\tbest_epoch={history.best_epoch}")
    sys.stdout.write(trainer.evaluate(model, test_set).to_tsv())
    return 0


def cmd_eval(args) -> int:
    _seed_line(args.seed)
    model = trainer.load_checkpoint(args.weights)
    if args.split == "all":
        data = datapipe.load_dataset(args.data)
    else:
        data = _splits(args.data, args.seed)[("train", "val", "test").index(args.split)]
    sys.stdout.write(trainer.evaluate(model, data).to_tsv())
    return 0


def cmd_xfer_eval(args) -> int:
    _seed_line(args.seed)
    model = trainer.load_checkpoint(args.weights)
    data = datapipe.load_real_style_testset(args.data_shifted, args.per_class, args.seed)
    sys.stdout.write(trainer.evaluate(model, data).to_tsv())
    print(f"balanced_baseline\t{1 / 3:.4f}")
    return 0


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    _seed_line(",".join(map(str, seeds)))
    data = datapipe.load_dataset(args.data)
    print("seed\ttop_to_bottom\tbottom_to_top\tgap")
    gaps = []
    for seed in seeds:
        train_set, val_set, test_set = datapipe.split(data, datapipe.SplitSpec(seed=seed))
        config = trainer.TrainConfig(ModelSpec("rnn", crop=CROP_FRACTIONS[args.crop]),
                                     args.epochs, args.batch, args.lr, seed)
        res = trainer.ablate_row_order(config, train_set, val_set, test_set)
        gaps.append(res.gap)
        print(f"{seed}\t{res.top_to_bottom.accuracy:.4f}\t{res.bottom_to_top.accuracy:.4f}\t{res.gap:.4f}")
    print(f"mean_gap\t{sum(gaps) / len(gaps):.4f}")
    return 0


# gradcheck

def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import TOLERANCE, run_suite

    seeds = tuple(range(args.seeds))
    _seed_line(",".join(map(str, seeds)))
    t0 = time.perf_counter()
    results = run_suite(seeds)
    bad = [r for r in results if not r.ok]
    worst = max(results, key=lambda r: r.max_rel_error)
    print(f"checks\t{len(results)}\tfailed\t{len(bad)}\tmax_rel_error\t{worst.max_rel_error:.3e}"
          f"\tseconds\t{time.perf_counter() - t0:.2f}")
    for r in bad:
        print(f"FAIL\t{r.layer}\t{r.tensor}\tseed={r.seed}\tindex={r.worst_index}"
              f"\trel_error={r.max_rel_error:.3e}\ttolerance={TOLERANCE:g}")
    return 1 if bad else 0


# serve / drive

def cmd_serve(args) -> int:
    from .netproto import PredictionServer

    _seed_line("none")
    model = trainer.load_checkpoint(args.weights)
    server = PredictionServer(model, args.bind)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    server.start()
    host, port = server.address
    print(f"listening\t{host}:{port}", flush=True)
    try:
        stop.wait(args.duration if args.duration > 0 else None)
    except KeyboardInterrupt:
        pass
    sys.stdout.write(server.stop())
    return 0


def _training_seeds(data_dir) -> set[int]:
    return {int(r["world_seed"]) for r in datapipe.read_manifest(data_dir)}


def cmd_drive(args) -> int:
    _seed_line(args.world_seed)
    if args.data and args.world_seed in _training_seeds(args.data):
        raise ConfigurationError(
            f"world seed {args.world_seed} was used to build the training data in {args.data}"
        )
    world = generate_world(args.world_seed)
    style = get_style(args.style)
    start = simloop.start_pose(world, args.start_s)
    if args.remote:
        episode = simloop.run_episode_remote(world, style, args.remote, start, args.ticks)
    else:
        if args.oracle:
            policy = simloop.OraclePolicy(world)
        elif args.random:
            policy = simloop.RandomPolicy(args.policy_seed)
        else:
            policy = simloop.ModelPolicy(trainer.load_checkpoint(args.weights))
        episode = simloop.run_episode(world, style, policy, start, args.ticks)
    episode.write(args.trajectory_out, args.metrics_out)
    sys.stdout.write(episode.metrics.to_tsv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trailnet", description="Synthetic trail-following perception toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a labelled dataset from a procedural world")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--style", default="alpine-a", choices=sorted(STYLES))
    g.add_argument("--count", type=int, default=6000)
    g.add_argument("--step", type=float, default=0.25, help="metres between capture poses")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def model_flags(q):
        q.add_argument("--data", required=True)
        q.add_argument("--epochs", type=int, default=50)
        q.add_argument("--batch", type=int, default=128)
        q.add_argument("--lr", type=float, default=0.001)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--crop", default="1", choices=list(CROP_FRACTIONS))

    t = sub.add_parser("train", help="train one classifier")
    t.add_argument("--model", required=True, choices=list(KIND_CODES))
    model_flags(t)
    t.add_argument("--row-order", choices=ROW_ORDERS, default=None)
    t.add_argument("--out", required=True, help="weights file to write")
    t.add_argument("--history", help="history TSV (default: next to the weights)")
    t.add_argument("--checkpoint-interval", type=int, default=0)
    t.add_argument("--checkpoint-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate weights on a dataset directory")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="all", choices=("all", "train", "val", "test"))
    e.add_argument("--seed", type=int, default=0, help="split seed")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("xfer-eval", help="evaluate on a class-balanced shifted dataset")
    x.add_argument("--weights", required=True)
    x.add_argument("--data-shifted", required=True)
    x.add_argument("--per-class", type=int, default=4000)
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_xfer_eval)

    a = sub.add_parser("ablate", help="rnn row-order ablation")
    model_flags(a)
    a.add_argument("--seeds", default="0,1,2")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    c.add_argument("--seeds", type=int, default=5, help="number of seeds")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("serve", help="UDP classifier service")
    s.add_argument("--bind", type=_address, default=("127.0.0.1", 5005))
    s.add_argument("--weights", required=True)
    s.add_argument("--duration", type=float, default=0, help="seconds to run, 0 = until stopped")
    s.set_defaults(func=cmd_serve)

    d = sub.add_parser("drive", help="closed-loop episode on a procedural world")
    d.add_argument("--world-seed", type=int, required=True)
    d.add_argument("--style", default="alpine-a", choices=sorted(STYLES))
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights")
    src.add_argument("--remote", type=_address)
    src.add_argument("--oracle", action="store_true", help="steer from true trail geometry")
    src.add_argument("--random", action="store_true", help="uniform random commands")
    d.add_argument("--policy-seed", type=int, default=0)
    d.add_argument("--ticks", type=int, default=2000)
    d.add_argument("--start-s", type=float, default=20.0, help="start arc position (m)")
    d.add_argument("--data", help="training dataset; refuses its world seed")
    d.add_argument("--trajectory-out")
    d.add_argument("--metrics-out")
    d.set_defaults(func=cmd_drive)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrailnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
