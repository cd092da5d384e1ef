"""Command-line entry points: gen-data, inject, train, serve, eval, report."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data, metrics
from .attack import NoiseSpec, inject
from .data import GeneratorSpec
from .hil import AnnotationInbox, InteractiveAnnotator, OracleAnnotator, ScriptedAnnotator
from .model import MmrModel
from .service import StatusBoard, start_server
from .trainer import RunConfig, load_transcript, run, save_run

LISTEN_ENV = "MMRLAB_LISTEN"


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}") from e


def _build_parser() -> Parser:
    parser = Parser(prog="mmrlab", description="Label-noise-robust training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--n", type=int)
    gen.add_argument("--height", type=int)
    gen.add_argument("--width", type=int)
    gen.add_argument("--balance", type=float)
    gen.add_argument("--noise", type=float)
    gen.add_argument("--split", type=float, default=None,
                     help="train fraction; writes <out>/train and <out>/test")
    gen.add_argument("--split-seed", type=int, default=None)

    inj = sub.add_parser("inject", help="inject false labels into a dataset")
    inj.add_argument("--in", dest="src", required=True)
    inj.add_argument("--out", required=True)
    inj.add_argument("--kind", "--attack", dest="kind",
                     choices=("sym", "asym"), required=True)
    inj.add_argument("--ratio", type=float, required=True)
    inj.add_argument("--seed", type=int, default=0)
    inj.add_argument("--exact", action="store_true")

    def add_train_args(p):
        p.add_argument("--config")
        p.add_argument("--train", required=True, help="training dataset directory")
        p.add_argument("--test", required=True, help="clean test dataset directory")
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--method", choices=("baseline-ce", "mmr", "mmr-hil"))
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--kappa", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--period", type=int, help="annotation frequency in epochs")
        p.add_argument("--export-embeddings", action="store_true", default=None)

    tr = sub.add_parser("train", help="run training with oracle/scripted annotator")
    add_train_args(tr)
    tr.add_argument("--annotator", choices=("oracle", "scripted"), default="oracle")
    tr.add_argument("--transcript", help="queries.csv to replay (scripted annotator)")

    sv = sub.add_parser("serve", help="train with the interactive annotator + HTTP API")
    add_train_args(sv)
    sv.add_argument("--listen", default=None, help="host:port (default env "
                    f"{LISTEN_ENV} or 127.0.0.1:8751)")
    sv.add_argument("--static", default=None, help="directory of UI assets to serve")
    sv.add_argument("--timeout", type=float, default=None,
                    help="per-round annotation timeout in seconds (0 waits forever)")
    sv.add_argument("--fallback", choices=("skip", "oracle"), default=None)

    ev = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    ev.add_argument("--model", required=True, help="run directory holding model.npz")
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default=None, help="optional JSON output path")

    rp = sub.add_parser("report", help="aggregate run directories into report files")
    rp.add_argument("--out", required=True)
    rp.add_argument("--r", type=float, default=1.0,
                    help="annotation-workload exponent for absolute efficiency")
    rp.add_argument("runs", nargs="+", help="run directories (run.json inside)")
    return parser


def _generator_spec(args, config: dict) -> GeneratorSpec:
    section = dict(config.get("generator", {}))
    for key, attr in (("seed", "seed"), ("n", "n"), ("height", "height"),
                      ("width", "width"), ("balance", "balance"),
                      ("noise_sigma", "noise")):
        value = getattr(args, attr, None)
        if value is not None:
            section[key] = value
    known = {f for f in GeneratorSpec.__dataclass_fields__}
    unknown = set(section) - known
    if unknown:
        raise CliError(f"unknown generator options: {sorted(unknown)}")
    spec = GeneratorSpec(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in section.items()})
    spec.validate()
    return spec


def _run_config(args, config: dict) -> RunConfig:
    merged = dict(config)
    merged.pop("generator", None)
    merged.pop("data", None)
    cfg = RunConfig.from_dict(merged)
    for attr, target in (("method", "method"), ("seed", "seed"), ("epochs", "epochs"),
                         ("kappa", "kappa"), ("export_embeddings", "export_embeddings")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, target, value)
    for attr, target in (("rho", "rho"), ("tau", "tau"), ("period", "period")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg.hil, target, value)
    cfg.validate()
    return cfg


def _load_datasets(args):
    train = data.load(args.train)
    test = data.load(args.test)
    attack = train.meta.get("attack")
    return train, test, attack


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    spec = _generator_spec(args, config)
    ds = data.generate(spec)
    if args.split is not None:
        seed = args.split_seed if args.split_seed is not None else spec.seed + 1
        train, test = data.split(ds, args.split, seed=seed)
        data.save(train, os.path.join(args.out, "train"))
        data.save(test, os.path.join(args.out, "test"))
        print(json.dumps({"out": args.out, "train_n": train.n, "test_n": test.n}))
    else:
        data.save(ds, args.out)
        print(json.dumps({"out": args.out, "n": ds.n}))
    return 0


def cmd_inject(args) -> int:
    ds = data.load(args.src)
    spec = NoiseSpec(kind=args.kind, ratio=args.ratio, seed=args.seed, exact=args.exact)
    out = inject(ds, spec)
    data.save(out, args.out)
    print(json.dumps({"out": args.out, "flipped": int(out.flipped_mask.sum()),
                      "n": out.n}))
    return 0


def _train_common(args, annotator_factory, observer=None):
    config = _load_config(args.config)
    cfg = _run_config(args, config)
    train, test, attack = _load_datasets(args)
    cfg.attack = attack
    annotator = annotator_factory(cfg, train)
    result = run(cfg, train, test, annotator=annotator, observer=observer)
    save_run(result, args.out)
    last = result.snapshots[-1]
    print(json.dumps({"out": args.out, "accuracy": last["accuracy"],
                      "convergence_epoch": result.convergence["epoch"]}))
    return result


def cmd_train(args) -> int:
    def factory(cfg, train):
        if cfg.method != "mmr-hil":
            return None
        if args.annotator == "scripted":
            if not args.transcript:
                raise CliError("scripted annotator needs --transcript")
            return ScriptedAnnotator(load_transcript(args.transcript))
        return OracleAnnotator(train.labels_true)

    _train_common(args, factory)
    return 0


def cmd_serve(args) -> int:
    listen = args.listen or os.environ.get(LISTEN_ENV) or "127.0.0.1:8751"
    try:
        host, port_text = listen.rsplit(":", 1)
        port = int(port_text)
    except ValueError as e:
        raise CliError(f"listen address must be host:port, got {listen!r}") from e

    inbox = AnnotationInbox()
    server = None

    def factory(cfg, train):
        nonlocal server
        if args.timeout is not None:
            cfg.hil.timeout_seconds = args.timeout
        if args.fallback is not None:
            cfg.hil.fallback = args.fallback
        board = StatusBoard()
        server = start_server(board, inbox, train, host=host, port=port,
                              static_dir=args.static)
        board.server = server
        factory.board = board
        bind = server.server_address
        print(json.dumps({"listening": f"{bind[0]}:{bind[1]}"}), flush=True)
        if cfg.method != "mmr-hil":
            return None
        return InteractiveAnnotator(inbox, train.labels_true,
                                    timeout_seconds=cfg.hil.timeout_seconds,
                                    fallback=cfg.hil.fallback)

    class _Glue:
        def on_start(self, work, model):
            factory.board.on_start(work, model)

        def on_phase(self, epoch, phase):
            factory.board.on_phase(epoch, phase)

        def on_snapshot(self, snapshot):
            factory.board.on_snapshot(snapshot)

    _train_common(args, factory, observer=_Glue())
    factory.board.mark_done()
    if server is not None:
        server.shutdown()
    return 0


def cmd_eval(args) -> int:
    model = MmrModel.load(args.model)
    ds = data.load(args.data)
    payload = {
        "accuracy": metrics.accuracy(model, ds),
        "correction": metrics.correction_rate(ds),
        "n": ds.n,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    runs = []
    for run_dir in args.runs:
        path = os.path.join(run_dir, "run.json")
        try:
            with open(path) as f:
                blob = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read {path}: {e}") from e
        blob["run_id"] = os.path.basename(os.path.normpath(run_dir))
        runs.append(blob)
    out = metrics.emit_report(runs, args.out, r=args.r)
    print(json.dumps({"csv": out["csv"], "json": out["json"],
                      "rows": len(out["report"]["rows"])}))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "inject": cmd_inject,
    "train": cmd_train,
    "serve": cmd_serve,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 2
    except Exception as e:  # single-line machine-parseable failure contract
        print(json.dumps({"error": f"{type(e).__name__}: {e}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
