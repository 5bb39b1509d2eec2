"""Command-line pipeline: synth/ingest -> train -> sample-ul -> unlearn -> eval,
plus ``compare`` and ``future-unlearn`` which run whole experiments.

Every command takes ``--config FILE.json``; values in the file override the
flags.  Exit code 1 signals a runtime failure, 2 an invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baselines import FinetuneConfig, finetune, finetune_ul, retrain
from .ctdg import (EventLog, TemporalNeighborIndex, UnlearnRequest, chronological_split,
                   parse_event_csv)
from .diffcore import ParamStore
from .evalkit import timing_report
from .experiment import (Prepared, RequestConfig, Seeds, compare_methods, evaluate,
                         future_request, make_request, prepare)
from .model import BackboneConfig, TrainedModel, train_from_scratch
from .perf import tune_malloc
from .synth import planted_triadic
from .unlearner import UnlearnConfig, train_unlearner

logger = logging.getLogger("dgunlearn")

METHOD_NAMES = {"gradtrans": "gradtrans", "finetune": "finetune", "finetune-ul": "finetune_ul",
                "retrain": "retrain"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "tsv"
    ratios: tuple = (0.70, 0.15, 0.15)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    request: RequestConfig = field(default_factory=RequestConfig)
    seeds: Seeds = field(default_factory=Seeds)
    out: str = "out"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d


_SECTIONS = {"backbone": BackboneConfig, "unlearn": UnlearnConfig, "finetune": FinetuneConfig,
             "request": RequestConfig, "seeds": Seeds}


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Flags first, then the JSON config file on top."""
    raw: dict = {"dataset": args.dataset or "", "format": args.format, "out": args.out,
                 "ratios": [0.70, 0.15, 0.15]}
    sections: dict[str, dict] = {
        "backbone": {k: v for k, v in {"K": args.K, "epochs": args.epochs, "lr": args.lr,
                                       "batch_size": args.batch_size, "seed": args.seed_model}.items()
                     if v is not None},
        "unlearn": {k: v for k, v in {"steps": args.steps, "seed": args.seed_unlearn}.items()
                    if v is not None},
        "finetune": {k: v for k, v in {"steps": args.steps, "seed": args.seed_unlearn}.items()
                     if v is not None},
        "request": {k: v for k, v in {"m": args.m, "depth": args.depth, "K": args.K}.items()
                    if v is not None},
        "seeds": {k: v for k, v in {"data": args.seed_data, "model": args.seed_model,
                                    "unlearn": args.seed_unlearn, "eval": args.seed_eval}.items()
                  if v is not None},
    }
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                sections[key].update(value)
            elif key in raw:
                raw[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
    ratios = tuple(float(r) for r in raw["ratios"])
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must be three non-negative numbers summing to 1")
    if raw["format"] not in ("tsv", "generic", "jodie"):
        raise ConfigError(f"unknown dataset format {raw['format']!r}")
    # the named seeds are the single source of randomness
    seeds = _build(Seeds, sections["seeds"], "seeds")
    sections["backbone"]["seed"] = seeds.model
    sections["unlearn"]["seed"] = seeds.unlearn
    sections["finetune"]["seed"] = seeds.unlearn
    built = {name: _build(cls, sections[name], name) for name, cls in _SECTIONS.items()}
    return RunConfig(dataset=raw["dataset"], format=raw["format"], ratios=ratios,
                     out=raw["out"], **built)


# -- artifacts ---------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> EventLog:
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    if cfg.format == "tsv":
        return EventLog.load(cfg.dataset)
    return parse_event_csv(cfg.dataset, format=cfg.format)


def save_request(req: UnlearnRequest, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    req.ul.save(directory / "ul.tsv")
    req.re.save(directory / "re.tsv")
    req.initial.save(directory / "initial.tsv")
    if req.counterparts is not None:
        req.counterparts.save(directory / "counterparts.tsv")
    meta = {"params": req.params, "skipped_counterparts": req.skipped_counterparts}
    (directory / "request.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_request(directory: Path) -> UnlearnRequest:
    meta = json.loads((directory / "request.json").read_text())
    cp_path = directory / "counterparts.tsv"
    cp = EventLog.load(cp_path) if cp_path.exists() else None
    return UnlearnRequest(EventLog.load(directory / "ul.tsv"), EventLog.load(directory / "re.tsv"),
                          EventLog.load(directory / "initial.tsv"), cp,
                          meta["skipped_counterparts"], meta["params"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _snapshot(cfg: RunConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"{command}.config.json", cfg.to_dict())


def _trace_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    lines = [",".join(keys)]
    lines += [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) for r in rows]
    return "\n".join(lines) + "\n"


# -- subcommands -------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    log = planted_triadic(num_nodes=args.nodes, num_events=args.events, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    log.save(out / "events.tsv")
    print(f"wrote {len(log)} events to {out / 'events.tsv'}")


def cmd_ingest(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    log = load_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    log.save(out / "events.tsv")
    print(f"ingested {len(log)} events ({log.num_nodes} nodes) into {out / 'events.tsv'}")


def _model_path(args, cfg: RunConfig) -> Path:
    return Path(args.model) if args.model else Path(cfg.out) / "model.bin"


def cmd_train(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    _snapshot(cfg, out, "train")
    log = load_dataset(cfg)
    split = chronological_split(log, cfg.ratios)
    model = train_from_scratch(split.train, split.val, cfg.backbone, index=TemporalNeighborIndex(log),
                               eval_seed=cfg.seeds.eval)
    model.save(out / "model.bin")
    (out / "train.history.csv").write_text(_trace_csv(model.history))
    print(f"trained for {len(model.history)} epochs; best val AUC "
          f"{max(h['val_auc'] for h in model.history):.4f}")


def cmd_sample_ul(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    _snapshot(cfg, out, "sample-ul")
    log = load_dataset(cfg)
    split = chronological_split(log, cfg.ratios)
    req = make_request(log, split.train, cfg.request, cfg.seeds)
    save_request(req, out / "request")
    print(f"|S_ul|={len(req.ul)} |S_re|={len(req.re)} counterparts={len(req.counterparts)}")


def _context(cfg: RunConfig, args):
    log = load_dataset(cfg)
    split = chronological_split(log, cfg.ratios)
    model = TrainedModel.load(_model_path(args, cfg))
    req_dir = Path(args.request) if args.request else Path(cfg.out) / "request"
    req = load_request(req_dir)
    full = TemporalNeighborIndex(log)
    rest = TemporalNeighborIndex(log, exclude=req.ul_idx)
    return log, split, model, req, full, rest


def cmd_unlearn(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    _snapshot(cfg, out, "unlearn")
    log, split, model, req, full, rest = _context(cfg, args)
    method = METHOD_NAMES[args.method]
    if method == "gradtrans":
        t0 = time.perf_counter()
        res = train_unlearner(model, req, split.val, cfg.unlearn, rest, full)
        seconds = time.perf_counter() - t0
        res.save(out, stem=method)
    elif method == "retrain":
        res = retrain(req.re, split.val, model.config, rest)
        seconds = res.seconds
        (out / f"{method}.trace.csv").write_text(_trace_csv(res.trace))
    else:
        fn = finetune if method == "finetune" else finetune_ul
        res = fn(model, req, cfg.finetune, rest, full)
        seconds = res.seconds
        (out / f"{method}.trace.csv").write_text(_trace_csv(res.trace))
    model.with_params(res.params).save(out / f"{method}.bin")
    _write_json(out / f"{method}.timing.json", {"method": method, "seconds": seconds})
    print(f"{method}: {seconds:.2f}s, checkpoint {out / (method + '.bin')}")


def cmd_eval(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    log, split, model, req, full, rest = _context(cfg, args)
    prep = Prepared(log, split, full, rest, model, req)
    index = full if args.world == "full" else rest
    scores = evaluate(model, prep, index, cfg.seeds.eval)
    scores.pop("labels")
    out.mkdir(parents=True, exist_ok=True)
    name = Path(_model_path(args, cfg)).stem
    _write_json(out / f"{name}.eval.json", scores)
    print(json.dumps(scores, sort_keys=True))


def cmd_compare(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    _snapshot(cfg, out, "compare")
    log = load_dataset(cfg)
    model = TrainedModel.load(Path(args.model)) if args.model else None
    prep = prepare(log, cfg.backbone, cfg.request, cfg.seeds, model=model, ratios=cfg.ratios)
    if model is None:
        prep.model.save(out / "original.bin")
    save_request(prep.req, out / "request")
    comp = compare_methods(prep, cfg.unlearn, cfg.finetune, cfg.seeds)
    for name, res in comp.results.items():
        comp.models[name].save(out / f"{name}.bin")
        if name == "gradtrans":
            res.phi.save(out / "gradtrans.phi.bin")
            (out / "gradtrans.trace.csv").write_text(res.trace_csv())
        else:
            (out / f"{name}.trace.csv").write_text(_trace_csv(res.trace))
    report = comp.report
    (out / "report.json").write_text(report.to_json(timings=False) + "\n")
    (out / "report.csv").write_text(report.to_csv(timings=False))
    (out / "plot.csv").write_text(_plot_csv(report, Path(cfg.dataset).stem))
    timing = timing_report(list(comp.seconds.items()))
    _write_json(out / "timings.json", {"raw": timing.raw, "mean_seconds": timing.mean_seconds,
                                       "speedup": timing.speedup})
    print(_table(report, timing.speedup))


def _plot_csv(report, dataset: str) -> str:
    timing_free = [r for r in report.metric_rows(dataset) if r[2] not in ("seconds", "speedup")]
    lines = ["method,dataset,metric,value"] + [f"{m},{d},{k},{v!r}" for m, d, k, v in timing_free]
    return "\n".join(lines) + "\n"


def _table(report, speedup: dict) -> str:
    head = f"{'method':12s} {'acc_re':>7s} {'acc_ul':>7s} {'auc_te':>7s} {'|dAccUL|':>8s} {'dAUC':>7s} {'speedup':>8s}  verdict"
    rows = [head]
    for m in report.methods:
        sp = speedup.get(m.method)
        rows.append(f"{m.method:12s} {m.acc_re:7.4f} {m.acc_ul:7.4f} {m.auc_te:7.4f} "
                    f"{m.abs_delta_acc_ul:8.4f} {m.delta_auc_te:+7.4f} "
                    f"{(f'{sp:.2f}x' if sp else '-'):>8s}  {m.verdict}")
    return "\n".join(rows)


def cmd_future(cfg: RunConfig, args) -> None:
    out = Path(cfg.out)
    _snapshot(cfg, out, "future-unlearn")
    log, split, model, req, full, rest = _context(cfg, args)
    prep = Prepared(log, split, full, rest, model, req)
    if not args.phi:
        raise ConfigError("--phi is required (written by `unlearn --method gradtrans`)")
    phi = ParamStore.load(args.phi)
    res = future_request(prep, phi, cfg.unlearn, cfg.request, cfg.seeds)
    model.with_params(res.pop("params")).save(out / "future.bin")
    timing = {k: res.pop(k) for k in ("seconds", "retrain_seconds", "speedup")}
    _write_json(out / "future.json", res)
    _write_json(out / "future.timings.json", timing)
    print(json.dumps({**res, **timing}, sort_keys=True))


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "sample-ul": cmd_sample_ul,
            "unlearn": cmd_unlearn, "eval": cmd_eval, "compare": cmd_compare,
            "future-unlearn": cmd_future}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgunlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file; its values override the flags")
        p.add_argument("--dataset", help="event log (.tsv from synth/ingest, or raw CSV with --format)")
        p.add_argument("--format", default="tsv", help="tsv | generic | jodie")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--model", help="trained model checkpoint")
        p.add_argument("--request", help="request directory written by sample-ul")
        p.add_argument("--seed-data", type=int)
        p.add_argument("--seed-model", type=int)
        p.add_argument("--seed-unlearn", type=int)
        p.add_argument("--seed-eval", type=int)
        p.add_argument("--m", type=int, help="number of seed events in the request")
        p.add_argument("--depth", type=int)
        p.add_argument("--K", type=int, help="neighbors per node")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float, help="backbone learning rate")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--steps", type=int, help="unlearner / fine-tuning steps")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name == "synth":
            p.add_argument("--nodes", type=int, default=50)
            p.add_argument("--events", type=int, default=2000)
            p.add_argument("--seed", type=int, default=7)
        if name == "unlearn":
            p.add_argument("--method", required=True, choices=sorted(METHOD_NAMES))
        if name == "eval":
            p.add_argument("--world", choices=("rest", "full"), default="rest",
                           help="neighbor index: remaining data (default) or the full log")
        if name == "future-unlearn":
            p.add_argument("--phi", help="transformation-network checkpoint")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    tune_malloc()
    try:
        cfg = build_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
