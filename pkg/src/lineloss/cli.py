"""Command-line entry point: synth, clean, train, predict, evaluate, ablate, gradcheck.

Every subcommand writes into ``<out>/<run-id>/`` where the run id is a hash of
the resolved configuration, so identical inputs rewrite identical files.
Options may also come from ``--config FILE`` holding ``key = value`` lines;
explicit flags override the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import plotting, report
from .checkpoint import load_checkpoint, save_checkpoint
from .cleaning import CleaningParams, clean_scada
from .errors import ContractError, LineLossError, ParseError, SchemaError
from .features import (ELECTRICAL_CHANNELS, load_feeder_dataset, write_loss_csv, write_scada_csv)
from .gradcheck import TOLERANCE, run_all
from .graph import read_topology
from .model import ForecastModel
from .pipeline import prepare
from .synth import SynthSpec, synthesize, write_dataset
from .training import (MetricsReport, TrainConfig, ablation_sweep, evaluate, regression_metrics,
                       train)

log = logging.getLogger("lineloss")

DEFAULT_HORIZONS = "1,3,8,24,168"
DATA_FILES = ("scada.csv", "loss.csv", "static.csv", "weather.csv", "topology.txt")


class UsageError(LineLossError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _horizons(s) -> list[int]:
    try:
        hs = [int(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"horizons must be comma-separated integers, got {s!r}") from None
    if not hs or any(h < 1 for h in hs):
        raise argparse.ArgumentTypeError("horizon list must be nonempty and positive")
    return hs


def read_config_file(path) -> dict:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ParseError("empty key", no)
        out[key.replace("-", "_")] = value
    return out


# -- parser -----------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", default="out", help="output root (artifacts go to OUT/<run-id>/)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")


def _data(p):
    p.add_argument("--data", required=True, help="dataset directory (scada/loss/static/weather CSVs, topology.txt)")


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--window", type=int, default=24)
    g.add_argument("--gcn-hidden", type=int, default=256)
    g.add_argument("--gcn-out", type=int, default=16)
    g.add_argument("--embed-dim", type=int, default=8)
    g.add_argument("--att-hidden", type=int, default=32)
    g.add_argument("--lstm-layers", type=int, default=2)
    g.add_argument("--lstm-hidden", type=int, default=256)
    g.add_argument("--dropout", type=float, default=0.05)
    g.add_argument("--time-aggregation", default="weighted_sum", choices=("weighted_sum", "mean", "last"))
    for block in ("gcn", "d_atten", "f_atten", "lstm", "t_atten"):
        g.add_argument(f"--use-{block.replace('_', '-')}", type=_bool, default=True)
    t = p.add_argument_group("training")
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--min-delta", type=float, default=1e-6)
    t.add_argument("--clip-norm", type=float, default=5.0)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--early-stop-unit", default="epoch", choices=("epoch", "iteration"))


def _horizon_args(p, default=DEFAULT_HORIZONS):
    p.add_argument("--horizons", type=_horizons, default=default, help="comma-separated forecast horizons (hours)")
    p.add_argument("--horizon", type=int, help="single horizon; overrides --horizons")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="lineloss", description="Feeder line-loss rate forecasting toolkit")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic feeder dataset")
    _common(p)
    d = SynthSpec()
    p.add_argument("--n-nodes", type=int, default=d.n_nodes)
    p.add_argument("--days", type=int, default=d.days)
    p.add_argument("--cadence-minutes", type=int, default=d.cadence_minutes)
    p.add_argument("--topology", default=d.topology, choices=("path", "tree", "random-tree"))
    p.add_argument("--missing-fraction", type=float, default=d.missing_fraction)
    p.add_argument("--outlier-fraction", type=float, default=d.outlier_fraction)
    p.add_argument("--coupling", type=float, default=d.coupling)
    p.add_argument("--noise", type=float, default=d.noise)

    p = sub.add_parser("clean", help="flag outliers and impute gaps in the SCADA table")
    _common(p)
    _data(p)
    c = CleaningParams()
    for f in fields(CleaningParams):
        if f.name in ("seed", "eps"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), type=type(getattr(c, f.name)), default=getattr(c, f.name))
    p.add_argument("--eps", type=float, default=None)

    p = sub.add_parser("train", help="fit one model per horizon")
    _common(p)
    _data(p)
    _model_args(p)
    _horizon_args(p)

    p = sub.add_parser("predict", help="write test-split forecasts from a checkpoint")
    _common(p)
    _data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("evaluate", help="metrics CSV from checkpoints or a forecast CSV")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint", nargs="+", help="one or more checkpoint files")
    p.add_argument("--forecast", help="forecast CSV with timestamp,actual,predicted")
    p.add_argument("--horizon", type=int, default=1, help="horizon label for --forecast rows")
    p.add_argument("--timing", type=_bool, default=False, help="record inference_ms (not byte-stable)")

    p = sub.add_parser("ablate", help="nested component-removal table")
    _common(p)
    _data(p)
    _model_args(p)
    _horizon_args(p, default="1")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and model block")
    _common(p)
    p.add_argument("--eps", type=float, default=1e-5)
    return root


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config key(s) for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        # argparse only converts string defaults for typed options; do the rest here.
        for a in sub._actions:
            if a.dest in values and a.type is not None and isinstance(getattr(args, a.dest), str):
                setattr(args, a.dest, a.type(getattr(args, a.dest)))
    return args


# -- helpers ----------------------------------------------------------------------

def run_dir(args, exclude=("out", "config", "log_level")) -> Path:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in exclude}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:12]
    out = Path(args.out) / f"{args.command}-{digest}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1, default=str) + "\n")
    return out


def _require(paths) -> None:
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"missing input: {p}")


def _load(data_dir):
    d = Path(data_dir)
    _require([d] + [d / f for f in DATA_FILES])
    ds = load_feeder_dataset(d / "scada.csv", d / "loss.csv", d / "static.csv", d / "weather.csv")
    return ds, read_topology(d / "topology.txt")


def _horizon_list(args) -> list[int]:
    if getattr(args, "horizon", None) is not None:
        if args.horizon < 1:
            raise UsageError("--horizon must be positive")
        return [args.horizon]
    return list(args.horizons)


def _configs(args, prep):
    mcfg = prep.model_config(
        gcn_hidden=args.gcn_hidden, gcn_out=args.gcn_out, embed_dim=args.embed_dim,
        d_att_hidden=args.att_hidden, f_att_hidden=args.att_hidden, t_att_hidden=args.att_hidden,
        lstm_layers=args.lstm_layers, lstm_hidden=args.lstm_hidden, dropout=args.dropout,
        time_aggregation=args.time_aggregation, use_gcn=args.use_gcn, use_d_atten=args.use_d_atten,
        use_f_atten=args.use_f_atten, use_lstm=args.use_lstm, use_t_atten=args.use_t_atten,
        seed=args.seed)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                       patience=args.patience, min_delta=args.min_delta, clip_norm=args.clip_norm,
                       weight_decay=args.weight_decay, early_stop_unit=args.early_stop_unit,
                       seed=args.seed)
    return mcfg, tcfg


def _split(prep, name):
    return {"train": prep.train, "val": prep.val, "test": prep.test}[name]


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args) -> Path:
    spec = SynthSpec(n_nodes=args.n_nodes, days=args.days, cadence_minutes=args.cadence_minutes,
                     seed=args.seed, topology=args.topology, missing_fraction=args.missing_fraction,
                     outlier_fraction=args.outlier_fraction, coupling=args.coupling, noise=args.noise)
    out = run_dir(args)
    write_dataset(synthesize(spec), out)
    (out / "synth_spec.txt").write_text("".join(f"{k} = {v}\n" for k, v in asdict(spec).items()))
    return out


def cmd_clean(args) -> Path:
    src = Path(args.data)
    ds, _ = _load(src)
    params = CleaningParams(lof_k=args.lof_k, min_pts=args.min_pts, eps=args.eps, n_trees=args.n_trees,
                            max_depth=args.max_depth, min_leaf=args.min_leaf, tol=args.tol,
                            max_rounds=args.max_rounds, val_fraction=args.val_fraction,
                            cell_z=args.cell_z, seed=args.seed)
    cleaned, rep = clean_scada(ds.scada, params)
    out = run_dir(args)
    write_scada_csv(cleaned, out / "scada.csv")
    write_loss_csv(cleaned.timestamps, cleaned.loss, out / "loss.csv")
    for f in ("static.csv", "weather.csv", "topology.txt"):
        shutil.copyfile(src / f, out / f)
    text = rep.to_text()
    truth = src / "corruption_mask.csv"
    if truth.exists():
        text += _score_against_truth(cleaned, truth)
    (out / "cleaning_report.txt").write_text(text, encoding="utf-8")
    return out


def _score_against_truth(cleaned, mask_path) -> str:
    df = pd.read_csv(mask_path, dtype={"node_id": str})
    if df.empty:
        return ""
    node_pos = {n: i for i, n in enumerate(cleaned.node_ids)}
    ch_pos = {c: i for i, c in enumerate(ELECTRICAL_CHANNELS)}
    t_pos = {str(t): i for i, t in enumerate(cleaned.timestamps.astype("datetime64[s]"))}
    idx = (df["node_id"].map(node_pos).to_numpy(), df["timestamp"].map(t_pos).to_numpy(),
           df["channel"].map(ch_pos).to_numpy())
    err = cleaned.electrical[idx] - df["true_value"].to_numpy()
    return f"truth_cells = {len(df)}\ntruth_rmse = {float(np.sqrt(np.mean(err ** 2))):.6g}\n"


def cmd_train(args) -> Path:
    ds, graph = _load(args.data)
    out = run_dir(args)
    for h in _horizon_list(args):
        prep = prepare(ds, graph, window=args.window, horizon=h)
        mcfg, tcfg = _configs(args, prep)
        model, res = train(ForecastModel(mcfg, prep.adjacency), prep.train, prep.val, tcfg, prep.loss_scaler)
        save_checkpoint(out / f"checkpoint_h{h}.bin", model, prep.loss_scaler,
                        extra={"best_epoch": res.best_epoch, "stopped_epoch": res.stopped_epoch})
        report.write_loss_curve_csv(res.train_loss, res.val_loss, out / f"loss_curve_h{h}.csv")
        plotting.plot_loss_curve(res.train_loss, res.val_loss, out / f"loss_curve_h{h}.png", res.best_epoch)
        log.info("horizon %d: best epoch %d val %.6g", h, res.best_epoch, res.best_val)
    return out


def _prepare_for(model, args):
    ds, graph = _load(args.data)
    return prepare(ds, graph, window=model.config.window, horizon=model.config.horizon)


def cmd_predict(args) -> Path:
    _require([args.checkpoint])
    model, scaler, _ = load_checkpoint(args.checkpoint)
    prep = _prepare_for(model, args)
    rep = evaluate(model, _split(prep, args.split), scaler or prep.loss_scaler)
    split = _split(prep, args.split)
    out = run_dir(args)
    h = model.config.horizon
    report.write_forecast_csv(split.target_timestamps(), rep.actual[:, -1], rep.predicted[:, -1],
                              out / f"forecast_h{h}.csv")
    plotting.plot_forecast(split.target_timestamps(), rep.actual[:, -1], rep.predicted[:, -1],
                           out / f"forecast_h{h}.png", title=f"{h}-hour-ahead forecast ({args.split})")
    return out


def cmd_evaluate(args) -> Path:
    if bool(args.forecast) == bool(args.checkpoint):
        raise UsageError("give exactly one of --forecast or --checkpoint")
    reports = []
    if args.forecast:
        _require([args.forecast])
        y, yhat = report.read_forecast_csv(args.forecast)
        rmse, mae, r2 = regression_metrics(y, yhat)
        reports.append(MetricsReport(args.horizon, rmse, mae, r2))
    else:
        if not args.data:
            raise UsageError("--checkpoint needs --data")
        _require(args.checkpoint)
        for ck in args.checkpoint:
            model, scaler, _ = load_checkpoint(ck)
            prep = _prepare_for(model, args)
            reports.append(evaluate(model, prep.test, scaler or prep.loss_scaler))
        reports.sort(key=lambda r: r.horizon)
    out = run_dir(args)
    report.write_metrics_csv(reports, out / "metrics.csv", timing=args.timing)
    if len(reports) > 1:
        plotting.plot_horizons([r.horizon for r in reports], [r.rmse for r in reports],
                               [r.mae for r in reports], out / "metrics_by_horizon.png")
    return out


def cmd_ablate(args) -> Path:
    ds, graph = _load(args.data)
    out = run_dir(args)
    rows = []
    for h in _horizon_list(args):
        prep = prepare(ds, graph, window=args.window, horizon=h)
        mcfg, tcfg = _configs(args, prep)
        rows += ablation_sweep(mcfg, prep.adjacency, prep.splits, tcfg, prep.loss_scaler)
    report.write_ablation_csv(rows, out / "ablation.csv")
    plotting.plot_ablation([f"{n} (h{r.horizon})" for n, r in rows], [r.rmse for _, r in rows],
                           [r.r2 for _, r in rows], out / "ablation.png")
    return out


def cmd_gradcheck(args) -> int:
    res = run_all(seed=args.seed, eps=args.eps)
    bad = 0
    for name, err in res.items():
        ok = err < TOLERANCE
        bad += not ok
        print(f"{name:24s} {err:.3e} {'ok' if ok else 'FAIL'}")
    print(f"max relative error {max(res.values()):.3e} (tolerance {TOLERANCE:g})")
    return 1 if bad else 0


COMMANDS = {"synth": cmd_synth, "clean": cmd_clean, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(message)s")
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        out = COMMANDS[args.command](args)
        print(out)
        return 0
    except (LineLossError, FileNotFoundError, argparse.ArgumentTypeError, ContractError,
            SchemaError, pd.errors.ParserError, pd.errors.EmptyDataError, OSError, KeyError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"lineloss: error: {msg}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
