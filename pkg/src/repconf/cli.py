"""
Command-line pipeline over a workspace directory.

Stages: ``ingest`` or ``synth`` produce ``interactions.csv``; ``fit`` fits the
posterior grid and the two 1D curves; ``weigh`` turns training interactions
into confidence weights; ``train`` fits a factor model; ``evaluate`` scores it
on the time split; ``experiment`` runs seeded repetitions per scheme, with an
optional validation grid search, and Welch tests; ``stats`` reports dataset
statistics.

Settings live in one flat ``key=value`` file (``--config``), overridable with
``--set key=value``. The workspace is ``--workspace``, else
``$REPCONF_WORKSPACE``, else the ``workspace`` key. Every stage writes
``<stage>.manifest`` with input hashes, the settings it used and output
hashes; a stage whose manifest still matches is skipped unless ``--force``.

Errors end with a single stderr line
``repconf: error: stage=<name> kind=<type> message=<text>`` and a nonzero exit
code (2 bad config or usage, 3 missing input artifact, 1 anything else).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .als import AlsConfig, load_model, save_model, train
from .bayes import BetaParams
from .evaluation import (
    METRICS,
    Split,
    SplitConfig,
    evaluate_model,
    grid_search,
    run_experiment,
    time_split,
    welch_t_test,
)
from .features import annotate, exclude_single_le_pairs, select_first_after_le
from .grid import (
    GridConfig,
    build_recency_bins,
    export_cells,
    export_grid,
    fit_grid,
    fit_playcount_curve,
    fit_recency_curve,
    import_grid,
)
from .ingest import (
    compute_stats,
    derive_labels_duration,
    derive_labels_gap,
    filter_dataset,
    parse_events,
    read_interactions,
    read_kv,
    restrict_window,
    write_id_map,
    write_interactions,
    write_kv,
)
from .synth import SynthConfig, generate
from .weights import POSTERIOR_SCHEMES, SCHEMES, WeightConfig, compute_weights, read_weights, write_weights

_log = logging.getLogger("repconf")

WORKSPACE_ENV = "REPCONF_WORKSPACE"

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text: str):
        t = text.strip()
        return None if t == "" or t.lower() == "none" else conv(t)

    return parse


def _list_of(conv):
    def parse(text: str):
        return tuple(conv(x.strip()) for x in text.split(",") if x.strip())

    return parse


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> (parser, default, help)
_SCHEMA: dict[str, tuple] = {
    "workspace": (str, "workspace", "artifact directory"),
    "seed": (int, 0, "seed for synthetic data, factor initialisation and experiment runs"),
    "ingest.format": (str, "csv", "csv or tsv"),
    "ingest.header": (_parse_bool, False, "input has a header row"),
    "ingest.delimiter": (_optional(str), None, "field delimiter; default from format"),
    "ingest.strict": (_parse_bool, False, "fail on the first malformed row"),
    "ingest.label_mode": (str, "duration", "duration (listened ms) or gap (time to next event)"),
    "ingest.threshold_s": (int, 30, "listen threshold in seconds"),
    "ingest.window_days": (_optional(float), None, "keep only the last N days"),
    "ingest.first_appearance_only": (_parse_bool, False, "keep only items first seen inside the window"),
    "ingest.min_items_per_user": (int, 20, "distinct items per user"),
    "ingest.min_users_per_item": (int, 100, "distinct users per item"),
    "ingest.rep_cap": (_optional(int), None, "drop pairs with more listens than this"),
    "split.train_frac": (float, 0.70, "end of the training window"),
    "split.val_frac_end": (float, 0.85, "end of the validation window"),
    "split.min_train_items_per_user": (int, 10, "distinct training items per user"),
    "split.eval_items_per_user": (int, 2, "validation and test items per user"),
    "grid.prior_a": (float, 200.0, "grid prior alpha"),
    "grid.prior_b": (float, 200.0, "grid prior beta"),
    "grid.curve_prior_a": (_optional(float), None, "prior alpha of the 1D curves; default grid.prior_a"),
    "grid.curve_prior_b": (_optional(float), None, "prior beta of the 1D curves; default grid.prior_b"),
    "grid.n_recency_bins": (int, 50, "log-spaced recency bins"),
    "grid.max_playcount": (int, 57, "top playcount level; higher levels are pooled into it"),
    "grid.hdi_mass": (float, 0.95, "HDI probability mass"),
    "grid.min_recency_s": (float, 134.0, "lower recency edge in seconds"),
    "grid.first_after_le_only": (_parse_bool, False, "fit the 2D grid on the one-per-level selection"),
    "fit.source": (str, "train", "train (training split only) or all"),
    "weights.scheme": (str, "linear", "one of " + ", ".join(SCHEMES)),
    "weights.scale_alpha": (float, 1.0, "multiplier alpha"),
    "weights.epsilon": (float, 1.0, "epsilon of the log schemes"),
    "weights.cutoff_c": (float, 0.1, "constant added to the HDI width in sum_conf"),
    "als.n_factors": (int, 32, "latent dimensions"),
    "als.reg_lambda": (float, 0.01, "L2 regularisation"),
    "als.n_iterations": (int, 15, "full sweeps"),
    "als.init_scale": (float, 0.01, "std of the initial factors"),
    "experiment.schemes": (_list_of(str), ("linear",), "schemes to run"),
    "experiment.n_runs": (int, 10, "seeded runs per scheme"),
    "experiment.compare": (_list_of(str), (), "two schemes to t-test; default all pairs"),
    "experiment.alternative": (str, "two-sided", "two-sided, greater or less (first minus second)"),
    "experiment.exclude_val": (_parse_bool, False, "remove validation items from test candidates"),
    "experiment.grid_search": (_parse_bool, False, "pick alpha, epsilon and rank on validation first"),
    "experiment.alphas": (_list_of(float), (0.1, 0.5, 1.0, 1.5, 2.0, 10.0, 40.0, 100.0), "alpha grid"),
    "experiment.epsilons": (_list_of(float), (0.1, 0.5, 0.8, 1.0, 1.5), "epsilon grid (log schemes)"),
    "experiment.factors": (_list_of(int), (16, 32, 64), "rank grid"),
    "experiment.relative_alpha": (_parse_bool, False, "divide alpha by the scheme's mean raw weight"),
    "experiment.search_metric": (str, "ndcg@10", "validation metric to maximise"),
    "experiment.search_runs": (int, 1, "seeded runs per search setting"),
}
for _f in dataclasses.fields(SynthConfig):
    if _f.name != "seed":
        _SCHEMA[f"synth.{_f.name}"] = (type(_f.default), _f.default, "synthetic generator setting")

DEFAULTS = {k: v[1] for k, v in _SCHEMA.items()}


def parse_config(path=None, overrides=()) -> dict:
    """
    Defaults updated from a ``key=value`` file and ``key=value`` override strings.

    Unknown keys and unparsable values raise :class:`ConfigError`.
    """
    raw = {}
    if path is not None:
        try:
            raw.update(read_kv(path))
        except ValueError as e:
            raise ConfigError(str(e)) from e
    for item in overrides:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        raw[k.strip()] = v.strip()
    cfg = dict(DEFAULTS)
    for k, v in raw.items():
        if k not in _SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            cfg[k] = _SCHEMA[k][0](v)
        except ValueError as e:
            raise ConfigError(f"bad value for {k}: {e}") from e
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    if cfg["ingest.format"] not in ("csv", "tsv"):
        raise ConfigError("ingest.format must be csv or tsv")
    if cfg["ingest.label_mode"] not in ("duration", "gap"):
        raise ConfigError("ingest.label_mode must be duration or gap")
    if cfg["fit.source"] not in ("train", "all"):
        raise ConfigError("fit.source must be train or all")
    for s in (cfg["weights.scheme"],) + cfg["experiment.schemes"] + cfg["experiment.compare"]:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")
    if cfg["experiment.compare"] and len(cfg["experiment.compare"]) != 2:
        raise ConfigError("experiment.compare needs exactly two schemes")
    if cfg["experiment.alternative"] not in ("two-sided", "greater", "less"):
        raise ConfigError("experiment.alternative must be two-sided, greater or less")
    if cfg["experiment.search_metric"] not in METRICS:
        raise ConfigError(f"experiment.search_metric must be one of {METRICS}")
    try:
        grid_config(cfg)
        weight_config(cfg)
        als_config(cfg)
        split_config(cfg)
        synth_config(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def grid_config(cfg: dict) -> GridConfig:
    return GridConfig(
        prior=BetaParams(cfg["grid.prior_a"], cfg["grid.prior_b"]),
        n_recency_bins=cfg["grid.n_recency_bins"],
        max_playcount=cfg["grid.max_playcount"],
        hdi_mass=cfg["grid.hdi_mass"],
        min_recency_s=cfg["grid.min_recency_s"],
    )


def weight_config(cfg: dict, scheme: str | None = None) -> WeightConfig:
    return WeightConfig(
        scheme=scheme or cfg["weights.scheme"],
        scale_alpha=cfg["weights.scale_alpha"],
        epsilon=cfg["weights.epsilon"],
        cutoff_c=cfg["weights.cutoff_c"],
    )


def als_config(cfg: dict) -> AlsConfig:
    return AlsConfig(
        n_factors=cfg["als.n_factors"],
        reg_lambda=cfg["als.reg_lambda"],
        n_iterations=cfg["als.n_iterations"],
        seed=cfg["seed"],
        init_scale=cfg["als.init_scale"],
    )


def split_config(cfg: dict) -> SplitConfig:
    return SplitConfig(
        cfg["split.train_frac"],
        cfg["split.val_frac_end"],
        cfg["split.min_train_items_per_user"],
        cfg["split.eval_items_per_user"],
    )


def synth_config(cfg: dict) -> SynthConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("synth.")}
    return SynthConfig(seed=cfg["seed"], **kw)


def _echo(cfg: dict, *prefixes: str) -> dict:
    return {k: _fmt_value(v) for k, v in cfg.items() if any(k == p or k.startswith(p + ".") for p in prefixes)}


# ---------------------------------------------------------------------------
# workspace and manifests


def file_digest(path) -> str:
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


class Workspace:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, name) -> Path:
        return self.root / name

    def require(self, name: str, producer: str) -> Path:
        p = self.root / name
        if not p.exists():
            raise MissingArtifactError(f"{p} not found; run 'repconf {producer}' first")
        return p


def _manifest_matches(ws: Workspace, stage: str, inputs: dict, echo: dict, outputs: list[str]) -> bool:
    path = ws / f"{stage}.manifest"
    if not path.exists():
        return False
    old = read_kv(path)
    want = {f"input.{k}": v for k, v in inputs.items()}
    want.update({f"config.{k}": v for k, v in echo.items()})
    for k, v in want.items():
        if old.get(k) != v:
            return False
    n_old = sum(1 for k in old if k.startswith(("input.", "config.")))
    if n_old != len(want):
        return False
    for name in outputs:
        p = ws / name
        if not p.exists() or old.get(f"output.{name}") != file_digest(p):
            return False
    return True


def run_stage(ws: Workspace, stage: str, inputs: list[Path], echo: dict, outputs: list[str], body, force=False):
    """Run ``body()`` unless the stage manifest shows identical inputs, settings and outputs."""
    in_hashes = {Path(p).name: file_digest(p) for p in inputs}
    if not force and _manifest_matches(ws, stage, in_hashes, echo, outputs):
        _log.info("%s: up to date", stage)
        return False
    body()
    record = {"stage": stage, "version": __version__}
    record.update({f"input.{k}": v for k, v in in_hashes.items()})
    record.update({f"config.{k}": v for k, v in echo.items()})
    record.update({f"output.{name}": file_digest(ws / name) for name in outputs})
    write_kv(ws / f"{stage}.manifest", record)
    _log.info("%s: wrote %s", stage, ", ".join(outputs))
    return True


# ---------------------------------------------------------------------------
# split persistence


def _ensure_split(ws: Workspace, cfg: dict, force=False) -> Split:
    src = ws.require("interactions.csv", "ingest' or 'repconf synth")

    def body():
        sp = time_split(read_interactions(src), split_config(cfg))
        write_interactions(ws / "split_train.csv", sp.train)
        with open(ws / "split_eval.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["part", "user", "item"])
            for part, mapping in (("val", sp.val), ("test", sp.test)):
                for u in sorted(mapping):
                    for i in mapping[u]:
                        w.writerow([part, u, i])
        write_kv(
            ws / "split_meta.txt",
            {
                "train_end": repr(sp.train_end),
                "val_end": repr(sp.val_end),
                "n_rows": sp.shape[0],
                "n_cols": sp.shape[1],
                "n_users": len(sp.users),
            },
        )

    run_stage(
        ws, "split", [src], _echo(cfg, "split"), ["split_train.csv", "split_eval.csv", "split_meta.txt"], body, force
    )
    return load_split(ws)


def load_split(ws: Workspace) -> Split:
    meta = read_kv(ws.require("split_meta.txt", "fit"))
    train_df = read_interactions(ws / "split_train.csv")
    ev = pd.read_csv(ws / "split_eval.csv")
    parts = {"val": {}, "test": {}}
    for part, u, i in ev.itertuples(index=False):
        parts[part].setdefault(int(u), []).append(int(i))
    return Split(
        train_df,
        parts["val"],
        parts["test"],
        float(meta["train_end"]),
        float(meta["val_end"]),
        (int(meta["n_rows"]), int(meta["n_cols"])),
    )


def _grid_if_needed(ws: Workspace, scheme: str):
    if scheme not in POSTERIOR_SCHEMES:
        return None, []
    p = ws.require("grid.csv", "fit")
    return import_grid(p), [p]


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg, ws: Workspace) -> int:
    src = Path(args.input)
    if not src.exists():
        raise MissingArtifactError(f"input file {src} not found")
    outputs = ["interactions.csv", "user_ids.csv", "item_ids.csv", "stats.txt"]

    def body():
        parsed = parse_events(
            src,
            cfg["ingest.format"],
            header=cfg["ingest.header"],
            delimiter=cfg["ingest.delimiter"],
            strict=cfg["ingest.strict"],
        )
        events = parsed.events
        n_raw = len(events)
        if cfg["ingest.window_days"] is not None:
            events = restrict_window(events, cfg["ingest.window_days"], cfg["ingest.first_appearance_only"])
        threshold = cfg["ingest.threshold_s"]
        if cfg["ingest.label_mode"] == "duration":
            lab = derive_labels_duration(events, threshold)
        else:
            lab = derive_labels_gap(events, threshold)
        n_labeled = len(lab.interactions)
        ints = filter_dataset(
            lab.interactions,
            cfg["ingest.min_items_per_user"],
            cfg["ingest.min_users_per_item"],
            cfg["ingest.rep_cap"],
        )
        write_interactions(ws / "interactions.csv", ints)
        write_id_map(ws / "user_ids.csv", lab.user_ids)
        write_id_map(ws / "item_ids.csv", lab.item_ids)
        stats = compute_stats(ints)
        report = dataclasses.asdict(stats)
        report.update(
            n_events=n_raw,
            n_malformed=parsed.n_malformed,
            n_in_window=len(events),
            n_labeled=n_labeled,
            n_dropped_unlabeled=len(events) - n_labeled,
            n_after_filter=len(ints),
            label_mode=cfg["ingest.label_mode"],
        )
        write_kv(ws / "stats.txt", report)

    run_stage(ws, "ingest", [src], _echo(cfg, "ingest"), outputs, body, args.force)
    _print_kv(read_kv(ws / "stats.txt"))
    return EXIT_OK


def cmd_synth(args, cfg, ws: Workspace) -> int:
    outputs = ["interactions.csv", "truth_events.csv", "ground_truth.csv", "stats.txt"]

    def body():
        ints, truth = generate(synth_config(cfg))
        write_interactions(ws / "interactions.csv", ints)
        pd.DataFrame({"event_prob": truth.event_prob, "pair_kind": truth.pair_kind}).to_csv(
            ws / "truth_events.csv", index=False
        )
        gcfg = grid_config(cfg)
        bins = build_recency_bins(annotate(ints), gcfg.n_recency_bins, gcfg.min_recency_s)
        table = truth.table(bins, gcfg.max_playcount)
        table.to_csv(ws / "ground_truth.csv", index=False, float_format="%.17g")
        write_kv(ws / "stats.txt", dataclasses.asdict(compute_stats(ints)))

    run_stage(ws, "synth", [], _echo(cfg, "synth", "seed", "grid"), outputs, body, args.force)
    _print_kv(read_kv(ws / "stats.txt"))
    return EXIT_OK


def cmd_stats(args, cfg, ws: Workspace) -> int:
    src = Path(args.input) if args.input else ws.require("interactions.csv", "ingest")
    stats = compute_stats(read_interactions(src))
    values = dataclasses.asdict(stats)
    values["skewed"] = stats.skewed
    _print_kv({k: _fmt_value(v) for k, v in values.items()})
    return EXIT_OK


def cmd_fit(args, cfg, ws: Workspace) -> int:
    gcfg = grid_config(cfg)
    if cfg["fit.source"] == "train":
        _ensure_split(ws, cfg, args.force)
        src = ws / "split_train.csv"
    else:
        src = ws.require("interactions.csv", "ingest")
    outputs = ["grid.csv", "playcount_curve.csv", "recency_curve.csv"]

    def body():
        ann = annotate(read_interactions(src))
        bins = build_recency_bins(ann, gcfg.n_recency_bins, gcfg.min_recency_s)
        grid = fit_grid(ann, gcfg, bins, first_after_le_only=cfg["grid.first_after_le_only"])
        export_grid(grid, ws / "grid.csv")
        a = cfg["grid.curve_prior_a"] or gcfg.prior.a
        b = cfg["grid.curve_prior_b"] or gcfg.prior.b
        curve_prior = BetaParams(a, b)
        sel = exclude_single_le_pairs(select_first_after_le(ann))
        export_cells(
            fit_playcount_curve(sel, curve_prior, gcfg.max_playcount, gcfg.hdi_mass), ws / "playcount_curve.csv"
        )
        export_cells(fit_recency_curve(ann, curve_prior, bins, gcfg.hdi_mass), ws / "recency_curve.csv", bins)

    run_stage(ws, "fit", [src], _echo(cfg, "grid", "fit"), outputs, body, args.force)
    return EXIT_OK


def cmd_weigh(args, cfg, ws: Workspace) -> int:
    split = _ensure_split(ws, cfg, args.force)
    wcfg = weight_config(cfg)
    grid, extra = _grid_if_needed(ws, wcfg.scheme)

    def body():
        wm = compute_weights(split.train, wcfg, grid=grid, shape=split.shape)
        write_weights(ws / "weights.csv", wm)

    run_stage(ws, "weigh", [ws / "split_train.csv", *extra], _echo(cfg, "weights"), ["weights.csv"], body, args.force)
    return EXIT_OK


def cmd_train(args, cfg, ws: Workspace) -> int:
    src = ws.require("weights.csv", "weigh")

    def body():
        model = train(read_weights(src), als_config(cfg))
        save_model(ws / "model.csv", model, fmt="csv")

    run_stage(ws, "train", [src], _echo(cfg, "als", "seed"), ["model.csv"], body, args.force)
    return EXIT_OK


def cmd_evaluate(args, cfg, ws: Workspace) -> int:
    split = _ensure_split(ws, cfg, args.force)
    src = ws.require("model.csv", "train")
    out = f"metrics_{args.target}.txt"

    def body():
        model = load_model(src, fmt="csv")
        res = evaluate_model(model, split, target=args.target, exclude_val=cfg["experiment.exclude_val"])
        values = {"target": args.target, "n_users": len(split.test if args.target == "test" else split.val)}
        values.update({m: repr(res[m]) for m in METRICS})
        write_kv(ws / out, values)

    inputs = [src, ws / "split_train.csv", ws / "split_eval.csv"]
    echo = _echo(cfg, "experiment.exclude_val")
    echo["target"] = args.target
    run_stage(ws, f"evaluate_{args.target}", inputs, echo, [out], body, args.force)
    _print_kv(read_kv(ws / out))
    return EXIT_OK


def cmd_experiment(args, cfg, ws: Workspace) -> int:
    split = _ensure_split(ws, cfg, args.force)
    schemes = cfg["experiment.schemes"]
    grid = None
    inputs = [ws / "split_train.csv", ws / "split_eval.csv"]
    if any(s in POSTERIOR_SCHEMES for s in schemes):
        grid, extra = _grid_if_needed(ws, "sum_post")
        inputs += extra
    outputs = ["experiment.csv", "experiment_runs.csv", "ttest.csv"]
    outputs += [f"experiment_{s}.txt" for s in schemes]
    if cfg["experiment.grid_search"]:
        outputs += [f"search_{s}.csv" for s in schemes]

    def body():
        base = als_config(cfg)
        reports = {}
        for s in schemes:
            wcfg, acfg = weight_config(cfg, s), base
            if cfg["experiment.grid_search"]:
                res = grid_search(
                    split,
                    s,
                    base,
                    alphas=cfg["experiment.alphas"],
                    epsilons=cfg["experiment.epsilons"],
                    factors=cfg["experiment.factors"],
                    cutoff_c=cfg["weights.cutoff_c"],
                    grid=grid,
                    relative_alpha=cfg["experiment.relative_alpha"],
                    metric=cfg["experiment.search_metric"],
                    n_runs=cfg["experiment.search_runs"],
                    base_seed=cfg["seed"],
                )
                pd.DataFrame(res.table).to_csv(ws / f"search_{s}.csv", index=False, float_format="%.17g")
                wcfg, acfg = res.best_weight_cfg, res.best_als_cfg
                _log.info("%s: validation best %s=%.5f with %s", s, res.metric, res.best_score, wcfg)
            rep = run_experiment(
                split,
                wcfg,
                acfg,
                cfg["experiment.n_runs"],
                cfg["seed"],
                grid=grid,
                exclude_val=cfg["experiment.exclude_val"],
            )
            reports[s] = rep
            write_kv(ws / f"experiment_{s}.txt", rep.to_kv())
            _log.info("%s: ndcg@10 %.5f +- %.5f", s, rep.mean("ndcg@10"), rep.std("ndcg@10"))
        pd.DataFrame([row for r in reports.values() for row in r.to_rows()]).to_csv(
            ws / "experiment.csv", index=False, float_format="%.17g"
        )
        runs = []
        for s, r in reports.items():
            for n, seed in enumerate(r.seeds):
                runs.append({"scheme": s, "seed": seed, **{m: r.per_run[m][n] for m in METRICS}})
        pd.DataFrame(runs).to_csv(ws / "experiment_runs.csv", index=False, float_format="%.17g")
        pairs = [tuple(cfg["experiment.compare"])] if cfg["experiment.compare"] else itertools.combinations(schemes, 2)
        rows = []
        for a, b in pairs:
            if a not in reports or b not in reports:
                raise ConfigError(f"experiment.compare names a scheme that was not run: {a}, {b}")
            if reports[a].n_runs < 2:
                continue
            for m in METRICS:
                t = welch_t_test(reports[a].per_run[m], reports[b].per_run[m], cfg["experiment.alternative"])
                rows.append(
                    {"scheme_a": a, "scheme_b": b, "metric": m, "alternative": cfg["experiment.alternative"],
                     "t_stat": t.t_stat, "df": t.df, "p_value": t.p_value}
                )
        cols = ["scheme_a", "scheme_b", "metric", "alternative", "t_stat", "df", "p_value"]
        pd.DataFrame(rows, columns=cols).to_csv(ws / "ttest.csv", index=False, float_format="%.17g")

    run_stage(
        ws, "experiment", inputs, _echo(cfg, "weights", "als", "experiment", "seed"), outputs, body, args.force
    )
    print((ws / "experiment.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _print_kv(values: dict):
    for k, v in values.items():
        print(f"{k}={v}")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    common.add_argument("--workspace", help=f"artifact directory (else ${WORKSPACE_ENV}, else config 'workspace')")
    common.add_argument("--seed", type=int, help="overrides the 'seed' setting")
    common.add_argument("--threads", type=int, help="cap numba worker threads")
    common.add_argument("--force", action="store_true", help="rerun even if the stage manifest matches")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="repconf", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--dump-config", action="store_true", help="print every setting with its default and exit")
    sub = ap.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", parents=[common], help="parse, label and filter a raw event log")
    p.add_argument("input", help="CSV/TSV of user_id,item_id,timestamp[,duration_ms]")
    p.add_argument("--format", choices=["csv", "tsv"], help="overrides ingest.format")
    p.add_argument("--label-mode", choices=["duration", "gap"], help="overrides ingest.label_mode")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic interactions with known listen probability")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="repetition statistics of an interaction file")
    p.add_argument("input", nargs="?", help="interactions CSV (default: workspace interactions.csv)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("fit", parents=[common], help="fit the posterior grid and 1D curves")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("weigh", parents=[common], help="compute confidence weights on the training split")
    p.set_defaults(func=cmd_weigh)

    p = sub.add_parser("train", parents=[common], help="fit a weighted ALS model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="recall and NDCG of the trained model")
    p.add_argument("--target", choices=["test", "val"], default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="seeded runs per scheme and Welch t-tests")
    p.set_defaults(func=cmd_experiment)
    return ap


def _error_line(stage: str, exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return f"repconf: error: stage={stage} kind={type(exc).__name__} message={msg}"


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.dump_config:
        for k, (_, default, helptext) in _SCHEMA.items():
            print(f"# {helptext}")
            print(f"{k}={_fmt_value(default)}")
        return EXIT_OK
    if args.command is None:
        ap.print_help()
        return EXIT_CONFIG

    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        overrides = list(args.overrides)
        if getattr(args, "format", None):
            overrides.append(f"ingest.format={args.format}")
        if getattr(args, "label_mode", None):
            overrides.append(f"ingest.label_mode={args.label_mode}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = parse_config(args.config, overrides)
        if args.threads is not None:
            import numba

            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        root = args.workspace or os.environ.get(WORKSPACE_ENV) or cfg["workspace"]
        return args.func(args, cfg, Workspace(root))
    except ConfigError as e:
        print(_error_line(stage, e), file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(_error_line(stage, e), file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, ArithmeticError, OSError, KeyError) as e:
        _log.debug("stage %s failed", stage, exc_info=True)
        print(_error_line(stage, e), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
