"""Command-line experiment harness: ``pseudeq <command> ...``."""
from __future__ import annotations

import os

_threads = os.environ.get("PSEUDEQ_THREADS", "0")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import baselines as bl  # noqa: E402
from . import exchange as ex  # noqa: E402
from . import gaes  # noqa: E402
from . import kyoto as ky  # noqa: E402
from .io import (ExperimentManifest, dir_hash, json_hash, read_jsonl, write_csv,  # noqa: E402
                 write_jsonl)

log = logging.getLogger("pseudeq")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SPLITS = ("train", "valid", "test")
SPLIT_STRIDE = 10 ** 6
SCARF_EQ = np.full(3, 1.0 / 3.0)


class NumericalAbort(RuntimeError):
    pass


# --------------------------------------------------------------------------
# helpers

def split_seed(seed: int, split: int, k: int) -> int:
    """Instance seed; splits occupy disjoint blocks as long as counts < SPLIT_STRIDE."""
    return (seed * len(SPLITS) + split) * SPLIT_STRIDE + k


def load_split(data_dir, split: str):
    path = Path(data_dir) / f"{split}.jsonl"
    recs = read_jsonl(path)
    if not recs:
        raise ValueError(f"{path} is empty")
    if "rev" in recs[0]:
        return "kyoto", [ky.KyotoInstance.from_dict(r, r.get("damage_form", "plain")) for r in recs], path
    return "exchange", [ex.ExchangeEconomy.from_dict(r) for r in recs], path


def summarize(values) -> list[tuple]:
    v = np.asarray(values, dtype=np.float64)
    return [("mean", float(v.mean())), ("median", float(np.median(v))),
            ("p5", float(np.percentile(v, 5))), ("p95", float(np.percentile(v, 95)))]


def write_summary(path, columns: dict) -> None:
    names = list(columns)
    stats = {k: summarize(v) for k, v in columns.items()}
    rows = [[stats[names[0]][j][0]] + [stats[k][j][1] for k in names] for j in range(4)]
    write_csv(path, ["statistic"] + names, rows)


def _clock(timing: bool):
    return (lambda: time.perf_counter()) if timing else (lambda: 0.0)


def _manifest(args, config_hash: str, data_files=()) -> ExperimentManifest:
    files = [Path(p) for p in data_files]
    m = ExperimentManifest(args.command, config_hash,
                           str(files[0].parent) if files else None,
                           dir_hash(files) if files else None, args.seed)
    m.stamp_start(not args.no_timing)
    return m


def _finish(args, manifest: ExperimentManifest, out: Path, outputs) -> None:
    manifest.outputs = list(outputs)
    manifest.stamp_end(not args.no_timing)
    manifest.write(out)


def _args_hash(args, skip=("out", "no_timing", "config", "func", "command")) -> str:
    return json_hash({k: v for k, v in sorted(vars(args).items()) if k not in skip})


# --------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = args.counts
    if len(counts) != 3 or min(counts) < 1 or max(counts) >= SPLIT_STRIDE:
        raise ValueError("--counts needs three sizes in [1, 1e6)")
    splits = {}
    if args.family == "kyoto":
        if args.kyoto_mode == "statics":
            base = ky.sample_kyoto(args.n_countries, args.base_seed, args.damage_form)
            splits["train"] = ky.sample_statics(base, counts[0], split_seed(args.seed, 0, 0))
            splits["valid"] = ky.sample_statics(base, counts[1], split_seed(args.seed, 1, 0))
            splits["test"] = ky.statics_instances(base, ky.beta_grid(args.grid))
        else:
            for s, name in enumerate(SPLITS):
                splits[name] = [ky.sample_kyoto(args.n_countries, split_seed(args.seed, s, k),
                                                args.damage_form) for k in range(counts[s])]
    else:
        rho = None if args.rho_range is None else args.rho_range
        for s, name in enumerate(SPLITS):
            splits[name] = [ex.sample_economy(args.family, args.n_buyers, args.m_goods, rho,
                                              split_seed(args.seed, s, k)) for k in range(counts[s])]
    files = []
    for name in SPLITS:
        write_jsonl(out / f"{name}.jsonl", (x.to_dict() for x in splits[name]))
        files.append(f"{name}.jsonl")
    m = _manifest(args, _args_hash(args))
    m.notes = {"counts": {k: len(v) for k, v in splits.items()}}
    _finish(args, m, out, files)
    return EXIT_OK


# --------------------------------------------------------------------------
# train

TRAIN_FLAGS = ("outer_iters", "inner_iters", "warmup_iters", "batch_size", "lr_gen", "lr_disc",
               "schedule", "pl_constant", "grad_mode", "discriminator", "reset_disc", "hidden",
               "val_every", "patience", "n_norm_samples")


def _train_config(args) -> gaes.TrainConfig:
    d = dict(args.file_config)
    for k in TRAIN_FLAGS:
        v = getattr(args, k)
        if v is not None:
            d[k] = v
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = gaes.TrainConfig.from_dict(d)
    cfg.validate()
    return cfg


def _problems(kind, train, valid, config):
    if kind == "kyoto":
        cache: dict = {}
        tp = gaes.KyotoProblem(train, config.n_norm_samples, vertex_cache=cache)
        vp = gaes.KyotoProblem(valid, config.n_norm_samples, vertex_cache=cache)
        if vp.K != tp.K:
            raise ValueError("validation instances need the same vertex padding as training")
        return tp, vp
    fams = {e.family for e in train + valid}
    if len(fams) != 1:
        raise ValueError(f"mixed utility families in dataset: {sorted(fams)}")
    return gaes.ExchangeProblem(train, config.n_norm_samples), \
        gaes.ExchangeProblem(valid, config.n_norm_samples, norm_seed=SPLIT_STRIDE)


def cmd_train(args) -> int:
    config = _train_config(args)
    args.seed = config.seed
    kind, train, tpath = load_split(args.data, "train")
    kind_v, valid, vpath = load_split(args.data, "valid")
    if kind != kind_v:
        raise ValueError("train and valid splits hold different game kinds")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem, vproblem = _problems(kind, train, valid, config)
    state = None
    if args.resume:
        with open(args.resume) as fh:
            saved = json.load(fh)
        if saved.get("config_hash") != config.hash():
            raise ValueError("resume state was produced by a different config")
        state = gaes.TrainState.from_dict(saved["state"])
    timing = not args.no_timing
    m = _manifest(args, config.hash(), [tpath, vpath])
    every = args.checkpoint_every or config.outer_iters
    while True:
        stop = min(config.outer_iters, (0 if state is None else state.t) + every)
        res = gaes.gaes_train(problem, None if state is None else state.model, config, vproblem,
                              state=state, stop_at=stop, timing=timing)
        state = res.state
        with open(out / "state.json", "w") as fh:
            json.dump({"config_hash": config.hash(), "state": state.to_dict()}, fh)
        if state.t >= config.outer_iters or state.stopped:
            break
    res.model.save(out / "model_final.json")
    res.best_model.save(out / "model_best.json")
    rows = []
    tr = res.trajectory
    for j, it in enumerate(tr.iters):
        rows += [(it, "exploitability", tr.exploitability[j]),
                 (it, "normalized_exploitability", state.normalized[j]),
                 (it, "train_loss", tr.cumulative_regret[j]),
                 (it, "wall_ms", tr.wall_ms[j])]
    write_csv(out / "trajectory.csv", ["iter", "metric", "value"], rows)
    m.notes = {"config": config.to_dict(), "stopped": state.stopped, "iterations": state.t,
               "best_valid_normalized": None if not np.isfinite(state.best_val) else state.best_val}
    if state.aborted_at is not None:
        m.status = "aborted"
    _finish(args, m, out, ["model_final.json", "model_best.json", "trajectory.csv", "state.json"])
    if state.aborted_at is not None:
        raise NumericalAbort(state.stopped)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval

def uniform_model_rows(games, draws: int, seed: int, n_norm: int, norm_seed: int, clock):
    """Uniform-sampler "model": exploitability averaged over ``draws`` independent outcomes."""
    rows = []
    for k, e in enumerate(games):
        t0 = clock()
        P, X = ex.uniform_feasible_outcomes(e, draws, np.random.default_rng([seed, 7, k]))
        phi = float(ex.outcome_exploitability(e, P, X).mean())
        ms = (clock() - t0) * 1e3
        rows.append((k, phi, phi / ex.mean_uniform_exploitability(e, n_norm, norm_seed + k), ms))
    return rows


def _exchange_rows(games, outcomes_fn, n_norm, norm_seed, clock):
    rows = []
    for k, e in enumerate(games):
        t0 = clock()
        P, X = outcomes_fn(k)
        phi = float(ex.outcome_exploitability(e, P, X))
        ms = (clock() - t0) * 1e3
        den = ex.mean_uniform_exploitability(e, n_norm, norm_seed + k)
        rows.append((k, phi, phi / den, ms))
    return rows


def cmd_eval(args) -> int:
    kind, games, path = load_split(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clock = _clock(not args.no_timing)
    notes = {}
    if args.model == "uniform":
        if kind != "exchange":
            raise ValueError("the uniform model is defined for exchange economies")
        rows = uniform_model_rows(games, args.uniform_draws, args.seed, args.n_norm_samples,
                                  args.norm_seed, clock)
        model_hash = f"uniform-{args.uniform_draws}"
    else:
        model = gaes.GaesModel.load(args.model)
        model_hash = json_hash(model.to_dict())
        if model.kind != kind:
            raise ValueError(f"model kind {model.kind!r} does not match dataset kind {kind!r}")
        if kind == "exchange":
            prob = gaes.ExchangeProblem(games)
            prob.check_model(model)
            rows = _exchange_rows(games, lambda k: tuple(a[0] for a in prob.outcomes(model, [k])),
                                  args.n_norm_samples, args.norm_seed, clock)
            if args.gap_split:
                _, other, _ = load_split(args.data, args.gap_split)
                tr, te, gap = gaes.eval_generalization_gap(model, other, games)
                notes["gap"] = {"reference_split": args.gap_split, "reference_mean": tr,
                                "eval_mean": te, "gap": gap}
        else:
            prob = gaes.KyotoProblem(games, args.n_norm_samples, norm_seed=args.norm_seed)
            prob.check_model(model)
            den = prob.denominators()
            rows = []
            for k in range(len(games)):
                t0 = clock()
                phi = float(prob.exploitability(model, [k])[0])
                rows.append((k, phi, phi / den[k], (clock() - t0) * 1e3))
    write_csv(out / "metrics.csv", ["economy_id", "exploitability", "normalized_exploitability",
                                    "wall_ms"], rows)
    write_summary(out / "summary.csv", {"exploitability": [r[1] for r in rows],
                                        "normalized_exploitability": [r[2] for r in rows]})
    files = ["metrics.csv", "summary.csv"]
    if "gap" in notes:
        g = notes["gap"]
        write_csv(out / "gap.csv", ["reference_split", "reference_mean", "eval_mean", "gap"],
                  [(g["reference_split"], g["reference_mean"], g["eval_mean"], g["gap"])])
        files.append("gap.csv")
    m = _manifest(args, json_hash([_args_hash(args), model_hash]), [path])
    m.notes = notes
    _finish(args, m, out, files)
    return EXIT_OK


# --------------------------------------------------------------------------
# baseline

def baseline_runner(method: str, T: int, schedule_dir: str, seed: int, timing: bool):
    if method == "tatonnement":
        return lambda e, eta: bl.tatonnement(e, eta, T, schedule_dir, timing=timing)
    if method == "exploit_descent":
        return lambda e, eta: bl.exploitability_descent(bl.exchange_descent_game(e), eta, T,
                                                        seed=seed, timing=timing)
    raise ValueError(f"unknown baseline method {method!r}")


def cmd_baseline(args) -> int:
    kind, valid, vpath = load_split(args.data, "valid")
    _, test, tpath = load_split(args.data, "test")
    if kind != "exchange":
        raise ValueError("baselines run on exchange economies")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timing = not args.no_timing
    run = baseline_runner(args.method, args.T, args.schedule_dir, args.seed, timing)
    sel = bl.select_eta(run, valid, tuple(args.eta_grid))
    write_csv(out / "selection.csv", ["eta", "mean_valid_exploitability"],
              [(eta, sel.scores[eta]) for eta in args.eta_grid])
    rows, diverged = [], 0
    for k, e in enumerate(test):
        tr = run(e, sel.eta)
        diverged += tr.diverged
        den = ex.mean_uniform_exploitability(e, args.n_norm_samples, args.norm_seed + k)
        rows.append((k, tr.last, tr.last / den, tr.wall_ms[-1], int(tr.diverged)))
    write_csv(out / "metrics.csv", ["economy_id", "exploitability", "normalized_exploitability",
                                    "wall_ms", "diverged"], rows)
    write_summary(out / "summary.csv", {"exploitability": [r[1] for r in rows],
                                        "normalized_exploitability": [r[2] for r in rows]})
    m = _manifest(args, _args_hash(args), [vpath, tpath])
    m.notes = {"selected_eta": sel.eta, "all_grid_points_diverged": sel.all_diverged,
               "diverged_test_runs": diverged}
    if sel.all_diverged:
        log.warning("every step size diverged on some validation economy; best truncated run used")
    _finish(args, m, out, ["selection.csv", "metrics.csv", "summary.csv"])
    return EXIT_OK


# --------------------------------------------------------------------------
# scarf

def scarf_run(noise_scale: float, T: int, seed: int, eta0: float = 1.0,
              schedule_dir: str = "decreasing", timing: bool = True):
    economy = ex.scarf_economy()
    rng = np.random.default_rng(seed)
    p0 = SCARF_EQ + rng.uniform(-noise_scale, noise_scale, size=3)
    return bl.tatonnement(economy, eta0, T, schedule_dir, p0=p0, timing=timing,
                          divergence_norm=None)


def cmd_scarf(args) -> int:
    if args.noise_scale < 0 or args.noise_scale >= 1.0 / 3.0:
        raise ValueError("--noise-scale must lie in [0, 1/3)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr = scarf_run(args.noise_scale, args.T, args.seed, args.eta0, args.schedule_dir,
                   not args.no_timing)
    dist = [float(np.linalg.norm(p - SCARF_EQ)) for p in tr.snapshots]
    rows = [(it, *p, d, phi) for it, p, d, phi in zip(tr.iters, tr.snapshots, dist, tr.exploitability)]
    write_csv(out / "scarf.csv", ["step", "p1", "p2", "p3", "distance", "exploitability"], rows)
    write_csv(out / "scarf_summary.csv", ["initial_distance", "final_distance", "spiral_out"],
              [(dist[0], dist[-1], int(dist[-1] > dist[0]))])
    m = _manifest(args, _args_hash(args))
    _finish(args, m, out, ["scarf.csv", "scarf_summary.csv"])
    return EXIT_OK


# --------------------------------------------------------------------------
# kyoto-phase

def kyoto_phase_rows(instances, model=None, n_norm_samples: int = 1000, norm_seed: int = 0):
    """(instance_id, beta1, beta2, label, oracle_label, normalized exploitability) rows."""
    prob = gaes.KyotoProblem(instances, n_norm_samples, norm_seed=norm_seed)
    oracle = np.stack([ky.variational_equilibrium(g) for g in prob.geos])
    if model is None:
        X = oracle
    else:
        prob.check_model(model)
        X = prob.outcomes(model)
    den = prob.denominators()
    rows = []
    for k, (inst, x, g) in enumerate(zip(instances, X, prob.geos)):
        phi = ky.kyoto_exploitability(g, x)
        rows.append((k, *inst.rev[:2], ky.classify_gne(inst, x), ky.classify_gne(inst, oracle[k]),
                     phi / den[k]))
    return rows


def cmd_kyoto_phase(args) -> int:
    if (args.model is None) == (not args.oracle):
        raise ValueError("give exactly one of --model or --oracle")
    if args.n_countries != 2:
        raise ValueError("the phase diagram is two-dimensional; use --n-countries 2")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = ky.sample_kyoto(args.n_countries, args.fixed_seed, args.damage_form)
    instances = ky.statics_instances(base, ky.beta_grid(args.grid))
    model = None if args.oracle else gaes.GaesModel.load(args.model)
    rows = kyoto_phase_rows(instances, model, args.n_norm_samples, args.seed)
    write_csv(out / "kyoto_phase.csv", ["instance_id", "beta1", "beta2", "label", "oracle_label",
                                        "normalized_exploitability"], rows)
    agree = float(np.mean([r[3] == r[4] for r in rows]))
    mean_norm = float(np.mean([r[5] for r in rows]))
    write_csv(out / "kyoto_phase_summary.csv", ["agreement", "mean_normalized_exploitability"],
              [(agree, mean_norm)])
    m = _manifest(args, json_hash([_args_hash(args),
                                   "oracle" if model is None else json_hash(model.to_dict())]))
    m.notes = {"base_instance": base.to_dict()}
    _finish(args, m, out, ["kyoto_phase.csv", "kyoto_phase_summary.csv"])
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, seed_default=0) -> None:
    p.add_argument("--config", help="JSON file of defaults for this command")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 for wall-clock fields so outputs are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pseudeq", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/valid/test JSONL datasets")
    _common(p)
    p.add_argument("--family", default="linear", choices=list(ex.FAMILIES) + ["kyoto"])
    p.add_argument("--counts", type=int, nargs=3, default=[500, 50, 50])
    p.add_argument("--n-buyers", type=int, default=3)
    p.add_argument("--m-goods", type=int, default=5)
    p.add_argument("--rho-range", default=None, help="gs | gc | mixed (CES only)")
    p.add_argument("--kyoto-mode", default="statics", choices=["statics", "random"])
    p.add_argument("--n-countries", type=int, default=2)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--damage-form", default="plain", choices=["plain", "gamma"])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a generator (and discriminator)")
    _common(p, seed_default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--resume", help="state.json written by an earlier run")
    p.add_argument("--checkpoint-every", type=int, default=0)
    for k, f in gaes.TrainConfig.__dataclass_fields__.items():
        if k == "seed":
            continue
        flag = "--" + k.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, action="store_const", const=True, default=None)
        elif k == "hidden":
            p.add_argument(flag, type=int, nargs="+", default=None)
        else:
            typ = {"int": int, "float": float, "Optional[float]": float}.get(str(f.type), str)
            p.add_argument(flag, type=typ, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset split")
    _common(p)
    p.add_argument("--model", required=True, help="model JSON path, or 'uniform'")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--gap-split", default=None, choices=SPLITS)
    p.add_argument("--uniform-draws", type=int, default=1,
                   help="outcomes averaged per economy by the uniform model")
    p.add_argument("--n-norm-samples", type=int, default=1000)
    p.add_argument("--norm-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="tuned tatonnement or exploitability descent")
    _common(p)
    p.add_argument("--method", default="tatonnement", choices=["tatonnement", "exploit_descent"])
    p.add_argument("--data", required=True)
    p.add_argument("--eta-grid", type=float, nargs="+", default=list(bl.ETA_GRID))
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--schedule-dir", default="decreasing", choices=["decreasing", "increasing"])
    p.add_argument("--n-norm-samples", type=int, default=1000)
    p.add_argument("--norm-seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("scarf", help="tatonnement price path on the Scarf economy")
    _common(p)
    p.add_argument("--noise-scale", type=float, default=1e-2)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--eta0", type=float, default=1.0)
    p.add_argument("--schedule-dir", default="decreasing", choices=["decreasing", "increasing"])
    p.set_defaults(func=cmd_scarf)

    p = sub.add_parser("kyoto-phase", help="equilibrium types over a revenue grid")
    _common(p)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--fixed-seed", type=int, default=0)
    p.add_argument("--n-countries", type=int, default=2)
    p.add_argument("--damage-form", default="plain", choices=["plain", "gamma"])
    p.add_argument("--model", default=None)
    p.add_argument("--oracle", action="store_true", help="solve each instance exactly instead")
    p.add_argument("--n-norm-samples", type=int, default=1000)
    p.set_defaults(func=cmd_kyoto_phase)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    args.file_config = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValueError("--config must hold a JSON object")
        if args.command == "train":
            args.file_config = cfg
        else:
            sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
            sp = sub.choices[args.command]
            known = {a.dest for a in sp._actions}
            bad = sorted(k for k in cfg if k.replace("-", "_") not in known)
            if bad:
                raise ValueError(f"unknown config keys for {args.command}: {bad}")
            sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
            args = ap.parse_args(argv)
            args.file_config = cfg
    return args


def main(argv=None) -> int:
    if not _threads.isdigit():
        print(f"error: PSEUDEQ_THREADS must be a nonnegative integer, got {_threads!r}",
              file=sys.stderr)
        return EXIT_VALIDATION
    try:
        args = parse_args(argv)
    except SystemExit as err:
        return EXIT_VALIDATION if err.code else EXIT_OK
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalAbort, FloatingPointError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
