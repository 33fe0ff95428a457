"""Command-line driver: gen-data, train, attack, eval, ablate, report.

Every run writes a ``<out>.manifest.json`` next to its main output with the
full parameter set, seeds, and SHA-256 digests of the input files, so any
output can be reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import data, defense, harness, mlp
from .attacks import AttackConfig

DEFAULT_ATTACKS = "ce,cw,mifpe,dawa,aa-proxy,dawa-mt"
DEFAULT_C_GRID = [10 ** e for e in (-1.0, -0.5, 0.0, 0.3, 0.5, 1.0, 2.0)]


def _out_dir() -> str:
    return os.environ.get("SINKBREAK_OUT", ".")


def _resolve_out(path: str) -> str:
    if os.path.isabs(path) or os.path.dirname(path):
        return path
    return os.path.join(_out_dir(), path)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: str, command: str, params: dict, inputs: list[str]) -> None:
    params = {k: v for k, v in params.items() if not callable(v)}
    manifest = {
        "command": command,
        "params": params,
        "inputs": {p: _sha256(p) for p in inputs},
    }
    with open(out_path + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _attack_config(args, loss_kind: str, target=None) -> AttackConfig:
    return AttackConfig(
        epsilon=args.eps,
        iterations=args.iters,
        nu=args.nu,
        c=args.c,
        t_star=args.t_star,
        loss_kind=loss_kind,
        target=target,
        seed=args.seed,
        track_best=args.track_best,
        mu_init=args.mu_init,
        schedule=args.schedule,
    )


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=0.03, help="l-inf radius in the [0,1] domain")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--nu", type=float, default=0.75, help="momentum factor")
    p.add_argument("--c", type=float, default=2.0, help="alpha smoothing strength")
    p.add_argument("--t-star", type=float, default=1.0, dest="t_star")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=5, help="restarts for the proxy ensemble")
    p.add_argument("--mt-budget", type=int, default=1000, dest="mt_budget")
    p.add_argument("--mu-init", choices=["x0", "zero"], default="x0", dest="mu_init")
    p.add_argument("--schedule", choices=["alg1", "sec4"], default="alg1")
    p.add_argument("--track-best", action=argparse.BooleanOptionalAction, default=True,
                   dest="track_best")


def cmd_gen_data(args) -> int:
    gen = data.GENERATORS[args.kind]
    xs, ys = gen(args.classes, args.dim, args.n_per_class, args.seed, args.spread)
    out = _resolve_out(args.out)
    data.save_dataset(out, xs, ys, args.classes)
    _write_manifest(out, "gen-data", vars(args), [])
    print(f"wrote {len(ys)} examples to {out}")
    return 0


def cmd_train(args) -> int:
    xs, ys, k = data.load_dataset(args.dataset)
    config = defense.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        eps_train=args.eps_train,
        pgd_steps_train=args.pgd_steps,
        lambda_dummy=args.lambda_dummy,
        hidden=tuple(args.hidden),
        seed=args.seed,
    )
    model = defense.train(xs, ys, k, config, log=print if args.verbose else None)
    out = _resolve_out(args.out)
    mlp.save_model(model, out)
    acc = defense.clean_accuracy(model, xs, ys)
    cap = defense.dummy_capture_rate(
        model, xs, ys, config.eps_train, config.pgd_steps_train,
        np.random.default_rng(config.seed + 2),
    )
    _write_manifest(out, "train", {**vars(args), "hidden": list(args.hidden)}, [args.dataset])
    print(f"clean accuracy {acc:.4f}, dummy-capture rate {cap:.4f}; model at {out}")
    return 0


_LOSS_FLAG = {"ce": "ce", "cw": "cw", "mifpe": "mifpe", "dawa": "dawa", "dawa-mt": "dawa"}


def cmd_attack(args) -> int:
    xs, ys, k = data.load_dataset(args.dataset)
    model = mlp.load_model(args.model)
    if model.layer_dims[0] != xs.shape[1] or model.num_classes != k:
        raise ValueError(f"model expects d={model.layer_dims[0]}, K={model.num_classes}; "
                         f"dataset has d={xs.shape[1]}, K={k}")
    config = _attack_config(args, _LOSS_FLAG[args.loss], target=args.target)
    mt = args.mt_budget if args.loss == "dawa-mt" else None
    entry = harness.evaluate_attack(model, xs, ys, config, name=args.loss,
                                    multi_target_budget=mt, check_feasible=True)
    out = _resolve_out(args.out)
    with open(out, "w") as f:
        f.write("index,label,clean_correct,succeeded,iterations_used,final_margin\n")
        for i, o in enumerate(entry.outcomes):
            fm = "" if o.final_margin is None else repr(o.final_margin)
            f.write(f"{i},{int(ys[i])},{int(o.clean_correct)},{int(o.succeeded)},"
                    f"{o.iterations_used},{fm}\n")
    _write_manifest(out, "attack", vars(args), [args.dataset, args.model])
    print(f"{args.loss}: robust accuracy {entry.robust_accuracy:.4f}, "
          f"dummy-capture {entry.dummy_capture_rate:.4f}; per-example results at {out}")
    return 0


def run_eval(model, xs, ys, args, attack_names: list[str]) -> harness.EvalReport:
    entries = []
    for name in attack_names:
        if name == "aa-proxy":
            base = _attack_config(args, "ce")
            base = dataclasses.replace(base, iterations=args.proxy_iters)
            entries.append(harness.evaluate_restarts(model, xs, ys, base, "aa_proxy",
                                                     restarts=args.restarts))
        elif name == "dawa-mt":
            cfg = _attack_config(args, "dawa")
            entries.append(harness.evaluate_attack(model, xs, ys, cfg, "dawa_mt",
                                                   multi_target_budget=args.mt_budget))
        else:
            cfg = _attack_config(args, _LOSS_FLAG[name])
            entries.append(harness.evaluate_attack(model, xs, ys, cfg, name))
    return harness.build_report(model, xs, ys, entries, seed=args.seed)


def _write_report_csv(path: str, report: harness.EvalReport, defense_name: str) -> None:
    with open(path, "w") as f:
        f.write("# sinkbreak-eval v1\n")
        f.write(f"# defense={defense_name} seed={report.seed} n={report.n_examples}\n")
        f.write("name,robust_accuracy,success_rate,dummy_capture_rate,mean_iterations_to_success\n")
        f.write(f"clean,{repr(report.clean_accuracy)},,,\n")
        for name, e in report.attacks.items():
            f.write(f"{name},{repr(e.robust_accuracy)},{repr(e.success_rate)},"
                    f"{repr(e.dummy_capture_rate)},{repr(e.mean_iterations_to_success)}\n")


def read_report_csv(path: str) -> tuple[str, dict[str, float]]:
    """Returns (defense name, {'clean': acc, attack: robust accuracy, ...})."""
    name = "?"
    values: dict[str, float] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line.startswith("# defense="):
                name = line.split("defense=")[1].split()[0]
            elif line and not line.startswith("#") and not line.startswith("name,"):
                parts = line.split(",")
                values[parts[0]] = float(parts[1])
    if "clean" not in values:
        raise ValueError(f"{path}: not a sinkbreak eval report (no clean row)")
    return name, values


def cmd_eval(args) -> int:
    xs, ys, k = data.load_dataset(args.dataset)
    model = mlp.load_model(args.model)
    attack_names = [a for a in args.attacks.split(",") if a]
    for a in attack_names:
        if a not in (*_LOSS_FLAG, "aa-proxy"):
            raise ValueError(f"unknown attack {a!r} in --attacks")
    report = run_eval(model, xs, ys, args, attack_names)
    out = _resolve_out(args.out)
    _write_report_csv(out, report, defense_name=os.path.basename(args.model))
    if args.convergence:
        conv_path = out + ".convergence.csv"
        fixed = [n for n in report.attacks if n not in ("aa_proxy", "dawa_mt")]
        with open(conv_path, "w") as f:
            f.write("iteration," + ",".join(fixed) + "\n")
            traces = {n: harness.convergence_trace(report.attacks[n], args.iters) for n in fixed}
            for i in range(args.iters):
                f.write(f"{i}," + ",".join(repr(traces[n][i]) for n in fixed) + "\n")
        print(f"convergence traces at {conv_path}")
    _write_manifest(out, "eval", vars(args), [args.dataset, args.model])
    print(harness.format_table(report))
    print(f"report at {out}")
    return 0


def cmd_ablate(args) -> int:
    xs, ys, k = data.load_dataset(args.dataset)
    model = mlp.load_model(args.model)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else DEFAULT_C_GRID
    base = _attack_config(args, "dawa")
    curve = harness.ablation_sweep(model, xs, ys, grid, base)
    out = _resolve_out(args.out)
    with open(out, "w") as f:
        f.write("c,robust_accuracy\n")
        for c, acc in curve:
            f.write(f"{repr(c)},{repr(acc)}\n")
    _write_manifest(out, "ablate", vars(args), [args.dataset, args.model])
    for c, acc in curve:
        print(f"c={c:g}: robust accuracy {acc:.4f}")
    print(f"ablation curve at {out}")
    return 0


def cmd_report(args) -> int:
    rows = [read_report_csv(p) for p in args.reports]
    attack_cols: list[str] = []
    for _, values in rows:
        for key in values:
            if key != "clean" and key not in attack_cols:
                attack_cols.append(key)
    out = _resolve_out(args.out)
    with open(out, "w") as f:
        f.write(harness.REFERENCE_ROW + "\n")
        f.write("defense,clean," + ",".join(attack_cols) + ",delta\n")
        for name, values in rows:
            cells = [name, repr(values["clean"])]
            cells += [repr(values[a]) if a in values else "" for a in attack_cols]
            if "aa_proxy" in values and "dawa_mt" in values:
                cells.append(repr(values["aa_proxy"] - values["dawa_mt"]))
            else:
                cells.append("")
            f.write(",".join(cells) + "\n")
    _write_manifest(out, "report", vars(args), list(args.reports))
    for name, values in rows:
        shown = "  ".join(f"{k}={100 * v:.2f}" for k, v in values.items())
        print(f"{name}: {shown}")
    print(f"comparison table at {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sinkbreak",
        description="Train dummy-class defended classifiers and measure their true robustness.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--kind", choices=list(data.GENERATORS), default="blobs")
    g.add_argument("--classes", "-K", type=int, default=4)
    g.add_argument("--dim", "-d", type=int, default=16)
    g.add_argument("--n-per-class", type=int, default=200, dest="n_per_class")
    g.add_argument("--spread", type=float, default=0.03)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the dummy-class defended model")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="model file path")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--eps-train", type=float, default=0.02, dest="eps_train")
    t.add_argument("--pgd-steps", type=int, default=10, dest="pgd_steps")
    t.add_argument("--lambda", type=float, default=1.0, dest="lambda_dummy")
    t.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="run one attack, write per-example results")
    a.add_argument("--dataset", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--loss", choices=list(_LOSS_FLAG), default="dawa")
    a.add_argument("--target", type=int, default=None)
    _add_attack_flags(a)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", help="evaluate a set of attacks under identical settings")
    e.add_argument("--dataset", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--attacks", default=DEFAULT_ATTACKS,
                   help=f"comma list from {{ce,cw,mifpe,dawa,dawa-mt,aa-proxy}} (default {DEFAULT_ATTACKS})")
    e.add_argument("--proxy-iters", type=int, default=200, dest="proxy_iters",
                   help="iterations per restart of the proxy ensemble")
    e.add_argument("--convergence", action="store_true",
                   help="also write per-iteration success traces")
    _add_attack_flags(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("ablate", help="sweep the alpha smoothing strength c")
    b.add_argument("--dataset", required=True)
    b.add_argument("--model", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--grid", default=None, help="comma list of c values (default log grid 0.1..100)")
    _add_attack_flags(b)
    b.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="merge eval reports into one comparison table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
