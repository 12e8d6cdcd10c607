"""``do-bench``: generate data, run operators, reproduce the concentration data, verify.

Every verb reads a flat ``key = value`` config (``--config``); a few common
keys can also be given as flags.  Output is CSV with one header line, written
to ``out`` or stdout.  The exit code is 1 when any check fails.
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .bench.benchmark import make_env, run_benchmark, to_csv
from .bench.config import BenchConfig, ConfigError, eval_number, load_config
from .bench.datagen import gen_rows
from .bench.verify import OPERATORS, verify_binomial_tail, verify_do_structure
from .distinct import AesPrf, DistinctSketch, sketch_size_for
from .dp import PrivacyParams, laplace_sum_tail, node_scale, simulate_concentration, tree_height
from .relational import rows_to_csv

VERBS = ("gen", "filter", "group", "join", "distinct", "simulate-bm", "verify")


def _emit(text: str, cfg: BenchConfig) -> None:
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(cfg: BenchConfig) -> int:
    schema, rows = gen_rows(cfg.table, cfg.n_rows, cfg.seed, cfg.groups)
    rows_to_csv(schema, rows, cfg.out or sys.stdout, keep_fillers=cfg.keep_fillers)
    return 0


def cmd_operator(cfg: BenchConfig) -> int:
    res = run_benchmark(cfg)
    _emit(to_csv([res.row]), cfg)
    for c in res.checks:
        print(c, file=sys.stderr)
    return 0 if res.passed else 1


def _distinct_items(cfg: BenchConfig) -> list[bytes]:
    if cfg.input:
        with open(cfg.input, newline="") as fh:
            reader = csv.DictReader(fh)
            vals = [r[cfg.column] for r in reader if r.get("is_filler", "0") in ("0", "", "False")]
    else:
        _, rows = gen_rows("uservisits", cfg.n_rows, cfg.seed, cfg.groups)
        vals = [v.decode() for v in rows[cfg.column].tolist()]
    if cfg.prefix:
        vals = [v[:cfg.prefix] for v in vals]
    return [v.encode() for v in vals]


def cmd_distinct(cfg: BenchConfig) -> int:
    items = _distinct_items(cfg)
    t = sketch_size_for(cfg.epsilon, cfg.eta, cfg.delta)
    env = make_env(cfg)
    sketch = DistinctSketch(t, AesPrf(env.rng("prf").bytes(16)))
    width = max((len(x) for x in items), default=1)
    sketch.update_many(np.array(items, dtype=f"S{width}"))
    est = sketch.estimate(cfg.epsilon, cfg.eta, cfg.delta, rng=env.rng("noise"), strict=False,
                          noiseless=cfg.noiseless)
    _emit(to_csv([{"g_tilde": round(est.g_tilde, 6), "t": t, "v": est.v, "noise_scale": round(est.noise_scale, 6),
                   "underfilled": est.underfilled, "items": len(items)}]), cfg)
    return 0


def cmd_simulate_bm(cfg: BenchConfig) -> int:
    """Empirical prefix-noise quantiles per delta next to the analytic bound."""
    deltas = sorted(cfg.delta_list, reverse=True)
    fit = simulate_concentration(cfg.epsilon, cfg.n, deltas, cfg.trials, cfg.seed)
    L, b = tree_height(cfg.n), node_scale(cfg.epsilon, cfg.n)
    rows = []
    for d, q in zip(fit.deltas, fit.quantiles):
        bound = laplace_sum_tail(L, b, d / 2)  # two-sided
        rows.append({"delta": float(d), "empirical_quantile": round(float(q), 6),
                     "analytic_bound": round(float(bound), 6), "fit_slope": round(fit.slope, 6),
                     "fit_r2": round(fit.r_squared, 6)})
    _emit(to_csv(rows), cfg)
    return 0


def cmd_verify(cfg: BenchConfig) -> int:
    """Trace structure for every operator, a binomial tail check and the filter contract."""
    lines, ok = [], True
    params = PrivacyParams(cfg.epsilon, cfg.delta)
    for op in OPERATORS:
        rep = verify_do_structure(op, trials=cfg.trials, seed=cfg.seed, params=params)
        lines.append({"check": f"structure {op}", "passed": rep.passed, "detail": str(rep)})
        ok &= rep.passed
    tail = verify_binomial_tail(1000, 0.5, 0.01, 100_000, seed=cfg.seed)
    lines.append({"check": "binomial tail", "passed": tail.passed, "detail": str(tail)})
    ok &= tail.passed
    bench = run_benchmark(BenchConfig(operator="filter", rows=cfg.n_rows, seed=cfg.seed, crypto="plaintext",
                                      epsilon=cfg.epsilon, delta=cfg.delta, bound_mode=cfg.bound_mode))
    for c in bench.checks:
        lines.append({"check": c.name, "passed": c.passed, "detail": str(c)})
        ok &= c.passed
    _emit(to_csv(lines), cfg)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="do-bench", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=eval_number)
    p.add_argument("--n", type=int, help="horizon for simulate-bm")
    p.add_argument("--delta-list", help="comma-separated deltas for simulate-bm")
    p.add_argument("--trials", type=int)
    p.add_argument("--input", help="CSV input for distinct")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("out", "seed", "rows", "epsilon", "delta", "n", "trials", "input")}
    overrides["delta_list"] = args.delta_list
    for item in args.set:
        key, _, value = item.partition("=")
        overrides[key.strip().replace("-", "_")] = value
    try:
        cfg = load_config(args.config, overrides)
        verb = args.verb
        if verb == "gen":
            return cmd_gen(cfg)
        if verb in ("filter", "group", "join"):
            cfg.operator = verb
            return cmd_operator(cfg)
        if verb == "distinct":
            return cmd_distinct(cfg)
        if verb == "simulate-bm":
            return cmd_simulate_bm(cfg)
        return cmd_verify(cfg)
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"do-bench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
