"""Command-line entry point: ``isdpd <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import IsdpdError
from .estimator import MEAN_MODES, run_is_dpd
from .harness import (
    SWEEP_PARAMETERS,
    compare_oracle,
    load_scenario,
    make_observations,
    preset_names,
    run_experiment,
    with_overrides,
)
from .likelihood import ccdf_delta, write_ccdf_csv
from .oracle import exhaustive_ml, write_field_csv
from .synth import ObservationSet

log = logging.getLogger("isdpd")


def _float_list(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part:
            out.append(math.inf if part.lower() in ("inf", "noiseless") else float(part))
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return out


def _value_list(text: str) -> list:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    try:
        return [float(v) for v in vals]
    except ValueError:
        return vals


def _config(args):
    cfg = load_scenario(args.config)
    return with_overrides(
        cfg,
        seed=args.seed,
        trials=getattr(args, "trials", None),
        snr_db=args.snr,
        mean_mode=getattr(args, "mean", None),
    )


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


def _observations(args, cfg):
    if getattr(args, "obs", None):
        return ObservationSet.load(args.obs), None
    return make_observations(cfg, cfg.snr_db[0], args.trial)


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out(args)
    obs, _ = make_observations(cfg, cfg.snr_db[0], args.trial)
    obs.save(out / "observations.json")
    _dump(out / "truth.json", {
        "scenario": cfg.name, "seed": cfg.seed, "trial": args.trial, "snr_db": cfg.snr_db[0],
        "sigma2": obs.sigma2, "emitters": cfg.emitters.tolist(),
    })
    print(f"wrote {out / 'observations.json'}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    obs, st = _observations(args, cfg)
    seed = st["estimator"] if st is not None else np.random.SeedSequence(cfg.seed)
    est = run_is_dpd(obs, cfg.box, cfg.knobs, seed)
    doc = est.to_dict()
    doc["truth"] = cfg.emitters.tolist() if not args.obs else None
    _dump(out / "estimate.json", doc)
    with open(out / "estimate.csv", "w") as fh:
        fh.write("emitter,x,y\n")
        for q, p in enumerate(est.positions):
            fh.write(f"{q},{float(p[0])!r},{float(p[1])!r}\n")
    for q, p in enumerate(est.positions):
        print(f"emitter {q}: x={p[0]:.1f} m y={p[1]:.1f} m")
    return 0


def cmd_oracle(args) -> int:
    cfg = _config(args)
    out = _out(args)
    obs, _ = _observations(args, cfg)
    res = exhaustive_ml(obs, cfg.box, budget=args.budget)
    _dump(out / "oracle.json", res.to_dict())
    if res.field is not None and res.field.ndim == 1:
        write_field_csv(out / "clf_field.csv", res, cfg.box)
    for q, p in enumerate(res.argmax):
        print(f"emitter {q}: x={p[0]:.1f} m y={p[1]:.1f} m")
    print(f"{res.evaluations} evaluations in {res.elapsed:.2f} s")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if args.param:
        plan = [(args.param, args.values)]
    elif cfg.sweeps:
        plan = list(cfg.sweeps)
    else:
        plan = [("snr", None)]
    for param, values in plan:
        res = run_experiment(cfg, param, values, workers=args.workers)
        paths = res.write(out, stem=f"sweep_{param}")
        for row in res.rows:
            print(f"{param}={row['value']} snr={row['snr_db']} emitter {row['emitter']}: "
                  f"rmse {row['rmse_m']:.1f} m over {row['trials']} trials")
        if res.excluded:
            print(f"{res.excluded} trials excluded, see {paths['json']}", file=sys.stderr)
    return 0


def cmd_ccdf_delta(args) -> int:
    cfg = load_scenario(args.config)
    out = _out(args)
    delta = cfg.delta or {}
    samples = args.samples or int(delta.get("samples", 10000))
    seed = cfg.seed if args.seed is None else args.seed
    t, c = ccdf_delta(samples, np.random.SeedSequence(seed), cfg.delta_setup())
    write_ccdf_csv(out / "ccdf_delta.csv", t, c)
    threshold = float(delta.get("threshold", 0.15))
    p = float(c[np.searchsorted(t, threshold)]) if np.any(np.isclose(t, threshold)) else None
    _dump(out / "ccdf_delta.json", {"samples": samples, "seed": seed, "threshold": threshold, "ccdf_at_threshold": p})
    print(f"P(delta > {threshold}) = {p}")
    return 0


def cmd_compare_oracle(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rep = compare_oracle(cfg, budget=args.budget)
    rep.write(out)
    print(f"agreement {rep.agreement:.3f} over {len(rep.trials)} trials, speedup {rep.speedup:.1f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isdpd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=True, mean=True):
        p.add_argument("--config", default="two-emitter",
                       help=f"scenario JSON path or preset name ({', '.join(preset_names())})")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--snr", type=_float_list, default=None, help="comma-separated SNR list in dB")
        if trials:
            p.add_argument("--trials", type=int, default=None)
        if mean:
            p.add_argument("--mean", choices=MEAN_MODES, default=None)
        return p

    p = common(sub.add_parser("synth", help="write one trial's observations"), trials=False, mean=False)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("estimate", help="run the importance-sampling estimator"), trials=False)
    p.add_argument("--obs", help="observations JSON written by 'synth' (default: synthesize fresh)")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("oracle", help="exhaustive grid search"), trials=False, mean=False)
    p.add_argument("--obs")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--budget", type=int, default=10**8)
    p.set_defaults(func=cmd_oracle)

    p = common(sub.add_parser("sweep", help="Monte-Carlo RMSE sweeps"))
    p.add_argument("--param", choices=SWEEP_PARAMETERS, default=None)
    p.add_argument("--values", type=_value_list, default=None, help="comma-separated sweep values")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("ccdf-delta", help="CCDF of the diagonal-dominance ratio"), trials=False, mean=False)
    p.set_defaults(config="delta-ccdf")
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_ccdf_delta)

    p = common(sub.add_parser("compare-oracle", help="agreement and speedup against the exhaustive search"))
    p.set_defaults(config="desk-oracle")
    p.add_argument("--budget", type=int, default=10**8)
    p.set_defaults(func=cmd_compare_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IsdpdError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
