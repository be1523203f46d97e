"""Command-line front end.

Subcommands: convert, dotprod-error, accuracy, rrns-perr, energy, infer.
Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import energy, harness, rns, rrns, tensorfile
from .analog import CoreConfig, NoiseModel, RnsMode
from .config import ENV_VAR, apply_override, load_config
from .errors import ConfigError, RnsError
from .model import load_model, load_toy

RRNS_COLUMNS = ("bit_width", "n", "k", "p", "R", "p_c", "p_d", "p_u",
                "p_err_analytic", "p_err_empirical", "trials", "seed")
PRED_COLUMNS = ("index", "prediction", "label", "confidence")


# -- helpers ------------------------------------------------------------------


def int_list(text: str) -> list[int]:
    """Parse ``"4..8"``, ``"4,5,6"`` or ``"4"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def write_result(result: harness.ExperimentResult, out: Path) -> list[Path]:
    """Main CSV, one CSV per extra table and a YAML config snapshot."""
    written = [out]
    write_csv(out, result.columns, result.rows)
    for name, (cols, rows) in result.tables.items():
        p = out.with_name(f"{out.stem}_{name}.csv")
        write_csv(p, cols, rows)
        written.append(p)
    snap = out.with_name(f"{out.stem}.config.yaml")
    snap.write_text(yaml.safe_dump(
        {"experiment": result.experiment, "seed": result.seed, "config": result.config}, sort_keys=True))
    written.append(snap)
    return written


def pmap(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _section(cfg: dict, name: str, args, mapping: dict) -> dict:
    """Config section with dedicated flags (attr -> key) applied."""
    sec = dict(cfg[name])
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            sec[key] = value
    return sec


def _load_model(path):
    if path is None:
        return load_toy()
    model, rest = load_model(path)
    if "test_x" not in rest:
        raise ConfigError(f"{path} has no 'test_x' tensor to evaluate")
    labels = rest.get("test_y")
    return model, rest["test_x"].astype(np.float64), None if labels is None else labels.astype(np.int64)


def _code(entry: dict, vote_rule: str) -> rrns.RrnsCode:
    unknown = set(entry) - {"non_redundant", "redundant"}
    if unknown:
        raise ConfigError(f"unknown code keys {sorted(unknown)}")
    return rrns.make_rrns_code(entry["non_redundant"], entry.get("redundant", []), vote_rule=vote_rule)


# -- subcommands --------------------------------------------------------------


def cmd_convert(args, cfg) -> int:
    if args.preset:
        ms = rns.preset(args.preset)
    elif args.moduli:
        ms = rns.make_moduli_set(int_list(args.moduli))
    else:
        raise ConfigError("convert needs --moduli or --preset")
    res = rns.forward_convert(args.value, ms)
    back = rns.crt_reconstruct(res, ms)
    if args.value < 0:
        back = rns.signed_decode(back, ms)
    print(f"residues: {','.join(str(int(r)) for r in res)}; reconstructed: {back}")
    return 0


def _dotprod_one(job):
    b, sec, seed = job
    return harness.dot_product_error_experiment([b], sec["h"], sec["trials"], seed, sec["bins"])


def cmd_dotprod_error(args, cfg) -> int:
    sec = _section(cfg, "dotprod_error", args, {"b": "b", "h": "h", "trials": "trials", "bins": "bins"})
    parts = pmap(_dotprod_one, [(b, sec, cfg["seed"]) for b in sec["b"]], args.jobs)
    result = harness.ExperimentResult(
        "dotprod-error", {**sec, "b": list(sec["b"])}, cfg["seed"], harness.DOTPROD_COLUMNS,
        tables={"histogram": (harness.HIST_COLUMNS, [])},
    )
    for part in parts:
        result.rows += part.rows
        result.tables["histogram"][1].extend(part.tables["histogram"][1])
    write_result(result, args.out)
    print(f"{'b':>2} {'lost':>4} {'mean|err| rns':>14} {'mean|err| fixed':>16} {'ratio':>8}")
    for r in result.rows:
        print(f"{r['b']:>2} {r['lost_bits']:>4} {r['mean_abs_err_rns']:>14.5g} "
              f"{r['mean_abs_err_fixed']:>16.5g} {r['ratio']:>8.2f}")
    return 0


def _accuracy_one(job):
    model_path, mode, b, h, seeds = job
    model, x, y = _load_model(model_path)
    return harness.accuracy_sweep(model, x, y, [b], [h], [mode], seeds).rows


def cmd_accuracy(args, cfg) -> int:
    sec = _section(cfg, "accuracy", args, {"b": "b", "h": "h", "modes": "modes", "seeds": "seeds", "model": "model"})
    model_path = None if sec["model"] is None else str(sec["model"])
    jobs = [(model_path, mode, b, h, list(sec["seeds"]))
            for mode in sec["modes"] for b in sec["b"] for h in sec["h"]]
    result = harness.ExperimentResult("accuracy", sec, cfg["seed"], harness.ACCURACY_COLUMNS)
    for rows in pmap(_accuracy_one, jobs, args.jobs):
        result.rows += rows
    write_result(result, args.out)
    float_acc = result.rows[0]["float_accuracy"] if result.rows else math.nan
    print(f"float accuracy (seed {sec['seeds'][0] if sec['seeds'] else '-'}): {float_acc:.4f}")
    for mode, b, h, *_ in [j[1:] for j in jobs]:
        accs = [r["accuracy"] for r in result.rows if (r["mode"], r["b"], r["h"]) == (mode, b, h)]
        print(f"{mode:>5} b={b} h={h:<4} mean accuracy {np.mean(accs):.4f}")
    return 0


def cmd_rrns_perr(args, cfg) -> int:
    sec = _section(cfg, "rrns_perr", args, {"p": "p", "R": "R", "trials": "trials",
                                            "vote_rule": "vote_rule", "with_accuracy": "accuracy"})
    if args.non_redundant is not None:
        sec["codes"] = [{"non_redundant": args.non_redundant, "redundant": args.redundant or []}]
    seed = cfg["seed"]
    result = harness.ExperimentResult("rrns-perr", sec, seed, RRNS_COLUMNS)
    for entry in sec["codes"]:
        code = _code(entry, sec["vote_rule"])
        for p in sec["p"]:
            noise = NoiseModel(float(p), seed)
            rates = rrns.estimate_rates(code, noise, sec["trials"], jobs=args.jobs)
            emp = rrns.retry_protocol_simulate(code, noise, list(sec["R"]), sec["trials"], jobs=args.jobs)
            for R in sec["R"]:
                result.rows.append({
                    "bit_width": code.moduli_set.bit_width, "n": code.n, "k": code.k, "p": float(p),
                    "R": R, "p_c": rates.p_c, "p_d": rates.p_d, "p_u": rates.p_u,
                    "p_err_analytic": rrns.p_err_retry(rates, R), "p_err_empirical": emp[R],
                    "trials": sec["trials"], "seed": seed,
                })
            print(f"{code!r} p={p}: p_c={rates.p_c:.5f} p_d={rates.p_d:.5f} p_u={rates.p_u:.5f} "
                  f"p_err(R->inf)={rrns.p_err_limit(rates):.3g}")
    if sec["accuracy"]:
        model, x, y = load_toy()
        for entry in sec["accuracy_codes"]:
            code = _code(entry, sec["vote_rule"])
            sweep = harness.noise_sweep(model, x, y, code, sec["accuracy_p"], sec["accuracy_R"],
                                        b=sec["accuracy_b"], h=sec["accuracy_h"], seed=seed,
                                        rate_trials=sec["rate_trials"])
            key = f"accuracy_nk{code.n - code.k}"
            result.tables[key] = (sweep.columns, sweep.rows)
            cols, cut = sweep.tables["cutoff"]
            result.tables.setdefault("cutoff", (cols, []))[1].extend(cut)
            for c in cut:
                print(f"{code!r} R={c['R']}: accuracy < 99% float at p={c['p_cutoff']}, "
                      f"p_err={c['p_err_cutoff']:.3g} (1/outputs = {c['p_err_all_correct']:.3g})")
    write_result(result, args.out)
    return 0


def cmd_energy(args, cfg) -> int:
    sec = _section(cfg, "energy", args, {"b": "b", "h": "h"})
    if args.preset:
        bits = [b for b, name in rns.PRESET_FOR_BITS.items() if name == args.preset]
        if not bits:
            raise ConfigError(f"unknown preset {args.preset!r}")
        sec["b"] = bits
    params = energy.ConverterParams(sec["C_u"], sec["V_dd"], sec["k1"], sec["k2"])
    rows = energy.energy_table(sec["b"], sec["h"], params)
    result = harness.ExperimentResult("energy", sec, cfg["seed"], energy.ENERGY_COLUMNS, rows)
    write_result(result, args.out)
    for r in rows:
        if r["mode"] == "rns":
            print(f"b={r['b']} h={sec['h']}: fixed-point/RNS ADC energy ratio = {r['ratio']:.4g}")
    return 0


def cmd_infer(args, cfg) -> int:
    sec = _section(cfg, "infer", args, {"model": "model", "input": "input", "mode": "mode",
                                        "b": "b", "h": "h", "moduli": "moduli", "p": "p"})
    model, x, y = _load_model(None if sec["model"] is None else str(sec["model"]))
    if sec["input"] is not None:
        rest = tensorfile.load(sec["input"])
        if "test_x" not in rest:
            raise ConfigError(f"{sec['input']} has no 'test_x' tensor")
        x = rest["test_x"].astype(np.float64)
        y = rest["test_y"].astype(np.int64) if "test_y" in rest else None
    b, h = int(sec["b"]), int(sec["h"])
    if sec["mode"] == "rns" and sec["moduli"] is not None:
        ms = rns.make_moduli_set(sec["moduli"])
        core = CoreConfig(h, b, b, ms.bit_width, ms.bit_width, RnsMode(ms))
    else:
        core = harness.make_core(sec["mode"], b, h)
    noise = NoiseModel(float(sec["p"]), cfg["seed"])
    out = harness.run_network(model, x, core, noise)
    pred = out.argmax(axis=1)
    rows = [{"index": i, "prediction": int(pred[i]), "label": "" if y is None else int(y[i]),
             "confidence": float(out[i, pred[i]])} for i in range(len(pred))]
    result = harness.ExperimentResult("infer", sec, cfg["seed"], PRED_COLUMNS, rows)
    write_result(result, args.out)
    if y is not None:
        print(f"{sec['mode']} b={b} h={h} p={sec['p']}: accuracy {np.mean(pred == y):.4f} on {len(y)} samples")
    else:
        print(f"wrote {len(pred)} predictions")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help=f"YAML config file (default: ${ENV_VAR} if set)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set energy.h=64 (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 20230101)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")

    p = argparse.ArgumentParser(prog="rns-analog", description="RNS analog GEMM simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, out_default):
        sp = sub.add_parser(name, help=help_, description=help_, parents=[common])
        sp.add_argument("--out", type=Path, default=Path(out_default), help=f"output CSV (default {out_default})")
        return sp

    sp = sub.add_parser("convert", help="show residues of a value and reconstruct it",
                        description="show residues of a value and reconstruct it", parents=[common])
    sp.add_argument("value", type=int, help="integer to convert")
    sp.add_argument("--moduli", help="comma-separated co-prime moduli, e.g. 3,5,7")
    sp.add_argument("--preset", choices=sorted(rns.PRESETS), help="named moduli set")
    sp.set_defaults(func=cmd_convert)

    sp = add("dotprod-error", "dot-product error of fixed-point vs RNS cores", "dotprod_error.csv")
    sp.add_argument("--b", type=int_list, help="bit widths, e.g. 4..8")
    sp.add_argument("--h", type=int, help="vector length")
    sp.add_argument("--trials", type=int, help="random vector pairs per bit width")
    sp.add_argument("--bins", type=int, help="histogram bins")
    sp.set_defaults(func=cmd_dotprod_error)

    sp = add("accuracy", "toy-model accuracy over precision and tile size", "accuracy.csv")
    sp.add_argument("--b", type=int_list, help="bit widths")
    sp.add_argument("--h", type=int_list, help="tile sizes, e.g. 16,64,128")
    sp.add_argument("--modes", type=str_list, help="cores: fixed,rns,float")
    sp.add_argument("--seeds", type=int_list, help="evaluation seeds (bootstrap resamples; 0 = full set)")
    sp.add_argument("--model", type=Path, help="model TensorFile (default: bundled toy MLP)")
    sp.set_defaults(func=cmd_accuracy)

    sp = add("rrns-perr", "RRNS case rates and retry error probability", "rrns_perr.csv")
    sp.add_argument("--p", type=float_list, help="residue error probabilities, e.g. 0.01,0.05")
    sp.add_argument("--R", type=int_list, help="attempt budgets, e.g. 1,2,3,5,10")
    sp.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    sp.add_argument("--non-redundant", type=int_list, help="non-redundant moduli")
    sp.add_argument("--redundant", type=int_list, help="redundant moduli")
    sp.add_argument("--vote-rule", choices=["bounded", "majority"], help="acceptance rule for the vote")
    sp.add_argument("--with-accuracy", action="store_const", const=True,
                    help="also sweep toy-model accuracy under noise")
    sp.set_defaults(func=cmd_rrns_perr)

    sp = add("energy", "data-converter energy per element", "energy.csv")
    sp.add_argument("--b", type=int_list, help="bit widths")
    sp.add_argument("--h", type=int, help="vector length")
    sp.add_argument("--preset", choices=sorted(rns.PRESETS), help="single moduli preset")
    sp.set_defaults(func=cmd_energy)

    sp = add("infer", "run a model on a simulated core", "predictions.csv")
    sp.add_argument("--model", type=Path, help="model TensorFile (default: bundled toy MLP)")
    sp.add_argument("--input", type=Path, help="TensorFile with test_x (and optional test_y)")
    sp.add_argument("--mode", choices=["rns", "fixed", "float"], help="core to run the GEMMs on")
    sp.add_argument("--b", type=int, help="input and weight bit width")
    sp.add_argument("--h", type=int, help="tile size")
    sp.add_argument("--moduli", type=int_list, help="explicit RNS moduli")
    sp.add_argument("--p", type=float, help="per-residue error probability")
    sp.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        for ov in args.overrides:
            cfg = apply_override(cfg, ov)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(args, cfg)
    except (ConfigError, RnsError, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
