"""``cohort-scr`` command line: fit, price, scr and oracle subcommands.

Exit codes: 0 success, 1 oracle or verification mismatch, 2 bad
configuration or data, 3 too many failed simulation scenarios.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import oracles
from .cohort import Cohort, raw_moment
from .config import RunConfig, load_config
from .errors import InputError, SimulationFailure
from .experiment import RISKS, Experiment
from .market import MarketModel, build_hedging_portfolio, calibrate_gbm, call_price, put_price
from .mortality import DemographicBasis
from .riskengine import brute_force_idios, compact_cdr, five_term_cdr, idios_variance_closed_form
from .streams import stream
from .valuation import ValuationBasis, beta_rate, death_benefit, protected_vapo_value, solve_premium

log = logging.getLogger("cohort_scr")

SUMMARY_COLUMNS = ("risk", "t", "mean", "sd", "skewness", "SCR", "factor", "closed_form_sd", "qis2_scr")


def _clean(value):
    """JSON-safe copy: NaN and infinities become null, numpy scalars become floats."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, payload: dict) -> None:
    # json uses repr for floats: shortest digits that round-trip exactly
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")


def fmt(value) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar(out: Path, command: str) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.info("%s started", command)
    return handler


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    exp = Experiment(cfg)
    params = exp.params
    payload = {"config": cfg.to_dict(), "params": params.to_dict(),
               "diagnostics": {"explained_variance": params.explained_variance,
                               "sum_b": float(params.b.sum()), "sum_k": float(params.k.sum()),
                               "floored_cells": exp.data.metadata.get("floored_cells", 0)}}
    write_json(out / "lee_carter.json", payload)
    print(f"explained variance of first singular value: {params.explained_variance:.12%}")
    print(f"drift {params.drift:.6f}  sigma_k {params.sigma_k:.6f}  years {params.years[0]}-{params.years[-1]}")
    return payload


def verify_premium(exp: Experiment) -> dict:
    rate = exp.premium.rate
    c = exp.config.cohort
    ref = oracles.cashflow_premium_rate(exp.cohort.sums, exp.demographic.q1, exp.market, c.term,
                                        c.premium_mode, c.product)
    rel = abs(rate - ref) / abs(ref)
    vapo = protected_vapo_value(exp.cohort, exp.issue_basis, exp.premium)
    scale = float(exp.cohort.sums.sum()) * rate
    return {"oracle_rate": ref, "relative_error": rel, "protected_vapo": vapo,
            "protected_vapo_relative": abs(vapo) / scale, "match": bool(rel <= 1e-10)}


def cmd_price(cfg: RunConfig, out: Path, verify: bool = False) -> dict:
    exp = Experiment(cfg)
    premium = exp.premium
    total = float(exp.cohort.sums.sum())
    hedge = build_hedging_portfolio(total, exp.demographic, cfg.cohort.term, cfg.market.i_gar)
    income = total * premium.rate
    if premium.mode == "annual":
        q1 = exp.demographic.q1
        alive = np.concatenate([[1.0], np.cumprod(1.0 - q1)[:-1]])
        income = float(total * premium.rate * alive.sum())
    payload = {"config": cfg.to_dict(),
               "premium": {"rate": premium.rate, "mode": premium.mode, "total_income": income},
               "hedging_portfolio": {"equity_units": hedge.equity_units,
                                     "put_units": hedge.put_units.tolist(),
                                     "put_strikes": hedge.strikes.tolist(),
                                     "put_fractions": hedge.fractions.tolist(),
                                     "value": hedge.value(exp.market)}}
    if verify:
        payload["verify"] = verify_premium(exp)
    write_json(out / "price.json", payload)
    print(f"premium rate per unit sum: {premium.rate:.12g} ({premium.mode})")
    if verify:
        v = payload["verify"]
        print(f"oracle premium {v['oracle_rate']:.12g}  relative error {v['relative_error']:.3e}  "
              f"{'match' if v['match'] else 'MISMATCH'}")
    return payload


def _histogram(path: Path, samples: np.ndarray, bins: int) -> None:
    lo, hi = float(samples.min()), float(samples.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([fmt(a), fmt(b), int(c)])


def _write_samples(out: Path, stem: str, samples: np.ndarray, kind: str) -> None:
    if kind == "binary":
        samples.astype("<f8").tofile(out / f"{stem}.f64")
    elif kind == "csv":
        with (out / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
            fh.write("cdr\n")
            fh.writelines(fmt(v) + "\n" for v in samples)


def cmd_scr(cfg: RunConfig, out: Path, risk: str = "idios") -> list[dict]:
    exp = Experiment(cfg)
    risks = RISKS if risk == "both" else (risk,)
    rows = []
    for r in risks:
        for t in cfg.simulation.t:
            started = time.perf_counter()
            dist, report = exp.run(t, r)
            log.info("%s t=%d H=%d done in %.2fs", r, t, dist.size, time.perf_counter() - started)
            rows.append(report.to_dict())
            stem = f"{r}_t{t}"
            if cfg.output.samples != "none":
                _write_samples(out, f"samples_{stem}", dist.samples, cfg.output.samples)
            if cfg.output.histogram_bins:
                _histogram(out / f"histogram_{stem}.csv", dist.samples, cfg.output.histogram_bins)
            print(f"{r:6s} t={t}  mean {report.mean:14.2f}  sd {report.sigma:14.2f}  "
                  f"SCR {report.scr:14.2f}  factor {report.factor:.4f}")
    write_json(out / "scr_report.json", {"config": cfg.to_dict(), "premium": exp.premium.rate,
                                         "reports": rows})
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([row["risk"], row["t"], fmt(row["mean"]), fmt(row["sd"]), fmt(row["skewness"]),
                        fmt(row["scr"]), fmt(row["factor"]), fmt(row["closed_form_sd"]),
                        fmt(row["qis2_scr"])])
    return rows


def run_oracle_suite(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Brute-force checks that need no data: enumeration, compact form, pricing, premium."""
    results = []
    rng = stream(seed, "oracle")

    sums = rng.lognormal(0.0, 1.0, 10)
    exact = brute_force_idios(sums, 0.1, 0.7)
    closed = idios_variance_closed_form(10, 0.1, raw_moment(sums, 2), 0.49)
    rel = abs(exact.variance - closed) / closed
    results.append(("enumeration variance = closed form", rel <= 1e-10, f"rel {rel:.2e}"))
    results.append(("enumeration mean = 0", abs(exact.mean) <= 1e-12 * sums.sum(), f"mean {exact.mean:.2e}"))

    market = MarketModel(calibrate_gbm(1.15, 1.0, 10.0))
    q2 = np.linspace(0.02, 0.08, 6)
    basis = ValuationBasis(DemographicBasis.from_q(q2, 1.2), market)
    worst = 0.0
    for case in range(200):
        l0 = int(rng.integers(1, 13))
        s = rng.lognormal(0.0, 1.0, l0)
        t = int(rng.integers(0, q2.size))
        premium = solve_premium(Cohort(0, q2.size, s, "annual" if case % 2 else "single"), basis)
        u1 = float(market.gbm.u0 * np.exp(rng.normal(0.3, 0.3)))
        dead = rng.random(l0) < 0.3
        b_t = basis.at(t, 1.0)
        terms = five_term_cdr(list(s), list(dead.astype(int)), q2, t, q2.size, b_t, u1, premium)
        beta = float(beta_rate(q2, market, t + 1, u1, premium, q2.size))
        eta = float(death_benefit(market, t + 1, u1)) - beta
        comp = float(compact_cdr(s.sum(), q2[t], float(s[dead].sum()), eta))
        scale = max(abs(terms[k]) for k in ("term1", "term2", "term3", "term4", "term5"))
        worst = max(worst, abs(terms["cdr"] - comp) / scale)
    results.append(("five-term CDR = compact CDR", worst <= 1e-9, f"worst rel {worst:.2e}"))

    r = market.r_cont
    worst = 0.0
    parity = 0.0
    for k in (0.7, 1.0, 1.3):
        for vol in (0.1, 0.3):
            for tau in (1.0, 5.0):
                p = put_price(1.0, k, r, vol, tau)
                worst = max(worst, abs(p - oracles.quad_put_price(1.0, k, r, vol, tau)))
                parity = max(parity, abs(call_price(1.0, k, r, vol, tau) - p - 1.0 + k * math.exp(-r * tau)))
    results.append(("Black-Scholes put = quadrature", worst <= 1e-8, f"worst abs {worst:.2e}"))
    results.append(("put-call parity", parity <= 1e-12, f"worst abs {parity:.2e}"))

    sums = rng.lognormal(0.0, 1.0, 50)
    cohort = Cohort(50, q2.size, sums, "single")
    prem = solve_premium(cohort, basis)
    ref = oracles.cashflow_premium_rate(sums, basis.demographic.q1, market, q2.size)
    rel = abs(prem.rate - ref) / ref
    results.append(("premium = cashflow oracle", rel <= 1e-10, f"rel {rel:.2e}"))
    return results


def cmd_oracle(out: Path | None, seed: int = 0) -> bool:
    results = run_oracle_suite(seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if out is not None:
        write_json(out / "oracle.json", {"seed": seed, "results": [
            {"check": n, "passed": ok, "detail": d} for n, ok, d in results]})
    return all(ok for _, ok, _ in results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohort-scr",
                                     description="Cohort demographic SCR for equity-linked endowments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        if seed:
            p.add_argument("--seed", type=int, help="override simulation.seed")

    common(sub.add_parser("fit", help="fit Lee-Carter and write the parameters"), seed=False)
    price = sub.add_parser("price", help="premium and hedging portfolio at issue")
    common(price, seed=False)
    price.add_argument("--verify", action="store_true", help="cross-check the premium with the cashflow oracle")
    scr = sub.add_parser("scr", help="simulate CDR distributions and SCR")
    common(scr)
    scr.add_argument("--risk", choices=("idios", "trend", "both"), default="idios")
    scr.add_argument("--eta", choices=("deterministic", "stochastic"), help="override simulation.eta_mode")
    oracle = sub.add_parser("oracle", help="run the brute-force verification suite")
    oracle.add_argument("--out", help="also write oracle.json here")
    oracle.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        if args.command == "oracle":
            out = None
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
            return 0 if cmd_oracle(out, args.seed) else 1
        cfg = load_config(args.config)
        overrides = {}
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if getattr(args, "eta", None) is not None:
            overrides["eta_mode"] = args.eta
        if overrides:
            cfg = cfg.with_overrides(simulation=overrides)
        out = _out_dir(args, cfg)
        handler = _sidecar(out, args.command)
        if args.command == "fit":
            cmd_fit(cfg, out)
        elif args.command == "price":
            payload = cmd_price(cfg, out, args.verify)
            if args.verify and not payload["verify"]["match"]:
                return 1
        else:
            cmd_scr(cfg, out, args.risk)
        log.info("%s finished", args.command)
        return 0
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationFailure as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return 3
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
