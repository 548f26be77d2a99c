"""Command-line experiment driver.

    gwcoal simulate --config cfg.toml --out results/
    gwcoal tables --config cfg.json --grid 0.1,0.5,0.9
    gwcoal verify --suite quick
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import closed_form as cf
from . import limit_constructions as lc
from . import spine
from .ensemble import default_threads, run_conditioned
from .genfun import BDParams
from .gw_sim import AttemptsExhausted, PopulationCapError, encode_chain
from .offspring import OffspringLaw, birth_death, near_critical_ternary
from .rng import LIMIT, SPINE, replicate_rng
from .stats import reports_to_json, suite_passes

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("gwcoal")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_EXHAUSTED = 0, 1, 2, 3
REGIMES = ("bd_noncrit", "bd_crit", "near_crit")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    regime: str = "bd_noncrit"
    law: dict = field(default_factory=dict)
    T: float = 3.0
    k: int = 2
    replicates: int = 1000
    seed: int | None = None
    grid: list[list[float]] | None = None
    out: str = "."
    suite: str = "quick"
    max_attempts: int = 10_000_000
    cap: int = 10_000_000

    def validate(self, need_seed: bool = True, need_law: bool = True) -> "ExperimentConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if need_seed and self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        if self.seed is not None and not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not (isinstance(self.k, int) and self.k >= 2):
            raise ConfigError("k must be an integer >= 2")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("T must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        try:
            if need_law or self.regime != "near_crit":
                self.offspring()
            elif "mu" not in self.law:
                raise KeyError("mu")
        except (KeyError, TypeError) as e:
            raise ConfigError(f"law parameters incomplete for {self.regime}: {e}") from None
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.grid is not None:
            for pt in self.grid:
                if len(pt) != self.k - 1:
                    raise ConfigError(f"grid point {pt} needs {self.k - 1} coordinates")
        return self

    def offspring(self) -> OffspringLaw:
        p = self.law
        if self.regime == "bd_noncrit":
            law = birth_death(float(p["alpha"]), float(p["beta"]))
            if p["alpha"] == p["beta"]:
                raise ValueError("alpha == beta is the bd_crit regime")
            return law
        if self.regime == "bd_crit":
            b = float(p.get("beta", p.get("alpha", 1.0)))
            if float(p.get("alpha", b)) != b:
                raise ValueError("bd_crit needs alpha == beta")
            return birth_death(b, b)
        return near_critical_ternary(float(p.get("r", 1.0)), float(p["mu"]), float(p.get("sigma2", 1.0)), self.T)

    def coalescent_law(self) -> cf.CoalescentLaw:
        p = self.law
        if self.regime == "bd_noncrit":
            return cf.CoalescentLaw("bd_noncrit", self.k, alpha=float(p["alpha"]), beta=float(p["beta"]), T=self.T)
        if self.regime == "bd_crit":
            b = float(p.get("beta", p.get("alpha", 1.0)))
            return cf.CoalescentLaw("bd_crit", self.k, alpha=b, beta=b, T=self.T)
        return cf.CoalescentLaw("near_crit", self.k, r=float(p.get("r", 1.0)), mu=float(p["mu"]))

    def scaled(self) -> bool:
        """Split times are reported divided by T in the critical and near-critical regimes."""
        return self.regime != "bd_noncrit"

    def default_grid(self) -> list[list[float]]:
        if self.k == 2:
            pts = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
            return [[x if self.scaled() else x * self.T] for x in pts]
        from .checks import UNIT_GRID_K3
        base = UNIT_GRID_K3 if self.k == 3 else [list(np.linspace(0.1, 0.9, self.k - 1) * (1 - 0.05 * j))
                                                 for j in range(5)]
        return [[x if self.scaled() else x * self.T for x in pt] for pt in base]


def parse_grid(text: str, k: int | None = None) -> list[list[float]]:
    """'0.1,0.5,0.9' (one coordinate per point when k=2) or '0.1,0.3;0.2,0.6' (';' between points)."""
    try:
        if ";" in text:
            return [[float(x) for x in pt.split(",")] for pt in text.split(";") if pt.strip()]
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}") from None
    if k is None or k == 2:
        return [[v] for v in vals]
    return [vals]


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        if p.suffix.lower() == ".toml":
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {p.name}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a table/object")
    return data


def build_config(args: argparse.Namespace, need_seed: bool = True, need_law: bool = True) -> ExperimentConfig:
    raw = load_config(args.config)
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(raw.get("grid"), str):
        raw["grid"] = parse_grid(raw["grid"], raw.get("k"))
    try:
        cfg = ExperimentConfig(**raw)
        for key in ("T", "k", "replicates", "seed", "out"):
            v = getattr(args, key, None)
            if v is not None:
                setattr(cfg, key, v)
        if getattr(args, "grid", None):
            cfg.grid = parse_grid(args.grid, cfg.k)
        cfg.T = float(cfg.T)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return cfg.validate(need_seed, need_law)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: ExperimentConfig, threads: int) -> int:
    law = cfg.offspring()
    ens = run_conditioned(law, cfg.T, (cfg.k,), cfg.replicates, cfg.seed, threads=threads,
                          max_attempts=cfg.max_attempts, cap=cfg.cap)
    path = Path(cfg.out) / "simulate.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["replicate"] + [f"s_{i}" for i in range(1, cfg.k)] + ["chain", "N_T"])
        S = ens.splits[cfg.k] / cfg.T if cfg.scaled() else ens.splits[cfg.k]
        for i in range(cfg.replicates):
            w.writerow([i] + [_fmt(x) for x in S[i]] + [encode_chain(ens.chains[cfg.k][i]), int(ens.N_T[i])])
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_spine(cfg: ExperimentConfig, threads: int) -> int:
    law = cfg.offspring()
    use_bd = cfg.regime != "near_crit"
    bd = BDParams(law.params["alpha"], law.params["beta"]) if use_bd else None
    path = Path(cfg.out) / "spine.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["replicate"] + [f"psi_{i}" for i in range(1, cfg.k)] + ["chain", "ordinary", "residue", "N_T"])
        for i in range(cfg.replicates):
            rng = replicate_rng(cfg.seed, i, SPINE)
            skel = (spine.sample_skeleton_bd(cfg.k, cfg.T, bd, rng) if use_bd
                    else spine.sample_skeleton_general(cfg.k, cfg.T, law, rng))
            o, r = spine.immigrate_totals(skel, law, rng, cap=cfg.cap)
            psi = skel.psi / cfg.T if cfg.scaled() else skel.psi
            w.writerow([i] + [_fmt(x) for x in psi] + [encode_chain(skel.chain), o, r, cfg.k + o + r])
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_limit(cfg: ExperimentConfig, threads: int) -> int:
    if cfg.regime != "near_crit":
        raise ConfigError("the limit construction needs regime = near_crit")
    r, mu = float(cfg.law.get("r", 1.0)), float(cfg.law["mu"])
    out = Path(cfg.out)
    fh, w = _writer(out / "limit.csv")
    trees = []
    with fh:
        w.writerow(["replicate"] + [f"s_{i}" for i in range(1, cfg.k)] + ["chain"])
        for i in range(cfg.replicates):
            rng = replicate_rng(cfg.seed, i, LIMIT)
            tree = lc.build_limit_tree(lc.sample_limit_times(cfg.k, mu, r, rng), rng)
            w.writerow([i] + [_fmt(x) for x in rng.permutation(tree.splits)] + [encode_chain(tree.partition_chain)])
            trees.append(tree.to_json())
    (out / "limit_trees.json").write_text(json.dumps(trees) + "\n")
    return EXIT_OK


TABLE_DOC = {
    "bd_noncrit": [
        "tail: P(unordered split times S_i >= s_i for all i | N_T >= k); rates alpha (death), beta (birth);",
        "      unscaled times in (0, T]; evaluated as a partial-fraction sum with E0 = e^{(beta-alpha) T}",
        "density: joint density of the unordered split times, (-1)^{k-1} d^{k-1} tail / ds_1 ... ds_{k-1}",
    ],
    "bd_crit": [
        "tail: P(S_i >= s_i T for all i | N_T >= k), alpha = beta, b = 1/(beta T):",
        "      k (1+b)^k [ prod_i (1 - 1/s_i)/(1+b)",
        "                  + sum_j (1-s_j)/s_j^2 prod_{i!=j} (1-s_i)/(s_j-s_i) log((1+b)/(1-s_j+b)) ]",
        "density: joint density of the scaled split times S_i / T",
    ],
    "near_crit": [
        "tail: T -> infinity limit of P(S_i >= s_i T for all i | N_T >= k), mean 1+mu/T, rate r; free of sigma2",
        "      k=2, mu=0: 2(1-s)/s^2 (-log(1-s) - s)",
        "      k=2, mu!=0: with e1 = e^{r mu (1-s)}, e0 = e^{r mu}:",
        "      2(e1-1)/(e1-e0) + 2(e0-1)(e1-1)/(e1-e0)^2 log((e0-1)/(e1-1))",
        "density: joint density of the scaled split times, evaluated as a single integral over theta > 0",
    ],
}


def cmd_tables(cfg: ExperimentConfig, threads: int) -> int:
    law = cfg.coalescent_law()
    grid = cfg.grid or cfg.default_grid()
    path = Path(cfg.out) / "tables.csv"
    fh, w = _writer(path)
    with fh:
        fh.write(f"# regime={cfg.regime} k={cfg.k} T={cfg.T!r} law={json.dumps(cfg.law, sort_keys=True)}\n")
        for line in TABLE_DOC[cfg.regime]:
            fh.write(f"# {line}\n")
        fh.write("# error: non-empty when a grid point has tied coordinates; suggested_eps gives a perturbation\n")
        w.writerow([f"s_{i}" for i in range(1, cfg.k)] + ["tail", "density", "error"])
        for pt in grid:
            try:
                row = [_fmt(law.tail(pt)), _fmt(law.density(pt)), ""]
            except cf.TieError as e:
                row = ["", "", f"tie suggested_eps={float(e.suggested_eps)!r}"]
            except cf.QuadratureError as e:
                row = ["", "", f"quadrature {e}"]
            w.writerow([_fmt(float(x)) for x in pt] + row)
    log.info("wrote %s", path)
    return EXIT_OK


def run_suite(names: list[str], seed: int, scale: float | None, fault: str | None) -> tuple[bool, list]:
    from .checks import CHECKS
    reports = []
    for name in names:
        chk = CHECKS[name]
        sc = scale if scale is not None else (chk.quick_scale or 1.0)
        t0 = time.time()
        kw = {"fault": fault} if name == "spine" else {}
        reps = chk.fn(seed, sc, **kw)
        for r in reps:
            r.note = (r.note + " " if r.note else "") + f"[{name}]"
        reports += reps
        log.info("%s: %d/%d passed in %.1fs", name, sum(r.passed for r in reps), len(reps), time.time() - t0)
    return suite_passes(reports), reports


def cmd_verify(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    from .checks import CHECKS, SUITES
    if args.list:
        for name, c in CHECKS.items():
            suites = ",".join(s for s, names in SUITES.items() if name in names)
            print(f"{name:16s} [{suites}] {c.description}")
        return EXIT_OK
    suite = args.suite or cfg.suite
    names = args.check or SUITES.get(suite)
    if names is None:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    for n in names:
        if n not in CHECKS:
            raise ConfigError(f"unknown check {n!r}")
    scale = 1.0 if suite == "full" and not args.check else args.scale
    seed = cfg.seed if cfg.seed is not None else 20240601
    ok, reports = run_suite(names, seed, scale, args.fault)
    attempts = [{"seed": seed, "pass": ok, "passed": sum(r.passed for r in reports), "total": len(reports)}]
    if not ok:
        # one re-run on a fresh seed, as per the multiple-testing policy
        seed2 = int(np.random.SeedSequence(seed).generate_state(1)[0])
        log.info("suite failed at seed %d; re-running with seed %d", seed, seed2)
        ok, reports = run_suite(names, seed2, scale, args.fault)
        attempts.append({"seed": seed2, "pass": ok, "passed": sum(r.passed for r in reports),
                         "total": len(reports)})
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"suite": suite, "checks": names, "fault": args.fault, "attempts": attempts, "pass": ok,
               "reports": json.loads(reports_to_json(reports))}
    (out / "verify.json").write_text(json.dumps(payload, indent=2) + "\n")
    for r in reports:
        if not r.passed:
            print(f"FAIL {r.statistic}: observed {r.observed:.6g} reference {r.reference:.6g} tol {r.tolerance:.3g}")
    print(f"{'PASS' if ok else 'FAIL'}: {attempts[-1]['passed']}/{attempts[-1]['total']} comparisons passed")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_selftest() -> int:
    """A few seconds of exact identities; no Monte Carlo tolerances involved."""
    failures = []

    def expect(name, got, want, tol):
        if not abs(got - want) <= tol:
            failures.append(f"{name}: {got!r} != {want!r}")

    expect("critical k=2 limit at 1/2", float(cf.critk2(0.5)), 0.7725887222397811, 1e-12)
    expect("near-critical k=2 mu=1 at 0.3", cf.nearcritk2(1.0, 1.0, 0.3), 0.82572772701162, 1e-12)
    expect("partial fractions (0,inf)", cf.partial_fraction_integral([1.0, 2.0], "inf"),
           cf.partial_fraction_quad([1.0, 2.0], "inf"), 1e-10)
    expect("birth-death tail near s=0", cf.bd_joint_tail(1.0, 2.0, 3.0, [1e-9, 2e-9]), 1.0, 1e-6)
    expect("reciprocal moment N=5 k=2", spine.recip_kernel(5, 2), 1 / 20, 1e-12)
    rng = replicate_rng(0, 0)
    expect("limit construction k=2 has one split", lc.sample_limit_times(2, 0.0, 1.0, rng).splits.size, 1, 0)
    ens = run_conditioned(birth_death(1.0, 2.0), 1.0, (2,), 50, 0)
    expect("simulated splits lie in (0,T]", float(np.all((ens.splits[2] > 0) & (ens.splits[2] <= 1.0))), 1.0, 0)
    for f in failures:
        print("FAIL", f)
    print("selftest", "failed" if failures else "passed")
    return EXIT_FAIL if failures else EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, help="worker threads (default: $GWC_THREADS or 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid", help="'s1,s2,...' or 'a,b;c,d' for k > 2")
    common.add_argument("--k", type=int, help="sample size k")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--replicates", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gwcoal", description="Coalescent structure of Galton-Watson trees")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="forward simulation conditioned on N_T >= k")
    sub.add_parser("spine", parents=[common], help="spine skeletons and immigration under the k-spine measure")
    sub.add_parser("limit", parents=[common], help="direct sampling of the scaling-limit genealogy")
    sub.add_parser("tables", parents=[common], help="closed-form joint tails and densities on a grid")
    v = sub.add_parser("verify", parents=[common], help="run an acceptance suite")
    v.add_argument("--list", action="store_true", help="list available checks")
    v.add_argument("--suite", choices=["quick", "full"])
    v.add_argument("--check", action="append", help="run only this check (repeatable)")
    v.add_argument("--scale", type=float, help="sample-size multiplier (1 = full size)")
    v.add_argument("--fault", choices=["size-bias"], help="inject a known bug (negative control)")
    sub.add_parser("selftest", parents=[common], help="fast deterministic sanity checks")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or default_threads()
    try:
        if args.command == "selftest":
            return cmd_selftest()
        if args.command == "verify":
            cfg = build_config(args, need_seed=False) if args.config else _bare(args)
            return cmd_verify(cfg, args)
        # the limit tables never build the finite-T offspring law
        cfg = build_config(args, need_law=args.command != "tables")
        return {"simulate": cmd_simulate, "spine": cmd_spine, "limit": cmd_limit,
                "tables": cmd_tables}[args.command](cfg, threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PopulationCapError, AttemptsExhausted) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EXHAUSTED


def _bare(args) -> ExperimentConfig:
    cfg = ExperimentConfig(seed=args.seed)
    if args.out:
        cfg.out = args.out
    return cfg


if __name__ == "__main__":
    sys.exit(main())
