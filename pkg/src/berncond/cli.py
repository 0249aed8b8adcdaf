"""Command-line interface: ``berncond {analyze,exact,simulate,curve}``.

Every run reads one JSON config (system keys plus optional knobs) and writes
outputs that start with a provenance header: config hash, seed and library
version.  Exit codes: 0 success, 2 configuration error, 3 infeasible
instance, 4 size limit exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import montecarlo, transport
from ._io import dumps_json, write_csv
from .model import (
    SYSTEM_KEYS,
    BerncondError,
    BlockSystem,
    CondKind,
    ConditioningSpec,
    ConfigError,
    InfeasibleError,
    InstanceTooLargeError,
    from_json_dict,
    validate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_TOO_LARGE = 4

KNOB_KEYS = {"n", "k", "size", "seed", "n_grid", "k_grid", "z_grid"}
DEFAULT_K_GRID = "-4:4:0.5"


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


class RunConfig:
    """Parsed config file: the system, its conditioning and the run knobs."""

    def __init__(self, raw: bytes):
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - SYSTEM_KEYS - KNOB_KEYS
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        self.sha256 = hashlib.sha256(raw).hexdigest()
        self.knobs = {k: doc[k] for k in KNOB_KEYS if k in doc}
        self.system, self.cond = from_json_dict({k: v for k, v in doc.items() if k in SYSTEM_KEYS})
        validate(self.system, self.cond).raise_if_failed()

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                return cls(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None

    def require_cond(self) -> ConditioningSpec:
        if self.cond is None:
            raise ConfigError("config has no conditioning (alpha_cond)")
        return self.cond


def parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, (int, np.integer)):
        return [int(text)]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def parse_grid(text) -> np.ndarray:
    """``"a:b:step"`` (inclusive of b up to rounding) or an explicit list."""
    if isinstance(text, (list, tuple)):
        return np.array([float(v) for v in text])
    try:
        a, b, step = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"grid must look like 'a:b:step', got {text!r}") from None
    if step <= 0 or b < a:
        raise ConfigError("grid needs a <= b and step > 0")
    count = int(np.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(count)


def _knob(args, cfg: RunConfig, name: str, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return cfg.knobs.get(name, default)


def _provenance(cfg: RunConfig, command: str, seed=None) -> dict[str, Any]:
    return {
        "command": command,
        "config_sha256": cfg.sha256,
        "seed": "" if seed is None else int(seed),
        "version": __version__,
    }


def _emit_text(text: str, out_dir: str | None, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows, provenance) -> str:
    buf = io.StringIO()
    write_csv(buf, header, rows, provenance)
    return buf.getvalue()


def _cond_at(cond: ConditioningSpec | None, n: int, k: int) -> ConditioningSpec:
    kind = cond.kind if cond is not None else CondKind.AT_LEAST
    return ConditioningSpec(kind, cond.alpha if cond is not None else 0.5, 0.0, table={n: int(k)})


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_analyze(args, cfg: RunConfig) -> int:
    report = asy.classify_regime(cfg.system, cfg.require_cond())
    doc = {"provenance": _provenance(cfg, "analyze"), "report": report.to_json()}
    _emit_text(dumps_json(doc) + "\n", args.out, "analyze.json")
    return EXIT_OK


def cmd_exact(args, cfg: RunConfig) -> int:
    system: BlockSystem = cfg.system
    n_val = _knob(args, cfg, "n")
    if n_val is None:
        raise ConfigError("exact needs --n")
    ns = parse_int_list(n_val)
    k_val = _knob(args, cfg, "k")
    results = []
    for n in ns:
        validate(system, None, n).raise_if_failed()
        if k_val is not None:
            ks = parse_int_list(k_val)
        else:
            ks = [cfg.require_cond().k(n)]
        for k in ks:
            if not 0 <= k <= n:
                raise InfeasibleError(f"k={k} outside 0..{n}")
            cond = _cond_at(cfg.cond, n, k)
            mu, nu = transport.conditioned_pair(system, n, cond, "block")
            value, plan = transport.max_coupling_vector(mu, nu)
            entry = {
                "n": n,
                "k": k,
                "cond_kind": cond.kind.value,
                "sup_prob": value,
                "total_variation": mu.tv_distance(nu),
                "law_X": [[list(map(int, s)), float(p)] for s, p in zip(mu.support, mu.probs)],
                "law_Y": [[list(map(int, s)), float(p)] for s, p in zip(nu.support, nu.probs)],
            }
            if args.emit_plan:
                name = f"plan_n{n}_k{k}.csv"
                rows = [
                    [";".join(map(str, u)), ";".join(map(str, v)), m]
                    for u, v, m in zip(plan.u_states.tolist(), plan.v_states.tolist(), plan.mass)
                ]
                text = _csv_text(["u_state", "v_state", "mass"], rows, _provenance(cfg, "exact"))
                _emit_text(text, args.out or ".", name)
                entry["plan_csv"] = name
            results.append(entry)
    doc = {
        "provenance": _provenance(cfg, "exact"),
        "betas": transport.betas(system).to_json(),
        "results": results,
    }
    _emit_text(dumps_json(doc) + "\n", args.out, "exact.json")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    system = cfg.system
    cond = cfg.require_cond()
    n_val = _knob(args, cfg, "n") or cfg.knobs.get("n_grid")
    if n_val is None:
        raise ConfigError("simulate needs --n")
    ns = parse_int_list(n_val)
    size = int(_knob(args, cfg, "size", 10_000))
    seed = int(_knob(args, cfg, "seed", 0))
    prov = _provenance(cfg, "simulate", seed)

    sup_rows, ks_rows, lln_rows = [], [], []
    for n in ns:
        est = montecarlo.sup_prob_estimate(system, n, cond, size, seed)
        sup_rows.append([n, size, est.estimate, est.ci_low, est.ci_high, est.lower_bracket, est.upper_bracket])
        for side in ("X", "Y"):
            for row in montecarlo.lln_check(system, side, [n], cond, size, seed):
                lln_rows.append([row["n"], row["side"], row["block"], row["limit"], row["eps"], row["prob"]])
            functionals = ["per-block"]
            if cond.kind is CondKind.AT_LEAST and not transport.betas(system).all_equal:
                functionals.insert(0, "sum-over-I")
            for fn in functionals:
                try:
                    rows = montecarlo.weak_limit_check(system, [n], cond, fn, side, size, seed)
                except ConfigError:
                    continue  # no limit law for this functional in this regime
                ks_rows.extend([[r["n"], r["side"], r["functional"], r["block"], r["ks"]] for r in rows])

    sup_text = _csv_text(["n", "size", "estimate", "ci_low", "ci_high", "lower_bracket", "upper_bracket"], sup_rows, prov)
    if args.out is None:
        sys.stdout.write(sup_text)
        return EXIT_OK
    _emit_text(sup_text, args.out, "supprob.csv")
    _emit_text(_csv_text(["n", "side", "functional", "block", "ks"], ks_rows, prov), args.out, "ks.csv")
    _emit_text(_csv_text(["n", "side", "block", "limit", "eps", "prob"], lln_rows, prov), args.out, "lln.csv")
    return EXIT_OK


def cmd_curve(args, cfg: RunConfig) -> int:
    grid = parse_grid(_knob(args, cfg, "k_grid", DEFAULT_K_GRID))
    values = asy.pk_curve(cfg.system, grid)
    prov = _provenance(cfg, "curve")
    _emit_text(_csv_text(["K", "P_K"], zip(grid.tolist(), values.tolist()), prov), args.out, "curve.csv")
    z_spec = _knob(args, cfg, "z_grid")
    if z_spec is not None:
        # F_K at the configured shift, written next to the P_K curve
        if args.out is None:
            raise ConfigError("z-grid output needs --out")
        K = cfg.require_cond().K
        z = parse_grid(z_spec)
        fk = np.asarray(asy.f_k(cfg.system, K, z), dtype=float).reshape(-1)
        _emit_text(_csv_text(["z", "F_K"], zip(z.tolist(), fk.tolist()), prov), args.out, "fk.csv")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "exact": cmd_exact, "simulate": cmd_simulate, "curve": cmd_curve}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="berncond", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (default: stdout)")
        if name in ("exact", "simulate"):
            p.add_argument("--n", default=None, help="n or comma-separated list of n")
        if name == "exact":
            p.add_argument("--k", default=None, help="k or comma-separated list of k")
            p.add_argument("--emit-plan", action="store_true", help="write optimal coupling plans as CSV")
        if name == "simulate":
            p.add_argument("--size", type=int, default=None, help="draws per n and side")
            p.add_argument("--seed", type=int, default=None)
        if name == "curve":
            p.add_argument("--k-grid", dest="k_grid", default=None, help="grid 'a:b:step'")
            p.add_argument("--z-grid", dest="z_grid", default=None, help="also write F_K on grid 'a:b:step'")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](args, cfg)
    except InstanceTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, BerncondError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
