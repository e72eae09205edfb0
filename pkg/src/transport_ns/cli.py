"""Command line entry point: ``transport-ns {run,sweep,verify,report}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ENV_PREFIX, ConfigError, RunConfig
from .io import ArtifactIOError, dumps, ensure_dir, read_csv, write_csv, write_json
from .pipeline import StageError, emit, run
from .verify import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SUBCOMMANDS = ("run", "sweep", "verify", "report")

log = logging.getLogger("transport_ns")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="transport-ns",
        description="Transformed compressible Navier-Stokes runs with transport noise.",
        epilog=f"Environment variables {ENV_PREFIX}SECTION__KEY override config entries.")
    p.add_argument("command", nargs="?", choices=SUBCOMMANDS, help="what to do")
    p.add_argument("--subcommand", choices=SUBCOMMANDS, help="alternative to the positional command")
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override noise.seed")
    p.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> RunConfig:
    env = dict(os.environ)
    if args.config is not None:
        cfg = RunConfig.load(args.config, env)
    else:
        cfg = RunConfig.from_dict({}, env)
    if args.seed is not None:
        cfg = cfg.with_changes(noise={"seed": args.seed})
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return args.out if args.out is not None else Path(cfg["output"]["directory"])


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg)
    out = _out_dir(args, cfg)
    emit(result, out, cfg)
    d = result.report.summary()
    print(f"energy residual max {d['energy_residual_max']:.3e}, mass drift {d['mass_drift']:.1e}, "
          f"written to {out}")
    return EXIT_OK


def _sweep_tasks(cfg: RunConfig) -> list[tuple[str, dict]]:
    sw = cfg["sweep"]
    seeds = sw["seeds"] or [cfg.seed]
    tasks = []
    for seed in seeds:
        tasks.append((f"seed{seed}", {"noise": {"seed": seed}}))
        for key in ("eps_n", "l", "delta"):
            for val in sw[key]:
                tasks.append((f"seed{seed}_{key}{val:g}", {"noise": {"seed": seed}, "layers": {key: val}}))
        for steps in sw["steps"]:
            tasks.append((f"seed{seed}_steps{steps}", {"noise": {"seed": seed, "steps": steps}}))
    return tasks


def _sweep_worker(task):
    name, doc, changes, out = task
    cfg = RunConfig.from_dict(doc).with_changes(**changes)
    result = run(cfg)
    emit(result, out, cfg)
    return name


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = ensure_dir(_out_dir(args, cfg))
    tasks = [(name, cfg.data, ch, str(out / name)) for name, ch in _sweep_tasks(cfg)]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(_sweep_worker, tasks))
    else:
        for t in tasks:
            _sweep_worker(t)
    aggregate(out)
    print(f"{len(tasks)} sweep points written to {out}")
    return EXIT_OK


def aggregate(directory) -> dict:
    """Serial pass collecting every task summary under ``directory``."""
    import json

    directory = Path(directory)
    rows = []
    for summ in sorted(directory.glob("*/summary.json")):
        data = json.loads(summ.read_text())
        diag = data.get("diagnostics", {})
        lay = data["config"]["layers"]
        rows.append({
            "task": summ.parent.name, "seed": data["seed"], "eps_n": lay["eps_n"], "l": lay["l"],
            "delta": lay["delta"], "steps": data["config"]["noise"]["steps"],
            "energy_residual_max": diag.get("energy_residual_max"),
            "artificial_share_final": diag.get("artificial_share_final"),
            "mass_drift": diag.get("mass_drift"),
        })
    if rows:
        write_csv(directory / "report.csv", list(rows[0]), [list(r.values()) for r in rows])
    report = {"tasks": rows}
    deltas = sorted((r for r in rows if r["delta"] > 0 and r["artificial_share_final"] is not None),
                    key=lambda r: r["delta"])
    if len(deltas) > 1:
        report["artificial_share_per_delta"] = [r["artificial_share_final"] / r["delta"]
                                                for r in deltas]
    write_json(directory / "report.json", report)
    return report


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if not out.is_dir():
        raise ArtifactIOError(f"no output directory {out}")
    report = aggregate(out)
    if not report["tasks"] and (out / "steps.csv").exists():
        header, rows = read_csv(out / "steps.csv")
        col = header.index("energy_residual")
        res = np.abs(np.array([float(r[col]) for r in rows]))
        report = {"steps": len(rows), "energy_residual_max": float(res.max()) if rows else 0.0}
        write_json(out / "report.json", report)
    sys.stdout.write(dumps(report))
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_checks()
    for c in checks:
        print(c.line())
    if args.out is not None:
        ensure_dir(args.out)
        write_json(args.out / "verify.json",
                   {"checks": [{"name": c.name, "value": c.value, "tol": c.tol, "passed": c.passed}
                               for c in checks]})
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    command = args.command or args.subcommand
    if command is None:
        parser.error("a subcommand is required")
    try:
        return COMMANDS[command](args)
    except ConfigError as exc:
        sys.stderr.write(dumps(exc.as_dict()))
        return EXIT_CONFIG
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL if exc.numerical else EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
