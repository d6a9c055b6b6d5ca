"""Command-line front end.

    hmcert validate --config run.yaml
    hmcert certify  --config run.yaml --out out/
    hmcert solve    --config run.yaml --workers 4
    hmcert sweep    --config run.yaml --seed 1 --tol 1e-11

Exit codes: 0 success, 2 configuration error, 3 assumption infeasible,
4 bound violation, 5 numerical non-convergence, 6 I/O error, 7 model
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from . import tolerances as tol
from .errors import (
    AssumptionFailure,
    CertificationError,
    ConfigError,
    ModelValidationError,
    NonConvergence,
    ParameterOutOfRange,
    SingularSystem,
    ViolatedBound,
)
from .modelfile import load_model, parse_model
from .models import Generated
from .pipeline import (
    RunOptions,
    certify,
    certify_doc,
    failure_doc,
    model_summary,
    pair_header,
    pair_rows,
    solution_header,
    solution_rows,
    solve,
    solve_doc,
    sweep,
)
from .report import write_csv, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_BOUND = 4
EXIT_NONCONVERGENCE = 5
EXIT_IO = 6
EXIT_MODEL = 7

_SECTIONS = {
    "certify": {"route", "gamma", "R", "alpha0", "gamma0", "optimize_tuning", "r_max",
                "contraction_trials", "decay_steps"},
    "lipschitz": {"pairs", "alpha_dd", "nstep_max", "nstep_trials"},
    "solve": {"series_tol", "invariant_tol"},
}
_TOP = {"model", "certify", "lipschitz", "solve", "tolerances", "output", "seed", "workers"}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ModelValidationError):
        return EXIT_MODEL
    if isinstance(exc, (ConfigError, ParameterOutOfRange, yaml.YAMLError)):
        return EXIT_CONFIG
    if isinstance(exc, AssumptionFailure):
        return EXIT_INFEASIBLE
    if isinstance(exc, ViolatedBound):
        return EXIT_BOUND
    if isinstance(exc, (NonConvergence, SingularSystem)):
        return EXIT_NONCONVERGENCE
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_CONFIG


class RunConfig:
    """Parsed configuration: model source, run options and output settings."""

    def __init__(self, doc: dict[str, Any], base: Path, args: argparse.Namespace):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(doc) - _TOP
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.base = base
        self.model_spec = doc.get("model")
        if args.model is not None:
            self.model_spec = {"file": str(Path(args.model).resolve())}
        if not isinstance(self.model_spec, dict) or not ({"file", "generator"} & set(self.model_spec)):
            raise ConfigError("config needs a model section with either 'file' or 'generator'")

        kw: dict[str, Any] = {}
        for section, allowed in _SECTIONS.items():
            body = doc.get(section) or {}
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
            kw.update(body)
        self.seed = int(args.seed if args.seed is not None else doc.get("seed", 0))
        workers = int(args.workers if args.workers is not None else doc.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be at least 1")
        if args.tol is not None:
            kw["series_tol"] = args.tol
        tols = doc.get("tolerances") or {}
        if not isinstance(tols, dict):
            raise ConfigError("tolerances must be a mapping")
        for name, value in tols.items():
            if name not in tol.OVERRIDABLE:
                raise ConfigError(f"unknown tolerance {name!r}; choose from {list(tol.OVERRIDABLE)}")
            if not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"tolerance {name} must be a positive number")
        for name in ("series_tol", "invariant_tol"):
            if name in kw and not (isinstance(kw[name], (int, float)) and kw[name] > 0):
                raise ConfigError(f"{name} must be a positive number")
        output = doc.get("output") or {}
        self.formats = set(output.get("formats", ["json", "csv"]))
        if self.formats - {"json", "csv"}:
            raise ConfigError(f"unknown report formats {sorted(self.formats - {'json', 'csv'})}")
        self.out = Path(args.out)
        cache = bool(output.get("cache", True)) and not args.no_cache
        self.options = RunOptions(
            **kw, seed=self.seed, workers=workers,
            cache_dir=self.out / ".cache" if cache else None,
            tolerances={k: float(v) for k, v in tols.items()},
        )

    def load_model(self) -> Generated:
        spec = dict(self.model_spec)
        if "file" in spec:
            path = Path(spec["file"])
            if not path.is_absolute():
                path = self.base / path
            return load_model(path)
        params = dict(spec.get("params") or {})
        if spec["generator"] == "random_minorized":
            params.setdefault("seed", self.seed)
        return parse_model({"generator": spec["generator"], "params": params})

    def echo(self) -> dict[str, Any]:
        """Settings that determine the report (worker count and paths excluded)."""
        o = self.options
        skip = {"workers", "cache_dir"}
        src = dict(self.model_spec)
        if "file" in src:
            src["file"] = Path(src["file"]).name
        return {"model_source": src,
                "options": {f.name: getattr(o, f.name) for f in fields(o) if f.name not in skip}}


def _read_config(args) -> tuple[dict[str, Any], Path]:
    if args.config is None:
        if args.model is None:
            raise ConfigError("pass --config or --model")
        return {}, Path.cwd()
    path = Path(args.config)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return doc, path.resolve().parent


def _header(cmd: str, cfg: RunConfig | None) -> dict[str, Any]:
    head = {"tool": "hmcert", "version": __version__, "command": cmd}
    if cfg is not None:
        head["config"] = cfg.echo()
    return head


def run(cmd: str, args: argparse.Namespace) -> int:
    cfg = None
    out = Path(args.out)
    try:
        doc, base = _read_config(args)
        cfg = RunConfig(doc, base, args)
        out.mkdir(parents=True, exist_ok=True)
        with tol.override(cfg.options.tolerances):
            report = _execute(cmd, cfg)
    except (CertificationError, OSError, yaml.YAMLError, ValueError) as exc:
        code = exit_code(exc)
        err = exc.to_dict() if isinstance(exc, CertificationError) else {"error": type(exc).__name__, "message": str(exc)}
        print(f"hmcert {cmd}: {err['error']}: {err['message']}", file=sys.stderr)
        if code != EXIT_IO:
            try:
                out.mkdir(parents=True, exist_ok=True)
                fail = failure_doc(exc) if isinstance(exc, CertificationError) else {"status": "failed", "error": err}
                write_json(out / f"{cmd}.json", _header(cmd, cfg) | fail | {"exit_code": code})
            except OSError:
                pass
        return code
    write_json(out / f"{cmd}.json", _header(cmd, cfg) | report | {"exit_code": EXIT_OK})
    print(f"hmcert {cmd}: ok ({out / (cmd + '.json')})")
    return EXIT_OK


def _execute(cmd: str, cfg: RunConfig) -> dict[str, Any]:
    gen = cfg.load_model()
    if cmd == "validate":
        return {"status": "valid", "model": model_summary(gen)}
    opts = cfg.options
    cert = certify(gen, opts)
    report = {"certificate": certify_doc(cert, opts)}
    if cmd == "certify":
        return {"status": "certified"} | report
    results = solve(cert, opts)
    report["solve"] = solve_doc(cert, results)
    if "csv" in cfg.formats:
        write_csv(cfg.out / "solutions.csv", solution_header(cert), solution_rows(cert, results))
    if cmd == "solve":
        return {"status": "solved"} | report
    sweep_doc, emp = sweep(cert, results, opts)
    report["sweep"] = sweep_doc
    if "csv" in cfg.formats:
        write_csv(cfg.out / "pairs.csv", pair_header(), pair_rows(emp))
    return {"status": "swept"} | report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmcert", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"hmcert {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check model invariants",
        "certify": "fit drift, minorization and Lipschitz hypotheses",
        "solve": "certify, then solve the Poisson equation at every grid point",
        "sweep": "certify, solve, and check the parameter-Lipschitz bounds on all grid pairs",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="run configuration (YAML)")
        s.add_argument("--model", help="model file; overrides the config's model section")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--workers", type=int, help="processes for per-point solves")
        s.add_argument("--seed", type=int, help="seed for randomised checks")
        s.add_argument("--tol", type=float, help="series truncation tolerance")
        s.add_argument("--no-cache", action="store_true", help="ignore and do not write the solve cache")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
