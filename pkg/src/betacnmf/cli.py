"""Command-line front end: ``betacnmf {gen,fit,bench,stats}``.

Settings come from built-in desk-scale defaults, then an optional
``key = value`` config file, then command-line flags. The effective settings
are written to ``<out>/manifest.cfg``, which can be passed back with
``--config`` to reproduce a run.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 parse or consistency, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .baselines import METHODS
from .bench import (
    ExperimentConfig,
    beta_tag,
    ensemble_stats,
    fit_method,
    gen_V,
    init_factors,
    losses_at,
    read_traces,
    relative_runtime,
    run_ensemble,
    welch_by_iteration,
    write_runtime,
    write_stats,
    write_traces,
    write_welch,
)
from .nnmat import NmatFormatError, read_nmat, write_dictionary, write_nmat
from .stats import welch_t_test

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3, 4
SEED_ENV = "BETACNMF_SEED"
MANIFEST = "manifest.cfg"

log = logging.getLogger("betacnmf")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config files ----------------------------------------------------------

_INT_KEYS = {"K", "I", "N", "M", "n_matrices", "n_inits", "max_iters", "master_seed"}
_FLOAT_KEYS = {"eps"}
_KEYS = set(ExperimentConfig.field_names())


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise CliError(f"config line {lineno}: expected 'key = value'", EXIT_PARSE)
        if key not in _KEYS:
            raise CliError(f"config line {lineno}: unknown key {key!r}", EXIT_PARSE)
        values[key] = _convert(key, value, f"config line {lineno}", EXIT_PARSE)
    return values


def _convert(key: str, value: str, where: str, code: int):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "beta":
            betas = tuple(float(v) for v in value.split(",") if v.strip())
            if not betas:
                raise ValueError("empty beta list")
            return betas
        if key == "methods":
            methods = tuple(v.strip() for v in value.split(",") if v.strip())
            bad = [m for m in methods if m not in METHODS]
            if bad or not methods:
                raise CliError(
                    f"{where}: unknown method(s) {', '.join(bad) or '(none)'}; "
                    f"valid tags: {', '.join(METHODS)}", EXIT_USAGE,
                )
            return methods
        return value
    except ValueError as exc:
        raise CliError(f"{where}: bad value for {key}: {exc}", code) from None


def format_config(settings: dict) -> str:
    lines = []
    for key in ExperimentConfig.field_names():
        value = settings[key]
        if key == "beta":
            value = ",".join(repr(float(b)) for b in value)
        elif key == "methods":
            value = ",".join(value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


_FLAG_KEYS = {
    "K": "K", "I": "I", "N": "N", "M": "M", "beta": "beta", "methods": "methods",
    "iters": "max_iters", "seed": "master_seed", "n_matrices": "n_matrices",
    "n_inits": "n_inits", "eps": "eps", "h_update_weights": "h_update_weights",
}


def resolve_settings(args) -> dict:
    """Defaults, then config file, then flags; the seed falls back to ``$BETACNMF_SEED``."""
    defaults = ExperimentConfig()
    settings = {k: getattr(defaults, k) for k in ExperimentConfig.field_names()}
    settings["beta"] = (defaults.beta,)
    seed_given = False
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_IO) from None
        from_file = parse_config_text(text)
        seed_given = "master_seed" in from_file
        settings.update(from_file)
    for attr, key in _FLAG_KEYS.items():
        raw = getattr(args, attr, None)
        if raw is not None:
            settings[key] = _convert(key, str(raw), f"--{attr.replace('_', '-')}", EXIT_USAGE)
            seed_given = seed_given or key == "master_seed"
    if not seed_given and os.environ.get(SEED_ENV):
        settings["master_seed"] = _convert("master_seed", os.environ[SEED_ENV], SEED_ENV, EXIT_USAGE)
    return settings


def make_config(settings: dict, beta: float) -> ExperimentConfig:
    values = dict(settings, beta=beta)
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


# --- subcommands -----------------------------------------------------------


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {out} is not writable: {exc}", EXIT_IO) from None
    return out


def _write_manifest(out: Path, settings: dict, extra: list[str] = ()) -> None:
    body = format_config(settings)
    if extra:
        body += "".join(f"# {line}\n" for line in extra)
    (out / MANIFEST).write_text(body, encoding="ascii")


def cmd_gen(args) -> int:
    settings = resolve_settings(args)
    config = make_config(settings, settings["beta"][0])
    out = _prepare_out(args.out)
    notes = []
    try:
        for idx in range(config.n_matrices):
            V, W, H = gen_V(config, idx)
            write_nmat(out / f"V_{idx:03d}.nmat", V)
            write_dictionary(out / f"W_{idx:03d}.dict", W)
            write_nmat(out / f"H_{idx:03d}.nmat", H)
            notes.append(
                f"V_{idx:03d}.nmat master_seed={config.master_seed} index={idx} "
                f"streams=dictionary,activations"
            )
        _write_manifest(out, settings, notes)
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from None
    print(f"wrote {config.n_matrices} matrices to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    settings = resolve_settings(args)
    if args.method not in METHODS:
        raise CliError(f"unknown method {args.method!r}; valid tags: {', '.join(METHODS)}", EXIT_USAGE)
    if len(settings["beta"]) != 1:
        raise CliError("fit takes a single --beta", EXIT_USAGE)
    try:
        V = read_nmat(args.V)
    except (NmatFormatError, UnicodeDecodeError) as exc:
        raise CliError(f"{args.V}: {exc}", EXIT_PARSE) from None
    except OSError as exc:
        raise CliError(f"cannot read {args.V}: {exc}", EXIT_IO) from None
    settings.update(K=V.shape[0], N=V.shape[1])
    config = make_config(settings, settings["beta"][0])
    out = _prepare_out(args.out)
    init = init_factors(config, 0)
    state, trace = fit_method(V, init, config, args.method, run_id=0)
    try:
        write_traces(out / "trace.csv", [trace])
        if state is not None:
            write_dictionary(out / "W.dict", state.W)
            write_nmat(out / "H.nmat", state.H)
        _write_manifest(out, settings, [f"fit {args.V} method={args.method}"])
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from None
    if state is None:
        raise CliError(f"{args.method}: {trace.failure}", EXIT_NUMERIC)
    print(
        f"method={args.method} beta={config.beta:g} iterations={trace.iterations[-1]} "
        f"final_loss={trace.final_loss!r}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    settings = resolve_settings(args)
    jobs = 1 if args.timing else max(1, args.jobs)
    out = _prepare_out(args.out)
    all_traces = []
    for beta in settings["beta"]:
        config = make_config(settings, beta)
        traces = run_ensemble(config, jobs=jobs)
        all_traces.extend(traces)
        tag = beta_tag(beta)
        stats = ensemble_stats(traces)
        reference = "proposed" if "proposed" in config.methods else config.methods[0]
        welch_rows = [
            (it, reference, other, res)
            for other in config.methods if other != reference
            for it, res in welch_by_iteration(traces, reference, other)
        ]
        try:
            write_traces(out / f"traces_beta{tag}.csv", traces)
            for method in config.methods:
                write_stats(out / f"stats_beta{tag}_{method}.csv", stats[method])
            write_welch(out / f"welch_beta{tag}.csv", welch_rows)
        except OSError as exc:
            raise CliError(f"write failed: {exc}", EXIT_IO) from None
        failures = sum(t.failure is not None for t in traces)
        last = config.max_iters
        summary = ", ".join(
            f"{m}={stats[m].at(last)[0]:.6g}" for m in config.methods if last in stats[m].iterations
        )
        print(f"beta={tag}: {config.n_runs} runs x {len(config.methods)} methods, "
              f"failures={failures}; mean loss at {last}: {summary}")
    try:
        if args.timing:
            write_runtime(out / "runtime.csv", relative_runtime(all_traces))
        _write_manifest(out, settings)
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from None
    return EXIT_OK


def cmd_stats(args) -> int:
    samples = []
    for path, method in ((args.trace_a, args.method_a), (args.trace_b, args.method_b)):
        try:
            traces = read_traces(path)
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
        except (ValueError, KeyError) as exc:
            raise CliError(f"{path}: {exc}", EXIT_PARSE) from None
        if method is not None:
            traces = [t for t in traces if t.method == method]
        losses = [
            loss for m in sorted({t.method for t in traces})
            for loss in losses_at(traces, m, args.iteration)
        ]
        if not losses:
            raise CliError(f"{path}: no losses at iteration {args.iteration}", EXIT_PARSE)
        if len(losses) < 2:
            raise CliError(f"{path}: need at least two losses at iteration {args.iteration}", EXIT_PARSE)
        samples.append(losses)
    res = welch_t_test(*samples)
    print(f"t={res.t_statistic!r} df={res.degrees_of_freedom!r} p={res.p_value!r}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--beta", help="beta value, or comma-separated list for bench")
    common.add_argument("--methods", help=f"comma-separated subset of: {', '.join(METHODS)}")
    for dim in ("K", "I", "N", "M"):
        common.add_argument(f"--{dim}", type=int, dest=dim)
    common.add_argument("--iters", type=int, help="iteration budget per fit")
    common.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV})")
    common.add_argument("--n-matrices", type=int)
    common.add_argument("--n-inits", type=int)
    common.add_argument("--eps", type=float, help="clamp floor for divisions and negative powers")
    common.add_argument("--h-update-weights", choices=("new", "old"))
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--timing", action="store_true", help="serial runs plus runtime.csv")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="betacnmf", description="Convolutional NMF under the beta-divergence.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write synthetic V matrices and their factors")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="factorize one NMAT file")
    p.add_argument("V", help="NMAT v1 matrix file")
    p.add_argument("--method", default="proposed", help=f"one of: {', '.join(METHODS)}")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", parents=[common], help="ensemble benchmark over betas and methods")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="Welch t-test between two trace files at one iteration")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--method-a", help="only use rows of this method from trace_a")
    p.add_argument("--method-b", help="only use rows of this method from trace_b")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"betacnmf: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
