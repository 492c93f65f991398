"""Synthetic ensembles, paired runs of every update scheme, and their statistics.

Data are exactly factorizable: dictionary entries are chi-squared with two
degrees of freedom and activations are uniform on [0, 1). Every method is
started from the same initial factors for a given run, so per-iteration
losses can be compared pairwise across methods.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .baselines import METHODS, get_step
from .cnmf import FitOptions, LossTrace, NumericalError, fit, random_init, reconstruct
from .nnmat import DEFAULT_EPS
from .rng import chi2_2, derive_rng
from .stats import RunningStats, WelchResult, welch_t_test

log = logging.getLogger(__name__)

TRACE_HEADER = ("run_id", "method", "beta", "iteration", "loss", "elapsed_ns")
STATS_HEADER = ("method", "beta", "iteration", "mean_loss", "std_loss", "n")
WELCH_HEADER = ("iteration", "method_a", "method_b", "t", "df", "p")
RUNTIME_HEADER = ("method", "beta", "mean_wall_ns", "ratio")


@dataclass
class ExperimentConfig:
    K: int = 100
    I: int = 5
    N: int = 50
    M: int = 4
    beta: float = 1.0
    n_matrices: int = 10
    n_inits: int = 3
    max_iters: int = 200
    methods: tuple[str, ...] = METHODS
    master_seed: int = 0
    eps: float = DEFAULT_EPS
    h_update_weights: str = "new"

    def __post_init__(self):
        self.methods = tuple(self.methods)
        for name in ("K", "I", "N", "M", "n_matrices", "n_inits", "max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            get_step(m)
        if not self.eps > 0:
            raise ValueError("eps must be > 0")

    @classmethod
    def full_scale(cls, **overrides) -> "ExperimentConfig":
        base = dict(K=1000, I=10, N=100, M=16, n_matrices=100, n_inits=10, max_iters=1000)
        base.update(overrides)
        return cls(**base)

    @property
    def n_runs(self) -> int:
        return self.n_matrices * self.n_inits

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def gen_dictionary(K: int, I: int, M: int, rng: np.random.Generator) -> np.ndarray:
    return chi2_2(rng, (M, K, I))


def gen_activations(I: int, N: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((I, N))


def gen_V(config: ExperimentConfig, matrix_index: int):
    """Return ``(V, W_true, H_true)`` for one synthetic matrix."""
    if not 0 <= matrix_index < config.n_matrices:
        raise IndexError(f"matrix_index {matrix_index} out of range")
    W = gen_dictionary(config.K, config.I, config.M, derive_rng(config.master_seed, "dictionary", matrix_index))
    H = gen_activations(config.I, config.N, derive_rng(config.master_seed, "activations", matrix_index))
    return reconstruct(W, H), W, H


def init_factors(config: ExperimentConfig, run_id: int):
    rng = derive_rng(config.master_seed, "init", run_id)
    return random_init(config.K, config.I, config.N, config.M, rng)


def fit_method(V, init, config: ExperimentConfig, method: str, run_id: int = 0):
    """Fit one method, turning a numerical failure into a truncated, flagged trace."""
    try:
        state, trace = fit(
            V, init, config.beta, FitOptions(config.max_iters),
            step=get_step(method), method=method, eps=config.eps,
            h_update_weights=config.h_update_weights, run_id=run_id,
        )
    except NumericalError as exc:
        log.warning("run %d, %s: %s", run_id, method, exc)
        trace = exc.trace or LossTrace(method, config.beta, run_id)
        trace.failure = str(exc)
        return None, trace
    return state, trace


def _run_matrix(config: ExperimentConfig, matrix_index: int) -> list[LossTrace]:
    V, _, _ = gen_V(config, matrix_index)
    traces = []
    for init_index in range(config.n_inits):
        run_id = matrix_index * config.n_inits + init_index
        init = init_factors(config, run_id)
        for method in config.methods:
            traces.append(fit_method(V, init, config, method, run_id)[1])
    return traces


def run_ensemble(config: ExperimentConfig, jobs: int = 1) -> list[LossTrace]:
    """Run every method on every (matrix, init) pair.

    Traces come back ordered by ``run_id`` and then by ``config.methods``
    regardless of ``jobs``. Use ``jobs=1`` when wall times matter.
    """
    indices = range(config.n_matrices)
    if jobs > 1 and config.n_matrices > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_matrix, [config] * config.n_matrices, indices))
    else:
        chunks = [_run_matrix(config, i) for i in indices]
    return [t for chunk in chunks for t in chunk]


@dataclass
class EnsembleStats:
    method: str
    beta: float
    iterations: list[int] = field(default_factory=list)
    mean: list[float] = field(default_factory=list)
    std: list[float] = field(default_factory=list)
    n: list[int] = field(default_factory=list)

    def at(self, iteration: int) -> tuple[float, float, int]:
        j = self.iterations.index(iteration)
        return self.mean[j], self.std[j], self.n[j]


def ensemble_stats(traces: Iterable[LossTrace]) -> dict[str, EnsembleStats]:
    """Per-method, per-iteration mean and sample standard deviation of the loss."""
    acc: dict[str, dict[int, RunningStats]] = defaultdict(lambda: defaultdict(RunningStats))
    betas: dict[str, float] = {}
    for tr in sorted(traces, key=lambda t: t.run_id):
        betas.setdefault(tr.method, tr.beta)
        for it, loss in zip(tr.iterations, tr.losses):
            acc[tr.method][it].push(loss)
    out = {}
    for method, per_iter in acc.items():
        st = EnsembleStats(method, betas[method])
        for it in sorted(per_iter):
            rs = per_iter[it]
            st.iterations.append(it)
            st.mean.append(rs.mean)
            st.std.append(rs.std)
            st.n.append(rs.n)
        out[method] = st
    return out


def losses_at(traces: Iterable[LossTrace], method: str, iteration: int) -> list[float]:
    out = []
    for tr in sorted(traces, key=lambda t: t.run_id):
        if tr.method == method and iteration in tr.iterations:
            out.append(tr.losses[tr.iterations.index(iteration)])
    return out


def welch_by_iteration(
    traces: Sequence[LossTrace], method_a: str, method_b: str
) -> list[tuple[int, WelchResult]]:
    """Welch test of ``method_a`` vs ``method_b`` losses at every common iteration."""
    by_method: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for tr in sorted(traces, key=lambda t: t.run_id):
        if tr.method in (method_a, method_b):
            for it, loss in zip(tr.iterations, tr.losses):
                by_method[tr.method][it].append(loss)
    a, b = by_method[method_a], by_method[method_b]
    rows = []
    for it in sorted(set(a) & set(b)):
        if len(a[it]) >= 2 and len(b[it]) >= 2:
            rows.append((it, welch_t_test(a[it], b[it])))
    return rows


def relative_runtime(traces: Iterable[LossTrace], reference: str = "proposed") -> list[dict]:
    """Mean per-run wall time of each method divided by that of ``reference``, per beta."""
    walls: dict[tuple[float, str], list[int]] = defaultdict(list)
    for tr in traces:
        if tr.failure is None:
            walls[(tr.beta, tr.method)].append(tr.wall_time_ns)
    rows = []
    for beta in sorted({b for b, _ in walls}):
        ref = walls.get((beta, reference))
        ref_mean = float(np.mean(ref)) if ref else math.nan
        for method in METHODS:
            if (beta, method) not in walls:
                continue
            mean = float(np.mean(walls[(beta, method)]))
            rows.append(dict(method=method, beta=beta, mean_wall_ns=mean, ratio=mean / ref_mean))
    return rows


def measure_runtime(config: ExperimentConfig, betas: Sequence[float]) -> list[dict]:
    """Serial timing runs of ``config`` at each beta; see :func:`relative_runtime`."""
    traces = []
    for beta in betas:
        traces.extend(run_ensemble(_with(config, beta=beta), jobs=1))
    return relative_runtime(traces)


def _with(config: ExperimentConfig, **changes) -> ExperimentConfig:
    values = {name: getattr(config, name) for name in ExperimentConfig.field_names()}
    values.update(changes)
    return ExperimentConfig(**values)


# --- CSV output ------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def beta_tag(beta: float) -> str:
    return f"{beta:g}"


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_traces(path: str | os.PathLike, traces: Iterable[LossTrace]) -> None:
    _write_rows(path, TRACE_HEADER, (
        (tr.run_id, tr.method, tr.beta, it, loss, ns)
        for tr in traces
        for it, loss, ns in zip(tr.iterations, tr.losses, tr.elapsed_ns)
    ))


def read_traces(path: str | os.PathLike) -> list[LossTrace]:
    """Parse a trace CSV back into traces keyed by ``(run_id, method, beta)``."""
    traces: dict[tuple, LossTrace] = {}
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        for row in reader:
            key = (int(row["run_id"]), row["method"], float(row["beta"]))
            tr = traces.get(key)
            if tr is None:
                tr = traces[key] = LossTrace(key[1], key[2], key[0])
            tr.append(int(row["iteration"]), float(row["loss"]), int(row["elapsed_ns"]))
    return list(traces.values())


def write_stats(path: str | os.PathLike, st: EnsembleStats) -> None:
    _write_rows(path, STATS_HEADER, (
        (st.method, st.beta, it, mu, sd, n)
        for it, mu, sd, n in zip(st.iterations, st.mean, st.std, st.n)
    ))


def write_welch(path: str | os.PathLike, rows: Iterable[tuple[int, str, str, WelchResult]]) -> None:
    _write_rows(path, WELCH_HEADER, (
        (it, a, b, r.t_statistic, r.degrees_of_freedom, r.p_value) for it, a, b, r in rows
    ))


def write_runtime(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    _write_rows(path, RUNTIME_HEADER, ((r[k] for k in RUNTIME_HEADER) for r in rows))
