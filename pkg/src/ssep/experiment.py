"""Synthetic benchmark: R-EP against PC-EP over a damping sweep.

Every trial draws a sparse weight vector from the spike-and-slab prior, a
training set with unit-norm inputs and a larger test set, runs PC-EP once and
R-EP once per damping value, and scores each posterior mean by test MSE.
Records are split by whether R-EP converged and summarized per damping value.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SSEPError
from .model import DEFAULT_EPS, ModelInstance
from .pc_ep import run_pcep
from .r_ep import EPResult, run_rep

log = logging.getLogger(__name__)

CSV_COLUMNS = ("trial_id", "tau", "method", "converged", "mse", "iterations", "final_energy", "status")
METHODS = ("pcep", "rep")

# failures we tag and keep going on; anything else is a bug and propagates
_TRIAL_ERRORS = (SSEPError, FloatingPointError, ValueError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 25
    n_train: int = 10
    n_test: int = 1000
    n_trials: int = 100
    slab_prob: float = 0.2
    slab_var: float = 1.0
    noise_std: float = 0.005
    damping_grid: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    rep_max_iter: int = 1000
    eps: float = DEFAULT_EPS
    seed: int = 0
    rep_tol: float = 1e-6
    outer_tol: float = 1e-8
    inner_tol: float = 1e-8
    max_outer: int = 200
    inner_max_iters: int = 500

    def __post_init__(self):
        object.__setattr__(self, "damping_grid", tuple(float(t) for t in self.damping_grid))
        for name in ("d", "n_train", "n_test", "n_trials", "rep_max_iter", "max_outer", "inner_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.damping_grid:
            raise ValueError("damping_grid is empty")
        for tau in self.damping_grid:
            if not 0.0 < tau <= 1.0:
                raise ValueError(f"damping values must lie in (0, 1], got {tau}")
        if len(set(self.damping_grid)) != len(self.damping_grid):
            raise ValueError("damping_grid has repeated values")
        if not 0.0 < self.slab_prob < 1.0:
            raise ValueError(f"slab_prob must lie in (0, 1), got {self.slab_prob}")
        for name in ("slab_var", "noise_std", "eps", "rep_tol", "outer_tol", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def noise_var(self) -> float:
        return self.noise_std**2


@dataclass
class TrialRecord:
    trial_id: int
    damping: float
    rep_converged: bool
    mse_rep: float
    mse_pcep: float
    rep_iterations: int
    pcep_outer_iterations: int
    final_energies: tuple  # (R-EP, PC-EP)
    pcep_converged: bool = False
    rep_status: str = "ok"
    pcep_status: str = "ok"
    pcep: Optional[EPResult] = field(default=None, repr=False, compare=False)
    pcep_trace: tuple = field(default=(), repr=False, compare=False)


# --- data -----------------------------------------------------------------

def stream(config: ExperimentConfig, trial_id: int, label: str) -> np.random.Generator:
    """Independent generator keyed by (seed, trial, purpose)."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(trial_id, key)))


def _unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def generate_trial(config: ExperimentConfig, trial_id: int):
    """Training model, test inputs, test targets and the generating weights."""
    rng = stream(config, trial_id, "weights")
    slab = rng.random(config.d) < config.slab_prob
    true_w = np.where(slab, rng.normal(0.0, math.sqrt(config.slab_var), config.d), 0.0)

    X = _unit_rows(stream(config, trial_id, "train_inputs"), config.n_train, config.d)
    y = X @ true_w + config.noise_std * stream(config, trial_id, "train_noise").standard_normal(config.n_train)
    test_X = _unit_rows(stream(config, trial_id, "test_inputs"), config.n_test, config.d)
    test_y = test_X @ true_w + config.noise_std * stream(config, trial_id, "test_noise").standard_normal(config.n_test)

    model = ModelInstance(X, y, config.noise_var, config.slab_prob, config.slab_var)
    return model, test_X, test_y, true_w


def evaluate_mse(w_hat, test_X, test_y) -> float:
    w_hat = np.asarray(w_hat, dtype=float)
    test_X = np.asarray(test_X, dtype=float)
    test_y = np.asarray(test_y, dtype=float)
    if test_X.ndim != 2 or test_X.shape != (test_y.shape[0], w_hat.shape[0]):
        raise ValueError(f"shape mismatch: X {test_X.shape}, y {test_y.shape}, w {w_hat.shape}")
    resid = test_y - test_X @ w_hat
    return float(np.mean(resid**2))


# --- running --------------------------------------------------------------

def _tag(exc) -> str:
    return type(exc).__name__


def _mse_or_nan(result, test_X, test_y):
    mse = evaluate_mse(result.mean, test_X, test_y)
    if not (np.isfinite(mse) and mse >= 0):
        raise FloatingPointError("non-finite test MSE")
    return mse


def run_trial(config: ExperimentConfig, trial_id: int) -> list:
    """One record per damping value; PC-EP does not depend on damping and runs once."""
    model, test_X, test_y, _ = generate_trial(config, trial_id)
    pcep, pcep_status, mse_pcep, trace = None, "ok", math.nan, ()
    try:
        pcep = run_pcep(model, eps=config.eps, outer_tol=config.outer_tol, max_outer=config.max_outer,
                        inner_tol=config.inner_tol, inner_max_iters=config.inner_max_iters)
        trace = tuple(pcep.energy_trace)
        mse_pcep = _mse_or_nan(pcep, test_X, test_y)
    except _TRIAL_ERRORS as exc:
        log.warning("trial %d: PC-EP failed: %s", trial_id, exc)
        pcep_status = _tag(exc)
        trace = tuple(getattr(exc, "trace", trace))

    records = []
    for tau in config.damping_grid:
        rep, rep_status, mse_rep = None, "ok", math.nan
        try:
            rep = run_rep(model, damping=tau, max_iter=config.rep_max_iter, tol=config.rep_tol, eps=config.eps)
            mse_rep = _mse_or_nan(rep, test_X, test_y)
        except _TRIAL_ERRORS as exc:
            log.warning("trial %d, tau %g: R-EP failed: %s", trial_id, tau, exc)
            rep_status = _tag(exc)
        records.append(TrialRecord(
            trial_id=trial_id,
            damping=tau,
            rep_converged=bool(rep is not None and rep.converged),
            mse_rep=mse_rep if rep_status == "ok" else math.nan,
            mse_pcep=mse_pcep,
            rep_iterations=rep.iterations if rep is not None else 0,
            pcep_outer_iterations=pcep.iterations if pcep is not None else 0,
            final_energies=(
                rep.energy_trace[-1] if rep is not None and rep.energy_trace else math.nan,
                pcep.energy_trace[-1] if pcep is not None else math.nan,
            ),
            pcep_converged=bool(pcep is not None and pcep.converged),
            rep_status=rep_status,
            pcep_status=pcep_status,
            pcep=pcep,
            pcep_trace=trace,
        ))
    return records


def run_sweep(config: ExperimentConfig, progress=None):
    """All trials in order; returns (records, tables)."""
    records = []
    for t in range(config.n_trials):
        records.extend(run_trial(config, t))
        if progress is not None:
            progress(t + 1, config.n_trials)
    return records, summarize(to_rows(records), config.damping_grid)


# --- rows, tables, files --------------------------------------------------

def to_rows(records) -> list:
    """Flatten records into one dict per (trial, tau, method), ordered by trial, tau, method."""
    rows = []
    for r in sorted(records, key=lambda r: (r.trial_id, r.damping)):
        rows.append(dict(trial_id=r.trial_id, tau=r.damping, method="pcep", converged=r.pcep_converged,
                         mse=r.mse_pcep, iterations=r.pcep_outer_iterations,
                         final_energy=r.final_energies[1], status=r.pcep_status,
                         rep_converged=r.rep_converged))
        rows.append(dict(trial_id=r.trial_id, tau=r.damping, method="rep", converged=r.rep_converged,
                         mse=r.mse_rep, iterations=r.rep_iterations,
                         final_energy=r.final_energies[0], status=r.rep_status,
                         rep_converged=r.rep_converged))
    return rows


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else "nan"
    return str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_csv(path) -> list:
    """Rows from a results file; R-EP convergence is attached to the PC-EP row of the same (trial, tau)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for raw in reader:
            rows.append(dict(
                trial_id=int(raw["trial_id"]),
                tau=float(raw["tau"]),
                method=raw["method"],
                converged=raw["converged"] == "1",
                mse=float(raw["mse"]),
                iterations=int(raw["iterations"]),
                final_energy=float(raw["final_energy"]),
                status=raw.get("status") or "ok",
            ))
    rep = {(r["trial_id"], r["tau"]): r["converged"] for r in rows if r["method"] == "rep"}
    for r in rows:
        r["rep_converged"] = rep.get((r["trial_id"], r["tau"]), False)
    return rows


@dataclass
class Cell:
    mean: float
    se: float
    count: int


def mean_se(values) -> Cell:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return Cell(math.nan, math.nan, 0)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return Cell(float(np.mean(v)), se, int(v.size))


@dataclass
class SummaryRow:
    tau: float
    pcep: Cell
    rep: Cell
    sets: int


@dataclass
class Tables:
    not_converged: list
    converged: list
    failures: int


def summarize(rows, taus=None) -> Tables:
    """Per-tau mean MSE +- standard error, split by R-EP convergence.

    A (trial, tau) pair counts toward ``sets`` when R-EP did not fail; failed
    methods are left out of their method's mean and counted in ``failures``.
    """
    if taus is None:
        taus = sorted({r["tau"] for r in rows})
    failures = sum(1 for r in rows if r["status"] != "ok")
    tables = {True: [], False: []}
    for tau in taus:
        at = [r for r in rows if r["tau"] == tau]
        rep_ok = {r["trial_id"] for r in at if r["method"] == "rep" and r["status"] == "ok"}
        for conv in (False, True):
            part = [r for r in at if r["rep_converged"] == conv and r["trial_id"] in rep_ok]
            mse = {m: [r["mse"] for r in part if r["method"] == m and r["status"] == "ok"] for m in METHODS}
            sets = len({r["trial_id"] for r in part})
            tables[conv].append(SummaryRow(tau, mean_se(mse["pcep"]), mean_se(mse["rep"]), sets))
    return Tables(not_converged=tables[False], converged=tables[True], failures=failures)


def _cell(c: Cell) -> str:
    if c.count == 0:
        return "n/a"
    if math.isnan(c.se):
        return f"{c.mean:.4f}"
    return f"{c.mean:.4f} ± {c.se:.4f}"


def tables_markdown(tables: Tables) -> str:
    out = []
    for title, body in (("R-EP does not converge", tables.not_converged),
                        ("R-EP converges", tables.converged)):
        out.append(f"### {title}\n")
        out.append("| tau | PC-EP MSE | R-EP MSE | sets |")
        out.append("|---:|---:|---:|---:|")
        for row in body:
            out.append(f"| {row.tau:g} | {_cell(row.pcep)} | {_cell(row.rep)} | {row.sets} |")
        out.append("")
    out.append("± is the standard error of the mean over test sets. "
               f"Failed method runs excluded from the means: {tables.failures}.")
    return "\n".join(out) + "\n"


def tables_csv(tables: Tables) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["partition", "tau", "pcep_mse", "pcep_se", "rep_mse", "rep_se", "sets"])
    for name, body in (("not_converged", tables.not_converged), ("converged", tables.converged)):
        for row in body:
            w.writerow([name, _fmt(row.tau), _fmt(row.pcep.mean), _fmt(row.pcep.se),
                        _fmt(row.rep.mean), _fmt(row.rep.se), row.sets])
    return buf.getvalue()


# --- config files ---------------------------------------------------------

def _parse_value(name, text, kind):
    text = text.strip()
    if name == "damping_grid":
        parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    raise ValueError(f"unsupported field type for {name}")


def parse_config(text: str) -> ExperimentConfig:
    """``key = value`` lines, ``#`` comments; keys are ExperimentConfig field names."""
    kinds = {f.name: type(f.default) for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value, kinds[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if f.name == "damping_grid":
            v = ", ".join(_fmt(t) for t in v)
        lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
