"""Monte Carlo harness for the moment and MLE-process estimators.

Each replication draws its own independent random streams from
``numpy.random.SeedSequence(base_seed, spawn_key=(index,))``, spawning one
child per horizon, so a record depends only on ``(config, index)``.
Aggregation always runs over records sorted by index; serial and parallel
runs therefore produce identical reports.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .filter import log_likelihood_grid
from .mle import ConfigError, EstimationConfig, one_step_process, two_step_process
from .model import ModelSpec, ParameterDomain, StateSpace, ThetaParams, validate_model
from .moments import estimate_moments
from .simulate import ObservationPath, simulate_path

METHODS = ("moments", "one-step", "two-step")
CHI2_95 = float(stats.chi2.ppf(0.95, df=2))
RECORD_CSV_COLUMNS = (
    "index", "T", "method", "lambda_hat", "mu_hat", "z1", "z2", "chi2",
    "solvable", "i11", "i12", "i22", "error",
)


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    horizons: tuple[int, ...] = (250, 1000, 4000)
    step: float = 0.01
    replications: int = 400
    base_seed: int = 20240607
    methods: tuple[str, ...] = ("moments",)
    delta_one_step: float = 0.6
    delta_two_step: float = 0.4
    output_taus: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if int(self.replications) != self.replications or self.replications < 2:
            raise ConfigError(f"replications must be an integer >= 2, got {self.replications}",
                              "replications")
        hs = tuple(self.horizons)
        if not hs:
            raise ConfigError("horizons must be nonempty", "horizons")
        for T in hs:
            if int(T) != T or T < 1:
                raise ConfigError(f"horizons must be positive integers, got {T}", "horizons")
        per_unit = round(1.0 / self.step) if self.step > 0 else 0
        if per_unit < 1 or abs(per_unit * self.step - 1.0) > 1e-9:
            raise ConfigError(f"1/step must be an integer, got step={self.step}", "step")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}",
                              "methods")
        object.__setattr__(self, "horizons", tuple(int(T) for T in hs))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "output_taus", tuple(float(t) for t in self.output_taus))
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        validate_model(self.model)
        # surface delta/tau problems at construction time
        for method, name in (("one-step", "delta_one_step"), ("two-step", "delta_two_step")):
            try:
                self.estimation_config(method)
            except ConfigError as exc:
                raise ConfigError(str(exc), name if exc.field == "delta" else exc.field) from exc

    def estimation_config(self, method: str) -> EstimationConfig:
        delta = self.delta_one_step if method == "one-step" else self.delta_two_step
        return EstimationConfig(delta=delta, output_taus=self.output_taus, method=method)


def default_config(**overrides) -> ExperimentConfig:
    """Default regime: theta0 = (1, 1), y = (0, 1), domain (0.1, 5), h = 0.01."""
    model = ModelSpec(ThetaParams(1.0, 1.0), StateSpace(0.0, 1.0), ParameterDomain(0.1, 5.0))
    return ExperimentConfig(model=overrides.pop("model", model), **overrides)


@dataclass(frozen=True)
class MethodResult:
    T: int
    method: str
    lambda_hat: float = math.nan
    mu_hat: float = math.nan
    z1: float = math.nan
    z2: float = math.nan
    chi2: float = math.nan
    solvable: bool | None = None
    i11: float = math.nan
    i12: float = math.nan
    i22: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self, index: int) -> dict:
        out = {"index": index}
        for name in RECORD_CSV_COLUMNS[1:]:
            val = getattr(self, name)
            out[name] = "" if val is None else (int(val) if isinstance(val, bool) else val)
        return out


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    seed: tuple[int, int]
    results: tuple[MethodResult, ...]
    elapsed: float = field(default=0.0, compare=False)

    def rows(self) -> list[dict]:
        return [r.row(self.index) for r in self.results]


def replication_streams(base_seed: int, index: int, n: int) -> list[np.random.Generator]:
    """Independent generators for replication ``index`` (one per horizon)."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(index,))
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def _fmt_error(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _standardized(theta, theta0, fisher, t):
    """``sqrt(t) I^{1/2} (theta - theta0)`` with the symmetric square root."""
    w, v = np.linalg.eigh(fisher)
    if np.any(w <= 0):
        raise ValueError("empirical Fisher matrix is not positive definite")
    root = (v * np.sqrt(w)) @ v.T
    err = np.asarray(theta) - theta0
    z = math.sqrt(t) * root @ err
    return z, float(t * err @ fisher @ err)


def _apply_method(method, path, spec, config, T):
    states, domain = spec.states, spec.domain
    if method == "moments":
        est = estimate_moments(path, states, domain)
        return MethodResult(T, method, est.lambda_hat, est.mu_hat, solvable=est.stats.solvable)
    runner = one_step_process if method == "one-step" else two_step_process
    proc = runner(path, states, domain, config.estimation_config(method))
    rec = proc.final()
    theta0 = spec.theta.as_array()
    z, chi2 = _standardized(rec.theta, theta0, rec.fisher, rec.t)
    return MethodResult(
        T, method, float(rec.theta[0]), float(rec.theta[1]), float(z[0]), float(z[1]), chi2,
        solvable=proc.preliminary.stats.solvable,
        i11=float(rec.fisher[0, 0]), i12=float(rec.fisher[0, 1]), i22=float(rec.fisher[1, 1]),
    )


def run_replication(config: ExperimentConfig, index: int) -> ReplicationRecord:
    """Simulate one path per horizon and apply every configured method.

    Errors inside a method are caught and stored in the record so a batch
    keeps going.
    """
    if not 0 <= index < config.replications:
        raise IndexError(f"replication index {index} outside [0, {config.replications})")
    start = time.perf_counter()
    rngs = replication_streams(config.base_seed, index, len(config.horizons))
    results = []
    for T, rng in zip(config.horizons, rngs):
        try:
            _, path = simulate_path(config.model, T, config.step, rng, keep_hidden=False)
        except Exception as exc:  # noqa: BLE001 - recorded, not raised
            results.extend(MethodResult(T, m, error=_fmt_error(exc)) for m in config.methods)
            continue
        for method in config.methods:
            try:
                results.append(_apply_method(method, path, config.model, config, T))
            except Exception as exc:  # noqa: BLE001
                results.append(MethodResult(T, method, error=_fmt_error(exc)))
    return ReplicationRecord(index, (config.base_seed, index), tuple(results),
                             elapsed=time.perf_counter() - start)


@dataclass(frozen=True)
class CellSummary:
    """Statistics for one ``(T, method)`` cell of the experiment."""

    T: int
    method: str
    n_ok: int
    n_failed: int
    bias: tuple[float, float]
    mse: tuple[float, float]
    t_mse: tuple[float, float]
    cov_sqrt_t: tuple[tuple[float, float], tuple[float, float]]
    fraction_unsolvable: float
    coverage: float | None = None
    z_mean: tuple[float, float] | None = None
    z_var: tuple[float, float] | None = None
    z_corr: float | None = None

    @property
    def t_mse_total(self) -> float:
        return self.t_mse[0] + self.t_mse[1]


@dataclass(frozen=True)
class MCReport:
    cells: tuple[CellSummary, ...]
    qq: tuple[tuple[int, str, int, float, float], ...]
    n_replications: int
    warnings: tuple[str, ...] = ()

    def cell(self, T: int, method: str) -> CellSummary:
        for c in self.cells:
            if c.T == T and c.method == method:
                return c
        raise KeyError((T, method))

    def t_mse_ratios(self, method: str) -> list[float]:
        cs = sorted((c for c in self.cells if c.method == method), key=lambda c: c.T)
        return [b.t_mse_total / a.t_mse_total for a, b in zip(cs, cs[1:])]


QQ_CSV_COLUMNS = ("T", "method", "coordinate", "theoretical", "sample")


def _summarize(T, method, results, theta0, n_failed):
    est = np.array([[r.lambda_hat, r.mu_hat] for r in results])
    err = est - theta0
    bias = err.mean(axis=0)
    mse = (err**2).mean(axis=0)
    scaled = math.sqrt(T) * err
    cov = np.cov(scaled, rowvar=False) if len(results) > 1 else np.full((2, 2), math.nan)
    unsolv = float(np.mean([not r.solvable for r in results]))
    kw = {}
    qq = []
    if method == "moments":
        sd = scaled.std(axis=0, ddof=1)
        zs = (scaled - scaled.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    else:
        zs = np.array([[r.z1, r.z2] for r in results])
        chi2 = np.array([r.chi2 for r in results])
        kw = dict(
            coverage=float(np.mean(chi2 <= CHI2_95)),
            z_mean=tuple(float(v) for v in zs.mean(axis=0)),
            z_var=tuple(float(v) for v in zs.var(axis=0, ddof=1)),
            z_corr=float(np.corrcoef(zs, rowvar=False)[0, 1]),
        )
    n = zs.shape[0]
    theo = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    for j in range(2):
        for q, s in zip(theo, np.sort(zs[:, j])):
            qq.append((T, method, j + 1, float(q), float(s)))
    cell = CellSummary(
        T=T, method=method, n_ok=len(results), n_failed=n_failed,
        bias=tuple(float(v) for v in bias), mse=tuple(float(v) for v in mse),
        t_mse=tuple(float(T * v) for v in mse),
        cov_sqrt_t=tuple(tuple(float(x) for x in row) for row in cov),
        fraction_unsolvable=unsolv, **kw,
    )
    return cell, qq


def _empty_cell(T, method, n_failed):
    nan2 = (math.nan, math.nan)
    return CellSummary(T=T, method=method, n_ok=0, n_failed=n_failed, bias=nan2, mse=nan2,
                       t_mse=nan2, cov_sqrt_t=(nan2, nan2), fraction_unsolvable=math.nan)


def aggregate(config: ExperimentConfig, records: list[ReplicationRecord]) -> MCReport:
    records = sorted(records, key=lambda r: r.index)
    theta0 = config.model.theta.as_array()
    cells, qq = [], []
    for T in config.horizons:
        for method in config.methods:
            res = [r for rec in records for r in rec.results if r.T == T and r.method == method]
            good = [r for r in res if r.ok]
            if not good:
                if res:
                    cells.append(_empty_cell(T, method, len(res)))
                continue
            cell, q = _summarize(T, method, good, theta0, len(res) - len(good))
            cells.append(cell)
            qq.extend(q)
    if not any(c.n_ok for c in cells):
        raise ExperimentError("every replication failed")
    notes = validate_model(config.model).warnings
    return MCReport(tuple(cells), tuple(qq), len(records), tuple(notes))


def run_records(config: ExperimentConfig, workers: int = 1) -> list[ReplicationRecord]:
    idx = range(config.replications)
    if workers <= 1:
        return [run_replication(config, i) for i in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        recs = list(pool.map(run_replication, [config] * config.replications, idx))
    return sorted(recs, key=lambda r: r.index)


def run_monte_carlo(config: ExperimentConfig, out_dir=None, workers: int = 1) -> MCReport:
    """Run all replications, aggregate, and optionally write the artifacts.

    With ``out_dir`` set, a run directory ``<config-hash>-<timestamp>`` is
    created there holding ``records.csv``, ``report.json``, ``qq_data.csv``
    and ``manifest.json``.
    """
    records = run_records(config, workers)
    if all(not r.ok for rec in records for r in rec.results):
        raise ExperimentError("every replication failed")
    report = aggregate(config, records)
    if out_dir is not None:
        from .io import write_mc_run

        write_mc_run(out_dir, config, records, report)
    return report


def grid_mle_oracle(path: ObservationPath, states: StateSpace, domain: ParameterDomain,
                    grid_n: int = 21, margin: float | None = None) -> ThetaParams:
    """Brute-force likelihood maximiser on a ``grid_n x grid_n`` lattice.

    The lattice spans ``[c0 + margin, c1 - margin]`` in each coordinate;
    ``margin`` defaults to 1% of ``c1 - c0``. Ties go to the smallest
    ``lambda``, then the smallest ``mu``.
    """
    if grid_n < 5:
        raise ValueError(f"grid_n must be >= 5, got {grid_n}")
    axis = lattice_axis(domain, grid_n, margin)
    lam, mu = np.meshgrid(axis, axis, indexing="ij")
    ll = log_likelihood_grid(lam, mu, states, path).reshape(grid_n, grid_n)
    # argmax returns the first maximum in C order: smallest lambda, then mu
    i, j = np.unravel_index(int(np.argmax(ll)), ll.shape)
    return ThetaParams(float(axis[i]), float(axis[j]))


def lattice_axis(domain: ParameterDomain, grid_n: int, margin: float | None = None) -> np.ndarray:
    margin = 0.01 * (domain.c1 - domain.c0) if margin is None else float(margin)
    lo, hi = domain.c0 + margin, domain.c1 - margin
    if not lo < hi:
        raise ValueError("margin leaves an empty lattice")
    return np.linspace(lo, hi, grid_n)

