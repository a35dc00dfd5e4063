"""Seeded Monte Carlo experiments with fixed-schema CSV output.

Four experiments are available:

* ``mse_vs_snr``: channel-estimation MSE against SNR for each waveform.
* ``overhead_vs_pd``: pilot overhead against the delay activation probability.
* ``xk_distribution``: exact, bound and empirical CCDF of ``X_k``.
* ``model_validation``: marginal and independence checks of the sparsity models.

Trial ``i`` draws from a generator seeded by ``SeedSequence([seed, i])`` (the
sweep index is appended for the overhead sweep), so every row can be
reproduced in isolation and results do not depend on worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import ccdf_table, occupancy_counts, select_chirp_slope, write_ccdf_csv
from .baselines import (
    OfdmTrialConfig,
    calibrate_ofdm_pilots,
    equal_overhead_symbols,
    ofdm_overhead,
    otfs_overhead,
    realized_delay_count,
    run_ofdm_trial,
    scm_overhead,
)
from .channel import SparsityModel, SparsityType, sample_gains, sample_profile, sample_profiles, validate_independence
from .daft import AfdmParams
from .errors import ConfigurationError, InfeasibleTargetError
from .estimator import (
    AfdmTrialConfig,
    afdm_overhead,
    build_measurement_matrix,
    calibrate_pilot_count,
    expected_mse,
    place_pilots,
    run_afdm_trial,
    snr_to_noise,
)

__all__ = [
    "EXPERIMENTS",
    "CSV_COLUMNS",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "trial_seed",
    "select_chirp_slope",
]

EXPERIMENTS = ("mse_vs_snr", "overhead_vs_pd", "xk_distribution", "model_validation")
CSV_COLUMNS = ["experiment", "waveform", "seed", "trial", "p_d", "p_D", "P", "M", "snr_db", "overhead_samples", "mse"]
VALIDATION_COLUMNS = ["kind", "check", "l1", "q1", "l2", "q2", "empirical", "expected", "z", "passed"]

MSE_WAVEFORMS = ("afdm", "ofdm", "ofdm_eq")
OVERHEAD_WAVEFORMS = ("afdm", "scm", "ofdm", "otfs")
# fixed stream index per waveform so adding one never perturbs another
_STREAM = {"channel": 0, "afdm": 1, "ofdm": 2, "ofdm_eq": 3, "scm": 4, "otfs": 5}

_DEFAULT_MODEL = {"kind": "type1", "L": 60, "Q": 15, "p_d": 0.2, "p_D": 0.2}
_DEFAULT_AFDM = {"N": 8192, "P": 1, "c2": 0.0, "L_cpp": None}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``afdm["P"]`` may be ``"auto"`` to apply :func:`select_chirp_slope` at
    every sweep point; ``afdm["L_cpp"]`` defaults to ``L - 1``.  ``M`` fixes
    the AFDM pilot count instead of calibrating it per realization.
    """

    experiment: str = "mse_vs_snr"
    waveforms: list[str] | None = None
    model: dict[str, Any] = field(default_factory=lambda: dict(_DEFAULT_MODEL))
    afdm: dict[str, Any] = field(default_factory=lambda: dict(_DEFAULT_AFDM))
    snr_db: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    trials: int = 100
    seed: int = 0
    target_mse: float = 1e-3
    target_snr_db: float = 20.0
    M: int | None = None
    pilot_energy: float | str = "zone"
    spacing: str = "incoherent"
    p_d_grid: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    Q0: int = 1
    N_otfs: int = 64
    M_otfs: int = 128
    xk_draws: int = 100_000
    xk_M: list[int] | None = None
    validation_draws: int = 100_000
    validation_kinds: list[str] | None = None
    with_data: bool = True
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {', '.join(unknown)}")
        d = dict(d)
        for key, default in (("model", _DEFAULT_MODEL), ("afdm", _DEFAULT_AFDM)):
            if key in d:
                if not isinstance(d[key], dict):
                    raise ConfigurationError(f"{key}: expected an object")
                d[key] = {**default, **d[key]}
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {self.experiment!r}")
        allowed = MSE_WAVEFORMS if self.experiment == "mse_vs_snr" else OVERHEAD_WAVEFORMS
        if self.waveforms is None:
            self.waveforms = ["afdm"] if self.experiment == "mse_vs_snr" else list(OVERHEAD_WAVEFORMS)
        bad = [w for w in self.waveforms if w not in allowed]
        if bad or not self.waveforms:
            raise ConfigurationError(f"waveforms: {bad or 'empty'} not in {', '.join(allowed)}")
        for name in ("trials", "workers", "xk_draws", "validation_draws", "N_otfs", "M_otfs", "Q0"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigurationError(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"seed: must be a non-negative integer, got {self.seed!r}")
        if not self.snr_db:
            raise ConfigurationError("snr_db: at least one SNR point is required")
        if not all(isinstance(s, (int, float)) and math.isfinite(s) for s in self.snr_db):
            raise ConfigurationError(f"snr_db: entries must be finite numbers, got {self.snr_db!r}")
        if not self.target_mse > 0:
            raise ConfigurationError(f"target_mse: must be positive, got {self.target_mse!r}")
        if not self.p_d_grid or not all(0 < p < 1 for p in self.p_d_grid):
            raise ConfigurationError(f"p_d_grid: entries must lie in (0, 1), got {self.p_d_grid!r}")
        if self.M is not None and (not isinstance(self.M, int) or self.M < 1):
            raise ConfigurationError(f"M: must be a positive integer or null, got {self.M!r}")
        try:
            model = self.sparsity_model()
        except (ConfigurationError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"model: {exc}") from None
        P = self.afdm.get("P", 1)
        if P != "auto" and (not isinstance(P, int) or P < 1):
            raise ConfigurationError(f"afdm.P: must be a positive integer or 'auto', got {P!r}")
        try:
            self.afdm_params(model)
        except (ConfigurationError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"afdm: {exc}") from None
        if self.validation_kinds is not None:
            for k in self.validation_kinds:
                if k not in {t.value for t in SparsityType}:
                    raise ConfigurationError(f"validation_kinds: unknown sparsity type {k!r}")

    def sparsity_model(self, **overrides) -> SparsityModel:
        return SparsityModel.from_dict({**self.model, **overrides})

    def afdm_params(self, model: SparsityModel) -> AfdmParams:
        a = self.afdm
        P = select_chirp_slope(model) if a.get("P", 1) == "auto" else a.get("P", 1)
        L_cpp = a.get("L_cpp")
        return AfdmParams(int(a["N"]), int(P), float(a.get("c2", 0.0)), model.L - 1 if L_cpp is None else int(L_cpp))


@dataclass
class ExperimentResult:
    """CSV text, human summary and overall status of one experiment."""

    csv: str
    summary: str
    rows: list[dict]
    passed: bool = True


def trial_seed(master: int, *keys: int) -> int:
    """64-bit seed for one trial, derived from the master seed and its indices."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1, dtype=np.uint64)[0])


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM[name],)))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _row(config, waveform, seed, trial, model, P, M, snr, overhead, mse) -> dict:
    return {
        "experiment": config.experiment,
        "waveform": waveform,
        "seed": seed,
        "trial": trial,
        "p_d": float(model.p_d),
        "p_D": float(model.p_D),
        "P": P,
        "M": M,
        "snr_db": float(snr),
        "overhead_samples": float(overhead),
        "mse": float(mse),
    }


def _mse_trial(config: ExperimentConfig, trial: int) -> list[dict]:
    model = config.sparsity_model()
    params = config.afdm_params(model)
    seed = trial_seed(config.seed, trial)
    ch_rng = _stream(seed, "channel")
    profile = sample_profile(model, ch_rng)
    channel = sample_gains(profile, model, ch_rng)
    snrs = [float(s) for s in config.snr_db]
    rows = []
    afdm_M = config.M
    for w in config.waveforms:
        rng = _stream(seed, w)
        if w == "afdm":
            cfg = AfdmTrialConfig(
                model, params, snrs, config.M, config.target_mse, config.target_snr_db,
                config.with_data, config.spacing, config.pilot_energy,
            )
            for r in run_afdm_trial(cfg, rng, channel=channel):
                afdm_M = r.M
                rows.append(_row(config, w, seed, trial, model, params.P, r.M, r.snr_db, r.overhead_samples, r.mse))
            continue
        if w == "ofdm":
            n_sym, n_sub, _ = calibrate_ofdm_pilots(
                channel, model, params.N, config.target_mse, config.target_snr_db, trial_seed(seed, 1), config.Q0
            )
        else:
            if afdm_M is None:
                afdm_M = _calibrated_M(config, model, params, profile)
            n_sub = max(1, realized_delay_count(profile))
            n_sym = equal_overhead_symbols(afdm_overhead(afdm_M, params, model), model, n_sub, config.Q0)
        cfg = OfdmTrialConfig(model, params.N, snrs, config.Q0, n_sym, n_sub, config.with_data)
        for r in run_ofdm_trial(cfg, rng, channel=channel):
            rows.append(_row(config, w, seed, trial, model, params.P, r.M, r.snr_db, r.overhead_samples, r.mse))
    return rows


def _calibrated_M(config, model, params, profile) -> int:
    try:
        return calibrate_pilot_count(
            config.target_mse, config.target_snr_db, model, params, profile,
            spacing=config.spacing, pilot_energy=config.pilot_energy,
        )
    except InfeasibleTargetError as exc:
        return exc.best_M


def _overhead_trial(config: ExperimentConfig, point: int, trial: int) -> list[dict]:
    model = config.sparsity_model(p_d=config.p_d_grid[point])
    params = config.afdm_params(model)
    seed = trial_seed(config.seed, point, trial)
    profile = sample_profile(model, _stream(seed, "channel"))
    snr = config.target_snr_db
    rows = []
    for w in config.waveforms:
        if w == "afdm":
            M = config.M if config.M is not None else _calibrated_M(config, model, params, profile)
            mse = float("nan")
            if M > 0 and profile.n_active:
                scheme = place_pilots(params, model, M, spacing=config.spacing, pilot_energy=config.pilot_energy)
                Mp = build_measurement_matrix(scheme, profile, params)
                mse = expected_mse(Mp, model.sigma_alpha_sq, snr_to_noise(snr))
            rows.append(_row(config, w, seed, trial, model, params.P, M, snr, afdm_overhead(M, params, model), mse))
        elif w == "scm":
            rep = scm_overhead(model, profile)
            rows.append(_row(config, w, seed, trial, model, params.P, int(rep.expected_pilot_count), snr,
                             rep.total_overhead_samples, float("nan")))
        elif w == "ofdm":
            rep = ofdm_overhead(model, config.Q0, profile)
            rows.append(_row(config, w, seed, trial, model, params.P, int(rep.expected_pilot_count), snr,
                             rep.total_overhead_samples, float("nan")))
        else:
            rep = otfs_overhead(model, config.N_otfs, config.M_otfs)
            rows.append(_row(config, w, seed, trial, model, params.P, 1, snr, rep.total_overhead_samples, float("nan")))
    return rows


def _closed_form_rows(config: ExperimentConfig, point: int) -> list[dict]:
    """Expected overheads of the baselines, tagged ``trial = -1``."""
    model = config.sparsity_model(p_d=config.p_d_grid[point])
    P = config.afdm_params(model).P
    reports = {
        "scm": lambda: scm_overhead(model),
        "ofdm": lambda: ofdm_overhead(model, config.Q0),
        "otfs": lambda: otfs_overhead(model, config.N_otfs, config.M_otfs),
    }
    rows = []
    for w in config.waveforms:
        if w in reports:
            rep = reports[w]()
            rows.append(_row(config, w, config.seed, -1, model, P, float(rep.expected_pilot_count),
                             config.target_snr_db, rep.total_overhead_samples, float("nan")))
    return rows


def _run_task(task):
    kind, config, keys = task
    return _mse_trial(config, *keys) if kind == "mse" else _overhead_trial(config, *keys)


def _map(config: ExperimentConfig, tasks: list) -> list:
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_run_task, tasks))
    return [_run_task(t) for t in tasks]


def _to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _ci(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    half = 1.96 * v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else float("nan")
    return float(v.mean()), half


def _summarize(rows: list[dict], key: str) -> str:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["trial"] >= 0:
            groups.setdefault((r["waveform"], r[key]), []).append(r)
    lines = [f"{'waveform':<9} {key:>7} {'n':>4}  {'mean M':>8}  {'overhead':>22}  {'mse':>24}"]
    for (w, x), rs in groups.items():
        m = np.mean([r["M"] for r in rs])
        o, oh = _ci([r["overhead_samples"] for r in rs])
        e, eh = _ci([r["mse"] for r in rs])
        lines.append(f"{w:<9} {x:>7g} {len(rs):>4}  {m:>8.3f}  {o:>10.1f} +/- {oh:<8.1f}  {e:>11.3e} +/- {eh:<9.2e}")
    closed = [r for r in rows if r["trial"] < 0]
    if closed:
        lines.append("expected baseline overhead:")
        lines += [f"  {r['waveform']:<6} p_d={r['p_d']:g}: {r['overhead_samples']:.1f}" for r in closed]
    return "\n".join(lines)


def _run_mse(config: ExperimentConfig) -> ExperimentResult:
    results = _map(config, [("mse", config, (i,)) for i in range(config.trials)])
    rows = [r for trial_rows in results for r in trial_rows]
    return ExperimentResult(_to_csv(rows, CSV_COLUMNS), _summarize(rows, "snr_db"), rows)


def _run_overhead(config: ExperimentConfig) -> ExperimentResult:
    tasks = [("overhead", config, (j, i)) for j in range(len(config.p_d_grid)) for i in range(config.trials)]
    results = iter(_map(config, tasks))
    rows = []
    for j in range(len(config.p_d_grid)):
        rows += _closed_form_rows(config, j)
        for _ in range(config.trials):
            rows += next(results)
    return ExperimentResult(_to_csv(rows, CSV_COLUMNS), _summarize(rows, "p_d"), rows)


def _run_xk(config: ExperimentConfig) -> ExperimentResult:
    model = config.sparsity_model()
    P = config.afdm_params(model).P
    rng = np.random.default_rng(trial_seed(config.seed, 0))
    counts = occupancy_counts(sample_profiles(model, rng, config.xk_draws), P)
    M_values = config.xk_M if config.xk_M is not None else list(range(int(counts.max()) + 1))
    rows = ccdf_table(model, P, M_values, counts)
    n = config.xk_draws
    # the bound is tight on interior bins, so allow sampling noise around it
    violations = [
        r for r in rows
        if r["empirical"] > r["bound"] + 4 * math.sqrt(r["bound"] * (1 - r["bound"]) / n) + 1.0 / n
    ]
    summary = (
        f"X_k over {config.xk_draws} draws ({model.kind.value}, P={P}): max observed {int(counts.max())}, "
        f"bound violations {len(violations)}"
    )
    return ExperimentResult(write_ccdf_csv(rows), summary, rows, passed=not violations)


def _run_validation(config: ExperimentConfig) -> ExperimentResult:
    kinds = config.validation_kinds or [t.value for t in SparsityType]
    rows, lines, ok = [], [], True
    for i, kind in enumerate(kinds):
        overrides = {"kind": kind}
        if kind != "type3":
            overrides.update(R=None, cluster="cyclic")
        model = config.sparsity_model(**overrides)
        rep = validate_independence(model, config.validation_draws, np.random.default_rng(trial_seed(config.seed, i)))
        ok &= rep.passed
        lines.append(rep.summary())
        Q = model.Q
        for (l, j), z in np.ndenumerate(rep.marginal_z):
            rows.append({"kind": kind, "check": "marginal", "l1": l, "q1": j - Q, "l2": "", "q2": "",
                         "empirical": float(rep.marginals[l, j]), "expected": rep.expected_marginal,
                         "z": float(z), "passed": bool(rep.marginal_passed)})
        for label, pairs in (("pair", rep.pairs), ("same_row", rep.same_row_pairs)):
            for p in pairs:
                rows.append({"kind": kind, "check": label, "l1": p.cell1[0], "q1": p.cell1[1],
                             "l2": p.cell2[0], "q2": p.cell2[1], "empirical": float(p.joint),
                             "expected": float(p.expected), "z": float(p.z), "passed": bool(p.passed)})
    return ExperimentResult(_to_csv(rows, VALIDATION_COLUMNS), "\n".join(lines), rows, passed=bool(ok))


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run ``config`` and, when ``config.out`` is set and ``write`` is true, save the CSV."""
    config.validate()
    runner = {
        "mse_vs_snr": _run_mse,
        "overhead_vs_pd": _run_overhead,
        "xk_distribution": _run_xk,
        "model_validation": _run_validation,
    }[config.experiment]
    result = runner(config)
    if write and config.out:
        out = Path(config.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(result.csv)
    return result


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``config`` with non-``None`` fields replaced and re-validated."""
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
