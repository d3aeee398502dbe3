"""Command-line driver: experiment configs, CSV and JSON artifacts, replay.

Usage: anomalography <mode> --config config.json [--key value ...]

Modes: simulate, batch, online-rls, online-sgd, baseline-pca,
baseline-anomography. Configs are flat JSON objects whose keys mirror
ExperimentConfig; any key can be overridden on the command line. All
output files are deterministic functions of (config, seed): matrices go
to headerless UTF-8 CSV with LF newlines and the literal token NA for
missing entries, JSON summaries are key-sorted, and wall-clock time is
reported on stderr only.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    AnomalographyError,
    AnomalyMap,
    DimensionMismatchError,
    Dims,
    HyperParams,
    Observation,
    ObservationMask,
    RoutingMatrix,
    validate,
)
from . import batch as batch_mod
from . import evaluation as eval_mod
from . import netsim
from .online import run_tracker


class ConfigError(AnomalographyError):
    """Invalid configuration or incompatible input files (exit code 1)."""


class CsvFormatError(AnomalographyError):
    """Malformed CSV input (exit code 2)."""


# ---------------------------------------------------------------------------
# CSV round trip


def _fmt_float(x: float) -> str:
    return repr(float(x))


def save_matrix_csv(path, matrix: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write a dense matrix as headerless CSV; masked-out entries become NA.

    Floats are rendered with shortest round-trip formatting, so a
    save/load cycle is bit-exact.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    lines = []
    for i in range(matrix.shape[0]):
        cells = []
        for j in range(matrix.shape[1]):
            if mask is not None and not mask[i, j]:
                cells.append("NA")
            else:
                cells.append(_fmt_float(matrix[i, j]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_matrix_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a headerless CSV matrix; returns (values, observed_mask).

    NA tokens yield mask False and value 0. Ragged rows and unparsable
    tokens raise CsvFormatError naming the offending line (and column).
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    masks = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise CsvFormatError(f"{path}: line {lineno} has {len(cells)} cells, expected {width}")
        vals = []
        obs = []
        for col, cell in enumerate(cells, start=1):
            cell = cell.strip()
            if cell == "NA":
                vals.append(0.0)
                obs.append(False)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvFormatError(f"{path}: line {lineno}, column {col}: bad token {cell!r}") from None
            obs.append(True)
        rows.append(vals)
        masks.append(obs)
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    return np.array(rows, dtype=np.float64), np.array(masks, dtype=bool)


def save_triplets_csv(path, amap: AnomalyMap) -> None:
    """Write (t, f, amplitude) rows, slot index 1-based, sorted by (t, f)."""
    order = np.lexsort((amap.flows, amap.times))
    lines = [
        f"{int(amap.times[i]) + 1},{int(amap.flows[i])},{_fmt_float(amap.amplitudes[i])}"
        for i in order
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n")


def load_triplets_csv(path, n_flows: int, horizon: int) -> np.ndarray:
    """Read (t, f, amplitude) rows into a dense F x T panel."""
    dense = np.zeros((n_flows, horizon))
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        cells = line.split(",")
        if len(cells) != 3:
            raise CsvFormatError(f"{path}: line {lineno}: expected t,f,amplitude")
        try:
            t, f, amp = int(cells[0]), int(cells[1]), float(cells[2])
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: bad token") from None
        if not (1 <= t <= horizon and 0 <= f < n_flows):
            raise CsvFormatError(f"{path}: line {lineno}: index out of range")
        dense[f, t - 1] = amp
    return dense


# ---------------------------------------------------------------------------
# Configuration


_MODES = ("simulate", "batch", "online-rls", "online-sgd", "baseline-pca", "baseline-anomography")


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field is a JSON key and a
    --key value override. Exactly one input source must be set: synthetic
    (n_nodes) or files (y_csv)."""

    mode: str = ""
    out_dir: str = ""
    seed: int = 0
    # synthetic source
    n_nodes: int | None = None
    comm_range: float = 0.35
    true_rank: int = 2
    sigma: float = 0.01
    anomaly_prob: float = 0.005
    obs_prob: float = 1.0
    horizon: int = 100
    amplitude: float = 1.0
    churn_alpha: float = 0.0
    # file source
    y_csv: str | None = None
    mask_csv: str | None = None
    routing_csv: str | None = None
    routing_schedule_csv: str | None = None
    truth_a_csv: str | None = None
    truth_x_csv: str | None = None
    # penalties and solver knobs
    lam_star: float = 0.36
    lam_one: float = 0.11
    beta: float = 0.99
    rho: int = 5
    detect_threshold: float = 0.1
    lasso_tol: float = 1e-8
    lasso_max_passes: int = 200
    bcd_tol: float = 1e-6
    bcd_max_iters: int = 500
    eta: float = 1.5
    # evaluation options
    cost_stride: int = 0
    monitored_flows: list = field(default_factory=list)
    roc_thresholds: list = field(default_factory=list)
    # baselines
    baseline_rank: int = 2
    pca_energy_threshold: float | None = None
    use_fast_rls: bool | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**mapping)

    def hyper(self) -> HyperParams:
        try:
            return HyperParams(
                lam_star=self.lam_star,
                lam_one=self.lam_one,
                beta=self.beta,
                rho=self.rho,
                detect_threshold=self.detect_threshold,
                lasso_tol=self.lasso_tol,
                lasso_max_passes=self.lasso_max_passes,
                bcd_tol=self.bcd_tol,
                bcd_max_iters=self.bcd_max_iters,
                eta=self.eta,
                seed=self.seed,
            )
        except AnomalographyError as exc:
            raise ConfigError(str(exc)) from exc

    def synth(self) -> netsim.SynthConfig:
        try:
            return netsim.SynthConfig(
                n_nodes=self.n_nodes,
                comm_range=self.comm_range,
                true_rank=self.true_rank,
                sigma=self.sigma,
                anomaly_prob=self.anomaly_prob,
                obs_prob=self.obs_prob,
                horizon=self.horizon,
                seed=self.seed,
                amplitude=self.amplitude,
            )
        except AnomalographyError as exc:
            raise ConfigError(str(exc)) from exc

    def check(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {', '.join(_MODES)}; got {self.mode!r}")
        if not self.out_dir:
            raise ConfigError("out_dir is required")
        synthetic = self.n_nodes is not None
        from_files = self.y_csv is not None
        if synthetic == from_files:
            raise ConfigError("exactly one input source: set n_nodes (synthetic) or y_csv (files)")
        if self.mode == "simulate" and not synthetic:
            raise ConfigError("simulate mode needs a synthetic source")
        if from_files and self.routing_csv is None and self.routing_schedule_csv is None:
            raise ConfigError("file input needs routing_csv or routing_schedule_csv")
        if from_files and self.routing_csv is not None and self.routing_schedule_csv is not None:
            raise ConfigError("give routing_csv or routing_schedule_csv, not both")
        if self.mode == "batch" and self.churn_alpha > 0:
            raise ConfigError("batch mode assumes stationary routing (churn_alpha must be 0)")
        if not 0.0 <= self.churn_alpha <= 1.0:
            raise ConfigError("churn_alpha must lie in [0, 1]")
        if self.mode.startswith("baseline") and synthetic and self.obs_prob < 1.0:
            raise ConfigError("baselines need fully observed data (obs_prob = 1)")
        if self.mode == "baseline-pca" and self.pca_energy_threshold is None:
            raise ConfigError("baseline-pca needs pca_energy_threshold")
        if self.use_fast_rls and self.beta != 1.0:
            raise ConfigError("use_fast_rls requires beta = 1")
        if self.cost_stride < 0:
            raise ConfigError("cost_stride must be nonnegative")
        bad = [f for f in self.monitored_flows if not isinstance(f, int) or f < 0]
        if bad:
            raise ConfigError(f"monitored_flows must be nonnegative integers, got {bad}")


# ---------------------------------------------------------------------------
# Stream replay from files


def replay_stream(y_csv, mask_csv=None, routing_csv=None, routing_schedule_csv=None) -> list[Observation]:
    """Rebuild the observation sequence from CSV artifacts.

    The observed set is the non-NA pattern of y.csv, intersected with a
    0/1 mask file when one is given. Routing comes from a single matrix
    or from a schedule of (start_slot, file) epochs that must start at
    slot 1 and ascend. Every slot is dimension-checked; errors name the
    offending slot.
    """
    Y, observed = load_matrix_csv(y_csv)
    n_links, horizon = Y.shape
    if mask_csv is not None:
        mask_vals, mask_obs = load_matrix_csv(mask_csv)
        if mask_vals.shape != Y.shape:
            raise DimensionMismatchError("mask_csv", "shape must match y_csv")
        observed = observed & mask_obs & (mask_vals != 0.0)
    epochs: list[tuple[int, RoutingMatrix]] = []
    if routing_schedule_csv is not None:
        base = Path(routing_schedule_csv).parent
        text = Path(routing_schedule_csv).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            cells = line.split(",", 1)
            if len(cells) != 2:
                raise CsvFormatError(f"{routing_schedule_csv}: line {lineno}: expected start_slot,file")
            try:
                start = int(cells[0])
            except ValueError:
                raise CsvFormatError(f"{routing_schedule_csv}: line {lineno}: bad slot index") from None
            values, full = load_matrix_csv(base / cells[1].strip())
            if not full.all():
                raise CsvFormatError(f"{cells[1].strip()}: routing matrices cannot contain NA")
            epochs.append((start, RoutingMatrix(values)))
        if not epochs or epochs[0][0] != 1:
            raise ConfigError("routing schedule must start at slot 1")
        starts = [s for s, _ in epochs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("routing schedule slots must ascend")
        if starts[-1] > horizon:
            raise ConfigError("routing schedule extends past the horizon")
    elif routing_csv is not None:
        values, full = load_matrix_csv(routing_csv)
        if not full.all():
            raise CsvFormatError(f"{routing_csv}: routing matrices cannot contain NA")
        epochs = [(1, RoutingMatrix(values))]
    else:
        raise ConfigError("routing_csv or routing_schedule_csv is required")
    observations = []
    epoch_idx = 0
    for t in range(1, horizon + 1):
        while epoch_idx + 1 < len(epochs) and epochs[epoch_idx + 1][0] <= t:
            epoch_idx += 1
        routing = epochs[epoch_idx][1]
        obs = Observation(
            y=Y[:, t - 1],
            mask=ObservationMask.from_bool(observed[:, t - 1]),
            routing=routing,
            t=t,
        )
        try:
            validate(obs, Dims(n_links, routing.n_flows, horizon, 1))
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(exc.field_name, f"slot {t}: {exc}") from exc
        observations.append(obs)
    return observations


# ---------------------------------------------------------------------------
# Experiment drivers


def _json_value(x):
    if x is None or isinstance(x, (bool, int, str)):
        return x
    if isinstance(x, float):
        return x if np.isfinite(x) else None
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return _json_value(float(x))
    raise TypeError(f"cannot serialize {type(x)!r}")


def _write_summary(out_dir: Path, payload: dict) -> None:
    text = json.dumps(_json_value(payload), sort_keys=True, indent=2)
    (out_dir / "summary.json").write_text(text + "\n", encoding="utf-8", newline="\n")


def _config_echo(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def _report_dict(report) -> dict:
    return {
        "p_d": report.p_d,
        "p_fa": report.p_fa,
        "detections": report.detections,
        "positives": report.positives,
        "false_alarms": report.false_alarms,
        "negatives": report.negatives,
    }


def _load_inputs(cfg: ExperimentConfig):
    """Materialize (observations, truth_x, truth_a); truths may be None."""
    if cfg.n_nodes is not None:
        topo = netsim.gen_rgg(cfg.n_nodes, cfg.comm_range, cfg.seed)
        if cfg.churn_alpha > 0:
            routing_src = netsim.churn_routing_stream(topo, cfg.churn_alpha, cfg.seed)
        else:
            routing_src = netsim.min_hop_routing(topo)
        slots = list(netsim.gen_stream(cfg.synth(), routing_src))
        observations = [s.obs for s in slots]
        truth_x = np.column_stack([s.x_true for s in slots])
        truth_a = np.column_stack([s.a_true for s in slots])
        return observations, truth_x, truth_a
    observations = replay_stream(
        cfg.y_csv, cfg.mask_csv, cfg.routing_csv, cfg.routing_schedule_csv
    )
    n_links = observations[0].y.shape[0]
    n_flows = observations[0].routing.n_flows
    horizon = len(observations)
    truth_x = truth_a = None
    if cfg.truth_x_csv is not None:
        truth_x, full = load_matrix_csv(cfg.truth_x_csv)
        if truth_x.shape != (n_links, horizon) or not full.all():
            raise ConfigError("truth_x_csv must be a complete L x T matrix")
    if cfg.truth_a_csv is not None:
        truth_a = load_triplets_csv(cfg.truth_a_csv, n_flows, horizon)
    return observations, truth_x, truth_a


def _panelize(observations) -> tuple[np.ndarray, np.ndarray, RoutingMatrix]:
    """Stack a stationary-routing observation list into (Y, mask, routing)."""
    routing = observations[0].routing
    for obs in observations:
        if obs.routing is not routing and not np.array_equal(
            obs.routing.entries, routing.entries
        ):
            raise ConfigError("batch and baseline modes need a single routing matrix")
    Y = np.column_stack([obs.y for obs in observations])
    mask = np.column_stack([obs.mask.boolean(Y.shape[0]) for obs in observations])
    return Y, mask, routing


def _threshold_map(A: np.ndarray, threshold: float) -> AnomalyMap:
    A = A.copy()
    A[np.abs(A) < threshold] = 0.0
    return AnomalyMap.from_dense(A)


def _run_simulate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    observations, truth_x, truth_a = _load_inputs(cfg)
    Y = np.column_stack([obs.y for obs in observations])
    mask = np.column_stack(
        [obs.mask.boolean(Y.shape[0]) for obs in observations]
    )
    save_matrix_csv(out_dir / "y.csv", Y, mask)
    save_matrix_csv(out_dir / "truth_x.csv", truth_x)
    save_triplets_csv(out_dir / "truth_a.csv", AnomalyMap.from_dense(truth_a))
    routings: list[RoutingMatrix] = []
    starts: list[int] = []
    for t, obs in enumerate(observations, start=1):
        if not routings or obs.routing is not routings[-1]:
            routings.append(obs.routing)
            starts.append(t)
    if len(routings) == 1:
        save_matrix_csv(out_dir / "routing.csv", routings[0].entries)
    else:
        lines = []
        for i, (start, routing) in enumerate(zip(starts, routings)):
            name = f"routing_{i:04d}.csv"
            save_matrix_csv(out_dir / name, routing.entries)
            lines.append(f"{start},{name}")
        (out_dir / "routing_schedule.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8", newline="\n"
        )
    return {
        "n_links": int(Y.shape[0]),
        "n_flows": int(observations[0].routing.n_flows),
        "horizon": len(observations),
        "n_routing_epochs": len(routings),
        "n_true_anomalies": int(np.count_nonzero(truth_a)),
        "observed_fraction": float(mask.mean()),
    }


def _error_traces(estimates_a, estimates_x, truth_a, truth_x):
    trace = eval_mod.ErrorTrace()
    for t in range(truth_a.shape[1]):
        trace.update(estimates_a[:, t], truth_a[:, t], estimates_x[:, t], truth_x[:, t])
    return trace


def _write_trace_rows(path, rows: list[list]) -> None:
    lines = [",".join("NA" if v is None else (_fmt_float(v) if isinstance(v, float) else str(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n")


def _run_batch(cfg: ExperimentConfig, out_dir: Path) -> dict:
    observations, truth_x, truth_a = _load_inputs(cfg)
    Y, mask, routing = _panelize(observations)
    prob = batch_mod.BatchProblem(Y=Y, mask=mask, routing=routing, params=cfg.hyper())
    solution = batch_mod.bcd_solve(prob)
    A_hat = solution.anomalies.to_dense()
    save_triplets_csv(out_dir / "anomalies.csv", _threshold_map(A_hat, cfg.detect_threshold))
    _write_trace_rows(
        out_dir / "objective.csv",
        [[k, float(v)] for k, v in enumerate(solution.objective_trace)],
    )
    certificate = batch_mod.optimality_certificate(
        prob, solution.subspace.basis, solution.coeffs, A_hat
    )
    summary = {
        "n_iters": solution.n_iters,
        "objective": float(solution.objective_trace[-1]),
        "certificate_holds": bool(certificate.holds),
        "residual_spectral_norm": float(certificate.residual_spectral_norm),
    }
    if truth_a is not None:
        report = eval_mod.detection_rates(A_hat, truth_a, cfg.detect_threshold)
        summary["detection"] = _report_dict(report)
        if cfg.roc_thresholds:
            summary["roc"] = [
                {"threshold": r.threshold, "p_d": r.p_d, "p_fa": r.p_fa}
                for r in eval_mod.roc_sweep(
                    A_hat, truth_a, cfg.roc_thresholds, truth_threshold=cfg.detect_threshold
                )
            ]
    if truth_a is not None and truth_x is not None:
        trace = _error_traces(A_hat, solution.X_hat, truth_a, truth_x)
        rows = [
            [t + 1, float(trace.e_a[t]), float(trace.e_x[t])]
            for t in range(len(trace.e_a))
        ]
        _write_trace_rows(out_dir / "traces.csv", rows)
        summary["e_a_final"] = trace.e_a[-1]
        summary["e_x_final"] = trace.e_x[-1]
    return summary


def _run_online(cfg: ExperimentConfig, out_dir: Path, algorithm: str) -> dict:
    observations, truth_x, truth_a = _load_inputs(cfg)
    params = cfg.hyper()
    if algorithm == "rls":
        if cfg.use_fast_rls or (cfg.use_fast_rls is None and cfg.beta == 1.0):
            algorithm = "rls-fast"
    run = run_tracker(observations, params, algorithm=algorithm, snapshot_stride=cfg.cost_stride)
    n_flows = observations[0].routing.n_flows
    A_hat = np.column_stack([est.a_hat for est in run.estimates])
    X_hat = np.column_stack([est.x_hat for est in run.estimates])
    save_triplets_csv(out_dir / "anomalies.csv", _threshold_map(A_hat, cfg.detect_threshold))
    horizon = len(observations)
    cost_at: dict[int, float] = {}
    approx_at: dict[int, float] = {}
    for t, basis in sorted(run.snapshots.items()):
        prefix = observations[:t]
        warm = [est.a_hat for est in run.estimates[:t]]
        cost_at[t] = eval_mod.target_cost(basis, prefix, params, warm_starts=warm)
        approx_at[t] = eval_mod.approx_cost(
            basis,
            [(observations[i], run.estimates[i].q_hat, run.estimates[i].a_hat) for i in range(t)],
            params,
        )
    trace = None
    if truth_a is not None and truth_x is not None:
        trace = _error_traces(A_hat, X_hat, truth_a, truth_x)
    det_run = None
    if truth_a is not None:
        actual = np.abs(truth_a) >= cfg.detect_threshold
        declared = np.abs(A_hat) >= cfg.detect_threshold
        det_run = (
            np.cumsum((declared & actual).sum(axis=0)),
            np.cumsum(actual.sum(axis=0)),
            np.cumsum((declared & ~actual).sum(axis=0)),
            np.cumsum((~actual).sum(axis=0)),
        )
    rows = []
    for t in range(1, horizon + 1):
        row: list = [t]
        if trace is not None:
            row += [float(trace.e_a[t - 1]), float(trace.e_x[t - 1])]
        else:
            row += [None, None]
        if det_run is not None:
            hits, pos, fas, negs = (int(arr[t - 1]) for arr in det_run)
            row.append(hits / pos if pos else None)
            row.append(fas / negs if negs else None)
        else:
            row += [None, None]
        row.append(cost_at.get(t))
        row.append(approx_at.get(t))
        rows.append(row)
    _write_trace_rows(out_dir / "traces.csv", rows)
    if cfg.monitored_flows:
        bad = [f for f in cfg.monitored_flows if f >= n_flows]
        if bad:
            raise ConfigError(f"monitored flow index out of range: {bad}")
        mon_rows = []
        for t in range(1, horizon + 1):
            for f in cfg.monitored_flows:
                mon_rows.append([t, f, float(A_hat[f, t - 1])])
        _write_trace_rows(out_dir / "monitored.csv", mon_rows)
    summary: dict = {"algorithm": algorithm, "horizon": horizon}
    if trace is not None:
        summary["e_a_final"] = trace.e_a[-1]
        summary["e_x_final"] = trace.e_x[-1]
    if truth_a is not None:
        report = eval_mod.detection_rates(A_hat, truth_a, cfg.detect_threshold)
        summary["detection"] = _report_dict(report)
        if cfg.roc_thresholds:
            summary["roc"] = [
                {"threshold": r.threshold, "p_d": r.p_d, "p_fa": r.p_fa}
                for r in eval_mod.roc_sweep(
                    A_hat, truth_a, cfg.roc_thresholds, truth_threshold=cfg.detect_threshold
                )
            ]
    if cost_at:
        last = max(cost_at)
        summary["target_cost_final"] = cost_at[last]
        summary["approx_cost_final"] = approx_at[last]
        summary["cost_domination_violations"] = int(
            sum(1 for t in cost_at if approx_at[t] < cost_at[t])
        )
    return summary


def _run_baseline_pca(cfg: ExperimentConfig, out_dir: Path) -> dict:
    observations, truth_x, truth_a = _load_inputs(cfg)
    Y, mask, routing = _panelize(observations)
    if not mask.all():
        raise ConfigError("baseline-pca needs fully observed data")
    energies = eval_mod.pca_residual_energies(Y, cfg.baseline_rank)
    flags = energies > cfg.pca_energy_threshold
    rows = [[t + 1, -1, float(energies[t])] for t in range(len(energies)) if flags[t]]
    _write_trace_rows(out_dir / "anomalies.csv", rows)
    summary: dict = {
        "n_flagged_slots": int(flags.sum()),
        "energy_threshold": float(cfg.pca_energy_threshold),
    }
    if truth_a is not None:
        report = eval_mod.entry_rates_from_slot_flags(flags, truth_a, cfg.detect_threshold)
        summary["detection"] = _report_dict(report)
    return summary


def _run_baseline_anomography(cfg: ExperimentConfig, out_dir: Path) -> dict:
    observations, truth_x, truth_a = _load_inputs(cfg)
    Y, mask, routing = _panelize(observations)
    if not mask.all():
        raise ConfigError("baseline-anomography needs fully observed data")
    amap = eval_mod.anomography(Y, cfg.baseline_rank, routing)
    A_hat = amap.to_dense()
    save_triplets_csv(out_dir / "anomalies.csv", _threshold_map(A_hat, cfg.detect_threshold))
    summary: dict = {"nnz": int(amap.nnz)}
    if truth_a is not None:
        report = eval_mod.detection_rates(A_hat, truth_a, cfg.detect_threshold)
        summary["detection"] = _report_dict(report)
    return summary


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment; returns a process exit code (0 ok, 1 config
    error, 2 runtime failure). All outputs in cfg.out_dir are
    deterministic given (config, seed); wall time goes to stderr."""
    started = time.monotonic()
    try:
        cfg.check()
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.mode == "simulate":
            metrics = _run_simulate(cfg, out_dir)
        elif cfg.mode == "batch":
            metrics = _run_batch(cfg, out_dir)
        elif cfg.mode == "online-rls":
            metrics = _run_online(cfg, out_dir, "rls")
        elif cfg.mode == "online-sgd":
            metrics = _run_online(cfg, out_dir, "sgd")
        elif cfg.mode == "baseline-pca":
            metrics = _run_baseline_pca(cfg, out_dir)
        else:
            metrics = _run_baseline_anomography(cfg, out_dir)
        _write_summary(out_dir, {"mode": cfg.mode, "config": _config_echo(cfg), "metrics": metrics})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (AnomalographyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"elapsed_seconds={time.monotonic() - started:.3f}", file=sys.stderr)
    return 0


def _parse_overrides(tokens: list[str], base: dict) -> dict:
    out = dict(base)
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"expected --key value, got {tok!r}")
        if i + 1 >= len(tokens):
            raise ConfigError(f"missing value for {tok}")
        key = tok[2:]
        raw = tokens[i + 1]
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
        i += 2
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv or argv[0] in ("-h", "--help"):
            print(__doc__)
            return 0
        mode = argv[0]
        rest = argv[1:]
        config_path = None
        if rest[:1] == ["--config"]:
            if len(rest) < 2:
                raise ConfigError("missing value for --config")
            config_path = rest[1]
            rest = rest[2:]
        mapping: dict = {}
        if config_path is not None:
            try:
                mapping = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(mapping, dict):
                raise ConfigError("config file must hold a JSON object")
        mapping = _parse_overrides(rest, mapping)
        mapping["mode"] = mode
        cfg = ExperimentConfig.from_mapping(mapping)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TypeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
