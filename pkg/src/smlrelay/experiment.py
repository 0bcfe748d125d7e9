"""Experiment orchestration: protocol x SNR x seed sweeps, DTMC and PEP tables, CSV output."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dtmc import SelectionActionEstimator, dtmc_build, outage_throughput_delay, \
    stationary_distribution
from .engine import ProtocolKind, RunMetrics, SwitchedMaxLink, run_protocol

__all__ = [
    "ExperimentError",
    "TrialResult",
    "ExperimentResults",
    "CSV_HEADER",
    "run_trial",
    "run_experiment",
    "emit_results",
    "aggregate",
    "pep_table",
    "dtmc_table",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["protocol", "snr_db", "seed", "ber", "pep_theory", "sum_rate_bits_hz",
              "avg_delay_slots", "avg_throughput", "n_sr", "n_rd", "n_sd"]
_FLOAT_FIELDS = ["ber", "pep_theory", "sum_rate_bits_hz", "avg_delay_slots", "avg_throughput"]
_COUNT_FIELDS = ["n_sr", "n_rd", "n_sd"]


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrialResult:
    protocol: str
    snr_db: float
    seed: int
    metrics: RunMetrics

    def row(self) -> dict:
        m = self.metrics
        return {
            "protocol": self.protocol,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "ber": m.ber,
            "pep_theory": m.pep_theory,
            "sum_rate_bits_hz": m.sum_rate,
            "avg_delay_slots": m.avg_delay,
            "avg_throughput": m.avg_throughput,
            "n_sr": m.n_sr,
            "n_rd": m.n_rd,
            "n_sd": m.n_sd,
        }


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    trials: list[TrialResult]

    def rows(self) -> list[dict]:
        return [t.row() for t in self.trials]

    def select(self, protocol: str, snr_db: float | None = None) -> list[TrialResult]:
        return [t for t in self.trials
                if t.protocol == protocol and (snr_db is None or t.snr_db == snr_db)]


def run_trial(config: ExperimentConfig, protocol: ProtocolKind, snr_db: float, seed: int,
              **overrides) -> TrialResult:
    try:
        metrics = run_protocol(config.simulation_config(snr_db, **overrides), protocol, seed)
    except Exception as e:
        raise ExperimentError(
            f"{protocol.label} at {snr_db:g} dB, seed {seed}: {type(e).__name__}: {e}") from e
    return TrialResult(protocol.label, float(snr_db), int(seed), metrics)


def _run_job(args):
    config, protocol, snr, seed, overrides = args
    return run_trial(config, protocol, snr, seed, **overrides)


def run_experiment(config: ExperimentConfig, workers: int = 1, **overrides) -> ExperimentResults:
    """Run every (protocol, SNR, seed) trial.

    Each trial owns its engine and its seed's random streams, so results do
    not depend on ``workers``; rows come back in (protocol, SNR, sorted seed)
    order either way.
    """
    jobs = [(config, p, snr, seed, overrides)
            for p in config.protocols for snr in config.snr_db for seed in sorted(config.seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_job, jobs))
    else:
        trials = []
        for job in jobs:
            trials.append(_run_job(job))
            t = trials[-1]
            log.info("%s %.1f dB seed %d: ber=%.3e delay=%.2f", t.protocol, t.snr_db, t.seed,
                     t.metrics.ber, t.metrics.avg_delay)
    return ExperimentResults(config, trials)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17e" % float(v)


def aggregate(results: ExperimentResults) -> list[dict]:
    """Per (protocol, SNR) mean and standard error across seeds, reduced in seed order."""
    groups: dict[tuple, list[TrialResult]] = {}
    for t in results.trials:
        groups.setdefault((t.protocol, t.snr_db), []).append(t)
    out = []
    for (proto, snr), trials in groups.items():
        trials = sorted(trials, key=lambda t: t.seed)
        rows = [t.row() for t in trials]
        rec = {"protocol": proto, "snr_db": snr, "n_seeds": len(rows)}
        for f in _FLOAT_FIELDS + _COUNT_FIELDS:
            x = np.array([r[f] for r in rows], dtype=float)
            rec[f + "_mean"] = float(x.mean())
            rec[f + "_stderr"] = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
        out.append(rec)
    return out


def emit_results(results: ExperimentResults, path, name: str = "results") -> tuple[Path, Path]:
    """Write ``<name>.csv`` (one row per trial) and ``<name>_aggregate.csv`` into ``path``."""
    if not results.trials:
        raise ValueError("no results to write")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    raw = out / f"{name}.csv"
    agg = out / f"{name}_aggregate.csv"
    with raw.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in results.rows():
            w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    rows = aggregate(results)
    with agg.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(rows[0])
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])
    return raw, agg


def pep_table(config: ExperimentConfig) -> list[dict]:
    """Mean theoretical worst-case PEP per (protocol, SNR) from detection-free runs."""
    out = []
    for p in config.protocols:
        for snr in config.snr_db:
            vals = [run_trial(config, p, snr, s, detect=False).metrics.pep_theory
                    for s in sorted(config.seeds)]
            out.append({"protocol": p.label, "snr_db": float(snr), "pep_theory": float(np.mean(vals))})
    return out


def _relay_share(config, protocol, snr, seed):
    m = run_trial(config, protocol, snr, seed, detect=False).metrics
    return m.p_ml


def dtmc_table(config: ExperimentConfig) -> list[dict]:
    """Stationary outage, throughput, queue length and delay per (protocol, SNR).

    Transition probabilities are Monte Carlo estimates from the first seed.
    For the switched protocol the relay shares ``P_ML`` (at ``S``) and
    ``P'_ML`` (at ``S' = 1`` if ``S >= 1`` else ``S``) are measured by
    simulation.
    """
    seed = sorted(config.seeds)[0]
    out = []
    for p in config.protocols:
        if p.name == "direct_mimo":
            continue
        Z = 2 if p.name in ("switched_max_link", "threshold_max_link_dt") else 1
        for snr in config.snr_db:
            est = SelectionActionEstimator(p, config.N, config.M_S, config.U, config.L,
                                           config.constellation, snr, config.profile, config.csi,
                                           rng=seed, draws=config.dtmc_draws, N0=config.N0)
            model = dtmc_build(config.N, config.L, Z, est)
            stationary_distribution(model)
            if p.name == "switched_max_link":
                s_prime = 1.0 if p.switch >= 1 else p.switch
                p_ml = _relay_share(config, p, snr, seed)
                p_ml_prime = p_ml if s_prime == p.switch else \
                    _relay_share(config, SwitchedMaxLink(s_prime), snr, seed)
                res = outage_throughput_delay(model, switch=p.switch, p_ml=p_ml,
                                              p_ml_prime=p_ml_prime)
            else:
                res = outage_throughput_delay(model)
            out.append({"protocol": p.label, "snr_db": float(snr), "states": model.n_states,
                        "outage": res.outage, "throughput": res.throughput,
                        "queue_length": res.queue_length, "delay": res.delay})
    return out
