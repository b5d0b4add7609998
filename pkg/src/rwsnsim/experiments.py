"""Experiment grids over network size, slot length, and contention designs.

A grid point resolves to a full parameter set (channel gains drawn
deterministically per scenario, so every seed of a scenario sees the same
network); each (scenario, strategy, seed) run appends one raw row, and
aggregation reduces seeds to mean and standard error. The emitted manifest
captures every resolved scenario so a rerun reproduces the CSVs byte for
byte.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core import NetworkParams, draw_channel_gains
from .eqat import TxProbDesign
from .mdp import DEFAULT_STATE_BUDGET, build_model, value_iteration
from .simulator import STRATEGY_NAMES, SlotTrace, simulate_run

log = logging.getLogger(__name__)

RAW_COLUMNS = [
    "n_nodes", "t_hat", "design", "strategy", "seed", "slots",
    "generated", "delivered", "dropped", "in_queue_final",
    "throughput_pps", "loss_rate",
]
AGG_COLUMNS = [
    "n_nodes", "t_hat", "design", "strategy", "n_seeds",
    "generated_mean", "delivered_mean", "dropped_mean",
    "throughput_pps_mean", "throughput_pps_stderr",
    "loss_rate_mean", "loss_rate_stderr",
]
TRACE_COLUMNS = [
    "n_nodes", "t_hat", "design", "strategy", "seed", "slot",
    "outcome", "transmitters", "energy_levels", "batteries", "queues",
]


@dataclass
class ExperimentSpec:
    """Grid definition plus execution knobs."""

    n_nodes: list[int] = field(default_factory=lambda: [10])
    t_hat: list[int] = field(default_factory=lambda: [10])  # mini-slots per interval
    designs: list[str] = field(default_factory=lambda: ["exp:1:0.05"])
    strategies: list[str] = field(default_factory=lambda: list(STRATEGY_NAMES))
    slots: int = 10_000
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    minislot_len: float = 1e-3
    budget: int = DEFAULT_STATE_BUDGET
    workers: int = 1
    trace: bool = False
    network: dict = field(default_factory=dict)   # NetworkParams field overrides
    channel: dict = field(default_factory=dict)   # draw_channel_gains overrides
    rc_contention: float = 0.75
    eqat_alpha: float = 0.5
    eqat_threshold: float = 0.0
    backoff_window: int = 8

    def validate(self) -> list[str]:
        v = []
        if not self.n_nodes:
            v.append("n_nodes grid must be non-empty")
        if not self.t_hat:
            v.append("t_hat grid must be non-empty")
        if not self.strategies:
            v.append("strategies must be non-empty")
        if not self.seeds:
            v.append("at least one seed is required")
        if self.slots < 0:
            v.append("slots must be >= 0")
        unknown = [s for s in self.strategies if s not in STRATEGY_NAMES]
        if unknown:
            v.append(f"unknown strategies: {unknown}")
        if "eqat" in self.strategies and not self.designs:
            v.append("eqat needs at least one design")
        for d in self.designs:
            try:
                TxProbDesign.parse(d)
            except ValueError as e:
                v.append(str(e))
        return v

    def resolve_params(self, n: int, t_hat: int) -> NetworkParams:
        overrides = dict(self.network)
        overrides["n_nodes"] = n
        overrides["slot_len"] = t_hat * self.minislot_len
        if "channel_gain" not in overrides:
            overrides["channel_gain"] = draw_channel_gains(n, **self.channel)
        return NetworkParams(**overrides)


def _parse_int_list(text: str) -> list[int]:
    """Comma lists and dash ranges: "0-4, 7" -> [0, 1, 2, 3, 4, 7]."""
    out: list[int] = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk[1:]:
            lo, hi = chunk.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(chunk))
    return out


def spec_from_config(path: str) -> ExperimentSpec:
    """Load an ExperimentSpec from an INI config (schema in the CLI docs)."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    spec = ExperimentSpec()
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        if "n_nodes" in sec:
            spec.n_nodes = _parse_int_list(sec["n_nodes"])
        if "t_hat" in sec:
            spec.t_hat = _parse_int_list(sec["t_hat"])
        if "designs" in sec:
            spec.designs = [d.strip() for d in sec["designs"].split(",") if d.strip()]
        if "strategies" in sec:
            spec.strategies = [s.strip().lower() for s in sec["strategies"].split(",") if s.strip()]
        if "slots" in sec:
            spec.slots = sec.getint("slots")
        if "seeds" in sec:
            spec.seeds = _parse_int_list(sec["seeds"])
        if "minislot_len" in sec:
            spec.minislot_len = sec.getfloat("minislot_len")
        if "budget" in sec:
            spec.budget = sec.getint("budget")
        if "workers" in sec:
            spec.workers = sec.getint("workers")
        if "trace" in sec:
            spec.trace = sec.getboolean("trace")
    if cp.has_section("network"):
        from .core import _NETWORK_KEYS

        sec = cp["network"]
        for key, conv in _NETWORK_KEYS.items():
            if key in sec and key != "n_nodes":
                spec.network[key] = conv(sec[key])
        if "channel_gain" in sec:
            spec.network["channel_gain"] = tuple(
                float(x) for x in sec["channel_gain"].split(",") if x.strip()
            )
    if cp.has_section("channel"):
        from .core import channel_model_from_config

        spec.channel = channel_model_from_config(path)
    if cp.has_section("eqat"):
        sec = cp["eqat"]
        spec.eqat_alpha = sec.getfloat("alpha", spec.eqat_alpha)
        spec.eqat_threshold = sec.getfloat("threshold", spec.eqat_threshold)
        spec.backoff_window = sec.getint("backoff_window", spec.backoff_window)
    if cp.has_section("rc"):
        spec.rc_contention = cp["rc"].getfloat("contention_prob", spec.rc_contention)
    return spec


def spec_from_manifest(manifest: dict) -> ExperimentSpec:
    kwargs = dict(manifest["spec"])
    return ExperimentSpec(**kwargs)


@dataclass
class ExperimentResult:
    raw_rows: list[dict]
    agg_rows: list[dict]
    manifest: dict
    failures: list[dict]
    trace_rows: list[dict] = field(default_factory=list)


def _run_one(args):
    (params, strategy, design_token, slots, seed, trace,
     rc_contention, eqat_alpha, eqat_threshold, backoff_window, vi_result) = args
    try:
        design = TxProbDesign.parse(design_token) if design_token else None
        metrics, traces = simulate_run(
            params, strategy, slots=slots, seed=seed, trace=trace,
            design=design, vi_result=vi_result,
            contention_prob=rc_contention, eqat_alpha=eqat_alpha,
            eqat_threshold=eqat_threshold, backoff_window=backoff_window,
        )
        return metrics, traces
    except Exception as e:  # reported per task; the grid keeps running
        return ("error", f"{type(e).__name__}: {e}")


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    problems = spec.validate()
    if problems:
        raise ValueError("; ".join(problems))

    tasks = []       # (scenario key, args) in deterministic grid order
    scenarios = []
    failures: list[dict] = []
    for n in spec.n_nodes:
        for t_hat in spec.t_hat:
            try:
                params = spec.resolve_params(n, t_hat)
            except Exception as e:
                failures.append({"n_nodes": n, "t_hat": t_hat, "error": str(e)})
                continue
            ehmdp_mode = None
            vi_result = None
            if "ehmdp" in spec.strategies:
                if params.joint_state_count <= spec.budget:
                    try:
                        vi_result = value_iteration(build_model(params, budget=spec.budget))
                        ehmdp_mode = "exact"
                    except Exception as e:
                        failures.append({"n_nodes": n, "t_hat": t_hat,
                                         "strategy": "ehmdp", "error": str(e)})
                        ehmdp_mode = "myopic"
                else:
                    log.info(
                        "scenario N=%d T=%d: %d joint states exceed the budget of %d; "
                        "ehmdp runs in myopic mode", n, t_hat, params.joint_state_count,
                        spec.budget,
                    )
                    ehmdp_mode = "myopic"
            scenarios.append({
                "n_nodes": n,
                "t_hat": t_hat,
                "ehmdp_mode": ehmdp_mode,
                "params": params_dict(params),
            })
            for strategy in spec.strategies:
                design_tokens = spec.designs if strategy == "eqat" else [None]
                for token in design_tokens:
                    for seed in spec.seeds:
                        args = (params, strategy, token, spec.slots, seed, spec.trace,
                                spec.rc_contention, spec.eqat_alpha, spec.eqat_threshold,
                                spec.backoff_window,
                                vi_result if strategy == "ehmdp" else None)
                        key = {"n_nodes": n, "t_hat": t_hat,
                               "design": token or "-", "strategy": strategy, "seed": seed}
                        tasks.append((key, args))

    raw_rows: list[dict] = []
    trace_rows: list[dict] = []
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(_run_one, [a for _, a in tasks]))
    else:
        outcomes = [_run_one(a) for _, a in tasks]

    for (key, args), (metrics, traces) in zip(tasks, outcomes):
        if metrics == "error":
            failures.append({**key, "error": traces})
            continue
        raw_rows.append({
            **key,
            "slots": metrics.slots,
            "generated": metrics.generated,
            "delivered": metrics.delivered,
            "dropped": metrics.dropped_overflow,
            "in_queue_final": metrics.in_queue_final,
            "throughput_pps": metrics.throughput_pps,
            "loss_rate": metrics.loss_rate,
        })
        if traces:
            trace_rows.extend(_trace_dicts(key, traces))

    manifest = {
        "format": "rwsnsim-experiment-1",
        "spec": spec_dict(spec),
        "scenarios": scenarios,
    }
    return ExperimentResult(
        raw_rows=raw_rows,
        agg_rows=aggregate_rows(raw_rows),
        manifest=manifest,
        failures=failures,
        trace_rows=trace_rows,
    )


def _trace_dicts(key: dict, traces: list[SlotTrace]) -> list[dict]:
    out = []
    for t in traces:
        out.append({
            **key,
            "slot": t.slot,
            "outcome": t.outcome,
            "transmitters": "|".join(map(str, t.transmitters)),
            "energy_levels": t.energy_levels,
            "batteries": "|".join(map(str, t.batteries)),
            "queues": "|".join(map(str, t.queues)),
        })
    return out


def params_dict(params: NetworkParams) -> dict:
    d = {f.name: getattr(params, f.name) for f in fields(NetworkParams)}
    d["channel_gain"] = list(d["channel_gain"])
    return d


def spec_dict(spec: ExperimentSpec) -> dict:
    return asdict(spec)


def aggregate_rows(raw_rows: list[dict]) -> list[dict]:
    """Mean and standard error over seeds per (scenario, strategy, design)."""
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in raw_rows:
        key = (row["n_nodes"], row["t_hat"], row["design"], row["strategy"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    def mean(vals):
        return sum(vals) / len(vals)

    def stderr(vals):
        if len(vals) < 2:
            return 0.0
        m = mean(vals)
        var = sum((v - m) ** 2 for v in vals) / (len(vals) - 1)
        return math.sqrt(var / len(vals))

    out = []
    for key in order:
        rows = groups[key]
        tp = [r["throughput_pps"] for r in rows]
        lr = [r["loss_rate"] for r in rows]
        out.append({
            "n_nodes": key[0],
            "t_hat": key[1],
            "design": key[2],
            "strategy": key[3],
            "n_seeds": len(rows),
            "generated_mean": mean([r["generated"] for r in rows]),
            "delivered_mean": mean([r["delivered"] for r in rows]),
            "dropped_mean": mean([r["dropped"] for r in rows]),
            "throughput_pps_mean": mean(tp),
            "throughput_pps_stderr": stderr(tp),
            "loss_rate_mean": mean(lr),
            "loss_rate_stderr": stderr(lr),
        })
    return out


def format_csv(rows: list[dict], columns: list[str]) -> str:
    """Deterministic CSV text: fixed column order, repr for floats."""
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row.get(col, "")
            cells.append(repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_outputs(result: ExperimentResult, out_dir: str) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "raw": out / "raw.csv",
        "aggregate": out / "aggregate.csv",
        "manifest": out / "manifest.json",
    }
    paths["raw"].write_text(format_csv(result.raw_rows, RAW_COLUMNS))
    paths["aggregate"].write_text(format_csv(result.agg_rows, AGG_COLUMNS))
    paths["manifest"].write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    if result.trace_rows:
        paths["trace"] = out / "traces.csv"
        paths["trace"].write_text(format_csv(result.trace_rows, TRACE_COLUMNS))
    return {k: str(v) for k, v in paths.items()}


def read_agg_csv(path: str) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    if header != AGG_COLUMNS:
        raise ValueError(f"unexpected aggregate schema {header}")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        row = dict(zip(header, cells))
        for k in ("n_nodes", "t_hat", "n_seeds"):
            row[k] = int(row[k])
        for k in ("generated_mean", "delivered_mean", "dropped_mean",
                  "throughput_pps_mean", "throughput_pps_stderr",
                  "loss_rate_mean", "loss_rate_stderr"):
            row[k] = float(row[k])
        rows.append(row)
    return rows


def report(agg_rows: list[dict]) -> dict:
    """Ordering tables per scenario and monotone-trend flags per strategy.

    Two strategies whose means differ by less than one joint standard error
    are reported as tied rather than silently ordered.
    """
    scenarios: dict[tuple, list[dict]] = {}
    for row in agg_rows:
        scenarios.setdefault((row["n_nodes"], row["t_hat"]), []).append(row)

    def label(row):
        if row["strategy"] == "eqat" and row["design"] != "-":
            return f"eqat({row['design']})"
        return row["strategy"]

    tables = []
    lines = []
    for (n, t_hat), rows in sorted(scenarios.items()):
        by_tp = sorted(rows, key=lambda r: -r["throughput_pps_mean"])
        ranking = []
        for i, r in enumerate(by_tp):
            tie = False
            if i > 0:
                prev = by_tp[i - 1]
                se = math.hypot(r["throughput_pps_stderr"], prev["throughput_pps_stderr"])
                tie = abs(prev["throughput_pps_mean"] - r["throughput_pps_mean"]) < se
            ranking.append({
                "strategy": label(r),
                "throughput_pps": r["throughput_pps_mean"],
                "loss_rate": r["loss_rate_mean"],
                "tied_with_previous": tie,
            })
        tables.append({"n_nodes": n, "t_hat": t_hat, "by_throughput": ranking})
        lines.append(f"scenario N={n} T={t_hat}:")
        for i, entry in enumerate(ranking):
            marker = "=" if entry["tied_with_previous"] else f"{i + 1}."
            lines.append(
                f"  {marker:>2} {entry['strategy']:<18} "
                f"throughput={entry['throughput_pps']:.3f} pps "
                f"loss={entry['loss_rate']:.4f}"
            )

    trends = []
    by_strategy: dict[tuple, list[dict]] = {}
    for row in agg_rows:
        by_strategy.setdefault((row["strategy"], row["design"], row["n_nodes"]), []).append(row)
    for (strategy, design, n), rows in sorted(by_strategy.items()):
        if len({r["t_hat"] for r in rows}) < 2:
            continue
        rows = sorted(rows, key=lambda r: r["t_hat"])
        tp = [r["throughput_pps_mean"] for r in rows]
        lr = [r["loss_rate_mean"] for r in rows]
        trends.append({
            "strategy": strategy,
            "design": design,
            "n_nodes": n,
            "t_hat": [r["t_hat"] for r in rows],
            "throughput_non_increasing": all(a >= b for a, b in zip(tp, tp[1:])),
            "loss_non_decreasing": all(a <= b for a, b in zip(lr, lr[1:])),
        })
        lines.append(
            f"trend {strategy} N={n} over T={[r['t_hat'] for r in rows]}: "
            f"throughput {'non-increasing' if trends[-1]['throughput_non_increasing'] else 'NOT monotone'}, "
            f"loss {'non-decreasing' if trends[-1]['loss_non_decreasing'] else 'NOT monotone'}"
        )

    return {"tables": tables, "trends": trends, "text": "\n".join(lines)}
