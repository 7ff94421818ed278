"""Evaluation campaigns, paired oracle dominance, confidence intervals and behavior analysis."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .baselines import RandomPolicy, SeekFocusPolicy, UtilityPolicy, oracle_run
from .config import ConfigError, load_config
from .features import DEFAULT_SCHEMA
from .policy import DRLPolicy
from .qnet import QNetwork
from .sim import (DECISION_FIELDS, METRIC_FIELDS, PACKET_FIELDS, World, collect_metrics,
                  make_trajectory, run)

POLICIES = ("drl-cl", "drl-base", "utility", "seek-focus", "random", "oracle")
EMPTY_REPORT = "no qualifying decisions"


def t_interval(values, level=0.95):
    """Mean and Student-t half-width over repetitions (NaN half-width for n < 2)."""
    x = np.asarray([v for v in values if not math.isnan(v)], float)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(x.mean())
    if x.size < 2:
        return mean, math.nan
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return mean, float(half)


def make_policy(name, models=None):
    if name in ("drl-cl", "drl-base"):
        path = (models or {}).get(name)
        if path is None:
            raise ConfigError(f"policy {name!r} needs a model path")
        if not Path(path).exists():
            raise ConfigError(f"model file {path} not found")
        net = QNetwork.load(path, schema_hash=DEFAULT_SCHEMA.hash, n_inputs=DEFAULT_SCHEMA.dim)
        pol = DRLPolicy(net, epsilon=0.0)
        pol.name = name
        return pol
    if name == "utility":
        return UtilityPolicy()
    if name == "seek-focus":
        return SeekFocusPolicy()
    if name == "random":
        return RandomPolicy()
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")


@dataclass
class Campaign:
    scenarios: list  # SimConfig per scenario
    policies: list
    seeds: list
    models: dict = field(default_factory=dict)
    log_decisions: bool = False
    strict: bool = False
    source: str | None = None

    def __post_init__(self):
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}", self.source)
        if not self.seeds:
            raise ConfigError("campaign needs at least one seed", self.source)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("campaign seeds must be distinct", self.source)


_CAMPAIGN_KEYS = {"scenarios", "policies", "seeds", "repetitions", "seed", "models",
                  "log_decisions", "strict"}


def load_campaign(path):
    """Flat ``key = value`` file; ``scenarios`` and model paths are relative to the file."""
    path = Path(path)
    vals = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CAMPAIGN_KEYS:
            raise ConfigError(f"unknown or malformed entry {raw.strip()!r}", str(path), lineno)
        if key in vals:
            raise ConfigError(f"duplicate key {key!r}", str(path), lineno)
        try:
            vals[key] = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"bad value for {key!r}: {value.strip()!r}", str(path), lineno) from None
    for req in ("scenarios", "policies"):
        if req not in vals:
            raise ConfigError(f"campaign has no {req!r}", str(path))
    if "seeds" in vals:
        seeds = [int(s) for s in vals["seeds"]]
    else:
        start = int(vals.get("seed", 0))
        seeds = list(range(start, start + int(vals.get("repetitions", 5))))

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else path.parent / p

    cfgs = []
    for ref in vals["scenarios"]:
        if not rel(ref).exists():
            raise ConfigError(f"scenario config {ref!r} not found", str(path))
        cfgs.append(load_config(rel(ref)))
    models = {k: str(rel(v)) for k, v in vals.get("models", {}).items()}
    return Campaign(cfgs, list(vals["policies"]), seeds, models,
                    bool(vals.get("log_decisions", False)), bool(vals.get("strict", False)),
                    str(path))


@dataclass
class CellResult:
    cfg: object
    seed: int
    policy: str
    report: object
    decisions: list = field(default_factory=list)
    oracle_paths: dict | None = None


def run_cell(cfg, policy_name, trajectory, models=None, log_decisions=False, strict=False):
    """One (scenario, policy, seed) run on a shared trajectory."""
    if policy_name == "oracle":
        report, copies = oracle_run(cfg, trajectory)
        return CellResult(cfg, cfg.rng_seed, "oracle", report, [], copies)
    policy = make_policy(policy_name, models)
    world = World(cfg, trajectory, log_decisions=log_decisions)
    run(world, policy)
    report = collect_metrics(world, policy_name, strict=strict)
    return CellResult(cfg, cfg.rng_seed, policy_name, report, world.decision_log)


def run_campaign(campaign, progress=None):
    """Every scenario x seed x policy; policies within a repetition share mobility and traffic."""
    results = []
    for cfg0 in campaign.scenarios:
        for seed in campaign.seeds:
            cfg = cfg0.replace(rng_seed=seed)
            traj = make_trajectory(cfg)
            for name in campaign.policies:
                res = run_cell(cfg, name, traj, campaign.models, campaign.log_decisions,
                               campaign.strict)
                results.append(res)
                if progress is not None:
                    progress(res)
    return results


def dominance(oracle_report, report):
    """Per-packet check that the oracle delivered no later than ``report``.

    Returns ``(packets_compared, violations)``; a packet the policy delivered
    but the oracle did not counts as a violation.
    """
    od = oracle_report.delays()
    compared = violations = 0
    for pid, d in report.delays().items():
        compared += 1
        if pid not in od or od[pid] > d:
            violations += 1
    return compared, violations


# -- CSV output -------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return "" if x is None else str(x)


def _csv(rows, fields):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def metrics_rows(results):
    out = []
    for res in results:
        row = res.report.row()
        row["config_digest"] = res.cfg.digest()
        out.append(row)
    return out


def packet_rows(report):
    return [{"packet_id": r.packet_id, "src": r.src, "dst": r.dst, "created": r.created,
             "status": r.status, "delivered_at": r.delivered_at, "forwards": r.forwards}
            for r in report.records]


def summary_rows(rows):
    """Mean and 95% half-width per (scenario, policy); pure function of per-run rows."""
    groups = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["policy"]), []).append(r)
    out = []
    for (scen, pol), rs in groups.items():
        row = {"scenario": scen, "policy": pol, "runs": len(rs)}
        for m in ("delivery_rate", "mean_delay_s", "mean_forwards"):
            mean, half = t_interval([float(r[m]) for r in rs])
            row[m] = mean
            row[m + "_ci95"] = half
        out.append(row)
    return out


SUMMARY_FIELDS = ["scenario", "policy", "runs", "delivery_rate", "delivery_rate_ci95",
                  "mean_delay_s", "mean_delay_s_ci95", "mean_forwards", "mean_forwards_ci95"]
DOMINANCE_FIELDS = ["scenario", "seed", "policy", "packets_compared", "violations"]


def write_campaign(results, out_dir):
    """Write runs.csv, summary.csv, per-packet CSVs and (when present) dominance and decisions."""
    out = Path(out_dir)
    (out / "packets").mkdir(parents=True, exist_ok=True)
    rows = metrics_rows(results)
    (out / "runs.csv").write_text(_csv(rows, METRIC_FIELDS + ["config_digest"]))
    (out / "summary.csv").write_text(_csv(summary_rows(rows), SUMMARY_FIELDS))
    for res in results:
        stem = f"{res.cfg.scenario_id}_{res.policy}_{res.seed}"
        (out / "packets" / f"{stem}.csv").write_text(_csv(packet_rows(res.report), PACKET_FIELDS))
        if res.decisions:
            (out / "decisions").mkdir(exist_ok=True)
            (out / "decisions" / f"{stem}.csv").write_text(_csv(res.decisions, DECISION_FIELDS))
        if res.oracle_paths is not None:
            prow = []
            for pid, rec in sorted(res.oracle_paths.items()):
                r = res.report.records[pid]
                path = rec.path(r.dst)
                prow.append({"packet_id": pid, "first_delivery_t": rec.first_delivery_t,
                             "hops": rec.path_length,
                             "path": "" if path is None else " ".join(map(str, path))})
            (out / "packets" / f"{stem}_paths.csv").write_text(
                _csv(prow, ["packet_id", "first_delivery_t", "hops", "path"]))
    oracles = {(r.cfg.scenario_id, r.seed): r.report for r in results if r.policy == "oracle"}
    if oracles:
        dom = []
        for res in results:
            key = (res.cfg.scenario_id, res.seed)
            if res.policy == "oracle" or key not in oracles:
                continue
            n, v = dominance(oracles[key], res.report)
            dom.append({"scenario": key[0], "seed": key[1], "policy": res.policy,
                        "packets_compared": n, "violations": v})
        (out / "dominance.csv").write_text(_csv(dom, DOMINANCE_FIELDS))
    return rows


# -- behavior analysis ------------------------------------------------------------

def _as_int(x):
    return int(x) if x not in ("", None) else None


def analyze_behavior(rows, exclude_dst_neighbor=False):
    """P(choose fast | both classes among neighbors) and the dest-group analogue.

    Only forwarding decisions count (the holder kept the packet otherwise).
    The uniform baselines average, over qualifying decisions, the share of
    fast (or dest-group) nodes among the neighbors.
    """
    fast_hits, fast_base, grp_hits, grp_base = [], [], [], []
    for r in rows:
        if int(r["chosen"]) == int(r["holder"]):
            continue
        if exclude_dst_neighbor and _as_int(r.get("dst_neighbor")):
            continue
        nf, ns = int(r["n_fast"]), int(r["n_slow"])
        if nf > 0 and ns > 0:
            fast_hits.append(_as_int(r["chose_fast"]))
            fast_base.append(nf / (nf + ns))
        if _as_int(r["dest_group_present"]):
            grp_hits.append(_as_int(r["chose_dest_group"]))
            grp_base.append(int(r["n_dest_group"]) / (nf + ns))

    def stat(hits, base):
        if not hits:
            return {"decisions": 0, "p": EMPTY_REPORT, "uniform": EMPTY_REPORT}
        return {"decisions": len(hits), "p": float(np.mean(hits)), "uniform": float(np.mean(base))}

    return {"fast": stat(fast_hits, fast_base), "dest_group": stat(grp_hits, grp_base)}


def behavior_report(rows_by_policy):
    """Both variants (all forwarding decisions, and excluding a neighboring destination)."""
    out = {}
    for pol, rows in rows_by_policy.items():
        out[pol] = {"all": analyze_behavior(rows),
                    "excluding_dst_neighbor": analyze_behavior(rows, exclude_dst_neighbor=True)}
    return out


def read_decision_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
