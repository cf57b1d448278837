"""Experiment runner: ``simulate | train | evaluate | abtest``.

Every subcommand reads one experiment file (YAML with a
``schema_version`` field; the packaged ``default.experiment`` holds all
defaults) and writes plain files into an output directory:

* ``simulate``: ``train.jsonl`` / ``eval.jsonl`` triplets, matching
  ``*_episodes.jsonl`` diagnostics and a ``metadata.json`` sidecar;
* ``train``: ``model.ckpt``, ``train_loss.csv`` and ``train_report.json``;
* ``evaluate``: ``evaluation.csv`` (one row per policy and cap),
  ``evaluation.json`` and a text table of precision and lifts;
* ``abtest``: ``abtest.json``, ``abtest.csv`` and a text table.

Outputs are byte-identical for identical inputs and seeds. Exit codes:
0 success, 1 config error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io as _io
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .calibration import CalibrationConfig
from .domain import DEFAULT_CATALOG, PODCAST, CalbandError
from .io import RecordParseError, dumps, read_jsonl, read_triplets, write_jsonl, write_triplets
from .ope import OpeConfig, ips_estimate, relative_lift
from .policy import (
    DEFAULT_EPSILON,
    DEFAULT_SIGMA,
    ActionSet,
    BusinessMixPolicy,
    EpsilonGreedyPolicy,
    FixedActionPolicy,
    GaussianLogging,
    Policy,
    SteckPolicy,
    UniformLogging,
)
from .reward_model import (
    CheckpointError,
    DegenerateDataset,
    FeatureSpec,
    RewardModel,
    ShapeMismatch,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .simulator import (
    CohortProfile,
    OraclePolicy,
    SimConfig,
    episode_from_dict,
    episode_to_dict,
    run_logging,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("calband")


class ConfigError(CalbandError, ValueError):
    """The experiment file or the command line is invalid."""


class DataError(CalbandError, ValueError):
    """Input data is missing, malformed or inconsistent."""


# -- experiment config -----------------------------------------------------

# allowed parameters per policy kind, with defaults
POLICY_KINDS = {
    "cb": {"epsilon": DEFAULT_EPSILON, "exploration": "gaussian", "sigma": DEFAULT_SIGMA,
           "window": "90d"},
    "sc": {"window": "90d"},
    "mb": {"business_mix": [0.7, 0.3], "mode": "target"},
    "uniform": {},
    "gaussian": {"sigma": DEFAULT_SIGMA, "window": "90d"},
    "oracle": {},
    "fixed": {"action": 0},
}


def default_policies() -> dict:
    return {
        "cb": {"kind": "cb", "epsilon": DEFAULT_EPSILON, "exploration": "gaussian",
               "sigma": DEFAULT_SIGMA, "window": "90d"},
        "sc90": {"kind": "sc", "window": "90d"},
        "sc7": {"kind": "sc", "window": "7d"},
        "mb": {"kind": "mb", "business_mix": [0.7, 0.3], "mode": "target"},
        "uniform": {"kind": "uniform"},
        "oracle": {"kind": "oracle"},
    }


@dataclass
class EvaluateConfig:
    policies: list = field(default_factory=lambda: ["cb", "sc90", "sc7", "mb", "uniform", "oracle"])
    baseline: str = "sc90"
    caps: list = field(default_factory=lambda: [2.0, 5.0, 10.0, 50.0])


@dataclass
class AbTestConfig:
    treatment: str = "cb"
    control: str = "sc90"
    days: int = 7
    seed_offset: int = 1000
    bootstrap_resamples: int = 1000


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    sim: SimConfig = field(default_factory=SimConfig)
    calibration: CalibrationConfig = field(default_factory=lambda: CalibrationConfig(lam=0.9))
    action_steps: int = 10
    policies: dict = field(default_factory=default_policies)
    logging_policy: str = "uniform"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    ope: OpeConfig = field(default_factory=OpeConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    abtest: AbTestConfig = field(default_factory=AbTestConfig)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.sim = dataclasses.replace(self.sim, seed=self.seed)
        self.train = dataclasses.replace(self.train, seed=self.seed)
        self.ope = dataclasses.replace(self.ope, seed=self.seed)
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if self.sim.slate_size != self.calibration.slate_size:
            raise ConfigError("sim.slate_size and calibration.slate_size differ")
        if self.action_steps < 1:
            raise ConfigError("actions.steps must be >= 1")
        for name, decl in self.policies.items():
            kind = decl.get("kind")
            if kind not in POLICY_KINDS:
                raise ConfigError(f"policy {name!r}: unknown kind {kind!r}")
            extra = set(decl) - {"kind"} - set(POLICY_KINDS[kind])
            if extra:
                raise ConfigError(f"policy {name!r}: unknown keys {sorted(extra)}")
        for ref, where in ([(self.logging_policy, "logging_policy"),
                            (self.evaluate.baseline, "evaluate.baseline"),
                            (self.abtest.treatment, "abtest.treatment"),
                            (self.abtest.control, "abtest.control")]
                           + [(p, "evaluate.policies") for p in self.evaluate.policies]):
            if ref not in self.policies:
                raise ConfigError(f"{where} refers to undeclared policy {ref!r}")
        if self.policies[self.logging_policy]["kind"] == "cb":
            raise ConfigError("the logging policy cannot be the learned bandit")
        if not self.evaluate.caps or any(not c >= 1 for c in self.evaluate.caps):
            raise ConfigError("evaluate.caps must be a non-empty list of values >= 1")
        if self.evaluate.baseline not in self.evaluate.policies:
            raise ConfigError("evaluate.baseline must be one of evaluate.policies")
        if self.abtest.days < 1 or self.abtest.bootstrap_resamples < 1:
            raise ConfigError("abtest.days and abtest.bootstrap_resamples must be >= 1")

    # The per-module seeds always follow the top-level one, so they are
    # left out of the file.
    def to_dict(self) -> dict:
        sim = self.sim.to_dict()
        del sim["seed"]
        tr = asdict(self.train)
        del tr["seed"]
        tr["hidden_sizes"] = list(tr["hidden_sizes"])
        ope = asdict(self.ope)
        del ope["seed"]
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "sim": sim,
            "calibration": asdict(self.calibration),
            "actions": {"steps": self.action_steps},
            "policies": {k: dict(v) for k, v in self.policies.items()},
            "logging_policy": self.logging_policy,
            "train": tr,
            "ope": ope,
            "evaluate": asdict(self.evaluate),
            "abtest": asdict(self.abtest),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment file must hold a mapping")
        known = {"schema_version", "seed", "output_dir", "sim", "calibration", "actions",
                 "policies", "logging_policy", "train", "ope", "evaluate", "abtest"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        if "schema_version" not in d:
            raise ConfigError("missing schema_version")
        try:
            kw = {"schema_version": int(d["schema_version"])}
            for key in ("seed",):
                if key in d:
                    kw[key] = int(d[key])
            if "output_dir" in d:
                kw["output_dir"] = str(d["output_dir"])
            if "sim" in d:
                sim = dict(_section(d, "sim"))
                if "cohorts" in sim:
                    sim["cohorts"] = tuple(CohortProfile(**c) for c in sim["cohorts"])
                for k in ("countries", "devices", "relevance_mean"):
                    if k in sim:
                        sim[k] = tuple(sim[k])
                kw["sim"] = SimConfig.from_dict(sim)
            if "calibration" in d:
                kw["calibration"] = CalibrationConfig(**_section(d, "calibration"))
            if "actions" in d:
                acts = _section(d, "actions")
                if set(acts) - {"steps"}:
                    raise ConfigError("actions takes only 'steps'")
                kw["action_steps"] = int(acts.get("steps", 10))
            if "policies" in d:
                pols = _section(d, "policies")
                kw["policies"] = {str(k): dict(v) for k, v in pols.items()}
            if "logging_policy" in d:
                kw["logging_policy"] = str(d["logging_policy"])
            if "train" in d:
                kw["train"] = TrainConfig(**_section(d, "train"))
            if "ope" in d:
                ope = dict(_section(d, "ope"))
                if "cap" in ope:
                    ope["cap"] = float(ope["cap"])
                kw["ope"] = OpeConfig(**ope)
            if "evaluate" in d:
                ev = dict(_section(d, "evaluate"))
                if "caps" in ev:
                    ev["caps"] = [float(c) for c in ev["caps"]]
                kw["evaluate"] = EvaluateConfig(**ev)
            if "abtest" in d:
                kw["abtest"] = AbTestConfig(**_section(d, "abtest"))
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None,
                              width=100)

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))

    def action_set(self) -> ActionSet:
        return ActionSet.grid(self.action_steps)

    def feature_spec(self) -> FeatureSpec:
        return self.sim.feature_spec(self.action_set())


def _section(d: dict, key: str) -> dict:
    v = d[key]
    if not isinstance(v, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    if "seed" in v and key in ("sim", "train", "ope"):
        raise ConfigError(f"{key}.seed is not allowed; set the top-level seed instead")
    return v


def default_config_text() -> str:
    return resources.files("calband").joinpath("data/default.experiment").read_text("utf-8")


def load_config(path=None) -> ExperimentConfig:
    """Parse an experiment file; None loads the packaged defaults."""
    try:
        text = default_config_text() if path is None else Path(path).read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return ExperimentConfig.from_dict(raw)


# -- helpers ---------------------------------------------------------------

def build_policy(name: str, exp: ExperimentConfig, actions: ActionSet,
                 model: Optional[RewardModel] = None) -> Policy:
    decl = {**POLICY_KINDS[exp.policies[name]["kind"]], **exp.policies[name]}
    kind = decl["kind"]
    try:
        if kind == "cb":
            if model is None:
                raise ConfigError(f"policy {name!r} needs a trained model (--checkpoint)")
            if decl["exploration"] == "gaussian":
                explore = GaussianLogging(actions, float(decl["sigma"]), decl["window"])
            elif decl["exploration"] == "uniform":
                explore = UniformLogging(actions)
            else:
                raise ConfigError(f"policy {name!r}: exploration must be gaussian or uniform")
            pol = EpsilonGreedyPolicy(actions, model, float(decl["epsilon"]), explore)
        elif kind == "sc":
            pol = SteckPolicy(actions, decl["window"])
        elif kind == "mb":
            pol = BusinessMixPolicy(actions, decl["business_mix"], decl["mode"])
        elif kind == "uniform":
            pol = UniformLogging(actions)
        elif kind == "gaussian":
            pol = GaussianLogging(actions, float(decl["sigma"]), decl["window"])
        elif kind == "oracle":
            pol = OraclePolicy(actions, exp.sim)
        else:
            pol = FixedActionPolicy(actions, int(decl["action"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"policy {name!r}: {exc}") from exc
    if kind in ("sc", "gaussian") or (kind == "cb" and decl["exploration"] == "gaussian"):
        windows = {w for w, _ in exp.sim.windows}
        if decl["window"] not in windows:
            raise ConfigError(f"policy {name!r}: window {decl['window']!r} is not simulated")
    pol.name = name
    return pol


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _out_dir(exp: ExperimentConfig, out) -> Path:
    d = Path(out if out is not None else exp.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _write_text(path, buf.getvalue())


def _json(obj) -> str:
    return dumps(_jsonable(obj)) + "\n"


def _jsonable(obj):
    """Replace non-finite floats (not valid JSON) with strings."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _pct(x: float) -> str:
    return "n/a" if not math.isfinite(x) else f"{100 * x:+.1f}%"


def episodes_path_for(triplets_path) -> Path:
    p = Path(triplets_path)
    return p.with_name(p.stem + "_episodes" + p.suffix)


# -- simulate ----------------------------------------------------------------

def cmd_simulate(exp: ExperimentConfig, out=None) -> dict:
    """Log ``horizon_days`` of traffic under the logging policy and split it."""
    d = _out_dir(exp, out)
    actions = exp.action_set()
    spec = exp.feature_spec()
    logger = build_policy(exp.logging_policy, exp, actions)
    triplets, episodes = run_logging(exp.sim, logger, exp.calibration, actions, spec)
    parts = {}
    for split in ("train", "eval"):
        idx = [i for i, e in enumerate(episodes) if e.split == split]
        n = write_triplets(d / f"{split}.jsonl", (triplets[i] for i in idx))
        write_jsonl(d / f"{split}_episodes.jsonl", (episode_to_dict(episodes[i]) for i in idx))
        parts[split] = n
    if parts["eval"] == 0:
        log.warning("eval split is empty (horizon_days=%d, train_days=%d)",
                    exp.sim.horizon_days, exp.sim.train_days)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": exp.seed,
        "config_hash": exp.sim.config_hash(),
        "logging_policy": exp.logging_policy,
        "train_days": exp.sim.train_days,
        "horizon_days": exp.sim.horizon_days,
        "start_timestamp": exp.sim.start_timestamp,
        "train_end_timestamp": exp.sim.train_end_timestamp,
        "counts": {"train": parts["train"], "eval": parts["eval"], "episodes": len(episodes)},
        "feature_spec": spec.to_dict(),
    }
    _write_text(d / "metadata.json", _json(meta))
    _write_text(d / "experiment.yaml", exp.to_yaml())
    return meta


# -- train -------------------------------------------------------------------

def cmd_train(exp: ExperimentConfig, triplets_path, out=None) -> dict:
    """Fit the reward model on a triplet file; write checkpoint and loss curve."""
    path = _require_file(triplets_path, "triplet file")
    data = read_triplets(path)
    spec = exp.feature_spec()
    model, report = train(data, spec, exp.train)
    d = _out_dir(exp, out)
    save_checkpoint(model, d / "model.ckpt")
    rows = [(i + 1, tl, vl) for i, (tl, vl) in enumerate(zip(report.train_loss, report.val_loss))]
    _write_csv(d / "train_loss.csv", ["epoch", "train_bce", "val_bce"], rows)
    summary = report.to_dict()
    summary["final_val_bce"] = report.val_loss[-1] if report.val_loss else float("nan")
    summary["beats_base_rate"] = bool(summary["final_val_bce"] < report.val_base_rate_bce)
    _write_text(d / "train_report.json", _json(summary))
    return summary


# -- evaluate ----------------------------------------------------------------

EVAL_COLUMNS = ["policy", "cap", "capped_ips", "ips", "ci_low", "ci_high",
                "effective_sample_size", "clipped_fraction", "precision_music",
                "precision_podcast", "precision_overall", "lift_value", "lift_podcast",
                "lift_overall"]


def load_eval_inputs(triplets_path, episodes_path=None):
    tpath = _require_file(triplets_path, "triplet file")
    epath = _require_file(episodes_path or episodes_path_for(tpath), "episode file")
    trip = read_triplets(tpath)
    eps = read_jsonl(epath, episode_from_dict)
    if len(trip) != len(eps):
        raise DataError(f"{tpath} has {len(trip)} records but {epath} has {len(eps)}")
    for i, (t, e) in enumerate(zip(trip, eps)):
        if (t.action_index, t.reward, t.timestamp) != (e.action_index, e.reward, e.timestamp) \
                or t.propensity != e.propensity:
            raise DataError(f"record {i + 1}: triplet and episode files disagree")
    if not trip:
        raise DataError(f"{tpath} holds no triplets")
    return trip, eps


def evaluate_policies(exp: ExperimentConfig, trip, eps, model=None,
                      policies: Optional[Sequence[str]] = None,
                      caps: Optional[Sequence[float]] = None) -> list[dict]:
    """IPS value and Precision@1 per (policy, cap), with lifts vs the baseline."""
    actions = exp.action_set()
    names = list(policies or exp.evaluate.policies)
    caps = list(caps or exp.evaluate.caps)
    contexts = [e.context for e in eps]
    rank1 = [e.rank1_content for e in eps]
    engaged = [e.engaged_content for e in eps]
    results = {}
    for name in names:
        pol = build_policy(name, exp, actions, model)
        if isinstance(pol, BusinessMixPolicy) and pol.mode == "sequential":
            raise ConfigError(f"policy {name!r}: sequential MB slates cannot be "
                              "evaluated from calibrated logs")
        P = pol.pmf_batch(contexts)
        for cap in caps:
            cfg = dataclasses.replace(exp.ope, cap=float(cap))
            results[name, cap] = ips_estimate(trip, P, cfg, rank1, engaged,
                                              DEFAULT_CATALOG.size)
    base = exp.evaluate.baseline if exp.evaluate.baseline in names else names[0]
    rows = []
    for name in names:
        for cap in caps:
            r, b = results[name, cap], results[base, cap]
            pc, bc = r.precision.per_content, b.precision.per_content
            rows.append({
                "policy": name, "cap": float(cap),
                "capped_ips": r.capped_ips_value, "ips": r.ips_value,
                "ci_low": r.ci_low, "ci_high": r.ci_high,
                "effective_sample_size": r.effective_sample_size,
                "clipped_fraction": r.clipped_fraction,
                "precision_music": pc["music"], "precision_podcast": pc["podcast"],
                "precision_overall": r.precision.overall,
                "lift_value": relative_lift(r.capped_ips_value, b.capped_ips_value),
                "lift_podcast": relative_lift(pc["podcast"], bc["podcast"]),
                "lift_overall": relative_lift(r.precision.overall, b.precision.overall),
            })
    return rows


def format_offline_table(rows: list[dict], cap: float, baseline: str) -> str:
    sel = [r for r in rows if r["cap"] == cap] or rows
    lines = [f"Offline evaluation (capped IPS, cap={sel[0]['cap']:g}; lifts vs {baseline})",
             f"{'policy':<10} {'value':>8} {'lift':>8} {'podcast P@1':>12} {'lift':>8} "
             f"{'overall P@1':>12} {'lift':>8}"]
    for r in sel:
        lines.append(f"{r['policy']:<10} {r['capped_ips']:>8.4f} {_pct(r['lift_value']):>8} "
                     f"{r['precision_podcast']:>12.4f} {_pct(r['lift_podcast']):>8} "
                     f"{r['precision_overall']:>12.4f} {_pct(r['lift_overall']):>8}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(exp: ExperimentConfig, triplets_path, checkpoint=None, out=None,
                 episodes_path=None) -> list[dict]:
    trip, eps = load_eval_inputs(triplets_path, episodes_path)
    model = load_checkpoint(_require_file(checkpoint, "checkpoint")) if checkpoint else None
    rows = evaluate_policies(exp, trip, eps, model)
    d = _out_dir(exp, out)
    _write_csv(d / "evaluation.csv", EVAL_COLUMNS, [[r[c] for c in EVAL_COLUMNS] for r in rows])
    _write_text(d / "evaluation.json", _json({"n": len(trip), "baseline": exp.evaluate.baseline,
                                              "rows": rows}))
    cap = exp.ope.cap if exp.ope.cap in exp.evaluate.caps else exp.evaluate.caps[0]
    _write_text(d / "offline_table.txt", format_offline_table(rows, cap, exp.evaluate.baseline))
    return rows


# -- abtest ------------------------------------------------------------------

def arm_of(user_id: str, seed: int) -> int:
    """1 for treatment, 0 for control; fixed per (seed, user)."""
    h = hashlib.sha256(f"{seed}:{user_id}".encode("utf-8")).digest()
    return h[0] & 1


def _user_totals(eps, arm_mask):
    users: dict[str, list[int]] = {}
    for e, m in zip(eps, arm_mask):
        if not m:
            continue
        t = users.setdefault(e.user_id, [0, 0, 0])
        t[0] += 1
        t[1] += e.reward
        t[2] += int(e.engaged_content == PODCAST)
    arr = np.array([users[u] for u in sorted(users)], dtype=np.float64)
    return arr.reshape(-1, 3)


def cluster_bootstrap_lift(treat: np.ndarray, ctrl: np.ndarray, col: int, resamples: int,
                           seed: int, chunk: int = 100) -> tuple[float, float]:
    """Percentile 95% CI of the relative lift, resampling users within each arm."""
    rng = np.random.default_rng(seed)
    lifts = np.empty(resamples)
    nt, nc = treat.shape[0], ctrl.shape[0]
    for s in range(0, resamples, chunk):
        b = min(chunk, resamples - s)
        it = rng.integers(0, nt, size=(b, nt))
        ic = rng.integers(0, nc, size=(b, nc))
        rt = treat[it, col].sum(1) / treat[it, 0].sum(1)
        rc = ctrl[ic, col].sum(1) / ctrl[ic, 0].sum(1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lifts[s:s + b] = (rt - rc) / rc
    lo, hi = np.nanpercentile(lifts, [2.5, 97.5])
    return float(lo), float(hi)


def run_abtest(exp: ExperimentConfig, model=None, keep_episodes: bool = False) -> dict:
    """Serve fresh traffic after the logged horizon, splitting users between two policies.

    Users are assigned to arms by a hash of their id, so nobody switches
    arms during the test. With ``keep_episodes`` the served episodes are
    returned under ``"episodes"``.
    """
    actions = exp.action_set()
    spec = exp.feature_spec()
    ab = exp.abtest
    treat = build_policy(ab.treatment, exp, actions, model)
    ctrl = build_policy(ab.control, exp, actions, model)
    seed = exp.seed

    def route(user):
        return treat if arm_of(user.user_id, seed) else ctrl

    _, eps = run_logging(exp.sim, route, exp.calibration, actions, spec,
                         traffic_seed=seed + ab.seed_offset,
                         first_day=exp.sim.horizon_days, n_days=ab.days)
    in_treat = [arm_of(e.user_id, seed) == 1 for e in eps]
    totals = {"treatment": _user_totals(eps, in_treat),
              "control": _user_totals(eps, [not t for t in in_treat])}
    arms = {}
    for arm, name in (("treatment", ab.treatment), ("control", ab.control)):
        t = totals[arm]
        n_req = float(t[:, 0].sum()) if t.size else 0.0
        arms[arm] = {"policy": name, "users": int(t.shape[0]), "requests": int(n_req),
                     "engagement_rate": float(t[:, 1].sum() / n_req) if n_req else float("nan"),
                     "podcast_engagement_rate":
                         float(t[:, 2].sum() / n_req) if n_req else float("nan")}
    lifts = {}
    for metric, col in (("engagement_rate", 1), ("podcast_engagement_rate", 2)):
        point = relative_lift(arms["treatment"][metric], arms["control"][metric])
        if totals["treatment"].size and totals["control"].size:
            lo, hi = cluster_bootstrap_lift(totals["treatment"], totals["control"], col,
                                            ab.bootstrap_resamples, seed + col)
        else:
            lo = hi = float("nan")
        lifts[metric] = {"lift": point, "ci_low": lo, "ci_high": hi,
                         "ci_excludes_zero": bool(lo > 0 or hi < 0)}
    rep = {"seed": seed, "first_day": exp.sim.horizon_days, "days": ab.days,
           "total_requests": len(eps), "arms": arms, "lifts": lifts}
    if keep_episodes:
        rep["episodes"] = eps
    return rep


def format_abtest_table(rep: dict) -> str:
    a = rep["arms"]
    lines = [f"A/B analog: {a['treatment']['policy']} (treatment) vs "
             f"{a['control']['policy']} (control), {rep['days']} days",
             f"{'arm':<10} {'policy':<8} {'users':>6} {'requests':>9} {'engagement':>11} "
             f"{'podcast eng.':>13}"]
    for arm in ("treatment", "control"):
        r = a[arm]
        lines.append(f"{arm:<10} {r['policy']:<8} {r['users']:>6} {r['requests']:>9} "
                     f"{r['engagement_rate']:>11.4f} {r['podcast_engagement_rate']:>13.4f}")
    for metric, v in rep["lifts"].items():
        lines.append(f"lift {metric}: {_pct(v['lift'])} "
                     f"(95% CI {_pct(v['ci_low'])} .. {_pct(v['ci_high'])})")
    return "\n".join(lines) + "\n"


def cmd_abtest(exp: ExperimentConfig, checkpoint=None, out=None) -> dict:
    model = load_checkpoint(_require_file(checkpoint, "checkpoint")) if checkpoint else None
    rep = run_abtest(exp, model)
    d = _out_dir(exp, out)
    _write_text(d / "abtest.json", _json(rep))
    rows = [[arm, v["policy"], v["users"], v["requests"], v["engagement_rate"],
             v["podcast_engagement_rate"]] for arm, v in rep["arms"].items()]
    _write_csv(d / "abtest.csv", ["arm", "policy", "users", "requests", "engagement_rate",
                                  "podcast_engagement_rate"], rows)
    _write_csv(d / "abtest_lifts.csv", ["metric", "lift", "ci_low", "ci_high"],
               [[m, v["lift"], v["ci_low"], v["ci_high"]] for m, v in rep["lifts"].items()])
    _write_text(d / "abtest_table.txt", format_abtest_table(rep))
    return rep


# -- entry point -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="calband", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="experiment file (default: packaged defaults)")
        sp.add_argument("--seed", type=int, help="override the experiment seed")
        sp.add_argument("--out", help="output directory (default: output_dir from config)")

    common(sub.add_parser("simulate", help="generate logged train/eval data"))
    sp = sub.add_parser("train", help="fit the reward model")
    common(sp)
    sp.add_argument("--triplets", required=True, help="training triplets (JSONL)")
    sp = sub.add_parser("evaluate", help="off-policy comparison table")
    common(sp)
    sp.add_argument("--triplets", required=True, help="evaluation triplets (JSONL)")
    sp.add_argument("--episodes", help="episode file (default: <triplets>_episodes.jsonl)")
    sp.add_argument("--checkpoint", help="trained model, needed for cb policies")
    sp = sub.add_parser("abtest", help="online A/B analog on fresh traffic")
    common(sp)
    sp.add_argument("--checkpoint", help="trained model, needed for cb policies")
    sub.add_parser("show-config", help="print the resolved experiment file").add_argument(
        "--config")
    return p


def run(args: argparse.Namespace) -> None:
    exp = load_config(args.config).with_seed(getattr(args, "seed", None))
    if args.command == "simulate":
        meta = cmd_simulate(exp, args.out)
        print(f"wrote {meta['counts']['train']} train / {meta['counts']['eval']} eval triplets")
    elif args.command == "train":
        rep = cmd_train(exp, args.triplets, args.out)
        print(f"final validation BCE {rep['final_val_bce']:.5f} "
              f"(base rate {rep['val_base_rate_bce']:.5f})")
    elif args.command == "evaluate":
        rows = cmd_evaluate(exp, args.triplets, args.checkpoint, args.out, args.episodes)
        cap = exp.ope.cap if exp.ope.cap in exp.evaluate.caps else exp.evaluate.caps[0]
        print(format_offline_table(rows, cap, exp.evaluate.baseline), end="")
    elif args.command == "abtest":
        print(format_abtest_table(cmd_abtest(exp, args.checkpoint, args.out)), end="")
    else:
        print(exp.to_yaml(), end="")


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        run(build_parser().parse_args(argv))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RecordParseError, DegenerateDataset, CheckpointError,
            ShapeMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - stable exit code for scripting
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
