"""Simulation study: generate data under known truths, refit, and score
recovery (MSE, bias, variance, average posterior variance, coverage).

Replicates are keyed by index through independent seed-sequence children,
so results do not depend on execution order and replicates can be run
concurrently with disjoint generators.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import bd_process as bd
from .data import Dataset, DataSchema, ValidationError
from .mcmc import SamplerConfig, run_chain
from .prem import ModelSpec

__all__ = [
    "SimulationTruth",
    "FitConfig",
    "StudyReport",
    "build_clear_design",
    "generate_dataset",
    "replicate_study",
    "CLEAR_X_COLUMNS",
    "CLEAR_W_COLUMNS",
]

# column layout mirroring the reference study: three arms, baseline plus four
# follow-up months, two time-fixed and two time-varying behavioral indicators
CLEAR_TIMES = (0.0, 3.0, 6.0, 9.0, 15.0)
CLEAR_X_COLUMNS = (
    ["Intercept", "IDU", "MSM", "CASUAL", "TRADE"]
    + [f"M{int(t)}" for t in CLEAR_TIMES[1:]]
    + [f"IM{int(t)}" for t in CLEAR_TIMES[1:]]
    + [f"TM{int(t)}" for t in CLEAR_TIMES[1:]]
)
CLEAR_X_FIXED = ["Intercept", "IDU", "MSM"]
CLEAR_W_COLUMNS = ["Intercept", "PB", "PB_I", "PB_T", "CASUAL", "TRADE"]


@dataclass
class SimulationTruth:
    alpha_true: np.ndarray
    psi_true: np.ndarray
    d_beta_true: float
    generator: str = "BDPREM"
    n_subjects: int = 173
    replicates: int = 10

    def __post_init__(self):
        self.alpha_true = np.asarray(self.alpha_true, dtype=float).reshape(-1)
        self.psi_true = np.asarray(self.psi_true, dtype=float).reshape(-1)
        if self.generator not in ("BDPREM", "PREM"):
            raise ValidationError(f"unknown generator {self.generator!r}")
        if self.replicates < 1:
            raise ValidationError("need at least one replicate")
        if not self.d_beta_true > 0:
            raise ValidationError("d_beta_true must be positive")


@dataclass
class FitConfig:
    family: str
    prior: object
    iterations: int = 110_000
    burn_in: int = 10_000
    thin: int = 10

    def __post_init__(self):
        if self.family not in ("bdprem", "prem"):
            raise ValidationError(f"unknown model family {self.family!r}")


def build_clear_design(
    n_subjects,
    rng,
    times=CLEAR_TIMES,
    retention=0.8,
    arm_probs=(1 / 3, 1 / 3, 1 / 3),
    idu_prev=0.15,
    msm_prev=0.55,
    casual_prev=0.40,
    trade_prev=0.20,
):
    """Synthetic covariate table with the reference study's column structure.

    Arm assignment and the time-fixed indicators are drawn once per subject;
    the behavioral indicators are re-drawn per visit; follow-up visits are
    retained independently with the given probability (baseline always
    present).  Reported counts are zero placeholders until generation.
    """
    times = [float(t) for t in times]
    arms = rng.choice(3, size=n_subjects, p=np.asarray(arm_probs, dtype=float))
    idu = rng.random(n_subjects) < idu_prev
    msm = rng.random(n_subjects) < msm_prev

    rows_x, rows_w, subj_idx, row_times = [], [], [], []
    for i in range(n_subjects):
        for k, t in enumerate(times):
            if k > 0 and rng.random() > retention:
                continue
            casual = float(rng.random() < casual_prev)
            trade = float(rng.random() < trade_prev)
            pb = float(k > 0)
            x = [1.0, float(idu[i]), float(msm[i]), casual, trade]
            x += [pb * (t == u) for u in times[1:]]
            x += [pb * (arms[i] == 1) * (t == u) for u in times[1:]]
            x += [pb * (arms[i] == 2) * (t == u) for u in times[1:]]
            w = [1.0, pb, pb * (arms[i] == 1), pb * (arms[i] == 2), casual, trade]
            rows_x.append(x)
            rows_w.append(w)
            subj_idx.append(i)
            row_times.append(t)

    schema = DataSchema(
        alpha_fixed=list(CLEAR_X_FIXED),
        alpha_varying=[c for c in CLEAR_X_COLUMNS if c not in CLEAR_X_FIXED],
        h=["Intercept"],
        w=list(CLEAR_W_COLUMNS),
    )
    N = len(subj_idx)
    width = max(2, len(str(n_subjects - 1)))
    return Dataset(
        subject_ids=[f"s{i:0{width}d}" for i in range(n_subjects)],
        subject_index=np.array(subj_idx, dtype=np.int64),
        times=np.array(row_times),
        y=np.zeros(N, dtype=np.int64),
        X=np.array(rows_x, dtype=float),
        H=np.ones((N, 1)),
        W=np.array(rows_w, dtype=float),
        schema=schema,
    )


def generate_dataset(truth: SimulationTruth, design: Dataset, rng):
    """Fill a design with generated counts; the hidden true counts ride
    along in z_true for diagnostics."""
    if design.p != truth.alpha_true.size:
        raise ValidationError("design does not match alpha_true")
    beta = rng.normal(0.0, np.sqrt(truth.d_beta_true), size=design.n)
    mu = np.exp(design.X @ truth.alpha_true + beta[design.subject_index])
    z = rng.poisson(mu)
    if truth.generator == "BDPREM":
        if design.q != truth.psi_true.size:
            raise ValidationError("design does not match psi_true")
        lam = np.exp(design.W @ truth.psi_true)
        y = bd.simulate_many(z, lam, rng)
    else:
        y = z.copy()
    return Dataset(
        subject_ids=list(design.subject_ids),
        subject_index=design.subject_index.copy(),
        times=design.times.copy(),
        y=y.astype(np.int64),
        X=design.X.copy(),
        H=design.H.copy(),
        W=design.W.copy(),
        schema=design.schema,
        z_true=z.astype(np.int64),
    )


def _fit_parameters(trace, level=0.95):
    """Per-parameter (estimate, posterior variance, interval) from a trace.

    Keys are block-qualified (alpha.NAME / psi.NAME) because a covariate can
    appear in both the mean and the rate model.
    """
    tail = (1.0 - level) / 2.0
    out = {}
    for group, labels, draws in trace.parameter_groups():
        for j, label in enumerate(labels):
            key = label if group in ("dbeta", "depsilon") else f"{group}.{label}"
            col = draws[:, j]
            out[key] = (
                float(col.mean()),
                float(col.var(ddof=1)),
                float(np.quantile(col, tail)),
                float(np.quantile(col, 1.0 - tail)),
            )
    return out


def run_replicate(truth, design, fit_configs, seed, r, out_dir=None):
    """Generate replicate r and fit every configured model.

    Returns {model_name: {parameter: (mean, var, lo, hi)}}.  Seeding is keyed
    by (seed, r) alone, so replicates are order-independent.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(r,))
    children = ss.spawn(1 + len(fit_configs))
    data = generate_dataset(truth, design, np.random.default_rng(children[0]))
    results = {}
    for k, fc in enumerate(fit_configs):
        model = ModelSpec(
            p=data.p, r=1, q=data.q,
            fixed_idx=list(range(len(data.schema.alpha_fixed))),
            family=fc.family,
        )
        cfg = SamplerConfig(
            iterations=fc.iterations, burn_in=fc.burn_in, thin=fc.thin, seed=0
        )
        trace = run_chain(model, data, fc.prior, cfg,
                          rng=np.random.default_rng(children[1 + k]))
        results[fc.family] = _fit_parameters(trace)
        if out_dir is not None:
            trace.save(os.path.join(out_dir, f"rep{r:03d}_{fc.family}"))
    return results


@dataclass
class StudyReport:
    rows: list = field(default_factory=list)

    HEADER = ["parameter", "model", "truth", "mse", "bias", "var", "avg_var",
              "coverage", "bias_t"]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.HEADER) + "\n")
            for row in self.rows:
                fh.write(",".join(_cell(row[k]) for k in self.HEADER) + "\n")

    def by_parameter(self, model):
        return {r["parameter"]: r for r in self.rows if r["model"] == model}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def truths_by_name(truth: SimulationTruth, design: Dataset):
    """Map block-qualified parameter labels to their true values."""
    out = {}
    for j, name in enumerate(design.schema.x_names):
        out[f"alpha.{name}"] = float(truth.alpha_true[j])
    out["d_beta"] = float(truth.d_beta_true)
    if truth.generator == "BDPREM":
        for j, name in enumerate(design.schema.w):
            out[f"psi.{name}"] = float(truth.psi_true[j])
    return out


def aggregate_study(truth_map, per_replicate, model_names):
    """Score per-replicate estimates against the truths.

    Replicates are reduced in index order regardless of how they were
    produced, and the replicate variance uses the population convention so
    that mse = bias^2 + var holds exactly; bias_t is bias over sqrt(var/R).
    """
    rows = []
    order = sorted(per_replicate)
    for m in model_names:
        first = per_replicate[order[0]][m]
        for param in first:
            t = truth_map.get(param)
            if t is None:
                continue
            est = np.array([per_replicate[r][m][param][0] for r in order])
            pvar = np.array([per_replicate[r][m][param][1] for r in order])
            lo = np.array([per_replicate[r][m][param][2] for r in order])
            hi = np.array([per_replicate[r][m][param][3] for r in order])
            bias = float(est.mean() - t)
            var = float(est.var(ddof=0))
            rows.append(
                {
                    "parameter": param, "model": m, "truth": float(t),
                    "mse": float(np.mean((est - t) ** 2)), "bias": bias,
                    "var": var, "avg_var": float(pvar.mean()),
                    "coverage": float(np.mean((lo <= t) & (t <= hi))),
                    "bias_t": float(bias / np.sqrt(var / est.size)) if var > 0
                    else float("nan"),
                }
            )
    return StudyReport(rows=rows)


def replicate_study(truth: SimulationTruth, design: Dataset, fit_configs,
                    seed=0, out_dir=None, progress=None):
    """Run every replicate and aggregate; deterministic given seed."""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    per_replicate = {}
    for r in range(truth.replicates):
        per_replicate[r] = run_replicate(truth, design, fit_configs, seed, r,
                                         out_dir=out_dir)
        if progress is not None:
            progress(r)
    report = aggregate_study(truths_by_name(truth, design), per_replicate,
                             [fc.family for fc in fit_configs])
    if out_dir is not None:
        report.to_csv(os.path.join(out_dir, "study_report.csv"))
    return report
