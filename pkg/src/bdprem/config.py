"""INI run-configuration files for fitting and for the simulation study."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

import numpy as np

from .data import DataSchema, ValidationError
from .mcmc import SamplerConfig
from .priors import (
    PriorSpec,
    load_da_prior_data,
    read_prior_table,
    summarize_da_prior,
)
from .simulation import FitConfig, SimulationTruth, build_clear_design

__all__ = ["FitRun", "load_fit_config", "load_scenario", "align_prior"]


def _parse_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_floats(text):
    return [float(t) for t in _parse_list(text)]


def _read_ini(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ValidationError(f"cannot read config file {path}")
    return parser


@dataclass
class FitRun:
    schema: DataSchema
    prior: PriorSpec
    sampler: SamplerConfig
    data_path: str | None
    rate_random_effect: bool


def _resolve(path, base):
    return path if os.path.isabs(path) else os.path.join(base, path)


def align_prior(prior: PriorSpec, x_names, w_names):
    """Reorder a named prior to the dataset's column order."""
    if prior.alpha_names is None:
        if prior.m_alpha.size != len(x_names):
            raise ValidationError("prior alpha dimension does not match model")
        return prior
    if sorted(prior.alpha_names) != sorted(x_names):
        raise ValidationError(
            f"prior alpha names {prior.alpha_names} do not match model "
            f"columns {list(x_names)}"
        )
    if sorted(prior.psi_names or []) != sorted(w_names):
        raise ValidationError(
            f"prior psi names {prior.psi_names} do not match rate columns "
            f"{list(w_names)}"
        )
    ai = [prior.alpha_names.index(c) for c in x_names]
    pi = [prior.psi_names.index(c) for c in w_names]
    return PriorSpec(
        m_alpha=prior.m_alpha[ai],
        sigma_alpha=prior.sigma_alpha[np.ix_(ai, ai)],
        m_psi=prior.m_psi[pi],
        sigma_psi=prior.sigma_psi[np.ix_(pi, pi)],
        dbeta_shape=prior.dbeta_shape,
        dbeta_scale=prior.dbeta_scale,
        depsilon_shape=prior.depsilon_shape,
        depsilon_scale=prior.depsilon_scale,
        alpha_names=list(x_names),
        psi_names=list(w_names),
    )


def _load_prior_section(parser, base, schema):
    if not parser.has_section("prior"):
        raise ValidationError("config needs a [prior] section")
    sec = parser["prior"]
    mode = sec.get("mode", "table").strip()
    if mode == "table":
        if "file" not in sec:
            raise ValidationError("[prior] table mode needs file=")
        prior = read_prior_table(_resolve(sec["file"], base))
    elif mode == "da":
        for key in ("prem_data", "bd_data"):
            if key not in sec:
                raise ValidationError(f"[prior] da mode needs {key}=")
        data, x_names, w_names = load_da_prior_data(
            _resolve(sec["prem_data"], base), _resolve(sec["bd_data"], base)
        )
        prior = summarize_da_prior(
            data,
            pre_prior=(sec.getfloat("pre_shape", 3.0), sec.getfloat("pre_scale", 2.0)),
            iterations=sec.getint("iterations", 60_000),
            burn_in=sec.getint("burn_in", 10_000),
            seed=sec.getint("seed", 0),
            alpha_names=x_names,
            psi_names=w_names,
        )
    else:
        raise ValidationError(f"unknown prior mode {mode!r}")
    return align_prior(prior, schema.x_names, schema.w)


def load_fit_config(path):
    """Parse a fit configuration file into its pieces."""
    parser = _read_ini(path)
    base = os.path.dirname(os.path.abspath(path))
    if not parser.has_section("model"):
        raise ValidationError("config needs a [model] section")
    model_sec = parser["model"]
    data_sec = parser["data"] if parser.has_section("data") else {}
    schema = DataSchema(
        subject=data_sec.get("subject", "subject_id") if data_sec else "subject_id",
        time=data_sec.get("time", "time") if data_sec else "time",
        y=data_sec.get("y", "y") if data_sec else "y",
        alpha_fixed=_parse_list(model_sec.get("alpha_fixed", "")),
        alpha_varying=_parse_list(model_sec.get("alpha_varying", "")),
        h=_parse_list(model_sec.get("h", "Intercept")),
        w=_parse_list(model_sec.get("w", "")),
    )
    rate_re = model_sec.getboolean("rate_random_effect", False)
    prior = _load_prior_section(parser, base, schema)
    if rate_re and prior.depsilon_shape is None:
        raise ValidationError(
            "rate_random_effect requires a [depsilon] prior section"
        )

    samp = parser["sampler"] if parser.has_section("sampler") else {}
    scan = None
    if samp:
        keys = [k for k in samp if k.startswith("scan_")]
        if keys:
            scan = {k[5:]: float(samp[k]) for k in keys}
    z_rows = ()
    if parser.has_section("output") and parser["output"].get("z_rows"):
        z_rows = tuple(int(v) for v in _parse_list(parser["output"]["z_rows"]))
    sampler = SamplerConfig(
        iterations=int(samp.get("iterations", 110_000)) if samp else 110_000,
        burn_in=int(samp.get("burn_in", 10_000)) if samp else 10_000,
        thin=int(samp.get("thin", 10)) if samp else 10,
        seed=int(samp.get("seed", 0)) if samp else 0,
        scan=scan,
        target_accept=float(samp.get("target_accept", 0.3)) if samp else 0.3,
        initial_kappa=float(samp.get("initial_kappa", 1.0)) if samp else 1.0,
        freeze_after_burnin=(
            samp.getboolean("freeze_after_burnin", False) if samp else False
        ),
        z_trace_rows=z_rows,
    )
    data_path = None
    if parser.has_section("data") and parser["data"].get("path"):
        data_path = _resolve(parser["data"]["path"], base)
    return FitRun(schema=schema, prior=prior, sampler=sampler,
                  data_path=data_path, rate_random_effect=rate_re)


def load_scenario(path):
    """Parse a simulation scenario file.

    Returns (truth, design_builder kwargs, design seed, fit configs).
    """
    parser = _read_ini(path)
    base = os.path.dirname(os.path.abspath(path))
    for sec in ("truth", "design", "fit"):
        if not parser.has_section(sec):
            raise ValidationError(f"scenario needs a [{sec}] section")
    t = parser["truth"]
    truth = SimulationTruth(
        alpha_true=_parse_floats(t.get("alpha", "")),
        psi_true=_parse_floats(t.get("psi", "")),
        d_beta_true=t.getfloat("d_beta"),
        generator=t.get("generator", "BDPREM").strip(),
        n_subjects=t.getint("n_subjects", 173),
        replicates=t.getint("replicates", 10),
    )
    d = parser["design"]
    design_kwargs = dict(
        retention=d.getfloat("retention", 0.8),
        idu_prev=d.getfloat("idu_prev", 0.15),
        msm_prev=d.getfloat("msm_prev", 0.55),
        casual_prev=d.getfloat("casual_prev", 0.40),
        trade_prev=d.getfloat("trade_prev", 0.20),
    )
    if d.get("arm_probs"):
        design_kwargs["arm_probs"] = tuple(_parse_floats(d["arm_probs"]))
    if d.get("times"):
        design_kwargs["times"] = tuple(_parse_floats(d["times"]))
    design_seed = d.getint("seed", 20_000)

    f = parser["fit"]
    prior = read_prior_table(_resolve(f.get("prior_file"), base))
    models = _parse_list(f.get("models", "bdprem"))
    fits = []
    for m in models:
        fits.append(
            FitConfig(
                family=m,
                prior=prior,  # aligned by the runner against the design
                iterations=f.getint("iterations", 110_000),
                burn_in=f.getint("burn_in", 10_000),
                thin=f.getint("thin", 10),
            )
        )
    return truth, design_kwargs, design_seed, fits


def build_scenario_design(truth, design_kwargs, design_seed):
    design = build_clear_design(
        truth.n_subjects, np.random.default_rng(design_seed), **design_kwargs
    )
    return design
