"""Run configuration: YAML parsing and construction of model objects.

A config file names the data source and transform, the parental graph, the
per-series designs and priors, discounts, the Monte Carlo size and seed,
and optional intervention / marginal-likelihood / discount-grid / forecast
sections. The seed is mandatory: runs never fall back to an entropy source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .counterfactual import InterventionSpec
from .engine import DesignRule, ModelSpec
from .errors import ConfigError
from .structure import GraphStructure, build_graph
from .udlm import DiscountSpec, NGPosterior


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; ``model_spec()`` builds the engine inputs."""

    data_path: str | None
    transform: str
    labels: tuple[str, ...]
    graph: GraphStructure
    designs: tuple[DesignRule, ...]
    discounts: tuple[DiscountSpec, ...]
    priors: tuple[NGPosterior, ...]
    R: int
    seed: int
    output: str
    marginal_likelihood: bool = False
    intervention: InterventionSpec | None = None
    horizon: int = 1
    discount_grid: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    discount_grid_until: object | None = None
    monitor_exclude: tuple = ()
    simulate: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)

    reject_explosive: bool = False

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            graph=self.graph,
            designs=self.designs,
            discounts=self.discounts,
            priors=self.priors,
            R=self.R,
            reject_explosive=self.reject_explosive,
        )


def _require(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(f"config is missing required key {key!r}")
    return doc[key]


def _label_indices(labels, names, context: str) -> tuple[int, ...]:
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for name in names:
        if name not in index:
            raise ConfigError(f"{context}: unknown series {name!r}")
        out.append(index[name])
    return tuple(out)


def _parse_graph(doc: dict, labels) -> GraphStructure:
    parents_doc = doc.get("parents", {})
    if not isinstance(parents_doc, dict):
        raise ConfigError("graph.parents must map series labels to parent lists")
    unknown = set(parents_doc) - set(labels)
    if unknown:
        raise ConfigError(f"graph.parents names unknown series: {sorted(unknown)}")
    lists = []
    for lab in labels:
        lists.append(list(_label_indices(labels, parents_doc.get(lab, []) or [], f"parents of {lab}")))
    return build_graph(len(labels), lists, labels)


def _parse_design(doc: dict, labels) -> DesignRule:
    intercept = bool(doc.get("intercept", True))
    lags = _label_indices(labels, doc.get("lags", []) or [], "design lags")
    return DesignRule(intercept=intercept, lags=lags)


def _parse_discount(doc: dict) -> DiscountSpec:
    delta = doc.get("delta")
    return DiscountSpec(
        delta_phi=float(doc.get("delta_phi", delta if delta is not None else 1.0)),
        delta_gamma=float(doc.get("delta_gamma", delta if delta is not None else 1.0)),
        beta=float(doc.get("beta", 1.0)),
    )


def _prior_from_template(doc: dict, design: DesignRule, n_parents: int) -> NGPosterior:
    d = design.x_dim + n_parents
    if "m" in doc:
        m = np.asarray(doc["m"], dtype=float)
        if m.shape != (d,):
            raise ConfigError(f"prior m has length {m.size}, state needs {d}")
    else:
        m = np.zeros(d)
        if design.intercept:
            m[0] = float(doc.get("intercept_mean", 0.0))
    if "M" in doc:
        M = np.asarray(doc["M"], dtype=float)
        if M.shape == (d,):
            M = np.diag(M)
        if M.shape != (d, d):
            raise ConfigError(f"prior M has shape {M.shape}, state needs ({d}, {d})")
    else:
        coef_scale = float(doc.get("coef_scale", 1.0))
        diag = np.full(d, coef_scale)
        if design.intercept and "intercept_scale" in doc:
            diag[0] = float(doc["intercept_scale"])
        M = np.diag(diag)
    n = doc.get("n", 4.0)
    n = float("inf") if n in ("inf", ".inf") else float(n)
    s = float(doc.get("s", 1.0))
    return NGPosterior(m=m, M=M, n=n, s=s, split=design.x_dim)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(doc, base_dir=path.parent)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    graph_doc = _require(doc, "graph")
    labels = tuple(str(x) for x in _require(graph_doc, "labels"))
    graph = _parse_graph(graph_doc, labels)

    if "seed" not in doc:
        raise ConfigError("config must set an explicit seed")
    seed = int(doc["seed"])
    R = int(doc.get("R", 1000))

    design_doc = doc.get("design", {}) or {}
    default_design = _parse_design(design_doc.get("default", {}) or {}, labels)
    per_series_design = design_doc.get("per_series", {}) or {}
    designs = []
    for lab in labels:
        if lab in per_series_design:
            designs.append(_parse_design(per_series_design[lab], labels))
        else:
            designs.append(default_design)

    disc_doc = doc.get("discounts", {}) or {}
    default_disc = _parse_discount(disc_doc)
    per_series_disc = disc_doc.get("per_series", {}) or {}
    discounts = []
    for lab in labels:
        if lab in per_series_disc:
            discounts.append(_parse_discount(per_series_disc[lab]))
        else:
            discounts.append(default_disc)

    prior_doc = doc.get("priors", {}) or {}
    default_prior = prior_doc.get("default", {}) or {}
    per_series_prior = prior_doc.get("per_series", {}) or {}
    priors = []
    for j, lab in enumerate(labels):
        template = per_series_prior.get(lab, default_prior)
        priors.append(_prior_from_template(template, designs[j], len(graph.sp[j])))

    intervention = None
    if doc.get("intervention"):
        idoc = doc["intervention"]
        controls = _label_indices(labels, _require(idoc, "controls"), "intervention.controls")
        experimental = tuple(i for i in range(len(labels)) if i not in set(controls))
        if "experimental" in idoc:
            experimental = _label_indices(labels, idoc["experimental"], "intervention.experimental")
        intervention = InterventionSpec(
            time=idoc.get("time"),
            control_idx=controls,
            experimental_idx=experimental,
            oam_delta_star=idoc.get("oam_delta_star"),
            oam_beta_star=idoc.get("oam_beta_star"),
        )
        intervention.validate(len(labels))

    grid = None
    grid_until = None
    if doc.get("discount_grid"):
        gdoc = doc["discount_grid"]
        grid = (
            tuple(float(x) for x in _require(gdoc, "delta")),
            tuple(float(x) for x in _require(gdoc, "beta")),
        )
        grid_until = gdoc.get("until")

    data_path = doc.get("data")
    if data_path is not None and base_dir is not None and not Path(data_path).is_absolute():
        data_path = str((base_dir / data_path).resolve())

    cfg = RunConfig(
        data_path=data_path,
        transform=str(doc.get("transform", "none")),
        labels=labels,
        graph=graph,
        designs=tuple(designs),
        discounts=tuple(discounts),
        priors=tuple(priors),
        R=R,
        seed=seed,
        output=str(doc.get("output", "out")),
        marginal_likelihood=bool(doc.get("marginal_likelihood", False)),
        intervention=intervention,
        horizon=int(doc.get("horizon", 1)),
        discount_grid=grid,
        discount_grid_until=grid_until,
        monitor_exclude=tuple(doc.get("monitor_exclude", []) or []),
        simulate=doc.get("simulate"),
        reject_explosive=bool(doc.get("reject_explosive", False)),
        raw=doc,
    )
    # dimension consistency is enforced by the ModelSpec constructor
    cfg.model_spec()
    return cfg
