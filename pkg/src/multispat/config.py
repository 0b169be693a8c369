"""Model configuration files (TOML).

A configuration declares the data sources, one ``[[variable]]`` per likelihood,
one ``[[effect]]`` per latent term, and optional ``[mesh]``, ``[[prediction]]``,
``[fit]`` and ``[simulate]`` sections. Relative paths are resolved against the
directory holding the configuration file. Every cross-reference is checked when
the file is parsed; see the README for the full grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .exceptions import ParseError

MODEL_TYPES = ("areal", "geostat", "lgcp")
FAMILIES = ("poisson", "gaussian")
EFFECT_KINDS = ("intercept", "covariate", "besag", "iid", "spde", "copy")
_GRID = re.compile(r"^\s*regular\s+(\d+)\s*[x×]\s*(\d+)\s*$")


class ConfigError(ParseError):
    """A configuration file is malformed or inconsistent."""


@dataclass
class VariableConfig:
    name: str
    family: str
    observed: str | None = None
    expected: str | None = None
    data: Path | None = None
    column: str = "value"
    points: Path | None = None
    precision: float | None = None
    sd_prior: tuple = (1.0, 0.01)


@dataclass
class EffectConfig:
    name: str
    kind: str
    variables: list
    target: str | None = None
    column: str | None = None
    precision: float | None = None
    range_prior: tuple | None = None
    sigma_prior: tuple | None = None
    fixed: tuple | None = None
    initial: object = None


@dataclass
class PredictionConfig:
    name: str
    variable: str
    effects: list
    grid: tuple | None = None
    path: Path | None = None


@dataclass
class MeshConfig:
    max_edge: tuple = (0.1, 0.2)
    cutoff: float = 0.0
    offset: float | None = None


@dataclass
class FitConfig:
    z_scores: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    variance_method: str = "auto"


@dataclass
class ModelConfig:
    path: Path
    type: str
    variables: list
    effects: list
    data: Path | None = None
    graph: Path | None = None
    boundary: Path | None = None
    mesh: MeshConfig = field(default_factory=MeshConfig)
    predictions: list = field(default_factory=list)
    fit: FitConfig = field(default_factory=FitConfig)
    simulate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def base(self) -> Path:
        return self.path.parent

    def variable(self, name) -> VariableConfig:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def variable_index(self, name) -> int:
        return [v.name for v in self.variables].index(name)


def _err(msg, path):
    return ConfigError(msg, path=str(path))


def _get(table, key, kind, path, where, default=None, required=False):
    if key not in table:
        if required:
            raise _err(f"{where}: missing required key {key!r}", path)
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise _err(f"{where}: key {key!r} must be {kind.__name__}, got {val!r}", path)
    return val


def _pair(table, key, path, where):
    v = table.get(key)
    if v is None:
        return None
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v)):
        raise _err(f"{where}: {key!r} must be a pair of numbers", path)
    return (float(v[0]), float(v[1]))


def _check_keys(table, allowed, path, where):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise _err(f"{where}: unknown key(s) {', '.join(extra)}", path)


def load_config(path) -> ModelConfig:
    """Parse and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"invalid TOML: {exc.msg if hasattr(exc, 'msg') else exc}", line, str(path)) from None
    return parse_config(raw, path)


def parse_config(raw: dict, path) -> ModelConfig:
    path = Path(path)
    base = path.parent
    _check_keys(raw, ("model", "variable", "effect", "mesh", "prediction", "fit", "simulate"), path, "top level")
    model = raw.get("model")
    if not isinstance(model, dict):
        raise _err("missing [model] section", path)
    _check_keys(model, ("type", "data", "graph", "boundary"), path, "[model]")
    mtype = _get(model, "type", str, path, "[model]", required=True)
    if mtype not in MODEL_TYPES:
        raise _err(f"[model]: type must be one of {', '.join(MODEL_TYPES)}, got {mtype!r}", path)

    def resolve(p):
        return None if p is None else (base / p)

    variables = []
    raw_vars = raw.get("variable", [])
    if not isinstance(raw_vars, list) or not raw_vars:
        raise _err("at least one [[variable]] section is required", path)
    for i, t in enumerate(raw_vars):
        where = f"[[variable]] #{i + 1}"
        _check_keys(t, ("name", "family", "observed", "expected", "data", "column", "points",
                        "precision", "sd_prior"), path, where)
        name = _get(t, "name", str, path, where, required=True)
        fam = _get(t, "family", str, path, where, default="poisson" if mtype != "geostat" else "gaussian")
        if fam not in FAMILIES:
            raise _err(f"{where}: unknown family {fam!r}", path)
        if mtype == "lgcp" and fam != "poisson":
            raise _err(f"{where}: point patterns need the poisson family", path)
        prec = _get(t, "precision", float, path, where)
        if prec is not None and not prec > 0:
            raise _err(f"{where}: precision must be positive", path)
        v = VariableConfig(
            name=name,
            family=fam,
            observed=_get(t, "observed", str, path, where, default=name),
            expected=_get(t, "expected", str, path, where, default=f"{name}_expected"),
            data=resolve(_get(t, "data", str, path, where)),
            column=_get(t, "column", str, path, where, default="value"),
            points=resolve(_get(t, "points", str, path, where)),
            precision=prec,
            sd_prior=_pair(t, "sd_prior", path, where) or (1.0, 0.01),
        )
        if mtype == "geostat" and v.data is None:
            raise _err(f"{where}: geostatistical variables need a 'data' file", path)
        if mtype == "lgcp" and v.points is None:
            raise _err(f"{where}: point-pattern variables need a 'points' file", path)
        variables.append(v)
    vnames = [v.name for v in variables]
    if len(set(vnames)) != len(vnames):
        raise _err("variable names must be unique", path)

    effects = []
    raw_eff = raw.get("effect", [])
    if not isinstance(raw_eff, list) or not raw_eff:
        raise _err("at least one [[effect]] section is required", path)
    for i, t in enumerate(raw_eff):
        where = f"[[effect]] #{i + 1}"
        _check_keys(t, ("name", "kind", "variables", "target", "column", "precision",
                        "range_prior", "sigma_prior", "fixed", "initial"), path, where)
        name = _get(t, "name", str, path, where, required=True)
        where = f"effect {name!r}"
        kind = _get(t, "kind", str, path, where, required=True)
        if kind not in EFFECT_KINDS:
            raise _err(f"{where}: unknown kind {kind!r}", path)
        vs = _get(t, "variables", list, path, where, required=True)
        for v in vs:
            if v not in vnames:
                raise _err(f"{where}: unknown variable {v!r}", path)
        if not vs:
            raise _err(f"{where}: 'variables' is empty", path)
        e = EffectConfig(
            name=name, kind=kind, variables=list(vs),
            target=_get(t, "target", str, path, where),
            column=_get(t, "column", str, path, where),
            precision=_get(t, "precision", float, path, where),
            range_prior=_pair(t, "range_prior", path, where),
            sigma_prior=_pair(t, "sigma_prior", path, where),
            fixed=_pair(t, "fixed", path, where),
            initial=t.get("initial"),
        )
        if kind in ("besag",) and mtype != "areal":
            raise _err(f"{where}: besag effects need an areal model", path)
        if kind == "spde" and mtype == "areal":
            raise _err(f"{where}: spde effects need a geostat or lgcp model", path)
        if kind == "spde" and (e.range_prior is None or e.sigma_prior is None):
            raise _err(f"{where}: spde effects need range_prior and sigma_prior", path)
        if kind == "covariate" and e.column is None:
            raise _err(f"{where}: covariates need a 'column'", path)
        if kind == "copy" and e.target is None:
            raise _err(f"{where}: copy effects need a 'target'", path)
        if kind != "copy" and e.target is not None:
            raise _err(f"{where}: only copy effects take a 'target'", path)
        if e.precision is not None and not e.precision > 0:
            raise _err(f"{where}: precision must be positive", path)
        effects.append(e)
    enames = [e.name for e in effects]
    if len(set(enames)) != len(enames):
        raise _err("effect names must be unique", path)
    by = {e.name: e for e in effects}
    for e in effects:
        if e.kind == "copy":
            tgt = by.get(e.target)
            if tgt is None:
                raise _err(f"effect {e.name!r}: copy target {e.target!r} is not a declared effect", path)
            if tgt.kind == "copy":
                raise _err(f"effect {e.name!r}: copy target {e.target!r} is itself a copy", path)
            if tgt.kind in ("intercept", "covariate"):
                raise _err(f"effect {e.name!r}: copies of fixed effects are not supported", path)
    for v in vnames:
        hits = [e.name for e in effects if v in e.variables]
        if not hits:
            raise _err(f"variable {v!r} enters no effect", path)

    data = resolve(_get(model, "data", str, path, "[model]"))
    graph = resolve(_get(model, "graph", str, path, "[model]"))
    boundary = resolve(_get(model, "boundary", str, path, "[model]"))
    if mtype == "areal":
        if data is None:
            raise _err("[model]: areal models need a 'data' file", path)
        if any(e.kind == "besag" for e in effects) and graph is None:
            raise _err("[model]: besag effects need a 'graph' file", path)
    elif boundary is None:
        raise _err("[model]: geostat and lgcp models need a 'boundary' file", path)

    mesh = MeshConfig()
    if "mesh" in raw:
        t = raw["mesh"]
        _check_keys(t, ("max_edge", "cutoff", "offset"), path, "[mesh]")
        me = t.get("max_edge", list(mesh.max_edge))
        if isinstance(me, (int, float)):
            me = [me, me]
        if not (isinstance(me, list) and len(me) == 2 and all(isinstance(x, (int, float)) and x > 0 for x in me)):
            raise _err("[mesh]: max_edge must be a positive number or pair", path)
        mesh = MeshConfig(
            max_edge=(float(me[0]), float(me[1])),
            cutoff=_get(t, "cutoff", float, path, "[mesh]", default=0.0),
            offset=_get(t, "offset", float, path, "[mesh]"),
        )

    preds = []
    for i, t in enumerate(raw.get("prediction", [])):
        where = f"[[prediction]] #{i + 1}"
        _check_keys(t, ("name", "variable", "effects", "grid", "path"), path, where)
        if mtype == "areal":
            raise _err(f"{where}: prediction grids need a geostat or lgcp model", path)
        name = _get(t, "name", str, path, where, required=True)
        var = _get(t, "variable", str, path, where, default=vnames[0])
        if var not in vnames:
            raise _err(f"{where}: unknown variable {var!r}", path)
        effs = _get(t, "effects", list, path, where,
                    default=[e.name for e in effects if var in e.variables])
        for en in effs:
            if en not in by:
                raise _err(f"{where}: unknown effect {en!r}", path)
            if by[en].kind == "covariate":
                raise _err(f"{where}: covariates cannot enter prediction grids", path)
        grid = _get(t, "grid", str, path, where)
        ppath = _get(t, "path", str, path, where)
        if (grid is None) == (ppath is None):
            raise _err(f"{where}: give exactly one of 'grid' or 'path'", path)
        shape = None
        if grid is not None:
            mt = _GRID.match(grid)
            if not mt or int(mt.group(1)) < 1 or int(mt.group(2)) < 1:
                raise _err(f"{where}: grid must look like 'regular 50x40', got {grid!r}", path)
            shape = (int(mt.group(1)), int(mt.group(2)))
        preds.append(PredictionConfig(name, var, list(effs), shape, resolve(ppath)))
    if len({p.name for p in preds}) != len(preds):
        raise _err("prediction names must be unique", path)
    clash = {p.name for p in preds} & set(vnames)
    if clash:
        raise _err(f"prediction names clash with variable names: {sorted(clash)}", path)

    fitc = FitConfig()
    if "fit" in raw:
        t = raw["fit"]
        _check_keys(t, ("z_scores", "variance_method"), path, "[fit]")
        zs = t.get("z_scores", list(fitc.z_scores))
        if not (isinstance(zs, list) and zs and all(isinstance(z, (int, float)) for z in zs)):
            raise _err("[fit]: z_scores must be a non-empty list of numbers", path)
        vm = _get(t, "variance_method", str, path, "[fit]", default="auto")
        if vm not in ("auto", "solve", "takahashi"):
            raise _err(f"[fit]: unknown variance_method {vm!r}", path)
        fitc = FitConfig(tuple(float(z) for z in zs), vm)

    sim = raw.get("simulate", {})
    if not isinstance(sim, dict):
        raise _err("[simulate] must be a table", path)

    return ModelConfig(path=path, type=mtype, variables=variables, effects=effects, data=data,
                       graph=graph, boundary=boundary, mesh=mesh, predictions=preds, fit=fitc,
                       simulate=sim, raw=raw)
