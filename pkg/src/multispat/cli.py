"""Command-line interface: ``multispat {mesh,fit,simulate,version}``.

Exit codes: 0 success, 2 input/output error, 3 configuration or parse error,
4 numerical failure. Errors are reported on stderr as a single line starting
with ``error[io]``, ``error[config]`` or ``error[numerical]``.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__, io, lgm, simulate
from .areal import AdjacencyGraph
from .config import ConfigError, ModelConfig, load_config
from .exceptions import (
    AssemblyError,
    ConvergenceError,
    DataError,
    InvalidGeometryError,
    ParseError,
    StructuralError,
)
from .geometry import Polygon, build_mesh, dual_weights, projector_matrix
from .inference import fit
from .sparse import NotPositiveDefiniteError
from .spde import PcPriorSpec
from .stack import StackedData, join_stacks, stack_point_pattern

logger = logging.getLogger("multispat")

DEFAULT_SEED = 20190501
EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------- model building


def _read_boundary(cfg: ModelConfig) -> Polygon:
    return io.read_polygon(cfg.boundary)


def _mesh_for(cfg: ModelConfig, boundary: Polygon, seeds=None):
    m = cfg.mesh
    return build_mesh(boundary, seed_points=seeds, max_edge_inner=m.max_edge[0],
                      max_edge_outer=m.max_edge[1], cutoff=m.cutoff, offset_outer=m.offset)


def _indicator(n_rows, pos, levels):
    return sp.csr_matrix((np.ones(n_rows), (np.arange(n_rows), np.full(n_rows, pos))),
                         shape=(n_rows, levels))


def _single_column_stack(values, exposure, k, K, blocks, tag):
    n = len(values)
    data = np.zeros((n, K))
    mask = np.ones((n, K), dtype=bool)
    data[:, k] = np.ma.getdata(values)
    mask[:, k] = np.ma.getmaskarray(values)
    return StackedData(np.ma.array(data, mask=mask), np.asarray(exposure, dtype=float),
                       blocks, ((tag, 0, n),))


class Problem:
    """A configuration turned into a stack, effect declarations and families."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.mesh = None
        self.graph = None
        self.coords = {}
        K = len(cfg.variables)
        stacks = []
        if cfg.type == "areal":
            stacks = self._areal(K)
        elif cfg.type == "geostat":
            stacks = self._geostat(K)
        else:
            stacks = self._lgcp(K)
        stacks.extend(self._predictions(K))
        self.stack = join_stacks(stacks)
        self.effects = [self._effect(e) for e in cfg.effects]
        self.families = [
            lgm.Poisson() if v.family == "poisson"
            else lgm.Gaussian(precision=v.precision, sd_prior=v.sd_prior)
            for v in cfg.variables
        ]
        self.model = lgm.assemble(self.stack, self.effects, self.families)

    def _effect(self, e):
        if e.kind == "intercept":
            return lgm.intercept(e.name, levels=len(e.variables))
        if e.kind == "covariate":
            return lgm.covariate(e.name)
        if e.kind == "besag":
            return lgm.besag(e.name, self.graph, precision=e.precision, initial=e.initial or 1.0)
        if e.kind == "iid":
            return lgm.iid(e.name, self.n_areas, precision=e.precision, initial=e.initial or 1.0)
        if e.kind == "spde":
            prior = PcPriorSpec(e.range_prior[0], e.range_prior[1], e.sigma_prior[0], e.sigma_prior[1])
            init = tuple(e.initial) if e.initial is not None else None
            return lgm.spde_effect(e.name, self.mesh, prior, fixed=e.fixed, initial=init)
        return lgm.copy(e.name, e.target)

    def _layout(self, e):
        """Kind of projector an effect needs: its own kind, or its target's for copies."""
        if e.kind == "copy":
            return next(t for t in self.cfg.effects if t.name == e.target).kind
        return e.kind

    def _areal(self, K):
        cfg = self.cfg
        table = io.read_csv(cfg.data)
        n = len(next(v for k, v in table.items() if k != "__path__"))
        self.n_areas = n
        if cfg.graph is not None:
            self.graph = io.read_graph_file(cfg.graph)
            if self.graph.n != n:
                raise DataError(f"graph has {self.graph.n} areas but {cfg.data} has {n} rows")
        stacks = []
        for k, v in enumerate(cfg.variables):
            y = io.numeric_column(table, v.observed, allow_missing=True)
            if v.family == "poisson":
                E = io.numeric_column(table, v.expected)
                if np.any(E <= 0):
                    raise DataError(f"column {v.expected!r}: expected counts must be positive")
            else:
                E = np.ones(n)
            blocks = {}
            for e in cfg.effects:
                if v.name not in e.variables:
                    continue
                lay = self._layout(e)
                if lay == "intercept":
                    blocks[e.name] = _indicator(n, e.variables.index(v.name), len(e.variables))
                elif lay == "covariate":
                    blocks[e.name] = sp.csr_matrix(io.numeric_column(table, e.column)[:, None])
                else:
                    blocks[e.name] = sp.identity(n, format="csr")
            stacks.append(_single_column_stack(y, E, k, K, blocks, v.name))
        return stacks

    def _geostat(self, K):
        cfg = self.cfg
        self.boundary = _read_boundary(cfg)
        tables = [io.read_csv(v.data) for v in cfg.variables]
        locs = [np.column_stack([io.numeric_column(t, "x"), io.numeric_column(t, "y")]) for t in tables]
        self.mesh = _mesh_for(cfg, self.boundary, np.vstack(locs) if locs else None)
        stacks = []
        for k, (v, t, xy) in enumerate(zip(cfg.variables, tables, locs)):
            A = projector_matrix(self.mesh, xy)
            if A.outside.any():
                raise DataError(f"{v.data}: {int(A.outside.sum())} locations fall outside the mesh")
            y = io.numeric_column(t, v.column, allow_missing=True)
            n = len(y)
            blocks = {}
            for e in cfg.effects:
                if v.name not in e.variables:
                    continue
                lay = self._layout(e)
                if lay == "intercept":
                    blocks[e.name] = _indicator(n, e.variables.index(v.name), len(e.variables))
                elif lay == "covariate":
                    blocks[e.name] = sp.csr_matrix(io.numeric_column(t, e.column)[:, None])
                elif lay == "spde":
                    blocks[e.name] = A.matrix
                else:
                    raise AssemblyError(f"effect {e.name!r}: {lay} effects need an areal model")
            stacks.append(_single_column_stack(y, np.ones(n), k, K, blocks, v.name))
            self.coords[v.name] = xy
        return stacks

    def _lgcp(self, K):
        cfg = self.cfg
        self.boundary = _read_boundary(cfg)
        self.mesh = _mesh_for(cfg, self.boundary)
        w = dual_weights(self.mesh, self.boundary)
        stacks = []
        for k, v in enumerate(cfg.variables):
            t = io.read_csv(v.points)
            xy = np.column_stack([io.numeric_column(t, "x"), io.numeric_column(t, "y")])
            A = projector_matrix(self.mesh, xy)
            mesh_effects, fixed = [], {}
            for e in cfg.effects:
                if v.name not in e.variables:
                    continue
                lay = self._layout(e)
                if lay == "spde":
                    mesh_effects.append(e.name)
                elif lay == "intercept":
                    fixed[e.name] = (e.variables.index(v.name), len(e.variables))
                else:
                    raise AssemblyError(f"effect {e.name!r}: {lay} effects are not supported for point patterns")
            st = stack_point_pattern(w, A, k, K, mesh_effects=mesh_effects, tag=v.name)
            blocks = dict(st.blocks)
            for name, (pos, levels) in fixed.items():
                blocks[name] = _indicator(st.n_rows, pos, levels)
            stacks.append(StackedData(st.response, st.exposure, blocks, st.row_tags))
            self.coords[v.name] = np.vstack([self.mesh.vertices, xy])
        return stacks

    def _predictions(self, K):
        out = []
        for p in self.cfg.predictions:
            if p.grid is not None:
                xy = _regular_grid(self.boundary, *p.grid)
            else:
                t = io.read_csv(p.path)
                xy = np.column_stack([io.numeric_column(t, "x"), io.numeric_column(t, "y")])
            A = projector_matrix(self.mesh, xy)
            n = len(xy)
            blocks = {}
            for name in p.effects:
                e = next(t for t in self.cfg.effects if t.name == name)
                lay = self._layout(e)
                if lay == "intercept":
                    pos = e.variables.index(p.variable) if p.variable in e.variables else 0
                    blocks[name] = _indicator(n, pos, len(e.variables))
                elif lay == "spde":
                    blocks[name] = A.matrix
            k = self.cfg.variable_index(p.variable)
            y = np.ma.array(np.zeros(n), mask=np.ones(n, dtype=bool))
            out.append(_single_column_stack(y, np.ones(n), k, K, blocks, p.name))
            self.coords[p.name] = xy
        return out


def _regular_grid(boundary: Polygon, nx, ny):
    """Cell centres of an ``nx`` by ``ny`` grid over the bounding box, kept if inside."""
    x0, y0, x1, y1 = boundary.bounds
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys)
    xy = np.column_stack([X.ravel(), Y.ravel()])
    return xy[boundary.contains(xy)]


# ---------------------------------------------------------------- outputs


def write_fit_outputs(problem: Problem, result, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    model = problem.model
    eff, idx, mean, sd = [], [], [], []
    for e in model.effects:
        if e.kind == "copy":
            continue
        m, s = result.effect(e.name)
        eff += [e.name] * len(m)
        idx += list(range(len(m)))
        mean += list(m)
        sd += list(s)
    io.write_csv(out_dir / "summary.csv", {"effect": eff, "index": idx, "mean": mean, "sd": sd})

    tags, rows, xs, ys, pm, ps = [], [], [], [], [], []
    for tag in model.stack.tags:
        m, s = result.predict_rows(tag)
        xy = problem.coords.get(tag)
        tags += [tag] * len(m)
        rows += list(range(len(m)))
        xs += list(xy[:, 0]) if xy is not None else [None] * len(m)
        ys += list(xy[:, 1]) if xy is not None else [None] * len(m)
        pm += list(m)
        ps += list(s)
    io.write_csv(out_dir / "predictors.csv",
                 {"tag": tags, "index": rows, "x": xs, "y": ys, "mean": pm, "sd": ps})

    names = [_hyper_label(problem.cfg, h) for h in model.hypers]
    hs = [result.hyper_summaries[h.name] for h in model.hypers]
    io.write_csv(out_dir / "hyper.csv", {
        "name": names,
        "mean": [h["mean"] for h in hs],
        "sd": [h["sd"] for h in hs],
        "mode": [h["mode"] for h in hs],
        "theta_mean": [h["theta_mean"] for h in hs],
        "theta_sd": [h["theta_sd"] for h in hs],
    })
    (out_dir / "mlik.txt").write_text(f"{float(result.log_marginal_likelihood)!r}\n", encoding="utf-8")
    if problem.mesh is not None:
        io.write_mesh(problem.mesh, out_dir)


def _hyper_label(cfg, h):
    if h.owner.startswith("family"):
        return f"{cfg.variables[int(h.owner[6:])].name}.precision"
    return h.name


# ---------------------------------------------------------------- simulation


def _lattice_shape(spec):
    try:
        a, b = str(spec).lower().replace("×", "x").split("x")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"[simulate]: lattice must look like '5x4', got {spec!r}") from None


def _per_variable(sim, key, K, default=None):
    v = sim.get(key, default)
    if v is None:
        raise ConfigError(f"[simulate]: missing key {key!r}")
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, K)
    if arr.size != K:
        raise ConfigError(f"[simulate]: {key!r} needs one value per variable ({K})")
    return arr


def _sim_float(sim, key, default=None):
    v = sim.get(key, default)
    if v is None:
        raise ConfigError(f"[simulate]: missing key {key!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[simulate]: {key!r} must be a number")
    return float(v)


def _target(cfg: ModelConfig, out_dir: Path, p: Path) -> Path:
    dest = out_dir / p.relative_to(cfg.base)
    dest.parent.mkdir(parents=True, exist_ok=True)
    return dest


def _simulated_boundary(cfg: ModelConfig, out_dir: Path) -> Polygon:
    sim = cfg.simulate
    dest = _target(cfg, out_dir, cfg.boundary)
    if cfg.boundary.exists():
        poly = io.read_polygon(cfg.boundary)
    elif "square" in sim:
        poly = Polygon.square(0.0, 0.0, _sim_float(sim, "square"))
    else:
        raise FileNotFoundError(f"{cfg.boundary} (or set 'square' in [simulate])")
    dest.write_text(io.format_polygon(poly), encoding="utf-8")
    return poly


def run_simulation(cfg: ModelConfig, out_dir: Path, seed: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = cfg.simulate
    if not sim:
        raise ConfigError("configuration has no [simulate] section", path=str(cfg.path))
    rng = np.random.default_rng(seed)
    K = len(cfg.variables)
    written = []
    if cfg.type == "areal":
        if cfg.graph is not None and cfg.graph.exists():
            graph = io.read_graph_file(cfg.graph)
        elif "lattice" in sim:
            graph = AdjacencyGraph.lattice(*_lattice_shape(sim["lattice"]))
        else:
            raise FileNotFoundError(f"{cfg.graph} (or set 'lattice' in [simulate])")
        if cfg.graph is not None:
            gpath = _target(cfg, out_dir, cfg.graph)
            io.write_graph(graph, gpath)
            written.append(gpath)
        E = np.repeat(_per_variable(sim, "expected", K)[None, :], graph.n, axis=0)
        spec = _per_variable(sim, "sigma_specific", max(K - 1, 1), 0.0)
        res = simulate.simulate_areal(graph, E, _per_variable(sim, "intercepts", K),
                                      _sim_float(sim, "sigma_shared"), spec[:max(K - 1, 0)], rng)
        cols = {"area": np.arange(1, graph.n + 1)}
        for k, v in enumerate(cfg.variables):
            if v.family == "poisson":
                cols[v.observed] = res.counts[:, k]
                cols[v.expected] = E[:, k]
            else:
                raise ConfigError(f"[simulate]: areal simulation supports poisson variables only ({v.name!r})")
        dpath = _target(cfg, out_dir, cfg.data)
        io.write_csv(dpath, cols)
        written.append(dpath)
    elif cfg.type == "geostat":
        poly = _simulated_boundary(cfg, out_dir)
        written.append(_target(cfg, out_dir, cfg.boundary))
        mesh = _mesh_for(cfg, poly)
        n_points = _per_variable(sim, "n_points", K).astype(int)
        res = simulate.simulate_geostat(
            mesh, poly, n_points, _per_variable(sim, "intercepts", K), _sim_float(sim, "range"),
            _sim_float(sim, "sigma"), _per_variable(sim, "noise_sd", K),
            specific_range=sim.get("specific_range"), specific_sigma=sim.get("specific_sigma"), rng=rng,
        )
        for v, xy, vals in zip(cfg.variables, res.locations, res.values):
            p = _target(cfg, out_dir, v.data)
            io.write_csv(p, {"x": xy[:, 0], "y": xy[:, 1], v.column: vals})
            written.append(p)
    else:
        poly = _simulated_boundary(cfg, out_dir)
        written.append(_target(cfg, out_dir, cfg.boundary))
        mesh = _mesh_for(cfg, poly)
        sigma = _sim_float(sim, "sigma", 0.0)
        res = simulate.simulate_lgcp(
            mesh, poly, _per_variable(sim, "intercepts", K),
            range_=_sim_float(sim, "range") if sigma > 0 else None, sigma=sigma,
            specific_range=sim.get("specific_range"),
            specific_sigma=_sim_float(sim, "specific_sigma", 0.0), rng=rng,
        )
        for v, pts in zip(cfg.variables, res.points):
            p = _target(cfg, out_dir, v.points)
            io.write_csv(p, {"x": pts[:, 0], "y": pts[:, 1]})
            written.append(p)
    cfg_copy = out_dir / cfg.path.name
    if cfg_copy.resolve() != cfg.path.resolve():
        shutil.copyfile(cfg.path, cfg_copy)
    written.append(cfg_copy)
    return written


# ---------------------------------------------------------------- commands


def cmd_mesh(args):
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.boundary is None:
            raise ConfigError("[model]: mesh needs a 'boundary' file", path=str(cfg.path))
        boundary = io.read_polygon(cfg.boundary)
        mesh = _mesh_for(cfg, boundary)
    else:
        if args.boundary is None:
            raise ConfigError("mesh needs --boundary or --config")
        boundary = io.read_polygon(args.boundary)
        outer = args.max_edge_outer if args.max_edge_outer is not None else 2 * args.max_edge
        mesh = build_mesh(boundary, max_edge_inner=args.max_edge, max_edge_outer=outer,
                          cutoff=args.cutoff, offset_outer=args.offset)
    out = Path(args.output_dir)
    io.write_mesh(mesh, out)
    w = dual_weights(mesh, boundary)
    io.write_csv(out / "mesh_weights.csv", {"weight": w})
    print(f"mesh: {mesh.n_vertices} vertices, {len(mesh.triangles)} triangles, "
          f"{int((~mesh.boundary_flags).sum())} inside the domain")
    return EXIT_OK


def cmd_fit(args):
    cfg = load_config(args.config)
    print(f"seed: {args.seed}")
    problem = Problem(cfg)
    logger.info("%d stack rows, %d latent values, %d hyperparameters",
                problem.stack.n_rows, problem.model.n_latent, problem.model.n_hyper)
    result = fit(problem.model, z_scores=cfg.fit.z_scores, threads=args.threads,
                 variance_method=cfg.fit.variance_method)
    out = Path(args.output_dir)
    write_fit_outputs(problem, result, out)
    print(f"fit: {len(result.grid.points)} grid points, log marginal likelihood "
          f"{result.log_marginal_likelihood:.6f}; outputs in {out}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args.config)
    print(f"seed: {args.seed}")
    written = run_simulation(cfg, Path(args.output_dir), args.seed)
    print(f"simulate: wrote {len(written)} files to {args.output_dir}")
    return EXIT_OK


def cmd_version(args):
    print(f"multispat {__version__}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_CONFIG, f"error[config]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="model configuration (TOML)")
    common.add_argument("--output-dir", default="multispat-output", help="directory for outputs")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for the hyperparameter grid (default: all cores)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"64-bit random seed (default {DEFAULT_SEED})")
    common.add_argument("--verbose", "-v", action="count", default=0)

    p = _Parser(prog="multispat", description="Multivariate spatial latent Gaussian models.")
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("mesh", parents=[common], help="triangulate a polygonal domain")
    m.add_argument("--boundary", type=Path, help="polygon ring file")
    m.add_argument("--max-edge", type=float, default=0.1)
    m.add_argument("--max-edge-outer", type=float, default=None)
    m.add_argument("--cutoff", type=float, default=0.0)
    m.add_argument("--offset", type=float, default=None)
    m.set_defaults(func=cmd_mesh)
    f = sub.add_parser("fit", parents=[common], help="fit a configured model")
    f.set_defaults(func=cmd_fit, needs_config=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate data for a configured model")
    s.set_defaults(func=cmd_simulate, needs_config=True)
    v = sub.add_parser("version", parents=[common], help="print the version")
    v.set_defaults(func=cmd_version)
    return p


def _fail(kind, msg, code):
    print(f"error[{kind}]: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "needs_config", False) and args.config is None:
        return _fail("config", f"{args.command} needs --config", EXIT_CONFIG)
    if args.threads < 1:
        return _fail("config", "--threads must be at least 1", EXIT_CONFIG)
    if not 0 <= args.seed < 2**64:
        return _fail("config", "--seed must fit in 64 unsigned bits", EXIT_CONFIG)
    try:
        return args.func(args)
    except (ConvergenceError, NotPositiveDefiniteError, FloatingPointError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename is not None else exc
        return _fail("io", f"file not found: {name}", EXIT_IO)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except (ParseError, StructuralError, AssemblyError, DataError, InvalidGeometryError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except np.linalg.LinAlgError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except (ValueError, KeyError) as exc:
        return _fail("config", exc, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
