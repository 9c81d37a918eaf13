"""Experiment drivers: basin maps, distance/noise grids, rate/order tables,
FEM case studies and the beam fit, plus their CSV and PPM writers.
"""
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem1d, minimize, problems, rootfind
from .numkit import norm2

ROOT_RADIUS = 1e-2
CHUNK = 4096

# status codes of a basin cell
MAX_ITERS, DIVERGED, UNMATCHED = -1, -2, -3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------- c-policy

def make_policy(spec):
    """Build a c-policy from a config dict such as {"kind": "scalar", "phi": 2}."""
    if spec is None:
        return None
    kind = spec.get("kind")
    try:
        if kind == "scalar":
            return rootfind.Scalar(float(spec["phi"]))
        if kind == "per_axis":
            return rootfind.PerAxis(tuple(float(v) for v in spec["phi"]))
        if kind == "offset":
            return rootfind.Offset(float(spec["delta"]))
        if kind == "constant":
            return rootfind.Constant(tuple(float(v) for v in spec["c"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("bad c_policy %r: %s" % (spec, exc)) from None
    raise ConfigError("unknown c_policy kind %r" % kind)


# ------------------------------------------------------------------ basins

@dataclass
class BasinGrid:
    x0_range: tuple
    x1_range: tuple
    nx: int
    ny: int
    status: np.ndarray        # (ny, nx) int, row j is x1 = centre of j-th band from the bottom
    iters: np.ndarray         # (ny, nx) int
    final: np.ndarray = None  # (ny, nx, 2) last iterate
    max_iters: int = 100

    def centres(self):
        g0 = self.x0_range[0] + (np.arange(self.nx) + 0.5) * (self.x0_range[1] - self.x0_range[0]) / self.nx
        g1 = self.x1_range[0] + (np.arange(self.ny) + 0.5) * (self.x1_range[1] - self.x1_range[0]) / self.ny
        return g0, g1


@dataclass
class GridReport:
    coverage_percent: float    # cells that reached a known root
    converged_percent: float   # all cells the solver called converged, matched or not
    root_counts: list
    unmatched: int
    diverged: int
    max_iters: int
    mean_iterations: float


def _solve_cells(system, x, method, policy, tol, c_update):
    """Run NR or ENR on every row of x at once.

    Returns per-cell (state, iterations, final x) with state 1 converged,
    2 diverged, 3 iteration cap.
    """
    n = len(x)
    x = x.copy()
    state = np.zeros(n, int)
    iters = np.zeros(n, int)
    c0 = policy(x) if (policy is not None and c_update == "initial") else None
    with np.errstate(all="ignore"):
        for it in range(tol.max_iters + 1):
            act = np.flatnonzero(state == 0)
            if act.size == 0:
                break
            xa = x[act]
            F = system.F(xa)
            J = system.jac(xa)
            nF = norm2(F)
            bad = ~(np.isfinite(nF) & np.isfinite(J).all((-1, -2)) & np.isfinite(xa).all(-1))
            if system.domain is not None:
                bad |= ~system.domain(xa)
            conv = ~bad & (nF <= tol.abs_residual)
            state[act[bad]] = 2
            state[act[conv]] = 1
            live = ~bad & ~conv
            if it == tol.max_iters:
                state[act[live]] = 3
                break
            act, xa, F, J = act[live], xa[live], F[live], J[live]
            if method == "nr":
                dx, code = rootfind.nr_step_batch(F, J)
            else:
                c = c0[act] if c0 is not None else policy(xa)
                Fc = system.F(c)
                if system.domain is not None:
                    Fc[~system.domain(c)] = np.nan
                dx, code = rootfind.enr_step_batch(F, J, Fc, xa - c, tol.denom_guard)
            good = code == rootfind.OK
            state[act[~good]] = 2
            act, dx = act[good], dx[good]
            x[act] += dx
            iters[act] += 1
            if tol.rel_step > 0:
                small = norm2(dx) <= tol.rel_step
                state[act[small]] = 1
    return state, iters, x


def _config_tol(cfg):
    t = cfg.get("tolerances", {})
    try:
        return rootfind.Tolerances(rel_step=float(t.get("rel_step", 1e-6)),
                                   abs_residual=float(t.get("abs_residual", 0.001414)),
                                   max_iters=int(t.get("max_iters", 100)),
                                   denom_guard=float(t.get("denom_guard", 1e-12)))
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad tolerances: %s" % exc) from None


def basin_map(config, workers=1):
    """Basin-of-attraction grid over a 2-d box of initial guesses.

    config keys: problem, method ("nr" | "enr"), c_policy, c_update
    ("initial" | "every"), range ([lo, hi] or [[lo0, hi0], [lo1, hi1]]),
    resolution (n or [nx, ny]), tolerances.
    """
    try:
        system = problems.get_system(config["problem"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    if system.dim != 2:
        raise ConfigError("basin maps need a 2-d system")
    method = config.get("method", "nr")
    if method not in ("nr", "enr"):
        raise ConfigError("method must be nr or enr")
    policy = make_policy(config.get("c_policy")) if method == "enr" else None
    if method == "enr" and policy is None:
        raise ConfigError("ENR needs a c_policy")
    c_update = config.get("c_update", "initial")
    if c_update not in ("initial", "every"):
        raise ConfigError("c_update must be initial or every")
    rng = np.asarray(config.get("range", [-50, 50]), float)
    rng = np.broadcast_to(rng, (2, 2)) if rng.shape == (2,) else rng
    res = config.get("resolution", 128)
    nx, ny = (res, res) if np.isscalar(res) else res
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1 or rng.shape != (2, 2):
        raise ConfigError("bad range or resolution")
    tol = _config_tol(config)

    grid = BasinGrid(tuple(rng[0]), tuple(rng[1]), nx, ny, None, None, max_iters=tol.max_iters)
    g0, g1 = grid.centres()
    X0, X1 = np.meshgrid(g0, g1, indexing="xy")
    pts = np.stack([X0.ravel(), X1.ravel()], axis=-1)

    # cells are independent; chunks are merged back by index
    # fixed chunk size so the arithmetic does not depend on the worker count
    chunks = [np.arange(a, min(a + CHUNK, len(pts))) for a in range(0, len(pts), CHUNK)]
    run = lambda idx: _solve_cells(system, pts[idx], method, policy, tol, c_update)
    if workers > 1:
        with ThreadPoolExecutor(int(workers)) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    state = np.concatenate([p[0] for p in parts])
    iters = np.concatenate([p[1] for p in parts])
    final = np.concatenate([p[2] for p in parts])

    status = np.full(len(pts), MAX_ITERS)
    status[state == 2] = DIVERGED
    conv = state == 1
    roots = system.known_roots
    with np.errstate(invalid="ignore"):
        dist = norm2(final[:, None, :] - roots[None, :, :])
    k = np.argmin(dist, axis=1)
    hit = dist[np.arange(len(pts)), k] <= ROOT_RADIUS
    status[conv & hit] = k[conv & hit]
    status[conv & ~hit] = UNMATCHED

    grid.status = status.reshape(ny, nx)
    grid.iters = iters.reshape(ny, nx)
    grid.final = final.reshape(ny, nx, 2)
    return grid, grid_report(grid, len(roots))


def grid_report(grid, n_roots):
    s = grid.status.ravel()
    total = s.size
    matched = s >= 0
    conv = matched | (s == UNMATCHED)
    it = grid.iters.ravel()
    return GridReport(
        coverage_percent=100.0 * matched.sum() / total,
        converged_percent=100.0 * conv.sum() / total,
        root_counts=[int((s == k).sum()) for k in range(n_roots)],
        unmatched=int((s == UNMATCHED).sum()),
        diverged=int((s == DIVERGED).sum()),
        max_iters=int((s == MAX_ITERS).sum()),
        mean_iterations=float(it[conv].mean()) if conv.any() else float("nan"))


# ---------------------------------------------------------------- PPM output

PALETTE = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189),
           (255, 127, 14), (140, 86, 75), (227, 119, 194), (23, 190, 207)]
UNMATCHED_RGB = (128, 128, 128)


def basin_image(grid, palette=PALETTE):
    """RGB array (ny, nx, 3), top row = largest x1.

    Root k takes palette colour k, faded linearly towards white with the
    iteration count (0 iterations full colour, max_iters almost white).
    Cap cells are white, diverged cells black, unmatched converged grey.
    """
    s, it = grid.status, grid.iters
    img = np.zeros(s.shape + (3,), np.uint8)
    img[s == MAX_ITERS] = 255
    img[s == UNMATCHED] = UNMATCHED_RGB
    t = np.clip(it / (grid.max_iters + 1.0), 0.0, 1.0)[..., None]
    for k in np.unique(s[s >= 0]):
        base = np.array(palette[k % len(palette)], float)
        m = s == k
        img[m] = np.round(base + (255.0 - base) * t[m]).astype(np.uint8)
    return img[::-1]


def render_ppm(grid, path, palette=PALETTE):
    """Write the basin image as binary PPM (P6)."""
    img = basin_image(grid, palette)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


# --------------------------------------------------------------------- CSV

def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_basin(grid, report, outdir):
    os.makedirs(outdir, exist_ok=True)
    g0, g1 = grid.centres()
    rows = []
    for j in range(grid.ny):
        for i in range(grid.nx):
            rows.append((i, j, g0[i], g1[j], grid.status[j, i], grid.iters[j, i]))
    write_csv(os.path.join(outdir, "grid.csv"), ["ix", "iy", "x0", "x1", "status", "iterations"], rows)
    rep = [("coverage_percent", report.coverage_percent),
           ("converged_percent", report.converged_percent),
           ("unmatched", report.unmatched), ("diverged", report.diverged),
           ("max_iters", report.max_iters), ("mean_iterations", report.mean_iterations)]
    rep += [("root_%d" % k, n) for k, n in enumerate(report.root_counts)]
    write_csv(os.path.join(outdir, "report.csv"), ["key", "value"], rep)
    render_ppm(grid, os.path.join(outdir, "basin.ppm"))


# ------------------------------------------------------ distance x noise grid

@dataclass
class DistanceNoiseGrid:
    distances: np.ndarray
    snr_values: list            # dB, None for a noiseless row
    mean_steps: np.ndarray      # (n_snr, n_dist); NaN where any repeat failed
    failures: np.ndarray        # (n_snr, n_dist) count of failed repeats


def cell_seed(*keys):
    """Stable 64-bit seed for a grid cell."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _fit_fn(method):
    if method == "gn":
        return minimize.gauss_newton
    if method == "cgn":
        return minimize.corrected_gauss_newton
    raise ConfigError("method must be gn or cgn")


def minimisation_grid(config, workers=1):
    """Mean GN/CGN step counts over a grid of start distances and noise levels.

    config keys: model, method, distances ({"lo", "hi", "n"} log10 exponents
    or an explicit list), snr_db (list, null = noiseless), n_obs, repeats,
    seed, tolerances.
    """
    try:
        entry = problems.get_model(config["model"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    fit = _fit_fn(config.get("method", "gn"))
    d = config.get("distances", {"lo": -2, "hi": 2, "n": 9})
    dist = np.logspace(d["lo"], d["hi"], int(d["n"])) if isinstance(d, dict) else np.asarray(d, float)
    snrs = config.get("snr_db", [None, 40, 20, 10])
    n_obs = int(config.get("n_obs", 20))
    reps = int(config.get("repeats", 3))
    seed = int(config.get("seed", 0))
    tol = _config_tol(config)
    model = entry.model

    def cell(ij):
        i, j = ij
        obs = minimize.generate_observations(model, entry.sampling_range, n_obs, snrs[i],
                                             cell_seed(seed, i, 0))
        steps, fails = [], 0
        for r in range(reps):
            th0 = minimize.initial_guess_at_distance(model.true_params, dist[j],
                                                     cell_seed(seed, i, j, r, 1))
            tr = fit(model, obs, th0, tol)
            if tr.status.ok:
                steps.append(tr.iterations)
            else:
                fails += 1
        return (np.mean(steps) if fails == 0 else np.nan), fails

    cells = [(i, j) for i in range(len(snrs)) for j in range(len(dist))]
    if workers > 1:
        with ThreadPoolExecutor(int(workers)) as ex:
            out = list(ex.map(cell, cells))
    else:
        out = [cell(c) for c in cells]
    mean = np.array([o[0] for o in out]).reshape(len(snrs), len(dist))
    fails = np.array([o[1] for o in out]).reshape(len(snrs), len(dist))
    return DistanceNoiseGrid(dist, list(snrs), mean, fails)


def write_mingrid(g, outdir):
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for i, snr in enumerate(g.snr_values):
        for j, d in enumerate(g.distances):
            rows.append((snr if snr is not None else "inf", d, g.mean_steps[i, j], g.failures[i, j]))
    write_csv(os.path.join(outdir, "mingrid.csv"), ["snr_db", "distance", "mean_steps", "failures"], rows)


# ----------------------------------------------------------------- rate/order

def rate_order_report(model_name="gn2", theta0=None, snr_db=None, n_obs=20, seed=0, tol=None):
    """(method, n, q_n, mu_n) rows for GN and CGN from the same data and start.

    Errors are measured against theta* for noiseless data. With noise the
    least-squares minimiser is not theta*, so the final iterate is used.
    """
    entry = problems.get_model(model_name)
    model = entry.model
    theta0 = np.full(model.param_count, 10.0) if theta0 is None else np.asarray(theta0, float)
    obs = minimize.generate_observations(model, entry.sampling_range, n_obs, snr_db, seed)
    ref = model.true_params if snr_db is None else None
    tol = tol or rootfind.Tolerances()
    rows, traces = [], {}
    for name, fn in (("gn", minimize.gauss_newton), ("cgn", minimize.corrected_gauss_newton)):
        tr = fn(model, obs, theta0, tol)
        traces[name] = tr
        e = rootfind.error_sequence(tr, ref)
        if e.size < 4 or np.any(e <= 0):
            e = e[: np.argmax(e <= 0)] if np.any(e <= 0) else e
        if e.size < 4:
            continue
        est = rootfind.estimate_rate_order(e)
        for n, (q, mu) in enumerate(zip(est.order_q, est.rate_mu), start=1):
            rows.append((name, n, q, mu))
    return rows, traces


# --------------------------------------------------------------------- FEM

# Benchmark loads. The reference deformations (4.451 m, 319.16 %) come out
# when each element hands b*l0 to both of its nodes, twice the consistent
# b*l0/2, so the loaded presets carry body_factor=2.
PRESET_BODY_FACTOR = 2.0
VW_PARAMS = {"A": 2.48446e6, "B": 0.16860}
MR_PARAMS = {"mu": 5.289e6, "nu": 0.6417}

FEM_PRESETS = {
    "linear": {"material": {"kind": "linear", "E": 100.0},
               "loading": {"body": 0.0, "traction": 20.0}, "phi": 2.0},
    "vw5": {"material": dict(kind="veronda_westmann", **VW_PARAMS),
            "loading": {"body": 5e6, "traction": 5e6, "body_factor": PRESET_BODY_FACTOR}, "phi": 4.0},
    "vw20": {"material": dict(kind="veronda_westmann", **VW_PARAMS),
             "loading": {"body": 20e6, "traction": 20e6, "body_factor": PRESET_BODY_FACTOR}, "phi": 4.0},
    "mr5": {"material": dict(kind="mooney_rivlin", **MR_PARAMS),
            "loading": {"body": -5e6, "traction": -5e6, "body_factor": PRESET_BODY_FACTOR}, "phi": 0.5},
    "mr20": {"material": dict(kind="mooney_rivlin", **MR_PARAMS),
             "loading": {"body": -20e6, "traction": -20e6, "body_factor": PRESET_BODY_FACTOR}, "phi": 0.4},
}


def material_from_config(spec):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in fem1d.MATERIALS:
        raise ConfigError("unknown material kind %r" % kind)
    try:
        return fem1d.MATERIALS[kind](**{k: float(v) for k, v in spec.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad material: %s" % exc) from None


def problem_from_config(cfg):
    if "preset" in cfg:
        if cfg["preset"] not in FEM_PRESETS:
            raise ConfigError("unknown preset %r" % cfg["preset"])
        cfg = {**FEM_PRESETS[cfg["preset"]], **{k: v for k, v in cfg.items() if k != "preset"}}
    mesh_cfg = cfg.get("mesh", {})
    try:
        mesh = fem1d.uniform_mesh(float(mesh_cfg.get("length", 2.0)), int(mesh_cfg.get("n_elems", 5)))
        loading = fem1d.Loading(**{k: float(v) for k, v in cfg.get("loading", {}).items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad mesh or loading: %s" % exc) from None
    if "material" not in cfg:
        raise ConfigError("config needs a material")
    return fem1d.ForwardProblem(mesh, material_from_config(cfg["material"]), loading), cfg


def fem_tol(cfg):
    t = cfg.get("tolerances", {})
    return fem1d.fem_tolerances(float(t.get("abs_residual", 0.001414)), int(t.get("max_iters", 100)))


def fem_forward(cfg, seed=0):
    """Solve one bar with NR and ENR. Returns (problem, {method: (state, trace)})."""
    problem, cfg = problem_from_config(cfg)
    form = cfg.get("residual_form", "element")
    tol = fem_tol(cfg)
    out = {}
    for m in cfg.get("methods", ["nr", "enr"]):
        if m not in ("nr", "enr"):
            raise ConfigError("unknown method %r" % m)
        phi = float(cfg.get("phi", 1.0)) if m == "enr" else None
        out[m] = fem1d.forward_solve(problem, m, phi, tol, seed, form)
    return problem, out


def write_fem_forward(problem, results, outdir):
    os.makedirs(outdir, exist_ok=True)
    X = problem.mesh.ref_nodes
    summary = []
    for m, (state, tr) in results.items():
        summary.append((m, str(tr.status), tr.iterations, state.length if state else None))
        if state is None:
            continue
        # stretch and stress belong to the element ending at the node
        rows = [(I, X[I], x, state.stretch[I - 1] if I else None, state.stress[I - 1] if I else None)
                for I, x in enumerate(state.cur_nodes)]
        write_csv(os.path.join(outdir, "deformed_%s.csv" % m), ["node", "X", "x", "stretch", "stress"], rows)
    write_csv(os.path.join(outdir, "summary.csv"), ["method", "status", "iterations", "length"], summary)


def phisweep(cfg, seed=0):
    problem, cfg = problem_from_config(cfg)
    s = cfg.get("phi_range", [0.1, 1.0, 0.1])
    phis = np.round(np.arange(s[0], s[1] + 0.5 * s[2], s[2]), 10)
    seeds = cfg.get("seeds", [seed])
    rows = []
    for sd in seeds:
        for phi, its, status in fem1d.phi_sweep(problem, phis, fem_tol(cfg), int(sd),
                                                cfg.get("residual_form", "element")):
            rows.append((int(sd), phi, its, status))
    return rows


INVERSE_RANGES = {"linear": (1.0, 2.0), "mooney_rivlin": (0.3, 0.9), "veronda_westmann": (2.0, 10.0)}
INVERSE_TRUTH = {"linear": [100.0], "mooney_rivlin": [MR_PARAMS["mu"], MR_PARAMS["nu"]],
                 "veronda_westmann": [VW_PARAMS["A"], VW_PARAMS["B"]]}


def fem_inverse(cfg, seed=0):
    """Fit material constants to sampled (lambda, P) pairs with GN and CGN."""
    family = cfg.get("family", "veronda_westmann")
    if family not in INVERSE_TRUTH:
        raise ConfigError("unknown family %r" % family)
    truth = np.asarray(cfg.get("true_params", INVERSE_TRUTH[family]), float)
    lo, hi = cfg.get("lambda_range", INVERSE_RANGES[family])
    model = fem1d.inverse_model(family, truth)
    obs = minimize.generate_observations(model, (lo, hi), int(cfg.get("n_samples", 10)),
                                         cfg.get("snr_db"), seed)
    theta0 = np.asarray(cfg.get("theta0", truth * 1.1), float)
    tol = _config_tol(cfg)
    return {"gn": minimize.gauss_newton(model, obs, theta0, tol),
            "cgn": minimize.corrected_gauss_newton(model, obs, theta0, tol)}


def write_fits(traces, path):
    rows = []
    for m, tr in traces.items():
        for n, th in enumerate(tr.iterates):
            rows.append([m, n, tr.sse[n]] + list(th) + [str(tr.status)])
    p = len(next(iter(traces.values())).iterates[0])
    write_csv(path, ["method", "n", "sse"] + ["theta_%d" % k for k in range(p)] + ["status"], rows)


def beam_fit(theta0=2000.0, rel_step=1e-3):
    """GN on the cantilever data; rows (n, theta, step)."""
    tr = minimize.gauss_newton(problems.beam_model(), problems.beam_observations(), [theta0],
                               rootfind.Tolerances(rel_step=rel_step))
    rows = [(n, float(tr.iterates[n][0]), float(tr.steps[n][0])) for n in range(tr.iterations)]
    return rows, tr
