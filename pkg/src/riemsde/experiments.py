"""Named Monte Carlo experiments behind the command line.

Every experiment splits its replicas into fixed chunks of ``CHUNK`` indices.
Each chunk draws from per-replica generators and is evaluated by a
module-level function, so the concatenated result does not depend on how
chunks are distributed over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import coupling, diagnostics, embedding, matode, trivialize, walkers
from .brownian import BrownianPath, NoiseModel, replica_rng
from .geometry import make_manifold

__all__ = ["Assertion", "ExperimentResult", "EXPERIMENTS", "DEFAULTS", "run_experiment", "CHUNK"]

CHUNK = 250


@dataclass
class Assertion:
    name: str
    value: float
    bound: str
    passed: bool


@dataclass
class ExperimentResult:
    name: str
    rows: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    replicas: int = 0
    aborted: int = 0
    extras: dict = field(default_factory=dict)

    def row(self, manifold, scale, n, mean, se, slope=None, passed=None):
        self.rows.append({
            "experiment": self.name, "manifold": manifold, "scale-parameter": scale,
            "replicate-count": n, "mean": mean, "standard-error": se,
            "slope-if-applicable": slope, "pass-flag": passed,
        })

    def check(self, name, value, ok, bound):
        self.assertions.append(Assertion(f"{self.name}.{name}", float(value), bound, bool(ok)))
        return ok

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


# --------------------------------------------------------------------------
# chunked replica map


def _chunks(n):
    return [list(range(i, min(i + CHUNK, n))) for i in range(0, n, CHUNK)]


def _call(task):
    fn, payload, ids = task
    return fn(payload, ids)


def chunk_map(fn: Callable, payload: dict, replicas: int, workers: int = 1):
    """``fn(payload, ids)`` over fixed chunks, results in replica order."""
    tasks = [(fn, payload, ids) for ids in _chunks(replicas)]
    if workers <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_call, tasks))


def _cat(parts, key):
    return np.concatenate([p[key] for p in parts], axis=-1)


def _setup(p):
    M = make_manifold(p["manifold.kind"], p["manifold.dim"], p["manifold.scale"])
    x_star = M.origin()
    E = M.frame(x_star)
    x0 = M.exp(x_star, p["start.distance"] * E[0])
    beta = walkers.log_drift(M, x_star, p["drift.m"], q=p["drift.q"], R=p["drift.R"])
    return M, x_star, x0, beta


def _label(p):
    return f"{p['manifold.kind']}{p['manifold.dim']}"


# --------------------------------------------------------------------------
# dyadic refinement: rate-one-step and refine


def _dyadic_chunk(p, ids):
    M, _, x0, beta = _setup(p)
    path = BrownianPath.generate(p["T"], p["level"], M.dim, p["seed"], replicas=ids, key=p["key"])
    res = walkers.dyadic_levels(M, x0, M.frame(x0), beta, path, compare=p["compare"],
                                interpolant=p.get("interpolant", "scaled"))
    top = res.endpoints[-1]
    return {
        "d0": M.distance(res.endpoints[0], top),
        "dtop2": M.distance(res.endpoints[-2], top) ** 2,
        "sup": res.sup_d2,
    }


def rate_one_step(p, replicas, workers):
    r = ExperimentResult("rate-one-step", replicas=0)
    pts = []
    for j, e in enumerate(p["grid.T_exponents"]):
        T = 2.0 ** e
        q = dict(p, T=T, level=p["level"], compare=False, key=(1, j))
        parts = chunk_map(_dyadic_chunk, q, replicas, workers)
        d0 = _cat(parts, "d0")
        r.replicas += d0.size
        r.aborted += int(np.sum(~np.isfinite(d0)))
        m, se = diagnostics.mean_se(d0)
        pts.append((T, float(m), float(se)))
    fit = diagnostics.fit_rate(pts)
    lo, hi = p["accept.slope"]
    ok = r.check("slope", fit.slope, lo <= fit.slope <= hi, f"[{lo}, {hi}]")
    for T, m, se in pts:
        r.row(_label(p), T, replicas, m, se, fit.slope, ok)
    return r


def refine(p, replicas, workers):
    r = ExperimentResult("refine")
    q = dict(p, compare=True, key=(2,))
    parts = chunk_map(_dyadic_chunk, q, replicas, workers)
    sup = _cat(parts, "sup")  # (L, R)
    dtop = _cat(parts, "dtop2")
    r.replicas = dtop.size
    r.aborted = int(np.sum(~np.isfinite(dtop)))
    levels = list(range(p["grid.level_min"], p["grid.level_max"] + 1))
    pts = []
    for i in levels:
        m, se = diagnostics.mean_se(sup[i])
        pts.append((2.0 ** -i, float(m), float(se)))
    tiny = p["accept.flat"]
    flat = all(pt[1] <= tiny for pt in pts)
    if flat:
        slope = 0.0
        ok = r.check("flat", max(pt[1] for pt in pts), True, f"<= {tiny}")
    else:
        slope = -diagnostics.fit_rate(pts).slope  # log2 E sup d^2 against i
        lo, hi = p["accept.slope"]
        ok = r.check("slope", slope, lo <= slope <= hi, f"[{lo}, {hi}]")
    for i, (_, m, se) in zip(levels, pts):
        r.row(_label(p), i, replicas, m, se, slope, ok)
    mt, st = diagnostics.mean_se(dtop)
    ref = pts[-1][1]
    frac = p["accept.self_consistency"]
    good = bool(mt < frac * ref or mt <= tiny)
    r.check("self_consistency", mt, good, f"< {frac} * {ref:.6g}")
    r.row(_label(p), p["level"], replicas, float(mt), float(st), None, good)
    return r


# --------------------------------------------------------------------------
# trivialization


def _closure_chunk(p, ids):
    M = make_manifold(p["kind"], 2, 1.0)
    x = M.origin()
    E = M.frame(x)
    c = M.bounds().C_r
    uc, vc = [], []
    for i in ids:
        g = replica_rng(p["seed"], i, *p["key"])
        a = g.standard_normal((2, 2))
        rad = g.uniform(0, 1, 2) * c
        uc.append(a[0] / np.linalg.norm(a[0]) * rad[0])
        vc.append(a[1] / np.linalg.norm(a[1]) * rad[1])
    uc, vc = np.array(uc), np.array(vc)
    n = len(ids)
    xb = np.broadcast_to(x, (n, 3)).copy()
    Eb = np.broadcast_to(E, (n, 2, 3)).copy()
    u, v = M.from_coords(Eb, uc), M.from_coords(Eb, vc)
    curve = trivialize.trivialized_geodesic(M, xb, Eb, u, v, h=p["h"])
    target = trivialize.transported_G_target(M, xb, Eb, u, v)
    closure = M.distance(M.exp(xb, curve.end), target)
    G = trivialize.tensor_G(M, xb, Eb, u)
    rr = np.linalg.norm(uc, axis=-1)
    other = np.sinc(rr / np.pi) if p["kind"] == "sphere" else np.where(rr > 0, np.sinh(rr) / np.where(rr > 0, rr, 1), 1.0)
    expected = np.sort(np.stack([np.ones_like(rr), other], -1), -1)
    spread = np.max(np.abs(np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2))) - expected), -1)
    return {"closure": closure, "spectrum": spread}


def _triangle_chunk(p, ids):
    M = make_manifold(p["kind"], 2, 1.0)
    x = M.origin()
    E = M.frame(x)
    c = M.bounds().C_r
    uc, vc = [], []
    for i in ids:
        g = replica_rng(p["seed"], i, *p["key"])
        a = g.standard_normal((2, 2))
        rad = g.uniform(0.1, 1, 2) * c
        uc.append(a[0] / np.linalg.norm(a[0]) * rad[0])
        vc.append(a[1] / np.linalg.norm(a[1]) * rad[1])
    n = len(ids)
    xb = np.broadcast_to(x, (n, 3)).copy()
    Eb = np.broadcast_to(E, (n, 2, 3)).copy()
    u, v = M.from_coords(Eb, np.array(uc)), M.from_coords(Eb, np.array(vc))
    lhs, rhs = trivialize.triangle_distortion_check(M, xb, u, v, Eb)
    lhs2, _ = trivialize.triangle_distortion_check(M, xb, u, 0.5 * v, Eb)
    return {"lhs": lhs, "rhs": rhs, "lhs_half": lhs2}


def _random_paths(seed, ids, key, dim):
    L, om, S1, S2 = [], [], [], []
    for i in ids:
        g = replica_rng(seed, i, *key)
        L.append(g.uniform(0.05, 4.0))
        om.append(g.uniform(0.0, 10.0))
        S1.append(g.standard_normal((dim, dim)))
        S2.append(g.standard_normal((dim, dim)))
    L, om, S1, S2 = map(np.array, (L, om, S1, S2))
    nrm = np.linalg.norm(S1, 2, axis=(-2, -1)) + np.linalg.norm(S2, 2, axis=(-2, -1))
    scale = (L / nrm)[:, None, None]

    def ev(t):
        return scale * (np.cos(om * t)[:, None, None] * S1 + np.sin(om * t)[:, None, None] * S2)

    return L, matode.MatrixPath(dim, ev)


def _blocks_chunk(p, ids):
    L, path = _random_paths(p["seed"], ids, p["key"], p["dim"])
    ts = np.linspace(0.0, 1.0, p["grid_points"])
    A, B, C, D = matode.second_order_blocks_grid(path, ts, p["h"])
    eye = np.eye(p["dim"])
    norms = {
        "A": A, "B": B, "C": C, "D": D,
        "A-I": A - eye, "B-tI": B - ts[:, None, None, None] * eye,
    }
    worst = np.full(len(ids), -np.inf)
    for k, X in norms.items():
        bound = np.stack([matode.block_envelopes(l, ts)[k] for l in L], 1)  # (t, n)
        excess = np.linalg.norm(X, 2, axis=(-2, -1)) - bound
        worst = np.maximum(worst, excess.max(0))
    return {"excess": worst}


def trivialize_check(p, replicas, workers):
    r = ExperimentResult("trivialize-check")
    tol = p["accept.closure"]
    for k, kind in enumerate(("sphere", "hyperboloid")):
        q = {"kind": kind, "seed": p["seed"], "key": (3, k), "h": p["h"]}
        parts = chunk_map(_closure_chunk, q, replicas, workers)
        cl, sp = _cat(parts, "closure"), _cat(parts, "spectrum")
        r.replicas += cl.size
        r.aborted += int(np.sum(~np.isfinite(cl)))
        ok = r.check(f"{kind}.closure", np.max(cl), np.max(cl) < tol, f"< {tol}")
        m, se = diagnostics.mean_se(cl)
        r.row(f"{kind}2", p["h"], cl.size, m, se, None, ok)
        ok = r.check(f"{kind}.G_spectrum", np.max(sp), np.max(sp) < p["accept.spectrum"],
                     f"< {p['accept.spectrum']}")
        m, se = diagnostics.mean_se(sp)
        r.row(f"{kind}2", 1.0, sp.size, m, se, None, ok)

    q = {"kind": "sphere", "seed": p["seed"], "key": (4,)}
    parts = chunk_map(_triangle_chunk, q, p["triangle_configs"], workers)
    lhs, rhs, half = _cat(parts, "lhs"), _cat(parts, "rhs"), _cat(parts, "lhs_half")
    margin = np.max(lhs - rhs)
    ok = r.check("triangle.inequality", margin, margin <= 0, "lhs - rhs <= 0")
    m, se = diagnostics.mean_se(lhs)
    r.row("sphere2", 1.0, lhs.size, m, se, None, ok)
    ratio = float(np.mean(lhs) / np.mean(half))
    lo, hi = p["accept.ratio"]
    ok = r.check("triangle.ratio", ratio, lo <= ratio <= hi, f"[{lo}, {hi}]")
    m, se = diagnostics.mean_se(half)
    r.row("sphere2", 0.5, half.size, m, se, ratio, ok)

    q = {"seed": p["seed"], "key": (5,), "dim": p["blocks_dim"], "h": p["h"],
         "grid_points": p["blocks_grid"]}
    parts = chunk_map(_blocks_chunk, q, p["blocks_paths"], workers)
    ex = _cat(parts, "excess")
    ok = r.check("blocks.envelopes", np.max(ex), np.max(ex) <= p["accept.blocks"],
                 f"<= {p['accept.blocks']}")
    m, se = diagnostics.mean_se(ex)
    r.row(f"matrix{p['blocks_dim']}", 1.0, ex.size, m, se, None, ok)
    return r


# --------------------------------------------------------------------------
# coupling


def _coupling_chunk(p, ids):
    M, x_star, x0, beta = _setup(p)
    E = M.frame(x_star)
    y0 = M.exp(x_star, -p["start.distance"] * E[0] + p["start.offset"] * E[1])
    eta = np.stack([replica_rng(p["seed"], i, *p["key"]).standard_normal((p["K"], M.dim))
                    for i in ids])
    prm = coupling.LyapunovParams.from_drift(p["drift.q"], M.bounds().L_Ric, p["drift.R"], p["lyapunov.eps"])
    lyap = coupling.LyapunovFunction(prm)
    out = {}
    for mode in ("reflect", "sync"):
        s = coupling.coupled_run(M, x0, y0, beta, p["delta"], p["K"], mode, eta=eta, lyapunov=lyap)
        out[mode] = s.f.T  # (K+1, n)
    return out


def coupling_exp(p, replicas, workers):
    r = ExperimentResult("coupling")
    K = int(round(p["horizon_factor"] / p["drift.m"] / p["delta"]))
    q = dict(p, K=K, key=(6,))
    parts = chunk_map(_coupling_chunk, q, replicas, workers)
    f = _cat(parts, "reflect")  # (K+1, R)
    fs = _cat(parts, "sync")
    r.replicas = f.shape[1]
    bad = ~np.all(np.isfinite(f), 0)
    r.aborted = int(bad.sum())
    f, fs = f[:, ~bad], fs[:, ~bad]
    mean, se = diagnostics.mean_se(f, axis=1)
    dm, dse = diagnostics.mean_se(np.diff(f, axis=0), axis=1)
    worst = float(np.max(dm - 3 * dse))
    ok1 = r.check("monotone", worst, worst <= 0, "max(step mean - 3 SE) <= 0")
    ratio = float(mean[-1] / mean[0])
    ok2 = r.check("terminal_ratio", ratio, ratio < p["accept.ratio"], f"< {p['accept.ratio']}")
    stride = max(1, K // p["report_points"])
    for k in range(0, K + 1, stride):
        r.row(_label(p), k * p["delta"], f.shape[1], mean[k], se[k], None, ok1 and ok2)
    ms, ses = diagnostics.mean_se(fs[-1])
    r.row(_label(p) + "-sync", K * p["delta"], fs.shape[1], ms, ses, None, None)
    return r


# --------------------------------------------------------------------------
# tangent walk and CLT


def _tangent_chunk(p, ids):
    M, _, y0, beta = _setup(p)
    noise = NoiseModel(p["noise.kind"], M.dim, p["noise.theta0"])
    E0 = M.frame(y0)
    eta = np.stack([noise.draw(replica_rng(p["seed"], i, *p["key"]), (p["K"],)) for i in ids])
    y = walkers.nongaussian_walk(M, y0, beta, noise, p["delta"], p["K"], eta=eta, E0=E0)
    z, yt = walkers.tangent_walk(M, y0, E0, beta, noise, p["delta"], p["K"], eta=eta, partner=y)
    zK = z[..., -1, :]
    return {
        "gap": M.distance(yt.endpoint, y.endpoint),
        "coords": M.coords(np.broadcast_to(y0, zK.shape), np.broadcast_to(E0, zK.shape[:-1] + E0.shape), zK).T,
        "shift": np.broadcast_to(M.coords(y0, E0, p["K"] * p["delta"] * beta(y0)), (len(ids), M.dim)).T,
    }


def clt(p, replicas, workers):
    r = ExperimentResult("clt")
    pts = []
    for j, e in enumerate(p["grid.T_exponents"]):
        T = 2.0 ** e
        K = int(round(T ** -2))
        q = dict(p, delta=T ** 3, K=K, key=(7, j))
        gap = _cat(chunk_map(_tangent_chunk, q, replicas, workers), "gap")
        r.replicas += gap.size
        r.aborted += int(np.sum(~np.isfinite(gap)))
        m, se = diagnostics.mean_se(gap)
        pts.append((T, float(m), float(se)))
    fit = diagnostics.fit_rate(pts)
    lo, hi = p["accept.slope"]
    ok = r.check("slope", fit.slope, lo <= fit.slope <= hi, f"[{lo}, {hi}]")
    for T, m, se in pts:
        r.row(_label(p), T, replicas, m, se, fit.slope, ok)

    stats_ = []
    T = p["clt.T"]
    for j, K in enumerate(p["clt.K"]):
        q = dict(p, delta=T / K, K=K, key=(8, j))
        parts = chunk_map(_tangent_chunk, q, p["clt.replicas"], workers)
        coords = _cat(parts, "coords").T
        shift = _cat(parts, "shift").T[0]
        rep = diagnostics.clt_probe(coords, T, shift=shift, seed=p["seed"])
        r.replicas += coords.shape[0]
        r.aborted += int(np.sum(~np.all(np.isfinite(coords), -1)))
        stats_.append(rep)
    ks = [s.ks_mean for s in stats_]
    dec = all(b < a for a, b in zip(ks, ks[1:]))
    r.check("clt_decreasing", ks[-1], dec, "strictly decreasing in K")
    for K, s in zip(p["clt.K"], stats_):
        r.row(_label(p) + "-clt", K, s.n, s.ks_mean, None, None, dec)
        r.extras[f"K={K}.ks_max"] = s.ks_max
        r.extras[f"K={K}.energy"] = s.energy
        r.extras[f"K={K}.cov_z"] = s.cov_z
    return r


# --------------------------------------------------------------------------
# embedding


def _metric(p):
    if p["metric"] == "identity":
        return embedding.identity_metric(p["dim"])
    return embedding.diagonal_exponential_metric(p["dim"], p["metric.s"])


def _embedding_chunk(p, ids):
    metric = _metric(p)
    x = np.asarray(p["x"], float)
    eta = np.stack([replica_rng(p["seed"], i, *p["key"]).standard_normal(metric.dim) for i in ids])
    xb = np.broadcast_to(x, eta.shape)
    xi = np.einsum("...ij,...j->...i", metric.sqrt_A(xb), eta)
    out = {}
    for j, d in enumerate(p["deltas"]):
        _, _, (r1, r2) = embedding.corrected_step(metric, xb, np.asarray(p["beta"], float), xi, d)
        out[f"r1_{j}"], out[f"r2_{j}"] = r1, r2
    return out


def _walk_chunk(p, ids):
    metric = _metric(dict(p, **{"metric.s": p["walk.metric.s"]}))
    out = {}
    for j, d in enumerate(p["deltas"]):
        K = int(round(p["walk.T"] / d))
        eta = np.stack([replica_rng(p["seed"], i, *p["key"], j).standard_normal((K, metric.dim))
                        for i in ids])
        beta = np.asarray(p["beta"], float)
        x, z = embedding.euclidean_walk_pair(metric, p["x"], beta, d, K, eta)
        out[f"gap_{j}"] = np.sum((x[..., -1, :] - z[..., -1, :]) ** 2, -1)
    return out


def embedding_exp(p, replicas, workers):
    r = ExperimentResult("embedding")
    label = p["metric"] + str(p["dim"])
    parts = chunk_map(_embedding_chunk, dict(p, key=(9,)), replicas, workers)
    r.replicas = replicas
    for name, floor in (("r1", p["accept.r1"]), ("r2", p["accept.r2"])):
        pts = []
        for j, d in enumerate(p["deltas"]):
            v = _cat(parts, f"{name}_{j}")
            r.aborted += int(np.sum(~np.isfinite(v)))
            m, se = diagnostics.mean_se(v)
            pts.append((d, float(m), float(se)))
        if all(pt[1] == 0 for pt in pts):
            slope, ok = math.inf, r.check(f"{name}_zero", 0.0, True, "== 0")
        else:
            slope = diagnostics.fit_rate(pts).slope
            ok = r.check(f"{name}_slope", slope, slope >= floor, f">= {floor}")
        for d, m, se in pts:
            r.row(label + "-" + name, d, replicas, m, se, slope, ok)

    metric = _metric(p)
    f = embedding.ScalarField(lambda x: np.sum(x ** 2, -1), lambda x: 2 * x,
                              lambda x: 2 * np.broadcast_to(np.eye(x.shape[-1]), x.shape[:-1] + (x.shape[-1],) * 2))
    pts_lb = np.asarray(p["lb.points"], float)
    canon = float(np.max(embedding.laplace_beltrami_identity(metric, f, pts_lb, -1.0)))
    flip = float(np.min(embedding.laplace_beltrami_identity(metric, f, pts_lb, +1.0)))
    ok1 = r.check("lb_canonical", canon, canon < p["accept.lb"], f"< {p['accept.lb']}")
    r.row(label + "-lb", -1.0, len(pts_lb), canon, 0.0, None, ok1)
    if p["metric"] != "identity":
        ok2 = r.check("lb_flipped", flip, flip > p["accept.lb_flip"], f"> {p['accept.lb_flip']}")
        r.row(label + "-lb", 1.0, len(pts_lb), flip, 0.0, None, ok2)

    parts = chunk_map(_walk_chunk, dict(p, key=(10,)), p["walk.replicas"], workers)
    pts = []
    for j, d in enumerate(p["deltas"]):
        v = _cat(parts, f"gap_{j}")
        r.aborted += int(np.sum(~np.isfinite(v)))
        m, se = diagnostics.mean_se(v)
        pts.append((d, float(m), float(se)))
    if any(pt[1] == 0 for pt in pts):
        slope, ok = math.nan, r.check("walk_zero", max(pt[1] for pt in pts), all(pt[1] == 0 for pt in pts), "== 0")
    else:
        slope = diagnostics.fit_rate(pts).slope
        lo, hi = p["accept.walk"]
        ok = r.check("walk_slope", slope, lo <= slope <= hi, f"[{lo}, {hi}]")
    for d, m, se in pts:
        r.row(label + "-walk", d, p["walk.replicas"], m, se, slope, ok)
    return r


# --------------------------------------------------------------------------
# Lyapunov function


def lyapunov_exp(p, replicas, workers):
    r = ExperimentResult("lyapunov")
    prm = coupling.LyapunovParams(p["lyapunov.L"], p["lyapunov.R"], p["lyapunov.eps"])
    F = coupling.LyapunovFunction(prm)
    rr = np.linspace(0.0, p["grid.max_factor"] * (prm.R + prm.eps), p["grid.points"] + 1)[1:]
    h = p["fd_step"]
    f = F(rr)
    fp = (F(rr + h) - F(np.maximum(rr - h, 0.0))) / (rr + h - np.maximum(rr - h, 0.0))
    fpp = (F.df(rr + h) - F.df(np.maximum(rr - h, 0.0))) / (rr + h - np.maximum(rr - h, 0.0))
    tol = p["accept.rtol"]
    c = prm.slope_floor
    L = prm.L
    r.replicas = rr.size

    def rel(v, lo, hi):
        # worst violation relative to the bound scale; <= 0 means satisfied
        s = np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1e-300)
        return np.max(np.maximum(lo - v, v - hi) / s)

    checks = {
        "property1": rel(f / rr, c, 1.0),
        "property2": rel(fp, c, 1.0),
        "property3": rel(fpp, -4 * L ** 1.5, 0.0),
    }
    inner = rr <= prm.R
    rhs = -math.exp(-(1 + prm.eps) * L * prm.R ** 2 / 2) / ((1 + prm.eps) ** 2 * prm.R ** 2) * f[inner]
    lhs = fpp[inner] + L * rr[inner] * fp[inner]
    checks["property4"] = float(np.max((lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)))
    smooth = (np.abs(rr - prm.R) > h) & (np.abs(rr - prm.R - prm.eps) > h)
    a2 = F.d2f(rr[smooth])
    ana = float(np.max(np.abs(fpp[smooth] - a2) / np.maximum(np.abs(a2), 1.0)))
    label = f"L={L},R={prm.R},eps={prm.eps}"
    for j, (name, worst) in enumerate(checks.items()):
        ok = r.check(name, worst, worst <= tol, f"<= {tol}")
        r.row(label, j + 1, rr.size, worst, 0.0, None, ok)
    ok = r.check("analytic_second_derivative", ana, ana <= p["accept.fd"], f"<= {p['accept.fd']}")
    r.row(label, 5, int(smooth.sum()), ana, 0.0, None, ok)
    return r


# --------------------------------------------------------------------------
# tails


def _tails_chunk(p, ids):
    M, x_star, x0, beta = _setup(p)
    noise = NoiseModel(p["kind"], M.dim)
    eta = np.stack([noise.draw(replica_rng(p["seed"], i, *p["key"]), (p["K"],)) for i in ids])
    y = walkers.nongaussian_walk(M, x0, beta, noise, p["delta"], p["K"], eta=eta)
    pts = y.points
    return {
        "to_star": M.distance(pts, np.broadcast_to(x_star, pts.shape)).T,
        "to_start": M.distance(pts, np.broadcast_to(x0, pts.shape)).T,
    }


def tails(p, replicas, workers):
    r = ExperimentResult("tails")
    M = make_manifold(p["manifold.kind"], p["manifold.dim"], p["manifold.scale"])
    b = M.bounds()
    d = M.dim
    m, Lb, R = p["drift.m"], p["drift.L_beta_prime"], p["drift.R"]
    mult = p["multiples"]
    delta, K = p["delta"], p["K"]
    label = _label(p)

    def record(name, rep):
        for t, e, env, ok in zip(rep.thresholds, rep.empirical, rep.envelope, rep.passed):
            r.check(f"{name}.t={t:.6g}", e - env, ok, "empirical - envelope <= 0")
            r.row(f"{label}-{name}", t, rep.n, e, math.sqrt(e * (1 - e) / rep.n), None, bool(ok))

    # Gaussian: second-moment envelope at step K through Chebyshev
    q = dict(p, kind="gaussian", key=(11,))
    D = _cat(chunk_map(_tails_chunk, q, replicas, workers), "to_star").T
    r.replicas += D.shape[0]
    r.aborted += int(np.sum(~np.all(np.isfinite(D), -1)))
    d0 = p["start.distance"] ** 2
    env2 = diagnostics.l2_dissipative_envelope(K, delta, m, b.L_R, Lb, R, d0, d * (d + 2))
    record("gaussian", diagnostics.tail_probe(D, mult, lambda t: np.minimum(1.0, env2 / t ** 2), "terminal"))

    # bounded noise: fixed-stepsize subgaussian envelope on the running maximum
    q = dict(p, kind=p["bounded_kind"], key=(12,))
    D = _cat(chunk_map(_tails_chunk, q, replicas, workers), "to_star").T
    r.replicas += D.shape[0]
    r.aborted += int(np.sum(~np.all(np.isfinite(D), -1)))
    Lxi2 = float(d)
    record("bounded", diagnostics.tail_probe(
        D, mult, lambda t: diagnostics.subgaussian_dissipative_envelope(t, K, delta, m, R, b.L_R, Lxi2), "max"))

    # bounded noise, short horizon: Lipschitz subgaussian envelope around the start
    Kl = p["lipschitz.K"]
    q = dict(p, kind=p["bounded_kind"], key=(13,), K=Kl, delta=p["lipschitz.delta"])
    D = _cat(chunk_map(_tails_chunk, q, replicas, workers), "to_start").T
    r.replicas += D.shape[0]
    Lbeta = m * math.pi / 2
    record("lipschitz", diagnostics.tail_probe(
        D, mult, lambda t: diagnostics.subgaussian_lipschitz_envelope(t, Kl, p["lipschitz.delta"], Lbeta, math.sqrt(Lxi2)),
        "max"))
    return r


# --------------------------------------------------------------------------
# registry


_COMMON = {
    "manifold.kind": "sphere", "manifold.dim": 2, "manifold.scale": 1.0,
    "drift.m": 1.0, "drift.q": 0.0, "drift.R": 1.0, "start.distance": 0.5,
}

DEFAULTS = {
    "rate-one-step": dict(_COMMON, **{
        "grid.T_exponents": [-6, -5, -4, -3, -2], "level": 12, "replicas": 2000,
        "accept.slope": [1.3, 1.7],
    }),
    "refine": dict(_COMMON, **{
        "T": 0.25, "level": 12, "interpolant": "scaled", "grid.level_min": 3, "grid.level_max": 8, "replicas": 2000,
        "accept.slope": [-1.4, -0.6], "accept.self_consistency": 0.1, "accept.flat": 1e-24,
    }),
    "trivialize-check": {
        "replicas": 1000, "h": 1e-3, "triangle_configs": 10000, "blocks_paths": 1000,
        "blocks_dim": 2, "blocks_grid": 11, "accept.closure": 1e-6, "accept.spectrum": 1e-6,
        "accept.ratio": [3.5, 4.5], "accept.blocks": 1e-6,
    },
    "coupling": dict(_COMMON, **{
        "drift.m": 2.0, "drift.q": 1.0, "start.distance": 1.25, "start.offset": 0.0, "delta": 0.01, "horizon_factor": 4.0,
        "lyapunov.eps": 0.0, "replicas": 1000, "report_points": 40,
        "accept.ratio": 0.5,
    }),
    "clt": dict(_COMMON, **{
        "noise.kind": "rademacher", "noise.theta0": 0.0, "grid.T_exponents": [-6, -5, -4, -3, -2],
        "replicas": 2000, "clt.T": 0.25, "clt.K": [4, 16, 64, 256], "clt.replicas": 20000,
        "accept.slope": [1.3, 1.7],
    }),
    "embedding": {
        "metric": "diagonal-exponential", "metric.s": 1.0, "dim": 2, "x": [0.5, -0.3],
        "beta": [0.1, -0.2], "deltas": [0.1, 0.05, 0.025, 0.0125], "replicas": 2000,
        "lb.points": [[0.5, -0.3], [-0.4, 0.2], [1.0, 0.7]], "walk.T": 0.5, "walk.metric.s": 0.5,
        "walk.replicas": 1000,
        "accept.r1": 0.9, "accept.r2": 1.4, "accept.lb": 1e-5, "accept.lb_flip": 0.1,
        "accept.walk": [0.8, 1.2],
    },
    "lyapunov": {
        "lyapunov.L": 1.0, "lyapunov.R": 2.0, "lyapunov.eps": 0.125, "grid.points": 1000,
        "grid.max_factor": 2.0, "fd_step": 1e-3, "replicas": 1, "accept.rtol": 1e-4,
        "accept.fd": 1e-4,
    },
    "tails": dict(_COMMON, **{
        "start.distance": 0.0, "drift.L_beta_prime": 1.0, "delta": 1.0 / 128, "K": 256,
        "bounded_kind": "rademacher", "multiples": [2.0, 3.0], "lipschitz.K": 8,
        "lipschitz.delta": 1.0 / 1024, "replicas": 2000,
    }),
}

EXPERIMENTS = {
    "rate-one-step": (rate_one_step, "walkers", "one-step geometric Euler-Murayama error decays like T^1.5"),
    "refine": (refine, "walkers", "mean-square gap between consecutive dyadic levels halves per level"),
    "trivialize-check": (trivialize_check, "trivialize", "tangent-space geodesic closure, G spectra, triangle distortion, block envelopes"),
    "coupling": (coupling_exp, "coupling", "reflection coupling contracts E f(d) for a dissipative drift"),
    "clt": (clt, "walkers", "tangent walk tracks the bounded-noise walk at rate T^1.5 and approaches a Gaussian"),
    "embedding": (embedding_exp, "embedding", "corrected chart step error and the Laplace-Beltrami sign"),
    "lyapunov": (lyapunov_exp, "coupling", "properties 1-4 of the smoothed concave distance"),
    "tails": (tails, "diagnostics", "tail probabilities stay below second-moment and subgaussian envelopes"),
}


def run_experiment(name: str, params: dict, seed: int, replicas: int, workers: int = 1) -> ExperimentResult:
    fn = EXPERIMENTS[name][0]
    p = dict(params, seed=int(seed))
    return fn(p, int(replicas), int(workers))
