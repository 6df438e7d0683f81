"""Command line runner: builds, checks and experiments with deterministic artifacts.

Every command writes config.json (the normalized config), VERSION, report.json and
one or more CSV files into --out. Nothing time- or host-dependent is written, so
the same config and seed reproduce the output tree byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

CSV_SCHEMA = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 2, 64
COMMANDS = ("build", "verify", "warmup", "blowup", "walsh", "norms", "counting", "reconstruct")

DEFAULT_PROFILE = {"L": 1, "h": 2, "s": 1, "widths": [1]}
VERIFY_PROFILES = [
    {"L": 2, "h": 2, "s": 1},
    {"L": 2, "h": 3, "s": 2},
    {"L": 3, "h": 2, "s": 1},
]
BLOWUP_SWEEP = [{"L": 1, "h": h, "s": 2, "widths": [5]} for h in (2, 3, 4)]
TOLERANCES = {
    "key_align": 1 / 500,
    "control_tol": 0.1,
    "control_fraction": 0.9,
    "kkey": 1e-10,
    "l1_constant": 1 / 100,
    "major_constant": 1 / 100,
    "norm_band": [0.25, 4.0],
    "bmo": 40.0,
    "extremality_factor": 3.0,
    "vw_band": [0.125, 8.0],
    "weak_band_spread": 64.0,
    "walsh_weak": 4.0,
    "walsh_separation": 2.0,
    "reconstruction_spread": 0.01,
    "reconstruction_doubling": 0.001,
    "warmup_weak": 0.01,
}


class UsageError(Exception):
    pass


# --- configuration -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    profile: dict = field(default_factory=lambda: dict(DEFAULT_PROFILE))
    sweep: list = field(default_factory=list)
    sequence: object = "dyadic"
    weights: object = "normalized"
    seed: int = 0
    mode: str = "numeric"
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"profile": self.profile, "sweep": self.sweep, "sequence": self.sequence, "weights": self.weights,
             "seed": self.seed, "mode": self.mode, "tolerances": self.tolerances, "params": self.params}
        return json.dumps(d, sort_keys=True, indent=1)

    def scale_profile(self, d: dict | None = None):
        from .cme import ScaleProfile

        d = dict(self.profile if d is None else d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return ScaleProfile.from_json(d) if "r1" in d or "sigma" in d else ScaleProfile(**d)

    def sequence_terms(self, count: int) -> list:
        s = self.sequence
        if s == "dyadic":
            return [1 << j for j in range(count)]
        if s == "shifted-dyadic":
            return [(1 << j) - 1 for j in range(1, count + 1)]
        if isinstance(s, list) and s and all(isinstance(v, int) and v >= 0 for v in s):
            return list(s)
        raise UsageError(f"bad sequence spec {s!r}")

    def weight_spec(self, levels):
        w = self.weights
        if w in ("normalized", "paper-default"):
            return "normalized"
        if w == "decay":
            return "decay"
        if isinstance(w, list) and len(w) >= len(levels) and all(isinstance(v, (int, float)) and v > 0 for v in w):
            return {j: float(w[j - 1]) for j in levels}
        raise UsageError(f"bad weights spec {w!r}")


_KEYS = {"profile", "sweep", "sequence", "weights", "seed", "mode", "tolerances", "params"}


def load_config(path: str | None, seed: int | None, mode: str | None) -> ExperimentConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config not found: {path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config is not JSON: {e}")
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        extra = set(raw) - _KEYS
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
    cfg = ExperimentConfig()
    if "profile" in raw:
        if not isinstance(raw["profile"], dict):
            raise UsageError("profile must be an object")
        cfg.profile = raw["profile"]
    if "sweep" in raw:
        if not isinstance(raw["sweep"], list) or not all(isinstance(p, dict) for p in raw["sweep"]):
            raise UsageError("sweep must be a list of profile objects")
        cfg.sweep = raw["sweep"]
    for k in ("sequence", "weights", "params"):
        if k in raw:
            setattr(cfg, k, raw[k])
    cfg.tolerances.update(raw.get("tolerances", {}))
    cfg.seed = int(raw.get("seed", 0)) if seed is None else seed
    cfg.mode = mode or raw.get("mode", "numeric")
    if cfg.mode not in ("exact", "numeric"):
        raise UsageError("mode must be exact or numeric")
    return cfg


# --- artifact writers ----------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


def write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# schema {CSV_SCHEMA}"])
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h, "")) for h in header])
    path.write_text(buf.getvalue())


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def svg_lines(title: str, xs: list, series: dict, width: int = 480, height: int = 320) -> str:
    """Minimal polyline chart; one polyline per series, shared axes."""
    pad = 40
    ys = [y for v in series.values() for y in v if y is not None and math.isfinite(y)]
    if not xs or not ys:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    sx = (width - 2 * pad) / ((x1 - x0) or 1)
    sy = (height - 2 * pad) / ((y1 - y0) or 1)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{pad}" y="20" font-size="12">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for i, (name, vals) in enumerate(sorted(series.items())):
        pts = " ".join(f"{pad + (x - x0) * sx:.2f},{height - pad - (y - y0) * sy:.2f}"
                       for x, y in zip(xs, vals) if y is not None and math.isfinite(y))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" points="{pts}"/>')
        out.append(f'<text x="{width - pad - 100}" y="{pad + 14 * i}" font-size="10" fill="{c}">{name}</text>')
    for x in xs:
        out.append(f'<text x="{pad + (x - x0) * sx:.2f}" y="{height - pad + 14}" font-size="10">{x}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


@dataclass
class Result:
    ok: bool
    report: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    plots: dict = field(default_factory=dict)  # name -> svg text
    message: str = ""


def write_outputs(out: Path, cfg: ExperimentConfig, command: str, res: Result, svg: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    (out / "VERSION").write_text(f"tiletower {__version__} csv-schema {CSV_SCHEMA}\n")
    rep = {"command": command, "ok": res.ok, "seed": cfg.seed, "report": _jsonable(res.report)}
    (out / "report.json").write_text(json.dumps(rep, sort_keys=True, indent=1) + "\n")
    for name, (header, rows) in sorted(res.tables.items()):
        write_csv(out / f"{name}.csv", header, rows)
    if svg:
        for name, text in sorted(res.plots.items()):
            (out / f"{name}.svg").write_text(text)


# --- commands --------------------------------------------------------------------

def _checks_rows(checks) -> list:
    return [{"check": c.name, "ok": c.ok, "detail": c.detail} for c in checks]


def cmd_build(cfg: ExperimentConfig, out: Path) -> Result:
    from .cme import build_cme, mass_report, validate_cme

    cme = build_cme(cfg.scale_profile())
    checks = validate_cme(cme)
    (out / "manifest.json").write_text(cme.manifest() + "\n")
    rep = {"digest": cme.digest(), "tiles": len(cme.table), "resolution": cme.resolution,
           "mass": mass_report(cme), "checks": {c.name: c.ok for c in checks}}
    ok = all(c.ok for c in checks)
    return Result(ok, rep, {"validation": (["check", "ok", "detail"], _checks_rows(checks))},
                  message="" if ok else f"validation failed, see {out / 'validation.csv'}")


def cmd_verify(cfg: ExperimentConfig, out: Path) -> Result:
    from .cme import build_cme, mass_report, validate_cme

    profiles = cfg.sweep or VERIFY_PROFILES
    rows, rep, ok = [], {}, True
    for d in profiles:
        prof = cfg.scale_profile(d)
        cme = build_cme(prof)
        checks = validate_cme(cme, exhaustive=True)
        tag = json.dumps(prof.to_json(), sort_keys=True)
        for c in checks:
            rows.append({"profile": tag, "check": c.name, "ok": c.ok, "detail": c.detail})
        rep[tag] = {"tiles": len(cme.table), "mass": mass_report(cme), "checks": {c.name: c.ok for c in checks}}
        ok &= all(c.ok for c in checks)
    return Result(ok, rep, {"verify": (["profile", "check", "ok", "detail"], rows)})


def warmup_sum(cme, F) -> Fraction:
    """sum over tiles P of 2^-n(P) |I_P cap F|, exact."""
    t = cme.table
    pieces = sorted(F.pieces)
    R = max(max(I.scale for I in pieces), int(t.scale.max()))
    lo = np.array([I.index << (R - I.scale) for I in pieces], dtype=np.int64)
    hi = np.array([(I.index + 1) << (R - I.scale) for I in pieces], dtype=np.int64)
    pre = np.concatenate([[0], np.cumsum(hi - lo)])
    tl = t.index.astype(np.int64) << (R - t.scale.astype(np.int64))
    th = (t.index.astype(np.int64) + 1) << (R - t.scale.astype(np.int64))
    a = np.searchsorted(hi, tl, side="right")
    b = np.searchsorted(lo, th, side="left")
    total = Fraction(0)
    density = F.measure / sum((I.length for I in pieces), Fraction(0))
    for i in range(len(t)):
        cells = int(pre[b[i]] - pre[a[i]])
        if b[i] > a[i]:
            cells -= max(0, int(tl[i] - lo[a[i]])) + max(0, int(hi[b[i] - 1] - th[i]))
        total += Fraction(cells, 1 << R) / (1 << int(t.gen[i]))
    return total * density


def cmd_warmup(cfg: ExperimentConfig, out: Path) -> Result:
    from .carleson import apply_operator
    from .cme import build_cme
    from .norms import mu
    from .setsbuild import _loglog4, assemble, build_F

    d = dict(cfg.profile)
    # width 1 leaves no F inside any tile's kernel annulus, so the default is 3
    d.update({"L": 1, "h": 1, "s": d.get("s", 0), "widths": [cfg.params.get("width", 3)]})
    prof = cfg.scale_profile(d)
    cme = build_cme(prof)
    F = build_F(cme, 1)
    r, n = prof.gen(1)
    lower = warmup_sum(cme, F)
    f = assemble({1: F}, {1: 1.0})
    app = apply_operator(cme, f)
    weak = app.weak()
    tol = cfg.tolerances
    gens = n - r + 1
    rep = {"profile": prof.to_json(), "generations": gens, "F_measure": F.measure, "lower_sum": lower,
           "lower_sum_over_F": lower / F.measure, "weak_norm": weak, "weak_over_lower": weak / float(lower),
           "F_loglog": float(F.measure) * _loglog4(F.measure), "mu_name": mu().name}
    # stacks of 2^(n-1) tiles per top: each generation contributes |F| / 2
    checks = {"lower_sum_telescopes": lower == gens * F.measure / 2,
              "weak_dominates_lower_sum": weak >= tol["warmup_weak"] * float(lower)}
    rep["lower_sum_equals_width_times_F"] = lower == prof.widths[0] * F.measure
    rep["checks"] = checks
    rows = [{"quantity": k, "value": float(v) if isinstance(v, (Fraction, float)) else v}
            for k, v in rep.items() if k not in ("profile", "checks", "mu_name")]
    return Result(all(checks.values()), rep, {"warmup": (["quantity", "value"], rows)})


def l1_normalizer(cme, f) -> float:
    """h sum_j r_j g_j |F_j| with g_j the number of generations carrying normal tiles of level j."""
    from .cme import normal_mask

    nm = normal_mask(cme)
    t = cme.table
    total = 0.0
    for j, F in f.sets.items():
        g = len(np.unique(t.gen[nm & (t.level == j)]))
        total += float(f.weights[j]) * g * float(F.measure)
    return cme.profile.h * total


def blowup_point(args) -> dict:
    """One sweep point; module-level so worker processes can run it."""
    prof_json, weights, seed = args
    from .carleson import apply_operator, key_alignment, kkey_check, major_set_probe
    from .cme import ScaleProfile, build_cme
    from .norms import phi0
    from .setsbuild import extremal_function, lloglog_norm

    prof = ScaleProfile.from_json(prof_json)
    cme = build_cme(prof)
    if isinstance(weights, dict):
        weights = {int(k): v for k, v in weights.items()}
    f = extremal_function(cme, weights)
    app = apply_operator(cme, f)
    key = key_alignment(cme, f, scramble_seed=seed)
    kk = kkey_check(app)
    probe = major_set_probe(app, seed=seed)
    norm = l1_normalizer(cme, f)
    return {
        "h": prof.h, "L": prof.L, "profile": json.dumps(prof.to_json(), sort_keys=True), "tiles": len(cme.table),
        "norm_lloglog": f.norms["LloglogL"], "norm_phi0": lloglog_norm(f.parts(), phi0()),
        "l1_TM": app.l1("M"), "weak_T": app.weak(), "weak_TM": app.weak("M"), "l1_normalizer": norm,
        "l1_ratio": app.l1("M") / norm if norm else float("nan"),
        "weak_ratio": app.weak() / f.norms["LloglogL"],
        "probe_random_min": probe["random_min"], "probe_adversarial": probe["adversarial"],
        "key_min": key.min_ratio, "key_tiles": int(len(key.ratios)), "key_vacuous": key.vacuous,
        "control_fraction": key.control_fraction(),
        "kkey_max": kk["max_R<nm"], "kkey_ok": kk["ok"], "M_max": kk["max_M"],
    }


def cmd_blowup(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> Result:
    profiles = [cfg.scale_profile(d) for d in (cfg.sweep or BLOWUP_SWEEP)]
    levels_max = max(p.L for p in profiles)
    weights = cfg.weight_spec(range(1, levels_max + 1))
    args = [(p.to_json(), weights, cfg.seed) for p in profiles]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(blowup_point, args))
    else:
        rows = [blowup_point(a) for a in args]
    rows.sort(key=lambda r: (r["h"], r["profile"]))
    tol = cfg.tolerances
    lo, hi = tol["norm_band"]
    weak = [r["weak_ratio"] for r in rows]
    checks = {
        "norm_in_band": all(lo <= r["norm_lloglog"] <= hi for r in rows),
        "l1_ratio_bounded_below": all(r["l1_ratio"] >= tol["l1_constant"] for r in rows),
        "weak_ratio_increasing": all(b > a for a, b in zip(weak, weak[1:])),
        "major_probe": all(r["probe_random_min"] >= tol["major_constant"] * r["h"] for r in rows),
        "key_alignment": all(r["key_min"] >= tol["key_align"] for r in rows if r["key_tiles"]),
        "key_control": all(r["control_fraction"] >= tol["control_fraction"] for r in rows if r["key_tiles"]),
        "kkey": all(r["kkey_ok"] for r in rows),
    }
    header = list(rows[0]) if rows else []
    xs = [r["h"] for r in rows]
    plot = svg_lines("ratios against h", xs, {"weak/LloglogL": weak, "L1 ratio": [r["l1_ratio"] for r in rows]})
    return Result(all(checks.values()), {"checks": checks, "rows": rows}, {"blowup": (header, rows)},
                  {"blowup": plot})


def walsh_corpus(seed: int, count: int = 100, R: int = 10) -> list:
    from .dyadic import StepFunction

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        vals = rng.integers(-8, 9, size=1 << R)
        out.append(StepFunction.exact(R, [Fraction(int(v), 8) for v in vals]))
    return out


def cmd_walsh(cfg: ExperimentConfig, out: Path) -> Result:
    from .dyadic import DyadicInterval, weak_l1_norm
    from .walsh import (WalshBitile, boundary_cancellation, c_w, difference_identity, partial_sum_routes_agree,
                        product_identity, recursions_check)

    p = cfg.params
    corpus = walsh_corpus(cfg.seed, p.get("corpus", 100), p.get("R", 10))
    R = corpus[0].resolution
    routes = all(partial_sum_routes_agree(f, 64) for f in corpus)
    rec = all(recursions_check(WalshBitile(DyadicInterval(j, l), m), R)
              for j in range(0, 6) for l in range(0, 1 << j, max(1, (1 << j) // 4)) for m in range(8))
    prod = all(product_identity(L) for L in range(1, 7))
    diff_f = corpus[:4]
    diff = all(difference_identity(f, L, M) for f in diff_f for L, M in ((4, 2), (5, 3)))
    seq = [n for n in cfg.sequence_terms(R) if n < 1 << R]
    worst = 0.0
    for f in corpus:
        l1 = sum(abs(Fraction(v)) for v in f.values) / (1 << R)
        worst = max(worst, float(weak_l1_norm(c_w(f, seq)) / l1))
    col = boundary_cancellation(heights=tuple(p.get("heights", (1, 2, 4, 8))))
    sep = col.separation(8) if 8 in col.heights else float("nan")
    tol = cfg.tolerances
    checks = {"routes_agree": routes, "recursions": rec, "product_identity": prod, "difference_identity": diff,
              "c_w_weak_bound": worst <= tol["walsh_weak"], "column_separation": sep >= tol["walsh_separation"]}
    rows = [{"height": h, "walsh_ratio": w, "fourier_ratio": fr}
            for h, w, fr in zip(col.heights, col.walsh_ratio, col.fourier_ratio)]
    rep = {"checks": checks, "c_w_weak_over_l1_max": worst, "separation_at_8": sep, "columns": rows,
           "sequence": seq}
    plot = svg_lines("column sums", list(col.heights), {"walsh": list(col.walsh_ratio),
                                                          "fourier": list(col.fourier_ratio)})
    return Result(all(checks.values()), rep, {"walsh_columns": (["height", "walsh_ratio", "fourier_ratio"], rows)},
                  {"walsh_columns": plot})


def band_sweep(cme, vectors: int, seed: int, with_operator: bool = True) -> list:
    """V, W-upper and (optionally) weak(T f) for random positive weights on one build's F_j."""
    from .carleson import apply_operator
    from .cme import normal_mask
    from .norms import v_norm, w_norm_best
    from .setsbuild import assemble, build_F

    sets = {j: build_F(cme, j) for j in range(1, cme.profile.L + 1)}
    nm = normal_mask(cme)
    t = cme.table
    gens = {j: max(1, len(np.unique(t.gen[nm & (t.level == j)]))) for j in sets}
    per_level = {}
    if with_operator:
        for j in sets:
            per_level[j] = apply_operator(cme, assemble({j: sets[j]}, {j: 1.0}))
    rng = np.random.default_rng(seed)
    rows = []
    for v in range(vectors):
        # random positive weights, scaled per level so every part carries comparable mass
        r = {j: float(np.exp(rng.uniform(-3, 3))) / (float(sets[j].measure) * gens[j]) for j in sets}
        # the V weight uses the top of the generation window, the desk-scale stand-in for 2^j
        a = [r[j] * float(sets[j].measure) * cme.profile.gen(j)[1] for j in sets]
        parts = [(r[j] * float(sets[j].measure), r[j]) for j in sets]
        V, W = v_norm(a), w_norm_best(parts)
        row = {"vector": v, "V": V, "W_upper": W, "V_over_W": V / W}
        if with_operator:
            app = per_level[next(iter(sets))]
            vals = sum(r[j] * per_level[j].total() for j in sets)
            srt = np.sort(np.abs(vals))[::-1]
            weak = float(np.max(srt * np.arange(1, len(srt) + 1)) * app.weight) if len(srt) else 0.0
            row["weak_T"] = weak
            row["weak_over_W"] = weak / W
        rows.append(row)
    return rows


def cmd_norms(cfg: ExperimentConfig, out: Path) -> Result:
    from .dyadic import StepFunction
    from .norms import growth_integral, identity, ilog_of_log2, lorentz_norm, mu, phi0, times_slow, v_norm, v_norm_brute

    p = cfg.params
    vecs = p.get("weights")
    if vecs is None:
        rng = np.random.default_rng(cfg.seed)
        vecs = [[float(x) for x in rng.uniform(0, 1, size=k)] for k in range(1, 7) for _ in range(17)][:100]
    if not isinstance(vecs, list) or not vecs or not all(isinstance(v, list) and v for v in vecs):
        raise UsageError("norms needs a nonempty list of nonempty weight vectors in params.weights")
    v_ok = all(v_norm(v) == v_norm_brute(v) for v in vecs if len(v) <= 6)
    # Lorentz norm of an indicator against the fundamental function itself
    R = 8
    rng = np.random.default_rng(cfg.seed + 1)
    lor_ok = True
    for _ in range(10):
        mask = rng.random(1 << R) < rng.uniform(0.05, 0.9)
        if not mask.any():
            continue
        f = StepFunction.exact(R, [1 if m else 0 for m in mask])
        A = Fraction(int(mask.sum()), 1 << R)
        for phi in (identity(), mu(), phi0()):
            got, want = lorentz_norm(f, phi), phi(A)
            if isinstance(want, Fraction):
                lor_ok &= got == want
            else:
                lor_ok &= abs(float(got) - float(want)) <= 1e-12 * float(want)
    g0 = growth_integral(phi0(), 2.0 ** -20)
    heavier = times_slow(phi0(), "phi0*logloglog^2", lambda L: ilog_of_log2(L + 4.1, 3) ** 2)
    g1 = growth_integral(heavier, 2.0 ** -20)
    checks = {"v_norm_matches_brute": v_ok, "lorentz_indicator": lor_ok,
              "phi0_divergent": g0.divergent, "phi0_loglog3_sq_convergent": not g1.divergent}
    rows = []
    if p.get("band", True):
        from .cme import build_cme

        prof = cfg.scale_profile(p.get("band_profile", {"L": 2, "h": 2, "s": 1, "widths": [5, 1]}))
        rows = band_sweep(build_cme(prof), p.get("vectors", 20), cfg.seed, p.get("band_operator", True))
        lo, hi = cfg.tolerances["vw_band"]
        checks["v_w_band"] = all(lo <= r["V_over_W"] <= hi for r in rows)
        if rows and "weak_over_W" in rows[0]:
            q = [r["weak_over_W"] for r in rows]
            checks["weak_w_band"] = max(q) / min(q) <= cfg.tolerances["weak_band_spread"]
    rep = {"checks": checks, "phi0_increments_tail": g0.deep_increments[-3:],
           "heavier_increments_tail": g1.deep_increments[-3:], "band": rows}
    header = ["vector", "V", "W_upper", "V_over_W", "weak_T", "weak_over_W"]
    return Result(all(checks.values()), rep, {"band": (header, rows)})


def cmd_counting(cfg: ExperimentConfig, out: Path) -> Result:
    from . import counting as C
    from .cme import build_cme
    from .dyadic import dyadic_bmo_norm

    tol = cfg.tolerances
    rows, checks = [], {}
    ok = True
    for d in (cfg.sweep or VERIFY_PROFILES):
        prof = cfg.scale_profile(d)
        cme = build_cme(prof)
        tt = C.top_table(cme)
        R = max(int(tt["scale"].max()), cme.resolution)
        fields = {}
        agree = True
        for j in range(1, prof.L + 1):
            s = C.nu_j_structural(cme, j, R, tt)
            tile = C.nu_j(cme, j).refine(R) if cme.resolution < R else C.nu_j(cme, j)
            agree &= bool(np.array_equal(s.num * tile.den, tile.num * s.den))
            fields[j] = s
        tree = C.level_sets(fields, prof.h)
        nest = C.nesting_check(tree)
        wit = C.top_witness(tree, cme, tt)
        sup = C.superlevel_report(cme, tops=tt)
        bmo = max(C.dyadic_bmo(f.floats()) for f in fields.values())
        sand = all(C.basis_sandwich(cme, j, fields[j], tt)["lower"] and C.basis_sandwich(cme, j, fields[j], tt)["upper"]
                   for j in fields)
        grand = C.nu_grand(cme, structural=True, resolution=R)
        jn = C.jn_fit(grand)
        row = {"profile": json.dumps(prof.to_json(), sort_keys=True), "routes_agree": agree, "bmo": bmo,
               "bmo_ok": bmo <= tol["bmo"], "nesting": nest.nesting_ok, "john_nirenberg": nest.jn_ok,
               "jn_constant": nest.jn_constant, "weak_le_l1": grand.weak() <= grand.l1(),
               "weak": float(grand.weak()), "l1": float(grand.l1()),
               "disjoint_across_levels": sup["disjoint_across_levels"], "sandwich": sand,
               "components": wit["components"], "not_a_top": wit["not_a_top"],
               "not_tiled_by_tops": wit["not_tiled_by_tops"], "tail_monotone": jn["monotone"]}
        if R <= 12:
            # exact cross-check of the numeric BMO on small resolutions
            exact = max(float(dyadic_bmo_norm(f.step())) for f in fields.values())
            row["bmo_exact_gap"] = abs(exact - bmo)
        rows.append(row)
        ok &= all(row[k] for k in ("routes_agree", "bmo_ok", "nesting", "john_nirenberg", "weak_le_l1",
                                   "disjoint_across_levels", "sandwich", "tail_monotone"))
        ok &= row["not_tiled_by_tops"] == 0
    ext = C.extremality_experiment()
    ratios = [r["ratio"] for r in ext]
    checks["extremality_within_factor"] = max(ratios) / min(ratios) <= tol["extremality_factor"]
    checks["profiles"] = ok
    header = list(rows[0]) if rows else []
    for r in rows:
        for k in header:
            r.setdefault(k, "")
    plot = svg_lines("weak norm of nu over h", [r["h"] for r in ext], {"ratio": ratios})
    return Result(all(checks.values()), {"checks": checks, "profiles": rows, "extremality": ext},
                  {"counting": (sorted({k for r in rows for k in r}), rows),
                   "extremality": (["h", "L", "nu_l1", "nu_weak", "weak_le_l1", "ratio"], ext)},
                  {"extremality": plot})


def cmd_reconstruct(cfg: ExperimentConfig, out: Path) -> Result:
    from .carleson import reconstruction_constancy

    p = cfg.params
    rep = reconstruction_constancy(tuple(p.get("xis", (-2, -5, -17))), p.get("scales", 12))
    tol = cfg.tolerances
    checks = {"spread": rep["relative_spread"] <= tol["reconstruction_spread"],
              "doubling": rep["doubling_change"] <= tol["reconstruction_doubling"]}
    rows = [{"xi": x, "value": v} for x, v in zip(p.get("xis", (-2, -5, -17)), rep["values"])]
    return Result(all(checks.values()), {"checks": checks, **rep}, {"reconstruct": (["xi", "value"], rows)})


# --- entry point ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tiletower", description="Tile configuration builder and experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config; defaults are used when omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("exact", "numeric"), default=None)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    return p


def run(argv=None) -> int:
    from .cme import CmeInfeasible

    args = parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.mode)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = globals()[f"cmd_{args.command}"]
        res = fn(cfg, out, args.jobs) if args.command == "blowup" else fn(cfg, out)
    except UsageError as e:
        print(f"tiletower: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CmeInfeasible as e:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ledger = out / "validation.csv"
        write_csv(ledger, ["check", "ok", "detail"], [{"check": "profile", "ok": False, "detail": str(e)}])
        print(f"tiletower: {e} (ledger: {ledger})", file=sys.stderr)
        return EXIT_FAIL
    write_outputs(out, cfg, args.command, res, args.svg)
    status = "pass" if res.ok else "FAIL"
    print(f"{args.command}: {status}" + (f" ({res.message})" if res.message else ""))
    return EXIT_OK if res.ok else EXIT_FAIL


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
