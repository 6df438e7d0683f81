"""Truncated kernel, tile operators, lacunary Carleson models and the CME operator engine.

psi(y) = (eta(y) - eta(2y)) / y with eta a C^2 mollified step (1 on |y| <= 4, 0 on
|y| >= 8), so psi lives on 2 < |y| < 8 and sum_k 2^k psi(2^k y) telescopes to 1/y.
Integrals of psi_k over intervals go through the tabulated antiderivative Psi, and
integrals of those through Psi2; both are cubic Hermite tables on a 2^-10 grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .dyadic import DyadicInterval, StepFunction, star
from .tiles import Linearization, Tile


# --- kernel ---------------------------------------------------------------------

def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10 - 15 * t + 6 * t * t)


def _dsmooth(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0)


def eta(y):
    return 1 - smoothstep((np.abs(y) - 4) / 4)


def _deta(y):
    return -np.sign(y) * _dsmooth((np.abs(y) - 4) / 4) / 4


def psi(y):
    y = np.asarray(y, dtype=float)
    safe = np.where(np.abs(y) < 1, 1.0, y)
    return np.where(np.abs(y) < 1, 0.0, (eta(y) - eta(2 * y)) / safe)


def dpsi(y):
    y = np.asarray(y, dtype=float)
    safe = np.where(np.abs(y) < 1, 1.0, y)
    return np.where(np.abs(y) < 1, 0.0, (_deta(y) - 2 * _deta(2 * y) - psi(y)) / safe)


def psi_k(k: int, y):
    return 2.0 ** k * psi(2.0 ** k * np.asarray(y, dtype=float))


def partition_sum(y, kmin: int, kmax: int):
    """sum_{k=kmin}^{kmax} psi_k(y)."""
    return sum(psi_k(k, y) for k in range(kmin, kmax + 1))


def _hermite(u, lo, h, v, d):
    x = (u - lo) / h
    i = np.clip(np.floor(x).astype(np.int64), 0, len(v) - 2)
    t = x - i
    t2, t3 = t * t, t * t * t
    return ((2 * t3 - 3 * t2 + 1) * v[i] + (t3 - 2 * t2 + t) * h * d[i]
            + (-2 * t3 + 3 * t2) * v[i + 1] + (t3 - t2) * h * d[i + 1])


@dataclass(frozen=True)
class Kernel:
    """Tables of Psi(u) = int_{-inf}^u psi and Psi2(u) = int_{-inf}^u Psi on [-8, 8]."""

    step: float
    Psi_v: np.ndarray
    psi_v: np.ndarray
    Psi2_v: np.ndarray

    @property
    def Psi2_total(self) -> float:
        return float(self.Psi2_v[-1])

    def Psi(self, u):
        u = np.asarray(u, dtype=float)
        out = _hermite(np.clip(u, -8, 8), -8.0, self.step, self.Psi_v, self.psi_v)
        return np.where(np.abs(u) >= 8, 0.0, out)

    def Psi2(self, u):
        u = np.asarray(u, dtype=float)
        out = _hermite(np.clip(u, -8, 8), -8.0, self.step, self.Psi2_v, self.Psi_v)
        return np.where(u <= -8, 0.0, np.where(u >= 8, self.Psi2_total, out))

    def interval_integral(self, k: int, x, i0, i1):
        """int_{i0}^{i1} psi_k(x - y) dy."""
        s = 2.0 ** k
        return self.Psi(s * (x - i0)) - self.Psi(s * (x - i1))


@lru_cache(maxsize=1)
def make_kernel(bits: int = 10) -> Kernel:
    h = 2.0 ** -bits
    n = 16 << bits
    grid = -8.0 + h * np.arange(n + 1)
    gx, gw = np.polynomial.legendre.leggauss(8)
    nodes = grid[:-1, None] + h * (gx[None, :] + 1) / 2
    cell = (psi(nodes) * gw[None, :]).sum(axis=1) * h / 2
    Psi_v = np.concatenate([[0.0], np.cumsum(cell)])
    Psi_v[-1] = 0.0  # psi is odd, the total vanishes
    psi_v = psi(grid)
    c2 = h * (Psi_v[:-1] + Psi_v[1:]) / 2 + h * h * (psi_v[:-1] - psi_v[1:]) / 12
    Psi2_v = np.concatenate([[0.0], np.cumsum(c2)])
    return Kernel(h, Psi_v, psi_v, Psi2_v)


# --- generic tile operators at resolvable frequencies --------------------------

def _values(f: StepFunction) -> np.ndarray:
    return np.array([complex(v) if isinstance(v, complex) else float(v) for v in f.values])


def _nodes(R: int, lo: int, hi: int, per: int = 8) -> np.ndarray:
    """Midpoint nodes, `per` to a cell, for cells lo..hi-1 at resolution R."""
    c = np.arange(lo, hi)
    return ((c[:, None] + (np.arange(per)[None, :] + 0.5) / per) / 2.0 ** R).ravel()


def _tile_setup(f_res: int, P: Tile, N: Linearization, extra: int = 6):
    k = P.time.scale
    Rx = max(N.resolution, f_res, k)
    Ry = max(f_res, k + extra)
    cx = np.arange(P.time.index << (Rx - k), (P.time.index + 1) << (Rx - k))
    alpha = np.array([N.value_at_cell(Rx, int(c)) for c in cx], dtype=float)
    inE = np.array([P.freq_contains(a) for a in alpha])
    L = float(P.time.length)
    c0 = float(P.time.center)
    ylo = max(0, math.floor((c0 - 8.5 * L) * 2 ** Ry))
    yhi = min(1 << Ry, math.ceil((c0 + 8.5 * L) * 2 ** Ry))
    return k, Rx, Ry, cx, alpha, inE, ylo, yhi


def _kernel_matrix(k, Rx, Ry, cx, alpha, ylo, yhi, per=8):
    x = (cx + 0.5) / 2.0 ** Rx
    y = _nodes(Ry, ylo, yhi, per)
    K = np.exp(-2j * np.pi * alpha[:, None] * y[None, :]) * psi_k(k, x[:, None] - y[None, :])
    return x, y, K


def t_p(f: StepFunction, P: Tile, N: Linearization) -> StepFunction:
    """T_P f(x) = chi_E(P)(x) int e^(-2 pi i N(x) y) psi_k(x - y) f(y) dy by 8-point midpoint rule.

    Returns complex values at resolution max(N, f, scale of P); zero off E(P).
    """
    k, Rx, Ry, cx, alpha, inE, ylo, yhi = _tile_setup(f.resolution, P, N)
    out = np.zeros(1 << Rx, dtype=complex)
    if ylo < yhi and inE.any():
        _, y, K = _kernel_matrix(k, Rx, Ry, cx[inE], alpha[inE], ylo, yhi)
        fv = _values(f)
        fy = fv[(y * 2 ** f.resolution).astype(np.int64)]
        out[cx[inE]] = K @ fy / (8 * 2.0 ** Ry)
    return StepFunction(Rx, tuple(out))


def t_p_star(g: StepFunction, P: Tile, N: Linearization, f_res: int | None = None) -> StepFunction:
    """Adjoint of ``t_p`` under the same quadrature; values at resolution max(g, scale + 6)."""
    f_res = g.resolution if f_res is None else f_res
    k, Rx, Ry, cx, alpha, inE, ylo, yhi = _tile_setup(f_res, P, N)
    out = np.zeros(1 << Ry, dtype=complex)
    if ylo < yhi and inE.any():
        _, y, K = _kernel_matrix(k, Rx, Ry, cx[inE], alpha[inE], ylo, yhi)
        gv = _values(g.refine(Rx) if g.resolution < Rx else g)
        if g.resolution > Rx:
            raise ValueError("g finer than the output grid of T_P")
        gx = gv[cx[inE]] / 2.0 ** Rx
        node_vals = np.conj(K).T @ gx
        out[ylo:yhi] = node_vals.reshape(-1, 8).mean(axis=1)
    return StepFunction(Ry, tuple(out))


def inner(u: StepFunction, v: StepFunction) -> complex:
    R = max(u.resolution, v.resolution)
    a = _values(u.refine(R))
    b = _values(v.refine(R))
    return complex(np.sum(a * np.conj(b)) / 2.0 ** R)


def star_cells(P: Tile, R: int) -> np.ndarray:
    """Cells of resolution R lying inside the closed star of I_P."""
    c = np.arange(1 << R)
    lo, hi = c / 2.0 ** R, (c + 1) / 2.0 ** R
    keep = np.zeros(len(c), dtype=bool)
    for comp in star(P.time):
        keep |= (lo >= float(comp.lo)) & (hi <= float(comp.hi))
    return keep


# --- periodic conjugate function and column kernels -----------------------------

def conjugate_step(values) -> np.ndarray:
    """p.v. int_0^1 cot(pi (x - y)) g(y) dy at the cell centers of a periodic step function g.

    Each cell integrates in closed form to (1/pi) log|sin(pi (x-a)) / sin(pi (x-b))|,
    so the result is a circular convolution.
    """
    g = np.asarray(values)
    n = len(g)
    d = np.arange(n)
    h = 1.0 / n
    with np.errstate(divide="ignore"):
        ker = np.log(np.abs(np.sin(np.pi * (d + 0.5) * h) / np.sin(np.pi * (d - 0.5) * h))) / np.pi
    ker[0] = 0.0
    out = np.fft.ifft(np.fft.fft(g) * np.fft.fft(ker))
    return out.real if np.isrealobj(g) else out


def column_kernel(e_lo: float, e_hi: float, scales, y, kernel: Kernel | None = None) -> np.ndarray:
    """sum over k in scales of int_{e_lo}^{e_hi} psi_k(x - y) dx."""
    kernel = kernel or make_kernel()
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for k in scales:
        s = 2.0 ** k
        out += kernel.Psi(s * (e_hi - y)) - kernel.Psi(s * (e_lo - y))
    return out


# --- lacunary Carleson operator on step functions -------------------------------

def jump_adjacent(f: StepFunction, width: int = 1) -> np.ndarray:
    v = _values(f)
    jumps = np.flatnonzero(v != np.roll(v, 1))  # jump at the left edge of cell i
    bad = np.zeros(len(v), dtype=bool)
    for j in jumps:
        for d in range(-width, width):
            bad[(j + d) % len(v)] = True
    return bad


def c_lac_single(f: StepFunction, n: int, per: int | None = None) -> np.ndarray:
    """p.v. int e^(2 pi i n (x-y)) cot(pi (x-y)) f(y) dy at cell centers, by cells.

    The cot part is closed form; the remainder (e^(2 pi i n u) - 1) cot(pi u) is
    bounded and integrated with a midpoint rule fine enough for the oscillation.
    """
    v = _values(f)
    R = f.resolution
    N = len(v)
    base = conjugate_step(v.astype(complex))
    per = per or max(8, 8 * math.ceil(abs(n) * 8 / N))
    offs = (np.arange(per) + 0.5) / per  # node positions inside a cell
    # remainder kernel over offsets u = (d + 1/2 - o)/N, cell-difference d
    d = np.arange(N)
    u = ((d[:, None] + 0.5 - offs[None, :]) / N)
    u = np.where(u > 0.5, u - 1, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        rem = (np.exp(2j * np.pi * n * u) - 1) / np.tan(np.pi * u)
    rem = np.where(np.abs(u) < 1e-15, 2j * n, rem)
    kern = rem.mean(axis=1) / N
    corr = np.fft.ifft(np.fft.fft(v.astype(complex)) * np.fft.fft(kern))
    return base + corr


def c_lac_direct(f: StepFunction, seq) -> np.ndarray:
    """sup_j of the modulated conjugate function, per cell (numeric)."""
    best = np.zeros(1 << f.resolution)
    for n in seq:
        best = np.maximum(best, np.abs(c_lac_single(f, int(n))))
    return best


def c_lac_fourier(f: StepFunction, n: int, K: int | None = None) -> np.ndarray:
    """The same quantity from the exact Fourier coefficients of f.

    The multiplier of the modulated cot kernel is -i sgn(m - n); coefficients of
    a step function are phi(m) V[m mod 2^R] with V its DFT. Frequencies |m| <= K
    are summed by residue class mod 2^R, evaluated at cell centers.
    """
    v = _values(f).astype(complex)
    R = f.resolution
    N = len(v)
    K = K or (N << 14)
    V = np.fft.fft(v)
    r = np.arange(N)
    A = np.zeros(N, dtype=complex)
    tmax = K // N + 1
    for t in range(-tmax, tmax + 1):
        m = r + N * t
        keep = np.abs(m) <= K
        with np.errstate(divide="ignore", invalid="ignore"):
            ph = np.where(m == 0, 1.0 / N, (1 - np.exp(-2j * np.pi * m / N)) / (2j * np.pi * np.where(m == 0, 1, m)))
        term = (-1j) * np.sign(m - n) * ph * (-1.0) ** (t & 1)
        A += np.where(keep, term, 0)
    # e^(2 pi i m (c + 1/2)/N) = e^(2 pi i r (c + 1/2)/N) (-1)^t
    half = np.exp(1j * np.pi * r / N)
    return np.fft.ifft(V * A * half) * N


def lac_agreement(f: StepFunction, n: int, K: int | None = None) -> dict:
    a = c_lac_single(f, n)
    b = c_lac_fourier(f, n, K)
    ok = ~jump_adjacent(f, 2)
    err = np.abs(a - b)[ok]
    return {"max_abs_diff": float(err.max()) if len(err) else 0.0, "cells": int(ok.sum())}


# --- wave packets, the single-scale model and reconstruction ---------------------

def _bump(t):
    t = np.asarray(t, dtype=float)
    pos = np.where(t > 0, np.exp(-1 / np.where(t > 0, t, 1)), 0.0)
    return pos


def phi_hat(xi, inner_r: float = 0.07, outer_r: float = 0.1):
    """Smooth plateau: 1 on |xi| <= 0.07, 0 on |xi| >= 0.1."""
    t = (outer_r - np.abs(np.asarray(xi, dtype=float))) / (outer_r - inner_r)
    a, b = _bump(t), _bump(1 - t)
    return np.where(t >= 1, 1.0, np.where(t <= 0, 0.0, a / np.where(a + b > 0, a + b, 1)))


@dataclass(frozen=True)
class PacketTable:
    step: float
    half_width: float
    values: np.ndarray
    tail_mass: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, np.arange(len(self.values)) * self.step - self.half_width, self.values)
        return np.where(np.abs(u) > self.half_width, 0.0, out)


@lru_cache(maxsize=2)
def packet_table(half_width: float = 256.0, step: float = 1 / 128, nodes: int = 4096) -> PacketTable:
    """phi(u) = int phi_hat(xi) e^(2 pi i u xi) d xi (real, even), tabulated."""
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    xi = 0.1 * (gx + 1) / 2
    w = gw * 0.1 / 2 * phi_hat(xi)
    u = np.arange(-half_width, half_width + step / 2, step)
    vals = np.empty_like(u)
    for s in range(0, len(u), 4096):
        vals[s:s + 4096] = 2 * (np.cos(2 * np.pi * u[s:s + 4096, None] * xi[None, :]) @ w)
    l2 = float(np.sum(w * phi_hat(xi)) * 2)  # ||phi||_2^2 by Plancherel
    inside = float(np.sum(vals ** 2) * step)
    return PacketTable(step, half_width, vals, max(0.0, 1 - inside / l2))


def lt_model(f: StepFunction, xi: float, m_range, grid=(0.0, 0.0, 0.0), table: PacketTable | None = None) -> np.ndarray:
    """sum over grid tiles P at scales m with xi in omega(P_u) of <f, phi_{P_l}> phi_{P_l}(x), at cell centers.

    Tile P at scale m: |I| = 2^-(m + lam), I = |I| ([0,1) + k + y), omega = |I|^-1 ([0,1) + n + mu).
    """
    y0, lam, mu_ = grid
    table = table or packet_table()
    v = _values(f)
    R = f.resolution
    x = (np.arange(1 << R) + 0.5) / 2.0 ** R
    out = np.zeros(1 << R, dtype=complex)
    for m in m_range:
        W = 2.0 ** (m + lam)
        t = xi / W - mu_
        n = math.floor(t)
        if t - n < 0.5:
            continue  # xi lies in the lower half
        c = W * (n + mu_ + 0.25)
        L = 1 / W
        out += _single_scale(v, R, x, c, L, y0, table)
    return out


def _single_scale(v, R, x, c, L, y0, table: PacketTable):
    """sum_k <f, phi_k> phi_k(x), phi_k(t) = e^(2 pi i c t) L^-1/2 phi((t - center_k)/L)."""
    hw = table.half_width
    per = max(8, math.ceil(8 * 2.0 ** -R / L))
    yn = _nodes(R, 0, 1 << R, per)
    fy = np.repeat(v, per)
    wy = 1.0 / (per * 2.0 ** R)
    kmin = math.floor(-hw - y0) - 1
    kmax = math.ceil(1 / L + hw - y0) + 1
    ks = np.arange(kmin, kmax + 1)
    centers = (ks + y0 + 0.5) * L
    coef = np.zeros(len(ks), dtype=complex)
    mod_y = fy * np.exp(-2j * np.pi * c * yn) * wy / math.sqrt(L)
    for s in range(0, len(ks), 256):
        u = (yn[None, :] - centers[s:s + 256, None]) / L
        coef[s:s + 256] = table(u) @ mod_y
    vals = np.zeros(len(x), dtype=complex)
    for s in range(0, len(ks), 256):
        u = (x[:, None] - centers[None, s:s + 256]) / L
        vals += table(u) @ coef[s:s + 256]
    return vals * np.exp(2j * np.pi * c * x) / math.sqrt(L)


def uncentered_maximal(f: StepFunction) -> np.ndarray:
    """sup of averages of |f| over all cell-aligned intervals containing each cell (not only dyadic)."""
    a = np.abs(_values(f))
    n = len(a)
    S = np.concatenate([[0.0], np.cumsum(a)])
    out = np.zeros(n)
    for lo in range(n):
        hi = np.arange(lo + 1, n + 1)
        avg = (S[hi] - S[lo]) / (hi - lo)
        # best interval starting at lo that contains cell x: suffix max over hi > x
        suf = np.maximum.accumulate(avg[::-1])[::-1]
        out[lo:] = np.maximum(out[lo:], suf)
    return out


def single_scale_domination(f: StepFunction, js, table: PacketTable | None = None) -> dict:
    """sup_j |model at xi = 2^j, single scale j + 1, grid (0,0,0)| against maximal functions."""
    from .dyadic import hl_maximal

    best = np.zeros(1 << f.resolution)
    for j in js:
        best = np.maximum(best, np.abs(lt_model(f, 2.0 ** j, [j + 1], (0.0, 0.0, 0.0), table)))
    mu_ = uncentered_maximal(f)
    md = np.array([float(v) for v in hl_maximal(f).values])
    with np.errstate(divide="ignore", invalid="ignore"):
        r_u = np.where(mu_ > 0, best / mu_, np.where(best > 1e-12, np.inf, 0))
        r_d = np.where(md > 0, best / md, np.where(best > 1e-12, np.inf, 0))
    return {"ratio_uncentered": float(r_u.max()), "ratio_dyadic": float(r_d.max())}


def reconstruction_value(xi: float, scales: int = 12, mu_: float = 0.125, points: int = 256) -> float:
    """int_0^1 sum_{m < scales} |phi_hat(xi 2^-(m + lam) + 3/4 - mu)|^2 d lam, composite midpoint."""
    lam = (np.arange(points) + 0.5) / points
    total = 0.0
    for m in range(scales):
        total += float(np.mean(phi_hat(xi * 2.0 ** -(m + lam) + 0.75 - mu_) ** 2))
    return total


def reconstruction_constancy(xis=(-2, -5, -17), scales: int = 12, mu_: float = 0.125, points: int = 256) -> dict:
    vals = [reconstruction_value(x, scales, mu_, points) for x in xis]
    fine = [reconstruction_value(x, scales, mu_, 2 * points) for x in xis]
    spread = (max(vals) - min(vals)) / max(vals)
    stab = max(abs(a - b) / abs(b) for a, b in zip(vals, fine))
    exact = float(_reconstruction_constant(mu_))
    edge = [reconstruction_value(x, 1, mu_, points) + reconstruction_value(x * 2.0 ** -(scales - 1), 1, mu_, points)
            for x in xis]
    return {"values": vals, "relative_spread": spread, "doubling_change": stab, "constant": exact,
            "edge_contribution": max(edge)}


def _reconstruction_constant(mu_: float) -> float:
    """(1/ln 2) int_0^inf |phi_hat(3/4 - mu - u)|^2 du / u, the value away from the truncation edges."""
    gx, gw = np.polynomial.legendre.leggauss(400)
    a, b = 0.75 - mu_ - 0.1, 0.75 - mu_ + 0.1
    u = a + (b - a) * (gx + 1) / 2
    return float(np.sum(gw * (b - a) / 2 * phi_hat(0.75 - mu_ - u) ** 2 / u) / math.log(2))


# --- CME operator engine -----------------------------------------------------------

@dataclass
class PieceGeometry:
    level: int
    pieces: list
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_cme(cls, cme, level: int) -> "PieceGeometry":
        ps = cme.pieces(level)
        lo = np.array([float(I.left) for I in ps])
        hi = np.array([float(I.right) for I in ps])
        return cls(level, ps, lo, hi)


@dataclass
class RunIndex:
    """Maximal runs of equal code in N, sorted by (code, start), in cell units."""

    R: int
    code: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @classmethod
    def from_cme(cls, cme) -> "RunIndex":
        c = cme.codes
        change = np.flatnonzero(np.diff(c)) + 1
        st = np.concatenate([[0], change]).astype(np.int64)
        en = np.concatenate([change, [len(c)]]).astype(np.int64)
        code = c[st].astype(np.int64)
        order = np.lexsort((st, code))
        return cls(cme.resolution, code[order], st[order], en[order])

    def for_tiles(self, code, lo, hi):
        """(tile, run start, run end) triples for runs of the tile code meeting [lo, hi), clipped."""
        keys = (self.code << self.R) + self.start
        base = np.asarray(code, dtype=np.int64) << self.R
        first = np.searchsorted(keys, base + lo, side="right") - 1
        prev_ok = (first >= 0) & (self.code[np.maximum(first, 0)] == code) & (self.end[np.maximum(first, 0)] > lo)
        first = np.where(prev_ok, first, first + 1)
        last = np.searchsorted(keys, base + hi, side="left")
        cnt = np.maximum(last - first, 0)
        owner, off = _expand(cnt)
        ridx = first[owner] + off
        s = np.maximum(self.start[ridx], lo[owner])
        e = np.minimum(self.end[ridx], hi[owner])
        return owner, s, e


def _expand(counts):
    counts = np.asarray(counts, dtype=np.int64)
    owner = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    off = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    return owner, off


def _tile_spans(cme, rows):
    t = cme.table
    R = cme.resolution
    sc = t.scale[rows].astype(np.int64)
    lo = t.index[rows].astype(np.int64) << (R - sc)
    hi = (t.index[rows].astype(np.int64) + 1) << (R - sc)
    return sc, lo, hi


def _star_piece_range(geo: PieceGeometry, left: np.ndarray, length: np.ndarray):
    c = left + length / 2
    a = np.searchsorted(geo.hi, c - 8.5 * length, side="right")
    b = np.searchsorted(geo.lo, c + 8.5 * length, side="left")
    return a, np.maximum(b, a)


def phi_integrals(cme, geo: PieceGeometry, rows, kernel: Kernel, chunk: int = 2_000_000):
    """Yield (positions in rows, piece indices, int_I Phi_P) for every tile-run and piece in its star.

    Phi_P(y) = int_E(P) psi_k(x - y) dx, summed over the runs of E(P); one entry per run.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if not len(rows) or not len(geo.pieces):
        return
    R = cme.resolution
    runs = RunIndex.from_cme(cme)
    sc, lo, hi = _tile_spans(cme, rows)
    owner, s, e = runs.for_tiles(cme.table.code[rows], lo, hi)
    k = sc[owner]
    length = np.ldexp(1.0, -k)
    left = lo[owner] / 2.0 ** R
    a, b = _star_piece_range(geo, left, length)
    cnt = b - a
    csum = np.cumsum(cnt)
    start = 0
    while start < len(owner):
        stop = int(np.searchsorted(csum, (csum[start - 1] if start else 0) + chunk, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        o2, off = _expand(cnt[sl])
        pidx = a[sl][o2] + off
        kk = k[sl][o2].astype(float)
        s2 = 2.0 ** kk
        e0 = s[sl][o2] / 2.0 ** R
        e1 = e[sl][o2] / 2.0 ** R
        i0, i1 = geo.lo[pidx], geo.hi[pidx]
        P2 = kernel.Psi2
        v = (P2(s2 * (e1 - i0)) - P2(s2 * (e1 - i1)) - P2(s2 * (e0 - i0)) + P2(s2 * (e0 - i1))) / s2
        yield owner[sl][o2], pidx, v
        start = stop


def _level_integrals(cme, fset, codes_needed=None):
    """Piece integrals of e^(2 pi i a y) over F for every level frequency; column by code."""
    exps = list(fset.digits.exps)
    G = fset.integrals(exps)
    code_col = {int(cme.code_of[1 << e]) if (1 << e) in cme.code_of else None: i for i, e in enumerate(exps)}
    code_col.pop(None, None)
    return G, code_col


@dataclass
class KeyReport:
    ratios: np.ndarray
    rows: np.ndarray
    vacuous: int
    min_ratio: float
    scrambled: np.ndarray | None = None

    def passes(self, c_align: float = 1 / 500) -> bool:
        return bool(np.all(self.ratios >= c_align))

    def control_fraction(self, tol: float = 0.1) -> float:
        if self.scrambled is None or not len(self.scrambled):
            return 1.0
        return float(np.mean(np.abs(self.scrambled) < tol))


def eligible_rows(cme) -> np.ndarray:
    """Normal tiles outside the last two layers; all normal tiles when h <= 2."""
    from .cme import normal_mask

    nm = normal_mask(cme)
    h = cme.profile.h
    if h <= 2:
        return np.flatnonzero(nm)
    return np.flatnonzero(nm & (cme.table.layer <= h - 2))


def key_alignment(cme, f, rows=None, kernel: Kernel | None = None, scramble_seed: int | None = None) -> KeyReport:
    """int Re(chi_F T_P^*(1)) / int |chi_F T_P^*(1)| for each tile, F the union of all F_j.

    With ``scramble_seed`` the same ratios are also computed with the signs of F
    replaced by independent random signs (control).
    """
    kernel = kernel or make_kernel()
    rows = eligible_rows(cme) if rows is None else np.asarray(rows, dtype=np.int64)
    num = np.zeros(len(rows))
    den = np.zeros(len(rows))
    snum = np.zeros(len(rows))
    rng = np.random.default_rng(scramble_seed) if scramble_seed is not None else None
    for j, fs in f.sets.items():
        geo = PieceGeometry.from_cme(cme, j)
        G, code_col = _level_integrals(cme, fs)
        lengths = geo.hi - geo.lo
        Gn = G / lengths[:, None]
        dens = float(fs.digits.density())
        if rng is not None:
            neg = rng.random(fs.neg.shape) < 0.5
            Gs = piece_integrals_scr(fs, neg) / lengths[:, None]
        colmap = np.full(cme.sentinel_code + 1, -1, dtype=np.int64)
        for c, i in code_col.items():
            colmap[c] = i
        rcol = colmap[cme.table.code[rows]]
        for ti, pidx, v in phi_integrals(cme, geo, rows, kernel):
            cols = rcol[ti]
            have = cols >= 0
            g = np.where(have, Gn[pidx, np.maximum(cols, 0)], 0)
            np.add.at(num, ti, np.real(g * v))
            np.add.at(den, ti, dens * np.abs(v))
            if rng is not None:
                gs = np.where(have, Gs[pidx, np.maximum(cols, 0)], 0)
                np.add.at(snum, ti, np.real(gs * v))
    vac = den <= 0
    ratios = np.where(vac, np.inf, num / np.where(vac, 1, den))
    scr = np.where(vac, 0.0, snum / np.where(vac, 1, den))[~vac] if rng is not None else None
    live = ratios[~vac]
    return KeyReport(ratios, rows, int(vac.sum()), float(live.min()) if len(live) else float("inf"), scr)


def piece_integrals_scr(fs, neg):
    from .setsbuild import piece_integrals

    lengths = np.array([float(I.length) for I in fs.pieces])
    return piece_integrals(fs.digits, list(fs.digits.exps), neg, lengths)


# --- applying the operator to f -----------------------------------------------------

BUCKETS = ("O", "0", "R<nm", "R<bd", "Rbd", "M", "R>")


@dataclass
class Applied:
    """Values of partial operators at evaluation points (cell midpoints of a 2^q subdivision)."""

    resolution: int
    points: np.ndarray  # global point indices at `resolution`
    values: dict  # bucket -> complex array
    tile_counts: dict

    @property
    def weight(self) -> float:
        return 2.0 ** -self.resolution

    def total(self) -> np.ndarray:
        return sum(self.values.values())

    def l1(self, bucket=None) -> float:
        v = self.total() if bucket is None else self.values[bucket]
        return float(np.sum(np.abs(v)) * self.weight)

    def weak(self, bucket=None) -> float:
        v = self.total() if bucket is None else self.values[bucket]
        a = np.sort(np.abs(v))[::-1]
        if not len(a):
            return 0.0
        return float(np.max(a * np.arange(1, len(a) + 1)) * self.weight)

    def max_abs(self, bucket) -> float:
        v = self.values[bucket]
        return float(np.max(np.abs(v))) if len(v) else 0.0


def classify_pairs(cme, level_f: int, normal: np.ndarray) -> np.ndarray:
    """Bucket index of every tile for the part r_j chi_{F_j}, j = level_f."""
    from .cme import tile_masses

    t = cme.table
    n = tile_masses(cme)
    r, nn = cme.profile.gen(level_f)
    out = np.full(len(t), -1, dtype=np.int8)
    zero_freq = np.zeros(len(t), dtype=bool)  # 0 in 100 omega_P needs alpha < 50 |omega|; never at CME scales
    out[zero_freq] = 0
    rest = out < 0
    out[rest & (n == 0)] = 1
    rest = out < 0
    same = t.level == level_f
    out[rest & same & normal] = BUCKETS.index("M")
    out[rest & same & ~normal] = BUCKETS.index("Rbd")
    rest = out < 0
    below = (n < r) | ((n >= r) & (n <= nn) & (t.level < level_f))
    out[rest & below & normal] = BUCKETS.index("R<nm")
    out[rest & below & ~normal] = BUCKETS.index("R<bd")
    rest = out < 0
    out[rest] = BUCKETS.index("R>")
    if np.any(out < 0):
        raise RuntimeError("unclassified tile")
    return out


def apply_operator(cme, f, kernel: Kernel | None = None, q: int = 2, G: int = 8,
                   direct_points: int = 64, direct_pieces: int = 2048, chunk: int = 3_000_000) -> Applied:
    """T f = sum over tiles P and levels j of T_P(r_j chi_{F_j}) at all points of supp N, by bucket.

    Inside each piece F is replaced by its piece average (density times the piece
    integral of the modulation), exact up to 2^-(guard) relative because the digit
    structure is far finer than every tile. Tiles with many evaluation points are
    evaluated on a 2^-(k+G) node grid and interpolated linearly; tiles with many
    pieces in the star aggregate them into 2^-(k+G) bins with a first-moment correction.
    """
    from .cme import normal_mask

    kernel = kernel or make_kernel()
    t = cme.table
    R = cme.resolution
    Rq = R + q
    sent = cme.sentinel_code
    live = np.flatnonzero(cme.codes != sent)
    pts = ((live[:, None] << q) + np.arange(1 << q)[None, :]).ravel()
    pcode = np.repeat(cme.codes[live].astype(np.int64), 1 << q)
    order = np.lexsort((pts, pcode))
    pts, pcode = pts[order], pcode[order]
    pkey = (pcode << Rq) + pts
    xpos = (pts + 0.5) / 2.0 ** Rq
    npts = len(pts)
    acc = np.zeros((len(BUCKETS), npts), dtype=complex)
    counts = {b: 0 for b in BUCKETS}
    normal = normal_mask(cme)
    sc_all = t.scale.astype(np.int64)
    lo_all = t.index.astype(np.int64) << (Rq - sc_all)
    hi_all = (t.index.astype(np.int64) + 1) << (Rq - sc_all)
    base = t.code.astype(np.int64) << Rq
    p_lo = np.searchsorted(pkey, base + lo_all)
    p_hi = np.searchsorted(pkey, base + hi_all)
    for j, fs in f.sets.items():
        buckets = classify_pairs(cme, j, normal)
        for b in range(len(BUCKETS)):
            counts[BUCKETS[b]] += int(np.count_nonzero(buckets == b))
        geo = PieceGeometry.from_cme(cme, j)
        Gm, code_col = _level_integrals(cme, fs)
        w = float(f.weights[j])
        rho = w * np.conj(Gm) / (geo.hi - geo.lo)[:, None]
        col = np.full(cme.sentinel_code + 1, -1, dtype=np.int64)
        for c, i in code_col.items():
            col[c] = i
        tc = col[t.code]
        rows = np.flatnonzero((tc >= 0) & (p_hi > p_lo))
        length = np.ldexp(1.0, -sc_all[rows])
        left = t.index[rows] * length
        a, bnd = _star_piece_range(geo, left, length)
        npc = bnd - a
        npt = p_hi[rows] - p_lo[rows]
        light = (npt <= direct_points) & (npc <= direct_pieces)
        _apply_light(rows[light], a[light], npc[light], p_lo[rows][light], npt[light], sc_all, tc, buckets,
                     rho, geo, xpos, acc, kernel, chunk)
        for i in np.flatnonzero(~light):
            r_ = rows[i]
            _apply_heavy(int(sc_all[r_]), int(tc[r_]), int(buckets[r_]), int(a[i]), int(bnd[i]),
                         int(p_lo[r_]), int(p_hi[r_]), rho, geo, xpos, acc, kernel, G, direct_points)
    values = {b: acc[i] for i, b in enumerate(BUCKETS)}
    return Applied(Rq, pts, values, counts)


def _apply_light(rows, a, npc, plo, npt, sc_all, tc, buckets, rho, geo, xpos, acc, kernel, chunk):
    if not len(rows):
        return
    per = npc * npt
    csum = np.cumsum(per)
    start = 0
    n = len(rows)
    npts = acc.shape[1]
    while start < n:
        stop = int(np.searchsorted(csum, (csum[start - 1] if start else 0) + chunk, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        o, off = _expand(per[sl])
        np_ = npt[sl][o]
        pi = a[sl][o] + off // np_
        xi = plo[sl][o] + off % np_
        r_ = rows[sl][o]
        s = np.ldexp(1.0, sc_all[r_])
        x = xpos[xi]
        val = rho[pi, tc[r_]] * (kernel.Psi(s * (x - geo.lo[pi])) - kernel.Psi(s * (x - geo.hi[pi])))
        flat = buckets[r_].astype(np.int64) * npts + xi
        acc_flat = acc.reshape(-1)
        np.add.at(acc_flat, flat, val)
        start = stop


def _apply_heavy(k, col, bucket, a, b, plo, phi_, rho, geo, xpos, acc, kernel, G, direct_points):
    s = 2.0 ** k
    x = xpos[plo:phi_]
    if len(x) > direct_points:
        d = 2.0 ** -(k + G)
        n0 = math.floor(x[0] / d) - 1
        n1 = math.ceil(x[-1] / d) + 1
        ev = np.arange(n0, n1 + 1) * d
    else:
        ev = x
    lo, hi = geo.lo[a:b], geo.hi[a:b]
    r = rho[a:b, col]
    binw = 2.0 ** -(k + G)
    if b - a > 4096 and float(np.max(hi - lo)) <= binw:
        m0 = r * (hi - lo)
        cI = (lo + hi) / 2
        bi = np.floor(cI / binw).astype(np.int64)
        ub, inv = np.unique(bi, return_inverse=True)
        cb = (ub + 0.5) * binw
        M0 = np.zeros(len(ub), dtype=complex)
        M1 = np.zeros(len(ub), dtype=complex)
        np.add.at(M0, inv, m0)
        np.add.at(M1, inv, m0 * (cI - cb[inv]))
        vals = np.zeros(len(ev), dtype=complex)
        for s0 in range(0, len(ub), 2048):
            u = ev[:, None] - cb[None, s0:s0 + 2048]
            vals += s * psi(s * u) @ M0[s0:s0 + 2048] - s * s * dpsi(s * u) @ M1[s0:s0 + 2048]
    else:
        vals = np.zeros(len(ev), dtype=complex)
        for s0 in range(0, b - a, 2048):
            sl = slice(s0, s0 + 2048)
            K = kernel.Psi(s * (ev[:, None] - lo[None, sl])) - kernel.Psi(s * (ev[:, None] - hi[None, sl]))
            vals += K @ r[sl]
    if len(ev) != len(x):
        vals = np.interp(x, ev, vals.real) + 1j * np.interp(x, ev, vals.imag)
    acc[bucket, plo:phi_] += vals


def decompose(cme, f, **kw) -> Applied:
    return apply_operator(cme, f, **kw)


def kkey_check(app: Applied) -> dict:
    m = app.max_abs("M")
    z = app.max_abs("R<nm")
    return {"max_R<nm": z, "max_M": m, "ok": z < 1e-10 * m if m > 0 else z == 0}


def major_set_probe(app: Applied, bucket: str = "M", trials: int = 32, removed: float = 1e-3, seed: int = 0) -> dict:
    """min over random G' with |G'| >= 1 - removed of Re int_{G'} T_bucket f (= int f Re T^*(chi_G'))."""
    rng = np.random.default_rng(seed)
    v = app.values[bucket].real * app.weight
    total = float(np.sum(v))
    cap = removed / app.weight  # number of points that may be dropped, counting off-support measure as zero
    worst = total
    n = len(v)
    for _ in range(trials):
        k = min(n, int(cap))
        drop = rng.choice(n, size=k, replace=False) if k else np.array([], dtype=int)
        worst = min(worst, total - float(np.sum(v[drop])))
    # adversarial member of the family: drop the largest positive contributions
    k = min(n, int(cap))
    adv = total - float(np.sum(np.sort(v)[::-1][:k])) if k else total
    return {"random_min": worst, "adversarial": adv, "full": total, "seed": seed}
