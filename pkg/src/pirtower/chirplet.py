"""Chirplet matching pursuit.

An atom is a Gaussian-windowed linear chirp

    x(n) = (2 pi d^2)^(-1/4) exp(-((n - m) / 2d)^2) exp(j w (n - m) + j (c/2) (n - m)^2)

which has unit energy on an unbounded grid.  ``decompose`` greedily picks the
atom that best matches the residual: first over a coarse dictionary, then by
local refinement of (m, w, c, d), and subtracts its projection.

The coarse search exploits that, for fixed (m, c, d), the correlation over all
frequencies ``w = 2 pi b / 128`` is a 128-point DFT of the windowed,
de-chirped residual folded modulo 128.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Tuple

import numba
import numpy as np
import scipy.fft

M_STEP = 8
N_FREQ_BINS = 128  # w grid is 2 pi b / 128 for b = 0..64, i.e. k pi / 64
CHIRP_GRID = np.array([0.0] + [s * k * 2.0 ** -18 for k in (1, 2, 4, 8, 16, 32) for s in (1, -1)])
DURATION_GRID = np.array([8.0, 16.0, 32.0, 64.0, 128.0, 256.0])
MAX_CHIRP = 0.01  # rad / sample^2, refinement bound
MIN_DURATION = 2.0
WINDOW_WIDTHS = 8.0  # atoms are evaluated over |n - m| <= 8 d during refinement


@dataclass(frozen=True)
class Chirplet:
    a: float
    phi: float
    m: float
    omega: float
    c: float
    d: float
    step_correlation: float = 0.0  # |<r, x>| / (|r| |x|) when the atom was picked

    @property
    def params(self) -> Tuple[float, float, float, float, float]:
        """Feature tuple (a, m, omega, c, d)."""
        return (self.a, self.m, self.omega, self.c, self.d)


@dataclass
class Decomposition:
    chirplets: List[Chirplet]
    residual_energy: float  # fraction of the input energy left after all atoms
    channel: str = ""
    residual_history: List[float] = field(default_factory=list)  # after 0, 1, ..., q atoms

    def to_json(self) -> str:
        return json.dumps([{"a": c.a, "phi": c.phi, "m": c.m, "omega": c.omega, "c": c.c, "d": c.d,
                            "step_correlation": c.step_correlation} for c in self.chirplets], indent=1)


# --------------------------------------------------------------------------- basics


def analytic_signal(s) -> np.ndarray:
    """One-sided-spectrum analytic signal; the real part is ``s`` exactly.

    Odd-length input is padded with one trailing zero for the transform and
    the padding is dropped from the result.
    """
    s = np.asarray(s, dtype=float)
    n = len(s)
    if n < 8:
        raise ValueError("analytic_signal needs at least 8 samples")
    x = np.concatenate([s, [0.0]]) if n % 2 else s
    size = len(x)
    spec = np.fft.fft(x)
    h = np.zeros(size)
    h[0] = 1.0
    h[size // 2] = 1.0
    h[1:size // 2] = 2.0
    out = np.fft.ifft(spec * h)[:n]
    out.real = s
    return out


def atom(m: float, omega: float, c: float, d: float, n) -> np.ndarray:
    """Unit-energy chirplet evaluated at sample indices ``n``."""
    if not d > 0:
        raise ValueError("atom duration d must be positive")
    k = np.asarray(n, dtype=float) - m
    return (2 * np.pi * d * d) ** -0.25 * np.exp(-(k / (2 * d)) ** 2) * np.exp(1j * (omega * k + 0.5 * c * k * k))


def reconstruct(dec: Decomposition, n_samples: int) -> np.ndarray:
    n = np.arange(n_samples)
    out = np.zeros(n_samples, dtype=complex)
    for ch in dec.chirplets:
        out += ch.a * np.exp(1j * ch.phi) * atom(ch.m, ch.omega, ch.c, ch.d, n)
    return out


# --------------------------------------------------------------------------- coarse stage


@numba.njit(cache=True, fastmath=True, boundscheck=False)
def _fold(rr, ri, kr, ki, half, ms, outr, outi):
    """Accumulate r(m + k) * kernel_c(k) into ``out[m, c, k mod nb]``."""
    n = rr.shape[0]
    nb = outr.shape[2]
    nc = kr.shape[0]
    for im in range(ms.shape[0]):
        m = ms[im]
        lo = max(-half, -m)
        hi = min(half, n - 1 - m)
        k = lo
        j = lo % nb
        while k <= hi:
            seg = min(nb - j, hi - k + 1)
            a = rr[m + k: m + k + seg]
            b = ri[m + k: m + k + seg]
            for ic in range(nc):
                c = kr[ic, k + half: k + half + seg]
                d = ki[ic, k + half: k + half + seg]
                o1 = outr[im, ic, j: j + seg]
                o2 = outi[im, ic, j: j + seg]
                for t in range(seg):
                    o1[t] += a[t] * c[t] - b[t] * d[t]
                    o2[t] += a[t] * d[t] + b[t] * c[t]
            k += seg
            j = 0


@numba.njit(cache=True)
def _best_bin(spec, energy, n_bins):
    """Largest |spec|^2 / energy over (m, c, bins 0..n_bins-1); first hit wins ties."""
    best = -1.0
    bm = 0
    bc = 0
    bb = 0
    for im in range(spec.shape[0]):
        inv = 1.0 / energy[im]
        for ib in range(n_bins):
            for ic in range(spec.shape[1]):
                z = spec[im, ic, ib]
                v = (z.real * z.real + z.imag * z.imag) * inv
                if v > best:
                    best = v
                    bm = im
                    bc = ic
                    bb = ib
    return best, bm, bb, bc


class _CoarseDictionary:
    """Pre-computed windows and truncated-atom energies for one signal length."""

    def __init__(self, n_samples: int):
        self.n = n_samples
        self.ms = np.arange(0, n_samples, M_STEP, dtype=np.int64)
        self.omegas = 2 * np.pi * np.arange(N_FREQ_BINS // 2 + 1) / N_FREQ_BINS
        self.kernels = []
        idx = np.arange(n_samples)
        for d in DURATION_GRID:
            half = int(min(np.ceil(5 * d), n_samples))
            k = np.arange(-half, half + 1)
            g = (2 * np.pi * d * d) ** -0.25 * np.exp(-(k / (2 * d)) ** 2)
            # correlation multiplies by conj(x): de-chirp with exp(-j c k^2 / 2)
            ker = g[None, :] * np.exp(-0.5j * CHIRP_GRID[:, None] * k[None, :] ** 2)
            energy = ((2 * np.pi * d * d) ** -0.5
                      * np.exp(-0.5 * ((idx[None, :] - self.ms[:, None]) / d) ** 2).sum(axis=1))
            self.kernels.append((half, np.ascontiguousarray(ker.real, dtype=np.float32),
                                 np.ascontiguousarray(ker.imag, dtype=np.float32), energy))

    def search(self, r: np.ndarray) -> Tuple[float, float, float, float]:
        """Best (m, omega, c, d) on the grid by normalized squared correlation.

        Ties go to the smallest m, then the smallest omega.
        """
        rr = np.ascontiguousarray(r.real, dtype=np.float32)
        ri = np.ascontiguousarray(r.imag, dtype=np.float32)
        nm, nb, nc = len(self.ms), N_FREQ_BINS, len(CHIRP_GRID)
        best = (-1.0, 0, 0, 0, 0)
        for di, (half, kr, ki, energy) in enumerate(self.kernels):
            outr = np.zeros((nm, nc, nb), dtype=np.float32)
            outi = np.zeros((nm, nc, nb), dtype=np.float32)
            _fold(rr, ri, kr, ki, half, self.ms, outr, outi)
            spec = scipy.fft.fft(outr + 1j * outi, axis=-1, overwrite_x=True)
            score, im, ib, ic = _best_bin(spec, energy, nb // 2 + 1)
            if score > best[0] or (score == best[0] and (im, ib) < (best[1], best[2])):
                best = (score, im, ib, ic, di)
        _, im, ib, ic, di = best
        return float(self.ms[im]), float(self.omegas[ib]), float(CHIRP_GRID[ic]), float(DURATION_GRID[di])


_DICT_CACHE = {}


def _dictionary(n: int) -> _CoarseDictionary:
    if n not in _DICT_CACHE:
        _DICT_CACHE[n] = _CoarseDictionary(n)
    return _DICT_CACHE[n]


# --------------------------------------------------------------------------- refinement


@numba.njit(cache=True)
def _match(rr, ri, m, w, c, d):
    """Normalized squared correlation |<r, x>|^2 / |x|^2 over the signal support.

    The atom is advanced sample to sample by complex recurrences instead of
    evaluating exp/cos/sin at every sample.
    """
    n = rr.shape[0]
    reach = WINDOW_WIDTHS * d + 1.0
    lo = max(0, int(np.floor(m - reach)))
    hi = min(n - 1, int(np.ceil(m + reach)))
    if hi < lo:
        return 0.0
    k = lo - m
    inv4 = 1.0 / (4.0 * d * d)
    g = (2.0 * np.pi * d * d) ** -0.25 * np.exp(-k * k * inv4)
    ph = w * k + 0.5 * c * k * k
    zr = g * np.cos(ph)
    zi = g * np.sin(ph)
    ga = np.exp(-(2.0 * k + 1.0) * inv4)
    pa = w + 0.5 * c * (2.0 * k + 1.0)
    ar = ga * np.cos(pa)
    ai = ga * np.sin(pa)
    gb = np.exp(-2.0 * inv4)
    br = gb * np.cos(c)
    bi = gb * np.sin(c)
    acc_r = 0.0
    acc_i = 0.0
    energy = 0.0
    for i in range(lo, hi + 1):
        acc_r += rr[i] * zr + ri[i] * zi
        acc_i += ri[i] * zr - rr[i] * zi
        energy += zr * zr + zi * zi
        t = zr * ar - zi * ai
        zi = zr * ai + zi * ar
        zr = t
        t = ar * br - ai * bi
        ai = ar * bi + ai * br
        ar = t
    if energy <= 0.0:
        return 0.0
    return (acc_r * acc_r + acc_i * acc_i) / energy


@numba.njit(cache=True)
def _clamp(p, n):
    q = p.copy()
    q[0] = min(max(q[0], 0.0), n - 1.0)
    q[1] = min(max(q[1], 0.0), np.pi)
    q[2] = min(max(q[2], -MAX_CHIRP), MAX_CHIRP)
    q[3] = min(max(q[3], MIN_DURATION), float(n))
    return q


@numba.njit(cache=True)
def _eval(rr, ri, p):
    q = _clamp(p, rr.shape[0])
    return _match(rr, ri, q[0], q[1], q[2], q[3])


@numba.njit(cache=True)
def _line_point(p, i, x):
    q = p.copy()
    if i == 3:
        q[3] = p[3] * np.exp(x)
    elif i == 4:
        # slide along the chirp's time-frequency line: same instantaneous frequency at the new centre
        q[0] = p[0] + x
        q[1] = p[1] + p[2] * x
    else:
        q[i] = x
    return q


@numba.njit(cache=True)
def _golden(rr, ri, p, i, lo, hi, tol):
    """Golden-section maximization of the objective along parameter ``i``."""
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a = lo
    b = hi
    x1 = b - gr * (b - a)
    x2 = a + gr * (b - a)
    f1 = _eval(rr, ri, _line_point(p, i, x1))
    f2 = _eval(rr, ri, _line_point(p, i, x2))
    while b - a > tol:
        if f1 >= f2:
            b = x2
            x2 = x1
            f2 = f1
            x1 = b - gr * (b - a)
            f1 = _eval(rr, ri, _line_point(p, i, x1))
        else:
            a = x1
            x1 = x2
            f1 = f2
            x2 = a + gr * (b - a)
            f2 = _eval(rr, ri, _line_point(p, i, x2))
    if f1 >= f2:
        return _line_point(p, i, x1), f1
    return _line_point(p, i, x2), f2


@numba.njit(cache=True)
def _coordinate_ascent(rr, ri, p0, max_iter, rel_tol):
    n = rr.shape[0]
    best = _clamp(p0, n)
    f_best = _eval(rr, ri, best)
    for _ in range(max_iter):
        f_sweep = f_best
        d = best[3]
        spans = np.array([max(8.0, 0.5 * d), max(np.pi / 64.0, 0.5 / d),
                          max(2.0 ** -18, 0.5 / (d * d)), 0.35, max(8.0, d)])
        for i in range(5):
            if i >= 3:
                lo, hi = -spans[i], spans[i]
            else:
                lo, hi = best[i] - spans[i], best[i] + spans[i]
            cand, fc = _golden(rr, ri, best, i, lo, hi, spans[i] * 1e-4)
            if fc > f_best:
                best = _clamp(cand, n)
                f_best = fc
        if f_best - f_sweep <= rel_tol * max(f_sweep, 1e-300):
            break
    return best, f_best


@numba.njit(cache=True)
def _scaled_eval(rr, ri, origin, z):
    d0 = origin[3]
    p = np.empty(4)
    p[0] = origin[0] + z[0] * d0
    p[1] = origin[1] + z[1] / d0
    p[2] = origin[2] + z[2] / (d0 * d0)
    p[3] = d0 * np.exp(z[3])
    return -_eval(rr, ri, p), p


@numba.njit(cache=True)
def _nelder_mead(rr, ri, origin, step, xatol, fatol, max_iter):
    """Minimize the negative objective in duration-scaled coordinates around ``origin``."""
    dim = 4
    sim = np.zeros((dim + 1, dim))
    for i in range(dim):
        sim[i + 1, i] = step
    fs = np.empty(dim + 1)
    for i in range(dim + 1):
        fs[i] = _scaled_eval(rr, ri, origin, sim[i])[0]
    for _ in range(max_iter):
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        size = 0.0
        spread = 0.0
        for i in range(1, dim + 1):
            spread = max(spread, abs(fs[i] - fs[0]))
            for j in range(dim):
                size = max(size, abs(sim[i, j] - sim[0, j]))
        if size <= xatol and spread <= fatol:
            break
        centroid = sim[:dim].sum(axis=0) / dim
        xr = centroid + (centroid - sim[dim])
        fr = _scaled_eval(rr, ri, origin, xr)[0]
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[dim])
            fe = _scaled_eval(rr, ri, origin, xe)[0]
            if fe < fr:
                sim[dim] = xe
                fs[dim] = fe
            else:
                sim[dim] = xr
                fs[dim] = fr
        elif fr < fs[dim - 1]:
            sim[dim] = xr
            fs[dim] = fr
        else:
            if fr < fs[dim]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (sim[dim] - centroid)
            fc = _scaled_eval(rr, ri, origin, xc)[0]
            if fc < min(fr, fs[dim]):
                sim[dim] = xc
                fs[dim] = fc
            else:
                for i in range(1, dim + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = _scaled_eval(rr, ri, origin, sim[i])[0]
    i_best = np.argmin(fs)
    return _scaled_eval(rr, ri, origin, sim[i_best])


def refine(r: np.ndarray, start: Tuple[float, float, float, float], max_iter: int = 50,
           rel_tol: float = 1e-6, polish: bool = True) -> Tuple[Tuple[float, float, float, float], float]:
    """Local maximization of the normalized correlation around a starting atom.

    Coordinate ascent with golden-section line searches over (m, omega, c, ln d)
    and along the chirp's time-frequency line (m and omega moved together),
    stopped when a sweep gains less than ``rel_tol`` relatively, then a
    Nelder-Mead polish in coordinates scaled by the atom duration.  A move is
    kept only if it improves the objective.
    """
    rr = np.ascontiguousarray(np.real(r), dtype=float)
    ri = np.ascontiguousarray(np.imag(r), dtype=float)
    best, f_best = _coordinate_ascent(rr, ri, np.array(start, dtype=float), max_iter, rel_tol)
    if polish:
        neg, cand = _nelder_mead(rr, ri, best, 0.05, 1e-10, 1e-15 * max(f_best, 1e-300), 4000)
        cand = _clamp(cand, len(rr))
        if -neg > f_best:
            best, f_best = cand, -neg
    return tuple(float(v) for v in best), float(f_best)


# --------------------------------------------------------------------------- pursuit


def decompose(s_a, q: int = 3, channel: str = "", refine_atoms: bool = True) -> Decomposition:
    """Greedy chirplet pursuit of a complex (analytic) signal."""
    r = np.array(s_a, dtype=complex)
    n = len(r)
    if q < 1:
        raise ValueError("q must be at least 1")
    if q > n / 4:
        raise ValueError(f"q={q} exceeds a quarter of the signal length {n}")
    e0 = float(np.vdot(r, r).real)
    if not e0 > 0:
        raise ValueError("empty signal")
    dictionary = _dictionary(n)
    idx = np.arange(n)
    chirplets: List[Chirplet] = []
    history = [1.0]
    for _ in range(q):
        e_r = float(np.vdot(r, r).real)
        if e_r <= 0:
            break
        start = dictionary.search(r)
        if refine_atoms:
            (m, w, c, d), _ = refine(r, start)
        else:
            m, w, c, d = start
        x = atom(m, w, c, d, idx)
        ex = float(np.vdot(x, x).real)
        coef = np.vdot(x, r) / ex
        corr = abs(coef) * np.sqrt(ex) / np.sqrt(e_r)
        chirplets.append(Chirplet(float(abs(coef)), float(np.angle(coef)), float(m), float(w), float(c),
                                  float(d), float(corr)))
        r = r - coef * x
        history.append(min(1.0, max(0.0, float(np.vdot(r, r).real) / e0)))
    return Decomposition(chirplets, history[-1], channel, history)


def reconstruction_snr_db(signal, dec: Decomposition) -> float:
    s = np.asarray(signal)
    err = s - reconstruct(dec, len(s))
    e_err = float(np.vdot(err, err).real)
    e_sig = float(np.vdot(s, s).real)
    if e_err <= 0:
        return np.inf
    return 10 * np.log10(e_sig / e_err)
