"""Samplers for symmetric random matrices with banded entry correlations.

The primary sampler realizes the covariance kernel by a moving-average
filter: each upper-triangle entry is a tap-weighted sum of an iid driver
field on an extended index lattice, plus an independent floor component.
A small-dimension exact Gaussian sampler (factorizing the full entry
covariance) validates the filter route, and the Ornstein-Uhlenbeck step
evolves a sample toward an independent copy while preserving the
correlation structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._rng import TAG_EXACT, TAG_FIELD, TAG_FLOOR, TAG_GOE, TAG_OU, child_seed, stream
from .errors import CapacityError, InputError, ModelError
from .profiles import (COVARIANCE_CAP, CorrelationProfile, FilterSpec, KernelView,
                       _node_weights, _piece_index, build_covariance, pair_index)


@dataclass
class MatrixSample:
    """A symmetric matrix draw; time_t tracks the evolution clock."""

    N: int
    entries: np.ndarray
    seed: int
    time_t: float = 0.0


def _driver_draw(rng: np.random.Generator, shape, driver: str, tau, N: int):
    """Centered unit-variance iid field of the requested driver law."""
    if driver == "gaussian":
        return rng.standard_normal(shape)
    if driver == "rademacher":
        return rng.integers(0, 2, size=shape) * 2.0 - 1.0
    q = float(N) ** float(tau)
    p = q / (2.0 * N)
    mag = np.sqrt(N / q)
    u = rng.random(shape)
    return np.where(u < p, mag, np.where(u < 2.0 * p, -mag, 0.0))


def _tap_component(filt: FilterSpec, th, ph, ai: int, bi: int):
    """Tap coefficient c(theta, phi, a, b) for one (a, b), vectorized."""
    C = filt.coefficients[:, :, ai, bi]
    if filt.kind == "constant":
        return C[_piece_index(filt.breakpoints, th),
                 _piece_index(filt.breakpoints, ph)]
    nodes = np.concatenate([[0.0], np.asarray(filt.breakpoints), [1.0]])
    ci, s = _node_weights(nodes, th)
    cj, t = _node_weights(nodes, ph)
    return ((1 - s) * ((1 - t) * C[ci, cj] + t * C[ci, cj + 1])
            + s * ((1 - t) * C[ci + 1, cj] + t * C[ci + 1, cj + 1]))


def _is_flat(filt: FilterSpec) -> bool:
    return filt.kind == "constant" and len(filt.breakpoints) == 0


def sample(filt: FilterSpec, N: int, seed: int) -> MatrixSample:
    """Draw a symmetric matrix with the filter-induced entry covariance.

    Upper-triangle entries combine the tap-weighted driver field on the
    extended lattice with an independent floor field; the lower triangle
    mirrors exactly.  Deterministic in (filt, N, seed).
    """
    N = int(N)
    r = filt.radius_r
    if N < 2 * r + 2:
        raise InputError(f"N must be at least 2r + 2 = {2 * r + 2}, got {N}")
    lam = filt.iid_floor
    ext = N + 2 * r
    w = _driver_draw(stream(seed, TAG_FIELD), (ext, ext), filt.driver, filt.tau, N)
    Xu = np.zeros((N, N))
    flat = _is_flat(filt)
    th = np.arange(1, N + 1) / N
    for ai in range(2 * r + 1):
        for bi in range(2 * r + 1):
            if flat:
                c = filt.coefficients[0, 0, ai, bi]
                if c == 0.0:
                    continue
                Xu += c * w[ai:ai + N, bi:bi + N]
            else:
                c = _tap_component(filt, th[:, None], th[None, :], ai, bi)
                Xu += c * w[ai:ai + N, bi:bi + N]
    if lam < 1.0:
        Xu *= np.sqrt(1.0 - lam)
    else:
        Xu[:] = 0.0
    if lam > 0.0:
        v = _driver_draw(stream(seed, TAG_FLOOR), (N, N), filt.driver, filt.tau, N)
        Xu += np.sqrt(lam) * v
    X = np.triu(Xu) + np.triu(Xu, 1).T
    return MatrixSample(N=N, entries=X, seed=int(seed), time_t=0.0)


# ---------------------------------------------------------------------------
# exact Gaussian sampler (small N)

def _band_cholesky(profile: CorrelationProfile, N: int):
    """Lower banded Cholesky factor of the entry covariance, with a tiny lift."""
    cov = build_covariance(KernelView(profile, N)).tocoo()
    D = N * (N + 1) // 2
    rows, cols, vals = cov.row, cov.col, cov.data
    keep = rows >= cols
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    bw = int(np.max(rows - cols)) if rows.size else 0
    ab = np.zeros((bw + 1, D))
    ab[rows - cols, cols] = vals
    ab[0, :] += 1e-10
    try:
        L = scipy.linalg.cholesky_banded(ab, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise ModelError(
            "entry covariance is not positive semidefinite within 1e-10") from err
    return L, bw, D


def _unpack_upper(y: np.ndarray, N: int) -> np.ndarray:
    iu, ju = np.triu_indices(N)
    X = np.zeros((N, N))
    X[iu, ju] = y[pair_index(iu + 1, ju + 1)]
    X[ju, iu] = X[iu, ju]
    return X


def sample_gaussian_exact(profile: CorrelationProfile, N: int, seed: int) -> MatrixSample:
    """Jointly Gaussian draw with the exact entry covariance (small N only).

    The covariance over upper-triangle positions is banded in the pair
    ordering, so a banded Cholesky factorization is both the sparse
    factorization and the fill-avoiding ordering.
    """
    N = int(N)
    if N > COVARIANCE_CAP:
        raise CapacityError(
            f"exact sampler capped at N = {COVARIANCE_CAP}, got {N}")
    L, bw, D = _band_cholesky(profile, N)
    om = stream(seed, TAG_EXACT).standard_normal(D)
    y = np.zeros(D)
    for o in range(bw + 1):
        y[o:] += L[o, :D - o] * om[:D - o]
    return MatrixSample(N=N, entries=_unpack_upper(y, N), seed=int(seed), time_t=0.0)


def exact_pair_values(profile: CorrelationProfile, N: int, entries, n_samples: int,
                      seed: int, batch: int = 4096) -> np.ndarray:
    """Values of selected entries across exact Gaussian draws, (n, entries).

    Pulls only the rows of the Cholesky factor the entries touch, so large
    Monte-Carlo runs stay cheap.
    """
    L, bw, D = _band_cholesky(profile, N)
    pos = np.array([pair_index(min(i, j), max(i, j)) for i, j in
                    ((int(i), int(j)) for i, j in entries)])
    out = np.empty((int(n_samples), len(pos)))
    done = 0
    bidx = 0
    while done < n_samples:
        B = min(batch, int(n_samples) - done)
        om = stream(seed, TAG_EXACT, bidx).standard_normal((D, B))
        for e, p in enumerate(pos):
            o_max = min(bw, p)
            off = np.arange(o_max + 1)
            out[done:done + B, e] = L[off, p - off] @ om[p - off, :]
        done += B
        bidx += 1
    return out


# ---------------------------------------------------------------------------
# evolution and references

def ou_evolve(X0: MatrixSample, t: float, filt: FilterSpec, seed: int) -> MatrixSample:
    """One exact transition of the entrywise mean-reverting flow.

    X_t = e^{-t/2} X_0 + sqrt(1 - e^{-t}) G with G a fresh filter sample;
    the increment is Gaussian, so the filter's driver must be gaussian.
    """
    if filt.driver != "gaussian":
        raise InputError("evolution increments require a gaussian driver")
    t = float(t)
    if t < 0.0:
        raise InputError("t must be nonnegative")
    if t == 0.0:
        return MatrixSample(N=X0.N, entries=X0.entries.copy(),
                            seed=X0.seed, time_t=X0.time_t)
    g = sample(filt, X0.N, child_seed(seed, TAG_OU))
    X = np.exp(-t / 2.0) * X0.entries + np.sqrt(1.0 - np.exp(-t)) * g.entries
    return MatrixSample(N=X0.N, entries=X, seed=int(seed), time_t=X0.time_t + t)


def goe_sample(N: int, seed: int) -> MatrixSample:
    """Reference Gaussian orthogonal draw: (A + A^T)/sqrt(2)."""
    N = int(N)
    A = stream(seed, TAG_GOE).standard_normal((N, N))
    return MatrixSample(N=N, entries=(A + A.T) / np.sqrt(2.0), seed=int(seed),
                        time_t=0.0)


# ---------------------------------------------------------------------------
# Monte-Carlo entry tracking

def _entry_values(filt: FilterSpec, N: int, W, V, entries, th) -> np.ndarray:
    """Tracked entry values from batched driver/floor fields; (B, n_entries)."""
    r = filt.radius_r
    lam = filt.iid_floor
    B = W.shape[0]
    out = np.zeros((B, len(entries)))
    flat = _is_flat(filt)
    for e, (i, j) in enumerate(entries):
        acc = np.zeros(B)
        for ai in range(2 * r + 1):
            for bi in range(2 * r + 1):
                if flat:
                    c = filt.coefficients[0, 0, ai, bi]
                else:
                    c = float(_tap_component(filt, i / N, j / N, ai, bi))
                if c == 0.0:
                    continue
                acc += c * W[:, i - 1 + ai, j - 1 + bi]
        acc *= np.sqrt(1.0 - lam)
        if lam > 0.0:
            acc += np.sqrt(lam) * V[:, e]
        out[:, e] = acc
    return out


def _canonical_entries(entries, N):
    canon = []
    for i, j in entries:
        i, j = int(i), int(j)
        if not (1 <= i <= N and 1 <= j <= N):
            raise InputError(f"entry ({i}, {j}) outside 1..{N}")
        canon.append((min(i, j), max(i, j)))
    return canon


def entry_samples(filt: FilterSpec, N: int, entries, n_samples: int, seed: int
                  ) -> np.ndarray:
    """Values of selected entries across independent samples, (n, entries).

    Batches whole driver fields; entries are read off without assembling
    full matrices.
    """
    N = int(N)
    r = filt.radius_r
    if N < 2 * r + 2:
        raise InputError(f"N must be at least 2r + 2 = {2 * r + 2}, got {N}")
    entries = _canonical_entries(entries, N)
    ext = N + 2 * r
    B = max(1, int(4_000_000 // (ext * ext)))
    th = np.arange(1, N + 1) / N
    out = np.empty((int(n_samples), len(entries)))
    done = 0
    bidx = 0
    while done < n_samples:
        nb = min(B, int(n_samples) - done)
        W = _driver_draw(stream(seed, TAG_FIELD, bidx), (nb, ext, ext),
                         filt.driver, filt.tau, N)
        V = _driver_draw(stream(seed, TAG_FLOOR, bidx), (nb, len(entries)),
                         filt.driver, filt.tau, N) if filt.iid_floor > 0 else None
        out[done:done + nb] = _entry_values(filt, N, W, V, entries, th)
        done += nb
        bidx += 1
    return out


def ou_entry_paths(filt: FilterSpec, N: int, t: float, entries, n_paths: int,
                   seed: int):
    """Joint (start, evolved) values of selected entries over many paths.

    Returns (x0, xt), each (n_paths, n_entries).  The pair law matches
    sampling a matrix and evolving it; only the tracked entries are built.
    """
    if filt.driver != "gaussian":
        raise InputError("evolution increments require a gaussian driver")
    N = int(N)
    r = filt.radius_r
    entries = _canonical_entries(entries, N)
    ext = N + 2 * r
    decay = np.exp(-float(t) / 2.0)
    mix = np.sqrt(1.0 - np.exp(-float(t)))
    B = max(1, int(2_000_000 // (ext * ext)))
    th = np.arange(1, N + 1) / N
    x0 = np.empty((int(n_paths), len(entries)))
    xt = np.empty((int(n_paths), len(entries)))
    done = 0
    bidx = 0
    seed_g = child_seed(seed, TAG_OU)
    while done < n_paths:
        nb = min(B, int(n_paths) - done)
        W0 = _driver_draw(stream(seed, TAG_FIELD, bidx), (nb, ext, ext),
                          "gaussian", None, N)
        V0 = (_driver_draw(stream(seed, TAG_FLOOR, bidx), (nb, len(entries)),
                           "gaussian", None, N)
              if filt.iid_floor > 0 else None)
        a0 = _entry_values(filt, N, W0, V0, entries, th)
        Wg = _driver_draw(stream(seed_g, TAG_FIELD, bidx), (nb, ext, ext),
                          "gaussian", None, N)
        Vg = (_driver_draw(stream(seed_g, TAG_FLOOR, bidx), (nb, len(entries)),
                           "gaussian", None, N)
              if filt.iid_floor > 0 else None)
        g = _entry_values(filt, N, Wg, Vg, entries, th)
        x0[done:done + nb] = a0
        xt[done:done + nb] = decay * a0 + mix * g
        done += nb
        bidx += 1
    return x0, xt


def empirical_covariance(filt: FilterSpec, N: int, pairs, n_samples: int,
                         seed: int):
    """Sample covariance of entry pairs across independent draws.

    pairs is a list of ((i1, j1), (i2, j2)) items; returns (cov, se) arrays
    with the unbiased covariance and its empirical standard error.
    """
    n_samples = int(n_samples)
    if n_samples < 100:
        raise InputError("n_samples must be at least 100")
    uniq = []
    index = {}
    for (e1, e2) in pairs:
        for e in (tuple(e1), tuple(e2)):
            key = (min(int(e[0]), int(e[1])), max(int(e[0]), int(e[1])))
            if key not in index:
                index[key] = len(uniq)
                uniq.append(key)
    vals = entry_samples(filt, N, uniq, n_samples, seed)
    cov = np.empty(len(pairs))
    se = np.empty(len(pairs))
    for p, (e1, e2) in enumerate(pairs):
        k1 = (min(int(e1[0]), int(e1[1])), max(int(e1[0]), int(e1[1])))
        k2 = (min(int(e2[0]), int(e2[1])), max(int(e2[0]), int(e2[1])))
        a = vals[:, index[k1]]
        b = vals[:, index[k2]]
        prod = (a - a.mean()) * (b - b.mean())
        cov[p] = prod.sum() / (n_samples - 1)
        se[p] = prod.std(ddof=1) / np.sqrt(n_samples)
    return cov, se
