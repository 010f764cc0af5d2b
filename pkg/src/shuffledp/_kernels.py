"""Compiled inner loops: bit unpacking and the F2 kernel count for the Hadamard analyzer.

A message ``(a_1, ..., a_tau)`` lies in codeword ``j`` exactly when
``parity(j & (a_g - 1)) == 0`` for every ``g``, i.e. ``j`` is in the kernel of
the ``tau x log2(2B)`` bit matrix whose rows are ``a_g - 1``.  For ``j < B`` the
top bit of ``j`` is zero, so only the low ``log2 B`` bits of every row matter;
``j = B`` is the single top bit and is a member iff no row has that bit set.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _parity(x):
    x ^= x >> 32
    x ^= x >> 16
    x ^= x >> 8
    x ^= x >> 4
    x ^= x >> 2
    x ^= x >> 1
    return x & 1


@njit(cache=True)
def kernel_counts(sym0, B, raw):
    """Add, for every message, one count to ``raw[j-1]`` per codeword ``j in [1, B]`` containing it.

    ``sym0`` holds zero-based symbols ``a - 1`` with shape ``(m, tau)``.
    Returns the number of messages processed.
    """
    m, tau = sym0.shape
    nb = 0
    while (1 << nb) < B:
        nb += 1
    mask = B - 1
    basis = np.zeros(max(nb, 1), np.int64)
    # index of the highest set bit for every value below B
    top = np.zeros(B, np.int8)
    for x in range(2, B):
        top[x] = top[x >> 1] + 1
    kern = np.zeros(max(nb, 1), np.int64)
    for i in range(m):
        top_clear = True
        for g in range(tau):
            if sym0[i, g] & B:
                top_clear = False
                break
        if top_clear:
            raw[B - 1] += 1
        if nb == 0:
            continue
        for b in range(nb):
            basis[b] = 0
        rank = 0
        for g in range(tau):
            x = sym0[i, g] & mask
            while x != 0:
                b = top[x]
                if basis[b] == 0:
                    basis[b] = x
                    rank += 1
                    break
                x ^= basis[b]
            if rank == nb:
                break
        if rank == nb:
            continue
        # one kernel vector per free column, by back substitution over pivots in increasing order
        nf = 0
        for f in range(nb):
            if basis[f] != 0:
                continue
            v = np.int64(1) << f
            for q in range(f + 1, nb):
                r = basis[q]
                if r != 0 and _parity(r & v):
                    v |= np.int64(1) << q
            kern[nf] = v
            nf += 1
        # gray-code walk over all nonzero kernel elements
        v = np.int64(0)
        for c in range(1, 1 << nf):
            t = 0
            while not (c >> t) & 1:
                t += 1
            v ^= kern[t]
            raw[v - 1] += 1
    return m


@njit(cache=True)
def unpack_bits(words, nbits, size):
    """Cut ``size`` values of ``nbits`` bits from 64-bit words, low bits first."""
    per = 64 // nbits
    mask = (np.uint64(1) << np.uint64(nbits)) - np.uint64(1)
    out = np.empty(size, np.int64)
    for i in range(size):
        w = words[i // per]
        out[i] = np.int64((w >> np.uint64((i % per) * nbits)) & mask)
    return out
