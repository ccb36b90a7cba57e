"""Compiled inner loops for the Monte Carlo twin."""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def poisson_arrivals(phases, u_arrival, cdf, packet_bits):
    """Bits per slot by Poisson inverse CDF of ``u_arrival``.

    Slot ``t`` of sample ``k`` uses row ``(phases[k] + t) % period`` of ``cdf``.
    """
    n, width = u_arrival.shape
    period, cmax = cdf.shape
    out = np.empty((n, width), dtype=np.float32)
    for k in range(n):
        j = phases[k]
        for t in range(width):
            u = u_arrival[k, t]
            c = 0
            while c < cmax - 1 and u > cdf[j, c]:
                c += 1
            out[k, t] = c * packet_bits
            j += 1
            if j == period:
                j = 0
    return out


@nb.njit(cache=True)
def rollout_backlog_sums(qe0, qr0, arrivals, u_se, edge_service_bits, ran_bits_per_se, se_min, se_span, warmup):
    """Per-sample sums of edge and RAN backlog over slots ``t >= warmup``."""
    n, width = arrivals.shape
    sum_e = np.zeros(n)
    sum_r = np.zeros(n)
    for k in range(n):
        qe = qe0
        qr = qr0
        acc_e = 0.0
        acc_r = 0.0
        for t in range(width):
            s = qe + arrivals[k, t]
            out = s if s < edge_service_bits else edge_service_bits
            qe = s - out
            rem = qr - ran_bits_per_se * (se_min + se_span * u_se[k, t])
            qr = (rem if rem > 0.0 else 0.0) + out
            if t >= warmup:
                acc_e += qe
                acc_r += qr
        sum_e[k] = acc_e
        sum_r[k] = acc_r
    return sum_e, sum_r
