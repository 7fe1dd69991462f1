"""Shared helpers: synthetic observations with exact rational arithmetic.

The double-difference layer is plain scalar arithmetic, so feeding it
Fraction timestamps lets cancellation identities be checked exactly, with
no floating-point slack at all.
"""

from fractions import Fraction

import numpy as np

from dtdoa.dataio import PairedObservation


def make_obs(pair_index, entries, channel=1, pivot_seq=None):
    return PairedObservation(
        pair_index=pair_index,
        channel=channel,
        pivot_seq=pivot_seq if pivot_seq is not None else pair_index,
        entries=entries,
        complete=True,
    )


def frac(rng: np.random.Generator, lo: float, hi: float, denom: int = 10**9) -> Fraction:
    return Fraction(int(rng.integers(int(lo * denom), int(hi * denom))), denom)


class ExactInstance:
    """Rational-arithmetic forward model of the timestamping chain.

    Reception times are arbitrary rationals (geometry does not matter for
    the cancellation identities); timestamps follow
    ``s = alpha + (1 + beta) * r`` exactly.
    """

    def __init__(self, rng: np.random.Generator, anchors, n_pairs: int, tick_rate: int = 22 * 10**6):
        self.anchors = list(anchors)
        self.tick_rate = tick_rate
        self.alphas = {a: frac(rng, -1.0, 1.0) for a in self.anchors}
        self.betas = {a: frac(rng, -50e-6, 50e-6, denom=10**12) for a in self.anchors}
        # Per packet pair: a blind departure, a pivot departure ~5 ms later,
        # and per-anchor propagation delays for each of the two packets.
        self.r_blind = {}
        self.r_pivot = {}
        for i in range(n_pairs):
            t_blind = Fraction(i, 100) + frac(rng, 0, 300e-6)
            t_pivot = t_blind + Fraction(5, 1000) + frac(rng, 0, 300e-6)
            for a in self.anchors:
                prop_b = frac(rng, 0, 1e-7, denom=10**12)
                prop_p = frac(rng, 0, 1e-7, denom=10**12)
                self.r_blind[(i, a)] = t_blind + prop_b
                self.r_pivot[(i, a)] = t_pivot + prop_p

    def timestamp(self, anchor, r: Fraction) -> Fraction:
        return (self.alphas[anchor] + (1 + self.betas[anchor]) * r) * self.tick_rate

    def observations(self, alphas=None, betas=None, shifts=None):
        alphas = alphas or self.alphas
        betas = betas or self.betas
        out = []
        n_pairs = len({i for (i, _) in self.r_blind})
        for i in range(n_pairs):
            entries = {}
            for a in self.anchors:
                shift = shifts[i] if shifts else (Fraction(0), Fraction(0))
                rb = self.r_blind[(i, a)] + shift[0]
                rp = self.r_pivot[(i, a)] + shift[1]
                sb = (alphas[a] + (1 + betas[a]) * rb) * self.tick_rate
                sp = (alphas[a] + (1 + betas[a]) * rp) * self.tick_rate
                entries[a] = (sb, sp)
            out.append(make_obs(i, entries))
        return out

    def exact_gamma(self, ref, k) -> Fraction:
        return (1 + self.betas[ref]) / (1 + self.betas[k])
