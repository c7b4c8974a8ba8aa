"""Speed-conditioned Markov model of the wheel power demand.

Demand and speed samples are quantized onto uniform grids; transition
probabilities between successive demand bins, conditioned on the speed bin
at the transition origin, are the maximum-likelihood estimates
count / row-total. Rows that were never visited fall back to the uniform
distribution so downstream solvers never see absorbing phantom states.
"""

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform bin layout for power demand (M bins) and speed (K bins)."""

    power_bins: int = 20
    power_lo: float = -30e3  # W
    power_hi: float = 60e3   # W
    speed_bins: int = 10
    speed_lo: float = 0.0    # m/s
    speed_hi: float = 20.0   # m/s

    def __post_init__(self):
        if self.power_bins < 2 or self.speed_bins < 1:
            raise ValueError("need at least 2 power bins and 1 speed bin")
        if self.power_hi <= self.power_lo or self.speed_hi <= self.speed_lo:
            raise ValueError("bin ranges must be increasing")

    def power_index(self, p: float) -> int:
        w = (self.power_hi - self.power_lo) / self.power_bins
        i = int((p - self.power_lo) / w)
        return min(max(i, 0), self.power_bins - 1)

    def speed_index(self, v: float) -> int:
        w = (self.speed_hi - self.speed_lo) / self.speed_bins
        i = int((v - self.speed_lo) / w)
        return min(max(i, 0), self.speed_bins - 1)

    def power_centers(self) -> np.ndarray:
        w = (self.power_hi - self.power_lo) / self.power_bins
        return self.power_lo + w * (np.arange(self.power_bins) + 0.5)

    def speed_centers(self) -> np.ndarray:
        w = (self.speed_hi - self.speed_lo) / self.speed_bins
        return self.speed_lo + w * (np.arange(self.speed_bins) + 0.5)


@dataclass
class TransitionModel:
    """Row-stochastic demand-transition tensor P[k][n][m] plus raw counts."""

    probs: np.ndarray  # (K, M, M)
    counts: np.ndarray | None
    quantizer: QuantizerSpec
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k, n, m = self.probs.shape
        if n != m or k != self.quantizer.speed_bins or m != self.quantizer.power_bins:
            raise ValueError("probability tensor shape does not match quantizer")
        rows = self.probs.sum(axis=2)
        if not np.all(np.abs(rows - 1.0) <= ROW_SUM_TOL):
            raise ValueError("every transition row must sum to 1")
        if self.probs.min() < 0.0 or self.probs.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        self.cdf = np.cumsum(self.probs, axis=2)


def quantize(p_dem: float, v: float, spec: QuantizerSpec):
    """Bin indices (power, speed) with clamping at the range edges."""
    if not (np.isfinite(p_dem) and np.isfinite(v)):
        raise ValueError("non-finite sample")
    return spec.power_index(p_dem), spec.speed_index(v)


def estimate_tpm(trace, spec: QuantizerSpec) -> TransitionModel:
    """Maximum-likelihood transition model from a (p_dem, v) sample sequence.

    Transitions p_t -> p_{t+1} are filed under the speed bin of v_t (the
    origin step). Never-visited rows become uniform.
    """
    samples = list(trace)
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to estimate transitions")
    m = spec.power_bins
    counts = np.zeros((spec.speed_bins, m, m), dtype=np.int64)
    p_prev, v_prev = quantize(samples[0][0], samples[0][1], spec)
    for p_dem, v in samples[1:]:
        p_idx, v_idx = quantize(p_dem, v, spec)
        counts[v_prev, p_prev, p_idx] += 1
        p_prev, v_prev = p_idx, v_idx
    totals = counts.sum(axis=2, keepdims=True)
    probs = np.where(totals > 0, counts / np.maximum(totals, 1), 1.0 / m)
    return TransitionModel(probs=probs, counts=counts, quantizer=spec)


def sample_next(model: TransitionModel, n: int, k: int, rng: np.random.Generator) -> int:
    """Draw the next demand bin from row (speed k, power n)."""
    row_cdf = model.cdf[k, n]
    idx = int(np.searchsorted(row_cdf, rng.random(), side="right"))
    return min(idx, model.quantizer.power_bins - 1)  # guard float roundoff at 1.0


def save_tpm(model: TransitionModel, path) -> None:
    """Write the model as a dense text file.

    Layout: one header line "M K power_lo power_hi speed_lo speed_hi",
    then K*M lines (speed-major) of M whitespace-separated probabilities.
    """
    q = model.quantizer
    with open(path, "w") as fh:
        fh.write(
            f"{q.power_bins} {q.speed_bins} {q.power_lo!r} {q.power_hi!r} "
            f"{q.speed_lo!r} {q.speed_hi!r}\n"
        )
        for k in range(q.speed_bins):
            for n in range(q.power_bins):
                fh.write(" ".join(repr(float(p)) for p in model.probs[k, n]) + "\n")


def load_tpm(path) -> TransitionModel:
    """Read a model written by ``save_tpm`` (counts are not persisted)."""
    with open(path) as fh:
        head = fh.readline().split()
        m, k = int(head[0]), int(head[1])
        spec = QuantizerSpec(
            power_bins=m, power_lo=float(head[2]), power_hi=float(head[3]),
            speed_bins=k, speed_lo=float(head[4]), speed_hi=float(head[5]),
        )
        probs = np.empty((k, m, m))
        for ki in range(k):
            for ni in range(m):
                probs[ki, ni] = [float(x) for x in fh.readline().split()]
    return TransitionModel(probs=probs, counts=None, quantizer=spec)
