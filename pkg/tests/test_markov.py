import numpy as np
import pytest

from greenwave.markov import (
    QuantizerSpec,
    TransitionModel,
    estimate_tpm,
    load_tpm,
    quantize,
    sample_next,
    save_tpm,
)


@pytest.fixture
def spec():
    return QuantizerSpec(power_bins=8, power_lo=-10e3, power_hi=30e3,
                         speed_bins=4, speed_lo=0.0, speed_hi=20.0)


def test_quantize_edges(spec):
    assert quantize(spec.power_lo, 0.0, spec) == (0, 0)
    assert quantize(spec.power_hi + 1000.0, 0.0, spec)[0] == spec.power_bins - 1
    width = (spec.power_hi - spec.power_lo) / spec.power_bins
    mid7 = spec.power_lo + (7 + 0.5) * width
    assert quantize(mid7, 0.0, spec)[0] == 7


def test_quantize_rejects_non_finite(spec):
    with pytest.raises(ValueError):
        quantize(float("nan"), 0.0, spec)


def test_estimate_counts_example():
    # Transitions 0->0, 0->0, 0->1, 0->2 out of bin 0 give row [.5 .25 .25 ...].
    spec = QuantizerSpec(power_bins=4, power_lo=0.0, power_hi=4.0,
                         speed_bins=1, speed_lo=0.0, speed_hi=1.0)
    centers = spec.power_centers()
    seq = [centers[0], centers[0], centers[0], centers[1],
           centers[0], centers[2], centers[0]]
    trace = [(float(p), 0.0) for p in seq]
    model = estimate_tpm(trace, spec)
    row = model.probs[0, 0]
    # Out of bin 0: two self-loops (0->0 twice? count: 0->0, 0->0? sequence
    # gives 0->0, 0->1, 0->2 plus returns); check against explicit counts.
    assert model.counts[0, 0].sum() == 3
    assert row[0] == pytest.approx(1.0 / 3.0)
    assert row[1] == pytest.approx(1.0 / 3.0)
    assert row[2] == pytest.approx(1.0 / 3.0)


def test_single_transition_one_hot(spec):
    centers = spec.power_centers()
    model = estimate_tpm([(float(centers[2]), 1.0), (float(centers[5]), 1.0)], spec)
    row = model.probs[0, 2]
    assert row[5] == 1.0 and row.sum() == 1.0


def test_unvisited_rows_uniform(spec):
    centers = spec.power_centers()
    model = estimate_tpm([(float(centers[0]), 1.0), (float(centers[0]), 1.0)], spec)
    assert np.allclose(model.probs[3, 4], 1.0 / spec.power_bins)


def test_row_stochasticity_and_count_conservation(spec):
    rng = np.random.default_rng(5)
    trace = [(float(rng.uniform(-12e3, 35e3)), float(rng.uniform(0, 22)))
             for _ in range(5000)]
    model = estimate_tpm(trace, spec)
    sums = model.probs.sum(axis=2)
    assert np.max(np.abs(sums - 1.0)) <= 1e-12
    assert model.counts.sum() == len(trace) - 1


def test_short_trace_rejected(spec):
    with pytest.raises(ValueError):
        estimate_tpm([(0.0, 0.0)], spec)


def test_sampling_one_hot_row(spec):
    probs = np.full((spec.speed_bins, spec.power_bins, spec.power_bins),
                    1.0 / spec.power_bins)
    probs[1, 2] = 0.0
    probs[1, 2, 6] = 1.0
    model = TransitionModel(probs=probs, counts=None, quantizer=spec)
    rng = np.random.default_rng(0)
    assert all(sample_next(model, 2, 1, rng) == 6 for _ in range(50))


def test_sampling_uniform_frequencies():
    spec = QuantizerSpec(power_bins=4, power_lo=0.0, power_hi=4.0,
                         speed_bins=1, speed_lo=0.0, speed_hi=1.0)
    probs = np.full((1, 4, 4), 0.25)
    model = TransitionModel(probs=probs, counts=None, quantizer=spec)
    rng = np.random.default_rng(123)
    draws = np.array([sample_next(model, 0, 0, rng) for _ in range(100000)])
    freqs = np.bincount(draws, minlength=4) / len(draws)
    assert np.all(np.abs(freqs - 0.25) <= 0.01)


def test_sampling_deterministic_with_seed(spec):
    rng_a = np.random.default_rng(42)
    rng_b = np.random.default_rng(42)
    probs = np.full((spec.speed_bins, spec.power_bins, spec.power_bins),
                    1.0 / spec.power_bins)
    model = TransitionModel(probs=probs, counts=None, quantizer=spec)
    seq_a = [sample_next(model, 3, 2, rng_a) for _ in range(200)]
    seq_b = [sample_next(model, 3, 2, rng_b) for _ in range(200)]
    assert seq_a == seq_b


def test_estimator_recovers_known_chain():
    # Length-1e5 walk of a known chain recovers each entry within 0.02.
    spec = QuantizerSpec(power_bins=8, power_lo=0.0, power_hi=8.0,
                         speed_bins=1, speed_lo=0.0, speed_hi=1.0)
    rng = np.random.default_rng(2024)
    raw = rng.uniform(0.2, 1.0, (1, 8, 8))
    truth = TransitionModel(probs=raw / raw.sum(axis=2, keepdims=True),
                            counts=None, quantizer=spec)
    centers = spec.power_centers()
    state = 0
    trace = []
    for _ in range(100000):
        trace.append((float(centers[state]), 0.5))
        state = sample_next(truth, state, 0, rng)
    est = estimate_tpm(trace, spec)
    assert np.max(np.abs(est.probs - truth.probs)) <= 0.02


def test_non_stochastic_tensor_rejected(spec):
    probs = np.zeros((spec.speed_bins, spec.power_bins, spec.power_bins))
    with pytest.raises(ValueError):
        TransitionModel(probs=probs, counts=None, quantizer=spec)


def test_file_round_trip(tmp_path, spec):
    rng = np.random.default_rng(9)
    trace = [(float(rng.uniform(-12e3, 35e3)), float(rng.uniform(0, 22)))
             for _ in range(500)]
    model = estimate_tpm(trace, spec)
    path = tmp_path / "tpm.txt"
    save_tpm(model, path)
    loaded = load_tpm(path)
    assert loaded.quantizer == spec
    assert np.array_equal(loaded.probs, model.probs)
