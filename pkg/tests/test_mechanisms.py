import math

import numpy as np
import pytest

from mpcmwem import mechanisms as M
from mpcmwem.mechanisms import select_by_scores

from conftest import run_shared


def test_budget_split():
    b = M.PrivacyBudget(1.0, 10)
    assert b.eps_prime == pytest.approx(0.05)
    assert b.laplace_scale == pytest.approx(20.0)
    for eps in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            M.PrivacyBudget(eps, 10)
    with pytest.raises(ValueError):
        M.PrivacyBudget(1.0, 0)


def test_tape_gate(monkeypatch):
    monkeypatch.delenv(M.TAPE_ENV, raising=False)
    with pytest.raises(M.TapeForbiddenError):
        M.PinnedTape(3)
    M.PinnedTape(3, allow=True)
    monkeypatch.setenv(M.TAPE_ENV, "1")
    M.PinnedTape(3)


def test_tape_deterministic(tmp_path):
    a, b = M.PinnedTape(11), M.PinnedTape(11)
    assert np.array_equal(a.uniform_raw(50), b.uniform_raw(50))
    assert np.array_equal(a.bit(50), b.bit(50))
    raw = M.PinnedTape(12).uniform_raw(1000)
    assert raw.max() < 2**16
    path = tmp_path / "tape"
    path.write_text("seed=11\n")
    assert np.array_equal(M.PinnedTape.from_file(path).uniform_raw(5), M.PinnedTape(11).uniform_raw(5))
    path.write_text("nonsense")
    with pytest.raises(ValueError):
        M.PinnedTape.from_file(path)


def test_plain_select_examples():
    assert M.plain_exp_mechanism_select([5.0], [2.0], 1.0, uniform=0.7) == 0
    # weights 1,3,1,1 -> cumulative 1,4,5,6 (over max); u*6 thresholds
    scores = np.array([0.0, math.log(3), 0.0, 0.0])
    picks = [M.select_by_scores(scores, 2.0, uniform=u) for u in (0.1, 0.2, 0.6, 0.7, 0.9)]
    assert picks == [0, 1, 1, 2, 3]
    with pytest.raises(ValueError):
        M.plain_exp_mechanism_select([], [], 1.0)


def test_plain_select_distribution():
    rng = np.random.default_rng(0)
    scores = np.tile([0.0, math.log(3), 0.0, 0.0], (100_000, 1))
    idx = M.select_by_scores(scores, 2.0, rng)
    freq = np.bincount(idx, minlength=4) / idx.size
    assert np.max(np.abs(freq - [1 / 6, 1 / 2, 1 / 6, 1 / 6])) < 0.01


def test_plain_select_huge_scores_stay_finite():
    idx = M.select_by_scores([0.0, 1e6, 2e6], 1.0, uniform=0.5)
    assert idx == 2


def test_plain_laplace():
    assert M.plain_laplace(3.0, 0.0) == 3.0
    assert M.plain_laplace(0.0, 1.0, uniform=0.5, bit=1) == pytest.approx(math.log(0.5))
    assert M.plain_laplace(0.0, 1.0, uniform=0.5, bit=0) == pytest.approx(-math.log(0.5))
    x = M.plain_laplace(np.zeros(200_000), 2.0, np.random.default_rng(1))
    assert abs(x.mean()) < 0.03 and abs(x.var() - 8) < 0.2
    with pytest.raises(ValueError):
        M.plain_laplace(0.0, -1.0)


@pytest.mark.parametrize("eps_prime,bound", [(1e-4, 1e3), (0.05, 1728), (2.0, 10), (50.0, 1e6)])
def test_score_scaling(eps_prime, bound):
    c_int, g = M.score_scaling(eps_prime, bound, 16)
    assert abs(c_int / 2**g - 0.5 * eps_prime) <= 0.5 * eps_prime * 2e-5 + 2**-g
    assert c_int * bound * 2**16 < 2**61  # c_int already carries 2^g


def _qem(cluster, answers, approx, eps_prime, bound, pinned=None):
    return run_shared(cluster, lambda p, s: M.pi_qem(p, s, approx, eps_prime, bound, pinned),
                      np.round(np.asarray(answers) * 2**16).astype(np.int64))


def test_qem_single_candidate(cluster):
    assert _qem(cluster, [5.0], [2.0], 1.0, 10) == 0


def test_qem_pinned_matches_plaintext(cluster):
    rng = np.random.default_rng(3)
    true = rng.integers(0, 100, (40, 6)).astype(float)
    approx = rng.uniform(0, 100, 6)
    tape = M.PinnedTape(5)
    u = tape.uniform_raw(40)
    out = _qem(cluster, true, approx, 0.3, 100, u)
    ref = M.plain_exp_mechanism_select(true, approx, 0.3, uniform=u / 2**16)
    assert np.array_equal(out, ref)


def test_qem_range(cluster):
    out = _qem(cluster, np.zeros((500, 7)), np.zeros(7), 1.0, 10)
    assert out.min() >= 0 and out.max() <= 6
    assert len(np.unique(out)) == 7


def test_qem_scale_invariance(cluster):
    # doubling both scores and halving eps' leaves the selection unchanged
    tape = M.PinnedTape(9).uniform_raw(100)
    true = np.tile([1.0, 4.0, 2.0, 0.0], (100, 1))
    a = _qem(cluster, true, np.zeros(4), 0.5, 10, tape)
    b = _qem(cluster, 2 * true, np.zeros(4), 0.25, 20, tape)
    assert np.array_equal(a, b)


def test_threshold_index_trace(cluster, codec):
    c = codec.encode(np.arange(1, 11, dtype=float))
    k = run_shared(cluster, lambda p, cs, t: p.open(M.threshold_index(p, cs, t)), c, codec.encode(6.5))
    assert int(k.item()) == 7
    k = run_shared(cluster, lambda p, cs, t: p.open(M.threshold_index(p, cs, t)), c, codec.encode(10.0))
    assert int(k.item()) == 10


def test_lap_zero_scale_exact(cluster, codec):
    out = run_shared(cluster, lambda p, s: M.pi_lap(p, s, 0.0), codec.encode(np.array([3.25, -7.5])))
    assert out.tolist() == [3.25, -7.5]


def test_lap_pinned_matches_plaintext(cluster, codec):
    tape = M.PinnedTape(4)
    u, bit = tape.uniform_raw(200), tape.bit(200)
    vals = np.round(np.linspace(-50, 50, 200))
    out = run_shared(cluster, lambda p, s: M.pi_lap(p, s, 7.0, u, bit), codec.encode(vals))
    ref = M.plain_laplace(vals, 7.0, uniform=u / 2**16, bit=bit)
    assert np.max(np.abs(out - ref)) <= 7.0 * 2**-10


def test_lap_moments_small(cluster, codec):
    out = run_shared(cluster, lambda p, s: M.pi_lap(p, s, 2.0), codec.encode(np.full(20_000, 10.0)))
    noise = out - 10.0
    assert abs(noise.mean()) < 0.1 and abs(noise.var() - 8) < 0.8


def test_opens_only_labelled_outputs(cluster, codec):
    def body(p, s):
        M.pi_qem(p, s, np.zeros(5), 1.0, 10)
        M.pi_lap(p, s[2], 4.0)
        return [r.label for r in p.open_log]
    labels = run_shared(cluster, body, codec.encode(np.arange(5.0)))
    assert labels == ["qem-index", "lap-measurement"]


def _qem_freq(cluster, scores, eps_prime, trials=50_000):
    true = np.tile(np.asarray(scores, dtype=float), (trials, 1))
    out = _qem(cluster, true, np.zeros(len(scores)), eps_prime, 2.0)
    return np.bincount(out, minlength=len(scores)) / trials


def test_qem_equal_scores_uniform(cluster):
    assert np.max(np.abs(_qem_freq(cluster, [1.0, 1.0, 1.0, 1.0], 1.0) - 0.25)) <= 0.02


def test_qem_two_candidates(cluster):
    freq = _qem_freq(cluster, [0.0, math.log(3)], 2.0)
    assert np.max(np.abs(freq - [0.25, 0.75])) <= 0.02


def test_qem_parity_with_plaintext(cluster):
    scores = np.array([0.3, 1.2, 0.0, 2.0, 0.7, 1.5, 0.1, 0.9])
    freq = _qem_freq(cluster, scores, 1.5)
    w = np.exp(0.75 * scores)
    assert np.max(np.abs(freq - w / w.sum())) <= 0.02
    plain = select_by_scores(np.tile(scores, (50_000, 1)), 1.5, np.random.default_rng(0))
    assert np.max(np.abs(freq - np.bincount(plain, minlength=8) / 50_000)) <= 0.02


def test_qem_pinned_matches_plaintext_random_vectors(cluster):
    rng = np.random.default_rng(21)
    exempt = mismatched = 0
    for n in (2, 5, 17, 32):
        true = np.round(rng.uniform(0, 50, (250, n)))
        approx = rng.uniform(0, 50, n)
        u = M.PinnedTape(n).uniform_raw(250)
        out = _qem(cluster, true, approx, 0.4, 50, u)
        ref = M.plain_exp_mechanism_select(true, approx, 0.4, uniform=u / 2**16)
        for i in np.flatnonzero(out != ref):
            err = 0.2 * np.abs(approx - true[i])
            cs = np.cumsum(np.exp(err - err.max()))
            if np.min(np.abs(cs - cs[-1] * u[i] / 2**16)) <= 2**-8:
                exempt += 1
            else:
                mismatched += 1
    assert mismatched == 0


def test_lap_moments_at_100(cluster, codec):
    out = run_shared(cluster, lambda p, s: M.pi_lap(p, s, 2.0), codec.encode(np.full(50_000, 100.0)))
    assert abs(out.mean() - 100) <= 0.1
    assert abs(out.var() - 8) <= 0.8
    assert np.max(np.abs(out - 100)) <= 2.0 * 16 * math.log(2) + 2**-10


def test_lap_extreme_uniform_hits_tail_bound(cluster, codec):
    top = 2**16 - 1
    out = run_shared(cluster, lambda p, s: M.pi_lap(p, s, 2.0, top, 1), codec.encode(0.0))
    assert out == pytest.approx(-2.0 * 16 * math.log(2), abs=2**-9)
