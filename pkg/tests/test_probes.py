import numpy as np
import pytest

from zigprune.probes import (
    QuadraticProbe,
    default_probe,
    probe_contraction,
    probe_magnitude_decrease,
    probe_norm_update_identity,
    probe_sufficient_decrease,
    run_lemma_probes,
)


def identity_probe():
    n = 12
    groups = [np.arange(g * 4, (g + 1) * 4) for g in range(3)]
    return QuadraticProbe(matrix=np.eye(n), groups=groups, penalized=[0, 2])


def test_lipschitz_constant_computed_from_matrix():
    probe = identity_probe()
    assert probe.lipschitz == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 6))
    spd = m @ m.T
    probe2 = QuadraticProbe(matrix=spd, groups=[np.arange(6)], penalized=[0])
    assert probe2.lipschitz == pytest.approx(np.linalg.eigvalsh(spd)[-1])


def test_sufficient_decrease_on_identity_quadratic():
    # A = I, L = 1, alpha = 1/(2L): margin is nonnegative at every iterate
    res = probe_sufficient_decrease(identity_probe(), trials=100, seed=1)
    assert res["passed"]
    assert res["max_violation"] <= 0.0 + 1e-12


def test_magnitude_decrease_strict():
    res = probe_magnitude_decrease(default_probe(seed=2), trials=100, seed=2)
    assert res["passed"]
    assert res["max_violation"] < 0.0


def test_norm_update_identity_residual():
    res = probe_norm_update_identity(default_probe(seed=3), trials=100, seed=3)
    assert res["passed"]
    assert res["max_violation"] < 1e-10


def test_contraction_factor():
    res = probe_contraction(default_probe(seed=4), trials=100, seed=4)
    assert res["passed"]


def test_full_suite_all_pass():
    results = run_lemma_probes(default_probe(), trials=100, seed=0)
    assert set(results) == {"sufficient_decrease", "magnitude_decrease",
                            "norm_update_identity", "contraction"}
    assert all(r["passed"] for r in results.values())


def test_identity_holds_for_any_omega():
    for omega in (0.1, 0.5, 0.9):
        probe = default_probe(seed=5, omega=omega)
        res = probe_norm_update_identity(probe, trials=50, seed=5)
        assert res["passed"], omega
