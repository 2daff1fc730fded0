import numpy as np
import pytest

from zigprune.dhspg import (
    DhspgOptimizer,
    GroupState,
    OptimizerConfig,
    choose_penalty,
    group_cosine,
    lambda_interval,
)
from zigprune.errors import ConfigError, KExceedsGroupCount


def flat_groups(sizes):
    out = []
    start = 0
    for s in sizes:
        out.append(np.arange(start, start + s))
        start += s
    return out


def make_opt(x0, sizes, **cfg_kwargs):
    cfg = OptimizerConfig(**cfg_kwargs)
    return DhspgOptimizer(np.asarray(x0, float), flat_groups(sizes), cfg)


# -- warm-up ----------------------------------------------------------------

def test_warmup_quadratic_single_step():
    opt = make_opt([1.0], [1], learning_rate=0.1, momentum=0.0,
                   warmup_steps=10, project_start_step=10, lr_floor=0.0)
    opt.step(np.array([1.0]))  # grad of f = x^2/2 at x=1
    assert opt.x[0] == pytest.approx(0.9)


def test_warmup_zero_gradient_keeps_iterate():
    opt = make_opt([2.0, -1.0], [2], momentum=0.9, warmup_steps=5,
                   project_start_step=5)
    opt.step(np.zeros(2))
    assert np.array_equal(opt.x, [2.0, -1.0])


def test_warmup_matches_sgd_oracle_trajectory():
    rng = np.random.default_rng(8)
    a = rng.uniform(0.5, 2.0, size=6)  # f(x) = sum a_i x_i^2 / 2
    x0 = rng.normal(size=6)

    opt = make_opt(x0, [3, 3], learning_rate=0.05, momentum=0.9,
                   warmup_steps=200, project_start_step=200, lr_floor=0.0,
                   lr_period_epochs=10 ** 6)
    x_ref = x0.copy()
    v_ref = np.zeros(6)
    for _ in range(100):
        g = a * opt.x
        opt.step(g)
        v_ref = 0.9 * v_ref + a * x_ref
        x_ref = x_ref - 0.05 * v_ref
    assert np.abs(opt.x - x_ref).max() < 1e-12


# -- salience ----------------------------------------------------------------

def test_cosine_aligned_and_opposed():
    assert group_cosine(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1e-6) == 1.0
    assert group_cosine(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 1e-6) == -1.0


def test_salience_prefers_small_magnitude():
    opt = make_opt([3.0, 0.1, 1.0], [1, 1, 1], warmup_steps=0,
                   project_start_step=0)
    grad = np.array([3.0, 0.1, 1.0])  # cos_theta = 1 for all groups
    opt.compute_salience(grad)
    sal = [gs.salience for gs in opt.groups]
    assert sal[0] == min(sal)  # largest magnitude scores lowest
    assert sal[1] == max(sal)


# -- penalized-set selection ---------------------------------------------------

def test_partition_top_k_with_tie_break():
    opt = make_opt([1.0, 1.0, 1.0], [1, 1, 1], target_zero_groups=2)
    for gs, s in zip(opt.groups, (0.9, 0.1, 0.5)):
        gs.salience = s
    opt.partition_penalized()
    assert [gs.penalized for gs in opt.groups] == [True, False, True]


def test_partition_k_zero_and_k_all():
    opt = make_opt([1.0, 2.0], [1, 1], target_zero_groups=0)
    opt.partition_penalized()
    assert not any(gs.penalized for gs in opt.groups)
    opt2 = make_opt([1.0, 2.0], [1, 1], target_zero_groups=2)
    opt2.partition_penalized()
    assert all(gs.penalized for gs in opt2.groups)


def test_partition_k_too_large():
    opt = make_opt([1.0, 2.0], [1, 1], target_zero_groups=3)
    with pytest.raises(KExceedsGroupCount):
        opt.partition_penalized()


def test_partition_respects_component_floor():
    cfg = OptimizerConfig(target_zero_groups=2)
    opt = DhspgOptimizer(np.ones(4), flat_groups([1, 1, 1, 1]), cfg,
                         group_components=[0, 0, 1, 1])
    for gs, s in zip(opt.groups, (0.9, 0.8, 0.1, 0.2)):
        gs.salience = s
    opt.partition_penalized()
    # naive top-2 would take both groups of component 0
    assert [gs.penalized for gs in opt.groups] == [True, False, False, True]


# -- penalty interval -----------------------------------------------------------

def test_lambda_interval_values():
    assert lambda_interval(-0.5, 2.0) == (1.0, 4.0)
    lo, hi = lambda_interval(-1.0, 3.0)
    assert lo == pytest.approx(3.0) and hi == pytest.approx(3.0)
    assert lambda_interval(0.2, 2.0) is None


def test_choose_penalty_amplify_and_project_back():
    assert choose_penalty(-0.5, 2.0, 1e-3, 2.0) == pytest.approx(2.0)
    assert choose_penalty(-0.9, 1.0, 1e-3, 2.0) == pytest.approx(1.0 / 0.9)
    assert choose_penalty(0.3, 2.0, 1e-3, 2.0) == pytest.approx(1e-3)
    assert choose_penalty(-1.0, 3.0, 1e-3, 2.0) == pytest.approx(3.0)


# -- direction --------------------------------------------------------------

def direction_for(x_g, grad_g, penalty):
    cfg = OptimizerConfig(target_zero_groups=1, warmup_steps=0,
                          project_start_step=0)
    opt = DhspgOptimizer(np.asarray(x_g, float), [np.arange(len(x_g))], cfg)
    opt.groups[0].penalized = True
    opt.groups[0].penalty = penalty
    return opt.direction(np.asarray(grad_g, float))


def test_direction_antiparallel_stall():
    d = direction_for([1.0, 0.0], [-1.0, 0.0], penalty=1.0)
    assert np.abs(d).max() < 1e-12  # the degenerate cos=-1 boundary case


def test_direction_in_both_halfspaces():
    d = direction_for([0.0, 1.0], [1.0, 0.0], penalty=1e-3)
    assert np.allclose(d, [-1.0, -1e-3])
    assert np.dot(d, [-1.0, 0.0]) > 0  # descends f
    assert np.dot(d, [0.0, -1.0]) > 0  # descends the magnitude


def test_direction_dual_halfspace_randomized():
    rng = np.random.default_rng(123)
    cfg = OptimizerConfig()
    hits = 0
    for _ in range(1000):
        x_g = rng.normal(size=8)
        grad_g = rng.normal(size=8)
        cos = group_cosine(x_g, grad_g, cfg.norm_floor)
        interval = lambda_interval(cos, float(np.linalg.norm(grad_g)))
        if interval is None:
            lam = cfg.default_penalty
        else:
            lo, hi = interval
            lam = 0.5 * (lo + hi)  # strictly interior
        d = direction_for(x_g, grad_g, lam)
        if np.dot(d, -grad_g) > 0 and np.dot(d, -x_g) > 0:
            hits += 1
    assert hits == 1000


# -- half-space projection ------------------------------------------------------

def project_case(x_g, trial_g, eps):
    cfg = OptimizerConfig(target_zero_groups=1, project_epsilon=eps)
    opt = DhspgOptimizer(np.asarray(x_g, float), [np.arange(len(x_g))], cfg)
    opt.groups[0].penalized = True
    opt.halfspace_project(np.asarray(trial_g, float))
    return opt


def test_project_negative_inner_product_zeros_group():
    opt = project_case([1.0, 0.0], [-0.1, 0.05], eps=0.0)
    assert np.array_equal(opt.x, [0.0, 0.0])
    assert opt.groups[0].frozen


def test_project_positive_inner_product_keeps_trial():
    opt = project_case([1.0, 0.0], [0.5, 0.2], eps=0.0)
    assert np.array_equal(opt.x, [0.5, 0.2])
    assert not opt.groups[0].frozen


def test_project_threshold_case():
    opt = project_case([1.0, 0.0], [0.5, 0.0], eps=0.9)
    assert np.array_equal(opt.x, [0.0, 0.0])


def test_projection_stops_at_target():
    cfg = OptimizerConfig(target_zero_groups=1, project_epsilon=0.0)
    opt = DhspgOptimizer(np.array([1.0, 1.0]), flat_groups([1, 1]), cfg)
    for gs in opt.groups:
        gs.penalized = True
    opt.halfspace_project(np.array([-0.5, -0.5]))
    assert opt.zero_group_count() == 1  # second group kept despite the exit


# -- end-to-end behavior on a synthetic least-squares problem ------------------

def lsq_problem(seed=0, m=200, groups=8, size=4, support=(0, 3, 5)):
    rng = np.random.default_rng(seed)
    n = groups * size
    X = rng.normal(size=(m, n))
    w = np.zeros(n)
    for gi in support:
        w[gi * size:(gi + 1) * size] = rng.normal(1.0, 0.2, size)
    y = X @ w
    return X, y, flat_groups([size] * groups)


def run_training(opt, X, y, epochs=40, batch=32, seed=1):
    rng = np.random.default_rng(seed)
    m = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(m)
        for lo in range(0, m, batch):
            idx = order[lo:lo + batch]
            r = X[idx] @ opt.x - y[idx]
            opt.step(X[idx].T @ r / len(idx))
    return opt


def test_exact_target_count_on_group_sparse_lsq():
    X, y, groups = lsq_problem()
    spe = (X.shape[0] + 31) // 32
    cfg = OptimizerConfig(learning_rate=0.05, momentum=0.9,
                          target_zero_groups=5, warmup_steps=5 * spe,
                          project_start_step=5 * spe, lr_period_epochs=40,
                          default_penalty=0.1)
    opt = DhspgOptimizer(np.zeros(X.shape[1]) + 0.1, groups, cfg,
                         steps_per_epoch=spe)
    run_training(opt, X, y)
    assert opt.zero_group_count() == 5
    # groups with real support survive
    for gi in (0, 3, 5):
        assert np.linalg.norm(opt.x[groups[gi]]) > 0.5


def test_frozen_groups_never_reactivate():
    X, y, groups = lsq_problem(seed=3)
    spe = (X.shape[0] + 31) // 32
    cfg = OptimizerConfig(learning_rate=0.05, momentum=0.9,
                          target_zero_groups=4, warmup_steps=2 * spe,
                          project_start_step=2 * spe, lr_period_epochs=40,
                          default_penalty=0.1)
    opt = DhspgOptimizer(np.zeros(X.shape[1]) + 0.1, groups, cfg,
                         steps_per_epoch=spe)
    rng = np.random.default_rng(1)
    m = X.shape[0]
    frozen_history = []
    for _ in range(60):
        order = rng.permutation(m)
        for lo in range(0, m, 32):
            idx = order[lo:lo + 32]
            opt.step(X[idx].T @ (X[idx] @ opt.x - y[idx]) / len(idx))
            frozen_now = frozenset(i for i, gs in enumerate(opt.groups) if gs.frozen)
            frozen_history.append(frozen_now)
            for i in frozen_now:
                assert not opt.x[opt.groups[i].indices].any()
    for earlier, later in zip(frozen_history, frozen_history[1:]):
        assert earlier <= later


def test_k_zero_reduces_to_momentum_sgd():
    X, y, groups = lsq_problem(seed=5)
    cfg = OptimizerConfig(learning_rate=0.05, momentum=0.9, target_zero_groups=0,
                          warmup_steps=0, project_start_step=0)
    opt = DhspgOptimizer(np.full(X.shape[1], 0.1), groups, cfg, steps_per_epoch=7)
    sgd = DhspgOptimizer(np.full(X.shape[1], 0.1), groups,
                         OptimizerConfig(learning_rate=0.05, momentum=0.9, mode="sgd"),
                         steps_per_epoch=7)
    run_training(opt, X, y, epochs=10, seed=2)
    run_training(sgd, X, y, epochs=10, seed=2)
    assert np.array_equal(opt.x, sgd.x)


def test_hspg_zero_lambda_equals_sgd():
    X, y, groups = lsq_problem(seed=6)
    hspg = DhspgOptimizer(np.full(X.shape[1], 0.1), groups,
                          OptimizerConfig(learning_rate=0.05, momentum=0.9,
                                          mode="hspg", global_penalty=0.0,
                                          warmup_steps=0, project_start_step=0),
                          steps_per_epoch=7)
    sgd = DhspgOptimizer(np.full(X.shape[1], 0.1), groups,
                         OptimizerConfig(learning_rate=0.05, momentum=0.9, mode="sgd"),
                         steps_per_epoch=7)
    run_training(hspg, X, y, epochs=5, seed=4)
    run_training(sgd, X, y, epochs=5, seed=4)
    # no regularization pull and trials keep positive inner products here
    assert np.abs(hspg.x - sgd.x).max() < 1e-12


def test_hspg_deterministic_for_fixed_seed():
    X, y, groups = lsq_problem(seed=7)
    def run():
        opt = DhspgOptimizer(np.full(X.shape[1], 0.1), groups,
                             OptimizerConfig(learning_rate=0.05, momentum=0.9,
                                             mode="hspg", global_penalty=0.1,
                                             warmup_steps=10, project_start_step=10),
                             steps_per_epoch=7)
        return run_training(opt, X, y, epochs=8, seed=9).x
    assert np.array_equal(run(), run())


def test_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(project_epsilon=1.0).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(warmup_steps=5, project_start_step=2).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(mode="adam").validate()
