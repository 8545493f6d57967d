import math

import numpy as np
import pytest

import leapts.autodiff as ad
from leapts.autodiff import Tape, Tensor
from leapts.engine import (
    build_control_signal,
    cluster_variates,
    evolve_state,
    increments,
    run_schedule,
    run_schedule_rows,
    segment_head,
    series_features,
    soft_mask,
    summarize_segment,
    write_segment,
)
from leapts.errors import DataError
from leapts.forward import forward_rows
from leapts.model import LeapTS, ModelConfig

from conftest import toy_config


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# -- soft mask ---------------------------------------------------------------


def test_soft_mask_hand_values():
    m = soft_mask(2.0, cursor=1, P=4, gamma=0.1).data
    expected = [sigmoid(15.0), sigmoid(5.0), sigmoid(-5.0), sigmoid(-15.0)]
    assert np.allclose(m, expected, rtol=1e-12)
    assert m[0] == pytest.approx(0.99999969, abs=1e-8)
    assert m[1] == pytest.approx(0.993307, abs=1e-6)
    assert m[2] == pytest.approx(0.006693, abs=1e-6)
    assert m[3] == pytest.approx(3.06e-7, abs=1e-9)


def test_soft_mask_zero_before_cursor():
    m = soft_mask(2.0, cursor=3, P=4, gamma=0.1).data
    assert m[0] == 0.0 and m[1] == 0.0
    assert m[2] > 0.9


def test_soft_mask_sharp_limit_matches_hard_indicator():
    P = 20
    for length in (1, 3, 7, 20):
        for cursor in (1, 5, 14):
            m = soft_mask(float(length), cursor=cursor, P=P, gamma=1e-3).data
            hard = np.zeros(P)
            hard[cursor - 1 : min(cursor - 1 + length, P)] = 1.0
            assert np.abs(m - hard).max() < 1e-6
            covered = min(length, P - cursor + 1)
            assert covered - 0.01 <= m.sum() <= covered + 0.01


def test_soft_mask_validates_inputs():
    with pytest.raises(ValueError):
        soft_mask(2.0, cursor=1, P=4, gamma=0.0)
    with pytest.raises(ValueError):
        soft_mask(2.0, cursor=5, P=4, gamma=0.1)


def test_soft_mask_gradient_flows_to_length():
    l = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        m = soft_mask(l, cursor=1, P=4, gamma=0.5)
        tape.backward(m.sum())
    assert l.grad[0] > 0.0


# -- write / summarize / control / evolve -------------------------------------


def test_write_segment_zero_mask_noop():
    accum = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
    out, masked = write_segment(Tensor(np.ones(4)), Tensor(np.zeros(4)), accum)
    assert np.array_equal(out.data, accum.data)
    assert np.array_equal(masked.data, np.zeros(4))


def test_write_segment_hard_gate():
    accum = Tensor(np.zeros(4))
    mask = Tensor(np.array([1.0, 1.0, 0.0, 0.0]))
    out, _ = write_segment(Tensor(np.ones(4)), mask, accum)
    assert np.array_equal(out.data, [1.0, 1.0, 0.0, 0.0])


def test_sequential_disjoint_writes_concatenate():
    accum = Tensor(np.zeros(4))
    accum, _ = write_segment(
        Tensor(np.array([5.0, 6.0, 99.0, 99.0])), Tensor(np.array([1.0, 1.0, 0.0, 0.0])), accum
    )
    accum, _ = write_segment(
        Tensor(np.array([99.0, 99.0, 7.0, 8.0])), Tensor(np.array([0.0, 0.0, 1.0, 1.0])), accum
    )
    assert np.array_equal(accum.data, [5.0, 6.0, 7.0, 8.0])


def test_segment_head_full_horizon_and_zero_case(toy_model):
    h = Tensor(np.zeros((1, 8)))
    for cat in range(3):
        seg = segment_head(toy_model, h, cat)
        assert seg.shape == (1, 8)  # full horizon regardless of length
        assert np.array_equal(seg.data, np.zeros((1, 8)))  # zero h, zero bias


def test_segment_heads_differ_across_categories(toy_model, rng):
    h = Tensor(rng.normal(size=(1, 8)))
    a = segment_head(toy_model, h, 0).data
    b = segment_head(toy_model, h, 2).data
    assert not np.allclose(a, b)


def test_summarize_hand_case():
    w = np.zeros((8, 2))
    w[0, 0] = 1.0
    w[1, 1] = 1.0
    s = np.zeros((1, 8))
    s[0, 0], s[0, 1] = 0.5, -0.5
    c = summarize_segment(Tensor(s), Tensor(w), Tensor(np.zeros(2)))
    assert np.allclose(c.data, [[math.tanh(0.5), math.tanh(-0.5)]], atol=1e-12)
    assert c.data[0, 0] == pytest.approx(0.4621, abs=1e-4)


def test_summarize_zero_segment_zero_bias():
    c = summarize_segment(Tensor(np.zeros((1, 8))), Tensor(np.ones((8, 3))), Tensor(np.zeros(3)))
    assert np.array_equal(c.data, np.zeros((1, 3)))


def test_cold_start_temporal_increment_is_lower_clip():
    """First step: the previous normalized length is 0, so the temporal
    increment clips up to dt_min; with the control field zeroed and the
    drift field stubbed to 1, the first state change is exactly dt_min."""
    cfg = toy_config(seed=2)
    model = LeapTS(cfg)
    stub_fields(model, 0, f_const=0.0, g_const=1.0)
    debug = []
    run_rows(model, debug=debug)
    first = debug[0]
    assert np.allclose(first.h_after - first.h_before, cfg.dt_min, atol=1e-15)


def test_summary_bounded(rng):
    w = Tensor(rng.normal(size=(8, 4)))
    c = summarize_segment(Tensor(rng.normal(size=(3, 8))), w, Tensor(np.zeros(4)))
    assert np.abs(c.data).max() < 1.0
    big = summarize_segment(Tensor(rng.normal(scale=1e6, size=(3, 8))), w, Tensor(np.zeros(4)))
    assert np.abs(big.data).max() <= 1.0


def test_control_signal_hand_case():
    w = np.zeros((7, 1))
    w[0, 0] = 1.0  # picks out the remaining-horizon ratio
    u = build_control_signal(
        rho=np.array([[0.5]]),
        prev_len_norm=np.array([[0.0]]),
        prev_soft=Tensor(np.full((1, 3), 1.0 / 3.0)),
        prev_summary=Tensor(np.zeros((1, 2))),
        control_w=Tensor(w),
        control_b=Tensor(np.zeros(1)),
    )
    assert u.data[0, 0] == pytest.approx(math.tanh(0.5), abs=1e-12)


def test_control_signal_zero_weights():
    u = build_control_signal(
        rho=np.array([[1.0]]),
        prev_len_norm=np.array([[0.0]]),
        prev_soft=Tensor(np.full((1, 3), 1.0 / 3.0)),
        prev_summary=Tensor(np.zeros((1, 2))),
        control_w=Tensor(np.zeros((7, 4))),
        control_b=Tensor(np.zeros(4)),
    )
    assert np.array_equal(u.data, np.zeros((1, 4)))


def test_increments():
    u = Tensor(np.array([[0.3, -0.2]]))
    du, dtau = increments(u, u, prev_len_norm=[[0.4]], dt_min=0.01, dt_max=1.0)
    assert np.array_equal(du.data, np.zeros((1, 2)))
    assert dtau[0, 0] == 0.4
    _, dtau = increments(u, u, prev_len_norm=[[0.0]], dt_min=0.01, dt_max=1.0)
    assert dtau[0, 0] == 0.01
    with pytest.raises(ValueError):
        increments(u, u, [[0.1]], dt_min=0.0, dt_max=1.0)


def stub_fields(model, cluster, f_const, g_const):
    """Make the evolution fields output constants (zero hidden, bias out)."""
    s = model.store
    for prefix, const, width in (
        (f"ctrl_field_g{cluster}", f_const, model.config.hidden_dim * model.config.control_dim),
        (f"time_field_g{cluster}", g_const, model.config.hidden_dim),
    ):
        s[f"{prefix}_w0"].data[:] = 0.0
        s[f"{prefix}_b0"].data[:] = 0.0
        s[f"{prefix}_w1"].data[:] = 0.0
        s[f"{prefix}_b1"].data[:] = const


def test_evolve_hand_arithmetic():
    cfg = ModelConfig(look_back=8, horizon=2, n_variates=1, hidden_dim=1, control_dim=1,
                      summary_dim=2, enc_hidden=(4,), field_hidden=4)
    model = LeapTS(cfg)
    stub_fields(model, 0, f_const=2.0, g_const=3.0)
    h = Tensor(np.array([[1.0]]))
    u = Tensor(np.array([[0.2]]))
    du = Tensor(np.array([[0.5]]))
    h_next, d_ctrl, d_time = evolve_state(model, h, u, du, np.array([[0.1]]), cluster=0)
    assert d_ctrl.data[0, 0] == pytest.approx(1.0, abs=1e-12)  # 2 * 0.5
    assert d_time.data[0, 0] == pytest.approx(0.3, abs=1e-12)  # 3 * 0.1
    assert h_next.data[0, 0] == pytest.approx(2.3, abs=1e-12)


def test_evolve_no_driving_signal_keeps_state(toy_model, rng):
    h = Tensor(rng.normal(size=(2, 8)))
    u = Tensor(rng.normal(size=(2, 4)))
    du = Tensor(np.zeros((2, 4)))
    stub_fields(toy_model, 0, f_const=1.7, g_const=0.0)
    h_next, d_ctrl, d_time = evolve_state(toy_model, h, u, du, np.zeros((2, 1)), cluster=0)
    assert np.array_equal(h_next.data, h.data)
    assert np.array_equal(d_ctrl.data, np.zeros((2, 8)))


def test_evolve_pure_temporal_drift(toy_model, rng):
    stub_fields(toy_model, 0, f_const=0.0, g_const=0.5)
    h = Tensor(rng.normal(size=(1, 8)))
    u = Tensor(rng.normal(size=(1, 4)))
    du = Tensor(rng.normal(size=(1, 4)))
    h_next, d_ctrl, d_time = evolve_state(toy_model, h, u, du, np.array([[0.2]]), cluster=0)
    assert np.allclose(d_ctrl.data, 0.0)
    assert np.allclose(h_next.data, h.data + 0.5 * 0.2, atol=1e-12)


# -- clustering ----------------------------------------------------------------


def test_cluster_single_group(rng):
    values = rng.normal(size=(50, 5))
    out = cluster_variates(values, 1)
    assert np.array_equal(out.assignment, np.zeros(5, dtype=int))


def test_cluster_constants_vs_sine():
    t = np.arange(200)
    values = np.stack([np.zeros(200), np.zeros(200), np.sin(t * 2.5)], axis=1)
    out = cluster_variates(values, 2, seed=1)
    assert out.assignment[0] == out.assignment[1]
    assert out.assignment[2] != out.assignment[0]


def test_cluster_each_variate_alone(rng):
    values = np.stack([rng.normal(loc=3 * i, size=100) for i in range(4)], axis=1)
    out = cluster_variates(values, 4, seed=0)
    assert len(set(out.assignment.tolist())) == 4


def test_cluster_degenerate_all_constant():
    values = np.ones((50, 6)) * 2.5
    out = cluster_variates(values, 3)
    assert np.array_equal(out.assignment, np.zeros(6, dtype=int))


def test_cluster_validates_inputs(rng):
    with pytest.raises(DataError):
        cluster_variates(rng.normal(size=(50, 3)), 4)
    with pytest.raises(DataError):
        series_features(rng.normal(size=(2, 3)))


# -- the scheduling loop ---------------------------------------------------------


def run_rows(model, n_windows=1, mode="eval", rng=None, seed=0, **kw):
    data_rng = np.random.default_rng(seed)
    x = data_rng.normal(size=(n_windows, model.config.look_back, model.config.n_variates))
    n = model.config.n_variates
    r = n_windows * n
    meta = (np.repeat(np.arange(n_windows), n), np.tile(np.arange(n), n_windows), np.zeros(r))
    return forward_rows(model, x, mode=mode, rng=rng, trace_meta=meta, **kw)


def test_forced_lengths_two_steps():
    model = LeapTS(toy_config(horizon=4, look_back=8))  # non-degenerate: 8//4+1=3 < 4
    forced = [[(0, 2.0, 2), (0, 2.0, 2)]] * 2
    out = run_rows(model, override=forced)
    for tr in out["traces"]:
        assert tr.n_steps == 2
        assert [s.cursor_before for s in tr.steps] == [1, 3]
        assert tr.steps[-1].cursor_after == 5


def test_horizon_one_single_step():
    model = LeapTS(toy_config(horizon=1, look_back=24))
    out = run_rows(model)
    for tr in out["traces"]:
        assert tr.n_steps == 1
        assert tr.steps[0].len_int == 1


def test_max_steps_cap_forces_completion():
    model = LeapTS(toy_config(horizon=8, look_back=8, max_steps=1, seed=2))
    # bias the single-level/short heads low so one step cannot cover P
    for name in model.anchors.category_names():
        model.store[f"len_head_{name}_w"].data[:] = 0.0
        model.store[f"len_head_{name}_b"].data[:] = -50.0
    out = run_rows(model)
    for tr in out["traces"]:
        assert tr.n_steps == 2
        assert not tr.steps[0].forced
        assert tr.steps[1].forced
        assert tr.steps[1].cursor_after == 9
        assert tr.total_int_length() >= 8


def test_schedule_invariants_over_random_models(rng):
    for trial in range(30):
        cfg = toy_config(
            look_back=int(rng.integers(8, 40)),
            horizon=int(rng.integers(2, 16)),
            n_variates=int(rng.integers(1, 4)),
            seed=int(rng.integers(0, 10_000)),
        )
        model = LeapTS(cfg)
        debug = []
        out = run_rows(model, mode="train", rng=np.random.default_rng(trial), debug=debug)
        for tr in out["traces"]:
            assert tr.n_steps <= cfg.horizon
            assert tr.total_int_length() >= cfg.horizon
            cursors = [s.cursor_before for s in tr.steps]
            assert cursors == sorted(cursors)
            assert tr.steps[-1].cursor_after > cfg.horizon
        for step in debug:
            for r in range(step.mask.shape[0]):
                q = step.cursor_before[r]
                assert np.all(step.mask[r, : q - 1] == 0.0)


def hard_paste_oracle(debug, n_rows, horizon):
    """Independent accumulation: paste each step's raw segment values hard
    over [cursor, cursor + len) with no mask arithmetic."""
    out = np.zeros((n_rows, horizon))
    for step in debug:
        for r in range(n_rows):
            if not step.active[r]:
                continue
            q = int(step.cursor_before[r])
            li = int(step.len_int[r])
            out[r, q - 1 : q - 1 + li] += step.segment[r, q - 1 : q - 1 + li]
    return out


def test_hard_limit_equivalence_with_paste_oracle():
    """With a sharp mask and integer forced lengths, the scheduled
    accumulation equals hard-pasting each segment at [q, q+len)."""
    cfg = toy_config(horizon=8, look_back=16, mask_temp=1e-3, seed=4)
    model = LeapTS(cfg)
    forced = [[(0, 3.0, 3), (1, 4.0, 4), (0, 1.0, 1)]] * 2
    debug = []
    out = run_rows(model, override=forced, debug=debug)
    sched = out["sched"].data
    oracle = hard_paste_oracle(debug, n_rows=2, horizon=8)
    assert np.abs(oracle - sched).max() < 1e-5


def test_hard_limit_equivalence_natural_schedule():
    """Same check on the model's own (unforced) integer-valued schedule:
    round each natural length and replay it as a forced trace."""
    cfg = toy_config(horizon=8, look_back=16, mask_temp=1e-3, seed=21)
    model = LeapTS(cfg)
    probe = run_rows(model)
    forced = [
        [(s.category, float(s.len_int), s.len_int) for s in tr.steps]
        for tr in probe["traces"]
    ]
    debug = []
    out = run_rows(model, override=forced, debug=debug)
    oracle = hard_paste_oracle(debug, n_rows=2, horizon=8)
    assert np.abs(oracle - out["sched"].data).max() < 1e-5


def test_decomposition_identity_exact(rng):
    model = LeapTS(toy_config(seed=8))
    debug = []
    out = run_rows(model, n_windows=2, debug=debug)
    assert len(debug) >= 1
    for step in debug:
        reconstructed = step.h_before + (step.ctrl_delta + step.time_delta)
        assert np.array_equal(step.h_after, reconstructed)
    for tr in out["traces"]:
        for s in tr.steps:
            if s.ctrl_mag + s.time_mag > 0:
                assert s.ctrl_ratio + s.time_ratio == pytest.approx(1.0, abs=1e-9)
            assert 0.0 <= s.ctrl_ratio <= 1.0


def test_end_to_end_gradient_through_loop(rng):
    """Soft-mode full-loop gradients (including through the mask length)
    match finite differences."""
    from leapts.forward import _rows_from_batch
    from leapts.gradcheck import finite_difference_grads, max_relative_error

    cfg = toy_config(seed=3)
    model = LeapTS(cfg)
    x = rng.normal(size=(1, 24, 2))
    y = rng.normal(size=(1, 8, 2))
    ty = _rows_from_batch(y)
    noise_rng = np.random.default_rng(11)
    frozen = [noise_rng.gumbel(size=(2, 3)) for _ in range(cfg.horizon + 1)]

    with Tape() as tape:
        out = forward_rows(model, x, mode="soft", frozen_noise=frozen)
        diff = ad.sub(out["fused"], Tensor(ty))
        model.store.zero_grads()
        tape.backward(ad.tmean(ad.mul(diff, diff)))
    analytic = model.store.grads()

    names = ["len_head_short_w", "category_proj", "ctrl_field_g0_b1", "summary_w", "fuse_logit"]

    def loss_fn():
        out = forward_rows(model, x, mode="soft", frozen_noise=frozen)
        d = out["fused"].data - ty
        return float((d * d).mean())

    numeric = finite_difference_grads(loss_fn, model.store, names=names)
    worst, name = max_relative_error({k: analytic[k] for k in names}, numeric)
    assert worst < 1e-4, f"{name}: {worst}"


def test_run_schedule_public_surface(toy_model):
    z = toy_model.encode(np.random.default_rng(1).normal(size=(24, 2)))
    y, traces = run_schedule(toy_model, z, mode="eval")
    assert y.shape == (8, 2)
    assert len(traces) == 2
    assert all(tr.steps[-1].cursor_after > 8 for tr in traces)
