"""AdamW semantics against a hand-unrolled recurrence, plus clipping."""

import numpy as np
import pytest

from hoidet.nn import Parameter
from hoidet.optim import AdamW, clip_grad_norm_


def make_opt(params, lr=0.1, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    group = {"name": "all", "params": [(f"p{i}", p) for i, p in enumerate(params)],
             "lr": lr}
    return AdamW([group], betas=betas, eps=eps, weight_decay=weight_decay)


class TestAdamW:
    def test_zero_grad_zero_decay_leaves_parameters_unchanged(self):
        p = Parameter(np.array([1.5, -2.0]))
        opt = make_opt([p], lr=0.1, weight_decay=0.0)
        for _ in range(3):
            opt.zero_grad()
            opt.step()
        assert np.array_equal(p.data, [1.5, -2.0])

    def test_matches_hand_unrolled_recurrence(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        grads = [0.5, -0.3, 0.2]
        p = Parameter(np.array([1.0]))
        opt = make_opt([p], lr=lr, weight_decay=0.0, betas=(b1, b2), eps=eps)
        # hand-unrolled AdamW: moments, bias correction, update
        value, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            value -= lr * m_hat / (np.sqrt(v_hat) + eps)
            p.zero_grad()
            p.grad += g
            opt.step()
        assert p.data[0] == pytest.approx(value, abs=1e-15)

    def test_decoupled_decay_shrinks_by_lr_wd(self):
        p = Parameter(np.array([2.0]))
        opt = make_opt([p], lr=0.1, weight_decay=0.01)
        opt.zero_grad()
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.01), abs=1e-15)
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.01) ** 2, abs=1e-15)

    def test_lr_zero_freezes_parameters(self):
        p = Parameter(np.array([3.0]))
        opt = make_opt([p], lr=0.0, weight_decay=1e-4)
        p.zero_grad()
        p.grad += 1.0
        opt.step()
        assert p.data[0] == 3.0

    def test_per_group_learning_rates(self):
        a = Parameter(np.array([1.0]))
        b = Parameter(np.array([1.0]))
        opt = AdamW([
            {"name": "fast", "params": [("a", a)], "lr": 0.1},
            {"name": "slow", "params": [("b", b)], "lr": 0.001},
        ], weight_decay=0.0)
        for p in (a, b):
            p.zero_grad()
            p.grad += 1.0
        opt.step()
        assert abs(1.0 - a.data[0]) > abs(1.0 - b.data[0])
        opt.set_lr("fast", 0.0)
        before = a.data[0]
        a.grad += 1.0
        opt.step()
        assert a.data[0] == before

    def test_state_roundtrip(self):
        p = Parameter(np.array([1.0, 2.0]))
        opt = make_opt([p], lr=0.05)
        for g in (0.3, -0.2):
            p.zero_grad()
            p.grad += g
            opt.step()
        arrays = opt.state_arrays()
        p2 = Parameter(np.array([1.0, 2.0]))
        opt2 = make_opt([p2], lr=0.05)
        opt2.load_state_arrays(arrays, opt.t)
        assert opt2.t == opt.t
        assert np.array_equal(opt2._m["p0"], opt._m["p0"])
        assert np.array_equal(opt2._v["p0"], opt._v["p0"])


class TestClipGradNorm:
    def test_scales_to_max_norm(self):
        p = Parameter(np.zeros(4))
        p.zero_grad()
        p.grad += np.array([3.0, 4.0, 0.0, 0.0])
        norm = clip_grad_norm_([p], 1.0)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0)

    def test_no_scaling_below_threshold(self):
        p = Parameter(np.zeros(2))
        p.zero_grad()
        p.grad += np.array([0.3, 0.4])
        clip_grad_norm_([p], 1.0)
        assert np.allclose(p.grad, [0.3, 0.4])
