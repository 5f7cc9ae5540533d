"""Flow and box losses, the weighted total, and gradient spot checks."""

import numpy as np
import pytest
import torch

from tad.model import Batch, ModelOutput
from tad.objective import FlowLossParts, LossBreakdown, box_loss, flow_loss, total_loss
from tests.conftest import finite_difference_check


def _dummy_batch(flow, fut=None):
    n = 0 if fut is None else fut.shape[0]
    return Batch(
        flow=flow,
        obs=flow.new_zeros((n, 2, 4)),
        sample_index=torch.zeros(n, dtype=torch.long),
        slot_index=torch.arange(n, dtype=torch.long),
        counts=torch.tensor([n], dtype=torch.long),
        fut=fut,
    )


# ---------------------------------------------------------------------------
# flow loss


def test_perfect_reconstruction_costs_nothing():
    x = torch.randn(2, 2, 8, 8, dtype=torch.float64)
    parts = flow_loss(x, x.clone(), smooth_eps=0.0)
    assert float(parts.motion) == 0.0
    assert float(parts.recon) == 0.0
    assert float(parts.total) == 0.0


def test_single_pixel_three_four_five():
    recon = torch.zeros(1, 2, 1, 1, dtype=torch.float64)
    target = torch.tensor([[[[3.0]], [[4.0]]]], dtype=torch.float64)
    parts = flow_loss(recon, target, smooth_eps=0.0)
    assert float(parts.motion) == 5.0
    assert float(parts.recon) == 3.5
    assert float(parts.total) == 8.5


def test_flow_loss_is_nonnegative():
    torch.manual_seed(0)
    parts = flow_loss(torch.randn(2, 2, 6, 6), torch.randn(2, 2, 6, 6))
    assert float(parts.motion) >= 0
    assert float(parts.recon) >= 0


def test_flow_loss_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        flow_loss(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 8))


def test_flow_loss_rejects_wrong_channel_count():
    with pytest.raises(ValueError, match="channels"):
        flow_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4))


def test_flow_loss_accepts_unbatched_input():
    recon = torch.zeros(2, 3, 3)
    target = torch.ones(2, 3, 3)
    parts = flow_loss(recon, target)
    assert float(parts.motion) == pytest.approx(np.sqrt(2.0), abs=1e-6)
    assert float(parts.recon) == pytest.approx(1.0, abs=1e-7)


def test_flow_loss_invariant_to_pixel_replication():
    torch.manual_seed(1)
    recon = torch.randn(1, 2, 16, 16)
    target = torch.randn(1, 2, 16, 16)
    big = lambda x: x.repeat_interleave(2, dim=-1).repeat_interleave(2, dim=-2)
    small = flow_loss(recon, target)
    large = flow_loss(big(recon), big(target))
    assert float(large.motion) == pytest.approx(float(small.motion), abs=1e-5)
    assert float(large.recon) == pytest.approx(float(small.recon), abs=1e-5)


# ---------------------------------------------------------------------------
# box loss


def test_box_loss_zero_on_exact_prediction():
    x = torch.rand(3, 5, 4)
    assert float(box_loss(x, x.clone())) == 0.0


def test_box_loss_unit_cube_distance():
    pred = torch.zeros(1, 1, 4, dtype=torch.float64)
    target = torch.ones(1, 1, 4, dtype=torch.float64)
    assert float(box_loss(pred, target)) == 2.0


def test_box_loss_sums_over_horizon():
    pred = torch.zeros(1, 3, 4, dtype=torch.float64)
    target = torch.ones(1, 3, 4, dtype=torch.float64)
    assert float(box_loss(pred, target)) == 6.0


def test_box_loss_averages_over_objects():
    pred = torch.zeros(2, 1, 4, dtype=torch.float64)
    target = torch.stack([torch.zeros(1, 4), torch.ones(1, 4)]).double()
    assert float(box_loss(pred, target)) == 1.0


def test_box_loss_permutation_invariant():
    torch.manual_seed(2)
    pred = torch.randn(5, 3, 4)
    target = torch.randn(5, 3, 4)
    perm = torch.tensor([4, 2, 0, 3, 1])
    assert float(box_loss(pred[perm], target[perm])) == pytest.approx(
        float(box_loss(pred, target)), abs=1e-6)


def test_box_loss_empty_object_set():
    out = box_loss(torch.zeros(0, 5, 4), torch.zeros(0, 5, 4))
    assert float(out) == 0.0


def test_box_loss_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        box_loss(torch.zeros(2, 5, 4), torch.zeros(2, 4, 4))


# ---------------------------------------------------------------------------
# weighted total


def test_total_loss_hand_composition():
    # flow: one pixel off by 2/3 in u -> motion 2/3, l1 (2/3)/2 -> flow 1.0
    # boxes: zeros vs ones, one object one step -> 2.0
    # sparsity: stubbed at 3.0, weighted by 2e-4 -> 0.0006
    recon = torch.zeros(1, 2, 1, 1, dtype=torch.float64)
    flow = torch.zeros(1, 2, 1, 1, dtype=torch.float64)
    flow[0, 0, 0, 0] = 2.0 / 3.0
    fut = torch.ones(1, 1, 4, dtype=torch.float64)
    output = ModelOutput(recon=recon, rollouts=torch.zeros(1, 1, 4, dtype=torch.float64),
                         sparsity=torch.tensor(3.0, dtype=torch.float64))
    batch = _dummy_batch(flow, fut)
    breakdown = total_loss(output, batch, lambda1=1.0, lambda2=1.0,
                           lambda3=0.0002, smooth_eps=0.0)
    assert float(breakdown.flow) == pytest.approx(1.0, abs=1e-12)
    assert float(breakdown.boxes) == pytest.approx(2.0, abs=1e-12)
    assert float(breakdown.sparsity) == 3.0
    assert float(breakdown.total) == pytest.approx(3.0006, abs=1e-9)


def test_total_loss_zero_weights_kill_everything():
    torch.manual_seed(3)
    output = ModelOutput(recon=torch.randn(1, 2, 4, 4),
                         rollouts=torch.randn(2, 3, 4),
                         sparsity=torch.tensor(1.7))
    batch = _dummy_batch(torch.randn(1, 2, 4, 4), torch.randn(2, 3, 4))
    breakdown = total_loss(output, batch, lambda1=0.0, lambda2=0.0, lambda3=0.0)
    assert float(breakdown.total) == 0.0


def test_total_loss_monotone_in_sparsity_weight():
    torch.manual_seed(4)
    output = ModelOutput(recon=torch.randn(1, 2, 4, 4),
                         rollouts=torch.randn(1, 2, 4),
                         sparsity=torch.tensor(2.0))
    batch = _dummy_batch(torch.randn(1, 2, 4, 4), torch.randn(1, 2, 4))
    small = total_loss(output, batch, lambda3=0.0001)
    large = total_loss(output, batch, lambda3=0.01)
    assert float(large.total) > float(small.total)


def test_total_loss_without_flow_head():
    output = ModelOutput(recon=None, rollouts=torch.zeros(1, 1, 4),
                         sparsity=torch.tensor(0.0))
    batch = _dummy_batch(torch.ones(1, 2, 2, 2), torch.ones(1, 1, 4))
    breakdown = total_loss(output, batch)
    assert float(breakdown.flow) == 0.0
    assert float(breakdown.boxes) == 2.0
    assert float(breakdown.total) == 2.0


def test_total_loss_without_box_head():
    output = ModelOutput(recon=torch.zeros(1, 2, 2, 2), rollouts=None,
                         sparsity=torch.tensor(0.0))
    batch = _dummy_batch(torch.zeros(1, 2, 2, 2), torch.ones(1, 1, 4))
    breakdown = total_loss(output, batch, smooth_eps=0.0)
    assert float(breakdown.boxes) == 0.0
    assert float(breakdown.total) == 0.0


def test_check_finite_raises_on_nan():
    nan = torch.tensor(float("nan"))
    breakdown = LossBreakdown(motion=nan, recon=nan, flow=nan,
                              boxes=torch.tensor(0.0), sparsity=torch.tensor(0.0),
                              total=nan)
    with pytest.raises(FloatingPointError, match="non-finite"):
        breakdown.check_finite()


def test_check_finite_passes_through_finite_values():
    t = torch.tensor(1.0)
    breakdown = LossBreakdown(t, t, t, t, t, t)
    assert breakdown.check_finite() is breakdown


def test_to_floats_detaches_from_the_graph():
    x = torch.tensor(2.0, requires_grad=True)
    breakdown = LossBreakdown(x, x, x, x, x, x * 3)
    plain = breakdown.to_floats()
    for name in ("motion", "recon", "flow", "boxes", "sparsity", "total"):
        assert isinstance(getattr(plain, name), float)
    assert plain.total == 6.0


# ---------------------------------------------------------------------------
# gradient spot checks against central differences


def test_flow_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    recon = torch.randn(2, 4, 4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 4, 4, dtype=torch.float64)

    def loss_fn():
        return flow_loss(recon, target, smooth_eps=1e-8).total

    worst = finite_difference_check(loss_fn, [("recon", recon)], rng,
                                    picks=8, h=1e-6, rel_tol=1e-6)
    assert worst[4] <= 1e-6


def test_box_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    pred = torch.randn(3, 4, 4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(3, 4, 4, dtype=torch.float64)

    def loss_fn():
        return box_loss(pred, target)

    worst = finite_difference_check(loss_fn, [("pred", pred)], rng,
                                    picks=8, h=1e-6, rel_tol=1e-6)
    assert worst[4] <= 1e-6
