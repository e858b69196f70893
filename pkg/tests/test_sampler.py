import numpy as np
import pytest
import torch

from conftest import EchoModel, OracleModel
from vidinpaint.checkpoint import CheckpointError
from vidinpaint.diffusion import make_schedule
from vidinpaint.model import build_model, predict_x0
from vidinpaint.sampler import (InferenceState, advance, advance_to, finalize, inference_stream,
                                init_inference, observed, predict_tiled, retained_checkpoints,
                                sample_many, _tile_starts)
from vidinpaint.trainer import make_interval_plan, run_interval_training


@pytest.fixture(scope="module")
def retained_run(tmp_path_factory):
    from conftest import TINY_MASKS
    from vidinpaint.synthetic import drifting_texture, square_mask
    from vidinpaint.trainer import TrainConfig

    directory = tmp_path_factory.mktemp("retained")
    video = drifting_texture(frames=6, height=16, width=16, seed=3, cutoff=0.2)
    mask = square_mask(6, 16, 16, side=6)
    sched = make_schedule(20, 1e-3, 0.2)
    # width 2 tends to collapse to an x_t-independent predictor; width 6 keeps the samples distinct
    cfg = TrainConfig(channels=6, clip_len=4, learning_rate=1e-3, masks=TINY_MASKS)
    result = run_interval_training(video, mask, make_interval_plan(20, 5, 8), sched, cfg, seed=11,
                                   checkpoint_dir=directory, retain=True)
    return video, mask, result, directory


def test_oracle_chain_reaches_clean_video(random_clip):
    sched = make_schedule(50, 1e-3, 0.3)
    model = OracleModel(random_clip, sched.T)
    mask = torch.ones(4, 16, 16, 1)
    state = init_inference(random_clip.shape, sched.T, np.random.default_rng(0))
    advance_to(state, model, observed(random_clip, mask), mask, sched, 1)
    assert state.cursor == 0
    assert (state.x_test - random_clip).abs().max().item() <= 1e-5


def test_cursor_counts_down_and_underflows(random_clip):
    sched = make_schedule(5)
    model = OracleModel(random_clip, 5)
    mask = torch.zeros(4, 16, 16, 1)
    state = init_inference(random_clip.shape, 5, np.random.default_rng(0))
    trace = []
    advance_to(state, model, random_clip, mask, sched, 3, trace=trace)
    assert state.cursor == 2 and trace == [("infer", 5), ("infer", 4), ("infer", 3)]
    advance_to(state, model, random_clip, mask, sched, 1, trace=trace)
    assert [t for _, t in trace] == [5, 4, 3, 2, 1]
    with pytest.raises(ValueError, match="underflow"):
        advance(state, model, random_clip, mask, sched)


def test_inference_deterministic_per_stream(random_clip):
    sched = make_schedule(10, 1e-3, 0.2)
    model = build_model(2, seed=0, T=10)
    mask = torch.zeros(4, 16, 16, 1)
    mask[:, 4:10, 4:10] = 1

    def run(k):
        state = init_inference(random_clip.shape, 10, inference_stream(7, k))
        advance_to(state, model, observed(random_clip, mask), mask, sched, 1)
        return finalize(state, random_clip, mask)

    assert torch.equal(run(1), run(1))
    assert not torch.equal(run(1), run(2))


def test_streams_are_independent():
    a = inference_stream(3, 0).standard_normal(1000)
    b = inference_stream(3, 1).standard_normal(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_finalize_cases(random_clip):
    generated = torch.rand(4, 16, 16, 3) * 4 - 2  # outside [-1, 1] on purpose
    zeros = torch.zeros(4, 16, 16, 1)
    ones = torch.ones(4, 16, 16, 1)
    state = InferenceState(generated, 0, None)
    assert torch.equal(finalize(state, random_clip, zeros), random_clip)
    assert torch.equal(finalize(state, random_clip, ones), generated.clamp(-1, 1))
    mixed = (torch.rand(4, 16, 16, 1, generator=torch.Generator().manual_seed(1)) > 0.5).float()
    out = finalize(state, random_clip, mixed)
    keep = (mixed == 0).expand_as(out)
    assert out[keep].numpy().tobytes() == random_clip[keep].numpy().tobytes()
    with pytest.raises(ValueError, match="not finished"):
        finalize(InferenceState(generated, 3, None), random_clip, zeros)


def test_tile_starts_cover():
    for L in (20, 21, 35, 50, 97):
        starts = _tile_starts(L, 20, 4)
        covered = set()
        for s in starts:
            covered.update(range(s, s + 20))
        assert covered == set(range(L))
        assert starts[-1] + 20 == L or L == 20


def test_tiled_prediction_matches_local_model():
    model = EchoModel(30)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(47, 8, 8, 3, generator=g)
    y = torch.randn(47, 8, 8, 3, generator=g)
    m = torch.zeros(47, 8, 8, 1)
    with torch.no_grad():
        full = predict_x0(model, x, y, 3, m)
        tiled = predict_tiled(model, x, y, 3, m)
    assert torch.allclose(full, tiled, atol=1e-6)


def test_sample_one_reproduces_training_output(retained_run):
    video, mask, result, directory = retained_run
    ckpts = retained_checkpoints(directory)
    assert len(ckpts) == 4
    one = sample_many(ckpts, video, mask, 1, seed=11)
    assert torch.equal(one.samples[0], result.output)


def test_batched_samples_match_unbatched(retained_run):
    video, mask, _, directory = retained_run
    ckpts = retained_checkpoints(directory)
    a = sample_many(ckpts, video, mask, 3, seed=11, batch_size=1)
    b = sample_many(ckpts, video, mask, 3, seed=11, batch_size=3)
    for p, q in zip(a.samples, b.samples):
        assert torch.allclose(p, q, atol=1e-5)


def test_samples_differ_only_inside_mask(retained_run):
    video, mask, _, directory = retained_run
    s = sample_many(retained_checkpoints(directory), video, mask, 2, seed=11)
    inside = (mask > 0).expand_as(video)
    assert not torch.equal(s.samples[0][inside], s.samples[1][inside])
    assert torch.equal(s.samples[0][~inside], video[~inside])
    assert torch.equal(s.samples[1][~inside], video[~inside])


def test_mean_of_many_samples_has_lower_variance(retained_run):
    # squared deviation from an independent held-out mean: about 1.01 sigma^2 for a single sample,
    # about 0.02 sigma^2 for a 100-sample mean
    video, mask, _, directory = retained_run
    s = sample_many(retained_checkpoints(directory), video, mask, 200, seed=11, batch_size=50)
    inside = (mask > 0).expand_as(video)
    mean_a = torch.stack(s.samples[:100]).mean(dim=0)
    mean_b = torch.stack(s.samples[100:]).mean(dim=0)
    spread_mean = ((mean_a - mean_b)[inside] ** 2).mean().item()
    spreads = [((x - mean_b)[inside] ** 2).mean().item() for x in s.samples[:100]]
    assert spread_mean < min(spreads)
    assert torch.allclose(s.mean, (mean_a + mean_b) / 2, atol=1e-6)


def test_sample_errors(retained_run, tmp_path):
    video, mask, _, directory = retained_run
    ckpts = retained_checkpoints(directory)
    with pytest.raises(ValueError):
        sample_many(ckpts, video, mask, 0, seed=1)
    with pytest.raises(CheckpointError, match="expected 4"):
        sample_many(ckpts[:2], video, mask, 1, seed=1)
    with pytest.raises(CheckpointError):
        retained_checkpoints(tmp_path)
