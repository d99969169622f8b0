"""Training tests: Adam closed forms, resample oracle, loop determinism."""

import math
from dataclasses import replace
from fractions import Fraction
from functools import reduce as functools_reduce

import numpy as np
import pytest

from mvfouls.data import Split, load_manifest, split_actions
from mvfouls.errors import ConfigError, ContractError
from mvfouls.model import (
    Aggregation,
    EncoderKind,
    ModelConfig,
    TaskMode,
    forward_logits,
    init_model,
)
from mvfouls.synth import GenConfig, generate, uniform_class_distribution
from mvfouls.tensor import Parameter, Tape, Tensor, add, scale, softmax_cross_entropy
from mvfouls.train import (
    OptimState,
    TrainConfig,
    action_labels,
    adam_step,
    collect_grads,
    epoch_lr,
    mappable_actions,
    prepare_views,
    resample_frames,
    resample_indices,
    train,
)

SMALL_GEN = dict(
    frames_per_clip=16,
    height=8,
    width=8,
    class_distribution=uniform_class_distribution(),
    live_informative_prob=1.0,
    noise_std=0.02,
)

SMALL_MODEL = ModelConfig(
    encoder_kind=EncoderKind.TEMPORAL_CONV,
    feature_dim=8,
    aggregation=Aggregation.MAX,
    task_mode=TaskMode.SINGLE_FOUL,
    hidden_dim=8,
    frames=16,
    height=8,
    width=8,
)


def small_dataset(tmp_path, n=24, seed=0, fractions=(1.0, 0.0, 0.0)):
    generate(GenConfig(n_actions=n, seed=seed, **SMALL_GEN), tmp_path)
    manifest = load_manifest(tmp_path / "manifest.json")
    return split_actions(manifest, seed=seed, fractions=fractions)


# ------------------------------------------------------------------- adam

def make_param(name, values):
    return Parameter(name, Tensor(values, requires_grad=True))


def test_adam_first_step_closed_form():
    p = make_param("w", [0.0])
    state = OptimState.for_params([p])
    adam_step([p], {"w": np.array([1.0])}, state, lr=0.1)
    want = -0.1 / (1.0 + 1e-8)  # bias correction cancels on the first step
    assert abs(p.tensor.data[0] - want) < 1e-16
    assert round(p.tensor.data[0], 8) == -0.1


def test_adam_zero_gradient_keeps_params_but_counts_step():
    p = make_param("w", [0.7, -0.2])
    state = OptimState.for_params([p])
    adam_step([p], {"w": np.zeros(2)}, state, lr=0.1)
    assert p.tensor.data.tolist() == [0.7, -0.2]
    assert state.t == 1


def test_adam_equal_gradients_equal_updates():
    a = make_param("a", [1.0])
    b = make_param("b", [5.0])
    state = OptimState.for_params([a, b])
    for step in range(3):
        g = np.array([0.3 + step])
        adam_step([a, b], {"a": g.copy(), "b": g.copy()}, state, lr=0.01)
    assert abs((a.tensor.data[0] - 1.0) - (b.tensor.data[0] - 5.0)) < 1e-12


def test_adam_missing_grad_names_parameter():
    p = make_param("encoder.fc1.weight", [0.0])
    state = OptimState.for_params([p])
    with pytest.raises(ContractError) as exc:
        adam_step([p], {}, state, lr=0.1)
    assert "encoder.fc1.weight" in str(exc.value)


def test_epoch_lr_schedule():
    cfg = TrainConfig()
    assert epoch_lr(cfg, 0) == 1e-4
    assert epoch_lr(cfg, 1) == pytest.approx(9.5e-5)
    flat = TrainConfig(lr_decay_per_epoch=1.0)
    assert epoch_lr(flat, 7) == 1e-4


# -------------------------------------------------------------- resample

def resample_oracle(frame_count, contact, fps):
    anchor = Fraction(frame_count // 2 if contact is None else contact)
    out = []
    for k in range(16):
        v = anchor + Fraction(k - 8) * Fraction(16, fps) + Fraction(1, 2)
        out.append(min(max(math.floor(v), 0), frame_count - 1))
    return out


def test_resample_stride_one_window():
    assert resample_indices(52, 26, 16) == list(range(18, 34))


def test_resample_stride_two():
    assert resample_indices(52, 26, 8) == list(range(10, 41, 2))


def test_resample_clamps_near_start():
    idx = resample_indices(52, 4, 5)
    assert len(idx) == 16
    assert idx[:3] == [0, 0, 0]  # positions before the clip clamp to 0
    assert idx == resample_oracle(52, 4, 5)
    assert all(0 <= i < 52 for i in idx)


def test_resample_missing_contact_uses_midpoint():
    assert resample_indices(52, None, 16) == resample_indices(52, 26, 16)


def test_resample_rejects_unknown_fps():
    with pytest.raises(ConfigError):
        resample_indices(52, 26, 10)


def test_resample_matches_fraction_oracle_1000_cases():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        frame_count = int(rng.integers(16, 121))
        contact = None if rng.random() < 0.1 else int(rng.integers(0, frame_count))
        fps = int(rng.choice([5, 8, 12, 16]))
        got = resample_indices(frame_count, contact, fps)
        assert got == resample_oracle(frame_count, contact, fps)
        assert all(a <= b for a, b in zip(got, got[1:]))


def test_resample_frames_gathers_rows():
    clip = np.arange(20 * 2 * 2, dtype=np.float64).reshape(20, 2, 2)
    out = resample_frames(clip, 10, 16)
    assert out.shape == (16, 2, 2)
    assert np.array_equal(out[0], clip[2])


# ------------------------------------------------------- loss assembly

def batch_and_peraction_grads(model, actions_views_labels):
    """Gradient of the averaged batch loss vs mean of per-action grads."""
    with Tape() as tape:
        losses = []
        for views, label in actions_views_labels:
            logits = forward_logits(model, [Tensor(v) for v in views])["foul"]
            losses.append(softmax_cross_entropy(logits, [label]))
        total = scale(functools_reduce(add, losses), 1.0 / len(losses))
        tape.backward(total)
    batch_grad = model.param("encoder.fc1.weight").grad.copy()
    model.zero_grads()

    mean_grad = np.zeros_like(batch_grad)
    for views, label in actions_views_labels:
        with Tape() as tape:
            logits = forward_logits(model, [Tensor(v) for v in views])["foul"]
            tape.backward(softmax_cross_entropy(logits, [label]))
        mean_grad += model.param("encoder.fc1.weight").grad
        model.zero_grads()
    return batch_grad, mean_grad / len(actions_views_labels)


def test_batch_gradient_is_mean_of_per_action_gradients(tmp_path):
    manifest = small_dataset(tmp_path, n=6)
    model = init_model(SMALL_MODEL, seed=0)
    rows = mappable_actions(manifest, Split.TRAIN, ["foul"])
    data = [(prepare_views(manifest, a), lab["foul"]) for a, lab in rows]
    batch_grad, mean_grad = batch_and_peraction_grads(model, data)
    assert np.max(np.abs(batch_grad - mean_grad)) < 1e-12


def test_multitask_gradient_is_weighted_sum_of_task_gradients(tmp_path):
    manifest = small_dataset(tmp_path, n=4)
    model = init_model(replace(SMALL_MODEL, task_mode=TaskMode.MULTI_TASK), seed=1)
    rows = mappable_actions(manifest, Split.TRAIN, ["foul", "offence"])
    action, labels = rows[0]
    views = [Tensor(v) for v in prepare_views(manifest, action)]
    a_foul, a_off = 0.7, 1.3

    def grad_of(task=None):
        with Tape() as tape:
            logits = forward_logits(model, views)
            if task is not None:
                loss = softmax_cross_entropy(logits[task], [labels[task]])
            else:
                loss = add(
                    scale(softmax_cross_entropy(logits["foul"], [labels["foul"]]), a_foul),
                    scale(softmax_cross_entropy(logits["offence"], [labels["offence"]]), a_off),
                )
            tape.backward(loss)
        g = model.param("encoder.fc1.weight").grad.copy()
        model.zero_grads()
        return g

    combined = grad_of()
    summed = a_foul * grad_of("foul") + a_off * grad_of("offence")
    assert np.max(np.abs(combined - summed)) < 1e-12


# ---------------------------------------------------------------- train()

def test_train_deterministic_bitwise(tmp_path):
    manifest = small_dataset(tmp_path, n=16)
    cfg = TrainConfig(max_epochs=2, seed=5)
    m1, h1 = train(init_model(SMALL_MODEL, 3), manifest, cfg)
    m2, h2 = train(init_model(SMALL_MODEL, 3), manifest, cfg)
    assert m1.state_bytes() == m2.state_bytes()
    assert h1.to_dict() == h2.to_dict()


def test_train_loss_decreases(tmp_path):
    manifest = small_dataset(tmp_path, n=32, seed=1)
    cfg = TrainConfig(max_epochs=10, seed=0, lr0=2e-3)
    _, history = train(init_model(SMALL_MODEL, 0), manifest, cfg)
    assert history.epochs[-1].train_loss < history.epochs[0].train_loss


def test_train_full_batch_equals_manual_step(tmp_path):
    manifest = small_dataset(tmp_path, n=6, seed=2)
    rows = mappable_actions(manifest, Split.TRAIN, ["foul"])
    n = len(rows)

    cfg = TrainConfig(max_epochs=1, batch_size=n, seed=4)
    trained, _ = train(init_model(SMALL_MODEL, 7), manifest, cfg)

    # manual replica: one full-batch step in the shuffled epoch order
    model = init_model(SMALL_MODEL, 7)
    from mvfouls.train import OptimState as OS

    order = np.random.default_rng(np.random.SeedSequence((4, 0))).permutation(n)
    with Tape() as tape:
        losses = []
        for i in order:
            action, labels = rows[i]
            logits = forward_logits(model, [Tensor(v) for v in prepare_views(manifest, action)])
            losses.append(scale(softmax_cross_entropy(logits["foul"], [labels["foul"]]), 1.0))
        tape.backward(scale(functools_reduce(add, losses), 1.0 / n))
    state = OS.for_params(model.parameters())
    adam_step(model.parameters(), collect_grads(model.parameters()), state, epoch_lr(cfg, 0))
    model.zero_grads()
    assert model.state_bytes() == trained.state_bytes()


def test_train_zero_off_weight_matches_single_task_trajectory(tmp_path):
    manifest = small_dataset(tmp_path, n=16, seed=3)
    # keep only actions mappable for both tasks so the batch streams align
    keep = tuple(
        a for a in manifest.actions if action_labels(a, ["foul", "offence"]) is not None
    )
    manifest = replace(manifest, actions=keep)
    shared = [
        "encoder.fc1.weight", "encoder.fc1.bias", "encoder.conv.kernel", "encoder.conv.bias",
        "head_foul.fc1.weight", "head_foul.fc1.bias", "head_foul.fc2.weight", "head_foul.fc2.bias",
    ]

    trajectories = {"single": [], "multi": []}

    def recorder(key):
        def cb(epoch, model, entry):
            trajectories[key].append({n: model.param(n).data.copy() for n in shared})
        return cb

    cfg = TrainConfig(max_epochs=3, seed=11, alpha_off=0.0)
    train(init_model(SMALL_MODEL, 5), manifest, cfg, on_epoch_end=recorder("single"))
    multi_model = init_model(replace(SMALL_MODEL, task_mode=TaskMode.MULTI_TASK), 5)
    train(multi_model, manifest, cfg, on_epoch_end=recorder("multi"))

    for single_snap, multi_snap in zip(trajectories["single"], trajectories["multi"]):
        for name in shared:
            diff = np.max(np.abs(single_snap[name] - multi_snap[name]))
            assert diff <= 1e-12, name


def test_train_best_valid_checkpoint_retained(tmp_path):
    manifest = small_dataset(tmp_path, n=24, seed=4, fractions=(0.7, 0.3, 0.0))
    snapshots = []

    def cb(epoch, model, entry):
        snapshots.append({p.name: p.tensor.data.copy() for p in model.parameters()})

    cfg = TrainConfig(max_epochs=3, seed=1)
    model, history = train(init_model(SMALL_MODEL, 2), manifest, cfg, on_epoch_end=cb)
    losses = [e.valid_loss for e in history.epochs]
    assert history.best_epoch == losses.index(min(losses))
    best = snapshots[history.best_epoch]
    for p in model.parameters():
        assert np.array_equal(p.tensor.data, best[p.name]), p.name


def test_train_empty_split_is_config_error(tmp_path):
    manifest = small_dataset(tmp_path, n=4, fractions=(0.0, 0.0, 1.0))
    with pytest.raises(ConfigError):
        train(init_model(SMALL_MODEL, 0), manifest, TrainConfig(max_epochs=1))


def test_train_class_weighting_changes_updates(tmp_path):
    manifest = small_dataset(tmp_path, n=16, seed=6)
    base = TrainConfig(max_epochs=1, seed=0)
    weighted = TrainConfig(max_epochs=1, seed=0, class_weighting=True)
    m1, _ = train(init_model(SMALL_MODEL, 1), manifest, base)
    m2, _ = train(init_model(SMALL_MODEL, 1), manifest, weighted)
    assert m1.state_bytes() != m2.state_bytes()


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr0=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_per_epoch=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(alpha_foul=-1.0).validate()
