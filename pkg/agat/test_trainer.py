import csv
import json
import math
import pytest
import torch

from .config import AgatConfig, PgdConfig
from .conftest import synthetic_digits
from .errors import AugmentationAborted, ConfigError, TrainingAbort
from .losses import l_agat, l_ce, one_hot
from .models import Classifier, build, parameter_hash
from .rng import Rng
from .surrogates import AffineSurrogate, make_surrogate
from .trainer import (
    TrainingRun,
    _attribute_losses,
    augment_event,
    pgd_augment,
    pretrain,
    sample_sources,
    train_agat,
    train_baseline,
    write_train_log,
)


def _config(**overrides):
    values = dict(N_epochs=4, N_pre=2, N_aug=3, T_aug=0.25, M=2, eta=0.05, mu=0.1, batch_size=16, seed=0)
    values.update(overrides)
    return AgatConfig(**values)


def _pretrained(n=96, epochs=3, seed=0):
    data = synthetic_digits(n, seed=seed)
    model = build("mnist-cnn", seed=seed)
    pretrain(model, data, _config(N_pre=epochs, N_epochs=epochs + 1, eta=0.1))
    return model, data


def test_augmentation_epochs_follow_the_modulo_rule():
    r = Rng(42)
    for _ in range(20):
        n_epochs = int(r.integers(2, 40))
        n_pre = int(r.integers(1, n_epochs))
        n_aug = int(r.integers(1, 8))
        config = _config(N_epochs=n_epochs, N_pre=n_pre, N_aug=n_aug)

        expected = {n for n in range(1, n_epochs + 1) if n > n_pre and n % n_aug == 0}

        assert set(config.augmentation_epochs()) == expected

    assert _config(N_epochs=12, N_pre=5, N_aug=10).augmentation_epochs() == [10]
    assert _config(N_epochs=15, N_pre=5, N_aug=2).augmentation_epochs() == [6, 8, 10, 12, 14]


@pytest.mark.parametrize(
    "n_epochs,n_pre,n_aug,t_aug",
    [(5, 1, 2, 0.3), (6, 2, 2, 0.5), (4, 1, 4, 1.0), (5, 3, 1, 0.1)],
)
def test_store_grows_by_the_sample_count_per_event(n_epochs, n_pre, n_aug, t_aug):
    data = synthetic_digits(40, seed=1)
    config = _config(N_epochs=n_epochs, N_pre=n_pre, N_aug=n_aug, T_aug=t_aug, M=1)

    _, log = train_agat(build("mnist-cnn", seed=1), data, AffineSurrogate(height=28), config)

    per_event = math.floor(t_aug * 40)
    assert log.augmentation_epochs() == config.augmentation_epochs()
    assert all(e.n_generated == per_event for e in log.events)

    sizes = [e.store_size for e in log.epochs]
    assert sizes == sorted(sizes)
    assert sizes[-1] == 40 + len(log.events) * per_event
    assert len(data) == 40


def test_augment_event_bookkeeping():
    model, data = _pretrained()
    store = data.snapshot()
    surrogate = AffineSurrogate(height=28)
    config = _config(T_aug=0.3, M=3)
    before = parameter_hash(model)

    batch = augment_event(model, store, surrogate, config, Rng(3), epoch=7)

    assert parameter_hash(model) == before
    assert batch.event.epoch == 7
    assert batch.event.n_generated == math.floor(0.3 * 96) == len(batch.labels)
    assert len(store) == 96 + batch.event.n_generated
    assert store.generated[96:].all()
    assert len(set(batch.source_indices.tolist())) == len(batch.source_indices)
    assert torch.equal(batch.labels, data.labels[batch.source_indices])
    assert torch.equal(store.labels[96:], batch.labels)
    assert torch.all(batch.alpha >= surrogate.lower)
    assert torch.all(batch.alpha <= surrogate.upper)
    assert store.fingerprint(0, 96) == data.fingerprint()


def test_zero_inner_steps_render_the_initial_attributes():
    model, data = _pretrained()
    surrogate = AffineSurrogate(height=28)
    config = _config(T_aug=0.25, batch_size=64).model_copy(update={"M": 0})

    batch = augment_event(model, data.snapshot(), surrogate, config, Rng(11))

    rng = Rng(11)
    idx = sample_sources(data, 0.25, rng)
    alpha = surrogate.init_alpha(surrogate.source_alpha(data, idx), rng).values
    expected = surrogate.apply(data.images[idx], alpha, **surrogate.context(data.images[idx], data.labels[idx], rng))

    assert torch.equal(batch.source_indices, idx)
    assert torch.equal(batch.alpha, alpha)
    assert torch.equal(batch.images, expected)


def test_one_inner_step_follows_the_batch_mean_gradient():
    model, data = _pretrained()
    surrogate = AffineSurrogate(height=28)
    config = _config(T_aug=0.25, batch_size=64, M=1, mu=0.1)

    start = augment_event(model, data.snapshot(), surrogate, config.model_copy(update={"M": 0}), Rng(11))
    stepped = augment_event(model, data.snapshot(), surrogate, config, Rng(11))

    idx = start.source_indices
    x = data.images[idx]
    with torch.no_grad():
        z, logits = model(x)
        y_hat = torch.softmax(logits, dim=1)

    alpha = start.alpha.clone().requires_grad_(True)
    alpha_source = surrogate.source_alpha(data, idx)
    _, cls, const = _attribute_losses(
        model, surrogate, x, alpha, alpha_source, z, one_hot(data.labels[idx], 10), y_hat, {}, config
    )
    (grad,) = torch.autograd.grad(l_agat(cls, const, config.beta).mean(), alpha)
    expected = surrogate.project(alpha.detach() - config.mu * grad)

    assert len(idx) == 24
    assert torch.allclose(stepped.alpha, expected, rtol=0, atol=1e-12)


def test_inner_loop_pushes_samples_apart():
    model, data = _pretrained(n=128, epochs=4)
    config = _config(T_aug=0.5, M=10, mu=1.6, beta=5.0)

    batch = augment_event(model, data.snapshot(), AffineSurrogate(height=28), config, Rng(0))

    assert batch.event.const_increase_fraction >= 0.8
    assert batch.event.final_const > batch.event.initial_const


def test_ascent_changes_the_attributes():
    model, data = _pretrained()
    surrogate = AffineSurrogate(height=28)

    descent = augment_event(model, data.snapshot(), surrogate, _config(M=3), Rng(2))
    ascent = augment_event(model, data.snapshot(), surrogate, _config(M=3, inner_sign="ascent"), Rng(2))

    assert torch.equal(descent.source_indices, ascent.source_indices)
    assert not torch.equal(descent.alpha, ascent.alpha)


def test_blur_noise_event_on_color_images():
    data = synthetic_digits(32, seed=2, size=32, channels=3)
    model = build("cifar-cnn", seed=0)

    batch = augment_event(model, data.snapshot(), make_surrogate("blur-noise", (3, 32, 32)), _config(M=2), Rng(0))

    assert batch.images.shape == (8, 3, 32, 32)
    assert torch.all(batch.alpha[:, 0] <= 3.0)
    assert torch.all(batch.alpha[:, 1] <= 0.3)


class _NanSurrogate(AffineSurrogate):
    def apply(self, x, alpha, **context):
        return super().apply(x, alpha) * float("nan")


def test_non_finite_objective_aborts_the_event():
    model, data = _pretrained(epochs=1)

    with pytest.raises(AugmentationAborted):
        augment_event(model, data.snapshot(), _NanSurrogate(height=28), _config(), Rng(0))


def test_empty_sample_is_a_no_op():
    model, data = _pretrained(epochs=1)
    store = data.snapshot()

    batch = augment_event(model, store, AffineSurrogate(height=28), _config(T_aug=0.005), Rng(0))

    assert batch.event.n_generated == 0
    assert len(store) == len(data)


def test_pretrain_with_zero_step_leaves_parameters_alone():
    data = synthetic_digits(32)
    model = build("mnist-cnn", seed=0)
    before = parameter_hash(model)

    pretrain(model, data, _config().model_copy(update={"eta": 0.0}))

    assert parameter_hash(model) == before


def test_pretrain_learns_the_synthetic_digits():
    data = synthetic_digits(256, seed=4)
    model = build("mnist-cnn", seed=4)
    config = _config(N_pre=8, N_epochs=9, eta=0.1, batch_size=16)

    run = TrainingRun(model, data, config)
    records = [run.fit_epoch(epoch, "pretrain") for epoch in range(1, 9)]

    assert records[-1].train_accuracy > 60.0


def test_full_batch_descent_lowers_the_loss():
    data = synthetic_digits(48, seed=5)
    run = TrainingRun(build("mnist-cnn", seed=5), data, _config(batch_size=48, eta=0.01))

    first = run.fit_epoch(1, "pretrain").mean_loss
    second = run.fit_epoch(2, "pretrain").mean_loss

    assert second <= first


def test_divergence_guard():
    run = TrainingRun(build("mnist-cnn", seed=0), synthetic_digits(32), _config())
    run.fit_epoch(1, "pretrain")
    run.first_loss = 1e-6

    with pytest.raises(TrainingAbort):
        run.fit_epoch(2, "pretrain")


def test_identical_seeds_give_identical_logs():
    data = synthetic_digits(48, seed=6)
    config = _config(N_epochs=4, N_pre=1, N_aug=2)

    def run():
        model, log = train_agat(build("mnist-cnn", seed=0), data, AffineSurrogate(height=28), config, "fp")
        return parameter_hash(model), log.model_dump_json()

    assert run() == run()


def test_train_log_export(tmp_path):
    data = synthetic_digits(32, seed=6)
    _, log = train_agat(build("mnist-cnn", seed=0), data, AffineSurrogate(height=28), _config(N_epochs=3, N_pre=1, N_aug=2))

    csv_path, json_path = write_train_log(log, tmp_path)

    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert [r["phase"] for r in rows] == ["pretrain", "augment", "train"]
    assert rows[1]["mean_loss"] == ""

    saved = json.loads(json_path.read_text())
    assert "wall_time" not in saved
    assert saved["events"][0]["epoch"] == 2


def test_resume_matches_an_uninterrupted_run(tmp_path):
    data = synthetic_digits(40, seed=8)
    config = _config(N_epochs=5, N_pre=2, N_aug=2, T_aug=0.25)
    surrogate = AffineSurrogate(height=28)

    full, full_log = train_agat(build("mnist-cnn", seed=0), data, surrogate, config, "fp", output_dir=tmp_path)

    assert (tmp_path / "checkpoint-0002.bin").exists()
    assert (tmp_path / "checkpoint-0004.bin").exists()
    assert (tmp_path / "final.bin").exists()

    resumed, resumed_log = train_agat(
        build("mnist-cnn", seed=99),
        data,
        surrogate,
        config,
        "fp",
        resume=tmp_path / "checkpoint-0004.bin",
    )

    assert parameter_hash(resumed) == parameter_hash(full)
    assert resumed_log.model_dump() == full_log.model_dump()


def _linear_model():
    features = torch.nn.Sequential(torch.nn.Flatten())
    head = torch.nn.Linear(16, 3).to(torch.float64)
    with torch.no_grad():
        head.weight.copy_(Rng(0).uniform(-1, 1, (3, 16)))
        head.bias.zero_()
    return Classifier("linear", features, head, (1, 4, 4))


def test_pgd_with_zero_radius_is_identity(rng):
    x = rng.uniform(0, 1, (4, 1, 4, 4))

    out = pgd_augment(_linear_model(), x, torch.tensor([0, 1, 2, 0]), PgdConfig(epsilon=0.0))

    assert torch.equal(out, x)


@pytest.mark.parametrize("random_start", [False, True])
def test_pgd_stays_in_the_ball_and_the_image_range(rng, random_start):
    model = build("mnist-cnn", seed=1)
    x = rng.uniform(0, 1, (8, 1, 28, 28))
    y = torch.from_numpy(rng.integers(0, 10, size=8))
    pgd = PgdConfig(epsilon=8 / 255, step=2 / 255, steps=7, random_start=random_start)

    out = pgd_augment(model, x, y, pgd)

    assert (out - x).abs().max().item() <= pgd.epsilon * (1 + 1e-12)
    assert out.min() >= 0.0
    assert out.max() <= 1.0


def test_pgd_never_lowers_the_loss_of_a_linear_model(rng):
    model = _linear_model()
    x = rng.uniform(0.2, 0.8, (6, 1, 4, 4))
    y = torch.tensor([0, 1, 2, 2, 1, 0])

    losses = []
    for steps in range(6):
        out = pgd_augment(model, x, y, PgdConfig(epsilon=0.1, step=0.03, steps=steps))
        losses.append(l_ce(y, model(out)[1]).item())

    assert all(b >= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] > losses[0]


def test_pgd_raises_the_loss_of_a_trained_model():
    model, data = _pretrained(n=128, epochs=5)
    x, y = data.images[:32], data.labels[:32]

    out = pgd_augment(model, x, y, PgdConfig(epsilon=8 / 255, step=2 / 255, steps=7))

    assert l_ce(y, model(out)[1]).item() > l_ce(y, model(x)[1]).item()


def test_pgd_with_zero_radius_trains_the_plain_baseline():
    data = synthetic_digits(40, seed=9)
    config = _config(N_epochs=5, N_pre=2, N_aug=2)

    plain_model, plain = train_baseline(build("mnist-cnn", seed=0), data, config, "plain")
    pgd_model, pgd = train_baseline(
        build("mnist-cnn", seed=0), data, config.model_copy(update={"pgd_epsilon": 0.0}), "pgd-augment"
    )

    assert pgd.events == []
    assert [e.model_dump() for e in pgd.epochs] == [e.model_dump() for e in plain.epochs]
    assert parameter_hash(pgd_model) == parameter_hash(plain_model)


def test_pgd_baseline_appends_adversarial_samples():
    data = synthetic_digits(40, seed=9)
    config = _config(N_epochs=5, N_pre=2, N_aug=2, T_aug=0.25)

    _, log = train_baseline(build("mnist-cnn", seed=0), data, config, "pgd-augment")

    assert log.augmentation_epochs() == [4]
    assert log.events[0].n_generated == 10
    assert log.events[0].initial_const is None
    assert log.epochs[-1].store_size == 50


def test_plain_baseline_trains_every_epoch_and_smoothed_loss_falls():
    data = synthetic_digits(512, seed=10)
    config = _config(N_epochs=6, N_pre=2, N_aug=2, eta=0.05, batch_size=32)

    _, log = train_baseline(build("mnist-cnn", seed=0), data, config, "plain")

    assert [e.phase for e in log.epochs] == ["pretrain"] * 2 + ["train"] * 4
    losses = torch.tensor([e.mean_loss for e in log.epochs])
    smoothed = losses.unfold(0, 3, 1).mean(dim=1)
    assert torch.all(smoothed[1:] <= smoothed[:-1])


def test_unknown_baseline_mode():
    with pytest.raises(ConfigError):
        train_baseline(build("mnist-cnn", seed=0), synthetic_digits(8), _config(), "mixup")
