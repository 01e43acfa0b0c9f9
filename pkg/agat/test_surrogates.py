import math
import pytest
import torch

from .data.dataset import LabeledDataset
from .data.shapes import BASE_RADIUS, coverages, generate_shapes_dataset
from .diffengine import ops
from .diffengine.gradcheck import TOLERANCE, check_gradient
from .errors import ConfigError, DataError, GraphError
from .rng import Rng
from .surrogates import (
    IDENTITY_AFFINE,
    AffineSurrogate,
    BlurNoiseSurrogate,
    SoftShapesSurrogate,
    apply_affine,
    apply_blur_noise,
    apply_soft_shapes,
    make_surrogate,
    project_alpha,
)


def _identity(b):
    return torch.tensor(IDENTITY_AFFINE, dtype=torch.float64).repeat(b, 1)


def _rotation(degrees, b=1):
    c, s = math.cos(math.radians(degrees)), math.sin(math.radians(degrees))
    return torch.tensor([c, -s, 0.0, s, c, 0.0], dtype=torch.float64).repeat(b, 1)


def _total_variation(x):
    return (x[..., 1:, :] - x[..., :-1, :]).abs().sum() + (x[..., :, 1:] - x[..., :, :-1]).abs().sum()


def test_affine_identity(rng):
    x = rng.uniform(0, 1, (3, 2, 10, 10))

    assert (apply_affine(x, _identity(3)) - x).abs().max() < 1e-9


def test_affine_two_pixel_translation(rng):
    x = rng.uniform(0, 1, (2, 1, 9, 9))
    alpha = _identity(2)
    alpha[:, 2] = 2 * 2 / (9 - 1)

    expected = torch.zeros_like(x)
    expected[..., :-2] = x[..., 2:]

    assert torch.allclose(apply_affine(x, alpha), expected, atol=1e-9)


def test_four_quarter_turns_compose_to_identity(rng):
    x = rng.uniform(0, 1, (2, 1, 12, 12))

    out = x
    for _ in range(4):
        out = apply_affine(out, _rotation(90, 2))

    assert (out - x).abs().max() < 1e-5


def test_rotation_keeps_centered_dot_centered():
    x = torch.zeros(1, 1, 11, 11, dtype=torch.float64)
    x[..., 4:7, 4:7] = 1.0

    out = apply_affine(x, _rotation(45))

    assert out[0, 0, 5, 5] == pytest.approx(1.0)
    ys, xs = torch.meshgrid(torch.arange(11.0), torch.arange(11.0), indexing="ij")
    mass = out[0, 0].sum()
    assert (out[0, 0] * xs).sum() / mass == pytest.approx(5.0, abs=1e-9)
    assert (out[0, 0] * ys).sum() / mass == pytest.approx(5.0, abs=1e-9)


def test_translation_preserves_total_intensity(rng):
    x = torch.zeros(2, 1, 16, 16, dtype=torch.float64)
    x[..., 5:11, 6:10] = rng.uniform(0.2, 1, (2, 1, 6, 4))
    alpha = _identity(2)
    alpha[:, 2] = 1.3 * 2 / 15
    alpha[:, 5] = -0.7 * 2 / 15

    out = apply_affine(x, alpha)

    assert torch.allclose(out.sum(dim=(1, 2, 3)), x.sum(dim=(1, 2, 3)), atol=1e-6)


def _off_integer_affine(rng: Rng, b: int, size: int, margin: float = 1e-3) -> torch.Tensor:
    # sampled pixel positions must stay clear of the bilinear cell edges
    while True:
        alpha = _identity(b) + rng.uniform(-0.1, 0.1, (b, 6))
        pixels = (ops.affine_grid(alpha, (b, 1, size, size)) + 1) * (size - 1) / 2
        frac = pixels - pixels.round()
        if frac.abs().min() > margin:
            return alpha


def test_affine_gradient_matches_finite_differences(rng):
    x = rng.uniform(0, 1, (2, 1, 8, 8))
    alpha = _off_integer_affine(rng, 2, 8)
    probe = rng.uniform(-1, 1, (2, 1, 8, 8))

    assert check_gradient(lambda a: (apply_affine(x, a) * probe).sum(), alpha) < TOLERANCE
    assert check_gradient(lambda v: (apply_affine(v, alpha) * probe).sum(), x) < TOLERANCE


def test_blur_noise_near_zero_attributes_is_identity(rng):
    x = rng.uniform(0, 1, (2, 3, 8, 8))
    alpha = torch.tensor([[1e-6, 0.0], [1e-6, 0.0]], dtype=torch.float64)

    assert (apply_blur_noise(x, alpha, rng.normal(x.shape)) - x).abs().max() < 1e-6


def test_blur_keeps_constant_images():
    x = torch.full((3, 1, 10, 10), 0.4, dtype=torch.float64)
    alpha = torch.tensor([[0.5, 0.0], [1.7, 0.0], [3.0, 0.0]], dtype=torch.float64)

    assert torch.allclose(apply_blur_noise(x, alpha), x, atol=1e-12)


def test_frozen_noise_scale():
    surrogate = BlurNoiseSurrogate()
    x = torch.zeros(64, 3, 32, 32, dtype=torch.float64)
    alpha = torch.tensor([[0.0, 0.1]], dtype=torch.float64).repeat(64, 1)

    out = surrogate.apply(x, alpha, **surrogate.context(x, torch.zeros(64, dtype=torch.long), Rng(0)))

    assert 0.095 <= out.std().item() <= 0.105


@pytest.mark.parametrize("sigma", [0.3, 0.8, 1.5, 2.9])
def test_blur_does_not_increase_total_variation(rng, sigma):
    x = rng.uniform(0, 1, (1, 1, 16, 16))
    alpha = torch.tensor([[sigma, 0.0]], dtype=torch.float64)

    assert _total_variation(apply_blur_noise(x, alpha)) <= _total_variation(x) + 1e-12


def test_blur_noise_gradient_matches_finite_differences(rng):
    surrogate = BlurNoiseSurrogate()
    x = rng.uniform(0, 1, (2, 1, 9, 9))
    context = surrogate.context(x, torch.zeros(2, dtype=torch.long), rng)
    probe = rng.uniform(-1, 1, (2, 1, 9, 9))
    # 3 * sigma stays away from an integer
    alpha = torch.tensor([[0.9, 0.05], [1.45, 0.2]], dtype=torch.float64)

    err = check_gradient(lambda a: (surrogate.apply(x, a, **context) * probe).sum(), alpha)

    assert err < TOLERANCE


def test_negative_blur_noise_attributes_rejected(rng):
    with pytest.raises(GraphError):
        apply_blur_noise(rng.uniform(0, 1, (1, 1, 4, 4)), torch.tensor([[-0.3, 0.0]], dtype=torch.float64))


def _white(b):
    return torch.ones(b, 3, dtype=torch.float64)


def test_soft_disc_mass_matches_area():
    alpha = torch.tensor([[0.0, 0.0, 1.2, 50.0, -50.0, -50.0]], dtype=torch.float64)

    mass = SoftShapesSurrogate().apply(None, alpha, colors=_white(1))[0, 0].sum().item()

    assert mass == pytest.approx(math.pi * (1.2 * BASE_RADIUS) ** 2, rel=0.05)


def test_moving_cx_moves_the_centroid():
    alpha = torch.tensor([[0.0, 0.1, 0.9, 0.3, -0.2, 0.1]], dtype=torch.float64)
    moved = alpha.clone()
    moved[0, 0] += 0.1

    def centroid_x(a):
        img = apply_soft_shapes(a, torch.tensor([7]))[0, 0]
        xs = torch.arange(64, dtype=torch.float64)
        return ((img.sum(dim=0) * xs).sum() / img.sum()).item()

    assert centroid_x(moved) - centroid_x(alpha) == pytest.approx(0.1 * 64 / 2, abs=0.5)


def test_uniform_logits_average_the_pure_shapes():
    alpha = torch.tensor([[0.2, -0.3, 1.0, 0.7, 0.7, 0.7]], dtype=torch.float64)
    colors = torch.tensor([[0.2, 0.5, 1.0]], dtype=torch.float64)

    blended = SoftShapesSurrogate().apply(None, alpha, colors=colors)
    expected = coverages(alpha).mean(dim=1)[:, None] * colors[:, :, None, None]

    assert torch.allclose(blended, expected, atol=1e-14)


def test_soft_shapes_gradient_matches_finite_differences(rng):
    surrogate = SoftShapesSurrogate(size=32)
    colors = _white(2)
    probe = rng.uniform(-1, 1, (2, 3, 32, 32))
    alpha = torch.tensor([[0.1, -0.2, 0.9, 0.5, -0.3, 0.2], [-0.3, 0.25, 0.6, -1.0, 2.0, 0.4]], dtype=torch.float64)

    err = check_gradient(lambda a: (surrogate.apply(None, a, colors=colors) * probe).sum(), alpha)

    assert err < TOLERANCE


def test_surrogates_are_batch_independent(rng):
    x = rng.uniform(0, 1, (4, 1, 8, 8))
    alpha = _identity(4) + rng.uniform(-0.2, 0.2, (4, 6))
    perm = torch.tensor([2, 0, 3, 1])

    assert torch.allclose(apply_affine(x[perm], alpha[perm]), apply_affine(x, alpha)[perm], atol=1e-14)

    sigma = torch.tensor([[0.4, 0.1], [1.0, 0.0], [2.2, 0.2], [0.0, 0.05]], dtype=torch.float64)
    noise = rng.normal(x.shape)
    assert torch.allclose(
        apply_blur_noise(x[perm], sigma[perm], noise[perm]),
        apply_blur_noise(x, sigma, noise)[perm],
        atol=1e-14,
    )


def test_projection():
    lower = torch.tensor([0.0, 0.0], dtype=torch.float64)
    upper = torch.tensor([3.0, 0.3], dtype=torch.float64)
    inside = torch.tensor([[1.0, 0.2]], dtype=torch.float64)
    outside = torch.tensor([[-0.3, 0.5]], dtype=torch.float64)

    assert torch.equal(project_alpha(inside, lower, upper), inside)
    assert project_alpha(outside, lower, upper).tolist() == [[0.0, 0.3]]
    once = project_alpha(outside, lower, upper)
    assert torch.equal(project_alpha(once, lower, upper), once)


def test_affine_init():
    surrogate = AffineSurrogate(height=28)
    source = surrogate.source_alpha(None, torch.arange(5))

    assert torch.equal(surrogate.init_alpha(source, Rng(0), jitter=0.0).values, _identity(5))

    a = surrogate.init_alpha(source, Rng(3))
    b = surrogate.init_alpha(source, Rng(3))
    assert torch.equal(a.values, b.values)
    assert (a.values - _identity(5)).abs().max() <= 0.05
    assert a.in_bounds()


def test_affine_bounds_cover_the_swept_range():
    surrogate = AffineSurrogate(height=28)

    # 60 degree rotation at scale 1, and a 12 pixel shift
    rotation = _rotation(60)[0]
    assert torch.all(rotation >= surrogate.lower - 1e-12)
    assert torch.all(rotation <= surrogate.upper + 1e-12)
    assert surrogate.upper[2].item() == pytest.approx(12 / 14)


@pytest.mark.parametrize(
    "mode,start",
    [("blur-noise", [0.5, 0.02]), ("blur-only", [0.5, 0.0]), ("noise-only", [0.0, 0.02])],
)
def test_blur_noise_init(mode, start):
    surrogate = make_surrogate(mode, (3, 32, 32))
    init = surrogate.init_alpha(surrogate.source_alpha(None, torch.arange(3)), Rng(0))

    assert init.values.tolist() == [start] * 3
    assert init.in_bounds()


def test_pinned_coordinate_stays_pinned():
    surrogate = BlurNoiseSurrogate("blur-only")
    stepped = torch.tensor([[1.0, 0.2]], dtype=torch.float64)

    assert surrogate.project(stepped).tolist() == [[1.0, 0.0]]


def test_soft_shapes_init_starts_at_true_attributes():
    ds = generate_shapes_dataset(8, "iid", seed=1)
    surrogate = make_surrogate("soft-shapes", ds.image_shape)
    indices = torch.tensor([1, 4, 6])

    source = surrogate.source_alpha(ds, indices)
    init = surrogate.init_alpha(source, Rng(0))

    assert torch.equal(source, ds.attributes[indices])
    assert (init.values - source).abs().max() <= 0.05
    assert init.in_bounds()


def test_soft_shapes_needs_attributes():
    ds = LabeledDataset(torch.zeros(2, 3, 64, 64), torch.tensor([0, 1]), num_classes=8)

    with pytest.raises(DataError):
        SoftShapesSurrogate().source_alpha(ds, torch.arange(2))


def test_make_surrogate_errors():
    with pytest.raises(ConfigError):
        make_surrogate("attgan", (3, 64, 64))
    with pytest.raises(ConfigError):
        make_surrogate("soft-shapes", (1, 28, 28))
