import hashlib
import logging
import math
import torch

from collections import OrderedDict
from torch import nn

from .errors import ConfigError, DataError, GraphError, ShapeError
from .rng import Rng


logger = logging.getLogger(__name__)


class Classifier(nn.Module):
    """A feature extractor followed by a linear head.

    `forward` returns both the penultimate activation `z` and the logits,
    and the logits are exactly `head(z)`.
    """

    def __init__(self, architecture: str, features: nn.Sequential, head: nn.Linear, input_shape: tuple[int, int, int]):
        super().__init__()
        self.architecture = architecture
        self.features = features
        self.head = head
        self.input_shape = input_shape

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    @property
    def num_classes(self) -> int:
        return self.head.out_features

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.architecture} expects [B, {', '.join(map(str, self.input_shape))}], got {tuple(x.shape)}")

        z = self.features(x)
        return z, self.head(z)


def _mnist_cnn() -> Classifier:
    features = nn.Sequential(
        OrderedDict(
            [
                ("conv1", nn.Conv2d(1, 8, kernel_size=5, stride=1)),
                ("relu1", nn.ReLU()),
                ("pool1", nn.MaxPool2d(2)),
                ("conv2", nn.Conv2d(8, 16, kernel_size=5, stride=1)),
                ("relu2", nn.ReLU()),
                ("pool2", nn.MaxPool2d(2)),
                ("flatten", nn.Flatten()),
                ("fc1", nn.Linear(16 * 4 * 4, 128)),
                ("relu3", nn.ReLU()),
                ("fc2", nn.Linear(128, 64)),
                ("relu4", nn.ReLU()),
            ]
        )
    )
    return Classifier("mnist-cnn", features, nn.Linear(64, 10), (1, 28, 28))


def _shapes_cnn() -> Classifier:
    widths = [3, 16, 32, 32, 64]
    layers = []
    for i in range(4):
        layers.append((f"conv{i + 1}", nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, stride=2, padding=1)))
        layers.append((f"relu{i + 1}", nn.ReLU()))
    layers += [
        ("flatten", nn.Flatten()),
        ("fc1", nn.Linear(64 * 4 * 4, 64)),
        ("relu5", nn.ReLU()),
    ]
    return Classifier("shapes-cnn", nn.Sequential(OrderedDict(layers)), nn.Linear(64, 8), (3, 64, 64))


def _cifar_cnn() -> Classifier:
    widths = [3, 16, 32, 64]
    layers = []
    for i in range(3):
        layers.append((f"conv{i + 1}", nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, padding=1)))
        layers.append((f"relu{i + 1}", nn.ReLU()))
        layers.append((f"pool{i + 1}", nn.MaxPool2d(2)))
    layers += [
        ("flatten", nn.Flatten()),
        ("fc1", nn.Linear(64 * 4 * 4, 128)),
        ("relu4", nn.ReLU()),
    ]
    return Classifier("cifar-cnn", nn.Sequential(OrderedDict(layers)), nn.Linear(128, 10), (3, 32, 32))


ARCHITECTURES = {
    "mnist-cnn": _mnist_cnn,
    "shapes-cnn": _shapes_cnn,
    "cifar-cnn": _cifar_cnn,
}


@torch.no_grad()
def init_parameters(model: Classifier, rng: Rng) -> None:
    """Weights and biases of every layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), in module order."""
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            bound = 1.0 / math.sqrt(module.weight[0].numel())
            module.weight.copy_(rng.uniform(-bound, bound, tuple(module.weight.shape)))
            module.bias.copy_(rng.uniform(-bound, bound, tuple(module.bias.shape)))


def check_live_gradients(model: Classifier, rng: Rng, batch: int = 8) -> None:
    x = rng.uniform(0.0, 1.0, (batch, *model.input_shape))
    y = torch.from_numpy(rng.integers(0, model.num_classes, size=batch))

    _, logits = model(x)
    loss = nn.functional.cross_entropy(logits, y)
    grads = torch.autograd.grad(loss, list(model.parameters()))

    for (name, _), g in zip(model.named_parameters(), grads):
        if not torch.any(g != 0):
            raise GraphError(f"{model.architecture}: parameter {name} receives no gradient")


def build(architecture: str, seed: int) -> Classifier:
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture '{architecture}'")

    model = ARCHITECTURES[architecture]().to(torch.float64)

    rng = Rng(seed)
    init_parameters(model, rng)
    check_live_gradients(model, rng.spawn(1))

    logger.info(f"Built {architecture} with {parameter_count(model)} parameters")

    return model


def forward(model: Classifier, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return model(x)


def predict_proba(model: Classifier, x: torch.Tensor) -> torch.Tensor:
    _, logits = model(x)
    return torch.softmax(logits, dim=1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_hash(model: nn.Module) -> str:
    sha1 = hashlib.sha1()
    for name, p in model.state_dict().items():
        sha1.update(name.encode("utf-8"))
        sha1.update(p.detach().contiguous().numpy().tobytes())
    return sha1.hexdigest()


def state_tensors(model: Classifier) -> dict[str, torch.Tensor]:
    return {f"model.{name}": p.detach().clone() for name, p in model.state_dict().items()}


def load_state(model: Classifier, tensors: dict[str, torch.Tensor]) -> Classifier:
    """Copy `model.*` tensors from a checkpoint; any missing or mis-shaped tensor is a data error."""
    state = model.state_dict()

    for name, current in state.items():
        stored = tensors.get(f"model.{name}")
        if stored is None:
            raise DataError(f"checkpoint has no tensor for {model.architecture} parameter {name}")
        if stored.shape != current.shape:
            raise DataError(
                f"checkpoint tensor {name} has shape {tuple(stored.shape)}, "
                f"{model.architecture} expects {tuple(current.shape)}"
            )

    extra = {k for k in tensors if k.startswith("model.")} - {f"model.{n}" for n in state}
    if extra:
        raise DataError(f"checkpoint has parameters {model.architecture} does not: {', '.join(sorted(extra))}")

    model.load_state_dict({name: tensors[f"model.{name}"] for name in state})
    return model
