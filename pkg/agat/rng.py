"""Seeded randomness.

Every stochastic choice in the toolkit (shuffles, noise draws, attribute
initialization, parameter init, test-set perturbations) is drawn from an
`Rng`, a thin wrapper over numpy's Philox4x64 counter-based generator.
Philox produces the same stream on every platform for a given seed, and its
state is a handful of 64-bit words that serialize cleanly into checkpoints.
"""

import numpy as np
import torch


class Rng:
    def __init__(self, seed: int, stream: int | None = None):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")

        self.seed = seed
        self.stream = stream

        entropy = [seed] if stream is None else [seed, stream]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def spawn(self, stream: int) -> "Rng":
        """An independent stream keyed by (seed, stream); does not advance this one."""
        return Rng(self.seed, stream)

    def uniform(self, low: float, high: float, shape) -> torch.Tensor:
        return torch.from_numpy(np.asarray(self._gen.uniform(low, high, size=shape), dtype=np.float64))

    def normal(self, shape) -> torch.Tensor:
        return torch.from_numpy(np.asarray(self._gen.standard_normal(size=shape), dtype=np.float64))

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=replace)

    def poisson(self, lam: np.ndarray) -> np.ndarray:
        return self._gen.poisson(lam)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size=size)

    def get_state(self) -> dict:
        state = self._gen.bit_generator.state

        return {
            "seed": self.seed,
            "stream": self.stream,
            "bit_generator": state["bit_generator"],
            "counter": [int(v) for v in state["state"]["counter"]],
            "key": [int(v) for v in state["state"]["key"]],
            "buffer": [int(v) for v in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = state["seed"]
        self.stream = state["stream"]
        self._gen.bit_generator.state = {
            "bit_generator": state["bit_generator"],
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], state["stream"])
        rng.set_state(state)
        return rng
