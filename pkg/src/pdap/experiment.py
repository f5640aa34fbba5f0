"""Experiment configuration and synthetic data for the Helmholtz source problem."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from randomgen import Xoshiro256

from .measure import DiscreteMeasure
from .objective import ProblemSpec, QuadraticLoss, cost_from_config
from .operator import Kernel, apply_K, kernel_from_config
from .solver import SolverConfig

_MASK64 = (1 << 64) - 1

DEFAULT_TRUTH = {
    "positions": [[-0.6], [0.1], [0.55]],
    # one list per channel, complex numbers as [re, im]
    "coefficients": [
        [[1.0, 0.0], [0.8, -0.4], [-0.6, 0.7]],
        [[0.5, 0.5], [-0.9, 0.1], [0.7, -0.3]],
    ],
}


def splitmix64(seed: int, n: int) -> list[int]:
    """First n outputs of the splitmix64 sequence started at ``seed``."""
    x = seed & _MASK64
    out = []
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


def make_rng(seed: int) -> np.random.Generator:
    """numpy Generator on xoshiro256** whose 256-bit state is four splitmix64 outputs of ``seed``."""
    bitgen = Xoshiro256(0)
    state = bitgen.state
    state["s"] = np.array(splitmix64(int(seed), 4), dtype=np.uint64)
    state["has_uint32"] = 0
    state["uinteger"] = 0
    bitgen.state = state
    return np.random.Generator(bitgen)


def _default_solvers() -> dict:
    return {
        "pdap": {"method": "pdap", "tol": 1e-12, "max_iter": 80},
        "gcg": {"method": "gcg", "tol": 1e-12, "max_iter": 50},
        "spinat1": {"method": "spinat", "spinat_steps": 1, "tol": 1e-12, "max_iter": 50},
        "spinat100": {"method": "spinat", "spinat_steps": 100, "tol": 1e-12, "max_iter": 50},
    }


@dataclass
class ExperimentConfig:
    kernel: dict = field(default_factory=lambda: {
        "type": "helmholtz", "kappas": [4 * np.pi, 6 * np.pi], "depth": 0.5, "n_obs": 7,
    })
    truth: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_TRUTH))
    noise_rel: float = 0.1
    seed: int = 1
    cost: dict = field(default_factory=lambda: {"type": "linear", "beta": 1.0})
    solvers: dict = field(default_factory=_default_solvers)
    reference: dict = field(default_factory=lambda: {"tol": 1e-13, "max_iter": 200, "lump_radius": 1e-5})
    output_dir: str = "out"

    def __post_init__(self):
        if not self.noise_rel >= 0:
            raise ValueError("noise_rel must be nonnegative")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        kernel = self.build_kernel()
        pos = np.asarray(self.truth["positions"], float).reshape(-1, kernel.d)
        if not np.all(kernel.domain.contains(pos)):
            raise ValueError("truth positions must lie in the domain")

    def build_kernel(self) -> Kernel:
        return kernel_from_config(self.kernel)

    def solver_config(self, name: str, **overrides) -> SolverConfig:
        if name not in self.solvers:
            raise KeyError(f"no solver configuration named {name!r}")
        return SolverConfig(**{**self.solvers[name], **overrides})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def truth_measure(cfg: ExperimentConfig, kernel: Kernel | None = None) -> DiscreteMeasure:
    """The exact source; coefficient layout (re c1, im c1, re c2, im c2, ...)."""
    kernel = kernel or cfg.build_kernel()
    pos = np.asarray(cfg.truth["positions"], float).reshape(-1, kernel.d)
    chans = np.asarray(cfg.truth["coefficients"], float)  # (C, N, 2)
    if chans.shape != (kernel.dim_h // 2, len(pos), 2):
        raise ValueError("truth coefficients must have shape (channels, points, 2)")
    coeffs = np.transpose(chans, (1, 0, 2)).reshape(len(pos), -1)
    return DiscreteMeasure(pos, coeffs)


def synth_data(cfg: ExperimentConfig, kernel: Kernel | None = None):
    """(u_star, y_d) with y_d = K u_star + w and ||w|| = noise_rel ||K u_star|| exactly."""
    kernel = kernel or cfg.build_kernel()
    u_star = truth_measure(cfg, kernel)
    y = apply_K(kernel, u_star)
    if cfg.noise_rel == 0:
        return u_star, y.copy()
    w = make_rng(cfg.seed).standard_normal(y.size)
    w *= cfg.noise_rel * np.linalg.norm(y) / np.linalg.norm(w)
    return u_star, y + w


def build_problem(cfg: ExperimentConfig):
    """(ProblemSpec, u_star) for the configured experiment."""
    kernel = cfg.build_kernel()
    u_star, y_d = synth_data(cfg, kernel)
    return ProblemSpec(kernel, QuadraticLoss(y_d), cost_from_config(cfg.cost)), u_star
