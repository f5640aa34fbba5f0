"""Quadratic loss F, cost G of the total variation, and j(u) = F(Ku) + G(||u||)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measure import DiscreteMeasure, Domain, tv_norm
from .operator import Kernel, apply_K


class Infeasible:
    """Tagged +infinity returned by j when the cost is an unsatisfied indicator."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFEASIBLE"

    def __bool__(self) -> bool:
        return False


INFEASIBLE = Infeasible()


class UnsupportedCost(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticLoss:
    y_d: np.ndarray

    def __call__(self, y: np.ndarray) -> float:
        return eval_F(self, y)

    def grad(self, y: np.ndarray) -> np.ndarray:
        return grad_F(self, y)


def eval_F(loss: QuadraticLoss, y: np.ndarray) -> float:
    r = np.asarray(y, dtype=float) - loss.y_d
    return 0.5 * float(r @ r)


def grad_F(loss: QuadraticLoss, y: np.ndarray) -> np.ndarray:
    return np.asarray(y, dtype=float) - loss.y_d


@dataclass(frozen=True)
class LinearCost:
    """G(m) = beta * m."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def __call__(self, m: float) -> float:
        return self.beta * m


@dataclass(frozen=True)
class NormBall:
    """G(m) = indicator of m <= M."""

    M: float

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")

    def __call__(self, m: float):
        return 0.0 if m <= self.M * (1 + 1e-14) else INFEASIBLE


def cost_from_config(cfg: dict):
    kind = cfg.get("type", "linear")
    if kind == "linear":
        return LinearCost(float(cfg.get("beta", 1.0)))
    if kind == "ball":
        return NormBall(float(cfg["M"]))
    raise ValueError(f"unknown cost type {kind!r}")


def cost_to_config(cost) -> dict:
    if isinstance(cost, LinearCost):
        return {"type": "linear", "beta": cost.beta}
    return {"type": "ball", "M": cost.M}


def g_sup_subdiff(cost, m_val: float) -> float:
    """sup of the subdifferential of G at m_val >= 0."""
    if isinstance(cost, LinearCost):
        return cost.beta
    # indicator of [0, M]: {0} inside, [0, inf) at the boundary
    return np.inf if m_val >= cost.M else 0.0


def g_trial_mass(cost, pnorm: float, M0: float) -> float:
    """Mass of the conditional-gradient trial Dirac.

    M0 if pnorm exceeds sup dG(M0), else the smallest element of (dG)^{-1}(pnorm).
    """
    if isinstance(cost, LinearCost):
        return M0 if pnorm > cost.beta else 0.0
    return M0 if pnorm > 0 else 0.0


def prox_group(v: np.ndarray, tau_beta: float) -> np.ndarray:
    """Prox of tau_beta*||.||_H (block soft thresholding)."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= tau_beta:
        return np.zeros_like(v)
    return (1.0 - tau_beta / nv) * v


def prox_group_blocks(v: np.ndarray, tau_beta: float) -> np.ndarray:
    """Blockwise prox for v of shape (N, dim_h)."""
    nv = np.linalg.norm(v, axis=1)
    scale = np.where(nv > tau_beta, 1.0 - tau_beta / np.where(nv > 0, nv, 1.0), 0.0)
    return scale[:, None] * v


@dataclass
class ProblemSpec:
    """min_u F(K u) + G(||u||) over measures on ``domain``; ``m0_bound`` bounds ||u|| on the sublevel set."""

    kernel: Kernel
    loss: QuadraticLoss
    cost: object
    domain: Domain | None = None
    m0_bound: float | None = None

    def __post_init__(self):
        if self.domain is None:
            self.domain = self.kernel.domain
        if self.m0_bound is None:
            self.m0_bound = default_m0(self)

    @property
    def scale(self) -> float:
        return 1.0 + eval_F(self.loss, np.zeros_like(self.loss.y_d))


def default_m0(prob: ProblemSpec, u0: DiscreteMeasure | None = None) -> float:
    """j(u0)/beta for the linear cost (F >= 0), M for the ball."""
    if isinstance(prob.cost, NormBall):
        return prob.cost.M
    if u0 is None:
        u0 = DiscreteMeasure.empty(prob.kernel.d, prob.kernel.dim_h)
    return float(eval_j(prob, u0)) / prob.cost.beta


def eval_j(prob: ProblemSpec, m: DiscreteMeasure):
    g = prob.cost(tv_norm(m))
    if g is INFEASIBLE:
        return INFEASIBLE
    return eval_F(prob.loss, apply_K(prob.kernel, m)) + g


def eval_j_finite(prob: ProblemSpec, m: DiscreteMeasure) -> float:
    """j(m) as a float; +inf for infeasible (only for comparisons outside arithmetic)."""
    val = eval_j(prob, m)
    return np.inf if val is INFEASIBLE else float(val)
