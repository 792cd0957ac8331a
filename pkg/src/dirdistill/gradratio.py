"""First-order gradient-balance analysis of the distillation losses.

Three stylized training situations are compared: a freshly initialized
model (uniform Dirichlet, alpha = 1), a model near convergence on a sparse
target, and a model that has made a strong mistake (mass on the wrong
class).  The diagnostic is the dimensionality-normalized ratio

    rho = (1/K) * |dL/dz_1| / |dL/dz_2|

of the head-class logit gradient against a representative tail-class
gradient.  A loss whose rho collapses as K grows spends its effort
modelling the tail of the class distribution; a healthy loss keeps rho
around a constant or growing level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dirichlet import DirichletParams, ProbVector
from .losses import (
    fkl_alpha_grad,
    nll_alpha_grad,
    rkl_alpha_grad,
    soft_ce_alpha_grad,
)

RHO_DENOM_FLOOR = 1e-300

LOSS_NAMES = ("CE", "NLL", "KL", "RKL", "RKL+1")


class ScenarioName(str, Enum):
    INITIALIZATION = "initialization"
    NEAR_CONVERGENCE = "near_convergence"
    MISCLASSIFICATION = "misclassification"


@dataclass(frozen=True)
class Scenario:
    name: ScenarioName
    k: int
    epsilon: float = 1e-4
    conc_model: float | None = None   # defaults to 90 * K
    conc_target: float | None = None  # defaults to 100 * K

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need K >= 2")
        # 5*epsilon must still leave a dominant head entry in pi_cnv
        if not 0.0 < self.epsilon < 0.1:
            raise ValueError("epsilon must lie in (0, 0.1)")
        for c in (self.conc_model, self.conc_target):
            if c is not None and c <= 0.0:
                raise ValueError("concentrations must be positive")

    @property
    def model_concentration(self) -> float:
        return 90.0 * self.k if self.conc_model is None else self.conc_model

    @property
    def target_concentration(self) -> float:
        return 100.0 * self.k if self.conc_target is None else self.conc_target


def sparse_simplex(k: int, mass: float) -> np.ndarray:
    """[1 - mass, mass/(K-1), ..., mass/(K-1)]; sums to 1 exactly enough."""
    out = np.full(k, mass / (k - 1))
    out[0] = 1.0 - mass
    return out


def build_scenario(s: Scenario):
    """Model Dirichlet, target mean and proxy Dirichlet for one scenario."""
    pi_tgt = sparse_simplex(s.k, s.epsilon)
    if s.name is ScenarioName.INITIALIZATION:
        alpha = np.ones(s.k)
    else:
        pi_cnv = sparse_simplex(s.k, 5.0 * s.epsilon)
        if s.name is ScenarioName.MISCLASSIFICATION:
            pi_cnv = pi_cnv[::-1]
        alpha = pi_cnv * s.model_concentration
    proxy = pi_tgt * s.target_concentration
    return DirichletParams(alpha), ProbVector(pi_tgt), DirichletParams(proxy)


def rho(grad_z: np.ndarray) -> float:
    """(1/K) |g_1| / |g_2|; +inf when the tail gradient underflows."""
    g = np.asarray(grad_z, dtype=float)
    if g.size < 2:
        raise ValueError("need at least two gradient components")
    denom = abs(float(g[1]))
    if denom <= RHO_DENOM_FLOOR:
        return math.inf
    return abs(float(g[0])) / denom / g.size


def scenario_grad(loss: str, scenario: Scenario) -> np.ndarray:
    """Logit gradient of one loss at one scenario's operating point.

    The NLL loss is evaluated against the proxy mean treated as a single
    pseudo-sample, which is exactly the target whose likelihood the theory
    section maximizes.
    """
    model, target_mean, proxy = build_scenario(scenario)
    alpha = model.alpha
    if loss == "CE":
        _, grad = soft_ce_alpha_grad(alpha, target_mean.probs)
    elif loss == "NLL":
        _, grad = nll_alpha_grad(alpha, np.log(target_mean.probs))
    elif loss == "KL":
        _, grad = fkl_alpha_grad(alpha, proxy.alpha)
    elif loss == "RKL":
        _, grad = rkl_alpha_grad(alpha, proxy.alpha)
    elif loss == "RKL+1":
        _, grad = rkl_alpha_grad(alpha + 1.0, proxy.alpha + 1.0)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return grad * alpha


@dataclass(frozen=True)
class RatioTable:
    """Rows of (scenario, loss, K, rho), in deterministic sweep order."""

    rows: tuple
    grads: dict | None = None

    def to_csv(self, build_id: str | None = None) -> str:
        lines = []
        if build_id:
            lines.append(f"# {build_id}")
        lines.append("scenario,loss,K,rho")
        for scenario, loss, k, value in self.rows:
            lines.append(f"{scenario},{loss},{k},{value:.17g}")
        return "\n".join(lines) + "\n"


def sweep(losses=LOSS_NAMES, ks=(10, 100, 1000, 10000),
          scenarios=tuple(ScenarioName), epsilon: float = 1e-4,
          conc_model: float | None = None, conc_target: float | None = None,
          keep_grads: bool = False) -> RatioTable:
    """rho(loss, K, scenario) over the requested grid; fully deterministic."""
    unknown = set(losses) - set(LOSS_NAMES)
    if unknown:
        raise ValueError(f"unknown losses: {sorted(unknown)}")
    if list(ks) != sorted(ks):
        raise ValueError("Ks must be ascending")
    rows = []
    grads = {} if keep_grads else None
    for scen_name in scenarios:
        scen_name = ScenarioName(scen_name)
        for loss in losses:
            for k in ks:
                scen = Scenario(name=scen_name, k=int(k), epsilon=epsilon,
                                conc_model=conc_model, conc_target=conc_target)
                g = scenario_grad(loss, scen)
                rows.append((scen_name.value, loss, int(k), rho(g)))
                if grads is not None:
                    grads[(scen_name.value, loss, int(k))] = g
    return RatioTable(rows=tuple(rows), grads=grads)
