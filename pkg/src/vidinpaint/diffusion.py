"""Linear-beta DDPM schedule with x0-parameterized posterior and fixed reverse variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed float64 tables indexed directly by timestep.

    Index 0 holds the closure values (beta 0, alpha_bar 1) so that
    ``alpha_bar[t - 1]`` is valid at t = 1.
    """

    T: int
    beta_1: float
    beta_T: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return t

    def posterior_coefficients(self, t: int) -> tuple[float, float]:
        """Weights of (x_hat0, x_t) in the posterior mean at step t."""
        t = self.check_t(t)
        if t == 1:
            # analytically (1, 0); 1 - alpha_bar[1] rounds differently from beta[1]
            return 1.0, 0.0
        ab, ab_prev = self.alpha_bar[t], self.alpha_bar[t - 1]
        c0 = np.sqrt(ab_prev) * self.beta[t] / (1.0 - ab)
        ct = np.sqrt(self.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
        return float(c0), float(ct)

    def metadata(self) -> dict:
        return {"T": self.T, "beta_1": self.beta_1, "beta_T": self.beta_T}


def make_schedule(T: int = 1000, beta_1: float = 1e-4, beta_T: float = 0.02) -> DiffusionSchedule:
    if T < 2:
        raise ValueError("need at least two timesteps")
    if not 0.0 < beta_1 < beta_T < 1.0:
        raise ValueError(f"need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_T}")
    beta = np.concatenate([[0.0], np.linspace(beta_1, beta_T, T, dtype=np.float64)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma2 = np.zeros_like(beta)
    sigma2[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    for table in (beta, alpha, alpha_bar, sigma2):
        table.setflags(write=False)
    return DiffusionSchedule(T, float(beta_1), float(beta_T), beta, alpha, alpha_bar, sigma2)


def forward_diffuse(x0: torch.Tensor, t: int, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    t = sched.check_t(t)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {tuple(x0.shape)} vs {tuple(eps.shape)}")
    ab = sched.alpha_bar[t]
    return float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * eps


def posterior_mean(x_hat0: torch.Tensor, x_t: torch.Tensor, t: int, sched: DiffusionSchedule) -> torch.Tensor:
    c0, ct = sched.posterior_coefficients(t)
    if ct == 0.0:
        return c0 * x_hat0
    return c0 * x_hat0 + ct * x_t


def standard_normal(shape, rng, dtype=torch.float32) -> torch.Tensor:
    """Draw N(0, I) noise; a list of generators draws one leading-axis item from each."""
    shape = tuple(shape)
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError(f"{len(rng)} generators for a batch of {shape[0]}")
        draws = np.stack([g.standard_normal(shape[1:], dtype=np.float32) for g in rng])
    else:
        draws = rng.standard_normal(shape, dtype=np.float32)
    return torch.from_numpy(draws).to(dtype)


def reverse_step(x_t: torch.Tensor, x_hat0: torch.Tensor, t: int, sched: DiffusionSchedule,
                 rng: np.random.Generator) -> torch.Tensor:
    """Draw x_{t-1} ~ N(mu(x_hat0, x_t), sigma2[t] I). No noise is drawn when sigma2[t] = 0."""
    mean = posterior_mean(x_hat0.clamp(-1.0, 1.0), x_t, t, sched)
    var = sched.sigma2[t]
    if var == 0.0:
        return mean
    return mean + float(np.sqrt(var)) * standard_normal(mean.shape, rng, mean.dtype)
