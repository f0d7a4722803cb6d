"""Latent diffusion numerics: noise schedules, forward process, DDPM/DDIM steps,
the strided DDIM sampler and the epsilon-prediction loss.

Latents are plain float64 ``numpy`` arrays of any shape. Timesteps are
1-based (``1 <= t <= T``) and ``t = 0`` denotes the clean sample, for which
``alpha_bar(0) == 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, ContractError, ScheduleError, ShapeError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999

Denoiser = Callable[[np.ndarray, int, object], np.ndarray]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step tables; index ``t - 1`` holds step ``t``.

    The constructor does not validate, so hand-built (possibly broken)
    schedules can be fed to the verification suite; :func:`make_schedule`
    and :meth:`from_betas` do validate.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    @classmethod
    def from_betas(cls, betas, validate: bool = True) -> "NoiseSchedule":
        betas = np.array(betas, dtype=np.float64)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for a in (betas, alphas, alpha_bars):
            a.setflags(write=False)
        sched = cls(betas, alphas, alpha_bars)
        if validate:
            sched.validate()
        return sched

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ArgumentError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t - 1])

    def validate(self):
        b, ab = self.betas, self.alpha_bars
        if b.ndim != 1 or len(b) < 1:
            raise ScheduleError("schedule needs at least one step")
        if not np.all((b > 0) & (b < 1)):
            raise ScheduleError("every beta must lie in (0, 1)")
        if np.any(np.diff(ab) >= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        if not ab[-1] > 0:
            raise ScheduleError("alpha_bar_T must be positive")

    def to_json(self) -> str:
        return json.dumps({
            "T": self.T,
            "betas": self.betas.tolist(),
            "alphas": self.alphas.tolist(),
            "alpha_bars": self.alpha_bars.tolist(),
        }) + "\n"


def cosine_alpha_bar(t, T: int, s: float = COSINE_OFFSET):
    f = lambda u: np.cos(((u / T + s) / (1 + s)) * math.pi / 2) ** 2
    return f(np.asarray(t, dtype=np.float64)) / f(0.0)


def make_schedule(T: int = 1000, kind: str = "linear", beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ArgumentError(f"T must be a positive integer, got {T!r}")
    if kind == "linear":
        if not 0 < beta_start <= beta_end < 1:
            raise ArgumentError("linear schedule needs 0 < beta_start <= beta_end < 1")
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        ab = cosine_alpha_bar(np.arange(T + 1), T)
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 0.0, MAX_BETA)
    else:
        raise ArgumentError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(betas)


def schedule_from_config(raw: Optional[dict]) -> NoiseSchedule:
    """Build a schedule from a config mapping.

    Either ``{"T", "kind", "beta_start", "beta_end"}`` (validated) or an explicit
    ``{"betas": [...]}`` list, which is taken as-is so that verification can be
    pointed at a deliberately broken schedule.
    """
    raw = dict(raw or {})
    if "betas" in raw:
        return NoiseSchedule.from_betas(raw["betas"], validate=False)
    unknown = set(raw) - {"T", "kind", "beta_start", "beta_end"}
    if unknown:
        raise ArgumentError(f"unknown schedule keys {sorted(unknown)}")
    return make_schedule(int(raw.get("T", 1000)), raw.get("kind", "linear"),
                         float(raw.get("beta_start", 1e-4)), float(raw.get("beta_end", 0.02)))


def _same_shape(*arrays):
    out = [np.asarray(a, dtype=np.float64) for a in arrays]
    for a in out[1:]:
        if a.shape != out[0].shape:
            raise ShapeError(f"shape mismatch: {out[0].shape} vs {a.shape}")
    return out


def _check_t(t, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise ArgumentError(f"timestep {t} outside [1, {schedule.T}]")


def q_step(z_prev, t: int, noise, schedule: NoiseSchedule) -> np.ndarray:
    """One forward step: sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) noise."""
    z_prev, noise = _same_shape(z_prev, noise)
    _check_t(t, schedule)
    beta = schedule.betas[t - 1]
    return math.sqrt(1.0 - beta) * z_prev + math.sqrt(beta) * noise


def q_sample(z0, t: int, noise, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form jump z_0 -> z_t."""
    z0, noise = _same_shape(z0, noise)
    _check_t(t, schedule)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * noise


def ddpm_sigma(schedule: NoiseSchedule, t: int) -> float:
    """Posterior standard deviation; zero at t = 1."""
    _check_t(t, schedule)
    beta = schedule.betas[t - 1]
    return math.sqrt(beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)))


def ddpm_step(z_t, eps_hat, t: int, noise, schedule: NoiseSchedule) -> np.ndarray:
    """Ancestral step z_t -> z_{t-1} with epsilon-parameterized mean and fixed variance."""
    z_t, eps_hat, noise = _same_shape(z_t, eps_hat, noise)
    _check_t(t, schedule)
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    mean = (z_t - (beta / math.sqrt(1.0 - schedule.alpha_bar(t))) * eps_hat) / math.sqrt(alpha)
    sigma = ddpm_sigma(schedule, t)
    return mean + sigma * noise if sigma else mean


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab)) * math.sqrt(1.0 - ab / ab_prev)


def ddim_step(z_t, eps_hat, t: int, t_prev: int, eta: float, noise,
              schedule: NoiseSchedule) -> np.ndarray:
    """DDIM update from t to t_prev (t_prev = 0 returns the x0 prediction when eta = 0)."""
    if noise is None:
        z_t, eps_hat = _same_shape(z_t, eps_hat)
    else:
        z_t, eps_hat, noise = _same_shape(z_t, eps_hat, noise)
    _check_t(t, schedule)
    if not 0 <= t_prev < t:
        raise ArgumentError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    if eta < 0:
        raise ArgumentError("eta must be non-negative")
    ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    x0_pred = (z_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    sigma = ddim_sigma(schedule, t, t_prev, eta)
    dir_var = 1.0 - ab_prev - sigma * sigma
    if dir_var < 0:
        if dir_var > -1e-12:
            dir_var = 0.0
        else:
            raise ScheduleError(f"1 - alpha_bar_prev - sigma^2 = {dir_var} < 0 at t={t}")
    out = math.sqrt(ab_prev) * x0_pred + math.sqrt(dir_var) * eps_hat
    if sigma:
        if noise is None:
            raise ArgumentError("eta > 0 needs a noise sample")
        out = out + sigma * noise
    return out


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """[t_steps, ..., t_1, 0] with t_i = round(i T / steps), halves rounded up."""
    if not 1 <= steps <= T:
        raise ArgumentError(f"steps must be in [1, {T}], got {steps}")
    return [(2 * i * T + steps) // (2 * steps) for i in range(steps, 0, -1)] + [0]


def _noise_fn(noise_source):
    if noise_source is None:
        return None
    if isinstance(noise_source, np.random.Generator):
        return lambda shape: noise_source.standard_normal(shape)
    return noise_source


def sample(denoiser: Denoiser, z_T, schedule: NoiseSchedule, steps: int = 50,
           eta: float = 0.0, noise_source=None, condition=None) -> np.ndarray:
    """Strided DDIM sampling from z_T down to t = 0.

    ``noise_source`` is a ``numpy`` Generator or a ``shape -> array`` callable;
    it is only consulted when ``eta > 0``.
    """
    z = np.array(z_T, dtype=np.float64)
    ts = ddim_timesteps(schedule.T, steps)
    draw = _noise_fn(noise_source)
    if eta > 0 and draw is None:
        raise ArgumentError("eta > 0 needs a noise_source")
    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps_hat = np.asarray(denoiser(z, t, condition), dtype=np.float64)
        if eps_hat.shape != z.shape:
            raise ContractError(
                f"denoiser returned shape {eps_hat.shape} for input {z.shape} at t={t}")
        noise = draw(z.shape) if eta > 0 else None
        z = ddim_step(z, eps_hat, t, t_prev, eta, noise, schedule)
    return z


def oracle_denoiser(z0, schedule: NoiseSchedule) -> Denoiser:
    """Test double returning the exact noise that maps z_0 to the given z_t."""
    z0 = np.array(z0, dtype=np.float64)

    def denoise(z_t, t, condition=None):
        ab = schedule.alpha_bar(t)
        return (z_t - math.sqrt(ab) * z0) / math.sqrt(1.0 - ab)

    return denoise


def training_loss(eps, eps_hat) -> float:
    """Mean squared error between true and predicted noise."""
    eps, eps_hat = _same_shape(eps, eps_hat)
    return float(np.mean((eps - eps_hat) ** 2))
