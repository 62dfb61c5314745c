"""Rectified Adam, Lookahead slow weights and plateau learning-rate decay."""

from __future__ import annotations

import math

import torch
from torch.optim import Optimizer

from .errors import NumericError, ParameterError

DEFAULT_LR = 3e-4


def rectification(step: int, beta2: float) -> tuple[float, float]:
    """Return ``(rho_t, r_t)``; ``r_t`` is 0 when the variance is intractable.

    ``rho_t`` is the length of the approximated simple moving average of the
    second moment; the adaptive step is only taken when it exceeds 4.
    """
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2 ** step
    rho_t = rho_inf - 2.0 * step * beta2_t / (1.0 - beta2_t)
    if rho_t <= 4.0:
        return rho_t, 0.0
    r_t = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
    return rho_t, r_t


class RAdam(Optimizer):
    """Adam with variance rectification of the adaptive learning rate.

    While the second-moment estimate is too short-lived to trust
    (``rho_t <= 4``) the update falls back to bias-corrected momentum SGD.
    ``last_rectified`` tells which branch the most recent step took.
    """

    def __init__(self, params, lr: float = DEFAULT_LR, betas=(0.9, 0.999), eps: float = 1e-8,
                 names=None):
        if not lr > 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ParameterError(f"betas must lie in [0, 1), got {betas}")
        if not eps >= 0:
            raise ParameterError(f"eps must be non-negative, got {eps}")
        super().__init__(params, dict(lr=lr, betas=tuple(betas), eps=eps))
        self._names = list(names) if names is not None else None
        self.last_rectified = None

    def _name(self, index: int, p) -> str:
        if self._names is not None and index < len(self._names):
            return self._names[index]
        return f"parameter #{index} (shape {tuple(p.shape)})"

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        index = 0
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                index += 1
                if p.grad is None:
                    continue
                grad = p.grad
                if not torch.isfinite(grad).all():
                    raise NumericError(f"non-finite gradient for {self._name(index - 1, p)}")

                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
                exp_avg.mul_(beta1).add_(grad, alpha=1.0 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)

                bias1 = 1.0 - beta1 ** t
                _, r_t = rectification(t, beta2)
                if r_t > 0.0:
                    bias2 = 1.0 - beta2 ** t
                    denom = (exp_avg_sq / bias2).sqrt_().add_(group["eps"])
                    p.addcdiv_(exp_avg, denom, value=-group["lr"] * r_t / bias1)
                    self.last_rectified = True
                else:
                    p.add_(exp_avg, alpha=-group["lr"] / bias1)
                    self.last_rectified = False
        return loss


class Lookahead:
    """Keeps slow weights that pull the inner optimizer's weights back every ``k`` steps.

    At each sync: ``slow += alpha * (fast - slow)`` and then ``fast = slow``.
    Slow weights start as a copy of the parameters at construction time.
    """

    def __init__(self, optimizer: Optimizer, k: int = 5, alpha: float = 0.5):
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        if not 0.0 <= alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
        self.optimizer = optimizer
        self.k = k
        self.alpha = alpha
        self.step_count = 0
        self.slow = [[p.detach().clone() for p in group["params"]]
                     for group in optimizer.param_groups]

    @property
    def param_groups(self):
        return self.optimizer.param_groups

    def zero_grad(self, set_to_none: bool = True):
        self.optimizer.zero_grad(set_to_none=set_to_none)

    def step(self, closure=None):
        loss = self.optimizer.step(closure)
        self.step_count += 1
        if self.step_count % self.k == 0:
            self.sync()
        return loss

    @torch.no_grad()
    def sync(self):
        for group, slows in zip(self.optimizer.param_groups, self.slow):
            for p, slow in zip(group["params"], slows):
                slow.add_(p - slow, alpha=self.alpha)
                p.copy_(slow)

    def state_dict(self) -> dict:
        return {"inner": self.optimizer.state_dict(), "k": self.k, "alpha": self.alpha,
                "step_count": self.step_count,
                "slow": [[s.clone() for s in slows] for slows in self.slow]}

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.load_state_dict(state["inner"])
        self.k, self.alpha = state["k"], state["alpha"]
        self.step_count = state["step_count"]
        with torch.no_grad():
            for slows, saved in zip(self.slow, state["slow"]):
                for s, v in zip(slows, saved):
                    s.copy_(v)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the metric stops improving.

    A value improves when it is below the best so far by more than
    ``threshold``.  After more than ``patience`` epochs without improvement
    the rate is reduced (never below ``min_lr``) and the wait restarts.
    """

    def __init__(self, optimizer, factor: float = 0.5, patience: int = 5,
                 min_lr: float = 1e-6, threshold: float = 1e-4):
        if not 0.0 < factor < 1.0:
            raise ParameterError(f"factor must lie in (0, 1), got {factor}")
        if patience < 0:
            raise ParameterError(f"patience must be >= 0, got {patience}")
        if not min_lr > 0:
            raise ParameterError(f"min_lr must be positive, got {min_lr}")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.wait = 0
        self.reductions = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, metric: float) -> float:
        metric = float(metric)
        if not math.isfinite(metric):
            raise NumericError(f"plateau metric must be finite, got {metric}")
        if metric < self.best - self.threshold:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
        if self.wait > self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] = max(group["lr"] * self.factor, self.min_lr)
            self.reductions += 1
            self.wait = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"best": self.best, "wait": self.wait, "reductions": self.reductions,
                "factor": self.factor, "patience": self.patience, "min_lr": self.min_lr,
                "threshold": self.threshold}

    def load_state_dict(self, state: dict) -> None:
        for key, value in state.items():
            setattr(self, key, value)
