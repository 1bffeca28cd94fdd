"""Adaptive Nesterov-momentum optimizer.

Update rule per parameter with gradient g_k (g_0 difference terms start
at zero):

    m_k = b1 * m_{k-1} + (1 - b1) * g_k
    v_k = b2 * v_{k-1} + (1 - b2) * (g_k - g_{k-1})
    n_k = b3 * n_{k-1} + (1 - b3) * (g_k + b2 * (g_k - g_{k-1}))^2
    theta_k = (theta_{k-1} - lr * (m_k + b2 * v_k) / (sqrt(n_k) + eps))
              / (1 + lr * weight_decay)

A zero gradient with zero weight decay leaves parameters untouched.
"""

import torch
from torch.optim import Optimizer


class AdaptiveNesterov(Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.98, 0.92, 0.99), eps=1e-8,
                 weight_decay=0.0):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            lr = group["lr"]
            b1, b2, b3 = group["betas"]
            eps = group["eps"]
            wd = group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                g = p.grad
                state = self.state[p]
                if not state:
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                    state["n"] = torch.zeros_like(p)
                    state["prev_grad"] = g.clone()
                m, v, n = state["m"], state["v"], state["n"]
                diff = g - state["prev_grad"]
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).add_(diff, alpha=1 - b2)
                n.mul_(b3).addcmul_(g + b2 * diff, g + b2 * diff, value=1 - b3)
                update = (m + b2 * v) / (n.sqrt() + eps)
                p.add_(update, alpha=-lr)
                if wd:
                    p.div_(1 + lr * wd)
                state["prev_grad"].copy_(g)
        return loss


def build_optimizer(name, params, lr, weight_decay):
    """'adaptive_nesterov' (default) or 'adamw' as the adaptive-moment baseline."""
    if name == "adaptive_nesterov":
        return AdaptiveNesterov(params, lr=lr, weight_decay=weight_decay)
    if name == "adamw":
        return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")
