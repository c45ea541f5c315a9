"""Adam (generators) and plain mini-batch gradient descent (discriminators)."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    kind: str
    lr: float
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=None, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` (a name -> Param dict)."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param {name} shape {p.data.shape}")
        m = state.first.get(name)
        if m is None:
            m = state.first[name] = np.zeros_like(p.data)
            state.second[name] = np.zeros_like(p.data)
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def sgd_step(params, grads, lr):
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param {name} shape {p.data.shape}")
        p.data -= (lr * g).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = dict(params)
        self.betas = betas
        self.eps = eps
        self.state = OptimState("adam", lr)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, beta1=self.betas[0], beta2=self.betas[1],
                  eps=self.eps)


class SGD:
    def __init__(self, params, lr=2e-4):
        self.params = dict(params)
        self.state = OptimState("sgd", lr)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.state.step += 1
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        sgd_step(self.params, grads, self.state.lr)
