"""Causal structure learning with a variational nonlinear SEM.

The encoder maps each observed feature through a shared scalar network ``f``
and mixes features with (I - A), giving the mean of the exogenous noise. The
decoder pushes a reparameterized noise sample through (I - A)^-1 and a second
shared scalar network. Training minimises the negative ELBO plus an L1
penalty under the smooth acyclicity constraint, handled with an augmented
Lagrangian whose inner problem is solved by AdamW.

Gradients are derived by hand; ``tests/test_discovery.py`` checks them
against central differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import CausalGraph, shd, threshold_adjacency
from .numerics import Mlp, NonFiniteError, ShapeError, as_matrix, make_rng, mat_exp

__all__ = [
    "DiscoveryConfig", "FitResult", "SemVae", "acyclicity", "acyclicity_grad",
    "augmented_lagrangian_fit", "elbo_loss", "encode", "shd", "threshold_graph",
]

log = logging.getLogger(__name__)

LOGVAR_CLAMP = 8.0
H_TOL = 1e-8
RHO_CAP = 1e16
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiscoveryConfig:
    lambda_s: float = 1.0
    tau: float = 0.2
    rho0: float = 1.0
    alpha0: float = 0.0
    rho_growth: float = 10.0
    h_decrease: float = 0.25
    outer_iters: int = 20
    inner_epochs: int = 100
    batch_size: int = 128
    lr: float = 3e-3
    weight_decay: float = 1e-2
    hidden: int = 64
    rank: int | None = None

    def __post_init__(self):
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.rho_growth <= 1:
            raise ValueError("rho_growth must exceed 1")
        if not 0 < self.h_decrease < 1:
            raise ValueError("h_decrease must lie in (0, 1)")
        if self.outer_iters < 0 or self.inner_epochs < 0:
            raise ValueError("iteration budgets must be >= 0")
        if self.batch_size < 1 or self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("batch_size, lr and weight_decay must be positive")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass
class SemVae:
    """Trainable adjacency plus the three shared scalar networks.

    In low-rank mode ``A`` is not stored; the adjacency is the off-diagonal
    part of ``U @ V.T``.
    """

    encoder: Mlp
    logvar_head: Mlp
    decoder: Mlp
    A: np.ndarray | None = None
    U: np.ndarray | None = None
    V: np.ndarray | None = None

    def __post_init__(self):
        if (self.A is None) == (self.U is None or self.V is None):
            raise ValueError("give either A or both U and V")
        for net in (self.encoder, self.logvar_head, self.decoder):
            if (len(net.widths) != 3 or net.widths[0] != 1 or net.widths[2] != 1
                    or net.activation != "tanh" or net.output_activation != "identity"):
                raise ValueError("scalar networks must be 1-h-1 with a tanh hidden layer")
        self._nets = None
        if self.A is not None:
            self.A = as_matrix(self.A, square=True, name="A").copy()
            np.fill_diagonal(self.A, 0.0)

    @classmethod
    def init(cls, M: int, rng, hidden: int = 64, rank: int | None = None) -> "SemVae":
        if M < 2:
            raise ValueError("need at least two features")
        widths = (1, hidden, 1)
        enc = Mlp.init(widths, rng)
        lv = Mlp.init(widths, rng)
        dec = Mlp.init(widths, rng)
        if rank is None:
            return cls(enc, lv, dec, A=np.zeros((M, M)))
        # small random factors: U = V = 0 is a saddle with zero gradient
        U = rng.normal(0.0, 1e-2, size=(M, rank))
        V = rng.normal(0.0, 1e-2, size=(M, rank))
        return cls(enc, lv, dec, U=U, V=V)

    @property
    def M(self) -> int:
        return (self.A if self.A is not None else self.U).shape[0]

    @property
    def low_rank(self) -> bool:
        return self.A is None

    @property
    def adjacency(self) -> np.ndarray:
        if self.A is not None:
            return self.A
        A = self.U @ self.V.T
        np.fill_diagonal(A, 0.0)
        return A

    def scalar_nets(self) -> tuple[_ScalarNet, _ScalarNet, _ScalarNet]:
        if self._nets is None:
            self._nets = tuple(_ScalarNet(n) for n in (self.encoder, self.logvar_head, self.decoder))
        return self._nets

    def structure_params(self) -> list[np.ndarray]:
        return [self.A] if self.A is not None else [self.U, self.V]

    def params(self) -> list[np.ndarray]:
        return (self.structure_params() + self.encoder.params
                + self.logvar_head.params + self.decoder.params)

    def copy(self) -> "SemVae":
        return SemVae(self.encoder.copy(), self.logvar_head.copy(), self.decoder.copy(),
                      A=None if self.A is None else self.A.copy(),
                      U=None if self.U is None else self.U.copy(),
                      V=None if self.V is None else self.V.copy())


class _ScalarNet:
    """Buffer-reusing forward/backward for a shared 1-h-1 tanh network.

    Equivalent to ``Mlp.forward``/``Mlp.backward`` on the flattened batch;
    the hidden activations live in preallocated arrays so a training step
    does not allocate (batch * M) x h temporaries.
    """

    def __init__(self, net: Mlp):
        self.net = net
        self._hidden = np.empty((0, net.widths[1]))
        self._scratch = np.empty((0, net.widths[1]))

    def forward(self, X: np.ndarray):
        n, M = X.shape
        x = X.reshape(-1, 1)
        if self._hidden.shape[0] < x.shape[0]:
            self._hidden = np.empty((x.shape[0], self.net.widths[1]))
            self._scratch = np.empty_like(self._hidden)
        H = self._hidden[:x.shape[0]]
        W1, W2 = self.net.weights
        b1, b2 = self.net.biases
        np.multiply(x, W1, out=H)
        H += b1
        np.tanh(H, out=H)
        y = H @ W2
        y += b2
        return y.reshape(n, M), (x, H)

    def backward(self, cache, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter grads in ``Mlp.params`` order and the flattened input grad."""
        x, H = cache
        g = upstream.reshape(-1, 1)
        W1, W2 = self.net.weights
        dW2 = H.T @ g
        db2 = g.sum(axis=0)
        T = self._scratch[:H.shape[0]]
        np.multiply(H, H, out=T)
        np.subtract(1.0, T, out=T)
        T *= g
        T *= W2.T
        return [x.T @ T, T.sum(axis=0), dW2, db2], T @ W1.T


def _columnwise(net: Mlp, X: np.ndarray) -> np.ndarray:
    return net.forward(X.reshape(-1, 1)).reshape(X.shape)


def _check_batch(model: SemVae, X) -> np.ndarray:
    X = as_matrix(X, name="X")
    if X.shape[1] != model.M:
        raise ShapeError(f"batch has {X.shape[1]} columns, model expects {model.M}")
    return X


def encode(model: SemVae, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean f(X)(I - A) and clamped log-variance of the noise."""
    X = _check_batch(model, X)
    I_minus_A = np.eye(model.M) - model.adjacency
    mean = _columnwise(model.encoder, X) @ I_minus_A
    logvar = np.clip(_columnwise(model.logvar_head, X), -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mean, logvar


def elbo_loss(model: SemVae, X, rng) -> tuple[float, list[np.ndarray]]:
    """Negative ELBO summed over rows, with gradients in ``model.params()`` order."""
    X = _check_batch(model, X)
    n, M = X.shape
    A = model.adjacency
    I_minus_A = np.eye(M) - A
    enc, lvh, dec = model.scalar_nets()

    H, enc_acts = enc.forward(X)
    raw_lv, lv_acts = lvh.forward(X)
    logvar = np.clip(raw_lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    mean = H @ I_minus_A
    std = np.exp(0.5 * logvar)
    eps = rng.standard_normal((n, M))
    Z = mean + std * eps
    # Y = Z (I - A)^-1 without forming the inverse
    Y = np.linalg.solve(I_minus_A.T, Z.T).T
    Xhat, dec_acts = dec.forward(Y)

    resid = Xhat - X
    nll = 0.5 * np.sum(resid * resid) + 0.5 * n * M * _LOG_2PI
    kl = 0.5 * np.sum(mean * mean + np.exp(logvar) - logvar - 1.0)
    loss = nll + kl
    if not math.isfinite(loss):
        raise NonFiniteError("negative ELBO is not finite")

    dec_grads, dY = dec.backward(dec_acts, resid)
    dY = dY.reshape(n, M)
    # Y = Z B with B = (I - A)^-1, so dZ = dY B^T and dA = B^T Z^T dY B^T
    dZ = np.linalg.solve(I_minus_A, dY.T).T
    dA = np.linalg.solve(I_minus_A.T, Z.T @ dZ)
    dmean = dZ + mean
    dlogvar = dZ * eps * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0)
    dlogvar = np.where(np.abs(raw_lv) > LOGVAR_CLAMP, 0.0, dlogvar)
    dA -= H.T @ dmean
    dH = dmean @ I_minus_A.T
    enc_grads, _ = enc.backward(enc_acts, dH)
    lv_grads, _ = lvh.backward(lv_acts, dlogvar)

    return loss, _structure_grads(model, dA) + enc_grads + lv_grads + dec_grads


def _structure_grads(model: SemVae, dA: np.ndarray) -> list[np.ndarray]:
    dA = dA.copy()
    np.fill_diagonal(dA, 0.0)
    if not model.low_rank:
        return [dA]
    return [dA @ model.V, dA.T @ model.U]


def acyclicity(A) -> float:
    A = as_matrix(A, square=True, name="A")
    return float(np.trace(mat_exp(A * A)) - A.shape[0])


def acyclicity_grad(A) -> np.ndarray:
    A = as_matrix(A, square=True, name="A")
    return mat_exp(A * A).T * 2.0 * A


class _AdamW:
    def __init__(self, params, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p *= 1.0 - self.lr * self.wd
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class FitResult:
    model: SemVae
    h: float
    converged: bool
    rho: float
    alpha: float
    loss_curve: list[float] = field(default_factory=list)
    h_curve: list[float] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "final_h": self.h,
            "converged": self.converged,
            "warning": None if self.converged else f"h = {self.h:.3e} >= {H_TOL:g} after budget",
            "rho": self.rho,
            "alpha": self.alpha,
            "loss_curve": self.loss_curve,
            "h_curve": self.h_curve,
        }


def augmented_lagrangian_fit(X, cfg: DiscoveryConfig | None = None, seed=0,
                             model: SemVae | None = None) -> FitResult:
    """Minimise -ELBO + lambda_s |A|_1 + (rho/2) h^2 + alpha h over (A, networks).

    ``loss_curve`` holds the mean minibatch objective of every epoch and
    ``h_curve`` the constraint value after every outer iteration.
    """
    cfg = cfg or DiscoveryConfig()
    X = as_matrix(X, name="X")
    N, M = X.shape
    if M < 2:
        raise ValueError("need at least two features")
    if N < cfg.batch_size:
        raise ValueError(f"N = {N} is smaller than the batch size {cfg.batch_size}")
    rng = make_rng(seed)
    if model is None:
        model = SemVae.init(M, rng, cfg.hidden, cfg.rank)
    params = model.params()
    opt = _AdamW(params, cfg.lr, cfg.weight_decay)
    rho, alpha = cfg.rho0, cfg.alpha0
    h = acyclicity(model.adjacency)
    h_prev = math.inf
    losses: list[float] = []
    hs: list[float] = []

    for outer in range(cfg.outer_iters):
        if cfg.inner_epochs == 0:
            break
        for _ in range(cfg.inner_epochs):
            perm = rng.permutation(N)
            batch_objectives = [
                _train_step(model, params, opt, X[perm[start:start + cfg.batch_size]], rng,
                            cfg.lambda_s, rho, alpha)
                for start in range(0, N, cfg.batch_size)
            ]
            losses.append(float(np.mean(batch_objectives)))
        h = acyclicity(model.adjacency)
        hs.append(h)
        log.info("outer %d: h=%.3e rho=%.1e alpha=%.3e loss=%.4f", outer, h, rho, alpha, losses[-1])
        if h < H_TOL:
            break
        alpha += rho * h
        if h > cfg.h_decrease * h_prev:
            rho = min(rho * cfg.rho_growth, RHO_CAP)
        h_prev = h

    converged = h < H_TOL
    if not converged and cfg.outer_iters and cfg.inner_epochs:
        log.warning("acyclicity not reached: h = %.3e", h)
    return FitResult(model, h, converged, rho, alpha, losses, hs)


def _train_step(model, params, opt, batch, rng, lambda_s, rho, alpha) -> float:
    loss, grads = elbo_loss(model, batch, rng)
    A = model.adjacency
    h = acyclicity(A)
    dA = lambda_s * np.sign(A) + (rho * h + alpha) * acyclicity_grad(A)
    extra = _structure_grads(model, dA)
    for i, g in enumerate(extra):
        grads[i] = grads[i] + g
    objective = loss + lambda_s * np.abs(A).sum() + 0.5 * rho * h * h + alpha * h
    if not (math.isfinite(objective) and all(np.all(np.isfinite(g)) for g in grads)):
        raise NonFiniteError(f"non-finite objective (elbo={loss}, h={h}, rho={rho:g})")
    opt.step(params, grads)
    if not model.low_rank:
        np.fill_diagonal(model.A, 0.0)
    return objective


def threshold_graph(model: SemVae | np.ndarray, tau: float) -> CausalGraph:
    A = model.adjacency if isinstance(model, SemVae) else model
    return threshold_adjacency(A, tau)
