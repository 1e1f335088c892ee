"""Losses, Adam, and the two-adapter training loop.

The reconstruction loss is the generalized-Gaussian NLL of a target under an
adapter's output (optionally the Taylor-stabilized form, which removes the
shape parameter from the exponent); the cross-modal loss scores each
modality's matched partner under the other's predicted distribution; the
total objective adds the cross term with weight lambda_cross. All gradients
are exact closed forms, checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import AdapterNetwork, AdapterOutput, backward, forward, init_adapter
from .data_io import PairedEmbeddings
from .errors import DomainError, NumericalError, ShapeError
from .ggd import digamma, lgamma


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 32
    lambda_cross: float = 0.1
    use_stable_nll: bool = True
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    d_hidden: int = 256
    dropout_p: float = 0.1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.lambda_cross < 0:
            raise DomainError("lambda_cross must be nonnegative")
        if self.d_hidden < 1:
            raise DomainError("d_hidden must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            raise DomainError("dropout_p must be in [0, 1)")
        return self


@dataclass
class TrainHistory:
    """Per-epoch mean losses."""

    loss_rec_v: list[float] = field(default_factory=list)
    loss_rec_t: list[float] = field(default_factory=list)
    loss_cross: list[float] = field(default_factory=list)
    loss_total: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss_total)

    def to_csv(self) -> str:
        lines = ["epoch,loss_rec_v,loss_rec_t,loss_cross,loss_total"]
        rows = zip(self.loss_rec_v, self.loss_rec_t, self.loss_cross, self.loss_total)
        for epoch, (rv, rt, cx, tot) in enumerate(rows, start=1):
            lines.append(f"{epoch},{rv:.17g},{rt:.17g},{cx:.17g},{tot:.17g}")
        return "\n".join(lines) + "\n"


@dataclass
class OutputGrads:
    """Partials of a scalar loss w.r.t. an adapter output."""

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __iadd__(self, other: "OutputGrads"):
        self.mu = self.mu + other.mu
        self.alpha = self.alpha + other.alpha
        self.beta = self.beta + other.beta
        return self

    def scaled(self, c: float) -> "OutputGrads":
        return OutputGrads(c * self.mu, c * self.alpha, c * self.beta)


def _nll_terms(mu, alpha, beta, target, stable: bool):
    """Per-element NLL terms and their partials w.r.t. (mu, alpha, beta)."""
    delta = mu - target
    absd = np.abs(delta)
    sign = np.sign(delta)
    r = absd / alpha
    inv_beta = 1.0 / beta
    common = -np.log(beta / alpha) + lgamma(inv_beta)
    d_common_beta = -inv_beta - digamma(inv_beta) * inv_beta**2
    if stable:
        terms = 1.0 - beta + beta * r + common
        d_mu = beta * sign / alpha
        d_alpha = (1.0 - beta * r) / alpha
        d_beta = -1.0 + r + d_common_beta
    else:
        # Overflow is propagated as inf and caught by the caller's
        # finiteness check rather than raising locally.
        with np.errstate(over="ignore"):
            power = r**beta
        terms = power + common
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            d_mu = np.where(r > 0.0, beta * r ** (beta - 1.0) * sign / alpha, 0.0)
            d_beta_power = np.where(r > 0.0, power * np.log(r), 0.0)
        d_alpha = (1.0 - beta * power) / alpha
        d_beta = d_beta_power + d_common_beta
    return terms, d_mu, d_alpha, d_beta


def _check_same_shape(out: AdapterOutput, target) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.shape != out.mu.shape:
        raise ShapeError(f"target shape {target.shape} does not match output {out.mu.shape}")
    return target


def loss_rec(out: AdapterOutput, z_target, stable: bool = True) -> tuple[float, OutputGrads]:
    """Reconstruction NLL of a target under an adapter output.

    Scalar is the sum over dimensions (and over batch rows, for batched
    outputs); gradients are elementwise partials.
    """
    z_target = _check_same_shape(out, z_target)
    terms, d_mu, d_alpha, d_beta = _nll_terms(out.mu, out.alpha, out.beta, z_target, stable)
    return float(np.sum(terms)), OutputGrads(d_mu, d_alpha, d_beta)


def loss_cross(out_v: AdapterOutput, z_t, out_t: AdapterOutput, z_v,
               stable: bool = True) -> tuple[float, OutputGrads, OutputGrads]:
    """Cross-modal alignment: each side's matched partner scored by the other."""
    v2t, grads_v = loss_rec(out_v, z_t, stable)
    t2v, grads_t = loss_rec(out_t, z_v, stable)
    return v2t + t2v, grads_v, grads_t


@dataclass
class TotalLoss:
    total: float
    rec_v: float
    rec_t: float
    cross: float
    grads_v: OutputGrads
    grads_t: OutputGrads


def loss_total(out_v: AdapterOutput, z_v, out_t: AdapterOutput, z_t,
               lambda_cross: float, stable: bool = True) -> TotalLoss:
    """Intra-modal reconstruction for both sides plus weighted cross term."""
    rec_v, gv = loss_rec(out_v, z_v, stable)
    rec_t, gt = loss_rec(out_t, z_t, stable)
    cross, cgv, cgt = loss_cross(out_v, z_t, out_t, z_v, stable)
    gv += cgv.scaled(lambda_cross)
    gt += cgt.scaled(lambda_cross)
    return TotalLoss(
        total=rec_v + rec_t + lambda_cross * cross,
        rec_v=rec_v, rec_t=rec_t, cross=cross,
        grads_v=gv, grads_t=gt,
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def fresh(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place."""
    if t < 1:
        raise DomainError("step count t must be >= 1")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"parameter shape {p.shape} vs gradient shape {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def _apply_grads(net: AdapterNetwork, z_batch, grads: OutputGrads, cache,
                 scale: float) -> list[np.ndarray]:
    return backward(net, z_batch, scale * grads.mu, scale * grads.alpha,
                    scale * grads.beta, cache)


def train(pairs: PairedEmbeddings, cfg: TrainConfig):
    """Train vision and text adapters jointly on positive pairs.

    Mini-batches are reshuffled every epoch from a seeded stream; dropout is
    on; both adapters are updated per batch from the total objective. Fully
    deterministic for a fixed seed and dataset. Returns
    (adapter_v, adapter_t, history).
    """
    cfg.validate()
    if pairs.n < 1:
        raise DomainError("training requires at least one pair")

    seeds = np.random.SeedSequence(cfg.seed).spawn(5)
    adapter_v = init_adapter(pairs.d, cfg.d_hidden, cfg.dropout_p,
                             seed=int(seeds[0].generate_state(1)[0]))
    adapter_t = init_adapter(pairs.d, cfg.d_hidden, cfg.dropout_p,
                             seed=int(seeds[1].generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(seeds[2])
    drop_rng_v = np.random.default_rng(seeds[3])
    drop_rng_t = np.random.default_rng(seeds[4])

    state_v = AdamState.fresh(adapter_v.params())
    state_t = AdamState.fresh(adapter_t.params())
    history = TrainHistory()
    step = 0

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(pairs.n)
        sums = {"rec_v": 0.0, "rec_t": 0.0, "cross": 0.0, "total": 0.0}
        for start in range(0, pairs.n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            zv, zt = pairs.z_v[batch], pairs.z_t[batch]
            out_v = forward(adapter_v, zv, dropout_on=True, rng=drop_rng_v)
            out_t = forward(adapter_t, zt, dropout_on=True, rng=drop_rng_t)
            loss = loss_total(out_v, zv, out_t, zt, cfg.lambda_cross, cfg.use_stable_nll)
            for name, value in (("rec_v", loss.rec_v), ("rec_t", loss.rec_t),
                                ("cross", loss.cross), ("total", loss.total)):
                if not np.isfinite(value):
                    raise NumericalError(
                        f"non-finite {name} loss",
                        context={"epoch": epoch + 1, "batch": start // cfg.batch_size,
                                 "term": name},
                    )
                sums[name] += value

            scale = 1.0 / len(batch)
            grads_v = _apply_grads(adapter_v, zv, loss.grads_v, out_v.cache, scale)
            grads_t = _apply_grads(adapter_t, zt, loss.grads_t, out_t.cache, scale)
            step += 1
            adam_step(adapter_v.params(), grads_v, state_v, step, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            adam_step(adapter_t.params(), grads_t, state_t, step, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        history.loss_rec_v.append(sums["rec_v"] / pairs.n)
        history.loss_rec_t.append(sums["rec_t"] / pairs.n)
        history.loss_cross.append(sums["cross"] / pairs.n)
        history.loss_total.append(sums["total"] / pairs.n)

    return adapter_v, adapter_t, history
