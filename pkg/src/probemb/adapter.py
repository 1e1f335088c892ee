"""Per-modality probabilistic adapter.

A 3-layer MLP (input -> hidden -> hidden, rectifier activations, dropout
after each trunk activation) with three linear heads predicting the mean,
scale, and shape of a generalized Gaussian over the embedding space. The mean
head sits on a residual connection and is zero-initialized, so a fresh
adapter is the identity on embeddings. Forward/backward are hand-written
numpy; gradients are exact including the softplus and clamp Jacobians.

Functions accept a single embedding of shape (d_in,) or a batch (n, d_in).
For batches, backward returns gradients summed over the batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DomainError, FormatError, ShapeError
from .ggd import BETA_MAX, BETA_MIN

ALPHA_FLOOR = 1e-4

MAGIC = b"PVLMADPT"
VERSION = 1

# Serialization order of the parameter tensors.
PARAM_NAMES = (
    "w1", "b1", "w2", "b2",
    "w_mu", "b_mu", "w_alpha", "b_alpha", "w_beta", "b_beta",
)


def softpos(x):
    """ln(1 + e^x), overflow-safe."""
    return np.logaddexp(0.0, x)


def softpos_inv(y):
    """Inverse of softpos for y > 0."""
    return np.log(np.expm1(y))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AdapterNetwork:
    """Weights of one modality's adapter."""

    d_in: int
    d_hidden: int
    dropout_p: float
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_alpha: np.ndarray
    b_alpha: np.ndarray
    w_beta: np.ndarray
    b_beta: np.ndarray
    alpha_floor: float = ALPHA_FLOOR
    beta_min: float = BETA_MIN
    beta_max: float = BETA_MAX

    def params(self) -> list[np.ndarray]:
        """Parameter tensors in serialization order."""
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "AdapterNetwork":
        return AdapterNetwork(
            self.d_in, self.d_hidden, self.dropout_p,
            *[np.array(p) for p in self.params()],
            alpha_floor=self.alpha_floor, beta_min=self.beta_min, beta_max=self.beta_max,
        )

    def validate(self) -> "AdapterNetwork":
        if not (0.0 <= self.dropout_p < 1.0):
            raise DomainError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        shapes = {
            "w1": (self.d_in, self.d_hidden), "b1": (self.d_hidden,),
            "w2": (self.d_hidden, self.d_hidden), "b2": (self.d_hidden,),
            "w_mu": (self.d_hidden, self.d_in), "b_mu": (self.d_in,),
            "w_alpha": (self.d_hidden, self.d_in), "b_alpha": (self.d_in,),
            "w_beta": (self.d_hidden, self.d_in), "b_beta": (self.d_in,),
        }
        for name, want in shapes.items():
            t = getattr(self, name)
            if t.shape != want:
                raise ShapeError(f"{name} has shape {t.shape}, expected {want}")
            if not np.all(np.isfinite(t)):
                raise DomainError(f"{name} contains non-finite values")
        return self


@dataclass
class ForwardCache:
    """Intermediate values needed for the exact backward pass."""

    z: np.ndarray
    a1: np.ndarray
    mask1: np.ndarray | None
    h1: np.ndarray
    a2: np.ndarray
    mask2: np.ndarray | None
    trunk: np.ndarray
    s_alpha: np.ndarray
    s_beta: np.ndarray


@dataclass
class AdapterOutput:
    """Predicted distribution parameters plus the backward cache."""

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    cache: ForwardCache = field(repr=False)


def init_adapter(d_in: int, d_hidden: int = 256, dropout_p: float = 0.1,
                 seed: int = 0) -> AdapterNetwork:
    """Fresh adapter whose forward pass is the identity with alpha=1, beta=2.

    Trunk weights and biases use symmetric uniform fan-in scaling; all three
    head weight matrices start at zero, so mu == z exactly (residual
    connection) and the alpha/beta head biases pin the initial scale and
    shape regardless of the input.
    """
    if d_in < 1 or d_hidden < 1:
        raise DomainError("d_in and d_hidden must be >= 1")
    if not (0.0 <= dropout_p < 1.0):
        raise DomainError(f"dropout_p must be in [0, 1), got {dropout_p}")
    rng = np.random.default_rng(seed)
    k1 = 1.0 / np.sqrt(d_in)
    k2 = 1.0 / np.sqrt(d_hidden)
    net = AdapterNetwork(
        d_in=d_in, d_hidden=d_hidden, dropout_p=float(dropout_p),
        w1=rng.uniform(-k1, k1, size=(d_in, d_hidden)),
        b1=rng.uniform(-k1, k1, size=d_hidden),
        w2=rng.uniform(-k2, k2, size=(d_hidden, d_hidden)),
        b2=rng.uniform(-k2, k2, size=d_hidden),
        w_mu=np.zeros((d_hidden, d_in)),
        b_mu=np.zeros(d_in),
        w_alpha=np.zeros((d_hidden, d_in)),
        b_alpha=np.full(d_in, float(softpos_inv(1.0 - ALPHA_FLOOR))),
        w_beta=np.zeros((d_hidden, d_in)),
        b_beta=np.full(d_in, float(softpos_inv(2.0 - BETA_MIN))),
    )
    return net.validate()


def forward(net: AdapterNetwork, z, dropout_on: bool = False,
            rng: np.random.Generator | None = None) -> AdapterOutput:
    """Predict GGD parameters for one embedding or a batch of embeddings."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != net.d_in:
        raise ShapeError(f"input has width {z.shape[-1]}, adapter expects {net.d_in}")
    if z.ndim not in (1, 2):
        raise ShapeError(f"input must be 1-D or 2-D, got shape {z.shape}")

    use_dropout = dropout_on and net.dropout_p > 0.0
    if use_dropout and rng is None:
        raise DomainError("dropout_on requires a random generator")
    keep = 1.0 - net.dropout_p

    a1 = z @ net.w1 + net.b1
    h1 = np.maximum(a1, 0.0)
    mask1 = None
    if use_dropout:
        mask1 = (rng.random(size=h1.shape) >= net.dropout_p) / keep
        h1 = h1 * mask1
    a2 = h1 @ net.w2 + net.b2
    h2 = np.maximum(a2, 0.0)
    mask2 = None
    if use_dropout:
        mask2 = (rng.random(size=h2.shape) >= net.dropout_p) / keep
        h2 = h2 * mask2

    s_alpha = h2 @ net.w_alpha + net.b_alpha
    s_beta = h2 @ net.w_beta + net.b_beta
    mu = z + h2 @ net.w_mu + net.b_mu
    alpha = net.alpha_floor + softpos(s_alpha)
    beta = np.minimum(net.beta_min + softpos(s_beta), net.beta_max)

    cache = ForwardCache(z=z, a1=a1, mask1=mask1, h1=h1, a2=a2, mask2=mask2,
                         trunk=h2, s_alpha=s_alpha, s_beta=s_beta)
    return AdapterOutput(mu=mu, alpha=alpha, beta=beta, cache=cache)


def backward(net: AdapterNetwork, z, grad_mu, grad_alpha, grad_beta,
             cache: ForwardCache) -> list[np.ndarray]:
    """Exact parameter gradients given partials w.r.t. (mu, alpha, beta).

    Returns gradients in the order of ``AdapterNetwork.params()``. The cache
    must come from the forward call that produced the outputs the upstream
    gradients refer to (same dropout masks).
    """
    z = np.asarray(z, dtype=np.float64)
    if cache.z.shape != z.shape or not np.array_equal(cache.z, z):
        raise ContractViolationError("backward called with a cache from a different input")
    grad_mu = np.asarray(grad_mu, dtype=np.float64)
    grad_alpha = np.asarray(grad_alpha, dtype=np.float64)
    grad_beta = np.asarray(grad_beta, dtype=np.float64)
    for g in (grad_mu, grad_alpha, grad_beta):
        if g.shape != z.shape:
            raise ShapeError(f"upstream gradient shape {g.shape} does not match input {z.shape}")

    single = z.ndim == 1
    def rows(a):
        return a[None, :] if single else a

    z2, gm = rows(z), rows(grad_mu)
    trunk = rows(cache.trunk)
    # Head Jacobians: softplus for alpha; softplus then upper clamp for beta.
    ds_alpha = rows(grad_alpha) * _sigmoid(rows(cache.s_alpha))
    beta_free = net.beta_min + rows(softpos(cache.s_beta)) < net.beta_max
    ds_beta = rows(grad_beta) * _sigmoid(rows(cache.s_beta)) * beta_free

    g_trunk = gm @ net.w_mu.T + ds_alpha @ net.w_alpha.T + ds_beta @ net.w_beta.T
    d_w_mu = trunk.T @ gm
    d_b_mu = gm.sum(axis=0)
    d_w_alpha = trunk.T @ ds_alpha
    d_b_alpha = ds_alpha.sum(axis=0)
    d_w_beta = trunk.T @ ds_beta
    d_b_beta = ds_beta.sum(axis=0)

    g_h2 = g_trunk if cache.mask2 is None else g_trunk * rows(cache.mask2)
    g_a2 = g_h2 * (rows(cache.a2) > 0.0)
    d_w2 = rows(cache.h1).T @ g_a2
    d_b2 = g_a2.sum(axis=0)

    g_h1 = g_a2 @ net.w2.T
    if cache.mask1 is not None:
        g_h1 = g_h1 * rows(cache.mask1)
    g_a1 = g_h1 * (rows(cache.a1) > 0.0)
    d_w1 = z2.T @ g_a1
    d_b1 = g_a1.sum(axis=0)

    return [d_w1, d_b1, d_w2, d_b2, d_w_mu, d_b_mu, d_w_alpha, d_b_alpha, d_w_beta, d_b_beta]


def serialize(net: AdapterNetwork) -> bytes:
    """Little-endian adapter file: magic, version, dims, dropout, tensors."""
    net.validate()
    parts = [MAGIC]
    parts.append(struct.pack("<I", VERSION))
    parts.append(struct.pack("<I", net.d_in))
    parts.append(struct.pack("<I", net.d_hidden))
    parts.append(struct.pack("<d", net.dropout_p))
    for tensor in net.params():
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> AdapterNetwork:
    """Parse an adapter file, reporting the byte offset of any problem."""
    if len(data) < 8:
        raise FormatError("file truncated before magic", offset=len(data))
    if data[:8] != MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}", offset=0)
    header = struct.Struct("<IIId")
    if len(data) < 8 + header.size:
        raise FormatError("file truncated inside header", offset=len(data))
    version, d_in, d_hidden, dropout_p = header.unpack_from(data, 8)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if d_in < 1 or d_hidden < 1:
        raise FormatError(f"invalid dimensions d_in={d_in}, d_hidden={d_hidden}", offset=12)
    shapes = [
        (d_in, d_hidden), (d_hidden,), (d_hidden, d_hidden), (d_hidden,),
        (d_hidden, d_in), (d_in,), (d_hidden, d_in), (d_in,), (d_hidden, d_in), (d_in,),
    ]
    offset = 8 + header.size
    tensors = []
    for name, shape in zip(PARAM_NAMES, shapes):
        count = int(np.prod(shape))
        nbytes = count * 8
        if len(data) < offset + nbytes:
            raise FormatError(f"file truncated inside tensor {name}", offset=len(data))
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        if not np.all(np.isfinite(flat)):
            bad = int(np.flatnonzero(~np.isfinite(flat))[0])
            raise FormatError(f"non-finite value in tensor {name}", offset=offset + bad * 8)
        tensors.append(flat.reshape(shape).astype(np.float64))
        offset += nbytes
    if len(data) != offset:
        raise FormatError(f"{len(data) - offset} trailing bytes after last tensor", offset=offset)
    net = AdapterNetwork(int(d_in), int(d_hidden), float(dropout_p), *tensors)
    return net.validate()


def interpolate_adapters(nets: list[AdapterNetwork], weights) -> AdapterNetwork:
    """Elementwise convex combination of every parameter tensor."""
    if not nets:
        raise DomainError("need at least one adapter to interpolate")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(nets),):
        raise DomainError(f"got {len(nets)} adapters but {weights.size} weights")
    if np.any(weights < 0.0):
        raise DomainError("interpolation weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise DomainError(f"interpolation weights sum to {weights.sum()}, expected 1")
    first = nets[0]
    for other in nets[1:]:
        if (other.d_in, other.d_hidden) != (first.d_in, first.d_hidden):
            raise ShapeError("adapters have mismatched dimensions")
    blended = [
        sum(w * net.params()[i] for w, net in zip(weights, nets))
        for i in range(len(PARAM_NAMES))
    ]
    dropout_p = float(np.dot(weights, [net.dropout_p for net in nets]))
    return AdapterNetwork(first.d_in, first.d_hidden, dropout_p, *blended).validate()
