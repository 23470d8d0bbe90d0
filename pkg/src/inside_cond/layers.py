"""Conditioning layers: FiLM, conditional instance norm, Guiding Block, and
Gaussian-attention feature modulation, plus the auxiliary MLP that predicts
their parameters from a conditioning vector.

All forwards accept feature maps shaped [N, C, H, W] (a leading batch axis is
added for [C, H, W] inputs) and parameter records whose fields are Tensors
with a matching batch axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

# The Gaussian may span at most +/-3.5 sigma across the normalized [-1, 1]
# axis, i.e. sigma_max = 2 / 7; raw sigmas are sigmoid outputs in [0, 1].
SIGMA_MAX = 2.0 / 7.0
SIGMA_FLOOR = 1e-4

LAYER_KINDS = (
    "film",
    "cin",
    "guiding",
    "inside-single",
    "inside-multi",
    "attention-single",
    "attention-multi",
)


@dataclass
class GaussianParams:
    """Per-channel attention parameters: means in [-1, 1], raw sigmas in [0, 1]."""

    mu_h: Tensor
    sigma_h_raw: Tensor
    mu_w: Tensor
    sigma_w_raw: Tensor


@dataclass
class FilmParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class CinParams:
    gamma_s: Tensor
    beta_s: Tensor
    epsilon: float = 1e-5


@dataclass
class GuidingParams:
    alpha: Tensor      # length H, shared across channels
    beta_w: Tensor     # length W, shared across channels
    gamma_s: Tensor    # per channel
    gamma_b: Tensor    # per channel


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _batched(t, ndim):
    """Give `t` a leading batch axis if it has none."""
    t = _as_tensor(t)
    if t.ndim == ndim - 1:
        t = t.reshape((1,) + t.shape)
    return t


def _expand(t, shape):
    return t.reshape(shape)


def gaussian_vector(mu, sigma_raw, length):
    """Unnormalized Gaussian profile over `length` coordinates spanning [-1, 1].

    a_i = exp(-(x_i - mu)^2 / (2 sigma^2)) with sigma = max(1e-4,
    sigma_raw * SIGMA_MAX); peak value 1 at x = mu.  `mu` and `sigma_raw`
    may be scalars or Tensors of any shape; the profile axis is appended.
    """
    if length < 2:
        raise ValueError(f"gaussian_vector needs length >= 2, got {length}")
    mu = _as_tensor(mu)
    sigma_raw = _as_tensor(sigma_raw)
    if np.any(mu.data < -1.0) or np.any(mu.data > 1.0):
        warnings.warn("gaussian_vector: mu outside [-1, 1]; clamping")
        mu = mu.clip(-1.0, 1.0)
    if np.any(sigma_raw.data < 0.0) or np.any(sigma_raw.data > 1.0):
        warnings.warn("gaussian_vector: sigma_raw outside [0, 1]; clamping")
        sigma_raw = sigma_raw.clip(0.0, 1.0)
    coords = Tensor(np.linspace(-1.0, 1.0, length, dtype=mu.dtype))
    mu_e = mu.reshape(mu.shape + (1,))
    sigma = (sigma_raw * SIGMA_MAX).clamp_min(SIGMA_FLOOR)
    sigma_e = sigma.reshape(sigma.shape + (1,))
    diff = coords - mu_e
    return (-(diff.square()) / (sigma_e.square() * 2.0)).exp()


def attention_matrix(a_h, a_w):
    """Rank-1 attention map: out[..., i, j] = a_h[..., i] * a_w[..., j]."""
    a_h, a_w = _as_tensor(a_h), _as_tensor(a_w)
    if a_h.size == 0 or a_w.size == 0:
        raise ShapeError("attention_matrix: empty input vector")
    lhs = a_h.reshape(a_h.shape + (1,))
    rhs = a_w.reshape(a_w.shape[:-1] + (1, a_w.shape[-1]))
    return lhs * rhs


def _attention_from(gauss, C, H, W):
    """Attention maps [N, Ca, H, W]; Ca is C or 1 (shared single attention)."""
    mu_h = _batched(gauss.mu_h, 2)
    a_h = gaussian_vector(mu_h, _batched(gauss.sigma_h_raw, 2), H)
    a_w = gaussian_vector(_batched(gauss.mu_w, 2), _batched(gauss.sigma_w_raw, 2), W)
    ca = a_h.shape[1]
    if ca not in (1, C):
        raise ShapeError(
            f"attention channel count {ca} incompatible with {C} feature maps")
    return attention_matrix(a_h, a_w)


def film_forward(F, params):
    """out_c = gamma_c * F_c + beta_c."""
    F = _batched(F, 4)
    N, C, H, W = F.shape
    gamma = _batched(params.gamma, 2)
    beta = _batched(params.beta, 2)
    if gamma.shape[-1] != C:
        raise ShapeError(f"film_forward: {gamma.shape[-1]} gammas for {C} channels")
    g = _expand(gamma, gamma.shape + (1, 1))
    b = _expand(beta, beta.shape + (1, 1))
    return F * g + b


def inside_forward(F, gauss, film):
    """out_c = F_c (.) a_c (.) gamma_c + beta_c with rank-1 Gaussian attention."""
    F = _batched(F, 4)
    N, C, H, W = F.shape
    a = _attention_from(gauss, C, H, W)
    return film_forward(F * a, film)


def attention_only_forward(F, gauss):
    """Gaussian attention without the feature-wise modulation (ablation)."""
    F = _batched(F, 4)
    N, C, H, W = F.shape
    return F * _attention_from(gauss, C, H, W)


def cin_forward(F, params):
    """Standardize each feature map by its own mean/std, then scale and shift."""
    F = _batched(F, 4)
    N, C, H, W = F.shape
    if H * W < 2:
        raise ShapeError("cin_forward needs at least 2 spatial elements")
    gamma = _batched(params.gamma_s, 2)
    beta = _batched(params.beta_s, 2)
    if gamma.shape[-1] != C:
        raise ShapeError(f"cin_forward: {gamma.shape[-1]} gammas for {C} channels")
    mu = F.mean(axis=(2, 3), keepdims=True)
    var = (F - mu).square().mean(axis=(2, 3), keepdims=True)
    std = var.clamp_min(params.epsilon ** 2).sqrt()  # floors std at epsilon
    g = _expand(gamma, gamma.shape + (1, 1))
    b = _expand(beta, beta.shape + (1, 1))
    return (F - mu) / std * g + b


def guiding_block_forward(F, params):
    """out[c,h,w] = (1 + alpha[h] + beta_w[w] + gamma_s[c]) F[c,h,w] + gamma_b[c]."""
    F = _batched(F, 4)
    N, C, H, W = F.shape
    alpha = _batched(params.alpha, 2)
    beta_w = _batched(params.beta_w, 2)
    gamma_s = _batched(params.gamma_s, 2)
    gamma_b = _batched(params.gamma_b, 2)
    if alpha.shape[-1] != H or beta_w.shape[-1] != W:
        raise ShapeError(
            f"guiding_block_forward: alpha/beta_w lengths {alpha.shape[-1]}/"
            f"{beta_w.shape[-1]} do not match H={H}, W={W}")
    a = alpha.reshape((alpha.shape[0], 1, H, 1))
    b = beta_w.reshape((beta_w.shape[0], 1, 1, W))
    gs = _expand(gamma_s, gamma_s.shape + (1, 1))
    gb = _expand(gamma_b, gamma_b.shape + (1, 1))
    return (a + b + gs + 1.0) * F + gb


def hypernet_output_width(kind, c, H=None, W=None):
    """Final-layer width of the auxiliary MLP for each layer kind."""
    if kind in ("film", "cin"):
        return 2 * c
    if kind == "guiding":
        if H is None or W is None:
            raise ValueError("guiding hypernet needs the feature-map H and W")
        return 2 * c + H + W
    if kind == "inside-multi":
        return 6 * c
    if kind == "inside-single":
        return 2 * c + 4
    if kind == "attention-multi":
        return 4 * c
    if kind == "attention-single":
        return 4
    raise ValueError(f"unknown conditioning layer kind: {kind!r}")


class Hypernet:
    """3-layer MLP (c/2 - c/2 - n) mapping the conditioning vector to layer
    parameters.  Hidden activations are tanh; output heads are identity for
    scale/shift (and the Guiding Block's spatial vectors), tanh for Gaussian
    means, sigmoid for raw sigmas.

    Scale heads predict a residual around 1, so the zero-initialized final
    layer starts every layer at the identity modulation: gamma = 1, beta = 0,
    mu = 0, sigma_raw = 0.5.
    """

    def __init__(self, kind, z_dim, c, H=None, W=None, rng=None, dtype=np.float64,
                 prefix="hypernet"):
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown conditioning layer kind: {kind!r}")
        self.kind = kind
        self.z_dim = z_dim
        self.c = c
        self.H, self.W = H, W
        self.prefix = prefix
        hidden = max(1, c // 2)
        out = hypernet_output_width(kind, c, H, W)
        rng = rng or np.random.default_rng(0)

        def xavier(n_in, n_out):
            bound = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)

        self.weights = {
            f"{prefix}/w1": Tensor(xavier(z_dim, hidden), requires_grad=True),
            f"{prefix}/b1": Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
            f"{prefix}/w2": Tensor(xavier(hidden, hidden), requires_grad=True),
            f"{prefix}/b2": Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
            f"{prefix}/w3": Tensor(np.zeros((hidden, out), dtype=dtype), requires_grad=True),
            f"{prefix}/b3": Tensor(np.zeros(out, dtype=dtype), requires_grad=True),
        }

    def forward(self, z):
        """Predict the parameter record(s) for a batch of conditioning vectors."""
        z = _batched(z, 2)
        if z.shape[1] != self.z_dim:
            raise ShapeError(
                f"hypernet expects conditioning vectors of length {self.z_dim}, "
                f"got {z.shape[1]}")
        w = self.weights
        p = self.prefix
        h = (z @ w[f"{p}/w1"] + w[f"{p}/b1"]).tanh()
        h = (h @ w[f"{p}/w2"] + w[f"{p}/b2"]).tanh()
        raw = h @ w[f"{p}/w3"] + w[f"{p}/b3"]
        c = self.c
        kind = self.kind
        if kind == "film":
            return FilmParams(gamma=raw[:, :c] + 1.0, beta=raw[:, c:2 * c])
        if kind == "cin":
            return CinParams(gamma_s=raw[:, :c] + 1.0, beta_s=raw[:, c:2 * c])
        if kind == "guiding":
            H, W = self.H, self.W
            return GuidingParams(
                gamma_s=raw[:, :c],
                gamma_b=raw[:, c:2 * c],
                alpha=raw[:, 2 * c:2 * c + H],
                beta_w=raw[:, 2 * c + H:2 * c + H + W],
            )
        if kind == "inside-multi":
            film = FilmParams(gamma=raw[:, :c] + 1.0, beta=raw[:, c:2 * c])
            gauss = GaussianParams(
                mu_h=raw[:, 2 * c:3 * c].tanh(),
                mu_w=raw[:, 3 * c:4 * c].tanh(),
                sigma_h_raw=raw[:, 4 * c:5 * c].sigmoid(),
                sigma_w_raw=raw[:, 5 * c:6 * c].sigmoid(),
            )
            return gauss, film
        if kind == "inside-single":
            film = FilmParams(gamma=raw[:, :c] + 1.0, beta=raw[:, c:2 * c])
            gauss = GaussianParams(
                mu_h=raw[:, 2 * c:2 * c + 1].tanh(),
                mu_w=raw[:, 2 * c + 1:2 * c + 2].tanh(),
                sigma_h_raw=raw[:, 2 * c + 2:2 * c + 3].sigmoid(),
                sigma_w_raw=raw[:, 2 * c + 3:2 * c + 4].sigmoid(),
            )
            return gauss, film
        if kind == "attention-multi":
            return GaussianParams(
                mu_h=raw[:, :c].tanh(),
                mu_w=raw[:, c:2 * c].tanh(),
                sigma_h_raw=raw[:, 2 * c:3 * c].sigmoid(),
                sigma_w_raw=raw[:, 3 * c:4 * c].sigmoid(),
            )
        # attention-single
        return GaussianParams(
            mu_h=raw[:, 0:1].tanh(),
            mu_w=raw[:, 1:2].tanh(),
            sigma_h_raw=raw[:, 2:3].sigmoid(),
            sigma_w_raw=raw[:, 3:4].sigmoid(),
        )


def conditioning_forward(kind, F, params):
    """Apply the layer named by `kind`; returns (output, sigma_raw tensors)."""
    if kind == "film":
        return film_forward(F, params), []
    if kind == "cin":
        return cin_forward(F, params), []
    if kind == "guiding":
        return guiding_block_forward(F, params), []
    if kind in ("inside-multi", "inside-single"):
        gauss, film = params
        out = inside_forward(F, gauss, film)
        return out, [gauss.sigma_h_raw, gauss.sigma_w_raw]
    if kind in ("attention-multi", "attention-single"):
        out = attention_only_forward(F, params)
        return out, [params.sigma_h_raw, params.sigma_w_raw]
    raise ValueError(f"unknown conditioning layer kind: {kind!r}")


def mean_attention_map(gauss, H, W):
    """Channel-averaged attention map as a numpy [H, W] array (for export)."""
    a_h = gaussian_vector(_batched(gauss.mu_h, 2).detach(),
                          _batched(gauss.sigma_h_raw, 2).detach(), H)
    a_w = gaussian_vector(_batched(gauss.mu_w, 2).detach(),
                          _batched(gauss.sigma_w_raw, 2).detach(), W)
    maps = attention_matrix(a_h, a_w).data  # [N, C, H, W]
    return maps.mean(axis=(0, 1))
