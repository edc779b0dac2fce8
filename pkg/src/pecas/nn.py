"""Layer kernels both networks are assembled from.

Everything here is a pure function over float64 numpy arrays: images and
activations are ``(C, H, W)``, convolution banks ``(F, C, kH, kW)``, dense
weights ``(M, N)``.  Each kernel has an explicit backward companion instead
of an autodiff graph; gradients come back bundled in :class:`LayerGrad`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError
from .rng import SplitMix64

CE_EPSILON = 1e-12


@dataclass
class LayerGrad:
    """Gradients produced by one layer's backward pass.

    ``input_grad`` matches the forward input's shape; ``param_grads`` holds
    one array per parameter in the layer's own order (empty for layers
    without parameters).
    """

    input_grad: np.ndarray
    param_grads: list[np.ndarray] = field(default_factory=list)


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Unroll sliding patches of a padded (C,H,W) input into columns.

    Row order is channel-major then kernel-row-major, so a dot product over
    the rows accumulates contributions channel by channel, row by row.
    """
    c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((c * kh * kw, oh * ow), dtype=np.float64)
    row = 0
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                cols[row] = x[ch, i : i + stride * oh : stride, j : j + stride * ow : stride].ravel()
                row += 1
    return cols, oh, ow


def _col2im(cols: np.ndarray, shape: tuple[int, int, int], kh: int, kw: int,
            stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add columns back onto a (C,H,W) canvas; inverse of _im2col."""
    out = np.zeros(shape, dtype=np.float64)
    c = shape[0]
    row = 0
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                out[ch, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                    cols[row].reshape(oh, ow)
                )
                row += 1
    return out


def _check_conv_args(x, kernels, stride, padding):
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d expects input (C,H,W) and kernels (F,C,kH,kW), "
            f"got {x.shape} and {kernels.shape}"
        )
    if kernels.shape[1] != x.shape[0]:
        raise DimensionError(
            f"kernel channels {kernels.shape[1]} != input channels {x.shape[0]}"
        )
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise DimensionError(f"padding must be >= 0, got {padding}")
    _, h, w = x.shape
    _, _, kh, kw = kernels.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: int = 1) -> np.ndarray:
    """Cross-correlate a (C,H,W) input with a (F,C,kH,kW) bank plus per-filter bias.

    Zero padding, output size floor((H + 2p - kH)/stride) + 1 per axis.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    bias = _as_f64(bias)
    _check_conv_args(x, kernels, stride, padding)
    f, _, kh, kw = kernels.shape
    if bias.shape != (f,):
        raise DimensionError(f"bias shape {bias.shape} != ({f},)")
    cols, oh, ow = _im2col(_pad(x, padding), kh, kw, stride)
    out = kernels.reshape(f, -1) @ cols + bias[:, None]
    return out.reshape(f, oh, ow)


def conv2d_backward(x, kernels, stride: int, padding: int, upstream_grad) -> LayerGrad:
    """Gradients of conv2d_forward w.r.t. input, kernels, and bias."""
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    upstream = _as_f64(upstream_grad)
    _check_conv_args(x, kernels, stride, padding)
    f, _, kh, kw = kernels.shape
    padded = _pad(x, padding)
    cols, oh, ow = _im2col(padded, kh, kw, stride)
    if upstream.shape != (f, oh, ow):
        raise DimensionError(
            f"upstream grad shape {upstream.shape} != output shape {(f, oh, ow)}"
        )
    up_mat = upstream.reshape(f, -1)
    dkernels = (up_mat @ cols.T).reshape(kernels.shape)
    dbias = upstream.sum(axis=(1, 2))
    dcols = kernels.reshape(f, -1).T @ up_mat
    dpadded = _col2im(dcols, padded.shape, kh, kw, stride, oh, ow)
    if padding:
        dx = dpadded[:, padding:-padding, padding:-padding]
    else:
        dx = dpadded
    return LayerGrad(input_grad=np.ascontiguousarray(dx), param_grads=[dkernels, dbias])


def maxpool2_forward_backward(x, upstream_grad=None) -> tuple[np.ndarray, LayerGrad | None]:
    """2x2 non-overlapping max pool; backward routes to each window's argmax.

    Ties go to the first maximal element in row-major window order, so the
    backward pass is deterministic.
    """
    x = _as_f64(x)
    if x.ndim != 3:
        raise DimensionError(f"maxpool expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool needs even H and W, got {h}x{w}")
    windows = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4
    )
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    if upstream_grad is None:
        return out, None
    upstream = _as_f64(upstream_grad)
    if upstream.shape != out.shape:
        raise DimensionError(
            f"upstream grad shape {upstream.shape} != pooled shape {out.shape}"
        )
    dwin = np.zeros_like(windows)
    np.put_along_axis(dwin, arg[..., None], upstream[..., None], axis=3)
    dx = dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
    return out, LayerGrad(input_grad=np.ascontiguousarray(dx))


def relu_forward_backward(x, upstream_grad=None) -> tuple[np.ndarray, LayerGrad | None]:
    """Elementwise max(0, x); backward passes the gradient only where x > 0."""
    x = _as_f64(x)
    out = np.maximum(x, 0.0)
    if upstream_grad is None:
        return out, None
    upstream = _as_f64(upstream_grad)
    if upstream.shape != x.shape:
        raise DimensionError(
            f"upstream grad shape {upstream.shape} != input shape {x.shape}"
        )
    return out, LayerGrad(input_grad=np.where(x > 0.0, upstream, 0.0))


def dense_forward_backward(x, weights, bias, upstream_grad=None):
    """y = W x + b on vectors; grads are dW = g outer x, db = g, dx = W^T g."""
    x = _as_f64(x)
    weights = _as_f64(weights)
    bias = _as_f64(bias)
    if x.ndim != 1 or weights.ndim != 2:
        raise DimensionError(
            f"dense expects vector input and (M,N) weights, got {x.shape} and {weights.shape}"
        )
    m, n = weights.shape
    if x.shape[0] != n:
        raise DimensionError(f"input length {x.shape[0]} != weight columns {n}")
    if bias.shape != (m,):
        raise DimensionError(f"bias shape {bias.shape} != ({m},)")
    out = weights @ x + bias
    if upstream_grad is None:
        return out, None
    upstream = _as_f64(upstream_grad)
    if upstream.shape != (m,):
        raise DimensionError(f"upstream grad shape {upstream.shape} != ({m},)")
    grad = LayerGrad(
        input_grad=weights.T @ upstream,
        param_grads=[np.outer(upstream, x), upstream.copy()],
    )
    return out, grad


def softmax(logits) -> np.ndarray:
    """Stable softmax over a vector of K >= 2 finite logits."""
    z = _as_f64(logits)
    if z.ndim != 1 or z.shape[0] < 2:
        raise DimensionError(f"softmax expects a vector of K >= 2 logits, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains NaN or Inf")
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy_loss(probs, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` plus the combined softmax+CE gradient.

    The returned gradient is with respect to the logits that produced
    ``probs``: probs - onehot(label).
    """
    p = _as_f64(probs)
    if p.ndim != 1:
        raise DimensionError(f"probs must be a vector, got {p.shape}")
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    loss = -float(np.log(p[label] + CE_EPSILON))
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def sgd_step(params, grads, lr: float) -> list[np.ndarray]:
    """One gradient-descent update: p - lr*g for each (p, g) pair."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params vs {len(grads)} grads")
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = _as_f64(p)
        g = _as_f64(g)
        if p.shape != g.shape:
            raise DimensionError(f"param {i} shape {p.shape} != grad shape {g.shape}")
        updated.append(p - lr * g)
    return updated


def finite_difference_gradcheck(fragment, x, epsilon: float = 1e-4,
                                samples_per_tensor: int | None = None,
                                seed: int = 0) -> float:
    """Compare a fragment's analytic gradients against central differences.

    ``fragment`` must expose ``params`` (list of float64 arrays it reads on
    every call), ``loss(x) -> float``, and ``grads(x) -> (input_grad,
    param_grads)``.  Every entry of the input and of each parameter is probed
    with (f(v+eps) - f(v-eps)) / 2eps, unless ``samples_per_tensor`` caps the
    number of probed entries per tensor (chosen by a seeded generator, so the
    subset is reproducible).  Returns the worst relative error
    |a - n| / max(|a|, |n|, 1e-8) over everything probed.
    """
    x = _as_f64(x)
    input_grad, param_grads = fragment.grads(x)
    rng = SplitMix64(seed)

    def probe_indices(size: int):
        if samples_per_tensor is None or size <= samples_per_tensor:
            return range(size)
        picked = set()
        while len(picked) < samples_per_tensor:
            picked.add(rng.randrange(size))
        return sorted(picked)

    worst = 0.0

    def central(get_loss, tensor, idx):
        flat = tensor.reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + epsilon
        hi = get_loss()
        flat[idx] = saved - epsilon
        lo = get_loss()
        flat[idx] = saved
        return (hi - lo) / (2.0 * epsilon)

    probe_x = x.copy()
    for idx in probe_indices(probe_x.size):
        numeric = central(lambda: fragment.loss(probe_x), probe_x, idx)
        analytic = input_grad.reshape(-1)[idx]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))

    for tensor, analytic_grad in zip(fragment.params, param_grads):
        flat_grad = analytic_grad.reshape(-1)
        for idx in probe_indices(tensor.size):
            numeric = central(lambda: fragment.loss(x), tensor, idx)
            analytic = flat_grad[idx]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))

    return float(worst)
