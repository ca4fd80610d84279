# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
Dense numeric kernels.

Tensors are numpy float32 arrays in (batch, channels, height, width) order,
row-major. Every kernel here is a pure function of its arguments; the layer
objects in orientnet.layers own caching and parameters.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from orientnet.errors import NumericError, ShapeError, UsageError

Tensor = np.ndarray
DTYPE = np.float32


def as_tensor(data, shape: Optional[Sequence[int]] = None) -> Tensor:
    """
    Build a contiguous float32 tensor.

    Arguments:
        data: array-like values
        shape: optional shape to reshape to, product must match
    Returns:
        float32 ndarray
    """
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"{arr.size} values cannot fill shape", shape)
        arr = arr.reshape(shape)
    if any(s < 1 for s in arr.shape):
        raise ShapeError("tensor extents must all be >= 1", arr.shape)
    return arr


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_conv(x: Tensor, w: Tensor, b: Tensor, stride: int, pad: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("convolution expects 4-d input and weights",
                         x.shape, w.shape)
    if x.shape[1] != w.shape[1]:
        raise ShapeError("input channels do not match weight input channels",
                         x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("bias must have one value per output channel",
                         b.shape, w.shape)
    if stride < 1 or pad < 0:
        raise UsageError(f"invalid stride/pad: stride={stride} pad={pad}")
    _, _, h, wd = x.shape
    kh, kw = w.shape[2:]
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ShapeError("kernel larger than padded input", x.shape, w.shape)


def _pad(x: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x: Tensor, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    """
    Unfold input windows into a patch matrix.

    Returns:
        (N*H'*W', C*kh*kw) matrix, rows ordered (n, h', w'),
        columns ordered (c, i, j)
    """
    n, c, _, _ = x.shape
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def col2im(cols: Tensor, x_shape: Sequence[int], kh: int, kw: int,
           stride: int, pad: int) -> Tensor:
    """Fold a patch-matrix gradient back onto the input, summing overlaps."""
    n, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * (oh - 1) + 1:stride,
               j:j + stride * (ow - 1) + 1:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        xp = xp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(xp)


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                   pad: int = 0, method: str = "im2col") -> Tensor:
    """
    2-d cross-correlation with zero padding.

    Arguments:
        x: input [N, Cin, H, W]
        w: weights [Cout, Cin, Kh, Kw]
        b: bias [Cout]
        stride: step between windows
        pad: zeros added on every spatial border
        method: "im2col" (patch matrix) or "window" (per kernel offset)
    Returns:
        output [N, Cout, H', W']
    """
    _check_conv(x, w, b, stride, pad)
    n, _, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(wd, kw, stride, pad)
    if method == "im2col":
        cols = im2col(x, kh, kw, stride, pad)
        out = cols @ w.reshape(cout, -1).T
        if b is not None:
            out = out + b
        out = out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out)
    if method == "window":
        xp = _pad(x, pad)
        out = np.zeros((n, cout, oh, ow), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + stride * (oh - 1) + 1:stride,
                           j:j + stride * (ow - 1) + 1:stride]
                out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j])
        if b is not None:
            out += b.reshape(1, cout, 1, 1)
        return out
    raise UsageError(f"unknown convolution method {method!r}")


def conv2d_backward(grad_out: Tensor, x: Optional[Tensor], w: Tensor,
                    stride: int = 1, pad: int = 0,
                    need_input_grad: bool = True
                    ) -> Tuple[Optional[Tensor], Tensor, Tensor]:
    """
    Gradients of conv2d_forward.

    Arguments:
        grad_out: gradient w.r.t. the forward output
        x: the input cached by the forward pass
        w: weights used by the forward pass
        need_input_grad: skip the input gradient when False
    Returns:
        (grad_input, grad_weights, grad_bias)
    """
    if x is None:
        raise UsageError("conv2d_backward called without cached forward input")
    _check_conv(x, w, None, stride, pad)
    n, _, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    expected = (n, cout, conv_output_size(h, kh, stride, pad),
                conv_output_size(wd, kw, stride, pad))
    if tuple(grad_out.shape) != expected:
        raise ShapeError("gradient does not match convolution output",
                         grad_out.shape, expected)
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    cols = im2col(x, kh, kw, stride, pad)
    grad_w = (g2.T @ cols).reshape(w.shape)
    grad_b = g2.sum(axis=0)
    grad_x = None
    if need_input_grad:
        dcols = g2 @ w.reshape(cout, -1)
        grad_x = col2im(dcols, x.shape, kh, kw, stride, pad)
    return grad_x, grad_w, grad_b


def pool_output_size(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def maxpool_forward(x: Tensor, window: int, stride: int
                    ) -> Tuple[Tensor, np.ndarray]:
    """
    Max pooling without padding.

    Returns:
        (output, argmax) where argmax holds, for every output element, the
        flat h*W+w index of the winning input element. Ties go to the
        lowest index.
    """
    if x.ndim != 4:
        raise ShapeError("max pooling expects a 4-d input", x.shape)
    if window < 1 or stride < 1:
        raise UsageError(f"invalid pooling window={window} stride={stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pooling window {window} larger than input", x.shape)
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh).reshape(oh, 1) * stride + local // window
    cols = np.arange(ow).reshape(1, ow) * stride + local % window
    return np.ascontiguousarray(out), rows * w + cols


def maxpool_backward(grad_out: Tensor, argmax: np.ndarray,
                     input_shape: Sequence[int]) -> Tensor:
    """Route each output gradient to its recorded winner."""
    if argmax is None:
        raise UsageError("maxpool_backward called without cached argmax")
    n, c, h, w = input_shape
    if grad_out.shape != argmax.shape:
        raise ShapeError("gradient does not match pooling output",
                         grad_out.shape, argmax.shape)
    base = (np.arange(n * c).reshape(n, c, 1, 1) * (h * w))
    index = (argmax + base).ravel()
    grad = np.bincount(index, weights=grad_out.ravel(), minlength=n * c * h * w)
    return grad.astype(grad_out.dtype).reshape(n, c, h, w)


def _channel_window_sum(x: Tensor, radius: int) -> Tensor:
    """Sum over channels c-radius..c+radius, clamped at the edges."""
    c = x.shape[1]
    out = x.copy()
    for d in range(1, radius + 1):
        if d >= c:
            break
        out[:, d:] += x[:, :-d]
        out[:, :-d] += x[:, d:]
    return out


def lrn_forward(x: Tensor, depth_radius: int = 5, alpha: float = 1e-4,
                beta: float = 0.75, k: float = 2.0) -> Tensor:
    """
    Cross-channel local response normalization.

    b_c = a_c / (k + alpha * sum(a_j^2 for j within depth_radius of c)) ** beta
    """
    if x.ndim != 4:
        raise ShapeError("local response normalization expects 4-d input",
                         x.shape)
    scale = k + alpha * _channel_window_sum(x * x, depth_radius)
    return (x * np.power(scale, -beta)).astype(x.dtype, copy=False)


def lrn_backward(grad_out: Tensor, x: Optional[Tensor], depth_radius: int = 5,
                 alpha: float = 1e-4, beta: float = 0.75,
                 k: float = 2.0) -> Tensor:
    """Gradient of lrn_forward with respect to its input."""
    if x is None:
        raise UsageError("lrn_backward called without cached forward input")
    if grad_out.shape != x.shape:
        raise ShapeError("gradient does not match LRN input",
                         grad_out.shape, x.shape)
    scale = k + alpha * _channel_window_sum(x * x, depth_radius)
    scale_pow = np.power(scale, -beta)
    inner = grad_out * x * scale_pow / scale
    grad = grad_out * scale_pow - \
        (2.0 * alpha * beta) * x * _channel_window_sum(inner, depth_radius)
    return grad.astype(grad_out.dtype, copy=False)


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    """Gradient is masked where the input is <= 0."""
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("cannot add tensors of different shapes",
                         a.shape, b.shape)
    return a + b


def scale(a: Tensor, factor: float) -> Tensor:
    return (a * factor).astype(a.dtype, copy=False)


def gaussian_noise(x: Tensor, sigma: float,
                   rng: np.random.Generator) -> Tensor:
    """Add N(0, sigma^2) noise; sigma 0 returns an unchanged copy."""
    if sigma < 0:
        raise UsageError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.copy()
    noise = rng.normal(0.0, sigma, size=x.shape).astype(x.dtype)
    return x + noise


def check_finite(x: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    """
    Resize every channel of a [C, H, W] tensor to [C, height, width].

    Aspect ratio is not preserved.
    """
    if x.ndim != 3:
        raise ShapeError("resize expects a [C, H, W] tensor", x.shape)
    if x.shape[1:] == (height, width):
        return x.astype(DTYPE, copy=True)
    channels = []
    for ch in x.astype(DTYPE, copy=False):
        img = Image.fromarray(np.ascontiguousarray(ch))
        img = img.resize((width, height), resample=Image.Resampling.BILINEAR)
        channels.append(np.asarray(img, dtype=DTYPE))
    return np.stack(channels)
