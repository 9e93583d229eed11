"""Small differentiable velocity-field model on latent videos.

The network maps (latent, timestep, condition) -> velocity with output dims
equal to input dims. Stack: three 3x3 spatial convolutions applied per
frame, interleaved with depthwise temporal convolutions (kernel 3 over the
frame axis), tanh between layers. The final convolution is linear with no
bias, so an all-zero parameter vector maps everything to zero. The timestep
enters through a sinusoidal feature vector projected to a per-channel bias;
the condition through an embedding table (one extra row is the null token)
projected the same way. Both biases are added before the first tanh.

Reverse mode is hand-written: forward_with_tape stores the activations,
backward_input / backward_params replay the chain. Everything is float64
and deterministic.

Checkpoint format "FMM1", little-endian: magic, six u32 architecture fields
(in_channels, hidden, kernel, temb_width, cemb_width, vocab), parameter
count as u64, parameters as binary64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Rng
from .tensors import TensorFormatError, TensorValueError, validate_latent

MODEL_MAGIC = b"FMM1"
_TEMPORAL_KERNEL = 3


class ShapeError(ValueError):
    """Input dims incompatible with the model architecture."""


@dataclass(frozen=True)
class Architecture:
    in_channels: int
    hidden: int = 16
    kernel: int = 3
    temb_width: int = 8
    cemb_width: int = 8
    vocab: int = 2

    def __post_init__(self):
        if self.in_channels < 1 or self.hidden < 1 or self.vocab < 1:
            raise ValueError("channel widths and vocab must be >= 1")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError("spatial kernel must be odd")
        if self.temb_width % 2 != 0 or self.temb_width < 2:
            raise ValueError("timestep embedding width must be even and >= 2")
        if self.cemb_width < 1:
            raise ValueError("condition embedding width must be >= 1")

    def param_shapes(self):
        c, n, k = self.in_channels, self.hidden, self.kernel
        kt = _TEMPORAL_KERNEL
        return [
            ("w1", (n, c, k, k)),
            ("b1", (n,)),
            ("t1", (n, kt)),
            ("bt1", (n,)),
            ("w2", (n, n, k, k)),
            ("b2", (n,)),
            ("t2", (n, kt)),
            ("bt2", (n,)),
            ("w3", (c, n, k, k)),
            ("pt", (self.temb_width, n)),
            ("ec", (self.vocab + 1, self.cemb_width)),
            ("pc", (self.cemb_width, n)),
        ]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


def _im2col(x, k):
    """(F, W, H, Cin) -> (F*W*H, k*k*Cin) patch matrix, zero padded."""
    f, wd, hd, cin = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((f, wd, hd, k * k * cin))
    for dw in range(k):
        for dh in range(k):
            j = (dw * k + dh) * cin
            cols[..., j : j + cin] = xp[:, dw : dw + wd, dh : dh + hd, :]
    return cols.reshape(f * wd * hd, k * k * cin)


def _conv2d(x, w, b):
    # x: (F, W, H, Cin), w: (Cout, Cin, k, k); zero padding, same size
    f, wd, hd, cin = x.shape
    cout, _, k, _ = w.shape
    wmat = w.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
    out = (_im2col(x, k) @ wmat).reshape(f, wd, hd, cout)
    if b is not None:
        out += b
    return out


def _conv2d_vjp_x(g, w):
    # correlate the cotangent with the flipped kernel, Cout -> Cin
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return _conv2d(g, wf, None)


def _conv2d_grad_w(g, x, k):
    f, wd, hd, cin = x.shape
    cout = g.shape[3]
    gmat = _im2col(x, k).T @ g.reshape(f * wd * hd, cout)
    return gmat.reshape(k, k, cin, cout).transpose(3, 2, 0, 1)


def _tconv(x, t, b):
    # depthwise temporal convolution, kernel 3 over frames, zero padding
    f = x.shape[0]
    xp = np.pad(x, ((1, 1), (0, 0), (0, 0), (0, 0)))
    out = np.zeros_like(x)
    for k in range(_TEMPORAL_KERNEL):
        out += xp[k : k + f] * t[:, k]
    return out + b


def _tconv_vjp_x(g, t):
    f = g.shape[0]
    gp = np.pad(g, ((1, 1), (0, 0), (0, 0), (0, 0)))
    gx = np.zeros_like(g)
    for k in range(_TEMPORAL_KERNEL):
        r = _TEMPORAL_KERNEL - 1 - k
        gx += gp[r : r + f] * t[:, k]
    return gx


def _tconv_grad_t(g, x):
    f = x.shape[0]
    xp = np.pad(x, ((1, 1), (0, 0), (0, 0), (0, 0)))
    gt = np.zeros((x.shape[3], _TEMPORAL_KERNEL))
    for k in range(_TEMPORAL_KERNEL):
        gt[:, k] = np.einsum("fwhc,fwhc->c", g, xp[k : k + f])
    return gt


def timestep_features(t: float, width: int) -> np.ndarray:
    """Sinusoidal features [sin(w_j t), cos(w_j t)] with w_j = pi * 2**j."""
    freqs = np.pi * np.exp2(np.arange(width // 2, dtype=np.float64))
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)])


class ToyVelocityModel:
    """Velocity field u(z, t, cond) with explicit VJP entry points.

    Parameters are a flat float64 vector; the model itself is immutable
    during forward/vjp, so shared instances are safe to call concurrently.
    """

    def __init__(self, arch: Architecture, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (arch.param_count,):
            raise ShapeError(
                f"expected {arch.param_count} parameters, got {params.shape}"
            )
        self.arch = arch
        self.params = params
        self._p = self._unpack(params)

    def _unpack(self, flat):
        out = {}
        off = 0
        for name, shape in self.arch.param_shapes():
            n = int(np.prod(shape))
            out[name] = flat[off : off + n].reshape(shape)
            off += n
        return out

    @classmethod
    def initialize(cls, arch: Architecture, seed: int) -> "ToyVelocityModel":
        """Seeded random init; weights ~ N(0, 1/fan_in), biases zero."""
        rng = Rng(seed)
        chunks = []
        for name, shape in arch.param_shapes():
            n = int(np.prod(shape))
            if name.startswith("b"):
                chunks.append(np.zeros(n))
                continue
            if name in ("w1", "w2", "w3"):
                fan_in = shape[1] * shape[2] * shape[3]
                scale = 1.0 / np.sqrt(fan_in)
                if name == "w3":
                    scale *= 0.5
            elif name in ("t1", "t2"):
                scale = 1.0 / np.sqrt(_TEMPORAL_KERNEL)
            else:
                scale = 0.1 / np.sqrt(shape[0])
            chunks.append(rng.normal(n) * scale)
        return cls(arch, np.concatenate(chunks))

    def with_params(self, params: np.ndarray) -> "ToyVelocityModel":
        return ToyVelocityModel(self.arch, params)

    def _cond_index(self, cond) -> int:
        if cond is None:
            return self.arch.vocab
        cond = int(cond)
        if not 0 <= cond < self.arch.vocab:
            raise ValueError(f"condition {cond} outside vocabulary")
        return cond

    def _check_input(self, z, t):
        z = validate_latent(z)
        if z.shape[3] != self.arch.in_channels:
            raise ShapeError(
                f"latent has {z.shape[3]} channels, model wants "
                f"{self.arch.in_channels}"
            )
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"timestep {t} outside [0, 1]")
        return z

    def forward_with_tape(self, z, t, cond):
        z = self._check_input(z, t)
        p = self._p
        idx = self._cond_index(cond)
        tfeat = timestep_features(t, self.arch.temb_width)
        bias = tfeat @ p["pt"] + p["ec"][idx] @ p["pc"]
        h0 = np.tanh(_conv2d(z, p["w1"], p["b1"]) + bias)
        h1 = np.tanh(_tconv(h0, p["t1"], p["bt1"]))
        h2 = np.tanh(_conv2d(h1, p["w2"], p["b2"]))
        h3 = np.tanh(_tconv(h2, p["t2"], p["bt2"]))
        out = _conv2d(h3, p["w3"], None)
        tape = (z, h0, h1, h2, h3, tfeat, idx)
        return out, tape

    def forward(self, z, t: float, cond=None) -> np.ndarray:
        out, _ = self.forward_with_tape(z, t, cond)
        return out

    def _backprop(self, tape, g):
        """Shared chain: returns (g_z, per-layer grads dict or None)."""
        z, h0, h1, h2, h3, _, _ = tape
        p = self._p
        g3 = _conv2d_vjp_x(g, p["w3"]) * (1.0 - h3 * h3)
        g2 = _tconv_vjp_x(g3, p["t2"]) * (1.0 - h2 * h2)
        g1 = _conv2d_vjp_x(g2, p["w2"]) * (1.0 - h1 * h1)
        g0 = _tconv_vjp_x(g1, p["t1"]) * (1.0 - h0 * h0)
        gz = _conv2d_vjp_x(g0, p["w1"])
        return gz, (g0, g1, g2, g3)

    def backward_input(self, tape, g) -> np.ndarray:
        gz, _ = self._backprop(tape, g)
        return gz

    def backward_params(self, tape, g) -> np.ndarray:
        z, h0, h1, h2, h3, tfeat, idx = tape
        p = self._p
        k = self.arch.kernel
        _, (g0, g1, g2, g3) = self._backprop(tape, g)
        grads = {
            "w3": _conv2d_grad_w(g, h3, k),
            "t2": _tconv_grad_t(g3, h2),
            "bt2": g3.sum(axis=(0, 1, 2)),
            "w2": _conv2d_grad_w(g2, h1, k),
            "b2": g2.sum(axis=(0, 1, 2)),
            "t1": _tconv_grad_t(g1, h0),
            "bt1": g1.sum(axis=(0, 1, 2)),
            "w1": _conv2d_grad_w(g0, z, k),
            "b1": g0.sum(axis=(0, 1, 2)),
        }
        gbias = g0.sum(axis=(0, 1, 2))
        grads["pt"] = np.outer(tfeat, gbias)
        ec_grad = np.zeros_like(p["ec"])
        ec_grad[idx] = p["pc"] @ gbias
        grads["ec"] = ec_grad
        grads["pc"] = np.outer(p["ec"][idx], gbias)
        flat = np.zeros_like(self.params)
        off = 0
        for name, shape in self.arch.param_shapes():
            n = int(np.prod(shape))
            flat[off : off + n] = grads[name].ravel()
            off += n
        return flat

    def vjp(self, z, t: float, cond, g) -> np.ndarray:
        """J^T g where J is the Jacobian of forward w.r.t. z."""
        g = np.asarray(g, dtype=np.float64)
        out, tape = self.forward_with_tape(z, t, cond)
        if g.shape != out.shape:
            raise ShapeError(f"cotangent shape {g.shape} != output {out.shape}")
        return self.backward_input(tape, g)

    def param_grad(self, z, t: float, cond, g) -> np.ndarray:
        """J^T g where J is the Jacobian of forward w.r.t. the parameters."""
        g = np.asarray(g, dtype=np.float64)
        out, tape = self.forward_with_tape(z, t, cond)
        if g.shape != out.shape:
            raise ShapeError(f"cotangent shape {g.shape} != output {out.shape}")
        return self.backward_params(tape, g)

    def save(self, path) -> None:
        a = self.arch
        header = MODEL_MAGIC + struct.pack(
            "<6I", a.in_channels, a.hidden, a.kernel, a.temb_width, a.cemb_width,
            a.vocab,
        )
        header += struct.pack("<Q", self.params.size)
        Path(path).write_bytes(header + self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyVelocityModel":
        buf = Path(path).read_bytes()
        if len(buf) < 36 or buf[:4] != MODEL_MAGIC:
            raise TensorFormatError("bad model checkpoint magic")
        fields = struct.unpack_from("<6I", buf, 4)
        arch = Architecture(*fields)
        (count,) = struct.unpack_from("<Q", buf, 28)
        if count != arch.param_count or len(buf) != 36 + 8 * count:
            raise TensorFormatError("checkpoint parameter payload mismatch")
        params = np.frombuffer(buf, dtype="<f8", count=count, offset=36)
        if not np.all(np.isfinite(params)):
            raise TensorValueError("checkpoint contains non-finite parameters")
        return cls(arch, params.copy())
