"""Layers with cached forward state and exact reverse-mode backward passes."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, InputError, StateError
from . import functional as F


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.need_input_grad = True
        self._cache = None

    def init_params(self, rng: np.random.Generator, dtype=np.float32):
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def clear(self):
        self._cache = None

    def astype(self, dtype):
        for name, p in self.params.items():
            self.params[name] = p.astype(dtype)

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def __repr__(self):
        return f"{type(self).__name__}()"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int):
        super().__init__()
        if in_features < 1 or units < 1:
            raise ConfigurationError(f"dense: bad sizes {in_features}x{units}")
        self.in_features, self.units = in_features, units

    def init_params(self, rng, dtype=np.float32):
        self.params["W"] = glorot_uniform(
            rng, (self.in_features, self.units), self.in_features, self.units, dtype
        )
        self.params["b"] = np.zeros(self.units, dtype=dtype)

    def forward(self, x):
        self._cache = x
        return F.dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, dout):
        x = self._cached()
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        if self.need_input_grad:
            return dout @ self.params["W"].T
        return None

    def output_shape(self, input_shape):
        return (self.units,)

    def __repr__(self):
        return f"Dense({self.in_features}->{self.units})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, filters: int, kernel: int = 4, stride: int = 1):
        super().__init__()
        if kernel < 1 or stride < 1 or filters < 1 or in_channels < 1:
            raise ConfigurationError(
                f"conv2d: kernel={kernel} stride={stride} filters={filters} channels={in_channels}"
            )
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride = kernel, stride

    def init_params(self, rng, dtype=np.float32):
        k, c, f = self.kernel, self.in_channels, self.filters
        self.params["W"] = glorot_uniform(rng, (k, k, c, f), k * k * c, k * k * f, dtype)
        self.params["b"] = np.zeros(f, dtype=dtype)

    def forward(self, x):
        self._cache = x
        return F.conv2d_forward(x, self.params["W"], self.params["b"], self.stride)

    def backward(self, dout):
        # patch matrices are rebuilt per chunk instead of cached: the cached
        # version of the second block alone is ~650 MB at batch 128
        x = self._cached()
        w = self.params["W"]
        k, f, s = self.kernel, self.filters, self.stride
        n, h, wd, c = x.shape
        oh, ph0, ph1 = F.same_padding(h, k, s)
        ow, pw0, pw1 = F.same_padding(wd, k, s)
        xp = np.pad(x, ((0, 0), (ph0, ph1), (pw0, pw1), (0, 0)))
        chunks = F.batch_chunks(n, oh * ow * k * k * c)
        gw = np.zeros((k * k * c, f), dtype=np.result_type(x, dout))
        for a, b in chunks:
            gw += F.im2col(xp[a:b], k, s, oh, ow).T @ dout[a:b].reshape(-1, f)
        self.grads["W"] = gw.reshape(w.shape)
        self.grads["b"] = dout.reshape(-1, f).sum(axis=0)
        if not self.need_input_grad:
            return None
        dx = np.empty(x.shape, dtype=np.result_type(x, dout))
        if s == 1:
            # dx is a full correlation of dout with the flipped kernel
            dp = np.pad(dout, ((0, 0), (k - 1 - ph0, ph0), (k - 1 - pw0, pw0), (0, 0)))
            wf = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
            for a, b in F.batch_chunks(n, h * wd * k * k * f):
                dx[a:b] = (F.im2col(dp[a:b], k, 1, h, wd) @ wf).reshape(b - a, h, wd, c)
            return dx
        wmat = w.reshape(-1, f).T
        for a, b in chunks:
            dcols = (dout[a:b].reshape(-1, f) @ wmat).reshape(b - a, oh, ow, k, k, c)
            dxp = np.zeros((b - a, h + ph0 + ph1, wd + pw0 + pw1, c), dtype=dx.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += dcols[:, :, :, i, j]
            dx[a:b] = dxp[:, ph0 : ph0 + h, pw0 : pw0 + wd]
        return dx

    def output_shape(self, input_shape):
        h, w, _ = input_shape
        return (-(-h // self.stride), -(-w // self.stride), self.filters)

    def __repr__(self):
        return f"Conv2D({self.in_channels}->{self.filters}, k={self.kernel}, s={self.stride})"


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel: int = 2, stride: int = 2):
        super().__init__()
        if kernel != stride or kernel < 1:
            raise ConfigurationError("maxpool2d: kernel must equal stride")
        self.kernel, self.stride = kernel, stride

    def forward(self, x):
        out, arg = F.maxpool2d_forward(x, self.kernel, self.stride)
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout):
        xshape, arg = self._cached()
        n, h, w, c = xshape
        k = self.kernel
        oh, ow = h // k, w // k
        dx = np.zeros(xshape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i : oh * k : k, j : ow * k : k] = np.where(arg == i * k + j, dout, 0)
        return dx

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // self.kernel, w // self.kernel, c)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x > 0
        return F.relu(x)

    def backward(self, dout):
        return dout * self._cached()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = F.sigmoid(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._cached()
        return dout * y * (1 - y)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._cached()
        return dout * (1 - y * y)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        y = F.softmax(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._cached()
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cached())

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class BottomCrop(Layer):
    """Keep only the bottom `rows` image rows.

    mode="drop" removes the top rows, mode="zero" blanks them and keeps the
    spatial size.
    """

    kind = "crop"

    def __init__(self, rows: int, mode: str = "drop"):
        super().__init__()
        if mode not in ("drop", "zero"):
            raise ConfigurationError(f"crop: unknown mode {mode!r}")
        self.rows, self.mode = rows, mode

    def forward(self, x):
        h = x.shape[1]
        if not 1 <= self.rows <= h:
            raise InputError(f"crop: cannot keep {self.rows} of {h} rows")
        self._cache = x.shape
        if self.mode == "drop":
            return x[:, h - self.rows :]
        out = x.copy()
        out[:, : h - self.rows] = 0
        return out

    def backward(self, dout):
        shape = self._cached()
        h = shape[1]
        dx = np.zeros(shape, dtype=dout.dtype)
        if self.mode == "drop":
            dx[:, h - self.rows :] = dout
        else:
            dx[:, h - self.rows :] = dout[:, h - self.rows :]
        return dx

    def output_shape(self, input_shape):
        if self.mode == "drop":
            return (self.rows,) + tuple(input_shape[1:])
        return input_shape


class RowSequence(Layer):
    """(N, H, W, C) images -> (N, H, C*W) sequences, one timestep per row.

    Each timestep holds the row's channels back to back (all red values, then
    green, then blue). bottom_to_top reverses the timestep order only.
    """

    kind = "rowseq"

    def __init__(self, bottom_to_top: bool = False):
        super().__init__()
        self.bottom_to_top = bottom_to_top

    def forward(self, x):
        self._cache = x.shape
        n, h, w, c = x.shape
        seq = x.transpose(0, 1, 3, 2).reshape(n, h, c * w)
        if self.bottom_to_top:
            seq = seq[:, ::-1]
        return np.ascontiguousarray(seq)

    def backward(self, dout):
        n, h, w, c = self._cached()
        if self.bottom_to_top:
            dout = dout[:, ::-1]
        return dout.reshape(n, h, c, w).transpose(0, 1, 3, 2)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h, c * w)


class GRU(Layer):
    """Gated recurrent layer over (N, T, I) inputs with a zero initial state.

    Gates: z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    candidate = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * candidate.
    W, U and b stack the three gates along the last axis in (z, r, h) order.
    """

    kind = "gru"

    def __init__(self, input_size: int, hidden: int, return_sequences: bool = False):
        super().__init__()
        self.input_size, self.hidden = input_size, hidden
        self.return_sequences = return_sequences

    def init_params(self, rng, dtype=np.float32):
        i, h = self.input_size, self.hidden
        self.params["W"] = np.concatenate(
            [glorot_uniform(rng, (i, h), i, h, dtype) for _ in range(3)], axis=1
        )
        self.params["U"] = np.concatenate(
            [glorot_uniform(rng, (h, h), h, h, dtype) for _ in range(3)], axis=1
        )
        self.params["b"] = np.zeros(3 * h, dtype=dtype)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise InputError(f"gru: expected (N, T, {self.input_size}) input, got {x.shape}")
        n, t_len, _ = x.shape
        if t_len == 0:
            raise InputError("gru: sequence must have at least one timestep")
        hid = self.hidden
        w, u, b = self.params["W"], self.params["U"], self.params["b"]
        xw = (x.reshape(n * t_len, -1) @ w + b).reshape(n, t_len, 3 * hid)
        u_zr, u_h = u[:, : 2 * hid], u[:, 2 * hid :]
        hs = np.zeros((n, t_len + 1, hid), dtype=x.dtype)
        zs = np.empty((n, t_len, hid), dtype=x.dtype)
        rs = np.empty_like(zs)
        cands = np.empty_like(zs)
        h = hs[:, 0]
        for t in range(t_len):
            zr = F.sigmoid(xw[:, t, : 2 * hid] + h @ u_zr)
            z, r = zr[:, :hid], zr[:, hid:]
            cand = np.tanh(xw[:, t, 2 * hid :] + (r * h) @ u_h)
            h = h + z * (cand - h)
            hs[:, t + 1] = h
            zs[:, t], rs[:, t], cands[:, t] = z, r, cand
        self._cache = (x, hs, zs, rs, cands)
        if self.return_sequences:
            return hs[:, 1:].copy()
        return h.copy()

    def backward(self, dout):
        x, hs, zs, rs, cands = self._cached()
        n, t_len, _ = x.shape
        hid = self.hidden
        w, u = self.params["W"], self.params["U"]
        u_zr, u_h = u[:, : 2 * hid], u[:, 2 * hid :]
        dxw = np.empty((n, t_len, 3 * hid), dtype=x.dtype)
        du = np.zeros_like(u)
        dh = np.zeros((n, hid), dtype=x.dtype)
        if not self.return_sequences:
            dh = dh + dout
        for t in range(t_len - 1, -1, -1):
            if self.return_sequences:
                dh = dh + dout[:, t]
            h_prev, z, r, cand = hs[:, t], zs[:, t], rs[:, t], cands[:, t]
            da_h = dh * z * (1 - cand * cand)
            da_z = dh * (cand - h_prev) * z * (1 - z)
            rh = r * h_prev
            du[:, 2 * hid :] += rh.T @ da_h
            d_rh = da_h @ u_h.T
            da_r = d_rh * h_prev * r * (1 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            du[:, : 2 * hid] += h_prev.T @ da_zr
            dh = dh * (1 - z) + d_rh * r + da_zr @ u_zr.T
            dxw[:, t, : 2 * hid] = da_zr
            dxw[:, t, 2 * hid :] = da_h
        flat = dxw.reshape(n * t_len, -1)
        self.grads["W"] = x.reshape(n * t_len, -1).T @ flat
        self.grads["U"] = du
        self.grads["b"] = flat.sum(axis=0)
        if self.need_input_grad:
            return (flat @ w.T).reshape(x.shape)
        return None

    def output_shape(self, input_shape):
        t_len, _ = input_shape
        if self.return_sequences:
            return (t_len, self.hidden)
        return (self.hidden,)

    def __repr__(self):
        return f"GRU({self.input_size}->{self.hidden}, seq={self.return_sequences})"
