"""Parameter initialisation plus the MLP and LSTM building blocks."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict[str, np.ndarray]


def bind(params: Params, tape: ad.Tape | None = None) -> dict[str, Tensor]:
    """Wrap raw arrays as tensors; as tape leaves when a tape is given."""
    if tape is None:
        return {k: Tensor(v) for k, v in params.items()}
    return {k: tape.leaf(v) for k, v in params.items()}


def init_linear(rng: np.random.Generator, params: Params, name: str, n_in: int, n_out: int) -> None:
    bound = np.sqrt(6.0 / (n_in + n_out))
    params[f"{name}.W"] = rng.uniform(-bound, bound, (n_in, n_out))
    params[f"{name}.b"] = np.zeros(n_out)


def init_mlp(rng: np.random.Generator, params: Params, name: str, n_in: int, hidden: int,
             n_out: int, layers: int = 3) -> None:
    sizes = [n_in] + [hidden] * (layers - 1) + [n_out]
    for i in range(layers):
        init_linear(rng, params, f"{name}.{i}", sizes[i], sizes[i + 1])


def linear(P: Mapping[str, Tensor], name: str, x) -> Tensor:
    return x @ P[f"{name}.W"] + P[f"{name}.b"]


def mlp(P: Mapping[str, Tensor], name: str, x, layers: int = 3) -> Tensor:
    """ReLU MLP; no activation after the last layer."""
    for i in range(layers):
        x = linear(P, f"{name}.{i}", x)
        if i < layers - 1:
            x = ad.relu(x)
    return x


def mlp_layers(params: Mapping, name: str) -> int:
    n = 0
    while f"{name}.{n}.W" in params:
        n += 1
    return n


def init_lstm(rng: np.random.Generator, params: Params, name: str, n_in: int, hidden: int) -> None:
    # gate layout along the last axis: input, forget, output, cell candidate
    bx = np.sqrt(6.0 / (n_in + 4 * hidden))
    bh = np.sqrt(6.0 / (hidden + 4 * hidden))
    params[f"{name}.Wx"] = rng.uniform(-bx, bx, (n_in, 4 * hidden))
    params[f"{name}.Wh"] = rng.uniform(-bh, bh, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    params[f"{name}.b"] = b


def lstm_cell(x, h, c, Wx, Wh, b, xw=None) -> tuple[Tensor, Tensor]:
    """One step of a four-gate LSTM.

    ``xw`` may carry a precomputed ``x @ Wx`` so a whole sequence's input
    projection can be done in a single matmul.
    """
    Wx, Wh = ad.as_tensor(Wx), ad.as_tensor(Wh)
    hidden = Wh.shape[0]
    if Wh.shape[1] != 4 * hidden or (xw is None and Wx.shape[1] != 4 * hidden):
        raise ad.ShapeError(f"lstm_cell: bad weight shapes {Wx.shape}, {Wh.shape}")
    h, c = ad.as_tensor(h), ad.as_tensor(c)
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ad.ShapeError(f"lstm_cell: state dims {h.shape}, {c.shape} vs hidden {hidden}")
    if xw is None:
        x = ad.as_tensor(x)
        if x.shape[-1] != Wx.shape[0]:
            raise ad.ShapeError(f"lstm_cell: input dim {x.shape} vs weights {Wx.shape}")
        xw = x @ Wx
    gates = xw + h @ Wh + b
    sig = ad.sigmoid(gates[..., : 3 * hidden])
    i = sig[..., :hidden]
    f = sig[..., hidden: 2 * hidden]
    o = sig[..., 2 * hidden:]
    g = ad.tanh(gates[..., 3 * hidden:])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def run_lstm(P: Mapping[str, Tensor], name: str, seq, fused: bool = True) -> Tensor:
    """Final hidden state of an LSTM over ``seq`` shaped (T, batch..., D).

    ``fused`` uses the single-node :func:`autodiff.lstm_seq`; otherwise the
    sequence is unrolled through :func:`lstm_cell`.
    """
    seq = ad.as_tensor(seq)
    Wx, Wh, b = P[f"{name}.Wx"], P[f"{name}.Wh"], P[f"{name}.b"]
    if seq.shape[-1] != Wx.shape[0]:
        raise ad.ShapeError(f"lstm {name}: input dim {seq.shape[-1]} != {Wx.shape[0]}")
    hidden = Wh.shape[0]
    xw = seq @ Wx
    if fused:
        lead = xw.shape[1:-1]
        flat = xw.reshape(xw.shape[0], -1, 4 * hidden)
        return ad.lstm_seq(flat, Wh, b).reshape(*lead, hidden)
    state = np.zeros(seq.shape[1:-1] + (hidden,))
    h, c = Tensor(state), Tensor(state)
    for t in range(seq.shape[0]):
        h, c = lstm_cell(None, h, c, Wx, Wh, b, xw=xw[t])
    return h
