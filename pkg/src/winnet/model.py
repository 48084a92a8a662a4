"""The window-grid convolutional forecaster, its ablations, and linear baselines.

Forward pipeline: per-instance normalization -> linear map of the look-back
window onto an n*n sequence reshaped as an n x n grid (rows are consecutive
time, columns stride by n) -> dual heads (grid and its transpose) -> per head:
trend/seasonal decomposition and a single shared 2-in/1-out convolution with
relu, sigmoid and dropout -> head sum + grid residual -> linear decode to the
horizon -> denormalization.

Channel independence: every data channel runs through the same weights; the
convolution sees one channel's trend/seasonal pair as its two input planes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .decomposition import (DecompPair, WindowGrid, moving_avg_decompose_1d,
                            tdd_decompose)
from .errors import ConfigError, DataError, ShapeError
from .tensor import (ParamStore, Tape, Tensor, activation, add, add_scalar,
                     channel_scale, channel_shift, concat, constant,
                     conv2d_forward, dropout, linear_forward, mul, reciprocal,
                     reshape, scale, sub, transpose_last2)

HEAD_MODES = {"dual": ("within", "cross"),
              "within_only": ("within",),
              "cross_only": ("cross",)}
DECOMP_MODES = ("tdd", "moving_avg_1d")
PAD_MODES = ("trend", "zero")
REVIN_EPS = 1e-5

# decomposition window of the decomposition-linear baseline
DLINEAR_WINDOW = 25

BASELINE_KINDS = ("linear", "rlinear", "dlinear")


@dataclass
class ModelConfig:
    """Every hyperparameter of the forecaster, including ablation switches.

    sl/pl are look-back and horizon lengths, c the channel count, n the
    sub-window size (the grid is n x n), k the decomposition pooling window,
    conv_k the correlation-block kernel extent.
    """

    sl: int
    pl: int
    c: int
    n: int = 24
    k: int = 3
    conv_k: int = 3
    dropout_rate: float = 0.1
    head_mode: str = "dual"
    decomp_mode: str = "tdd"
    pad_mode: str = "trend"
    revin_affine: bool = True

    def __post_init__(self):
        if self.sl < 1 or self.pl < 1:
            raise ConfigError(f"sl and pl must be >= 1, got sl={self.sl}, pl={self.pl}")
        if self.c < 1:
            raise ConfigError(f"channel count must be >= 1, got {self.c}")
        if self.n < 2:
            raise ConfigError(f"sub-window size must be >= 2, got {self.n}")
        if self.k % 2 == 0 or self.k < 3:
            raise ConfigError(f"pooling window k must be odd and >= 3, got {self.k}")
        if self.conv_k % 2 == 0 or self.conv_k < 1:
            raise ConfigError(f"conv kernel must be odd and >= 1, got {self.conv_k}")
        if self.n < self.conv_k:
            raise ConfigError(f"grid size {self.n} smaller than conv kernel {self.conv_k}")
        if (self.k - 1) // 2 >= self.n:
            raise ConfigError(f"pooling window {self.k} too large for grid size {self.n}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"head_mode must be one of {sorted(HEAD_MODES)}, "
                              f"got {self.head_mode!r}")
        if self.decomp_mode not in DECOMP_MODES:
            raise ConfigError(f"decomp_mode must be one of {DECOMP_MODES}, "
                              f"got {self.decomp_mode!r}")
        if self.pad_mode not in PAD_MODES:
            raise ConfigError(f"pad_mode must be one of {PAD_MODES}, got {self.pad_mode!r}")

    @property
    def heads(self) -> tuple[str, ...]:
        return HEAD_MODES[self.head_mode]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RevinState:
    """Per-instance, per-channel statistics of the input window."""

    mean: np.ndarray  # [B, C]
    std: np.ndarray   # [B, C], floored via sqrt(var + eps)


# ---------------------------------------------------------------------------
# reversible instance normalization
# ---------------------------------------------------------------------------

def revin_normalize(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
                    eps: float = REVIN_EPS, tape: Tape | None = None) -> tuple[Tensor, RevinState]:
    """Standardize each (instance, channel) window over time; optional affine.

    Window statistics are treated as constants of the graph (gradients flow
    through the values, not through mean/std), the standard practice for
    reversible instance normalization.
    """
    if x.ndim != 3:
        raise ShapeError(f"revin_normalize expects [B, C, L], got {x.shape}")
    mean = x.data.mean(axis=-1)
    std = np.sqrt(x.data.var(axis=-1) + eps)
    state = RevinState(mean=mean, std=std)
    xn = sub(x, constant(np.broadcast_to(mean[:, :, None], x.shape)), tape)
    xn = mul(xn, constant(np.broadcast_to((1.0 / std)[:, :, None], x.shape)), tape)
    if gamma is not None:
        xn = channel_scale(xn, gamma, tape)
        xn = channel_shift(xn, beta, tape)
    return xn, state


def revin_denormalize(y: Tensor, state: RevinState, gamma: Tensor | None = None,
                      beta: Tensor | None = None, eps: float = REVIN_EPS,
                      tape: Tape | None = None) -> Tensor:
    """Invert the affine, then re-scale by std and re-add mean over the horizon axis."""
    if y.ndim != 3 or y.shape[:2] != state.mean.shape:
        raise ShapeError(f"revin_denormalize: leading axes of {y.shape} do not match "
                         f"saved stats {state.mean.shape}")
    if gamma is not None:
        y = channel_shift(y, scale(beta, -1.0, tape), tape)
        # eps**2 guards a collapsed learned scale, mirroring the norm step's floor
        y = channel_scale(y, reciprocal(add_scalar(gamma, eps * eps, tape), tape), tape)
    y = mul(y, constant(np.broadcast_to(state.std[:, :, None], y.shape)), tape)
    y = add(y, constant(np.broadcast_to(state.mean[:, :, None], y.shape)), tape)
    return y


# ---------------------------------------------------------------------------
# architecture blocks
# ---------------------------------------------------------------------------

def subwindow_divide(x_norm: Tensor, map_weight: Tensor, map_bias: Tensor,
                     n: int, tape: Tape | None = None) -> WindowGrid:
    """Linear map sl -> n*n along time, then row-major reshape to an n x n grid."""
    mapped = linear_forward(x_norm, map_weight, map_bias, tape)
    grid = reshape(mapped, x_norm.shape[:-1] + (n, n), tape)
    return WindowGrid(values=grid, n=n)


def make_heads(grid: WindowGrid, head_mode: str,
               tape: Tape | None = None) -> list[tuple[str, WindowGrid]]:
    """The forecasting views: the grid itself and/or its transpose."""
    if head_mode not in HEAD_MODES:
        raise ConfigError(f"unknown head mode {head_mode!r}")
    views = {}
    if "within" in HEAD_MODES[head_mode]:
        views["within"] = grid
    if "cross" in HEAD_MODES[head_mode]:
        views["cross"] = WindowGrid(values=transpose_last2(grid.values, tape), n=grid.n)
    return [(name, views[name]) for name in HEAD_MODES[head_mode]]


def dcb_forward(pair: DecompPair, conv_w: Tensor, conv_b: Tensor, dropout_rate: float,
                training: bool, rng: np.random.Generator | None = None,
                tape: Tape | None = None) -> Tensor:
    """Fuse trend and seasonal with one shared convolution, per data channel.

    Each channel's trend/seasonal grids become the two input planes of a
    single conv (zero same-padding, stride 1), followed by relu, sigmoid and
    dropout; the per-channel outputs are re-stacked on the channel axis.
    """
    B, C, n, _ = pair.trend.shape
    t2 = reshape(pair.trend, (B * C, 1, n, n), tape)
    s2 = reshape(pair.seasonal, (B * C, 1, n, n), tape)
    z = concat(t2, s2, axis=1, tape=tape)
    z = conv2d_forward(z, conv_w, conv_b, tape)
    z = activation(z, "relu", tape)
    z = activation(z, "sigmoid", tape)
    z = dropout(z, dropout_rate, training, rng, tape)
    return reshape(z, (B, C, n, n), tape)


def series_decode(head_outputs: list[Tensor], x_in_grid: WindowGrid, out_weight: Tensor,
                  out_bias: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum the head fields, add the input grid residual, decode n*n -> pl."""
    total = head_outputs[0]
    for extra in head_outputs[1:]:
        total = add(total, extra, tape)
    total = add(total, x_in_grid.values, tape)
    B, C, n, _ = total.shape
    flat = reshape(total, (B, C, n * n), tape)
    return linear_forward(flat, out_weight, out_bias, tape)


def _decompose_head(hgrid: WindowGrid, cfg: ModelConfig, tape: Tape | None) -> DecompPair:
    if cfg.decomp_mode == "moving_avg_1d":
        lead = hgrid.values.shape[:2]
        flat = reshape(hgrid.values, lead + (hgrid.flat_len,), tape)
        trend, seasonal = moving_avg_decompose_1d(flat, cfg.k, tape)
        full = lead + (hgrid.n, hgrid.n)
        return DecompPair(trend=reshape(trend, full, tape),
                          seasonal=reshape(seasonal, full, tape))
    return tdd_decompose(hgrid, cfg.k, tape, pad_mode=cfg.pad_mode)


# ---------------------------------------------------------------------------
# structural trace (parameter-free wiring description)
# ---------------------------------------------------------------------------

def _trace_revin(cfg: ModelConfig) -> str:
    return f"revin(affine={'on' if cfg.revin_affine else 'off'})"


def _trace_map(cfg: ModelConfig) -> str:
    return f"map({cfg.sl}->{cfg.n * cfg.n})+grid({cfg.n}x{cfg.n})"


def _trace_decomp(cfg: ModelConfig) -> str:
    if cfg.decomp_mode == "moving_avg_1d":
        return f"ma1d(k={cfg.k})"
    return f"tdd(pad={cfg.pad_mode},pool={cfg.k})"


def _trace_head(cfg: ModelConfig, name: str) -> str:
    return (f"head[{name}]:{_trace_decomp(cfg)}"
            f">conv({cfg.conv_k}x{cfg.conv_k})>relu>sigmoid>dropout({cfg.dropout_rate})")


def _trace_decode(cfg: ModelConfig) -> str:
    return f"decode(sum[{len(cfg.heads)}]+residual:{cfg.n * cfg.n}->{cfg.pl})"


def structural_trace(cfg: ModelConfig) -> list[str]:
    """Stage labels of the forward wiring; depends only on the config."""
    trace = [_trace_revin(cfg), _trace_map(cfg)]
    trace += [_trace_head(cfg, name) for name in cfg.heads]
    trace.append(_trace_decode(cfg))
    return trace


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

def init_winnet_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fan-in uniform init for the linear maps and convs; zero output bias."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    n2 = cfg.n * cfg.n
    b = 1.0 / math.sqrt(cfg.sl)
    store.add("map.weight", rng.uniform(-b, b, size=(n2, cfg.sl)))
    store.add("map.bias", rng.uniform(-b, b, size=(n2,)))
    cb = 1.0 / math.sqrt(2 * cfg.conv_k * cfg.conv_k)
    for name in cfg.heads:
        store.add(f"conv_{name}.weight",
                  rng.uniform(-cb, cb, size=(1, 2, cfg.conv_k, cfg.conv_k)))
        store.add(f"conv_{name}.bias", rng.uniform(-cb, cb, size=(1,)))
    ob = 1.0 / math.sqrt(n2)
    store.add("out.weight", rng.uniform(-ob, ob, size=(cfg.pl, n2)))
    store.add("out.bias", np.zeros(cfg.pl))
    if cfg.revin_affine:
        store.add("revin.gamma", np.ones(cfg.c))
        store.add("revin.beta", np.zeros(cfg.c))
    return store


def winnet_forward(x: Tensor, store: ParamStore, cfg: ModelConfig, training: bool = False,
                   rng: np.random.Generator | None = None, tape: Tape | None = None,
                   capture: dict | None = None) -> Tensor:
    """Run the forecaster on x: [B, sl, C] -> [B, pl, C].

    Deterministic when training is False. ``capture``, if given, is filled
    with the executed stage trace and key intermediates for inspection.
    """
    if x.ndim != 3 or x.shape[1] != cfg.sl or x.shape[2] != cfg.c:
        raise ShapeError(f"input {x.shape} does not match [B, sl={cfg.sl}, c={cfg.c}]")
    if not np.isfinite(x.data).all():
        raise DataError("non-finite values in model input")
    trace: list[str] = []

    xp = transpose_last2(x, tape)  # [B, C, sl]
    gamma = store["revin.gamma"] if cfg.revin_affine else None
    beta = store["revin.beta"] if cfg.revin_affine else None
    x_norm, state = revin_normalize(xp, gamma, beta, tape=tape)
    trace.append(_trace_revin(cfg))

    grid = subwindow_divide(x_norm, store["map.weight"], store["map.bias"], cfg.n, tape)
    trace.append(_trace_map(cfg))

    heads = make_heads(grid, cfg.head_mode, tape)
    head_outputs = []
    for name, hgrid in heads:
        pair = _decompose_head(hgrid, cfg, tape)
        out = dcb_forward(pair, store[f"conv_{name}.weight"], store[f"conv_{name}.bias"],
                          cfg.dropout_rate, training, rng, tape)
        head_outputs.append(out)
        trace.append(_trace_head(cfg, name))

    y = series_decode(head_outputs, grid, store["out.weight"], store["out.bias"], tape)
    trace.append(_trace_decode(cfg))

    y = revin_denormalize(y, state, gamma, beta, tape=tape)
    out = transpose_last2(y, tape)  # [B, pl, C]

    if capture is not None:
        capture["trace"] = trace
        capture["grid"] = grid
        capture["heads"] = {name: hg for name, hg in heads}
        capture["head_outputs"] = {name: t for (name, _), t in zip(heads, head_outputs)}
        capture["revin_state"] = state
    return out


# ---------------------------------------------------------------------------
# analytic efficiency accounting
# ---------------------------------------------------------------------------

def count_params_fields(sl: int, pl: int, c: int, n: int, conv_k: int,
                        heads: int, revin_affine: bool) -> int:
    """Closed-form trainable-scalar count from raw dimensions."""
    n2 = n * n
    total = sl * n2 + n2          # input map
    total += pl * n2 + pl         # output map
    total += heads * (2 * conv_k * conv_k + 1)
    if revin_affine:
        total += 2 * c
    return total


def count_params(cfg: ModelConfig) -> int:
    return count_params_fields(cfg.sl, cfg.pl, cfg.c, cfg.n, cfg.conv_k,
                               len(cfg.heads), cfg.revin_affine)


def mac_breakdown(cfg: ModelConfig) -> dict[str, int]:
    """Multiply-accumulate counts per sample (B=1), by pipeline stage."""
    n2 = cfg.n * cfg.n
    heads = len(cfg.heads)
    return {
        "input_map": cfg.c * cfg.sl * n2,
        "output_map": cfg.c * cfg.pl * n2,
        "conv": heads * cfg.c * n2 * 2 * cfg.conv_k * cfg.conv_k,
        "pooling": heads * cfg.c * n2 * cfg.k * cfg.k,
    }


def estimate_macs(cfg: ModelConfig) -> int:
    return sum(mac_breakdown(cfg).values())


# ---------------------------------------------------------------------------
# linear baselines
# ---------------------------------------------------------------------------

def init_baseline_params(kind: str, sl: int, pl: int, seed: int = 0) -> ParamStore:
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r}, expected one of {BASELINE_KINDS}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    b = 1.0 / math.sqrt(sl)
    if kind == "dlinear":
        for part in ("trend", "seasonal"):
            store.add(f"{part}.weight", rng.uniform(-b, b, size=(pl, sl)))
            store.add(f"{part}.bias", rng.uniform(-b, b, size=(pl,)))
    else:
        store.add("weight", rng.uniform(-b, b, size=(pl, sl)))
        store.add("bias", rng.uniform(-b, b, size=(pl,)))
    return store


def baseline_forward(kind: str, x: Tensor, store: ParamStore,
                     tape: Tape | None = None) -> Tensor:
    """One-layer comparators: plain linear, instance-normalized linear, and
    decomposition-linear (separate maps for trend and seasonal)."""
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r}, expected one of {BASELINE_KINDS}")
    if x.ndim != 3:
        raise ShapeError(f"baseline input must be [B, sl, C], got {x.shape}")
    xp = transpose_last2(x, tape)  # [B, C, sl]
    if kind == "linear":
        y = linear_forward(xp, store["weight"], store["bias"], tape)
    elif kind == "rlinear":
        xn, state = revin_normalize(xp, tape=tape)
        y = linear_forward(xn, store["weight"], store["bias"], tape)
        y = revin_denormalize(y, state, tape=tape)
    else:  # dlinear
        trend, seasonal = moving_avg_decompose_1d(xp, DLINEAR_WINDOW, tape)
        y = add(linear_forward(trend, store["trend.weight"], store["trend.bias"], tape),
                linear_forward(seasonal, store["seasonal.weight"], store["seasonal.bias"], tape),
                tape)
    return transpose_last2(y, tape)  # [B, pl, C]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

MODEL_KINDS = ("winnet",) + BASELINE_KINDS


def init_model_params(kind: str, cfg: ModelConfig, seed: int = 0) -> ParamStore:
    if kind == "winnet":
        return init_winnet_params(cfg, seed)
    return init_baseline_params(kind, cfg.sl, cfg.pl, seed)


def forward_model(kind: str, x: Tensor, store: ParamStore, cfg: ModelConfig,
                  training: bool = False, rng: np.random.Generator | None = None,
                  tape: Tape | None = None, capture: dict | None = None) -> Tensor:
    if kind == "winnet":
        return winnet_forward(x, store, cfg, training, rng, tape, capture)
    return baseline_forward(kind, x, store, tape)
