"""Model layers with hand-derived backward passes.

Covers the gated recurrent cell (bias-free, peephole-free, cell magnitude
clipped at 3 by default), its bidirectional wrapper, time convolution, plain
linear/ReLU layers, and the two composite architectures: a feed-forward
classifier and the time-conv -> DNN -> bidirectional recurrent -> DNN ->
softmax teacher stack. Dense weights are stored [in, out] (applied as x @ w);
recurrent matrices are stored [hidden, in] / [hidden, hidden].

Gradients are returned in parameter-shaped containers so optimizer updates and
finite-difference packing are uniform across layer kinds.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, ShapeError
from .numeric import as_f64, log_softmax, relu, softmax

DEFAULT_CELL_CLIP = 3.0

FEED_FORWARD = "feed-forward"
TC_DNN_BLSTM_DNN = "tc-dnn-blstm-dnn"

# canonical field order; also the draw order in init and blob order on disk
LSTM_MATRIX_NAMES = ("w_xi", "w_hi", "w_xf", "w_hf", "w_xc", "w_hc", "w_xo", "w_ho")


@dataclass
class LstmParams:
    """The eight weight matrices of one recurrent direction plus the cell clip.

    Input projections are [hidden, input]; recurrent projections are
    [hidden, hidden]. There are deliberately no bias vectors and no peephole
    weights anywhere in this type.
    """

    w_xi: np.ndarray
    w_hi: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    cell_clip: float = DEFAULT_CELL_CLIP

    def __post_init__(self):
        if self.cell_clip <= 0:
            raise ConfigError(f"cell_clip must be positive, got {self.cell_clip}")
        h, d = self.w_xi.shape
        for name in LSTM_MATRIX_NAMES:
            m = getattr(self, name)
            want = (h, d) if name.startswith("w_x") else (h, h)
            if m.shape != want:
                raise ShapeError(f"{name} has shape {m.shape}, expected {want}")

    @property
    def hidden(self):
        return self.w_xi.shape[0]

    @property
    def input_dim(self):
        return self.w_xi.shape[1]

    def matrices(self):
        """The eight matrices in canonical order."""
        return [getattr(self, name) for name in LSTM_MATRIX_NAMES]

    @classmethod
    def from_matrices(cls, mats, cell_clip=DEFAULT_CELL_CLIP):
        if len(mats) != 8:
            raise ShapeError(f"need exactly 8 matrices, got {len(mats)}")
        return cls(*[as_f64(m) for m in mats], cell_clip=cell_clip)


@dataclass
class BlstmParams:
    """Forward- and backward-direction parameters of a bidirectional layer."""

    fwd: LstmParams
    bwd: LstmParams

    def __post_init__(self):
        if (self.fwd.hidden, self.fwd.input_dim) != (self.bwd.hidden, self.bwd.input_dim):
            raise ShapeError("forward/backward direction sizes disagree")

    def matrices(self):
        return self.fwd.matrices() + self.bwd.matrices()


@dataclass
class LstmState:
    """Recurrent state after a step: output h and clipped cell c.

    `cache` holds the step's forward intermediates (gate activations etc.)
    needed by lstm_step_backward; it is None for states not produced by
    lstm_step (e.g. the zero initial state).
    """

    h: np.ndarray
    c: np.ndarray
    cache: object = None

    @classmethod
    def zeros(cls, hidden):
        return cls(h=np.zeros(hidden), c=np.zeros(hidden))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; widths only, weights live in ModelParams.

    kind == "feed-forward": `hidden` ReLU widths, optional symmetric frame
    context (left, right) applied by the data layer before forward().
    kind == "tc-dnn-blstm-dnn": time convolution of odd width `tc_width` into
    `tc_out` units, ReLU layers `dnn_pre`, a bidirectional recurrent layer
    with `blstm_hidden` cells per direction, ReLU layers `dnn_post`, then the
    softmax output.
    """

    kind: str
    input_dim: int
    num_states: int
    hidden: tuple = ()
    context: tuple = (0, 0)
    tc_width: int = 5
    tc_out: int = 64
    dnn_pre: tuple = (64,)
    blstm_hidden: int = 32
    dnn_post: tuple = (64,)

    def __post_init__(self):
        if self.kind not in (FEED_FORWARD, TC_DNN_BLSTM_DNN):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.num_states < 2:
            raise ConfigError(f"num_states must be >= 2, got {self.num_states}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        widths = list(self.hidden)
        if self.kind == TC_DNN_BLSTM_DNN:
            if self.tc_width % 2 == 0:
                raise ConfigError(f"time-convolution width must be odd, got {self.tc_width}")
            widths += [self.tc_out, self.blstm_hidden, *self.dnn_pre, *self.dnn_post]
        if any(w < 1 for w in widths):
            raise ConfigError("all layer widths must be >= 1")
        if len(self.context) != 2 or any(c < 0 for c in self.context):
            raise ConfigError("context must be (left, right) with non-negative entries")

    @property
    def frame_dim(self):
        """Width of one input row as consumed by forward()."""
        if self.kind == FEED_FORWARD:
            left, right = self.context
            return (left + 1 + right) * self.input_dim
        return self.input_dim


def student_spec(input_dim, num_states, hidden=(64, 64), context=(5, 5)):
    """Small feed-forward classifier with a symmetric frame context window."""
    return ModelSpec(
        kind=FEED_FORWARD,
        input_dim=input_dim,
        num_states=num_states,
        hidden=tuple(hidden),
        context=tuple(context),
    )


def teacher_spec(input_dim, num_states, tc_width=5, tc_out=64, dnn_pre=(64,),
                 blstm_hidden=32, dnn_post=(64,)):
    """Desk-scale recurrent teacher; widths are configurable up to paper scale."""
    return ModelSpec(
        kind=TC_DNN_BLSTM_DNN,
        input_dim=input_dim,
        num_states=num_states,
        tc_width=tc_width,
        tc_out=tc_out,
        dnn_pre=tuple(dnn_pre),
        blstm_hidden=blstm_hidden,
        dnn_post=tuple(dnn_post),
    )


# ---------------------------------------------------------------------------
# layer plans and parameter containers


def _layer_plan(spec):
    """List of (tag, meta) describing every parameterized layer in order.

    tags: "tconv" (width, in_dim, out), "dense_relu" (in, out),
    "blstm" (in, hidden), "dense" (in, out) for the final linear.
    """
    plan = []
    if spec.kind == FEED_FORWARD:
        width = spec.frame_dim
        for w in spec.hidden:
            plan.append(("dense_relu", (width, w)))
            width = w
        plan.append(("dense", (width, spec.num_states)))
        return plan
    plan.append(("tconv", (spec.tc_width, spec.input_dim, spec.tc_out)))
    width = spec.tc_out
    for w in spec.dnn_pre:
        plan.append(("dense_relu", (width, w)))
        width = w
    plan.append(("blstm", (width, spec.blstm_hidden)))
    width = 2 * spec.blstm_hidden
    for w in spec.dnn_post:
        plan.append(("dense_relu", (width, w)))
        width = w
    plan.append(("dense", (width, spec.num_states)))
    return plan


@dataclass
class ModelParams:
    """Ordered per-layer weights matching a ModelSpec's layer plan.

    Entries are plain [in, out] arrays for dense/time-conv layers and
    BlstmParams for the bidirectional layer. The same container shape carries
    gradients.
    """

    layers: list = field(default_factory=list)

    def arrays(self):
        """All weight matrices flattened into canonical order."""
        out = []
        for entry in self.layers:
            if isinstance(entry, BlstmParams):
                out.extend(entry.matrices())
            else:
                out.append(entry)
        return out


def params_structure(spec):
    """Expected array shapes in canonical order, for validation and codecs."""
    shapes = []
    for tag, meta in _layer_plan(spec):
        if tag == "tconv":
            width, d, out = meta
            shapes.append((width * d, out))
        elif tag == "blstm":
            d, h = meta
            for _ in range(2):  # fwd then bwd direction
                for name in LSTM_MATRIX_NAMES:
                    shapes.append((h, d) if name.startswith("w_x") else (h, h))
        else:
            shapes.append(meta)
    return shapes


def params_from_arrays(spec, arrays, cell_clip=DEFAULT_CELL_CLIP):
    """Rebuild a ModelParams from flat arrays in canonical order."""
    expected = params_structure(spec)
    if len(arrays) != len(expected):
        raise ShapeError(f"expected {len(expected)} weight arrays, got {len(arrays)}")
    for got, want in zip(arrays, expected):
        if got.shape != want:
            raise ShapeError(f"weight shape {got.shape} does not match spec shape {want}")
    arrays = [as_f64(a) for a in arrays]
    layers = []
    pos = 0
    for tag, _ in _layer_plan(spec):
        if tag == "blstm":
            fwd = LstmParams.from_matrices(arrays[pos : pos + 8], cell_clip=cell_clip)
            bwd = LstmParams.from_matrices(arrays[pos + 8 : pos + 16], cell_clip=cell_clip)
            layers.append(BlstmParams(fwd=fwd, bwd=bwd))
            pos += 16
        else:
            layers.append(arrays[pos])
            pos += 1
    return ModelParams(layers=layers)


def params_to_vector(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def params_from_vector(spec, vec, cell_clip=DEFAULT_CELL_CLIP):
    arrays = []
    pos = 0
    for shape in params_structure(spec):
        n = int(np.prod(shape))
        arrays.append(vec[pos : pos + n].reshape(shape).copy())
        pos += n
    if pos != vec.size:
        raise ShapeError(f"vector has {vec.size} entries, spec needs {pos}")
    return params_from_arrays(spec, arrays, cell_clip=cell_clip)


def add_scaled(params, grads, scale):
    """params + scale * grads, entrywise; preserves the container structure."""
    arrays = [p + scale * g for p, g in zip(params.arrays(), grads.arrays())]
    clip = _first_cell_clip(params)
    layers = []
    pos = 0
    for entry in params.layers:
        if isinstance(entry, BlstmParams):
            fwd = LstmParams.from_matrices(arrays[pos : pos + 8], cell_clip=clip)
            bwd = LstmParams.from_matrices(arrays[pos + 8 : pos + 16], cell_clip=clip)
            layers.append(BlstmParams(fwd=fwd, bwd=bwd))
            pos += 16
        else:
            layers.append(arrays[pos])
            pos += 1
    return ModelParams(layers=layers)


def _first_cell_clip(params):
    for entry in params.layers:
        if isinstance(entry, BlstmParams):
            return entry.fwd.cell_clip
    return DEFAULT_CELL_CLIP


def glorot_limit(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec, seed):
    """Seed-deterministic uniform init in ±sqrt(6/(fan_in+fan_out)) per matrix."""
    rng = np.random.default_rng(seed)

    def draw(shape, fan_in, fan_out):
        lim = glorot_limit(fan_in, fan_out)
        return rng.uniform(-lim, lim, size=shape)

    def draw_direction(d, h):
        mats = []
        for name in LSTM_MATRIX_NAMES:
            if name.startswith("w_x"):
                mats.append(draw((h, d), d, h))
            else:
                mats.append(draw((h, h), h, h))
        return LstmParams.from_matrices(mats)

    layers = []
    for tag, meta in _layer_plan(spec):
        if tag == "tconv":
            width, d, out = meta
            layers.append(draw((width * d, out), width * d, out))
        elif tag == "blstm":
            d, h = meta
            layers.append(BlstmParams(fwd=draw_direction(d, h), bwd=draw_direction(d, h)))
        else:
            fan_in, fan_out = meta
            layers.append(draw((fan_in, fan_out), fan_in, fan_out))
    return ModelParams(layers=layers)


# ---------------------------------------------------------------------------
# recurrent sequence passes (kernel-backed)


@dataclass
class _SeqCache:
    xs: np.ndarray
    wx: np.ndarray
    wh: np.ndarray
    h: np.ndarray
    c: np.ndarray
    gates: np.ndarray
    tanhc: np.ndarray
    mask: np.ndarray
    h0: np.ndarray
    c0: np.ndarray


def _stacked_weights(p):
    wx = np.ascontiguousarray(np.vstack([p.w_xi, p.w_xf, p.w_xc, p.w_xo]))
    wh = np.ascontiguousarray(np.vstack([p.w_hi, p.w_hf, p.w_hc, p.w_ho]))
    return wx, wh


def lstm_sequence_forward(p, xs, h0=None, c0=None):
    """Run one direction over xs [T, input]; returns (h [T, hidden], cache)."""
    xs = np.ascontiguousarray(as_f64(xs))
    if xs.ndim != 2 or xs.shape[1] != p.input_dim:
        raise ShapeError(f"inputs {xs.shape} do not match weights [{p.hidden}x{p.input_dim}]")
    if xs.shape[0] < 1:
        raise ShapeError("empty sequence")
    h0 = np.zeros(p.hidden) if h0 is None else as_f64(h0)
    c0 = np.zeros(p.hidden) if c0 is None else as_f64(c0)
    wx, wh = _stacked_weights(p)
    xproj = np.ascontiguousarray(xs @ wx.T)
    h, c, gates, tanhc, mask = kernels.lstm_loop_forward(xproj, wh, p.cell_clip, h0, c0)
    cache = _SeqCache(xs=xs, wx=wx, wh=wh, h=h, c=c, gates=gates, tanhc=tanhc,
                      mask=mask, h0=h0, c0=c0)
    return h, cache


def lstm_sequence_backward(p, cache, grad_h, grad_c_last=None):
    """Gradient of a scalar loss wrt one direction's weights, inputs and
    initial state, given per-frame output gradients grad_h [T, hidden]."""
    grad_h = np.ascontiguousarray(as_f64(grad_h))
    if grad_h.shape != cache.h.shape:
        raise ShapeError(f"grad_h {grad_h.shape} does not match outputs {cache.h.shape}")
    if grad_c_last is None:
        grad_c_last = np.zeros(p.hidden)
    da, grad_h0, grad_c0 = kernels.lstm_loop_backward(
        cache.wh, cache.gates, cache.c, cache.tanhc, cache.mask, cache.c0,
        grad_h, np.ascontiguousarray(as_f64(grad_c_last)))
    h_prev = np.vstack([cache.h0[None, :], cache.h[:-1]])
    gwx = da.T @ cache.xs
    gwh = da.T @ h_prev
    grad_xs = da @ cache.wx
    H = p.hidden
    grads = LstmParams(
        w_xi=gwx[:H], w_hi=gwh[:H],
        w_xf=gwx[H : 2 * H], w_hf=gwh[H : 2 * H],
        w_xc=gwx[2 * H : 3 * H], w_hc=gwh[2 * H : 3 * H],
        w_xo=gwx[3 * H :], w_ho=gwh[3 * H :],
        cell_clip=p.cell_clip,
    )
    return grads, grad_xs, (grad_h0, grad_c0)


def lstm_step(p, x_t, prev=None):
    """One recurrence step; prev=None means the zero state.

    The returned state carries the forward cache needed by
    lstm_step_backward and satisfies |c| <= cell_clip componentwise.
    """
    if prev is None:
        prev = LstmState.zeros(p.hidden)
    if np.any(np.abs(prev.c) > p.cell_clip):
        raise ContractError("previous cell state exceeds the cell clip")
    h, cache = lstm_sequence_forward(p, as_f64(x_t)[None, :], h0=prev.h, c0=prev.c)
    return LstmState(h=h[0].copy(), c=cache.c[0].copy(), cache=cache)


def lstm_step_backward(p, x_t, prev, cached_gates, grad_h_t, grad_c_t=None):
    """Backward through one step given the forward cache of that same step.

    Returns (grad_params, grad_x_t, grad_prev_state); where the cell clip was
    active the cell path contributes zero gradient.
    """
    if cached_gates is None:
        raise ContractError("lstm_step_backward needs the forward cache of the step")
    if grad_c_t is None:
        grad_c_t = np.zeros(p.hidden)
    grads, grad_xs, (gh0, gc0) = lstm_sequence_backward(
        p, cached_gates, as_f64(grad_h_t)[None, :], grad_c_last=grad_c_t)
    return grads, grad_xs[0], LstmState(h=gh0, c=gc0)


def blstm_forward(fwd, bwd, xs):
    """Bidirectional pass from zero initial states; rows are [h_fwd ; h_bwd]."""
    ys, _ = _blstm_forward_cached(BlstmParams(fwd=fwd, bwd=bwd), xs)
    return ys


def _blstm_forward_cached(bp, xs):
    xs = np.ascontiguousarray(as_f64(xs))
    h_f, cache_f = lstm_sequence_forward(bp.fwd, xs)
    xs_rev = np.ascontiguousarray(xs[::-1])
    h_b_rev, cache_b = lstm_sequence_forward(bp.bwd, xs_rev)
    ys = np.hstack([h_f, h_b_rev[::-1]])
    return ys, (cache_f, cache_b)


def _blstm_backward_cached(bp, cache, grad_ys):
    cache_f, cache_b = cache
    H = bp.fwd.hidden
    grad_f = np.ascontiguousarray(grad_ys[:, :H])
    grad_b_rev = np.ascontiguousarray(grad_ys[::-1, H:])
    gf, dxs_f, _ = lstm_sequence_backward(bp.fwd, cache_f, grad_f)
    gb, dxs_b_rev, _ = lstm_sequence_backward(bp.bwd, cache_b, grad_b_rev)
    dxs = dxs_f + dxs_b_rev[::-1]
    return BlstmParams(fwd=gf, bwd=gb), dxs


# ---------------------------------------------------------------------------
# time convolution


def _tconv_gather(xs, width):
    """[T, d] -> [T, width*d] symmetric zero-padded windows, stride 1."""
    T, d = xs.shape
    half = width // 2
    padded = np.zeros((T + 2 * half, d))
    padded[half : half + T] = xs
    gathered = np.empty((T, width * d))
    for j in range(width):
        gathered[:, j * d : (j + 1) * d] = padded[j : j + T]
    return gathered


def _tconv_scatter(grad_gathered, width, T, d):
    half = width // 2
    grad_padded = np.zeros((T + 2 * half, d))
    for j in range(width):
        grad_padded[j : j + T] += grad_gathered[:, j * d : (j + 1) * d]
    return grad_padded[half : half + T]


def time_convolution(xs, kernel, width):
    """Linear map over symmetric zero-padded frame windows of odd `width`."""
    xs = as_f64(xs)
    kernel = as_f64(kernel)
    if width % 2 == 0 or width < 1:
        raise ConfigError(f"time-convolution width must be odd and positive, got {width}")
    if xs.ndim != 2:
        raise ShapeError(f"expected [T, d] inputs, got {xs.shape}")
    if kernel.ndim != 2 or kernel.shape[0] != width * xs.shape[1]:
        raise ShapeError(
            f"kernel {kernel.shape} does not match width {width} x input dim {xs.shape[1]}")
    return _tconv_gather(xs, width) @ kernel


# ---------------------------------------------------------------------------
# composite forward/backward


def _check_inputs(spec, xs):
    xs = as_f64(xs)
    if xs.ndim != 2:
        raise ShapeError(f"expected a [frames, dim] matrix, got shape {xs.shape}")
    if xs.shape[1] != spec.frame_dim:
        raise ShapeError(
            f"input rows have width {xs.shape[1]}, spec expects {spec.frame_dim}")
    return xs


def _check_params(spec, params):
    got = [a.shape for a in params.arrays()]
    want = params_structure(spec)
    if got != want:
        raise ShapeError(f"params do not match spec: shapes {got} vs expected {want}")


def forward_with_cache(spec, params, xs):
    """Per-frame logits plus the layer caches needed for backward."""
    xs = _check_inputs(spec, xs)
    _check_params(spec, params)
    caches = []
    y = xs
    for (tag, meta), entry in zip(_layer_plan(spec), params.layers):
        if tag == "tconv":
            width = meta[0]
            gathered = _tconv_gather(y, width)
            caches.append(("tconv", gathered))
            y = gathered @ entry
        elif tag == "dense_relu":
            pre = y @ entry
            caches.append(("dense_relu", (y, pre)))
            y = relu(pre)
        elif tag == "blstm":
            y_in = y
            y, bcache = _blstm_forward_cached(entry, y_in)
            caches.append(("blstm", bcache))
        else:  # final dense
            caches.append(("dense", y))
            y = y @ entry
    return y, caches


def backward_from_cache(spec, params, caches, grad_logits):
    """Parameter gradients given d(loss)/d(logits); pairs with forward_with_cache."""
    grad_layers = [None] * len(params.layers)
    dy = as_f64(grad_logits)
    plan = _layer_plan(spec)
    for idx in range(len(plan) - 1, -1, -1):
        tag, meta = plan[idx]
        entry = params.layers[idx]
        kind, cache = caches[idx]
        if kind != tag:
            raise ContractError("forward cache does not match the layer plan")
        if tag == "dense":
            x = cache
            grad_layers[idx] = x.T @ dy
            dy = dy @ entry.T
        elif tag == "dense_relu":
            x, pre = cache
            dpre = dy * (pre > 0)
            grad_layers[idx] = x.T @ dpre
            dy = dpre @ entry.T
        elif tag == "blstm":
            gb, dy = _blstm_backward_cached(entry, cache, dy)
            grad_layers[idx] = gb
        else:  # tconv
            gathered = cache
            grad_layers[idx] = gathered.T @ dy
            width, d, _ = meta
            dy = _tconv_scatter(dy @ entry.T, width, gathered.shape[0], d)
    return ModelParams(layers=grad_layers)


def forward_logits(spec, params, xs):
    logits, _ = forward_with_cache(spec, params, xs)
    return logits


def forward(spec, params, xs):
    """Per-frame posterior rows (softmax of the stack's logits)."""
    return softmax(forward_logits(spec, params, xs), axis=1)


def forward_log_probs(spec, params, xs):
    return log_softmax(forward_logits(spec, params, xs), axis=1)


def backward(spec, params, xs, grad_logits):
    """Full parameter gradient for the given upstream logit gradient."""
    grad_logits = as_f64(grad_logits)
    logits, caches = forward_with_cache(spec, params, xs)
    if grad_logits.shape != logits.shape:
        raise ShapeError(
            f"grad_logits {grad_logits.shape} does not match logits {logits.shape}")
    return backward_from_cache(spec, params, caches, grad_logits)


def context_windows(features, left, right):
    """Concatenate each frame with `left`/`right` neighbors, replicating edges."""
    features = as_f64(features)
    if features.ndim != 2:
        raise ShapeError(f"expected [T, d] features, got shape {features.shape}")
    if left < 0 or right < 0:
        raise ConfigError("context sizes must be non-negative")
    T = features.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-left, right + 1)[None, :], 0, T - 1)
    return features[idx].reshape(T, -1)


def frame_logits(spec, params, features):
    """Per-frame logits for raw utterance features [T, input_dim]; applies the
    spec's context window for feed-forward models."""
    features = as_f64(features)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeError(
            f"features {features.shape} do not match spec input_dim {spec.input_dim}")
    if spec.kind == FEED_FORWARD:
        left, right = spec.context
        features = context_windows(features, left, right)
    return forward_logits(spec, params, features)
