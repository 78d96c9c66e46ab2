"""Concrete autoencoder for band selection.

Fixed topology: a concrete (Gumbel-softmax) selector picking ``k`` input
bands, a dense hidden layer of ``k`` units with LeakyReLU, and a
reconstruction layer back to all ``d`` bands. Forward, backward and Adam are
written out by hand in numpy; all arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import HyperCube, WavelengthGrid
from .errors import DataError, NumericError, ParameterError, RangeError, SelectionError, ShapeError
from .preprocess import zscore_matrix

PARAM_NAMES = ("logits", "W1", "b1", "W2", "b2")


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 8
    t_start: float = 10.0
    t_end: float = 0.1
    val_fraction: float = 0.2
    seed: int = 0
    k: int = 5
    hidden: int = 5
    negative_slope: float = 0.01
    output_activation: str = "linear"
    noise: str = "batch"  # "batch": one Gumbel draw per neuron per minibatch; "example": per row
    init_logit_std: float = 0.01

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not 0 < self.t_end < self.t_start:
            raise ParameterError("temperature schedule needs 0 < t_end < t_start")
        if not 0 < self.val_fraction < 1:
            raise ParameterError("val_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.k < 1 or self.hidden < 1:
            raise ParameterError("batch_size, k and hidden must be positive")
        if self.output_activation not in ("linear", "leaky_relu"):
            raise ParameterError(f"unknown output activation {self.output_activation!r}")
        if self.noise not in ("batch", "example"):
            raise ParameterError(f"unknown noise mode {self.noise!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown CAE config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ConcreteSelector:
    logits: np.ndarray  # (k, d) log alpha
    temperature: float = 10.0

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.logits)):
            raise NumericError("selector logits must be finite")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")


@dataclass
class CaeModel:
    selector: ConcreteSelector
    W1: np.ndarray  # (hidden, k)
    b1: np.ndarray
    W2: np.ndarray  # (d, hidden)
    b2: np.ndarray
    negative_slope: float = 0.01
    output_activation: str = "linear"
    wavelengths: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        k, d = self.selector.logits.shape
        h = self.W1.shape[0]
        if self.W1.shape != (h, k) or self.b1.shape != (h,) or self.W2.shape != (d, h) \
                or self.b2.shape != (d,):
            raise ShapeError("CAE layer shapes are inconsistent")
        if self.wavelengths is not None and len(self.wavelengths) != d:
            raise ShapeError("model wavelengths do not match the input width")

    @property
    def d(self) -> int:
        return self.selector.logits.shape[1]

    @property
    def k(self) -> int:
        return self.selector.logits.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"logits": self.selector.logits, "W1": self.W1, "b1": self.b1,
                "W2": self.W2, "b2": self.b2}

    def to_dict(self) -> dict:
        return {
            "shapes": {n: list(p.shape) for n, p in self.params().items()},
            "logits": self.selector.logits.tolist(),
            "temperature": self.selector.temperature,
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
            "negative_slope": self.negative_slope,
            "output_activation": self.output_activation,
            "wavelengths_nm": None if self.wavelengths is None else [float(w) for w in self.wavelengths],
            "config": self.config,
            "seed": self.config.get("seed"),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaeModel":
        wl = d.get("wavelengths_nm")
        return cls(ConcreteSelector(np.asarray(d["logits"], dtype=float), d["temperature"]),
                   np.asarray(d["W1"], dtype=float), np.asarray(d["b1"], dtype=float),
                   np.asarray(d["W2"], dtype=float), np.asarray(d["b2"], dtype=float),
                   d["negative_slope"], d["output_activation"],
                   None if wl is None else np.asarray(wl, dtype=float),
                   d.get("config", {}), d.get("history", {}))


def init_model(d: int, config: TrainConfig, rng: np.random.Generator,
               wavelengths=None) -> CaeModel:
    k, h = config.k, config.hidden
    logits = config.init_logit_std * rng.standard_normal((k, d))
    lim1 = math.sqrt(6.0 / (k + h))
    lim2 = math.sqrt(6.0 / (h + d))
    W1 = rng.uniform(-lim1, lim1, (h, k))
    W2 = rng.uniform(-lim2, lim2, (d, h))
    return CaeModel(ConcreteSelector(logits, config.t_start), W1, np.zeros(h), W2, np.zeros(d),
                    config.negative_slope, config.output_activation,
                    None if wavelengths is None else np.asarray(wavelengths, dtype=float),
                    asdict(config))


def gumbel_from_uniform(u) -> np.ndarray:
    return -np.log(-np.log(np.asarray(u, dtype=np.float64)))


def sample_gumbel(shape, seed: int | np.random.Generator) -> np.ndarray:
    """g = -log(-log u), u ~ U(0, 1)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return gumbel_from_uniform(u)


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def concrete_weights(logits: np.ndarray, noise, temperature: float) -> np.ndarray:
    """z = softmax((log alpha + g) / T) along the band axis."""
    return _softmax((logits + noise) / temperature)


def concrete_forward(x: np.ndarray, selector: ConcreteSelector, noise=None,
                     train: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Selector output ``u`` and weights ``z`` for a single d-vector.

    With ``train=False`` the weights are the one-hot argmax of the logits.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input to the concrete selector")
    if x.shape != (selector.logits.shape[1],):
        raise ShapeError(f"input width {x.shape} does not match selector {selector.logits.shape}")
    if train:
        g = 0.0 if noise is None else noise
        z = concrete_weights(selector.logits, g, selector.temperature)
    else:
        z = np.zeros_like(selector.logits)
        z[np.arange(z.shape[0]), np.argmax(selector.logits, axis=1)] = 1.0
    return z @ x, z


def _lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def _lrelu_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def forward(model: CaeModel, batch: np.ndarray, noise: np.ndarray | None = None,
            train: bool = True, temperature: float | None = None):
    """Reconstruct a (B, d) batch. Returns (reconstruction, cache for backward).

    ``noise`` is (k, d) shared by the batch or (B, k, d) per row; ``None``
    means zero noise.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ShapeError(f"batch width {X.shape} does not match model input {model.d}")
    logits = model.selector.logits
    T = model.selector.temperature if temperature is None else temperature
    if train:
        g = 0.0 if noise is None else noise
        z = concrete_weights(logits, g, T)
        u = X @ z.T if z.ndim == 2 else np.einsum("bd,bkd->bk", X, z)
        sel = None
    else:
        z = None
        sel = np.argmax(logits, axis=1)
        u = X[:, sel]
    h1 = u @ model.W1.T + model.b1
    a1 = _lrelu(h1, model.negative_slope)
    h2 = a1 @ model.W2.T + model.b2
    out = _lrelu(h2, model.negative_slope) if model.output_activation == "leaky_relu" else h2
    cache = {"X": X, "z": z, "sel": sel, "T": T, "u": u, "h1": h1, "a1": a1, "h2": h2, "out": out}
    return out, cache


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def backward(model: CaeModel, cache: dict, target: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of the MSE w.r.t. every parameter; noise and T held constant."""
    X = cache["X"]
    target = X if target is None else np.asarray(target, dtype=np.float64)
    out, h2, a1, h1, u = cache["out"], cache["h2"], cache["a1"], cache["h1"], cache["u"]
    slope = model.negative_slope
    dout = 2.0 * (out - target) / out.size
    dh2 = dout * _lrelu_grad(h2, slope) if model.output_activation == "leaky_relu" else dout
    grads = {"W2": dh2.T @ a1, "b2": dh2.sum(axis=0)}
    dh1 = (dh2 @ model.W2) * _lrelu_grad(h1, slope)
    grads["W1"] = dh1.T @ u
    grads["b1"] = dh1.sum(axis=0)
    du = dh1 @ model.W1  # (B, k)
    z = cache["z"]
    if z is None:
        grads["logits"] = np.zeros_like(model.selector.logits)
    elif z.ndim == 2:
        dz = du.T @ X  # (k, d)
        grads["logits"] = z * (dz - np.sum(dz * z, axis=1, keepdims=True)) / cache["T"]
    else:
        dz = du[:, :, None] * X[:, None, :]  # (B, k, d)
        dl = z * (dz - np.sum(dz * z, axis=2, keepdims=True))
        grads["logits"] = dl.sum(axis=0) / cache["T"]
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({n: np.zeros_like(p) for n, p in params.items()},
                   {n: np.zeros_like(p) for n, p in params.items()}, **kw)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update. Moments are updated in place on ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
    step = lr * math.sqrt(c2) / c1
    eps = state.eps * math.sqrt(c2)
    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        new[name] = p - step * m / (np.sqrt(v) + eps)
    return new


def set_params(model: CaeModel, params: dict[str, np.ndarray]) -> None:
    model.selector.logits = params["logits"]
    model.W1, model.b1, model.W2, model.b2 = params["W1"], params["b1"], params["W2"], params["b2"]


def anneal_temperature(epoch: float, config: TrainConfig) -> float:
    """Geometric decay from t_start at epoch 0 to t_end at epoch ``epochs - 1``."""
    last = config.epochs - 1
    if not 0 <= epoch <= config.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {config.epochs}]")
    if last <= 0 or epoch == 0:
        return float(config.t_start)
    if epoch == last:
        return float(config.t_end)
    return float(config.t_start * (config.t_end / config.t_start) ** (epoch / last))


def train(pixels: np.ndarray, config: TrainConfig | None = None,
          wavelengths=None) -> tuple[CaeModel, dict]:
    """Fit a concrete autoencoder to (n, d) spectra.

    Inputs are z-scored per band, shuffled with the config seed and split into
    training and validation rows. Validation loss uses the argmax selection.
    """
    config = TrainConfig() if config is None else config
    X = np.asarray(pixels, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("training data must be (n, d)")
    n, d = X.shape
    if n < 10:
        raise DataError(f"need at least 10 spectra to train, got {n}")
    if d < config.k:
        raise DataError(f"input width {d} is smaller than k={config.k}")
    if not np.all(np.isfinite(X)):
        raise NumericError("training data contains non-finite values")
    rng = np.random.default_rng(config.seed)
    X = zscore_matrix(X)
    perm = rng.permutation(n)
    n_val = min(n - 1, max(1, int(round(config.val_fraction * n))))
    val, tr = X[perm[:n_val]], X[perm[n_val:]]
    model = init_model(d, config, rng, wavelengths)
    # one flat buffer for all parameters so each Adam step is a few vector ops
    names = PARAM_NAMES
    shapes = [model.params()[nm].shape for nm in names]
    sizes = [int(np.prod(sh)) for sh in shapes]
    theta = np.concatenate([model.params()[nm].ravel() for nm in names])
    views = np.split(theta, np.cumsum(sizes)[:-1])
    set_params(model, {nm: v.reshape(sh) for nm, v, sh in zip(names, views, shapes)})
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, config.learning_rate
    step = 0
    history = {"train_loss": [], "val_loss": [], "temperature": []}
    bs = config.batch_size
    for epoch in range(config.epochs):
        T = anneal_temperature(epoch, config)
        model.selector.temperature = T
        order = rng.permutation(tr.shape[0])
        total = 0.0
        for start in range(0, order.size, bs):
            xb = tr[order[start:start + bs]]
            shape = (config.k, d) if config.noise == "batch" else (xb.shape[0], config.k, d)
            g = sample_gumbel(shape, rng)
            out, cache = forward(model, xb, g, train=True)
            total += mse_loss(out, xb) * xb.shape[0]
            grads = backward(model, cache)
            flat = np.concatenate([grads[nm].ravel() for nm in names])
            step += 1
            m *= b1
            m += (1.0 - b1) * flat
            v *= b2
            v += (1.0 - b2) * (flat * flat)
            c2 = math.sqrt(1.0 - b2 ** step)
            theta -= (lr * c2 / (1.0 - b1 ** step)) * m / (np.sqrt(v) + eps * c2)
        if not np.all(np.isfinite(model.selector.logits)):
            raise NumericError(f"training diverged at epoch {epoch}")
        history["train_loss"].append(total / tr.shape[0])
        history["val_loss"].append(mse_loss(forward(model, val, train=False)[0], val))
        history["temperature"].append(T)
    set_params(model, {nm: p.copy() for nm, p in model.params().items()})
    model.history = history
    return model, history


def reconstruct(model: CaeModel, pixels: np.ndarray, standardized: bool = True) -> np.ndarray:
    """Inference-mode reconstruction (argmax selection, no noise)."""
    X = np.asarray(pixels, dtype=np.float64)
    X = zscore_matrix(X) if not standardized else X
    return forward(model, X, train=False)[0]


def selected_indices(model: CaeModel) -> np.ndarray:
    """Band index per selector neuron; a neuron whose argmax is taken uses its runner-up."""
    logits = model.selector.logits
    k, d = logits.shape
    if d < k:
        raise SelectionError(f"only {d} bands available for {k} selector neurons")
    taken: list[int] = []
    for j in range(k):
        # stable sort keeps ties deterministic (lowest index first)
        for idx in np.argsort(-logits[j], kind="stable"):
            if int(idx) not in taken:
                taken.append(int(idx))
                break
    return np.array(taken, dtype=np.int64)


def selected_bands(model_a: CaeModel, model_b: CaeModel) -> np.ndarray:
    """Union of both models' selections as sorted, distinct wavelengths (nm)."""
    out = []
    for m in (model_a, model_b):
        if m.wavelengths is None:
            raise SelectionError("model has no wavelength grid attached")
        out.extend(m.wavelengths[selected_indices(m)].tolist())
    bands = np.unique(np.asarray(out))
    if bands.size < model_a.k + model_b.k:
        raise SelectionError(f"models selected only {bands.size} distinct bands")
    return bands


def downsample_to_bands(cube: HyperCube, bands) -> HyperCube:
    """Keep the grid bands nearest to ``bands`` (each within one local grid step)."""
    wl = cube.wavelengths
    bands = np.atleast_1d(np.asarray(bands, dtype=np.float64))
    steps = np.diff(wl)
    idx = []
    for b in bands:
        i = int(np.argmin(np.abs(wl - b)))
        local = max(steps[i - 1] if i > 0 else 0.0, steps[i] if i < steps.size else 0.0)
        if abs(wl[i] - b) > local + 1e-9:
            raise RangeError(f"band {b:g} nm is not within one grid step of the cube grid")
        idx.append(i)
    idx = np.array(idx)
    if np.unique(idx).size != idx.size:
        raise SelectionError("two requested bands map to the same grid band")
    order = np.argsort(idx)
    idx = idx[order]
    data = cube.data[..., idx]
    if idx.size == 1:
        # single band: the grid type needs two samples, so carry the data directly
        return _single_band_cube(cube, idx[0])
    return cube.derive(data, "downsample_to_bands", grid=WavelengthGrid(wl[idx]))


def _single_band_cube(cube: HyperCube, i: int) -> "SingleBandCube":
    return SingleBandCube(cube.data[..., i:i + 1].copy(), float(cube.wavelengths[i]), cube.mask.copy(),
                          cube.quantity, cube.provenance + ("downsample_to_bands",))


@dataclass(frozen=True)
class SingleBandCube:
    """One-band slice; a WavelengthGrid needs at least two samples."""

    data: np.ndarray
    wavelength_nm: float
    mask: np.ndarray
    quantity: str
    provenance: tuple[str, ...]

    @property
    def bands(self) -> int:
        return 1

    @property
    def wavelengths(self) -> np.ndarray:
        return np.array([self.wavelength_nm])

    def pixels(self) -> np.ndarray:
        return self.data[self.mask]


def make_planted_dataset(n: int, d: int, planted, seed: int = 0, echoes: int = 20,
                         loading: float = 1.0) -> np.ndarray:
    """Synthetic spectra where only the ``planted`` bands carry clean signal.

    Planted band ``j`` is latent factor ``j`` exactly. For each factor,
    ``echoes`` other bands hold ``loading`` times it plus unit noise, which
    gives the planted bands reconstruction value beyond themselves. All
    remaining bands are unit noise.
    """
    rng = np.random.default_rng(seed)
    planted = np.asarray(planted, dtype=np.int64)
    m = planted.size
    if m * (echoes + 1) > d:
        raise ParameterError(f"{m} planted bands with {echoes} echoes do not fit in {d} bands")
    latents = rng.standard_normal((n, m))
    X = rng.standard_normal((n, d))
    free = rng.permutation(np.setdiff1d(np.arange(d), planted))[:m * echoes]
    X[:, free] += loading * latents[:, np.repeat(np.arange(m), echoes)]
    X[:, planted] = latents
    return X
