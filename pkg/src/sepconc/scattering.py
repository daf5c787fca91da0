"""Scattering cascades: fixed tree, learned projections, and concentration stages."""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .arrayio import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DimensionError, InvariantError
from .fisher import LabeledBatch, channel_samples, compute_stats, fisher_ratio
from .frames import init_random_tight
from .layers import (
    BatchNorm, FixedLinear, Flatten, FrameThreshold, Layer, Linear, Projector, Sequential,
    VectorNormalize, WaveletLayer, classifier_init, random_orthogonal_rows,
)
from .linalg import fft_conv2d_stride
from .nonlinear import Nonlinearity, canonical_kind
from .wavelets import analysis_flat, cached_bank

VARIANTS = ("tree", "projected", "concentrated")


@dataclass(frozen=True)
class ChannelIndex:
    """Provenance of every channel.

    Each entry is ``(input_channel, steps, phase)`` where ``steps`` is the
    ordered tuple of ``(j, l)`` band-pass applications and ``phase`` is the
    index of the last band-pass phase, or ``None`` once phases are averaged
    (or for channels whose last stage was the low-pass filter).
    """
    paths: tuple

    def __len__(self):
        return len(self.paths)

    @property
    def orders(self):
        return np.array([len(p[1]) for p in self.paths], dtype=int)

    @classmethod
    def inputs(cls, channels):
        return cls(tuple((c, (), None) for c in range(channels)))

    def expand(self, j, L, full=None):
        """Index after one wavelet stage; ``full[i]`` False keeps only the low-pass child."""
        out = []
        for i, (c, steps, _) in enumerate(self.paths):
            out.append((c, steps, None))
            if full is None or full[i]:
                out.extend((c, steps + ((j, l),), a) for l in range(1, L + 1) for a in range(4))
        return ChannelIndex(tuple(out))


def channel_count(J, L, order=2, in_channels=1):
    """Closed form ``sum_{k <= o} C(J, k) L^k`` per input channel."""
    top = J if order is None or order == math.inf else min(int(order), J)
    return in_channels * sum(math.comb(J, k) * L**k for k in range(top + 1))


def enumerate_paths(J, L, order=2, in_channels=1):
    """Brute-force list of all retained paths (reference for the staged construction)."""
    top = J if order is None or order == math.inf else min(int(order), J)
    out = []
    for c in range(in_channels):
        for k in range(top + 1):
            for scales in itertools.combinations(range(1, J + 1), k):
                for dirs in itertools.product(range(1, L + 1), repeat=k):
                    out.append((c, tuple(zip(scales, dirs))))
    return out


def _path_key(entry):
    c, steps, _ = entry
    return (c, len(steps), steps)


def pruning_matrix(index, order):
    """Orthogonal projection that drops paths above ``order`` and averages the 4 phases.

    Returns ``(matrix, new_index)`` with ``matrix`` of shape ``(K', K)`` and
    orthonormal rows; each phase group contributes weight ``1/2`` per member.
    """
    groups = {}
    for i, (c, steps, phase) in enumerate(index.paths):
        groups.setdefault((c, steps), []).append((i, phase))
    keep = []
    for (c, steps), members in groups.items():
        phases = sorted(m[1] for m in members if m[1] is not None)
        if len(members) == 1 and members[0][1] is None:
            weight = 1.0
        elif phases == [0, 1, 2, 3] and len(members) == 4:
            weight = 0.5
        else:
            raise InvariantError(f"inconsistent channel index for path {(c, steps)}: phases {[m[1] for m in members]}")
        if order is not None and len(steps) > order:
            continue
        keep.append(((c, steps, None), [m[0] for m in members], weight))
    keep.sort(key=lambda t: _path_key(t[0]))
    mat = np.zeros((len(keep), len(index)))
    for r, (_, cols, weight) in enumerate(keep):
        mat[r, cols] = weight
    return mat, ChannelIndex(tuple(t[0] for t in keep))


def prune_and_phase_average(channels, index, order):
    """Apply :func:`pruning_matrix` along the channel axis of ``(N, K, H, W)`` maps."""
    channels = np.asarray(channels)
    if channels.shape[1] != len(index):
        raise InvariantError(f"{channels.shape[1]} channels but index describes {len(index)}")
    mat, new = pruning_matrix(index, order)
    out = np.einsum("ok,nkhw->nohw", mat, channels, optimize=True)
    return out.astype(channels.dtype, copy=False), new


def tree_index(J, L, order=2, in_channels=1):
    """Channel index of the tree output, built stage by stage without data."""
    index = ChannelIndex.inputs(in_channels)
    for j in range(1, J + 1):
        full = index.orders < (order if order is not None else math.inf)
        index = pruning_matrix(index.expand(j, L, full), order)[1]
    return index


@dataclass(frozen=True)
class ScatteringConfig:
    J: int = 3
    L: int = 8
    order: float = 2
    variant: str = "tree"
    dims: tuple = (64, 128, 256)
    widths: tuple = (1024, 2048, 4096)
    nonlinearity: str = "relu_t"
    in_channels: int = 3
    image_size: tuple = (32, 32)
    tree_dim: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.J < 1 or self.L < 2 or self.in_channels < 1:
            raise ConfigurationError(f"need J >= 1, L >= 2 and at least one input channel, got J={self.J}, L={self.L}")
        if self.order is not None and self.order < 0:
            raise ConfigurationError(f"order must be nonnegative, got {self.order}")
        h, w = self.image_size
        step = 2**self.J
        if h % step or w % step:
            raise DimensionError(f"J={self.J} needs image sides divisible by {step}, got {self.image_size}")
        canonical_kind(self.nonlinearity)
        if self.variant in ("projected", "concentrated"):
            if len(self.dims) != self.J:
                raise ConfigurationError(f"need {self.J} projector dims, got {len(self.dims)}")
            if any(d < 1 for d in self.dims) or any(b < a for a, b in zip(self.dims, self.dims[1:])):
                raise ConfigurationError(f"projector dims must be positive and nondecreasing, got {self.dims}")
            prev = self.in_channels
            for j, d in enumerate(self.dims, 1):
                if d > prev * (1 + 4 * self.L):
                    raise ConfigurationError(f"stage {j}: d_{j}={d} exceeds its {prev * (1 + 4 * self.L)} input channels")
                prev = d
        if self.variant == "concentrated":
            if len(self.widths) != self.J:
                raise ConfigurationError(f"need {self.J} frame widths, got {len(self.widths)}")
            for j, (d, p) in enumerate(zip(self.dims, self.widths), 1):
                if p < d:
                    raise ConfigurationError(f"stage {j}: frame width p_{j}={p} below d_{j}={d}")
        if self.variant == "tree" and self.tree_dim is not None:
            if self.tree_dim > self.tree_channels:
                raise ConfigurationError(f"tree_dim={self.tree_dim} exceeds the {self.tree_channels} tree channels")

    @property
    def tree_channels(self):
        return channel_count(self.J, self.L, self.order, self.in_channels)

    @property
    def n_layers(self):
        return {"tree": self.J, "projected": self.J, "concentrated": 2 * self.J}[self.variant]

    def stage_size(self, j):
        h, w = self.image_size
        return h // 2**j, w // 2**j

    @property
    def output_channels(self):
        if self.variant == "tree":
            return self.tree_dim or self.tree_channels
        return self.dims[-1]

    @property
    def feature_dim(self):
        h, w = self.stage_size(self.J)
        return self.output_channels * h * w


def _check_images(cfg, x):
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected (N, {cfg.in_channels}, H, W) images, got {x.shape}")
    if tuple(x.shape[-2:]) != tuple(cfg.image_size):
        h, w = x.shape[-2:]
        step = 2**cfg.J
        if h % step or w % step:
            raise DimensionError(f"J={cfg.J} needs image sides divisible by {step}, got {(h, w)}")
        raise DimensionError(f"images of size {(h, w)} do not match configured {tuple(cfg.image_size)}")
    return x


def _tree_stage(x, index, j, L, order):
    """One rectified wavelet stage plus pruning; paths already at ``order`` only get the low-pass."""
    n, k, h, w = x.shape
    bank = cached_bank((h, w), L)
    full = index.orders < (order if order is not None else math.inf)
    parts, entries = [], []
    if full.any():
        coeffs = analysis_flat(bank, x[:, full])
        np.maximum(coeffs[:, :, 1:], 0, out=coeffs[:, :, 1:])
        parts.append(coeffs.reshape(n, -1, h // 2, w // 2))
        sub = ChannelIndex(tuple(p for p, f in zip(index.paths, full) if f))
        entries.extend(sub.expand(j, L).paths)
    if (~full).any():
        parts.append(fft_conv2d_stride(x[:, ~full], bank.lowpass, 2).astype(x.dtype, copy=False))
        entries.extend((c, steps, None) for (c, steps, _), f in zip(index.paths, full) if not f)
    stacked = np.concatenate(parts, axis=1)
    return prune_and_phase_average(stacked, ChannelIndex(tuple(entries)), order)


def scattering_tree(cfg, x, chunk=256):
    """Pruned, phase-averaged scattering tree ``S_T x``; returns ``(maps, index)``."""
    x = _check_images(cfg, x)
    outs = []
    index = None
    for s in range(0, max(len(x), 1), chunk):
        y = x[s:s + chunk]
        idx = ChannelIndex.inputs(cfg.in_channels)
        for j in range(1, cfg.J + 1):
            y, idx = _tree_stage(y, idx, j, cfg.L, cfg.order)
        outs.append(y)
        index = idx
    return np.concatenate(outs), index


class TreeLayer(Layer):
    """Fixed scattering tree as a network block (no parameters, no input gradient)."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg

    def forward(self, x, train=False):
        return scattering_tree(self.cfg, x)[0]

    def backward(self, dy):
        raise InvariantError("the fixed scattering tree is never differentiated")


@dataclass
class StageState:
    """Learned quantities of one stage (the tree variant has a single stage)."""
    projector: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    frame: np.ndarray = None


@dataclass
class ScatteringState:
    stages: list
    classifier: np.ndarray = None
    bias: np.ndarray = None
    head_mean: np.ndarray = None
    head_var: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def save(self, path, cfg=None):
        blocks = []
        for j, st in enumerate(self.stages, 1):
            if st.projector is not None:
                blocks.append(({"stage": j, "role": "projector"}, st.projector))
            blocks.append(({"stage": j, "role": "bn_mean"}, st.bn_mean[None]))
            blocks.append(({"stage": j, "role": "bn_var"}, st.bn_var[None]))
            if st.frame is not None:
                blocks.append(({"stage": j, "role": "frame"}, st.frame))
        if self.classifier is not None:
            blocks.append(({"stage": 0, "role": "classifier"}, self.classifier))
            blocks.append(({"stage": 0, "role": "bias"}, self.bias[None]))
            blocks.append(({"stage": 0, "role": "head_mean"}, self.head_mean[None]))
            blocks.append(({"stage": 0, "role": "head_var"}, self.head_var[None]))
        save_checkpoint(path, blocks)

    @classmethod
    def load(cls, path):
        stages, head = {}, {}
        for meta, arr in load_checkpoint(path):
            if meta["stage"] == 0:
                head[meta["role"]] = arr
            else:
                stages.setdefault(meta["stage"], {})[meta["role"]] = arr
        st = [
            StageState(s.get("projector"), s["bn_mean"][0], s["bn_var"][0], s.get("frame"))
            for _, s in sorted(stages.items())
        ]
        if head:
            return cls(st, head["classifier"], head["bias"][0], head["head_mean"][0], head["head_var"][0])
        return cls(st)


def stage_inputs(cfg):
    """Number of channels entering each projector."""
    if cfg.variant == "tree":
        return [cfg.tree_channels]
    dims = [cfg.in_channels] + list(cfg.dims[:-1])
    return [d * (1 + 4 * cfg.L) for d in dims]


def init_state(cfg, seed=0, n_classes=None, dtype=np.float64):
    """Random orthogonal projectors, random tight frames, identity statistics."""
    rng = np.random.default_rng(seed)
    outs = [cfg.tree_dim or cfg.tree_channels] if cfg.variant == "tree" else list(cfg.dims)
    stages = []
    for j, (k_in, d) in enumerate(zip(stage_inputs(cfg), outs)):
        proj = random_orthogonal_rows(d, k_in, rng).astype(dtype) if (cfg.variant != "tree" or cfg.tree_dim) else None
        frame = None
        if cfg.variant == "concentrated":
            frame = init_random_tight(cfg.widths[j], d, int(rng.integers(2**31))).weights.astype(dtype)
        stages.append(StageState(proj, np.zeros(k_in, dtype), np.ones(k_in, dtype), frame))
    state = ScatteringState(stages)
    if n_classes is not None:
        w, b = classifier_init(n_classes, cfg.feature_dim, rng, dtype)
        state.classifier, state.bias = w, b
        state.head_mean = np.zeros(cfg.feature_dim, dtype)
        state.head_var = np.ones(cfg.feature_dim, dtype)
    return state


class ScatteringNet:
    """Feature extractor plus linear head; ``marks`` are layer-output positions of the Fisher report."""

    def __init__(self, cfg, state, bn_momentum=0.9):
        self.cfg = cfg
        layers, marks = [], []
        h, w = cfg.image_size
        if cfg.variant == "tree":
            st = state.stages[0]
            layers.append(TreeLayer(cfg))
            marks.append(len(layers) - 1)
            if st.projector is not None:
                layers.append(self._bn(st, bn_momentum))
                layers.append(Projector(st.projector))
                layers.append(VectorNormalize(math.sqrt(st.projector.shape[0])))
        else:
            for j, st in enumerate(state.stages, 1):
                layers.append(WaveletLayer(cached_bank((h // 2 ** (j - 1), w // 2 ** (j - 1)), cfg.L)))
                layers.append(self._bn(st, bn_momentum))
                layers.append(Projector(st.projector))
                marks.append(len(layers) - 1)
                if cfg.variant == "concentrated":
                    d, p = st.frame.shape[1], st.frame.shape[0]
                    layers.append(VectorNormalize(math.sqrt(d)))
                    layers.append(FrameThreshold(st.frame, Nonlinearity.for_frame(cfg.nonlinearity, d, p), axis=1))
                    marks.append(len(layers) - 1)
        self.features = Sequential(layers)
        self.marks = marks
        self.head = None
        if state.classifier is not None:
            bn = BatchNorm(state.classifier.shape[1], axis=1, momentum=bn_momentum)
            bn.running_mean, bn.running_var = state.head_mean, state.head_var
            self.head = Sequential([Flatten(), bn, Linear(state.classifier, state.bias)])

    @staticmethod
    def _bn(st, momentum):
        bn = BatchNorm(len(st.bn_mean), axis=1, momentum=momentum)
        bn.running_mean, bn.running_var = st.bn_mean, st.bn_var
        return bn

    @property
    def model(self):
        return Sequential([self.features] + ([self.head] if self.head is not None else []))

    def state(self):
        stages = []
        layers = self.features.layers
        bns = [l for l in layers if isinstance(l, BatchNorm)]
        projs = [l for l in layers if isinstance(l, Projector)]
        frames = [l for l in layers if isinstance(l, FrameThreshold)]
        for j, (bn, pr) in enumerate(zip(bns, projs)):
            fr = frames[j].params["weight"] if frames else None
            stages.append(StageState(pr.params["weight"], bn.running_mean, bn.running_var, fr))
        if not projs:
            n = self.cfg.tree_channels
            stages.append(StageState(None, np.zeros(n), np.ones(n)))
        out = ScatteringState(stages)
        if self.head is not None:
            _, bn, lin = self.head.layers
            out.classifier, out.bias = lin.params["weight"], lin.params["bias"]
            out.head_mean, out.head_var = bn.running_mean, bn.running_var
        return out

    def forward_features(self, x, chunk=256):
        outs = [self.features.forward(x[s:s + chunk]) for s in range(0, len(x), chunk)]
        return np.concatenate(outs)


def _run(cfg, state, x, variant):
    if cfg.variant != variant:
        raise ConfigurationError(f"configuration is for the {cfg.variant} variant, not {variant}")
    _check_images(cfg, x)
    return ScatteringNet(cfg, state).forward_features(np.asarray(x))


def projected_scattering(cfg, state, x):
    """``S_P x``: rectified wavelets, standardization, orthogonal projection per stage."""
    return _run(cfg, state, x, "projected")


def concentrated_scattering(cfg, state, x):
    """``S_C x``: each projected stage followed by normalization and frame thresholding."""
    return _run(cfg, state, x, "concentrated")


def layer_count(cfg):
    return cfg.n_layers


def _layer_stats(maps, batch, channelwise):
    b = LabeledBatch(maps, batch.labels, batch.n_classes)
    b = channel_samples(b) if channelwise else b.flat()
    return compute_stats(b, keep_class_cov=False)


def fisher_per_layer(cfg, state, batch, channelwise=True, chunk=256, return_stats=False):
    """Fisher ratio of the input and after every layer of the network.

    Rows are ``(layer, fisher)``, or ``(layer, fisher, ClassStats)`` with ``return_stats``.
    """
    net = ScatteringNet(cfg, state)
    x = _check_images(cfg, batch.samples)
    collected = [[] for _ in net.marks]
    for s in range(0, len(x), chunk):
        _, outs = net.features.forward_collect(x[s:s + chunk])
        for slot, m in zip(collected, net.marks):
            slot.append(outs[m])
    if cfg.variant == "tree":
        layer_ids = [cfg.J]
    elif cfg.variant == "projected":
        layer_ids = list(range(1, cfg.J + 1))
    else:
        layer_ids = list(range(1, 2 * cfg.J + 1))
    rows = []
    for lid, maps in [(0, [x])] + list(zip(layer_ids, collected)):
        stats = _layer_stats(np.concatenate(maps).astype(np.float64), batch, channelwise)
        rows.append((lid, fisher_ratio(stats), stats) if return_stats else (lid, fisher_ratio(stats)))
    return rows
