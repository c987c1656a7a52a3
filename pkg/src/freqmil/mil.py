"""Attention-based MIL backbone and frequency/spatial fusion.

Patch bags come from a frozen, seeded random projection plus ReLU standing in
for a pretrained encoder. Gated attention scores each instance with
w^T (tanh(V h) * sigmoid(U h)); the scores are always computed from
pre-fusion features, so addition fusion leaves the attention weights exactly
unchanged while shifting every patch feature by the same global vector.

Fusion strategies: addition, element-wise multiplication, concatenation with
a projection back to width D, and cross-attention where the global feature
queries the patches and two learnable scalar gates mix the frequency-guided
logits with the instance logits before one softmax.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, constant, mul, sigmoid, softmax, tanh
from .fftblock import (
    FFTBlockConfig,
    build_design_variant,
    uses_complex_input,
)
from .nn import ComplexTensor, Linear, Module, Parameter
from .spectral import SpatialImage, preprocess_complex, preprocess_image

ENCODER_SEED = 90717
FUSION_MODES = ("addition", "multiplication", "concat_project", "cross_attention")


@dataclass
class PatchBag:
    """N x D instance features for one slide with its slide-level label."""

    features: np.ndarray
    patch_size: int
    label: int = -1
    slide_id: str = ""

    @property
    def n_patches(self) -> int:
        return self.features.shape[0]


@dataclass
class AttentionState:
    """Instance logits and their softmax weights (a simplex over patches)."""

    logits: np.ndarray
    weights: np.ndarray


_encoder_cache: dict = {}


def _encoder_matrix(flat_dim: int, embed_dim: int, seed: int) -> np.ndarray:
    key = (flat_dim, embed_dim, seed)
    if key not in _encoder_cache:
        rng = np.random.default_rng(seed)
        _encoder_cache[key] = rng.standard_normal((flat_dim, embed_dim)) * np.sqrt(
            2.0 / flat_dim
        )
    return _encoder_cache[key]


def encode_patches(
    img: SpatialImage,
    patch: int,
    embed_dim: int = 512,
    seed: int = ENCODER_SEED,
    label: int = -1,
    slide_id: str = "",
) -> PatchBag:
    """Embed non-overlapping patches through a frozen seeded projection + ReLU."""
    if patch <= 0:
        raise ValueError(f"patch size must be positive, got {patch}")
    c, h, w = img.data.shape
    ph = (-h) % patch
    pw = (-w) % patch
    data = img.data
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, ph), (0, pw)))
    rows, cols = data.shape[1] // patch, data.shape[2] // patch
    blocks = (
        data.reshape(c, rows, patch, cols, patch)
        .transpose(1, 3, 0, 2, 4)
        .reshape(rows * cols, c * patch * patch)
    )
    weight = _encoder_matrix(c * patch * patch, embed_dim, seed)
    feats = np.maximum(blocks @ weight, 0.0)
    return PatchBag(feats, patch, label=label, slide_id=slide_id)


class GatedAttentionPool(Module):
    """Gated attention scoring and softmax pooling over a bag."""

    def __init__(self, feature_dim: int, hidden_dim: int, rng):
        scale = np.sqrt(1.0 / feature_dim)
        self.v = Parameter(rng.standard_normal((feature_dim, hidden_dim)) * scale)
        self.u = Parameter(rng.standard_normal((feature_dim, hidden_dim)) * scale)
        self.w = Parameter(rng.standard_normal((hidden_dim, 1)) * np.sqrt(1.0 / hidden_dim))

    def logits(self, h: Tensor) -> Tensor:
        gate = mul(tanh(h @ self.v), sigmoid(h @ self.u))
        return gate @ self.w  # (N, 1)

    def __call__(self, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        a = self.logits(h)
        weights = softmax(a, axis=0)
        pooled = weights.t() @ h  # (1, D)
        return a, weights, pooled


def attention_pool(bag: PatchBag, attn: GatedAttentionPool) -> tuple[AttentionState, np.ndarray]:
    """Score and pool one bag; returns the attention state and the pooled vector."""
    h = Tensor(np.asarray(bag.features, dtype=np.float64))
    logits, weights, pooled = attn(h)
    state = AttentionState(logits.data.ravel().copy(), weights.data.ravel().copy())
    return state, pooled.data.ravel().copy()


class FusionModule(Module):
    """Parameters for one fusion strategy.

    The concat projection starts as [identity; zeros] so the fused feature
    equals the spatial half at initialization. Cross-attention gates start at
    (1, 0): the fused attention equals the instance attention until g2 moves.
    """

    def __init__(self, mode: str, feature_dim: int, rng):
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.mode = mode
        if mode == "concat_project":
            init = np.concatenate(
                [np.eye(feature_dim), np.zeros((feature_dim, feature_dim))], axis=0
            )
            self.proj_weight = Parameter(init)
            self.proj_bias = Parameter(np.zeros((1, feature_dim)))
        elif mode == "cross_attention":
            self.gate_instance = Parameter(np.ones((1, 1)))
            self.gate_frequency = Parameter(np.zeros((1, 1)))


def fuse(
    h: Tensor,
    global_feature: Tensor,
    attn_logits: Tensor,
    attn_weights: Tensor,
    fusion: FusionModule,
) -> Tensor:
    """Combine the bag (N, D) with the global feature (1, D) into a pooled (1, D).

    Addition, multiplication and concat pool with the pre-fusion attention
    weights, so the instance weighting is untouched. Cross-attention mixes
    frequency-guided logits (O . h_i / sqrt(D)) into the instance logits via
    the learnable gates, pools with the fused softmax, and injects the pooled
    shift back into every patch feature before the final pre-fusion pooling.
    """
    n, d = h.data.shape
    if global_feature.data.shape != (1, d):
        raise ValueError(
            f"global feature width {global_feature.data.shape} does not match "
            f"bag width {d}"
        )
    if fusion.mode == "addition":
        return attn_weights.t() @ (h + global_feature)
    if fusion.mode == "multiplication":
        return attn_weights.t() @ mul(h, global_feature)
    if fusion.mode == "concat_project":
        tiled = mul(constant(np.ones((n, 1))), global_feature)
        fused = concat([h, tiled], axis=1) @ fusion.proj_weight + fusion.proj_bias
        return attn_weights.t() @ fused
    # cross_attention
    freq_logits = mul(h @ global_feature.t(), constant(1.0 / np.sqrt(d)))
    fused_logits = mul(attn_logits, fusion.gate_instance) + mul(
        freq_logits, fusion.gate_frequency
    )
    fused_weights = softmax(fused_logits, axis=0)
    pooled_fused = fused_weights.t() @ h
    pooled_pre = attn_weights.t() @ h
    residual = h + (pooled_fused - pooled_pre)
    return attn_weights.t() @ residual


class MilModel(Module):
    """End-to-end model: spatial branch, frequency branch, or their fusion.

    branch 'spatial' is the plain attention-MIL baseline; 'frequency' routes
    the global feature straight into its own classifier head and ignores the
    bag; 'both' fuses the global feature with the patch features before
    pooling and classification.
    """

    def __init__(
        self,
        branch: str,
        n_classes: int,
        rng,
        block_cfg: FFTBlockConfig | None = None,
        fusion_mode: str = "addition",
        feature_dim: int = 512,
        attn_hidden: int = 128,
    ):
        if branch not in ("spatial", "frequency", "both"):
            raise ValueError(f"unknown branch mode {branch!r}")
        self.branch = branch
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        if branch != "spatial":
            if block_cfg is None:
                raise ValueError("frequency branches need a block configuration")
            block_cfg.output_dim = feature_dim
            self.block = build_design_variant(block_cfg.design, block_cfg, rng)
        if branch != "frequency":
            self.attention = GatedAttentionPool(feature_dim, attn_hidden, rng)
            if branch == "both":
                self.fusion = FusionModule(fusion_mode, feature_dim, rng)
        self.classifier = Linear(feature_dim, n_classes, rng)

    def block_input(self, freq_data) -> Tensor | ComplexTensor:
        if uses_complex_input(self.block.cfg.design):
            return ComplexTensor.from_complex(np.asarray(freq_data)[None, :, :, :])
        return Tensor(np.asarray(freq_data, dtype=np.float64)[None, :, :, :])

    def forward(self, bag_features=None, freq_data=None, training: bool = True) -> Tensor:
        if self.branch == "frequency":
            o = self.block.forward(self.block_input(freq_data), training)
            return self.classifier(o)
        h = Tensor(np.asarray(bag_features, dtype=np.float64))
        logits, weights, pooled = self.attention(h)
        if self.branch == "spatial" or freq_data is None:
            # a fused model with no frequency input degrades to the baseline path
            return self.classifier(pooled)
        o = self.block.forward(self.block_input(freq_data), training)
        fused = fuse(h, o, logits, weights, self.fusion)
        return self.classifier(fused)

    def attention_state(self, bag_features) -> AttentionState:
        h = Tensor(np.asarray(bag_features, dtype=np.float64))
        logits, weights, _ = self.attention(h)
        return AttentionState(logits.data.ravel().copy(), weights.data.ravel().copy())


def classify(pooled: Tensor, head: Linear) -> Tensor:
    """Single linear head mapping a pooled D-vector to K logits."""
    return head(pooled)


@dataclass
class PreprocessSettings:
    """How a model's frequency input is derived from a raster."""

    crop: int = 64
    transform: str = "fft"
    downsample: int = 1
    spectra: str = "both"
    region: str = "low"


def frequency_input_for(img: SpatialImage, design: str, pp: PreprocessSettings):
    """Raster -> block input honoring the design family's input domain."""
    if uses_complex_input(design):
        return preprocess_complex(img, pp.crop, pp.downsample).data
    return preprocess_image(
        img,
        pp.crop,
        transform=pp.transform,
        downsample_factor=pp.downsample,
        spectra=pp.spectra,
        region=pp.region,
    ).data


def mil_forward(
    img: SpatialImage,
    bag: PatchBag,
    model: MilModel,
    use_frequency: bool,
    pp: PreprocessSettings | None = None,
) -> np.ndarray:
    """Convenience inference pass returning raw logits as a numpy row."""
    pp = pp or PreprocessSettings()
    freq = None
    if use_frequency or model.branch == "frequency":
        freq = frequency_input_for(img, model.block.cfg.design, pp)
    bag_features = None if model.branch == "frequency" else bag.features
    out = model.forward(bag_features, freq, training=False)
    return out.data.copy()
