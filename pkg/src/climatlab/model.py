"""The three-agent forecasting model.

An imaging encoder (block R) reads patch tokens and emits both a report
sequence and diagnosis logits from mean-pooled features. A context encoder
(block C) condenses clinical-variable tokens into a single context token.
The practitioner encoder (block P) consumes every report row concatenated
channel-wise with the context token, prepends K CLS tokens, and reads one
trajectory head per horizon off the first rows of its output.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import features, nn
from .autodiff import ShapeError, Tensor


@dataclass
class ClimatConfig:
    """Shape/hyperparameter bundle for one model instance."""

    horizons: int = 4                 # T: future time points
    n_classes: list = field(default_factory=lambda: [3, 3, 3, 3, 3])
    cls_tokens: int = None            # K; defaults to horizons + 1
    depth_radiologist: int = 2
    depth_context: int = 2
    depth_practitioner: int = 4
    width_imaging: int = 64           # C_X
    width_clinical: int = 32          # C_M
    heads: int = 4
    head_mode: str = "common"         # "common" | "separate"
    consistency_weight: float = 0.5
    image_size: int = 64
    patch: int = 16
    clinical_dims: list = field(default_factory=lambda: [4, 4, 4, 2, 2, 2])

    def __post_init__(self):
        if self.cls_tokens is None:
            self.cls_tokens = self.horizons + 1
        self.validate()

    def validate(self):
        t1 = self.horizons + 1
        if isinstance(self.n_classes, int):
            self.n_classes = [self.n_classes] * t1
        if len(self.n_classes) != t1:
            raise ShapeError(f"need {t1} per-task class counts, got {len(self.n_classes)}")
        if any(n < 2 for n in self.n_classes):
            raise ShapeError("every task needs at least 2 classes")
        if self.cls_tokens not in (1, t1):
            raise ShapeError(f"cls_tokens must be 1 or {t1}, got {self.cls_tokens}")
        if self.head_mode not in ("common", "separate"):
            raise ShapeError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == "common" and len(set(self.n_classes)) != 1:
            raise ShapeError("common head requires equal class counts across tasks")
        if self.image_size % self.patch:
            raise ShapeError("patch must divide image_size")
        for w, label in ((self.width_imaging, "imaging"),
                         (self.width_clinical, "clinical"),
                         (self.width_imaging + self.width_clinical, "fused")):
            if w % self.heads:
                raise ShapeError(f"{label} width {w} not divisible by {self.heads} heads")
        if not self.clinical_dims:
            raise ShapeError("declare at least one clinical variable (block C input)")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def separate_heads(self) -> bool:
        # a single CLS row cannot specialize per horizon through one shared
        # head, so K=1 always uses per-task heads
        return self.head_mode == "separate" or self.cls_tokens == 1

    def encoder_r(self) -> nn.EncoderConfig:
        return nn.EncoderConfig(self.depth_radiologist, self.width_imaging,
                                self.heads, 1, self.n_patches)

    def encoder_c(self) -> nn.EncoderConfig:
        return nn.EncoderConfig(self.depth_context, self.width_clinical,
                                self.heads, 1, len(self.clinical_dims))

    def encoder_p(self) -> nn.EncoderConfig:
        return nn.EncoderConfig(self.depth_practitioner,
                                self.width_imaging + self.width_clinical,
                                self.heads, self.cls_tokens, self.n_patches + 1)


@dataclass
class ForecastOutput:
    """Forward-pass bundle: diagnosis logits from R, per-horizon trajectory
    logits from P, internal states, and attention caches per block."""

    diag_logits: Tensor
    traj_logits: list
    h_radiologist: Tensor
    h_context: Tensor
    fused_tokens: Tensor
    attention: dict
    consistency_gap: float

    def predictions(self) -> np.ndarray:
        """argmax over each horizon's logits, ties toward the lowest class."""
        return np.stack([f.data.argmax(axis=-1) for f in self.traj_logits], axis=1)


def _head_ffn(x: Tensor, params, prefix) -> Tensor:
    z = ad.layernorm(x, params[f"{prefix}.ln_g"], params[f"{prefix}.ln_b"])
    z = ad.gelu(ad.matmul(z, params[f"{prefix}.fc1_w"]) + params[f"{prefix}.fc1_b"])
    return ad.matmul(z, params[f"{prefix}.fc2_w"]) + params[f"{prefix}.fc2_b"]


def _init_head(params, prefix, width, n_out, rng, dtype):
    params[f"{prefix}.ln_g"] = Tensor(np.ones(width, dtype=dtype), requires_grad=True)
    params[f"{prefix}.ln_b"] = Tensor(np.zeros(width, dtype=dtype), requires_grad=True)
    params[f"{prefix}.fc1_w"] = Tensor(nn.xavier_uniform(rng, width, width, dtype),
                                       requires_grad=True)
    params[f"{prefix}.fc1_b"] = Tensor(np.zeros(width, dtype=dtype), requires_grad=True)
    params[f"{prefix}.fc2_w"] = Tensor(nn.xavier_uniform(rng, width, n_out, dtype),
                                       requires_grad=True)
    params[f"{prefix}.fc2_b"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)


def build_params(cfg: ClimatConfig, seed=0, dtype=np.float64):
    """Initialize the full named parameter table plus the per-task noise
    vector sigma (one entry per horizon incl. baseline, initialized to 1 so
    training starts with all tau_t = 1)."""
    rng = np.random.default_rng(seed)
    params = {}
    p2 = cfg.patch * cfg.patch
    params["embed.img.w"] = Tensor(nn.xavier_uniform(rng, p2, cfg.width_imaging, dtype),
                                   requires_grad=True)
    params["embed.img.b"] = Tensor(np.zeros(cfg.width_imaging, dtype=dtype), requires_grad=True)
    params["embed.img.ln_g"] = Tensor(np.ones(cfg.width_imaging, dtype=dtype), requires_grad=True)
    params["embed.img.ln_b"] = Tensor(np.zeros(cfg.width_imaging, dtype=dtype), requires_grad=True)
    for i, dim in enumerate(cfg.clinical_dims):
        p = f"embed.clin{i}"
        params[f"{p}.w"] = Tensor(nn.xavier_uniform(rng, dim, cfg.width_clinical, dtype),
                                  requires_grad=True)
        params[f"{p}.b"] = Tensor(np.zeros(cfg.width_clinical, dtype=dtype), requires_grad=True)
        params[f"{p}.ln_g"] = Tensor(np.ones(cfg.width_clinical, dtype=dtype), requires_grad=True)
        params[f"{p}.ln_b"] = Tensor(np.zeros(cfg.width_clinical, dtype=dtype), requires_grad=True)

    params.update(nn.init_encoder_params("R", cfg.encoder_r(), rng, dtype))
    _init_head(params, "R.head", cfg.width_imaging, cfg.n_classes[0], rng, dtype)
    params.update(nn.init_encoder_params("C", cfg.encoder_c(), rng, dtype))
    params.update(nn.init_encoder_params("P", cfg.encoder_p(), rng, dtype))
    width_p = cfg.width_imaging + cfg.width_clinical
    if cfg.separate_heads:
        for t in range(cfg.horizons + 1):
            _init_head(params, f"P.head{t}", width_p, cfg.n_classes[t], rng, dtype)
    else:
        _init_head(params, "P.head", width_p, cfg.n_classes[0], rng, dtype)

    sigma = Tensor(np.ones(cfg.horizons + 1, dtype=dtype), requires_grad=True, name="sigma")
    return params, sigma


def embed_image(images: np.ndarray, params, cfg: ClimatConfig) -> Tensor:
    """(batch, h, w) 8-bit pixels -> (batch, n_patches, C_X) imaging tokens."""
    return features.image_extract(images, cfg.patch, params["embed.img.w"],
                                  params["embed.img.b"], params["embed.img.ln_g"],
                                  params["embed.img.ln_b"])


def embed_clinical(clinical: list, params, cfg: ClimatConfig) -> Tensor:
    """Per-variable one-hot arrays [(batch, d_i)] -> (batch, M, C_M) tokens."""
    if len(clinical) != len(cfg.clinical_dims):
        raise ShapeError(
            f"expected {len(cfg.clinical_dims)} clinical variables, got {len(clinical)}"
        )
    tokens = []
    for i, vec in enumerate(clinical):
        p = f"embed.clin{i}"
        tok = features.ffn_extract(ad.as_tensor(vec), params[f"{p}.w"], params[f"{p}.b"],
                                   params[f"{p}.ln_g"], params[f"{p}.ln_b"])
        tokens.append(tok[:, None, :])
    return ad.concat(tokens, axis=1)


def radiologist_forward(img_tokens: Tensor, params, cfg: ClimatConfig, cache=None):
    """Block R: encode N imaging tokens with one CLS; diagnosis logits come
    from an FFN over the mean of all N+1 output rows (CLS included)."""
    if img_tokens.data.shape[-1] != cfg.width_imaging:
        raise ShapeError(f"imaging tokens must have width {cfg.width_imaging}")
    h_r = nn.encoder_forward(img_tokens, params, cfg.encoder_r(), "R", cache=cache)
    pooled = h_r.mean(axis=-2)
    diag = _head_ffn_radiologist(pooled, params)
    return h_r, diag


def _head_ffn_radiologist(pooled: Tensor, params) -> Tensor:
    # linear -> GELU -> LN -> linear diagnosis head
    z = ad.gelu(ad.matmul(pooled, params["R.head.fc1_w"]) + params["R.head.fc1_b"])
    z = ad.layernorm(z, params["R.head.ln_g"], params["R.head.ln_b"])
    return ad.matmul(z, params["R.head.fc2_w"]) + params["R.head.fc2_b"]


def context_forward(clin_tokens: Tensor, params, cfg: ClimatConfig, cache=None) -> Tensor:
    """Block C: encode M clinical tokens with one CLS; return the first row
    of the final layer as the common context token, shape (batch, 1, C_M)."""
    if clin_tokens.data.shape[-2] == 0:
        raise ShapeError("block C needs at least one clinical token")
    if clin_tokens.data.shape[-1] != cfg.width_clinical:
        raise ShapeError(f"clinical tokens must have width {cfg.width_clinical}")
    h_c = nn.encoder_forward(clin_tokens, params, cfg.encoder_c(), "C", cache=cache)
    return h_c[..., 0:1, :]


def practitioner_forward(h_r: Tensor, h_c0: Tensor, params, cfg: ClimatConfig, cache=None):
    """Block P: channel-wise fusion of every report row with the context
    token, K CLS tokens, encoder, then per-horizon heads on the first rows.

    Returns (traj_logits, fused_tokens)."""
    if cfg.cls_tokens not in (1, cfg.horizons + 1):
        raise ShapeError("cls_tokens must be 1 or horizons+1")
    batch, rows = h_r.data.shape[0], h_r.data.shape[1]
    tiled = h_c0 + Tensor(np.zeros((batch, rows, h_c0.data.shape[-1]), dtype=h_c0.data.dtype))
    fused = ad.concat([h_r, tiled], axis=-1)
    h_p = nn.encoder_forward(fused, params, cfg.encoder_p(), "P", cache=cache)
    logits = []
    for t in range(cfg.horizons + 1):
        row = h_p[:, min(t, cfg.cls_tokens - 1), :]
        head = f"P.head{t}" if cfg.separate_heads else "P.head"
        logits.append(_head_ffn(row, params, head))
    return logits, fused


def climat_forward(images: np.ndarray, clinical: list, params, cfg: ClimatConfig,
                   want_attention: bool = False) -> ForecastOutput:
    """Deterministic composition of the three blocks over one batch."""
    caches = {"R": {}, "C": {}, "P": {}} if want_attention else {"R": None, "C": None, "P": None}
    img_tokens = embed_image(images, params, cfg)
    h_r, diag = radiologist_forward(img_tokens, params, cfg, cache=caches["R"])
    clin_tokens = embed_clinical(clinical, params, cfg)
    h_c0 = context_forward(clin_tokens, params, cfg, cache=caches["C"])
    traj, fused = practitioner_forward(h_r, h_c0, params, cfg, cache=caches["P"])
    gap = float(np.abs(diag.data - traj[0].data).sum(axis=-1).mean())
    return ForecastOutput(
        diag_logits=diag,
        traj_logits=traj,
        h_radiologist=h_r,
        h_context=h_c0,
        fused_tokens=fused,
        attention=caches if want_attention else {},
        consistency_gap=gap,
    )
