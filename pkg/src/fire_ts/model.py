"""Frequency-domain forecaster with disentangled amplitude/phase drift and
causal basis re-weighting.

Shapes (per batch element):

    x            [L]                 lookback window
    patches      [N_p, L_p]          overlapping patches of the normalized window
    spectra      [N_p, F_p]          one-sided patch spectra, F_p = L_p // 2 + 1
    H_i, H_P     [N_p, D]            complex features
    A, phi       [N_p, D]            amplitude / phase of H_P
    A_hat, phi_hat                   after the drift linears
    B            [N_p, D]            recomposed bases
    W (attn)     [N_p, N_p]          causal attention
    U, V         [N_p, D]
    H_o          [N_p, D]            U * B
    y_hat        [L_pred]

All operations carry a leading batch axis.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import core as F
from .core import CTensor, Tensor
from .data import Window, instance_stats, n_patches, normalize, patch
from .spectral import irfft, rfft_array

VARIANTS = ("full", "advanced", "base")
DRIFT_AXES = ("patch", "feature")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    patch_len: int = 16
    stride: int | None = None  # defaults to patch_len // 2
    embed_dim: int = 32
    attn_dim: int = 16
    variant: str = "full"
    drift_axis: str = "patch"
    depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.stride is None:
            self.stride = max(self.patch_len // 2, 1)
        if self.embed_dim < 1 or self.attn_dim < 1:
            raise ValueError("embed_dim and attn_dim must be >= 1")
        if self.patch_len > self.lookback:
            raise ValueError(
                f"patch_len {self.patch_len} exceeds lookback {self.lookback}"
            )
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.drift_axis not in DRIFT_AXES:
            raise ValueError(f"drift_axis must be one of {DRIFT_AXES}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def n_patches(self) -> int:
        return n_patches(self.lookback, self.patch_len, self.stride)

    @property
    def patch_bins(self) -> int:
        return self.patch_len // 2 + 1

    @property
    def out_bins(self) -> int:
        return self.horizon // 2 + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class BlockParams:
    W_C: CTensor
    b_C: CTensor
    W_amp: Tensor
    b_amp: Tensor
    W_phi: Tensor
    b_phi: Tensor
    W_Q: Tensor
    W_K: Tensor
    W_p: Tensor
    b_p: Tensor


@dataclass
class ModelParams:
    W_embed: CTensor
    W_proj: CTensor
    blocks: list[BlockParams] = field(default_factory=list)

    def named(self) -> dict[str, Tensor]:
        out = {"W_embed": self.W_embed}
        for i, blk in enumerate(self.blocks):
            for f in fields(blk):
                out[f"blocks.{i}.{f.name}"] = getattr(blk, f.name)
        out["W_proj"] = self.W_proj
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, Tensor]) -> "ModelParams":
        depth = 1 + max(
            (int(k.split(".")[1]) for k in tensors if k.startswith("blocks.")), default=-1
        )
        blocks = [
            BlockParams(**{f.name: tensors[f"blocks.{i}.{f.name}"] for f in fields(BlockParams)})
            for i in range(depth)
        ]
        return cls(tensors["W_embed"], tensors["W_proj"], blocks)

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(
            {k: type(t)(t.data.copy(), requires_grad=t.requires_grad, name=k)
             for k, t in self.named().items()}
        )

    def n_scalars(self) -> int:
        return sum(t.size * (2 if t.is_complex else 1) for t in self.named().values())


def _uniform(rng, shape, fan_in):
    g = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-g, g, size=shape)


def _complex_uniform(rng, shape, fan_in):
    g = 1.0 / np.sqrt(2.0 * fan_in)
    return rng.uniform(-g, g, size=shape) + 1j * rng.uniform(-g, g, size=shape)


def init_params(config: ModelConfig) -> ModelParams:
    """Scaled-uniform init, deterministic in ``config.seed``; biases start at 0."""
    rng = np.random.default_rng(config.seed)
    D, d, Np = config.embed_dim, config.attn_dim, config.n_patches
    mix = Np if config.drift_axis == "patch" else D

    def real(shape, fan_in, name):
        return Tensor(_uniform(rng, shape, fan_in), requires_grad=True, name=name)

    def cplx(shape, fan_in, name):
        return CTensor(_complex_uniform(rng, shape, fan_in), requires_grad=True, name=name)

    def zeros(shape, name, complex_=False):
        cls = CTensor if complex_ else Tensor
        return cls(np.zeros(shape), requires_grad=True, name=name)

    W_embed = cplx((config.patch_bins, D), config.patch_bins, "W_embed")
    blocks = []
    for i in range(config.depth):
        p = f"blocks.{i}."
        blocks.append(BlockParams(
            W_C=cplx((D, D), D, p + "W_C"),
            b_C=zeros((D,), p + "b_C", complex_=True),
            W_amp=real((mix, mix), mix, p + "W_amp"),
            b_amp=zeros((mix,), p + "b_amp"),
            W_phi=real((mix, mix), mix, p + "W_phi"),
            b_phi=zeros((mix,), p + "b_phi"),
            W_Q=real((D, d), D, p + "W_Q"),
            W_K=real((D, d), D, p + "W_K"),
            W_p=real((D, D), D, p + "W_p"),
            b_p=zeros((D,), p + "b_p"),
        ))
    W_proj = cplx((Np * D, config.out_bins), Np * D, "W_proj")
    return ModelParams(W_embed, W_proj, blocks)


# ---------------------------------------------------------------------------
# forward pieces

def patch_spectra(x_norm: np.ndarray, config: ModelConfig) -> CTensor:
    """Constant (non-learnable) one-sided spectra of every patch."""
    ps = patch(x_norm, config.patch_len, config.stride)
    return CTensor(rfft_array(ps.patches))


def embed(patches, params: ModelParams) -> CTensor:
    """``H_i = spectra @ W_embed``; accepts a PatchSet or precomputed spectra."""
    if hasattr(patches, "patches"):
        spectra = CTensor(rfft_array(patches.patches))
    else:
        spectra = patches
    return spectra @ params.W_embed


def causal_mask(n: int) -> np.ndarray:
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


def _drift_linear(x: Tensor, W: Tensor, b: Tensor, axis: str) -> Tensor:
    if axis == "patch":
        # mix along N_p; bias per patch, broadcast over D
        return W @ x + F.reshape(b, (-1, 1))
    return x @ W.T + b


def basis_evolution(A_hat: Tensor, B: CTensor, block: BlockParams):
    """Causal attention over patches, built from the drifted amplitudes.

    Returns ``(H_o, attention, U)`` with ``H_o = U * B``; row ``p`` depends
    on ``A_hat`` rows ``<= p`` and on ``B`` row ``p`` only.
    """
    d = block.W_Q.shape[1]
    Q = A_hat @ block.W_Q
    K = A_hat @ block.W_K
    scores = F.scale(Q @ K.T, 1.0 / np.sqrt(d)) + causal_mask(A_hat.shape[-2])
    attn = F.softmax_rows(scores)
    V = A_hat @ block.W_p.T + block.b_p
    U = attn @ V
    return U * B, attn, U


def backbone(H_i: CTensor, block: BlockParams, variant: str = "full",
             drift_axis: str = "patch", trace: dict | None = None) -> CTensor:
    H_P = H_i @ block.W_C + block.b_C
    A, phi = F.polar_decompose(H_P)
    A_hat = _drift_linear(A, block.W_amp, block.b_amp, drift_axis)
    if variant == "base":
        phi_hat = phi
    else:
        phi_hat = _drift_linear(phi, block.W_phi, block.b_phi, drift_axis)
    B = F.polar_recompose(A_hat, phi_hat)
    attn = U = None
    if variant == "full":
        H_o, attn, U = basis_evolution(A_hat, B, block)
    else:
        H_o = B
    if trace is not None:
        trace.update(H_P=H_P, amp=A, phase=phi, amp_hat=A_hat, phase_hat=phi_hat,
                     basis=B, attention=attn, U=U, H_o=H_o)
    return H_o


def project(H_o: CTensor, params: ModelParams, norm_stats, horizon: int) -> Tensor:
    """Flatten, project to ``horizon // 2 + 1`` bins, inverse DFT, denormalize."""
    lead = H_o.shape[:-2]
    flat = F.reshape(H_o, lead + (1, H_o.shape[-2] * H_o.shape[-1]))
    bins = F.reshape(flat @ params.W_proj, lead + (params.W_proj.shape[1],))
    y = irfft(bins, horizon)
    if norm_stats is None:
        return y
    mu, sd = norm_stats
    return y * Tensor(sd) + Tensor(mu)


def forward(window, params: ModelParams, config: ModelConfig,
            trace: dict | None = None) -> Tensor:
    """Forecast from a :class:`Window` or an array of lookbacks ``[..., L]``.

    Returns a tensor of shape ``[..., L_pred]`` on the input's scale.
    """
    x = window.x[:, 0] if isinstance(window, Window) else np.asarray(window, dtype=np.float64)
    if x.shape[-1] != config.lookback:
        raise ValueError(f"expected lookback {config.lookback}, got {x.shape[-1]}")
    stats = instance_stats(x)
    spectra = patch_spectra(normalize(x, stats), config)
    H = embed(spectra, params)
    for i, blk in enumerate(params.blocks):
        sub = {} if trace is not None else None
        H = backbone(H, blk, config.variant, config.drift_axis, sub)
        if trace is not None:
            trace.update(sub)
            trace.setdefault("blocks", []).append(sub)
    return project(H, params, stats, config.horizon)


def predict(x: np.ndarray, params: ModelParams, config: ModelConfig) -> np.ndarray:
    return forward(x, params, config).data


# ---------------------------------------------------------------------------
# checkpoints

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def save_checkpoint(path, config: ModelConfig, params: ModelParams, extra: dict | None = None) -> None:
    named = params.named()
    meta = {
        "format": "fire-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "tensors": {k: {"shape": list(t.shape), "complex": t.is_complex} for k, t in named.items()},
        "extra": extra or {},
    }
    arrays = {k: t.data for k, t in named.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != "fire-checkpoint":
            raise ValueError(f"{path} is not a checkpoint file")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        tensors = {}
        for name, info in meta["tensors"].items():
            arr = z[name]
            if list(arr.shape) != info["shape"]:
                raise ValueError(f"{name}: stored shape {arr.shape} != {info['shape']}")
            cls = CTensor if info["complex"] else Tensor
            tensors[name] = cls(arr, requires_grad=True, name=name)
    return ModelConfig.from_dict(meta["config"]), ModelParams.from_named(tensors), meta
