"""Model configuration, parameter initialization, and checkpoint manifests."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .. import autodiff as ad
from ..core.actions import NUM_ROT_BINS, NUM_TRANS_BINS
from ..errors import ManifestMismatchError

GAUSSIAN_HEAD_WIDTH = 17  # offset 3 + color 3 + rot 4 + scale 3 + opacity 1 + logits 3
DEFORM_OUT_WIDTH = 7      # position delta 3 + rotation delta 4
ACTION_FEATURE_WIDTH = 8


@dataclass(frozen=True)
class ModelConfig:
    grid_size: int = 20
    feature_width: int = 32        # volumetric feature channels
    conv_hidden: int = 8          # channels between the two conv layers
    regressor_hidden: int = 64
    deform_hidden: int = 64        # two hidden layers of this width
    policy_latents: int = 8
    policy_dim: int = 64
    policy_layers: int = 2
    scale_floor: float = 1e-3      # meters, added to the softplus scale head
    rot_update: str = "additive"   # "additive" or "compose"
    workspace_lo: tuple = (-1.0, -1.0, -1.0)
    workspace_hi: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.rot_update not in ("additive", "compose"):
            raise ValueError(f"rot_update must be 'additive' or 'compose', got {self.rot_update}")

    @property
    def workspace_bounds(self) -> np.ndarray:
        return np.array([self.workspace_lo, self.workspace_hi], dtype=np.float64)

    @property
    def cell_size(self) -> np.ndarray:
        lo, hi = self.workspace_bounds
        return (hi - lo) / self.grid_size

    @property
    def token_width(self) -> int:
        return self.feature_width + 3  # features plus normalized cell coordinates

    def manifest(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(float(x)) for x in v)
            out[f"model.{f.name}"] = v
        return out

    @classmethod
    def from_manifest(cls, meta: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            raw = meta[f"model.{f.name}"]
            if f.name in ("workspace_lo", "workspace_hi"):
                kwargs[f.name] = tuple(float(x) for x in raw.split())
            elif f.type == "int" or isinstance(f.default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(f.default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _xavier(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


class ModelParams:
    """Named parameter tensors for the encoder, regressor, deformation models,
    and policy head."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: ad.param(v.data.copy()) for k, v in self.tensors.items()})

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        g = config
        t: dict[str, ad.Tensor] = {}

        def add(name, arr):
            t[name] = ad.param(arr)

        c_in = 4  # pooled rgb mean + occupancy count
        add("conv1.w", _he(rng, 27 * c_in, (27 * c_in, g.conv_hidden)))
        add("conv1.b", np.zeros(g.conv_hidden))
        c_mid = g.conv_hidden + 3  # proprioception channels appended
        add("conv2.w", _he(rng, 27 * c_mid, (27 * c_mid, g.feature_width)))
        add("conv2.b", np.zeros(g.feature_width))

        add("reg.w1", _he(rng, g.feature_width, (g.feature_width, g.regressor_hidden)))
        add("reg.b1", np.zeros(g.regressor_hidden))
        add("reg.w2", _he(rng, g.regressor_hidden, (g.regressor_hidden, GAUSSIAN_HEAD_WIDTH)) * 0.1)
        add("reg.b2", np.zeros(GAUSSIAN_HEAD_WIDTH))

        # deformation heads: final layers start at zero so dynamics begin as identity
        d_lead = 3 + 4 + 3 + ACTION_FEATURE_WIDTH + g.feature_width
        d_foll = d_lead + ACTION_FEATURE_WIDTH
        for prefix, d_in in (("leader", d_lead), ("follower", d_foll)):
            add(f"{prefix}.w1", _he(rng, d_in, (d_in, g.deform_hidden)))
            add(f"{prefix}.b1", np.zeros(g.deform_hidden))
            add(f"{prefix}.w2", _he(rng, g.deform_hidden, (g.deform_hidden, g.deform_hidden)))
            add(f"{prefix}.b2", np.zeros(g.deform_hidden))
            add(f"{prefix}.w3", np.zeros((g.deform_hidden, DEFORM_OUT_WIDTH)))
            add(f"{prefix}.b3", np.zeros(DEFORM_OUT_WIDTH))

        tok = g.token_width
        d = g.policy_dim
        add("policy.latents", rng.standard_normal((g.policy_latents, d)) * 0.5)
        for layer in range(g.policy_layers):
            p = f"policy.l{layer}"
            add(f"{p}.q", _xavier(rng, d, d))
            add(f"{p}.k", _xavier(rng, tok, d))
            add(f"{p}.v", _xavier(rng, tok, d))
            add(f"{p}.o", _xavier(rng, d, d))
            add(f"{p}.ln1.g", np.ones(d))
            add(f"{p}.ln1.b", np.zeros(d))
            add(f"{p}.ln2.g", np.ones(d))
            add(f"{p}.ln2.b", np.zeros(d))
            add(f"{p}.mlp.w1", _he(rng, d, (d, 2 * d)))
            add(f"{p}.mlp.b1", np.zeros(2 * d))
            add(f"{p}.mlp.w2", _he(rng, 2 * d, (2 * d, d)))
            add(f"{p}.mlp.b2", np.zeros(d))
        flat = g.policy_latents * d
        head_sizes = {"trans": 3 * NUM_TRANS_BINS, "rot": 3 * NUM_ROT_BINS,
                      "open": 2, "collide": 2}
        for arm in ("left", "right"):
            for head, size in head_sizes.items():
                add(f"policy.{arm}.{head}.w", _xavier(rng, flat, size))
                add(f"policy.{arm}.{head}.b", np.zeros(size))
        return cls(config, t)

    # -- checkpointing ------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None, extra_tensors: dict | None = None):
        meta = self.config.manifest()
        if extra_meta:
            meta.update(extra_meta)
        tensors = dict(self.tensors)
        if extra_tensors:
            tensors.update(extra_tensors)
        ad.save_archive(path, tensors, meta)

    @classmethod
    def load(cls, path, expect_config: ModelConfig | None = None):
        """Returns (params, extra_tensors, meta). Rejects mismatched manifests."""
        arrays, meta = ad.load_archive(path)
        config = ModelConfig.from_manifest(meta)
        if expect_config is not None and config != expect_config:
            raise ManifestMismatchError(
                f"checkpoint manifest {config} does not match expected {expect_config}")
        template = cls.init(config, np.random.default_rng(0))
        tensors = {}
        extra = {}
        for name, arr in arrays.items():
            if name in template.tensors:
                if arr.shape != template.tensors[name].data.shape:
                    raise ManifestMismatchError(
                        f"tensor {name} has shape {arr.shape}, "
                        f"manifest implies {template.tensors[name].data.shape}")
                tensors[name] = ad.param(arr.copy())
            else:
                extra[name] = arr
        missing = set(template.tensors) - set(tensors)
        if missing:
            raise ManifestMismatchError(f"checkpoint missing tensors: {sorted(missing)}")
        return cls(config, tensors), extra, meta
