"""Action decoding: latent-query cross-attention over occupied-cell tokens
plus a hashed language token, followed by per-head linear classifiers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..core.actions import ArmAction, NUM_ROT_BINS, NUM_TRANS_BINS
from .encoder import VolumetricFeature
from .params import ModelParams
from .regressor import occupied_cells

NULL_INSTRUCTION_SEED = 0x6E756C6C  # reserved embedding for empty instructions


@dataclass
class ArmHeadLogits:
    trans: ad.Tensor    # (3, 100)
    rot: ad.Tensor      # (3, 72)
    open: ad.Tensor     # (1, 2)
    collide: ad.Tensor  # (1, 2)

    def argmax_action(self) -> ArmAction:
        return ArmAction(
            trans_bin=tuple(int(i) for i in np.argmax(self.trans.data, axis=1)),
            rot_bins=tuple(int(i) for i in np.argmax(self.rot.data, axis=1)),
            open=int(np.argmax(self.open.data[0])),
            collide=int(np.argmax(self.collide.data[0])),
        )


@dataclass
class PolicyLogits:
    left: ArmHeadLogits
    right: ArmHeadLogits


def language_embedding(language: str, width: int) -> np.ndarray:
    """Deterministic pseudo-random embedding from an instruction hash."""
    if language:
        digest = hashlib.sha256(language.encode()).digest()
        seed = int.from_bytes(digest[:8], "little")
    else:
        seed = NULL_INSTRUCTION_SEED
    rng = np.random.default_rng(seed)
    return rng.standard_normal(width) / np.sqrt(width)


def _attend(latents: ad.Tensor, tokens: ad.Tensor, layer: int,
            params: ModelParams) -> ad.Tensor:
    p = f"policy.l{layer}"
    d = params.config.policy_dim
    ln = ad.layer_norm(latents, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    q = ad.matmul(ln, params[f"{p}.q"])
    k = ad.matmul(tokens, params[f"{p}.k"])
    v = ad.matmul(tokens, params[f"{p}.v"])
    scores = ad.scale(ad.matmul(q, k, transpose_b=True), 1.0 / np.sqrt(d))
    attended = ad.matmul(ad.softmax(scores), v)
    latents = ad.add(latents, ad.matmul(attended, params[f"{p}.o"]))
    ln2 = ad.layer_norm(latents, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    h = ad.relu(ad.add_rowvec(ad.matmul(ln2, params[f"{p}.mlp.w1"]), params[f"{p}.mlp.b1"]))
    return ad.add(latents, ad.add_rowvec(ad.matmul(h, params[f"{p}.mlp.w2"]),
                                         params[f"{p}.mlp.b2"]))


def decode_actions(v: VolumetricFeature, language: str,
                   params: ModelParams) -> PolicyLogits:
    """Predict discretized-action logits for both arms."""
    config = params.config
    g = config.grid_size
    occ = occupied_cells(v)
    flat = ad.reshape(v.grid, (g * g * g, config.feature_width))
    if occ.size > 0:
        feats = ad.gather_rows(flat, occ)
        centers = v.cell_centers(occ)
        lo, hi = v.workspace_bounds
        norm_centers = (centers - (lo + hi) / 2.0) / ((hi - lo) / 2.0)
        cell_tokens = ad.concat([feats, ad.constant(norm_centers)], axis=1)
        lang_row = ad.constant(language_embedding(language, config.token_width)[None, :])
        tokens = ad.concat([cell_tokens, lang_row], axis=0)
    else:
        tokens = ad.constant(language_embedding(language, config.token_width)[None, :])

    latents = params["policy.latents"]
    for layer in range(config.policy_layers):
        latents = _attend(latents, tokens, layer, params)
    flat_latents = ad.reshape(latents, (1, config.policy_latents * config.policy_dim))

    def head(arm, name, rows, cols):
        logits = ad.add_rowvec(ad.matmul(flat_latents, params[f"policy.{arm}.{name}.w"]),
                               params[f"policy.{arm}.{name}.b"])
        return ad.reshape(logits, (rows, cols))

    arms = {}
    for arm in ("left", "right"):
        arms[arm] = ArmHeadLogits(
            trans=head(arm, "trans", 3, NUM_TRANS_BINS),
            rot=head(arm, "rot", 3, NUM_ROT_BINS),
            open=head(arm, "open", 1, 2),
            collide=head(arm, "collide", 1, 2),
        )
    return PolicyLogits(left=arms["left"], right=arms["right"])
