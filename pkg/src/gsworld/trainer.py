"""Training loop, optimizers, evaluation metrics, and checkpointing.

Runs are bitwise reproducible in single-worker mode: every step draws its
randomness from a generator seeded by (seed, step), so interrupting at a
checkpoint and resuming replays the identical step sequence. The metrics
log carries only deterministic columns; wall-clock progress goes to stderr.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .core.actions import NUM_ROT_BINS, NUM_TRANS_BINS
from .core.io import load_dataset, read_keyvalues, write_keyvalues
from .core.observations import IGNORE_LABEL
from .errors import EmptySceneError, ManifestMismatchError, TrainingDivergedError
from .losses import LossWeights, loss_bc, loss_pred, loss_recon, loss_task, loss_total
from .models import ModelConfig, ModelParams, decode_actions, pool_observation
from .world_model import predict_step

METRICS_COLUMNS = ("step", "loss_bc", "loss_recon", "loss_task", "loss_pred", "loss_total")
ZERO_DELTAS = (np.zeros(3), np.zeros(4))


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = ""
    out_dir: str = ""
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "adam"          # "adam" or "sgd"
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    eval_cadence: int = 0            # 0 disables periodic evaluation
    checkpoint_cadence: int = 0      # 0 keeps only the initial/final checkpoints
    image_size: int = 64             # provenance; checked against the dataset
    camera_count: int = 3
    freeze_deform: bool = False      # zero-freeze both deformation heads (ablation)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 0 or self.batch_size <= 0:
            raise ValueError("steps must be >= 0 and batch_size positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def manifest(self) -> dict:
        out = dict(self.model.manifest())
        out.update({
            "train.dataset": self.dataset, "train.steps": self.steps,
            "train.batch_size": self.batch_size, "train.lr": repr(self.lr),
            "train.optimizer": self.optimizer, "train.seed": self.seed,
            "train.lambda_recon": repr(self.weights.lambda_recon),
            "train.lambda_task": repr(self.weights.lambda_task),
            "train.lambda_pred": repr(self.weights.lambda_pred),
            "train.eval_cadence": self.eval_cadence,
            "train.checkpoint_cadence": self.checkpoint_cadence,
            "train.image_size": self.image_size,
            "train.camera_count": self.camera_count,
            "train.freeze_deform": int(self.freeze_deform),
        })
        return out

    @classmethod
    def from_manifest(cls, meta: dict) -> "TrainConfig":
        return cls(
            dataset=meta.get("train.dataset", ""), out_dir="",
            steps=int(meta["train.steps"]), batch_size=int(meta["train.batch_size"]),
            lr=float(meta["train.lr"]), optimizer=meta["train.optimizer"],
            seed=int(meta["train.seed"]),
            weights=LossWeights(lambda_recon=float(meta["train.lambda_recon"]),
                                lambda_task=float(meta["train.lambda_task"]),
                                lambda_pred=float(meta["train.lambda_pred"])),
            eval_cadence=int(meta["train.eval_cadence"]),
            checkpoint_cadence=int(meta["train.checkpoint_cadence"]),
            image_size=int(meta["train.image_size"]),
            camera_count=int(meta["train.camera_count"]),
            freeze_deform=bool(int(meta["train.freeze_deform"])),
            model=ModelConfig.from_manifest(meta),
        )


def config_from_file(path, **overrides) -> TrainConfig:
    """Build a TrainConfig from a flat key=value file plus keyword overrides."""
    kv = read_keyvalues(path)
    kv.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_items(kv)


def config_from_items(kv: dict) -> TrainConfig:
    base = TrainConfig()
    kwargs = {}
    model_kwargs = {}
    weights_kwargs = {}
    for key, raw in kv.items():
        if key.startswith("model."):
            name = key[len("model."):]
            mfields = {f.name: f for f in fields(ModelConfig)}
            if name not in mfields:
                raise ValueError(f"unknown model config key {key!r}")
            default = getattr(ModelConfig(), name)
            if isinstance(default, tuple):
                model_kwargs[name] = tuple(float(x) for x in str(raw).split())
            elif isinstance(default, bool):
                model_kwargs[name] = bool(int(raw))
            elif isinstance(default, int):
                model_kwargs[name] = int(raw)
            elif isinstance(default, float):
                model_kwargs[name] = float(raw)
            else:
                model_kwargs[name] = raw
        elif key in ("lambda_recon", "lambda_task", "lambda_pred"):
            weights_kwargs[key] = float(raw)
        elif key in ("dataset", "out_dir", "optimizer"):
            kwargs[key] = str(raw)
        elif key in ("lr",):
            kwargs[key] = float(raw)
        elif key in ("freeze_deform",):
            kwargs[key] = bool(int(raw))
        elif key in ("steps", "batch_size", "seed", "eval_cadence",
                     "checkpoint_cadence", "image_size", "camera_count"):
            kwargs[key] = int(raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if model_kwargs:
        kwargs["model"] = replace(base.model, **model_kwargs)
    if weights_kwargs:
        kwargs["weights"] = LossWeights(**weights_kwargs)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# optimizers

class Sgd:
    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def step(self, params: ModelParams, grad_scale: float):
        self.t += 1
        for tensor in params.tensors.values():
            if tensor.grad is not None:
                tensor.data -= self.lr * grad_scale * tensor.grad

    def state_tensors(self) -> dict:
        return {"opt.t": np.array(float(self.t))}

    def load_state(self, extra: dict):
        self.t = int(extra.get("opt.t", 0.0))


class Adam:
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grad_scale: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, tensor in params.tensors.items():
            if tensor.grad is None:
                continue
            g = tensor.grad * grad_scale
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            tensor.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_tensors(self) -> dict:
        out = {"opt.t": np.array(float(self.t))}
        for name, m in self.m.items():
            out[f"opt.m.{name}"] = m
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, extra: dict):
        self.t = int(extra.get("opt.t", 0.0))
        for key, arr in extra.items():
            if key.startswith("opt.m."):
                self.m[key[len("opt.m."):]] = arr.copy()
            elif key.startswith("opt.v."):
                self.v[key[len("opt.v."):]] = arr.copy()


def make_optimizer(config: TrainConfig):
    return Adam(config.lr) if config.optimizer == "adam" else Sgd(config.lr)


# ---------------------------------------------------------------------------
# dataset preparation

@dataclass
class Sample:
    observation: object
    action: object
    future_rgb: list | None
    masks: list
    future_masks: list | None
    language: str
    pooled: tuple


def load_training_samples(dataset_dir, model_config: ModelConfig):
    """Flatten a dataset into per-step samples with cached unprojection pools.

    Only steps with future frames become samples (the terminal hold of each
    episode has nothing to predict).
    """
    meta, demos = load_dataset(dataset_dir)
    samples = []
    for demo in demos:
        for k, step in enumerate(demo.steps):
            if step.future_rgb is None:
                continue
            pooled = pool_observation(step.observation, model_config, allow_empty=True)
            future_masks = list(demo.steps[k + 1].masks)
            samples.append(Sample(observation=step.observation, action=step.action,
                                  future_rgb=list(step.future_rgb), masks=list(step.masks),
                                  future_masks=future_masks, language=demo.language,
                                  pooled=pooled))
    return meta, samples


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def _sample_losses(sample: Sample, view: int, cams, params: ModelParams,
                   weights: LossWeights, freeze_deform: bool):
    """Forward pass and loss computation for one sample on the active tape."""
    override = ZERO_DELTAS if freeze_deform else None
    bundle = predict_step(sample.observation, sample.action, cams, params,
                          leader_override=override, follower_override=override,
                          pooled_cache=sample.pooled)
    logits = decode_actions(bundle.volumetric, sample.language, params)
    l_recon = loss_recon(bundle.current[view].rgb, sample.observation.views[view].rgb)
    l_task = loss_task(bundle.current[view].logit, sample.masks[view])
    l_pred = loss_pred([h.rgb for h in bundle.future], sample.future_rgb)
    l_bc = loss_bc(logits, sample.action)
    total = loss_total(l_bc, l_recon, l_task, l_pred, weights)
    return total, (float(l_bc), float(l_recon), float(l_task), float(l_pred), float(total))


def _batch_pass(samples, idx, views, cams, params, weights, freeze_deform,
                do_backward: bool):
    sums = np.zeros(5)
    used = 0
    for i, view in zip(idx, views):
        sample = samples[int(i)]
        try:
            with ad.Tape():
                total, vals = _sample_losses(sample, int(view), cams, params,
                                             weights, freeze_deform)
                if do_backward:
                    ad.backward(total)
        except EmptySceneError:
            continue
        except ValueError as exc:
            if "non-finite" in str(exc):
                raise TrainingDivergedError(f"forward pass diverged: {exc}") from exc
            raise
        sums += np.array(vals)
        used += 1
    if used == 0:
        raise TrainingDivergedError("every sample in the batch was empty")
    return sums / used, used


def train(config: TrainConfig, resume_from=None) -> Path:
    """Run the training loop; returns the output directory.

    Writes metrics.csv (one deterministic comma-separated line per step plus
    the initial evaluation), periodic checkpoints, and checkpoint_final.nta.
    On a non-finite loss or parameter the run halts with the last-saved
    checkpoint intact.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta, samples = load_training_samples(config.dataset, config.model)
    cams = meta["cameras"]
    if len(cams) != config.camera_count:
        raise ManifestMismatchError(f"dataset has {len(cams)} cameras, "
                                    f"config expects {config.camera_count}")
    if cams[0].width != config.image_size:
        raise ManifestMismatchError(f"dataset image width {cams[0].width}, "
                                    f"config expects {config.image_size}")
    if not samples:
        raise ValueError("dataset contains no trainable steps")

    start_step = 0
    optimizer = make_optimizer(config)
    if resume_from is not None:
        params, extra, meta_kv = ModelParams.load(resume_from, expect_config=config.model)
        resumed = TrainConfig.from_manifest(meta_kv)
        # the step target may change on resume; everything else that shapes the
        # training trajectory must match the checkpoint manifest
        check = replace(resumed, out_dir=config.out_dir, dataset=config.dataset,
                        steps=config.steps)
        if check != config:
            raise ManifestMismatchError("resume config differs from checkpoint manifest")
        optimizer.load_state(extra)
        start_step = int(float(meta_kv["train.step"]))
        metrics_f = open(out_dir / "metrics.csv", "a")
    else:
        params = ModelParams.init(config.model, np.random.default_rng(config.seed))
        metrics_f = open(out_dir / "metrics.csv", "w")

    def save(step, name=None):
        tag = name or f"checkpoint_{step:06d}.nta"
        params.save(out_dir / tag, extra_meta={**config.manifest(), "train.step": step},
                    extra_tensors=optimizer.state_tensors())

    def log_line(step, vals):
        metrics_f.write(f"{step}," + ",".join(repr(float(v)) for v in vals) + "\n")
        metrics_f.flush()

    eval_f = None
    if config.eval_cadence > 0:
        eval_f = open(out_dir / "evals.csv", "a" if resume_from else "w")

    try:
        if start_step == 0:
            save(0)
            rng = _step_rng(config.seed, 0)
            idx = rng.integers(0, len(samples), config.batch_size)
            views = rng.integers(0, len(cams), config.batch_size)
            vals, _ = _batch_pass(samples, idx, views, cams, params, config.weights,
                                  config.freeze_deform, do_backward=False)
            params.zero_grads()
            log_line(0, vals)

        for step in range(start_step + 1, config.steps + 1):
            t0 = time.monotonic()
            rng = _step_rng(config.seed, step)
            idx = rng.integers(0, len(samples), config.batch_size)
            views = rng.integers(0, len(cams), config.batch_size)
            params.zero_grads()
            vals, used = _batch_pass(samples, idx, views, cams, params, config.weights,
                                     config.freeze_deform, do_backward=True)
            optimizer.step(params, grad_scale=1.0 / used)
            if not params.all_finite():
                raise TrainingDivergedError(f"non-finite parameter after step {step}")
            log_line(step, vals)
            if config.checkpoint_cadence and step % config.checkpoint_cadence == 0:
                save(step)
            if eval_f is not None and step % config.eval_cadence == 0:
                report = evaluate_params(params, samples, cams, config.weights)
                eval_f.write(f"{step},{report.psnr!r},{report.mask_accuracy!r},"
                             f"{report.future_mask_accuracy!r},{report.head_accuracy_mean!r}\n")
                eval_f.flush()
            print(f"step {step}/{config.steps} total={vals[4]:.4f} "
                  f"({time.monotonic() - t0:.2f}s)", file=sys.stderr)
        save(config.steps, name="checkpoint_final.nta")
    finally:
        metrics_f.close()
        if eval_f is not None:
            eval_f.close()
    return out_dir


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    loss_bc: float
    loss_recon: float
    loss_task: float
    loss_pred: float
    psnr: float                     # pooled over all future frames; inf on exact match
    mask_accuracy: float            # current-frame rendered labels vs ground truth
    future_mask_accuracy: float     # predicted-future labels vs next-frame ground truth
    head_accuracy: dict             # per-head argmax accuracy, 16 heads
    trans_bin_distance: float       # mean |argmax bin - expert bin| over translation heads
    n_samples: int

    @property
    def head_accuracy_mean(self) -> float:
        return float(np.mean(list(self.head_accuracy.values())))

    def to_kv(self) -> dict:
        out = {
            "loss_bc": repr(float(self.loss_bc)), "loss_recon": repr(float(self.loss_recon)),
            "loss_task": repr(float(self.loss_task)), "loss_pred": repr(float(self.loss_pred)),
            "psnr": repr(float(self.psnr)), "mask_accuracy": repr(float(self.mask_accuracy)),
            "future_mask_accuracy": repr(float(self.future_mask_accuracy)),
            "trans_bin_distance": repr(float(self.trans_bin_distance)),
            "n_samples": self.n_samples,
        }
        for head, acc in self.head_accuracy.items():
            out[f"head.{head}"] = repr(float(acc))
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "EvalReport":
        heads = {k[len("head."):]: float(v) for k, v in kv.items() if k.startswith("head.")}
        return cls(loss_bc=float(kv["loss_bc"]), loss_recon=float(kv["loss_recon"]),
                   loss_task=float(kv["loss_task"]), loss_pred=float(kv["loss_pred"]),
                   psnr=float(kv["psnr"]), mask_accuracy=float(kv["mask_accuracy"]),
                   future_mask_accuracy=float(kv["future_mask_accuracy"]),
                   head_accuracy=heads,
                   trans_bin_distance=float(kv["trans_bin_distance"]),
                   n_samples=int(kv["n_samples"]))

    def save(self, path):
        write_keyvalues(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_kv(read_keyvalues(path))


def _mask_accuracy(logit_maps, masks):
    correct = 0
    counted = 0
    for lmap, mask in zip(logit_maps, masks):
        keep = mask != IGNORE_LABEL
        if not np.any(keep):
            continue
        pred = np.argmax(lmap, axis=2)
        correct += int(np.sum(pred[keep] == mask[keep]))
        counted += int(np.sum(keep))
    return correct, counted


HEAD_NAMES = []
for _arm in ("left", "right"):
    HEAD_NAMES += [f"{_arm}.trans_{ax}" for ax in "xyz"]
    HEAD_NAMES += [f"{_arm}.rot_{ax}" for ax in "xyz"]
    HEAD_NAMES += [f"{_arm}.open", f"{_arm}.collide"]


def _head_decisions(policy_logits, action):
    """(head name, predicted bin, expert bin) triples for all 16 heads."""
    out = []
    for arm_name in ("left", "right"):
        head = getattr(policy_logits, arm_name)
        gt = getattr(action, arm_name)
        pred_t = np.argmax(head.trans.data, axis=1)
        pred_r = np.argmax(head.rot.data, axis=1)
        for ax, axis_name in enumerate("xyz"):
            out.append((f"{arm_name}.trans_{axis_name}", int(pred_t[ax]), gt.trans_bin[ax]))
            out.append((f"{arm_name}.rot_{axis_name}", int(pred_r[ax]), gt.rot_bins[ax]))
        out.append((f"{arm_name}.open", int(np.argmax(head.open.data[0])), gt.open))
        out.append((f"{arm_name}.collide", int(np.argmax(head.collide.data[0])), gt.collide))
    return out


def evaluate_params(params: ModelParams, samples, cams,
                    weights: LossWeights = None) -> EvalReport:
    """Deterministic metrics of a model over prepared samples (all views)."""
    weights = weights or LossWeights()
    sums = np.zeros(4)
    sq_err = 0.0
    n_px = 0
    mask_c = mask_n = fmask_c = fmask_n = 0
    head_hits = {name: 0 for name in HEAD_NAMES}
    head_counts = {name: 0 for name in HEAD_NAMES}
    trans_dist = []
    used = 0
    for sample in samples:
        try:
            bundle = predict_step(sample.observation, sample.action, cams, params,
                                  pooled_cache=sample.pooled)
        except EmptySceneError:
            continue
        logits = decode_actions(bundle.volumetric, sample.language, params)
        recon = np.mean([float(loss_recon(bundle.current[v].rgb,
                                          sample.observation.views[v].rgb))
                         for v in range(len(cams))])
        task = np.mean([float(loss_task(bundle.current[v].logit, sample.masks[v]))
                        for v in range(len(cams))])
        pred = float(loss_pred([h.rgb for h in bundle.future], sample.future_rgb))
        bc = float(loss_bc(logits, sample.action))
        sums += np.array([bc, recon, task, pred])
        for v in range(len(cams)):
            diff = bundle.future[v].output.rgb - sample.future_rgb[v]
            sq_err += float(np.sum(diff * diff))
            n_px += diff.size
        c, n = _mask_accuracy([h.output.logit_map for h in bundle.current], sample.masks)
        mask_c += c
        mask_n += n
        c, n = _mask_accuracy([h.output.logit_map for h in bundle.future],
                              sample.future_masks)
        fmask_c += c
        fmask_n += n
        for name, pred_bin, gt_bin in _head_decisions(logits, sample.action):
            head_hits[name] += int(pred_bin == gt_bin)
            head_counts[name] += 1
            if "trans" in name:
                trans_dist.append(abs(pred_bin - gt_bin))
        used += 1
    if used == 0:
        raise ValueError("no evaluable samples")
    mse = sq_err / max(n_px, 1)
    psnr = float("inf") if mse == 0.0 else float(10.0 * np.log10(1.0 / mse))
    head_acc = {name: float(head_hits[name] / max(head_counts[name], 1)) for name in HEAD_NAMES}
    return EvalReport(
        loss_bc=float(sums[0] / used), loss_recon=float(sums[1] / used),
        loss_task=float(sums[2] / used), loss_pred=float(sums[3] / used),
        psnr=psnr,
        mask_accuracy=float(mask_c / max(mask_n, 1)),
        future_mask_accuracy=float(fmask_c / max(fmask_n, 1)),
        head_accuracy=head_acc,
        trans_bin_distance=float(np.mean(trans_dist)) if trans_dist else 0.0,
        n_samples=used,
    )


def evaluate(checkpoint_path, dataset_dir, demo_indices=None) -> EvalReport:
    """Evaluate a checkpoint on a dataset (optionally a subset of demos)."""
    params, _, _ = ModelParams.load(checkpoint_path)
    meta, samples = load_training_samples(dataset_dir, params.config)
    if demo_indices is not None:
        meta_all, demos = load_dataset(dataset_dir)
        keep = []
        offset = 0
        wanted = set(demo_indices)
        for d_idx, demo in enumerate(demos):
            n = sum(1 for s in demo.steps if s.future_rgb is not None)
            if d_idx in wanted:
                keep.extend(range(offset, offset + n))
            offset += n
        samples = [samples[i] for i in keep]
    return evaluate_params(params, samples, meta["cameras"])
