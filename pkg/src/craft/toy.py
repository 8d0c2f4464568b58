"""Minimal single-head attention classifier exercising the adapters end to end.

The model is deliberately small: token embeddings, a stack of single-head
attention blocks with residual connections (no layer norm, no MLP, no
positional encoding), mean pooling, and a linear classifier head.  The
synthetic tasks are permutation-invariant so positions are irrelevant.

Two operating modes:

* full-train: every parameter updates (used to produce a "pre-trained" model
  on task A);
* craft-adapt: per-layer Q and V weights are read out of adapters, and only
  the adaptation matrices plus the classifier head train.  Embeddings, K and
  O weights, and all frozen adapter buffers stay untouched.

The backward pass is hand-derived for this fixed architecture and checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .adapter import CraftAdapter, InitConfig, adapted_tensor, grad_j, init_adapter, sgd_step
from .errors import DivergenceError, PretrainError, ValidationError
from .tucker import TuckerRanks

TASK_RULES = ("majority", "majority_flip")


@dataclass(frozen=True)
class ToyConfig:
    n_layers: int = 4
    d_model: int = 32
    vocab_size: int = 16
    seq_len: int = 12
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "d_model", "vocab_size", "seq_len", "n_classes"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % 2 != 0:
            raise ValidationError(f"d_model must be even, got {self.d_model}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}")


@dataclass(frozen=True)
class SyntheticTask:
    """Deterministic labelled token sequences; labels alternate 0/1 exactly."""

    rule: str = "majority"
    seed: int = 0
    train_size: int = 256
    eval_size: int = 256

    def __post_init__(self):
        if self.rule not in TASK_RULES:
            raise ValidationError(f"rule must be one of {TASK_RULES}, got {self.rule!r}")
        for name in ("train_size", "eval_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}")

    def flipped(self) -> "SyntheticTask":
        other = "majority_flip" if self.rule == "majority" else "majority"
        return SyntheticTask(other, self.seed, self.train_size, self.eval_size)


def majority_label(tokens: np.ndarray, vocab_size: int) -> np.ndarray:
    """1 when more than half the tokens lie in the upper vocabulary half."""
    upper = np.sum(tokens >= vocab_size // 2, axis=-1)
    return (upper * 2 > tokens.shape[-1]).astype(np.int64)


def make_dataset(task: SyntheticTask, cfg: ToyConfig, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Token/label arrays for ``split`` in {"train", "eval"}; exact 50/50 balance.

    Sample i is rejection-sampled until its majority matches label ``i % 2``
    (ties are resampled too), so the base labels alternate deterministically.
    """
    if split not in ("train", "eval"):
        raise ValidationError(f"split must be 'train' or 'eval', got {split!r}")
    n = task.train_size if split == "train" else task.eval_size
    rng = np.random.default_rng([task.seed, 0 if split == "train" else 1])
    tokens = np.empty((n, cfg.seq_len), dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    half = cfg.seq_len / 2.0
    for i in range(n):
        target = i % 2
        while True:
            seq = rng.integers(0, cfg.vocab_size, cfg.seq_len)
            upper = int(np.sum(seq >= cfg.vocab_size // 2))
            if upper == half:
                continue
            if int(upper > half) == target:
                break
        tokens[i] = seq
        labels[i] = target
    if task.rule == "majority_flip":
        labels = 1 - labels
    return tokens, labels


class ToyModel:
    """Mutable parameter container; adapters attach for craft-adapt mode."""

    def __init__(self, cfg: ToyConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.embeddings = 0.5 * rng.standard_normal((cfg.vocab_size, d))
        scale = 1.0 / np.sqrt(d)
        self.wq = scale * rng.standard_normal((cfg.n_layers, d, d))
        self.wk = scale * rng.standard_normal((cfg.n_layers, d, d))
        self.wv = scale * rng.standard_normal((cfg.n_layers, d, d))
        self.wo = scale * rng.standard_normal((cfg.n_layers, d, d))
        # zero head => exactly chance-level predictions before any training
        self.head_w = np.zeros((d, cfg.n_classes))
        self.head_b = np.zeros(cfg.n_classes)
        self.adapters: dict[str, CraftAdapter] | None = None

    @property
    def mode(self) -> str:
        return "craft-adapt" if self.adapters is not None else "full-train"

    def clone(self) -> "ToyModel":
        other = copy.copy(self)
        for name in ("embeddings", "wq", "wk", "wv", "wo", "head_w", "head_b"):
            setattr(other, name, getattr(self, name).copy())
        other.adapters = dict(self.adapters) if self.adapters is not None else None
        return other

    def effective_qv(self) -> tuple[np.ndarray, np.ndarray]:
        """Q and V weight stacks, routed through the adapters when attached."""
        wq, wv = self.wq, self.wv
        if self.adapters is not None:
            if "Q" in self.adapters:
                wq = adapted_tensor(self.adapters["Q"])
            if "V" in self.adapters:
                wv = adapted_tensor(self.adapters["V"])
        return wq, wv

    def backbone_checksum(self) -> str:
        """SHA-256 over everything that must never change during adaptation."""
        h = hashlib.sha256()
        for arr in (self.embeddings, self.wq, self.wk, self.wv, self.wo):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.adapters is not None:
            for name in sorted(self.adapters):
                a = self.adapters[name]
                for arr in (a.w_original, a.r_initial, a.factors.core,
                            a.factors.u1, a.factors.u2, a.factors.u3):
                    h.update(arr.tobytes())
        return h.hexdigest()


def _check_tokens(model: ToyModel, tokens) -> np.ndarray:
    arr = np.asarray(tokens)
    if arr.ndim != 2 or arr.shape[1] != model.cfg.seq_len:
        raise ValidationError(
            f"tokens must have shape (batch, {model.cfg.seq_len}), got {arr.shape}"
        )
    if arr.min() < 0 or arr.max() >= model.cfg.vocab_size:
        raise ValidationError(
            f"token ids must lie in [0, {model.cfg.vocab_size}), got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.int64)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: ToyModel, tokens, want_cache: bool = False):
    """Logits ``(batch, n_classes)``; with ``want_cache`` also the per-layer
    activations needed by the backward pass (including attention weights)."""
    tok = _check_tokens(model, tokens)
    inv_sqrt_d = 1.0 / np.sqrt(model.cfg.d_model)
    wq_eff, wv_eff = model.effective_qv()
    x = model.embeddings[tok]
    layers = []
    for layer in range(model.cfg.n_layers):
        q = x @ wq_eff[layer].T
        k = x @ model.wk[layer].T
        v = x @ wv_eff[layer].T
        attn = _softmax_rows((q @ k.swapaxes(1, 2)) * inv_sqrt_d)
        ctx = attn @ v
        out = ctx @ model.wo[layer].T
        layers.append({"x": x, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx})
        x = x + out
    pooled = x.mean(axis=1)
    logits = pooled @ model.head_w + model.head_b
    if not want_cache:
        return logits
    cache = {"tokens": tok, "layers": layers, "pooled": pooled,
             "wq_eff": wq_eff, "wv_eff": wv_eff}
    return logits, cache


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_z[:, None]
    n = logits.shape[0]
    loss = float(-np.mean(log_probs[np.arange(n), labels]))
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def loss_and_grads(model: ToyModel, tokens, labels) -> tuple[float, dict]:
    """Mean cross-entropy plus gradients for every parameter group.

    The returned dict always contains the weight-stack gradients ``wq`` and
    ``wv`` (shape ``(n_layers, d, d)``); in craft-adapt mode these are the
    upstream tensors to feed :func:`craft.adapter.grad_j`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    logits, cache = forward(model, tokens, want_cache=True)
    loss, dlogits = cross_entropy(logits, labels)

    pooled = cache["pooled"]
    g = {
        "head_w": pooled.T @ dlogits,
        "head_b": dlogits.sum(axis=0),
        "embeddings": np.zeros_like(model.embeddings),
        "wq": np.zeros_like(model.wq),
        "wk": np.zeros_like(model.wk),
        "wv": np.zeros_like(model.wv),
        "wo": np.zeros_like(model.wo),
    }
    inv_sqrt_d = 1.0 / np.sqrt(model.cfg.d_model)
    seq_len = model.cfg.seq_len
    dx = np.repeat((dlogits @ model.head_w.T)[:, None, :] / seq_len, seq_len, axis=1)

    for layer in range(model.cfg.n_layers - 1, -1, -1):
        c = cache["layers"][layer]
        d_out = dx
        g["wo"][layer] = np.einsum("bli,blj->ij", d_out, c["ctx"])
        d_ctx = d_out @ model.wo[layer]
        d_attn = np.einsum("blj,bmj->blm", d_ctx, c["v"])
        d_v = np.einsum("blm,blj->bmj", c["attn"], d_ctx)
        # softmax rows: dS = P * (dP - sum(dP * P))
        d_scores = c["attn"] * (d_attn - np.sum(d_attn * c["attn"], axis=-1, keepdims=True))
        d_scores *= inv_sqrt_d
        d_q = d_scores @ c["k"]
        d_k = np.einsum("blm,bli->bmi", d_scores, c["q"])
        g["wq"][layer] = np.einsum("bli,blj->ij", d_q, c["x"])
        g["wk"][layer] = np.einsum("bli,blj->ij", d_k, c["x"])
        g["wv"][layer] = np.einsum("bli,blj->ij", d_v, c["x"])
        dx = dx + d_q @ cache["wq_eff"][layer] + d_k @ model.wk[layer] \
            + d_v @ cache["wv_eff"][layer]

    np.add.at(g["embeddings"], cache["tokens"], dx)
    return loss, g


def evaluate(model: ToyModel, tokens, labels) -> float:
    logits = forward(model, tokens)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == np.asarray(labels)))


def _derived_seeds(seed: int) -> dict[str, int]:
    words = np.random.SeedSequence(seed).generate_state(4)
    return {"model": int(words[0]), "adapter_q": int(words[1]),
            "adapter_v": int(words[2]), "spare": int(words[3])}


def pretrain(
    cfg: ToyConfig,
    task: SyntheticTask,
    eta: float = 0.05,
    max_steps: int = 400,
    target_acc: float = 0.9,
    eval_every: int = 5,
) -> ToyModel:
    """Full-batch gradient descent on every parameter until ``target_acc``.

    Raises :class:`PretrainError` when the final eval accuracy is below 0.75.
    The returned model carries the loss curve in ``model.pretrain_losses``.
    """
    seeds = _derived_seeds(cfg.seed)
    model = ToyModel(cfg, np.random.default_rng(seeds["model"]))
    tokens, labels = make_dataset(task, cfg, "train")
    eval_tokens, eval_labels = make_dataset(task, cfg, "eval")

    losses = []
    acc = 0.0
    for step in range(max_steps):
        try:
            loss, g = loss_and_grads(model, tokens, labels)
        except ValidationError as err:
            raise DivergenceError(f"pretraining overflowed: {err}", step=step) from err
        if not np.isfinite(loss):
            raise DivergenceError("pretraining loss became non-finite", step=step)
        losses.append(loss)
        for name in ("embeddings", "wq", "wk", "wv", "wo", "head_w", "head_b"):
            arr = getattr(model, name)
            arr -= eta * g[name]
        if (step + 1) % eval_every == 0:
            acc = evaluate(model, eval_tokens, eval_labels)
            if acc >= target_acc:
                break
    acc = evaluate(model, eval_tokens, eval_labels)
    if acc < 0.75:
        raise PretrainError(
            f"pretraining reached eval accuracy {acc:.3f} < 0.75 after "
            f"{len(losses)} steps"
        )
    model.pretrain_losses = losses
    model.pretrain_eval_acc = acc
    return model


def build_adapters(
    model: ToyModel,
    ranks: TuckerRanks,
    epsilon: float = 0.01,
    sigma: float = 0.02,
    projections: tuple[str, ...] = ("Q", "V"),
) -> dict[str, CraftAdapter]:
    """Adapters over the model's stacked Q and/or V weights, seeded from the model seed."""
    seeds = _derived_seeds(model.cfg.seed)
    stacks = {"Q": model.wq, "V": model.wv}
    adapters = {}
    for name in projections:
        if name not in stacks:
            raise ValidationError(f"projection must be 'Q' or 'V', got {name!r}")
        cfg = InitConfig(epsilon=epsilon, sigma=sigma, seed=seeds[f"adapter_{name.lower()}"])
        adapters[name] = init_adapter(stacks[name], ranks, cfg)
    return adapters


def craft_finetune(
    model: ToyModel,
    adapters: Mapping[str, CraftAdapter],
    task: SyntheticTask,
    eta: float,
    steps: int,
    head_eta: float | None = None,
) -> tuple[ToyModel, list[float]]:
    """Adapt to ``task`` by training only the adaptation matrices and the head.

    Full-batch descent for ``steps`` steps; returns the adapted model and the
    per-step loss curve.  The input model is left untouched.
    """
    if not np.isfinite(eta):
        raise ValidationError(f"eta must be finite, got {eta!r}")
    head_eta = eta if head_eta is None else head_eta
    for name, a in adapters.items():
        if name not in ("Q", "V"):
            raise ValidationError(f"adapter keys must be 'Q' or 'V', got {name!r}")
        base = model.wq if name == "Q" else model.wv
        if a.w_original.shape != base.shape or not np.array_equal(a.w_original, base):
            raise ValidationError(
                f"adapter {name} was not built from this model's stacked weights"
            )
    tuned = model.clone()
    tuned.adapters = dict(adapters)
    tokens, labels = make_dataset(task, model.cfg, "train")

    losses = []
    for step in range(steps):
        try:
            loss, g = loss_and_grads(tuned, tokens, labels)
        except ValidationError as err:
            raise DivergenceError(f"fine-tuning overflowed: {err}", step=step) from err
        if not np.isfinite(loss):
            raise DivergenceError("fine-tuning loss became non-finite", step=step)
        losses.append(loss)
        for name in tuned.adapters:
            upstream = g["wq"] if name == "Q" else g["wv"]
            grads = grad_j(tuned.adapters[name], upstream)
            tuned.adapters[name] = sgd_step(tuned.adapters[name], grads, eta)
        tuned.head_w -= head_eta * g["head_w"]
        tuned.head_b -= head_eta * g["head_b"]
    return tuned, losses


def head_only_finetune(
    model: ToyModel,
    task: SyntheticTask,
    eta: float,
    steps: int,
) -> tuple[ToyModel, list[float]]:
    """Baseline: identical budget and head learning rate, backbone fully frozen."""
    if not np.isfinite(eta):
        raise ValidationError(f"eta must be finite, got {eta!r}")
    tuned = model.clone()
    tokens, labels = make_dataset(task, model.cfg, "train")
    losses = []
    for step in range(steps):
        loss, g = loss_and_grads(tuned, tokens, labels)
        if not np.isfinite(loss):
            raise DivergenceError("fine-tuning loss became non-finite", step=step)
        losses.append(loss)
        tuned.head_w -= eta * g["head_w"]
        tuned.head_b -= eta * g["head_b"]
    return tuned, losses
