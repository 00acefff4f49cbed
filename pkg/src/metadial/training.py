"""Meta-training, the pooled transfer baseline, and target-domain adaptation.

All three trainers share one schedule: epoch 0 validates the initial
parameters; after each epoch the learning rate is halved if validation loss
went up relative to the previous epoch; training stops after ``patience``
epochs without a new best and returns the best-validation parameters.

The meta-learner is first-order MAML.  For each source domain ``k`` it takes
one batch, computes ``L_k(M)``, forms the temporary model
``M'_k = M - alpha * grad L_k(M)`` without touching ``M``, evaluates
``L_k(M'_k)`` on the same batch with the same dropout masks, and sums the
gradients ``grad_{M'_k} L_k(M'_k)`` over domains.  Adam with rate ``beta``
applies that sum to ``M``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .corpus_io import Batch, Vocab, make_batches
from .model import ModelConfig, forward, sample_dropout_masks
from .optim import Adam, clone_params, sgd_step
from .seeding import stream_rng, stream_seed

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; ``params`` holds the last finite parameters."""

    def __init__(self, msg, params, epoch):
        super().__init__(msg)
        self.params = params
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 3

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive, max_epochs non-negative")


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.003
    beta: float = 0.003
    inner_steps: int = 1
    meta_batch_per_domain: int = 32
    source_domains: tuple[str, ...] = ()
    seed: int = 0
    second_order: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")
        if self.inner_steps != 1:
            raise ValueError("only a single inner update step is supported")
        if self.meta_batch_per_domain < 1:
            raise ValueError("meta_batch_per_domain must be positive")
        if self.second_order:
            raise NotImplementedError(
                "second-order meta-gradients are not implemented; the engine is single-order, "
                "use the first-order approximation (second_order: false)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float | None
    val_loss: float
    lr: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped: str = ""

    def to_json(self) -> dict:
        return {"best_epoch": self.best_epoch, "stopped": self.stopped, "records": [asdict(r) for r in self.records]}

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]


# ---------------------------------------------------------------- shared pieces

def evaluate_loss(params, batches: Sequence[Batch], cfg: ModelConfig) -> float:
    """Token-weighted mean teacher-forced loss without dropout."""
    total, n = 0.0, 0
    with ad.no_grad():
        for b in batches:
            out = forward(params, b, cfg, None)
            total += out.loss.item() * out.n_tokens
            n += out.n_tokens
    return total / n


def meta_gradient(params: dict, loss_fns: Sequence[Callable[[dict], ad.Tensor]], alpha: float):
    """First-order meta-gradient ``sum_k grad_{M'_k} L_k(M'_k)`` with ``M'_k = M - alpha grad L_k(M)``.

    ``loss_fns[k](p)`` must rebuild task ``k``'s loss graph at parameters
    ``p`` (same batch, same dropout masks on each call).  Returns
    ``(grads, pre_losses, post_losses)``; ``params`` values and grads are left
    untouched apart from clearing ``.grad``.
    """
    total = {k: np.zeros_like(p.data) for k, p in params.items()}
    pre, post = [], []
    for fn in loss_fns:
        ad.zero_grad(params)
        inner = fn(params)
        ad.backward(inner)
        temp = sgd_step(params, alpha)
        ad.zero_grad(params)
        outer = fn(temp)
        ad.backward(outer)
        for k, p in temp.items():
            if p.grad is not None:
                total[k] += p.grad
        pre.append(inner.item())
        post.append(outer.item())
    return total, pre, post


def _check(value: float, what: str, snapshot, epoch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite in epoch {epoch}", snapshot, epoch)


def run_schedule(params: dict, run_epoch: Callable[[dict, int, Adam], float], validate: Callable[[dict], float],
                 cfg: TrainConfig, name: str = "train"):
    """Epoch loop with lr halving and patience; returns (best params, TrainLog).

    ``run_epoch(params, epoch, optimizer)`` mutates ``params`` in place and
    returns the mean training loss.  Epoch 0 is the validation of the
    initial parameters.
    """
    opt = Adam(params, lr=cfg.lr)
    tlog = TrainLog()
    start = time.perf_counter()
    val = validate(params)
    _check(val, "validation loss", clone_params(params), 0)
    tlog.records.append(EpochRecord(0, None, val, opt.lr, 0.0))
    best, best_val, prev_val, stale = clone_params(params), val, val, 0
    tlog.stopped = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        snapshot = clone_params(params)
        lr_used = opt.lr
        train_loss = run_epoch(params, epoch, opt)
        _check(train_loss, "training loss", snapshot, epoch)
        val = validate(params)
        _check(val, "validation loss", snapshot, epoch)
        tlog.records.append(EpochRecord(epoch, train_loss, val, lr_used, time.perf_counter() - start))
        log.info("%s epoch %d train %.4f val %.4f lr %.5f", name, epoch, train_loss, val, lr_used)
        if val > prev_val:
            opt.lr /= 2.0
        prev_val = val
        if val < best_val:
            best, best_val, tlog.best_epoch, stale = clone_params(params), val, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                tlog.stopped = "patience"
                break
    return best, tlog


def _finish_grads(params, model_cfg: ModelConfig) -> None:
    """Zero-fill missing grads; freeze the embedding table when configured."""
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    if not model_cfg.trainable_embeddings:
        params["emb"].grad = np.zeros_like(params["emb"].data)


def _sgd_epoch(batches_fn, model_cfg: ModelConfig, rng: np.random.Generator):
    def run_epoch(params, epoch, opt):
        losses = []
        for batch in batches_fn(epoch):
            masks = sample_dropout_masks(batch, model_cfg, rng)
            ad.zero_grad(params)
            loss = forward(params, batch, model_cfg, masks).loss
            ad.backward(loss)
            _finish_grads(params, model_cfg)
            losses.append(loss.item())
            if not math.isfinite(losses[-1]):
                return float("nan")
            opt.step(params)
        return float(np.mean(losses))
    return run_epoch


# ---------------------------------------------------------------- trainers

def maml_train(init: dict, train_sets: dict[str, list], val_examples: list, vocab: Vocab,
               model_cfg: ModelConfig, meta_cfg: MetaConfig, train_cfg: TrainConfig):
    """First-order MAML over source domains; returns (best params, TrainLog).

    ``train_sets`` maps domain name to its training examples.  An epoch runs
    as many meta-iterations as the largest domain has batches; smaller
    domains restart their (reshuffled) batch list when exhausted.  The
    outer learning rate is ``meta_cfg.beta``; ``train_cfg.lr`` is ignored.
    """
    domains = list(meta_cfg.source_domains or train_sets)
    if len(domains) < 2:
        raise ValueError("meta-training needs at least two source domains")
    params = clone_params(init)
    rng = stream_rng(meta_cfg.seed, "dropout", 1)
    val_batches = make_batches(val_examples, vocab, 64, seed=None)

    def run_epoch(params, epoch, opt):
        per_domain = {d: make_batches(train_sets[d], vocab, meta_cfg.meta_batch_per_domain,
                                      seed=stream_seed(meta_cfg.seed, "batching", 1, epoch, i))
                      for i, d in enumerate(domains)}
        n_iter = max(len(b) for b in per_domain.values())
        losses = []
        for it in range(n_iter):
            fns = []
            for d in domains:
                batch = per_domain[d][it % len(per_domain[d])]
                masks = sample_dropout_masks(batch, model_cfg, rng)
                fns.append(lambda p, b=batch, m=masks: forward(p, b, model_cfg, m).loss)
            grads, _, post = meta_gradient(params, fns, meta_cfg.alpha)
            losses.append(sum(post) / len(post))
            if not math.isfinite(losses[-1]):
                return float("nan")
            for k, p in params.items():
                p.grad = grads[k]
            _finish_grads(params, model_cfg)
            opt.step(params)
        return float(np.mean(losses))

    cfg = TrainConfig(meta_cfg.beta, meta_cfg.meta_batch_per_domain, train_cfg.max_epochs, train_cfg.patience)
    return run_schedule(params, run_epoch, lambda p: evaluate_loss(p, val_batches, model_cfg), cfg, "maml")


def transfer_train(init: dict, train_sets: dict[str, list], val_examples: list, vocab: Vocab,
                   model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int = 0):
    """Ordinary Adam training on the pooled source data (mixed-domain batches)."""
    pooled = [ex for d in train_sets for ex in train_sets[d]]
    params = clone_params(init)
    rng = stream_rng(seed, "dropout", 2)
    val_batches = make_batches(val_examples, vocab, 64, seed=None)
    run_epoch = _sgd_epoch(lambda e: make_batches(pooled, vocab, train_cfg.batch_size, seed=stream_seed(seed, "batching", 2, e)),
                           model_cfg, rng)
    return run_schedule(params, run_epoch, lambda p: evaluate_loss(p, val_batches, model_cfg), train_cfg, "transfer")


def adapt(params: dict, target_train: list, target_val: list, vocab: Vocab, model_cfg: ModelConfig,
          train_cfg: TrainConfig, seed: int = 0):
    """Fine-tune on target examples; returns (best params, epochs_used, TrainLog).

    ``epochs_used`` is the epoch index of the best target-validation loss
    (0 when no epoch improves on the starting parameters).
    """
    if not target_train:
        raise ValueError("adaptation needs at least one target training example")
    params = clone_params(params)
    rng = stream_rng(seed, "dropout", 3)
    val_batches = make_batches(target_val, vocab, 64, seed=None)
    run_epoch = _sgd_epoch(lambda e: make_batches(target_train, vocab, train_cfg.batch_size, seed=stream_seed(seed, "batching", 3, e)),
                           model_cfg, rng)
    best, tlog = run_schedule(params, run_epoch, lambda p: evaluate_loss(p, val_batches, model_cfg), train_cfg, "adapt")
    return best, float(tlog.best_epoch), tlog

