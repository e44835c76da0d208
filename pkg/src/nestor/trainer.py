"""Training: one-to-many target assignment, bipartite matching loss,
AdamW with global-norm clipping and a warmup-cosine schedule, plus
evaluation and checkpoint I/O.

Assignment semantics: every proposal receives a target (an entity or the
padding None target). When proposals outnumber entities every entity must
be covered at least once; otherwise every proposal maps to a distinct
entity and padding is unused. The Hungarian core runs on row-reduced
costs (each row's full-row minimum, padding included, subtracted first)
which makes the combined Hungarian + greedy procedure globally optimal
under those constraints; unmatched proposals then take their cheapest
target, ties to the lowest index.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numerics as nx
from .data import EntitySpan
from .errors import ConfigError, NonFiniteError
from .metrics import MetricsReport, score
from .numerics import Tensor

__all__ = [
    "TrainConfig",
    "CostMatrix",
    "Assignment",
    "match_cost",
    "hungarian",
    "assign",
    "bipartite_loss",
    "lr_schedule",
    "AdamW",
    "clip_gradients",
    "train_step",
    "evaluate",
    "fit",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_FLOOR = 1e-12  # probabilities are clamped here before any log


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    clip_norm: float = 1.0
    warmup_steps: int = 30
    total_steps: int = 300
    seed: int = 1
    batch_size: int = 16
    precision: str = "float32"
    weight_decay: float = 0.01
    lr_floor: float = 0.0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ConfigError("train.clip_norm must be > 0")
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}"
            )

    @classmethod
    def from_config(cls, cfg: dict, n_train: int) -> "TrainConfig":
        t = cfg["train"]
        steps_per_epoch = max(1, math.ceil(n_train / t["batch_size"]))
        total = max(1, t["epochs"] * steps_per_epoch)
        return cls(
            lr=t["lr"],
            epochs=t["epochs"],
            clip_norm=t["clip_norm"],
            warmup_steps=min(t["warmup_steps"], total),
            total_steps=total,
            seed=t["seed"],
            batch_size=t["batch_size"],
            precision=t["precision"],
            weight_decay=t["weight_decay"],
            lr_floor=t["lr_floor"],
        )


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

def match_cost(target, dists, none_id: int) -> float:
    """-log p_c(t) - [t is an entity] * log p_n(s, e); the padding target
    costs -log p_c(None). `target` is (s, e, type_id) or None for padding."""
    if target is None:
        return -math.log(max(float(dists.p_c[none_id]), PROB_FLOOR))
    s, e, t = target
    cost = -math.log(max(float(dists.p_c[t]), PROB_FLOOR))
    cost -= math.log(max(dists.span_prob(s, e), PROB_FLOOR))
    return cost


@dataclass
class CostMatrix:
    """Match costs for every proposal-target pair; column N is padding."""

    entries: np.ndarray  # [L, N+1]

    @property
    def n_targets(self):
        return self.entries.shape[1] - 1

    @classmethod
    def build(cls, targets: list, dists: list, none_id: int) -> "CostMatrix":
        L, N = len(dists), len(targets)
        entries = np.zeros((L, N + 1))
        for i, d in enumerate(dists):
            for j, tgt in enumerate(targets):
                entries[i, j] = match_cost(tgt, d, none_id)
            entries[i, N] = match_cost(None, d, none_id)
        return cls(entries=entries)


@dataclass
class Assignment:
    """proposal index -> target index (N means padding); `core` marks the
    pairs chosen by the Hungarian step, the rest are greedy extensions."""

    mapping: list
    core: set = field(default_factory=set)
    padding_index: int = 0

    def total_cost(self, costs: CostMatrix) -> float:
        return float(sum(costs.entries[i, j] for i, j in enumerate(self.mapping)))


def hungarian(costs: np.ndarray) -> list:
    """Minimum-cost one-to-one matching of size min(L, N) as (row, col)
    pairs. Entries must be finite."""
    costs = np.asarray(costs, dtype=float)
    if costs.size and not np.isfinite(costs).all():
        raise NonFiniteError("hungarian: cost matrix contains non-finite entries")
    if costs.size == 0:
        return []
    rows, cols = linear_sum_assignment(costs)
    return list(zip(rows.tolist(), cols.tolist()))


def assign(targets: list, dists: list, none_id: int) -> tuple:
    """Solve the one-to-many assignment for one sentence.

    Returns (Assignment, CostMatrix). Row-reducing the entity columns by
    each row's full-row minimum before the Hungarian step prices each
    entity cover at its true marginal cost, so the result matches the
    exhaustive constrained optimum in both the L > N and L <= N regimes.
    """
    costs = CostMatrix.build(targets, dists, none_id)
    L, N = len(dists), len(targets)
    mapping = [N] * L
    core: set = set()
    if N > 0:
        row_min = costs.entries.min(axis=1)
        regret = costs.entries[:, :N] - row_min[:, None]
        for r, c in hungarian(regret):
            mapping[r] = c
            core.add(r)
    for i in range(L):
        if i not in core:
            mapping[i] = int(np.argmin(costs.entries[i]))  # ties: lowest target index
    # constraint guards: surjective onto entities when L > N, no padding when L <= N
    if L > N:
        assert set(range(N)) <= set(mapping), "assignment must cover every entity"
    else:
        assert all(j != N for j in mapping), "assignment must avoid padding when L <= N"
    return Assignment(mapping=mapping, core=core, padding_index=N), costs


def targets_of(example, vocabs) -> list:
    return [(ent.start, ent.end, vocabs.type_id(ent.type)) for ent in example.entities]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def bipartite_loss(assignment: Assignment, targets: list, p_c: Tensor, p_n: Tensor,
                   spans: np.ndarray, none_id: int) -> Tensor:
    """Differentiable per-sentence loss: the summed match cost of every
    proposal against its assigned target (the assignment itself is a
    constant within the step)."""
    L = p_c.shape[0]
    span_index = {(int(s), int(e)): i for i, (s, e) in enumerate(spans)}
    cat_ids = np.zeros(L, dtype=np.int64)
    span_rows, span_cols = [], []
    for i, j in enumerate(assignment.mapping):
        if j == assignment.padding_index:
            cat_ids[i] = none_id
        else:
            s, e, t = targets[j]
            cat_ids[i] = t
            span_rows.append(i)
            span_cols.append(span_index[(s, e)])
    picked_c = nx.gather_nd(p_c, (np.arange(L), cat_ids))
    loss = -nx.sum_axis(nx.log(nx.clamp_min(picked_c, PROB_FLOOR)))
    if span_rows:
        picked_n = nx.gather_nd(p_n, (np.array(span_rows), np.array(span_cols)))
        loss = loss - nx.sum_axis(nx.log(nx.clamp_min(picked_n, PROB_FLOOR)))
    return loss


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the warmup, then cosine decay to lr_floor."""
    if step <= 0:
        return 0.0 if cfg.warmup_steps > 0 else cfg.lr
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return cfg.lr_floor
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params: list, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.values)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.values = p.values - lr * (update + self.weight_decay * p.values)


def clip_gradients(params: list, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.tensor.grad = p.grad * scale
    return norm


# ---------------------------------------------------------------------------
# steps and loop
# ---------------------------------------------------------------------------

def group_by_length(examples: list) -> list:
    groups: dict = {}
    for ex in examples:
        groups.setdefault(len(ex.tokens), []).append(ex)
    return [groups[k] for k in sorted(groups)]


def _batch_losses(model, batch: list) -> tuple:
    """Forward a batch (length-grouped internally); returns the summed loss
    tensor and per-sentence loss values for diagnostics."""
    total: Optional[Tensor] = None
    per_sentence = []
    none_id = model.vocabs.none_id
    for group in group_by_length(batch):
        out = model.forward_batch(group)
        for b, ex in enumerate(group):
            dists = model.distributions_for(out, b)
            targets = targets_of(ex, model.vocabs)
            assignment, _ = assign(targets, dists, none_id)
            loss = bipartite_loss(
                assignment, targets,
                nx.take(out.p_c, b, axis=0), nx.take(out.p_n, b, axis=0),
                out.spans, none_id,
            )
            per_sentence.append((ex.id, float(loss.values)))
            total = loss if total is None else total + loss
    return total, per_sentence


def train_step(model, batch: list, optimizer: AdamW, cfg: TrainConfig, step: int) -> float:
    """One optimization step over a batch of sentences; loss is summed, the
    global gradient norm is clipped, and the learning rate follows the
    warmup-cosine schedule."""
    loss, per_sentence = _batch_losses(model, batch)
    for sid, value in per_sentence:
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite loss for sentence {sid!r}; aborting step")
    model.zero_grads()
    loss.backward()
    clip_gradients(model.parameters(), cfg.clip_norm)
    optimizer.step(lr_schedule(step, cfg))
    return float(loss.values)


def decode_groups(model, groups: list, workers: int = 1) -> list:
    """Decode length groups, optionally in parallel: parameters are
    immutable during inference, so concurrent read-only passes are safe.
    Results keep group order regardless of completion order."""
    if workers <= 1 or len(groups) <= 1:
        return [model.decode_batch(g) for g in groups]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(model.decode_batch, groups))


def evaluate(model, dataset: list, workers: int = 1) -> MetricsReport:
    """Decode every sentence and score exact-match micro P/R/F1, bucketed
    by gold entity length."""
    predictions, golds = [], []
    groups = group_by_length(dataset)
    for group, decoded in zip(groups, decode_groups(model, groups, workers)):
        for ex, ents in zip(group, decoded):
            golds.append(ex.entities)
            predictions.append(
                [
                    EntitySpan(p.start, p.end, model.vocabs.types[p.type_id])
                    for p in ents
                ]
            )
    return score(predictions, golds)


def fit(model, train_data: list, dev_data: list, cfg: TrainConfig,
        checkpoint_path=None, log=None) -> list:
    """Epoch loop: shuffle, step over batches, evaluate on dev, track the
    best dev F1 (checkpointing it when a path is given). Returns the
    per-epoch history."""
    rng = nx.Rng(cfg.seed).substream(7)
    optimizer = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    history = []
    best_f1 = -1.0
    step = 0
    order = list(range(len(train_data)))
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        rng.shuffle(order)
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_data[i] for i in order[lo : lo + cfg.batch_size]]
            epoch_loss += train_step(model, batch, optimizer, cfg, step)
            step += 1
        record = {
            "epoch": epoch,
            "loss": epoch_loss,
            "lr": lr_schedule(step, cfg),
            "seconds": round(time.perf_counter() - started, 3),
        }
        if dev_data:
            report = evaluate(model, dev_data)
            record["dev"] = report.to_dict()
            f1 = report.overall.f1
            if f1 > best_f1:
                best_f1 = f1
                record["best"] = True
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, step)
        history.append(record)
        if log is not None:
            log(record)
    if checkpoint_path is not None and not dev_data:
        save_checkpoint(checkpoint_path, model, step)
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"NSTRCKP1"


def save_checkpoint(path, model, step: int):
    """Versioned container: magic, a JSON header (config, vocabularies,
    step counter, parameter directory) and raw little-endian float32
    parameter payloads in directory order."""
    import json

    names = list(model.params.keys())
    header = {
        "version": 1,
        "step": int(step),
        "config": model.config,
        "vocab": model.vocabs.to_dict(),
        "contextual_dim": model.contextual_dim,
        "params": [
            {"name": n, "shape": list(model.params[n].shape)} for n in names
        ],
        "dtype": "<f4",
    }
    blob = b"".join(
        np.ascontiguousarray(model.params[n].values, dtype="<f4").tobytes() for n in names
    )
    payload = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.array([len(payload)], dtype="<u8").tobytes())
        fh.write(payload)
        fh.write(blob)


def load_checkpoint(path, contextual: Optional[dict] = None):
    """Rebuild the model from a checkpoint; returns (model, step).

    Parameter values are restored exactly as stored (float32); models
    configured for float64 receive an exact upcast.
    """
    import json

    from .encoder import Vocabularies
    from .errors import DataError
    from .model import Model

    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (size,) = np.frombuffer(fh.read(8), dtype="<u8")
        header = json.loads(fh.read(int(size)).decode("utf-8"))
        blob = fh.read()
    vocabs = Vocabularies.from_dict(header["vocab"])
    model = Model(header["config"], vocabs,
                  contextual=contextual, contextual_dim=header["contextual_dim"])
    offset = 0
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        if name not in model.params:
            raise DataError(f"{path}: unknown parameter {name!r} in checkpoint")
        if tuple(model.params[name].shape) != shape:
            raise DataError(
                f"{path}: parameter {name!r} has shape {shape}, model expects "
                f"{tuple(model.params[name].shape)}"
            )
        model.params[name].values = values.reshape(shape).astype(model.dtype)
    return model, int(header["step"])
