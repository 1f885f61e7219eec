"""Autoregressive Gaussian trajectory density q(y | x; theta).

Each step s_t ~ N(mu_t, L_t L_t^T), where mu_t is the previous position plus an
offset and L_t a Cholesky factor, both produced by two heads on a GRU torso.
The GRU consumes [previous offset || context embedding] at every step.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .config import TrainingConfig, WorldConfig
from .diffmath import AdamState, ParamVector, Tape, Var, adam_step
from .errors import ContractError, NumericalDomainError, TrainingError
from .types import GaussianStep, SceneContext, Trajectory

logger = logging.getLogger(__name__)

Record = tuple[SceneContext, Trajectory]


@dataclass(frozen=True, slots=True)
class Architecture:
    horizon: int = 16
    past_length: int = 8
    num_beams: int = 30
    hidden_size: int = 64
    dt: float = 0.25
    max_range: float = 20.0
    min_scale: float = 1e-2
    position_scale: float = 0.1  # input scaling of past and goal coordinates

    def __post_init__(self) -> None:
        if min(self.horizon, self.past_length, self.num_beams, self.hidden_size) < 1:
            raise ContractError("architecture sizes must be positive")
        if self.min_scale <= 0:
            raise ContractError("min_scale must be positive")

    @classmethod
    def from_world(cls, config: WorldConfig, **overrides) -> Architecture:
        return cls(
            horizon=config.horizon,
            past_length=config.past_length,
            num_beams=config.num_beams,
            dt=config.dt,
            max_range=config.max_range,
            **overrides,
        )

    @property
    def context_width(self) -> int:
        return 2 * self.past_length + self.num_beams + 2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hidden_size
        return {
            "enc_w": (h, self.context_width),
            "enc_b": (h,),
            "gru_wx": (3 * h, 2 + h),
            "gru_wh": (3 * h, h),
            "gru_b": (3 * h,),
            "mean_w": (2, h),
            "mean_b": (2,),
            "scale_w": (3, h),
            "scale_b": (3,),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Architecture:
        return cls(**data)


@dataclass(slots=True, eq=False)
class DensityModel:
    """Architecture plus parameters. Treated as immutable once built."""

    arch: Architecture
    params: ParamVector
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = ParamVector.from_shapes(self.arch.param_shapes()).layout
        if self.params.layout != expected:
            raise ContractError("parameter layout does not match the architecture")

    @classmethod
    def zeros(cls, arch: Architecture) -> DensityModel:
        return cls(arch, ParamVector.from_shapes(arch.param_shapes()))

    @classmethod
    def initialize(cls, arch: Architecture, rng_seed: int) -> DensityModel:
        """Scaled-normal weights, zero biases."""
        rng = np.random.default_rng(rng_seed)
        params = ParamVector.from_shapes(arch.param_shapes())
        head_gain = 0.1
        for name, shape in arch.param_shapes().items():
            if name.endswith("_b"):
                continue
            gain = head_gain if name in ("mean_w", "scale_w") else 1.0
            weights = rng.normal(0.0, gain / math.sqrt(shape[1]), size=shape)
            params = params.replace(name, weights)
        return cls(arch, params)

    def with_params(self, params: ParamVector, **meta) -> DensityModel:
        return DensityModel(self.arch, params, {**self.train_meta, **meta})


class _Network:
    """Forward pass of one model on a tape."""

    def __init__(self, tape: Tape, model: DensityModel, flat: Var | None = None):
        self.tape = tape
        self.arch = model.arch
        if flat is None:
            flat = tape.constant(model.params.values)
        self.p = model.params.unpack(flat)

    def encode(self, features: np.ndarray) -> Var:
        return dm.tanh(dm.matvec(features, self.p["enc_w"]) + self.p["enc_b"])

    def cell(self, h: Var, prev_offset, emb: Var) -> Var:
        size = self.arch.hidden_size
        u = dm.concat([self.tape.lift(prev_offset), emb], axis=-1)
        gx = dm.matvec(u, self.p["gru_wx"]) + self.p["gru_b"]
        gh = dm.matvec(h, self.p["gru_wh"])
        z = dm.sigmoid(gx[..., :size] + gh[..., :size])
        r = dm.sigmoid(gx[..., size : 2 * size] + gh[..., size : 2 * size])
        n = dm.tanh(gx[..., 2 * size :] + r * gh[..., 2 * size :])
        return n + z * (h - n)

    def heads(self, h: Var) -> tuple[Var, Var]:
        offset = dm.matvec(h, self.p["mean_w"]) + self.p["mean_b"]
        raw = dm.matvec(h, self.p["scale_w"]) + self.p["scale_b"]
        min_scale = self.arch.min_scale
        scale = dm.concat(
            [
                dm.softplus(raw[..., 0:1]) + min_scale,
                raw[..., 1:2],
                dm.softplus(raw[..., 2:3]) + min_scale,
            ],
            axis=-1,
        )
        return offset, scale

    def initial_state(self, batch: int) -> Var:
        return self.tape.constant(np.zeros((batch, self.arch.hidden_size)))

    def log_likelihood(self, emb: Var, y: Var) -> Var:
        """Teacher-forced sum over steps of log N(s_t; mu_t, Sigma_t). Shape (B,)."""
        batch = emb.shape[0]
        h = self.initial_state(batch)
        prev = self.tape.constant(np.zeros((batch, 2)))
        prev_offset = self.tape.constant(np.zeros((batch, 2)))
        total = None
        for t in range(self.arch.horizon):
            h = self.cell(h, prev_offset, emb)
            offset, scale = self.heads(h)
            s_t = y[:, t, :]
            lp = dm.gaussian_log_density(s_t, prev + offset, scale)
            total = lp if total is None else total + lp
            prev_offset = s_t - prev
            prev = s_t
        return total

    def rollout(self, emb: Var, noise: np.ndarray | None) -> np.ndarray:
        """Autoregressive draw; noise of shape (B, T, 2) or None for the mean."""
        batch = emb.shape[0]
        h = self.initial_state(batch)
        prev = np.zeros((batch, 2))
        prev_offset = np.zeros((batch, 2))
        states = np.zeros((batch, self.arch.horizon, 2))
        for t in range(self.arch.horizon):
            h = self.cell(h, prev_offset, emb)
            offset, scale = self.heads(h)
            s_t = prev + offset.value
            if noise is not None:
                l11, l21, l22 = (scale.value[:, i] for i in range(3))
                e = noise[:, t, :]
                s_t = s_t + np.column_stack([l11 * e[:, 0], l21 * e[:, 0] + l22 * e[:, 1]])
            states[:, t, :] = s_t
            prev_offset = s_t - prev
            prev = s_t
        return states


def context_features(ctxs: Sequence[SceneContext], arch: Architecture) -> np.ndarray:
    """Flattened, scaled [past || scan || goal] rows, shape (B, context_width)."""
    rows = []
    for ctx in ctxs:
        if ctx.past.shape != (arch.past_length, 2) or ctx.scan.shape != (arch.num_beams,):
            raise ContractError(
                f"context dims past={ctx.past.shape} scan={ctx.scan.shape} do not match "
                f"arch P={arch.past_length} R={arch.num_beams}"
            )
        rows.append(
            np.concatenate(
                [
                    ctx.past.reshape(-1) * arch.position_scale,
                    ctx.scan / arch.max_range,
                    ctx.goal * arch.position_scale,
                ]
            )
        )
    return np.stack(rows)


def _check_plans(ys: np.ndarray, arch: Architecture) -> np.ndarray:
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 3 or ys.shape[1:] != (arch.horizon, 2):
        raise ContractError(f"plans must have shape (B, {arch.horizon}, 2), got {ys.shape}")
    return ys


def encode_context(ctx: SceneContext, model: DensityModel) -> np.ndarray:
    tape = Tape()
    net = _Network(tape, model)
    return net.encode(context_features([ctx], model.arch)).value[0].copy()


def step_distribution(
    embedding: np.ndarray, prefix: np.ndarray, model: DensityModel
) -> GaussianStep:
    """Distribution of s_t given the embedding and the prefix s_1..s_{t-1}."""
    prefix = np.asarray(prefix, dtype=np.float64).reshape(-1, 2)
    if len(prefix) >= model.arch.horizon:
        raise ContractError("prefix must be shorter than the horizon")
    embedding = np.asarray(embedding, dtype=np.float64).reshape(1, -1)
    if embedding.shape[1] != model.arch.hidden_size:
        raise ContractError("embedding width does not match the architecture")
    tape = Tape()
    net = _Network(tape, model)
    emb = tape.constant(embedding)
    h = net.initial_state(1)
    prev = np.zeros((1, 2))
    prev_offset = np.zeros((1, 2))
    for s in prefix:
        h = net.cell(h, prev_offset, emb)
        prev_offset = s[None, :] - prev
        prev = s[None, :]
    h = net.cell(h, prev_offset, emb)
    offset, scale = net.heads(h)
    l11, l21, l22 = scale.value[0]
    return GaussianStep(
        mean=prev[0] + offset.value[0],
        scale_lower=np.array([[l11, 0.0], [l21, l22]]),
    )


def log_prob_graph(
    tape: Tape,
    model: DensityModel,
    features: np.ndarray,
    y: Var,
    flat: Var | None = None,
) -> Var:
    """Tape nodes for log q(y | x; theta), shape (B,).

    Pass a leaf for flat to differentiate w.r.t. the parameters; y may be a
    leaf to differentiate w.r.t. plan coordinates.
    """
    net = _Network(tape, model, flat)
    emb = net.encode(features)
    return net.log_likelihood(emb, y)


def log_prob_batch(
    ys: np.ndarray, ctxs: SceneContext | Sequence[SceneContext], model: DensityModel
) -> np.ndarray:
    """log q for a batch of plans; a single context is shared by every plan."""
    ys = _check_plans(ys, model.arch)
    if isinstance(ctxs, SceneContext):
        features = np.repeat(context_features([ctxs], model.arch), len(ys), axis=0)
    else:
        features = context_features(ctxs, model.arch)
    tape = Tape()
    return log_prob_graph(tape, model, features, tape.constant(ys)).value.copy()


def log_prob(y: Trajectory, ctx: SceneContext, model: DensityModel) -> float:
    return float(log_prob_batch(y.states[None], ctx, model)[0])


def sample_batch(
    ctx: SceneContext, model: DensityModel, num_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """num_samples autoregressive draws, shape (num_samples, T, 2)."""
    tape = Tape()
    net = _Network(tape, model)
    features = np.repeat(context_features([ctx], model.arch), num_samples, axis=0)
    noise = rng.standard_normal((num_samples, model.arch.horizon, 2))
    return net.rollout(net.encode(features), noise)


def sample(ctx: SceneContext, model: DensityModel, rng_seed: int) -> Trajectory:
    states = sample_batch(ctx, model, 1, np.random.default_rng(rng_seed))[0]
    return Trajectory(states, dt=model.arch.dt)


def mean_trajectory(ctx: SceneContext, model: DensityModel) -> Trajectory:
    """Rollout feeding each step's mean back as the next prefix state."""
    tape = Tape()
    net = _Network(tape, model)
    states = net.rollout(net.encode(context_features([ctx], model.arch)), None)[0]
    return Trajectory(states, dt=model.arch.dt)


def _stack_records(data: Sequence[Record], arch: Architecture) -> tuple[np.ndarray, np.ndarray]:
    features = context_features([ctx for ctx, _ in data], arch)
    targets = _check_plans(np.stack([y.states for _, y in data]), arch)
    return features, targets


def _record_key(record: Record) -> str:
    ctx, y = record
    digest = hashlib.sha256()
    for arr in (ctx.past, ctx.scan, ctx.goal, y.states):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def _nll_and_grad(
    model: DensityModel, features: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    tape = Tape()
    flat = tape.leaf(model.params.values)
    lp = log_prob_graph(tape, model, features, tape.constant(targets), flat)
    loss = dm.sum(lp) * (-1.0 / len(targets))
    grads = tape.backward(loss)
    return float(loss.value), grads[flat]


def _clip(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def mean_nll(model: DensityModel, data: Sequence[Record], chunk: int = 256) -> float:
    """Mean negative log-likelihood over records."""
    if not data:
        raise ContractError("mean_nll needs at least one record")
    features, targets = _stack_records(data, model.arch)
    total = 0.0
    for start in range(0, len(targets), chunk):
        tape = Tape()
        lp = log_prob_graph(
            tape, model, features[start : start + chunk], tape.constant(targets[start : start + chunk])
        )
        total -= float(np.sum(lp.value))
    return total / len(targets)


def train_mle(
    data: Sequence[Record],
    arch: Architecture,
    epochs: int = 20,
    batch_size: int = 32,
    rng_seed: int = 0,
    learning_rate: float = 1e-3,
    max_grad_norm: float | None = 10.0,
    init_seed: int | None = None,
) -> DensityModel:
    """Maximum-likelihood training with minibatch Adam.

    Records are put in a canonical order before the seed-derived shuffling, so
    the result depends on the multiset of records and the seeds only.
    """
    if not data:
        raise ContractError("train_mle needs at least one record")
    records = sorted(data, key=_record_key)
    features, targets = _stack_records(records, arch)
    model = DensityModel.initialize(arch, rng_seed if init_seed is None else init_seed)
    state = AdamState.zeros(len(model.params), learning_rate=learning_rate)
    rng = np.random.default_rng(rng_seed)
    n = len(targets)
    history: list[float] = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            try:
                loss, grad = _nll_and_grad(model, features[idx], targets[idx])
            except NumericalDomainError as exc:
                raise TrainingError(epoch, detail=str(exc)) from exc
            if not math.isfinite(loss):
                raise TrainingError(epoch, detail="non-finite NLL")
            params, state = adam_step(model.params, _clip(grad, max_grad_norm), state)
            model = model.with_params(params)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
        logger.info("epoch %d/%d train NLL %.4f", epoch + 1, epochs, history[-1])

    try:
        final_nll = mean_nll(model, records)
    except NumericalDomainError as exc:
        raise TrainingError(epochs, detail=str(exc)) from exc
    if not math.isfinite(final_nll):
        raise TrainingError(epochs, detail="non-finite final NLL")
    return model.with_params(
        model.params,
        seed=rng_seed,
        epochs=epochs,
        final_nll=final_nll,
        nll_history=history,
    )


def train_with_config(
    data: Sequence[Record], arch: Architecture, config: TrainingConfig, rng_seed: int, init_seed: int
) -> DensityModel:
    return train_mle(
        data,
        arch,
        epochs=config.epochs,
        batch_size=config.batch_size,
        rng_seed=rng_seed,
        learning_rate=config.learning_rate,
        max_grad_norm=config.max_grad_norm,
        init_seed=init_seed,
    )


def fine_tune(
    model: DensityModel,
    data: Sequence[Record],
    steps: int,
    learning_rate: float = 1e-3,
    max_grad_norm: float | None = 10.0,
) -> DensityModel:
    """Full-batch Adam steps on data, starting from model's parameters."""
    if not data:
        raise ContractError("fine_tune needs at least one record")
    features, targets = _stack_records(data, model.arch)
    state = AdamState.zeros(len(model.params), learning_rate=learning_rate)
    params = model.params
    for _ in range(steps):
        _, grad = _nll_and_grad(DensityModel(model.arch, params), features, targets)
        params, state = adam_step(params, _clip(grad, max_grad_norm), state)
    return model.with_params(params)
