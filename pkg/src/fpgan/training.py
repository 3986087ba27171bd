"""Alternating critic / generator optimization, checkpoints and telemetry.

One training *iteration* is ``n_critic`` discriminator updates, each on a
fresh batch, followed by a single generator update on the last batch.
The four modes switch the residual head and the same-domain (fixed-point)
terms independently:

=================  ============  ====================
mode               delta head    fixed-point terms
=================  ============  ====================
stargan            no            no
stargan_delta      yes           no
fixedpoint         no            yes
fixedpoint_delta   yes           yes
=================  ============  ====================
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .data import BatchStream
from .models import (
    ArchConfig,
    ConfigError,
    build_discriminator,
    build_generator,
    discriminate,
    translate,
)

log = logging.getLogger(__name__)

MODES = {
    "stargan": (False, False),
    "stargan_delta": (True, False),
    "fixedpoint": (False, True),
    "fixedpoint_delta": (True, True),
}

MAGIC = b"FPGANCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<9sH32sQ32s")


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, term: str, value: float):
        super().__init__(f"non-finite loss {term}={value} at iteration {iteration}")
        self.iteration = iteration
        self.term = term


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "fixedpoint_delta"
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    arch: ArchConfig = field(default_factory=ArchConfig)
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    n_critic: int = 5
    batch_size: int = 16
    total_iterations: int = 5000
    seed: int = 0
    checkpoint_every: int = 0
    lr_decay_start: int | None = None
    log_every: int = 1
    augment_flip: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if isinstance(self.arch, dict):
            self.arch = ArchConfig(**self.arch)
        if self.lr_decay_start is None:
            self.lr_decay_start = self.total_iterations // 2
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.total_iterations < 1:
            raise ConfigError("total_iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise ConfigError("checkpoint_every must be >= 0 and log_every >= 1")
        if not 0 <= self.lr_decay_start <= self.total_iterations:
            raise ConfigError("lr_decay_start must lie in [0, total_iterations]")

    @property
    def delta(self) -> bool:
        return MODES[self.mode][0]

    @property
    def fixed_point(self) -> bool:
        return MODES[self.mode][1]

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["weights"] = self.weights.to_dict()
        out["arch"] = self.arch.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


@dataclass
class TrainState:
    config: TrainConfig
    G: torch.nn.Module
    D: torch.nn.Module
    opt_G: torch.optim.Optimizer
    opt_D: torch.optim.Optimizer
    rng: torch.Generator
    iteration: int = 0
    averages: dict = field(default_factory=dict)
    stream_state: dict | None = None

    def update_averages(self, values: dict, momentum: float = 0.98) -> None:
        for k, v in values.items():
            prev = self.averages.get(k)
            self.averages[k] = v if prev is None else momentum * prev + (1 - momentum) * v


def init_state(config: TrainConfig) -> TrainState:
    G = build_generator(config.arch, seed=config.seed, delta=config.delta)
    D = build_discriminator(config.arch, seed=config.seed + 1)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_G = torch.optim.Adam(G.parameters(), lr=config.learning_rate, betas=betas)
    opt_D = torch.optim.Adam(D.parameters(), lr=config.learning_rate, betas=betas)
    rng = torch.Generator().manual_seed(config.seed + 2)
    return TrainState(config, G, D, opt_G, opt_D, rng)


def sample_targets(c_x: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    """Random target domains: uniform bits for d=1, a row permutation otherwise."""
    if c_x.shape[0] == 0:
        raise ValueError("empty label batch")
    if c_x.shape[1] == 1:
        return torch.randint(0, 2, c_x.shape, generator=rng).to(c_x.dtype)
    return c_x[torch.randperm(c_x.shape[0], generator=rng)]


def _check_finite(iteration: int, values: dict) -> None:
    for k, v in values.items():
        if not math.isfinite(v):
            raise TrainingDiverged(iteration, k, v)


def discriminator_step(state: TrainState, x, c_x, c_y) -> dict:
    cfg, G, D = state.config, state.G, state.D
    w = cfg.weights
    with torch.no_grad():
        fakes = [translate(G, x, c_y)]
        if cfg.fixed_point:
            fakes.append(translate(G, x, c_x))
    gp = L.gradient_penalty(D, x, fakes[0], generator=state.rng)
    adv = L.critic_loss(D, x, fakes, 0.0, w, reduction="mean")
    domain = L.domain_loss_real(discriminate(D, x)[1], c_x)
    critic = adv + w.lambda_gp * gp
    total = L.total_discriminator_loss({"critic": critic, "domain_real": domain}, w)
    values = {"d_adv": adv.item(), "d_gp": gp.item(), "d_domain_real": domain.item(),
              "d_total": total.item()}
    _check_finite(state.iteration, values)
    state.opt_D.zero_grad(set_to_none=True)
    total.backward()
    state.opt_D.step()
    return values


def generator_step(state: TrainState, x, c_x, c_y) -> dict:
    cfg, G, D = state.config, state.G, state.D
    w = cfg.weights
    for p in D.parameters():
        p.requires_grad_(False)
    try:
        fake = translate(G, x, c_y)
        rec = translate(G, fake, c_x)
        fakes, pairs = [fake], [(fake, c_y)]
        same = rec_same = None
        if cfg.fixed_point:
            same = translate(G, x, c_x)
            rec_same = translate(G, same, c_x)
            fakes.append(same)
            pairs.append((same, c_x))
        parts = {
            "adv": L.generator_adversarial_loss(D, fakes),
            "domain_fake": L.domain_loss_fake(D, pairs),
            "cycle": L.cycle_loss(x, rec, rec_same),
        }
        if cfg.fixed_point:
            parts["identity"] = L.conditional_identity_loss(x, same, True)
        total = L.total_generator_loss(parts, w)
    finally:
        for p in D.parameters():
            p.requires_grad_(True)
    values = {f"g_{k}": v.item() for k, v in parts.items()}
    values["g_total"] = total.item()
    _check_finite(state.iteration, values)
    state.opt_G.zero_grad(set_to_none=True)
    total.backward()
    state.opt_G.step()
    return values


def learning_rate_at(config: TrainConfig, iteration: int) -> float:
    start, total = config.lr_decay_start, config.total_iterations
    if iteration < start or total == start:
        return config.learning_rate
    return config.learning_rate * (total - iteration) / (total - start)


def _set_lr(state: TrainState, lr: float) -> None:
    for opt in (state.opt_G, state.opt_D):
        for group in opt.param_groups:
            group["lr"] = lr


def make_stream(config: TrainConfig, dataset) -> BatchStream:
    if isinstance(dataset, BatchStream):
        return dataset
    return BatchStream(dataset, config.batch_size, config.seed, config.augment_flip, drop_last=True)


def train_iteration(state: TrainState, stream: BatchStream) -> dict:
    cfg = state.config
    _set_lr(state, learning_rate_at(cfg, state.iteration))
    state.G.train()
    state.D.train()
    for _ in range(cfg.n_critic):
        xb, cb = stream.next_batch()
        x, c_x = torch.from_numpy(np.ascontiguousarray(xb)), torch.from_numpy(cb)
        c_y = sample_targets(c_x, state.rng)
        d_values = discriminator_step(state, x, c_x, c_y)
    g_values = generator_step(state, x, c_x, c_y)
    values = {**d_values, **g_values, "lr": state.opt_G.param_groups[0]["lr"]}
    state.iteration += 1
    state.update_averages(values)
    state.stream_state = stream.state_dict()
    return values


def train(config: TrainConfig, dataset, out_dir=None, state: TrainState | None = None,
          progress: bool = False) -> tuple[TrainState, list[tuple[int, str, float]]]:
    """Train to ``config.total_iterations``, resuming from ``state`` if given.

    With ``out_dir`` set, checkpoints ``ckpt_XXXXXX.fpgan`` are written every
    ``checkpoint_every`` iterations, ``final.fpgan`` at the end, and telemetry
    rows are appended to ``telemetry.csv``.
    """
    if state is None:
        state = init_state(config)
    stream = make_stream(config, dataset)
    if state.stream_state is not None:
        stream.load_state_dict(state.stream_state)
    telemetry = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _trim_telemetry(out / "telemetry.csv", state.iteration)
    bar = None
    if progress:
        from tqdm import tqdm

        bar = tqdm(total=config.total_iterations, initial=state.iteration, leave=False)
    while state.iteration < config.total_iterations:
        values = train_iteration(state, stream)
        it = state.iteration
        if it % config.log_every == 0 or it == config.total_iterations:
            rows = [(it, k, v) for k, v in values.items()]
            rows += [(it, f"avg_{k}", state.averages[k]) for k in values if k != "lr"]
            telemetry.extend(rows)
            if out is not None:
                append_telemetry(out / "telemetry.csv", rows)
        if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(state, out / f"ckpt_{it:06d}.fpgan")
        if bar is not None:
            bar.update(1)
    if bar is not None:
        bar.close()
    if out is not None:
        save_checkpoint(state, out / "final.fpgan")
    return state, telemetry


def _trim_telemetry(path: Path, iteration: int) -> None:
    # a rerun or resume into the same directory must not duplicate rows
    if not path.exists():
        return
    if iteration == 0:
        path.unlink()
        return
    kept = [row for row in read_telemetry(path) if row[0] <= iteration]
    path.unlink()
    append_telemetry(path, kept)


def append_telemetry(path, rows) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(["iter", "loss_name", "value"])
        for it, name, value in rows:
            writer.writerow([it, name, repr(float(value))])


def read_telemetry(path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as fh:
        return [(int(r["iter"]), r["loss_name"], float(r["value"])) for r in csv.DictReader(fh)]


def parameter_digest(*nets: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for net in nets:
        for name, tensor in net.state_dict().items():
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# -- checkpoints -------------------------------------------------------------

def _payload(state: TrainState) -> bytes:
    blob = {
        "config": state.config.to_dict(),
        "G": state.G.state_dict(),
        "D": state.D.state_dict(),
        "opt_G": state.opt_G.state_dict(),
        "opt_D": state.opt_D.state_dict(),
        "rng": state.rng.get_state(),
        "iteration": state.iteration,
        "averages": dict(state.averages),
        "stream": state.stream_state,
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    return buf.getvalue()


def save_checkpoint(state: TrainState, path) -> None:
    """Write atomically: header (magic, version, config digest, length, sha256) + payload."""
    path = Path(path)
    payload = _payload(state)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, state.config.digest(), len(payload),
                          hashlib.sha256(payload).digest())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated header)")
    magic, version, cfg_digest, length, checksum = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != length or hashlib.sha256(payload).digest() != checksum:
        raise CheckpointError(f"{path}: corrupt checkpoint (payload truncated or modified)")
    try:
        blob = torch.load(io.BytesIO(payload), weights_only=True)
        config = TrainConfig.from_dict(blob["config"])
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if config.digest() != cfg_digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    state = init_state(config)
    state.G.load_state_dict(blob["G"])
    state.D.load_state_dict(blob["D"])
    state.opt_G.load_state_dict(blob["opt_G"])
    state.opt_D.load_state_dict(blob["opt_D"])
    state.rng.set_state(blob["rng"])
    state.iteration = int(blob["iteration"])
    state.averages = dict(blob["averages"])
    state.stream_state = blob["stream"]
    return state
