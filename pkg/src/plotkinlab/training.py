"""Alternating encoder/decoder training for KO models.

Each epoch runs a block of decoder-only Adam steps at the decoder training
SNR, then a block of encoder-only steps at the encoder training SNR. Every
step draws a fresh message batch and fresh channel noise (infinite-data
regime) from generators derived deterministically from (seed, epoch, phase,
step), so a (seed, config, initial model) triple fully determines the final
parameters.

The encoder-only mode replaces the neural decoder with the differentiable
max-log decoder run over the full codebook, which is exact but limits the
code dimension.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step, backward, grad_or_zero
from .channel import snr_to_sigma
from .codes import all_messages
from .ko import Binding, KoModel, bind, ko_decode_graph, ko_encode_graph

ALTERNATING = "alternating"
ENCODER_ONLY_SOFTMAP = "encoder_only_softmap"

MAX_FULL_CODEBOOK_K = 16


class TrainingDiverged(RuntimeError):
    """The loss became non-finite; the aborted step is in the log."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    dec_steps: int = 500
    enc_steps: int = 50
    snr_dec: float = -5.0
    snr_enc: float = -3.0
    lr_dec: float = 1e-4
    lr_enc: float = 1e-5
    batch_size: int = 50000
    seed: int = 0
    mode: str = ALTERNATING
    clip_norm: float | None = None  # optional global-norm gradient clip

    def __post_init__(self):
        if min(self.epochs, self.dec_steps, self.enc_steps) < 0:
            raise ValueError("step counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_dec <= 0 or self.lr_enc <= 0:
            raise ValueError("learning rates must be positive")
        if self.mode not in (ALTERNATING, ENCODER_ONLY_SOFTMAP):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class TrainLog:
    records: list[tuple[str, int, int, float, float]] = field(default_factory=list)
    wall_seconds: float = 0.0
    checkpoint_path: str | None = None

    def add(self, phase: str, epoch: int, step: int, loss: float, gnorm: float):
        self.records.append((phase, epoch, step, loss, gnorm))

    def losses(self, phase: str | None = None) -> list[float]:
        return [r[3] for r in self.records if phase is None or r[0] == phase]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("phase,epoch,step,loss,grad_norm\n")
            for phase, epoch, step, loss, gnorm in self.records:
                fh.write(f"{phase},{epoch},{step},{loss!r},{gnorm!r}\n")


def sample_messages(batch_size: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """A batch of i.i.d. uniform k-bit message words."""
    return rng.integers(0, 2, size=(batch_size, k), dtype=np.uint8)


def bce_loss(llrs, messages) -> float:
    """Mean binary cross entropy over batch and bits.

    sigmoid(llr) is the probability of the bit being 0, so a zero LLR costs
    log 2 per bit and a confidently correct bit costs nothing. Evaluated
    via softplus for stability.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    m = np.asarray(messages, dtype=np.float64)
    if llrs.shape != m.shape:
        raise ValueError("LLR and message shapes disagree")
    return float(np.mean((1.0 - m) * np.logaddexp(0.0, -llrs)
                         + m * np.logaddexp(0.0, llrs)))


def _step_rng(seed: int, epoch: int, phase: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, phase, step])


def _noisy_output(x: ad.Node, sigma: float, channel_kind: str,
                  rng: np.random.Generator) -> ad.Node:
    """Channel pass as a tape op; fading gains and noise are constants, so
    gradients flow through the transmitted symbols only."""
    noise = sigma * rng.standard_normal(x.shape)
    if channel_kind == "awgn":
        return ad.add(x, ad.const(noise))
    if channel_kind == "rayleigh":
        gains = rng.rayleigh(scale=1.0 / np.sqrt(2.0), size=x.shape)
        return ad.add(ad.mul(ad.const(gains), x), ad.const(noise))
    if channel_kind == "bursty":
        hits = rng.random(x.shape) < 0.1
        w = np.where(hits, np.sqrt(2.0) * sigma * rng.standard_normal(x.shape), 0.0)
        return ad.add(x, ad.const(noise + w))
    raise ValueError(f"unknown channel {channel_kind!r}")


def _run_step(model: KoModel, msgs: np.ndarray, sigma: float, channel_kind: str,
              rng: np.random.Generator, binding: Binding) -> ad.Node:
    x = ko_encode_graph(model, msgs, binding)
    y = _noisy_output(x, sigma, channel_kind, rng)
    llrs, _ = ko_decode_graph(model, y, binding)
    return ad.bce_with_logits(llrs, msgs)


def _grad_norm(nodes) -> float:
    total = 0.0
    for nd in nodes:
        g = grad_or_zero(nd)
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def _clip_grads(grads: list[np.ndarray], clip_norm: float | None) -> list[np.ndarray]:
    if clip_norm is None:
        return grads
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total <= clip_norm:
        return grads
    scale = clip_norm / total
    return [g * scale for g in grads]


def train(model: KoModel, cfg: TrainConfig,
          channel_kind: str = "awgn") -> tuple[KoModel, TrainLog]:
    """Alternating training over a simulated channel; mutates and returns
    the model.

    Per epoch: cfg.dec_steps Adam updates of only the decoder blocks at
    snr_dec, then cfg.enc_steps updates of only the encoder blocks at
    snr_enc. The inactive parameter group is bound as constants, so it is
    bit-identical before and after each phase.
    """
    if cfg.mode == ENCODER_ONLY_SOFTMAP:
        return train_encoder_only_softmap(model, cfg)
    log = TrainLog()
    start = time.monotonic()
    adam_dec = AdamState.for_params(model.decoder_params(), cfg.lr_dec)
    adam_enc = AdamState.for_params(model.encoder_params(), cfg.lr_enc)

    for epoch in range(cfg.epochs):
        for phase, steps, snr, adam, train_enc in (
            ("dec", cfg.dec_steps, cfg.snr_dec, adam_dec, False),
            ("enc", cfg.enc_steps, cfg.snr_enc, adam_enc, True),
        ):
            sigma = snr_to_sigma(snr)
            for step in range(steps):
                rng = _step_rng(cfg.seed, epoch, 0 if phase == "dec" else 1, step)
                msgs = sample_messages(cfg.batch_size, model.k, rng)
                binding = bind(model, train_encoder=train_enc,
                               train_decoder=not train_enc)
                loss = _run_step(model, msgs, sigma, channel_kind, rng, binding)
                if not np.isfinite(loss.value):
                    log.add(phase, epoch, step, float(loss.value), float("nan"))
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, {phase} step {step}")
                backward(loss)
                nodes = (binding.encoder_nodes() if train_enc
                         else binding.decoder_nodes())
                grads = _clip_grads([grad_or_zero(nd) for nd in nodes],
                                    cfg.clip_norm)
                params = (model.encoder_params() if train_enc
                          else model.decoder_params())
                adam_step(adam, params, grads)
                log.add(phase, epoch, step, float(loss.value), _grad_norm(nodes))
    log.wall_seconds = time.monotonic() - start
    return model, log


def softmap_codebook_llrs(scores: ad.Node, k: int) -> ad.Node:
    """Differentiable max-log bit LLRs from a (batch, 2^k) correlation node.

    Bit i takes the difference of subset maxima over messages with bit i
    equal to 0 and 1, with gradients routed through the selected scores.
    Valid when the codebook rows share the same energy.
    """
    msgs = all_messages(k)
    s = scores.value
    batch = s.shape[0]
    llr_vals = np.empty((batch, k))
    arg0 = np.empty((batch, k), dtype=np.int64)
    arg1 = np.empty((batch, k), dtype=np.int64)
    for i in range(k):
        idx0 = np.flatnonzero(msgs[:, i] == 0)
        idx1 = np.flatnonzero(msgs[:, i] == 1)
        a0 = np.argmax(s[:, idx0], axis=1)
        a1 = np.argmax(s[:, idx1], axis=1)
        arg0[:, i] = idx0[a0]
        arg1[:, i] = idx1[a1]
        llr_vals[:, i] = s[np.arange(batch), arg0[:, i]] - s[np.arange(batch), arg1[:, i]]

    def vjp(g):
        ds = np.zeros_like(s)
        rows = np.arange(batch)
        for i in range(k):
            np.add.at(ds, (rows, arg0[:, i]), g[:, i])
            np.add.at(ds, (rows, arg1[:, i]), -g[:, i])
        return (ds,)

    return ad.custom_op(llr_vals, (scores,), vjp)


def _transpose(a: ad.Node) -> ad.Node:
    return ad.custom_op(a.value.T, (a,), lambda g: (g.T,))


def _gather_rows(a: ad.Node, idx: np.ndarray) -> ad.Node:
    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return ad.custom_op(a.value[idx], (a,), vjp)


def train_encoder_only_softmap(model: KoModel, cfg: TrainConfig) -> tuple[KoModel, TrainLog]:
    """Train only the encoder against the exact differentiable max-log
    decoder over the full codebook (k <= 16); decoder blocks are untouched."""
    if model.k > MAX_FULL_CODEBOOK_K:
        raise ValueError(f"k={model.k} too large for full-codebook decoding "
                         f"(limit {MAX_FULL_CODEBOOK_K})")
    log = TrainLog()
    start = time.monotonic()
    adam_enc = AdamState.for_params(model.encoder_params(), cfg.lr_enc)
    msgs_all = all_messages(model.k)
    sigma = snr_to_sigma(cfg.snr_enc)

    for epoch in range(cfg.epochs):
        for step in range(cfg.enc_steps):
            rng = _step_rng(cfg.seed, epoch, 2, step)
            msgs = sample_messages(cfg.batch_size, model.k, rng)
            noise = sigma * rng.standard_normal((cfg.batch_size, model.n))
            binding = bind(model, train_encoder=True)
            codebook = ko_encode_graph(model, msgs_all, binding)
            x = _gather_rows(codebook, _message_indices(msgs))
            y = ad.add(x, ad.const(noise))
            scores = ad.matmul(y, _transpose(codebook))
            llrs = softmap_codebook_llrs(scores, model.k)
            loss = ad.bce_with_logits(llrs, msgs)
            if not np.isfinite(loss.value):
                log.add("enc", epoch, step, float(loss.value), float("nan"))
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, encoder step {step}")
            backward(loss)
            nodes = binding.encoder_nodes()
            grads = _clip_grads([grad_or_zero(nd) for nd in nodes], cfg.clip_norm)
            adam_step(adam_enc, model.encoder_params(), grads)
            log.add("enc", epoch, step, float(loss.value), _grad_norm(nodes))
    log.wall_seconds = time.monotonic() - start
    return model, log


def _message_indices(msgs: np.ndarray) -> np.ndarray:
    k = msgs.shape[1]
    weights = (1 << np.arange(k - 1, -1, -1)).astype(np.int64)
    return msgs.astype(np.int64) @ weights


def ber_estimate(model: KoModel, snr_db: float, blocks: int, seed: int,
                 chunk: int = 10000) -> float:
    """Monte-Carlo bit error rate of a KO model on AWGN at one SNR point."""
    sigma = snr_to_sigma(snr_db)
    errors = 0
    done = 0
    idx = 0
    from .ko import ko_decode, ko_encode

    while done < blocks:
        b = min(chunk, blocks - done)
        rng = np.random.default_rng([seed, idx])
        msgs = sample_messages(b, model.k, rng)
        x = ko_encode(model, msgs)
        y = x + sigma * rng.standard_normal(x.shape)
        _, result = ko_decode(model, y)
        errors += int(np.sum(result.message != msgs))
        done += b
        idx += 1
    return errors / (blocks * model.k)
