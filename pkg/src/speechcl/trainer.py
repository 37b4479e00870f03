"""Pretraining loop: paired-view batches, Adam with warmup, checkpoints.

Randomness is stateless per (seed, utterance, epoch), so a run resumed from
a checkpoint replays the remaining steps bit-exactly.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .alteration import AlterationConfig, alter
from .augment import AugmentConfig, NoiseBank, derive_rng, make_views
from .autodiff import DiffTensor, NumericError
from .dsp import Waveform, read_wav
from .features import FeatureMatrix, FrontendConfig, CmvnStats, apply_cmvn, fbank, normalize_per_utterance
from .model import EncoderConfig, ModelParams, encode, init_params, project, reconstruct
from .objective import ContrastiveBatch, DEFAULT_TEMPERATURE, nt_xent, recon_l1
from .tensorio import pack_bytes, read_tensors, unpack_bytes, write_tensors


class CheckpointNameError(KeyError):
    """Checkpoint holds (or is missing) a tensor the model does not expect."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    k: float = 0.5
    warmup_n: int = 8000
    d_model_for_lr: int | None = None  # resolved from the encoder config
    lr_exponent_sign: float = 0.5  # exponent on d_model; -0.5 selects the inverse-root convention
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip_norm: float = 5.0
    temperature: float = DEFAULT_TEMPERATURE
    contrastive_weight: float = 1.0
    recon_weight: float = 1.0
    recon_on_masked_only: bool = False
    share_view_alteration: bool = False
    crop_frames: int = 80
    dtype: str = "float32"
    snapshot_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.warmup_n < 1:
            raise ValueError("batch_size, epochs and warmup_n must all be >= 1")
        if abs(self.lr_exponent_sign) != 0.5:
            raise ValueError(f"lr_exponent_sign must be +0.5 or -0.5, got {self.lr_exponent_sign}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    def resolved(self, encoder: EncoderConfig) -> "TrainConfig":
        if self.d_model_for_lr is None:
            return replace(self, d_model_for_lr=encoder.d_model)
        return self


def lr_at(n: int, cfg: TrainConfig) -> float:
    """Warmup schedule: k * d_model^s * min(n^-0.5, n * warmup_n^-1.5)."""
    if n < 1:
        raise ValueError(f"step number must be >= 1, got {n}")
    if cfg.d_model_for_lr is None:
        raise ValueError("d_model_for_lr is unresolved; call TrainConfig.resolved(encoder_cfg)")
    return cfg.k * cfg.d_model_for_lr**cfg.lr_exponent_sign * min(n**-0.5, n * cfg.warmup_n**-1.5)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        state = cls()
        for name, p in params.trainable_items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, applied in sorted parameter order."""
    state.t += 1
    t = state.t
    for name, p in params.trainable_items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients to a global L2 norm cap; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * np.asarray(scale, dtype=grads[name].dtype)
    return norm


# ---------------------------------------------------------------------------
# checkpoints

_META_STEP = "meta/step"
_META_RNG = "meta/rng_state"
_META_CONFIG = "meta/config_json"


def save_checkpoint(path, params: ModelParams, adam: AdamState, step: int,
                    train_cfg: TrainConfig, rng: np.random.Generator) -> None:
    entries: dict[str, np.ndarray] = {}
    entries[_META_STEP] = np.asarray(float(step), dtype=np.float64)
    entries[_META_RNG] = pack_bytes(json.dumps(rng.bit_generator.state).encode("utf-8"))
    config_echo = {"train": asdict(train_cfg), "encoder": asdict(params.config)}
    entries[_META_CONFIG] = pack_bytes(json.dumps(config_echo, sort_keys=True).encode("utf-8"))
    for name in params.names():
        entries[f"param/{name}"] = params[name].data
    for name in sorted(adam.m):
        entries[f"adam/m/{name}"] = adam.m[name]
        entries[f"adam/v/{name}"] = adam.v[name]
    write_tensors(path, entries)


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    step: int
    train_cfg: TrainConfig
    rng: np.random.Generator


def load_checkpoint(path) -> Checkpoint:
    entries = read_tensors(path)
    for required in (_META_STEP, _META_RNG, _META_CONFIG):
        if required not in entries:
            raise CheckpointNameError(f"checkpoint is missing {required!r}")
    config_echo = json.loads(unpack_bytes(entries[_META_CONFIG]).decode("utf-8"))
    enc_cfg = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in config_echo["encoder"].items()})
    raw_train = {k: tuple(v) if isinstance(v, list) else v for k, v in config_echo["train"].items()}
    train_cfg = TrainConfig(**raw_train)
    step = int(entries[_META_STEP])

    dtype = np.float32 if train_cfg.dtype == "float32" else np.float64
    params = init_params(enc_cfg, seed=0, dtype=dtype)
    expected = {f"param/{n}" for n in params.names()}
    expected |= {f"adam/{mv}/{n}" for n, _ in params.trainable_items() for mv in ("m", "v")}
    expected |= {_META_STEP, _META_RNG, _META_CONFIG}
    unknown = set(entries) - expected
    if unknown:
        raise CheckpointNameError(f"checkpoint holds unknown tensors: {sorted(unknown)}")
    missing = expected - set(entries)
    if missing:
        raise CheckpointNameError(f"checkpoint is missing tensors: {sorted(missing)}")

    adam = AdamState(t=step)
    for name in params.names():
        stored = entries[f"param/{name}"]
        if stored.shape != params[name].data.shape:
            raise CheckpointNameError(f"tensor {name!r} has shape {stored.shape}, expected {params[name].data.shape}")
        params.tensors[name].data = stored
    for name, _ in params.trainable_items():
        adam.m[name] = entries[f"adam/m/{name}"]
        adam.v[name] = entries[f"adam/v/{name}"]

    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(unpack_bytes(entries[_META_RNG]).decode("utf-8"))
    return Checkpoint(params, adam, step, train_cfg, rng)


# ---------------------------------------------------------------------------
# dataset helpers


def load_wav_dir(path) -> list[tuple[str, Waveform]]:
    """All WAVs in a directory, lexicographic, utterance id = filename stem."""
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files under {path}")
    return [(f.stem, read_wav(f)) for f in files]


def worker_threads() -> int:
    """Worker-thread cap: SSCL_THREADS env var, else min(4, cpu count)."""
    env = os.environ.get("SSCL_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def crop_or_pad(values: np.ndarray, num_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop to a fixed frame count; zero-pad at the end if too short."""
    t = values.shape[0]
    if t > num_frames:
        start = int(rng.integers(0, t - num_frames + 1))
        return values[start : start + num_frames]
    if t < num_frames:
        return np.pad(values, ((0, num_frames - t), (0, 0)))
    return values


# ---------------------------------------------------------------------------
# trainer


class Trainer:
    """Owns model parameters, optimizer state and the view-building pipeline."""

    def __init__(
        self,
        dataset: list[tuple[str, Waveform]],
        encoder_cfg: EncoderConfig,
        train_cfg: TrainConfig,
        augment_cfg: AugmentConfig | None = None,
        alteration_cfg: AlterationConfig | None = None,
        frontend_cfg: FrontendConfig | None = None,
        noise_bank: NoiseBank | None = None,
        cmvn_stats: CmvnStats | None = None,
        params: ModelParams | None = None,
    ):
        self.dataset = dataset
        self.encoder_cfg = encoder_cfg
        self.train_cfg = train_cfg.resolved(encoder_cfg)
        self.augment_cfg = augment_cfg or AugmentConfig()
        self.alteration_cfg = alteration_cfg or AlterationConfig()
        self.frontend_cfg = frontend_cfg or FrontendConfig()
        self.noise_bank = noise_bank
        self.cmvn_stats = cmvn_stats
        self.dtype = np.float32 if self.train_cfg.dtype == "float32" else np.float64
        self.params = params if params is not None else init_params(encoder_cfg, self.train_cfg.seed, self.dtype)
        self.adam = AdamState.for_params(self.params)
        self.step = 0
        self.rng = np.random.default_rng(self.train_cfg.seed)
        self.metrics: list[dict] = []

    # -- view construction ---------------------------------------------------

    def _frontend(self, utt_id: str):
        cfg = self.frontend_cfg

        def run(w: Waveform) -> FeatureMatrix:
            f = fbank(w, cfg, utterance_id=utt_id)
            if cfg.cmvn == "utterance":
                return normalize_per_utterance(f)
            if cfg.cmvn == "speaker":
                if self.cmvn_stats is None:
                    raise ValueError("speaker CMVN requested but no statistics were provided")
                return apply_cmvn(f, self.cmvn_stats)
            return f

        return run

    def _build_pair(self, utt_id: str, wave: Waveform, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        """Two (altered, clean) cropped view matrices for one utterance."""
        seed = self.train_cfg.seed
        views = make_views(
            wave,
            self.augment_cfg,
            self.noise_bank,
            self._frontend(utt_id),
            derive_rng(seed, "views", utt_id, epoch),
        )
        alt_rows, clean_rows = [], []
        for view_idx, view in enumerate(views):
            cropped = crop_or_pad(view.values, self.train_cfg.crop_frames,
                                  derive_rng(seed, "crop", utt_id, epoch, view_idx))
            alt_token = "shared" if self.train_cfg.share_view_alteration else view_idx
            record = alter(view.copy_with(cropped), self.alteration_cfg,
                           derive_rng(seed, "alter", utt_id, epoch, alt_token))
            mask = np.zeros_like(cropped, dtype=bool)
            mask[record.time_mask, :] = True
            mask[:, record.channel_mask] = True
            alt_rows.append((record.altered.values, mask))
            clean_rows.append(cropped)
        return alt_rows, clean_rows

    def build_batch(self, items: list[tuple[str, Waveform]], epoch: int):
        """Assemble (2N, T, F) altered inputs, clean targets and loss masks."""
        pairs = [self._build_pair(u, w, epoch) for u, w in items]
        altered, masks, clean = [], [], []
        for alt_rows, clean_rows in pairs:
            for (a, m), c in zip(alt_rows, clean_rows):
                altered.append(a)
                masks.append(m)
                clean.append(c)
        x_alt = np.stack(altered).astype(self.dtype)
        x_clean = np.stack(clean).astype(self.dtype)
        return x_alt, x_clean, np.stack(masks)

    def _batch_items(self, step: int) -> tuple[int, list[tuple[str, Waveform]]]:
        """Deterministic batch composition for a given global step index."""
        spe = self.steps_per_epoch()
        epoch = step // spe
        b = step % spe
        order = derive_rng(self.train_cfg.seed, "shuffle", epoch).permutation(len(self.dataset))
        n = self.train_cfg.batch_size
        return epoch, [self.dataset[i] for i in order[b * n : (b + 1) * n]]

    def _prepare(self, step: int):
        epoch, items = self._batch_items(step)
        x_alt, x_clean, masks = self.build_batch(items, epoch)
        return epoch, items, x_alt, x_clean, masks

    # -- optimization ----------------------------------------------------------

    def _losses(self, x_alt: np.ndarray, x_clean: np.ndarray, masks: np.ndarray):
        cfg = self.train_cfg
        x = DiffTensor(x_alt)
        h = encode(x, self.params)
        # A zero-weighted branch is evaluated on detached inputs so backward
        # never walks it; its value still lands in the metrics.
        z = project(h if cfg.contrastive_weight > 0 else h.detach(), self.params)
        ntx = nt_xent(ContrastiveBatch(z, cfg.temperature))
        pred = reconstruct(h if cfg.recon_weight > 0 else h.detach(), self.params)
        target = self._recon_target(x_clean)
        mask = masks if cfg.recon_on_masked_only and not self.encoder_cfg.use_prenet else None
        rec = recon_l1(pred, DiffTensor(target), mask)
        return ntx, rec

    def _recon_target(self, x_clean: np.ndarray) -> np.ndarray:
        if not self.encoder_cfg.use_prenet:
            return x_clean
        stride = self.encoder_cfg.prenet_stride**2
        target = x_clean[:, ::stride, :]
        t_out = self.encoder_cfg.output_frames(x_clean.shape[1])
        if target.shape[1] > t_out:
            target = target[:, :t_out, :]
        elif target.shape[1] < t_out:
            target = np.pad(target, ((0, 0), (0, t_out - target.shape[1]), (0, 0)))
        return target

    def train_step(self, items: list[tuple[str, Waveform]], epoch: int) -> dict:
        x_alt, x_clean, masks = self.build_batch(items, epoch)
        return self._optimize(epoch, items, x_alt, x_clean, masks)

    def _optimize(self, epoch: int, items, x_alt, x_clean, masks) -> dict:
        cfg = self.train_cfg
        ntx, rec = self._losses(x_alt, x_clean, masks)
        terms = []
        if cfg.contrastive_weight > 0:
            terms.append(ntx * cfg.contrastive_weight)
        if cfg.recon_weight > 0:
            terms.append(rec * cfg.recon_weight)
        loss = terms[0] + terms[1] if len(terms) == 2 else (terms[0] if terms else ntx * 0.0)
        if not np.isfinite(loss.data):
            ids = [u for u, _ in items]
            raise NumericError(f"non-finite loss at step {self.step + 1} for utterances {ids}")
        self.params.zero_grads()
        loss.backward()
        grads = {name: p.grad for name, p in self.params.trainable_items() if p.grad is not None}
        grad_norm = clip_gradients(grads, cfg.grad_clip_norm)
        lr = lr_at(self.step + 1, cfg)
        adam_step(self.params, grads, self.adam, lr, cfg)
        self.step += 1
        entry = {
            "step": self.step,
            "epoch": epoch,
            "loss": float(loss.data),
            "ntxent": float(ntx.data),
            "recon": float(rec.data),
            "lr": lr,
            "grad_norm": grad_norm,
        }
        self.metrics.append(entry)
        return entry

    def steps_per_epoch(self) -> int:
        return len(self.dataset) // self.train_cfg.batch_size

    def train(self, metrics_path=None, checkpoint_dir=None, quiet: bool = True) -> list[dict]:
        """Run the configured number of epochs, resuming from self.step.

        When more than one worker thread is allowed, the next batch's views
        are built in a background thread while the current step computes; the
        batches themselves are a pure function of (seed, step), so the
        pipeline changes nothing but wall time.
        """
        cfg = self.train_cfg
        spe = self.steps_per_epoch()
        if spe < 1:
            raise ValueError(f"dataset of {len(self.dataset)} utterances cannot fill a batch of {cfg.batch_size}")
        total = cfg.epochs * spe
        sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
        pool = ThreadPoolExecutor(max_workers=1) if worker_threads() > 1 else None
        pending = pool.submit(self._prepare, self.step) if pool and self.step < total else None
        try:
            while self.step < total:
                prepared = pending.result() if pending is not None else self._prepare(self.step)
                if pool and self.step + 1 < total:
                    pending = pool.submit(self._prepare, self.step + 1)
                else:
                    pending = None
                epoch = prepared[0]
                entry = self._optimize(*prepared)
                if sink:
                    sink.write(json.dumps(entry) + "\n")
                if not quiet:
                    print(f"step {entry['step']}/{total}: loss={entry['loss']:.4f} lr={entry['lr']:.2e}")
                if checkpoint_dir and self.step % spe == 0 and (epoch + 1) in cfg.snapshot_epochs:
                    save_checkpoint(Path(checkpoint_dir) / f"checkpoint_epoch{epoch + 1}.sscn",
                                    self.params, self.adam, self.step, cfg, self.rng)
        finally:
            if pool:
                pool.shutdown(wait=False, cancel_futures=True)
            if sink:
                sink.close()
        return self.metrics

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.adam, self.step, self.train_cfg, self.rng)

    @classmethod
    def restore(cls, path, dataset, augment_cfg=None, alteration_cfg=None,
                frontend_cfg=None, noise_bank=None, cmvn_stats=None) -> "Trainer":
        ckpt = load_checkpoint(path)
        trainer = cls(dataset, ckpt.params.config, ckpt.train_cfg, augment_cfg,
                      alteration_cfg, frontend_cfg, noise_bank, cmvn_stats, params=ckpt.params)
        trainer.adam = ckpt.adam
        trainer.step = ckpt.step
        trainer.rng = ckpt.rng
        return trainer


def extract_features(params: ModelParams, dataset: list[tuple[str, Waveform]],
                     frontend_cfg: FrontendConfig, out_path,
                     cmvn_stats: CmvnStats | None = None) -> int:
    """Write each utterance's (T', d_model) encoder output to an archive."""
    entries: dict[str, np.ndarray] = {}
    for utt_id, wave in dataset:
        f = fbank(wave, frontend_cfg, utterance_id=utt_id)
        if frontend_cfg.cmvn == "utterance":
            f = normalize_per_utterance(f)
        elif frontend_cfg.cmvn == "speaker":
            if cmvn_stats is None:
                raise ValueError("speaker CMVN requested but no statistics were provided")
            f = apply_cmvn(f, cmvn_stats)
        x = f.values.astype(params["input_proj.w"].dtype)
        h = encode(x, params)
        entries[utt_id] = h.data
    write_tensors(out_path, entries)
    return len(entries)
