"""Loss assembly, the optimization loop, evaluation, and checkpointing.

One seeded ``numpy`` generator drives batch sampling, codebook seeding and
dead-code reinitialization, so a fixed seed gives a bit-reproducible run and
a resumed run continues the loss curve of an uninterrupted one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics as mx
from .autodiff import AdamState, Tensor
from .config import TrainConfig
from .containers import read_container, write_container
from .corpus import Batch, Corpus, Utterance, make_batch
from .errors import ContractError, NumericError
from .model import FORMAT_VERSION, CodecModel, _model_from_parts, model_arrays, model_meta
from .quantizer import ema_update, quantize_level, reinit_dead_codes, seed_codebooks


@dataclass
class TrainState:
    model: CodecModel
    opt: AdamState
    tcfg: TrainConfig
    step: int = 0
    best_eval: float = float("inf")
    loss_at_100: float | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.tcfg.seed)


def new_train_state(model: CodecModel, tcfg: TrainConfig) -> TrainState:
    return TrainState(model=model, opt=AdamState(), tcfg=tcfg)


def initialize_output_bias(model: CodecModel, utterances: list[Utterance]) -> None:
    """Start the output projection at the corpus mean mel per band; removes
    the large constant error a zero-init decoder would spend steps on."""
    total = np.zeros(model.cfg.n_mels)
    frames = 0
    for u in utterances:
        total += u.mel.values.sum(axis=0)
        frames += u.mel.n_frames
    if frames:
        model.params["mel_out.b"] = (total / frames).astype(model.dtype)


# ---------------------------------------------------------------------------
# loss


def masked_l1_l2(pred: Tensor, target: np.ndarray, frame_mask: np.ndarray):
    """Mean absolute and mean squared error over unmasked mel cells only."""
    mask3 = frame_mask[:, :, None].astype(pred.data.dtype)
    count = float(frame_mask.sum()) * target.shape[2]
    diff = ad.sub(pred, Tensor(target.astype(pred.data.dtype)))
    l1 = ad.div(ad.tsum(ad.mul(ad.absolute(diff), mask3)), count)
    l2 = ad.div(ad.tsum(ad.mul(ad.mul(diff, diff), mask3)), count)
    return l1, l2


def compute_loss(model: CodecModel, pt: dict, batch: Batch, bypass: bool = False):
    """total = masked mean |err| + masked mean err^2 + commitment.

    Returns (total Tensor, parts dict of floats, forward dict). The
    commitment part arrives from the quantizer already weighted by beta.
    """
    out = model.forward_batch(pt, batch, bypass=bypass)
    pred = out["pred"]
    l1, l2 = masked_l1_l2(pred, batch.mels, batch.frame_mask)
    commitment = out["commitment"]
    total = ad.add(ad.add(l1, l2), commitment)
    if not np.all(np.isfinite(total.data)):
        per_utt = np.abs(pred.data - batch.mels).sum(axis=(1, 2))
        bad = [batch.ids[b] for b in range(len(batch.ids)) if not np.isfinite(per_utt[b])]
        raise NumericError(f"non-finite loss; offending utterances: {bad or batch.ids}")
    parts = {
        "l1": float(l1.data),
        "l2": float(l2.data),
        "commitment": float(commitment.data),
    }
    return total, parts, out


# ---------------------------------------------------------------------------
# one optimization step


def _codebook_updates(model: CodecModel, z: np.ndarray, mask: np.ndarray, state: TrainState):
    """EMA update per level on that level's input residual, then optional
    dead-code reinit. Assignments are recomputed with the same entries the
    forward pass used, so they match it exactly."""
    rvq = model.rvq
    flat = z.reshape(-1, rvq.dim).astype(np.float64)
    valid = mask.reshape(-1)
    reinit_now = (
        state.tcfg.dead_code_every > 0 and state.step % state.tcfg.dead_code_every == 0
    )
    reinit = 0
    residual = flat
    for book in rvq.levels:
        idx, q, _ = quantize_level(book, residual)
        ema_update(book, idx[valid], residual[valid])
        if reinit_now:
            # recycle onto this level's own input residuals; threshold scales
            # with the current mean count so rare codes are caught at any stage
            threshold = state.tcfg.dead_code_threshold * float(book.ema_count.mean())
            reinit += reinit_dead_codes(book, residual[valid], threshold, state.rng)
        residual = residual - q
    return reinit


def train_step(state: TrainState, batch: Batch) -> dict:
    """Forward, backward, Adam, EMA codebook update. A numeric failure skips
    the step (counter still advances)."""
    model = state.model
    tcfg = state.tcfg
    state.step += 1
    if model.rvq is not None and not model.rvq.levels[0].initialized:
        pt0 = model.param_tensors(train=False)
        warm = model.forward_batch(pt0, batch, bypass=True)
        z0 = warm["encoder_output"].data[batch.phoneme_mask]
        seed_codebooks(model.rvq, z0, state.rng)
    pt = model.param_tensors(train=True)
    try:
        total, parts, out = compute_loss(model, pt, batch)
        ad.backward(total)
        grads = {}
        for name, t in pt.items():
            if t.grad is not None:
                if not np.all(np.isfinite(t.grad)):
                    raise NumericError(f"non-finite gradient for {name!r}")
                grads[name] = t.grad
        if tcfg.grad_clip > 0:
            grads = ad.clip_global_norm(grads, tcfg.grad_clip)
        lr = tcfg.learning_rate
        if tcfg.warmup_steps > 0:
            lr *= min(1.0, state.step / tcfg.warmup_steps)
        if tcfg.learning_rate > 0 and grads:
            model.params = ad.adam_step(model.params, grads, state.opt, lr)
        reinit = 0
        if model.rvq is not None:
            reinit = _codebook_updates(
                model, out["encoder_output"].data, batch.phoneme_mask, state
            )
        record = {
            "step": state.step,
            "total": float(total.data),
            "l1": parts["l1"],
            "l2": parts["l2"],
            "commit": parts["commitment"],
            "reinit": reinit,
        }
        if out["codes"] is not None:
            k = model.cfg.codebook_size
            for l in range(model.rvq.n_levels):
                idx = out["codes"].indices[..., l][batch.phoneme_mask]
                record[f"usage_l{l + 1}"] = float(np.unique(idx).size) / k
        return record
    except NumericError as exc:
        return {"step": state.step, "skipped": True, "error": str(exc)}


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: CodecModel, eval_set: list[Utterance], level1_only: bool = False) -> dict:
    """Mean L1 and PSNR of reconstruction over an utterance set; optionally
    with the level-2 code contribution zeroed out."""
    if not eval_set:
        raise ContractError("evaluate: empty eval set")
    l1s, psnrs = [], []
    for utt in eval_set:
        if model.rvq is not None and level1_only:
            codes = model.encode_utterance(utt)
            recon = model.decode_codes(
                codes, utt.phonemes, utt.durations, utt.speaker_id, level1_only=True
            )
        else:
            recon = model.reconstruct(utt, bypass_quantizer=model.rvq is None)
        l1s.append(float(np.mean(np.abs(recon.values - utt.mel.values))))
        psnrs.append(mx.psnr_mel(utt.mel, recon))
    return {"l1": float(np.mean(l1s)), "psnr": float(np.mean(psnrs)), "n": len(eval_set)}


# ---------------------------------------------------------------------------
# checkpoints (full training state)


def save_checkpoint(state: TrainState, path: str) -> None:
    arrays = model_arrays(state.model)
    for name, arr in state.opt.m.items():
        arrays[f"opt.m.{name}"] = arr
    for name, arr in state.opt.v.items():
        arrays[f"opt.v.{name}"] = arr
    meta = model_meta(state.model)
    meta["train"] = {
        "config": state.tcfg.__dict__,
        "step": state.step,
        "best_eval": state.best_eval,
        "loss_at_100": state.loss_at_100,
        "adam_t": state.opt.t,
        "rng_state": state.rng.bit_generator.state,
    }
    write_container(path, meta=meta, arrays=arrays)


def load_checkpoint(path: str) -> TrainState:
    meta, arrays = read_container(path)
    if meta.get("format_version") != FORMAT_VERSION:
        from .errors import DataError

        raise DataError(
            f"checkpoint format version mismatch: expected {FORMAT_VERSION}, "
            f"found {meta.get('format_version')}"
        )
    model = _model_from_parts(meta, {k: v for k, v in arrays.items() if not k.startswith("opt.")})
    train_meta = meta.get("train", {})
    tcfg = TrainConfig(**train_meta.get("config", {}))
    opt = AdamState()
    opt.t = int(train_meta.get("adam_t", 0))
    dtype = model.dtype
    for key, arr in arrays.items():
        if key.startswith("opt.m."):
            opt.m[key[len("opt.m.") :]] = arr.astype(dtype)
        elif key.startswith("opt.v."):
            opt.v[key[len("opt.v.") :]] = arr.astype(dtype)
    rng = np.random.default_rng(tcfg.seed)
    if "rng_state" in train_meta:
        rng.bit_generator.state = train_meta["rng_state"]
    state = TrainState(
        model=model,
        opt=opt,
        tcfg=tcfg,
        step=int(train_meta.get("step", 0)),
        best_eval=float(train_meta.get("best_eval", float("inf"))),
        loss_at_100=train_meta.get("loss_at_100"),
        rng=rng,
    )
    return state


# ---------------------------------------------------------------------------
# the loop


def split_corpus(corpus: Corpus, eval_fraction: float) -> tuple[list[Utterance], list[Utterance]]:
    utts = corpus.utterances
    if eval_fraction <= 0:
        return list(utts), list(utts)
    n_eval = max(1, int(round(len(utts) * eval_fraction)))
    return list(utts[:-n_eval]), list(utts[-n_eval:])


def train(
    state: TrainState,
    corpus: Corpus,
    checkpoint_dir: str | None = None,
    log_path: str | None = None,
    bypass: bool = False,
) -> TrainState:
    """Run the loop until max_steps or the early-stop target. ``bypass`` is
    unused for a model built without a quantizer (it trains continuous by
    construction); kept for symmetry."""
    del bypass
    tcfg = state.tcfg
    train_utts, eval_utts = split_corpus(corpus, tcfg.eval_fraction)
    if not train_utts:
        raise ContractError("train: empty training set")
    if state.step == 0:
        initialize_output_bias(state.model, train_utts)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while state.step < tcfg.max_steps:
            picks = state.rng.integers(0, len(train_utts), size=tcfg.batch_size)
            batch = make_batch([train_utts[i] for i in picks])
            record = train_step(state, batch)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if state.step == 100 and "total" in record:
                state.loss_at_100 = record["total"]
            if state.step % tcfg.eval_every == 0:
                report = evaluate(state.model, eval_utts)
                if report["l1"] < state.best_eval:
                    state.best_eval = report["l1"]
                if log_fh:
                    log_fh.write(
                        json.dumps({"step": state.step, "eval": report}, sort_keys=True) + "\n"
                    )
            if checkpoint_dir and state.step % tcfg.checkpoint_every == 0:
                save_checkpoint(state, os.path.join(checkpoint_dir, "latest.ckpt"))
            if (
                tcfg.target_loss_ratio > 0
                and state.loss_at_100 is not None
                and "total" in record
                and record["total"] < tcfg.target_loss_ratio * state.loss_at_100
            ):
                break
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_dir:
        save_checkpoint(state, os.path.join(checkpoint_dir, "latest.ckpt"))
    return state
