"""The conditioned mel autoencoder: phoneme encoder, duration-driven Gaussian
down/upsampling, linguistics-conditioned mel encoder, RVQ bottleneck, and a
speaker-conditioned decoder. A quantizer bypass gives the continuous variant
for the discrete-vs-continuous ablation.

Layout conventions: batched activations are (B, L, D); masks are boolean
(B, L). Resampling weight matrices are (T frames, N phonemes), rows summing
to one in the upsampling direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import FeatureConfig, ModelConfig
from .containers import read_container, write_container
from .corpus import Batch, Utterance
from .dsp import MelSpectrogram
from .errors import ContractError, DataError
from .quantizer import RVQ, CodeSequence, decode_vectors, new_rvq, rvq_forward

_NEG_INF = -1e9


@dataclass
class ResampleWeights:
    matrix: np.ndarray  # (T, N), rows sum to 1
    centers: np.ndarray  # (N,) frame positions
    spreads: np.ndarray  # (N,)


def gaussian_weights(
    durations, total_frames: int, sigma_policy: str = "ratio", sigma_value: float = 1.0
) -> ResampleWeights:
    """Soft alignment between frames and phonemes from durations alone.

    W[t, i] = exp(-(t + 0.5 - c_i)^2 / (2 sigma_i^2)), normalized over i,
    with centers c_i at the middle of each phoneme's span.
    """
    durations = np.asarray(durations, dtype=np.float64)
    if durations.ndim != 1 or durations.size == 0:
        raise ContractError("gaussian_weights: need a non-empty 1-D duration list")
    if np.any(durations <= 0):
        raise ContractError("gaussian_weights: zero-length phoneme duration")
    if int(durations.sum()) != total_frames:
        raise ContractError(
            f"gaussian_weights: durations sum {int(durations.sum())} != frames {total_frames}"
        )
    centers = np.cumsum(durations) - durations / 2.0
    if sigma_policy == "ratio":
        spreads = np.maximum(durations, 1.0) / 3.0
    elif sigma_policy in ("fixed", "learnable"):
        spreads = np.full(durations.shape, float(sigma_value))
    else:
        raise ContractError(f"gaussian_weights: unknown sigma policy {sigma_policy!r}")
    t = np.arange(total_frames)[:, None] + 0.5
    logits = -((t - centers[None, :]) ** 2) / (2.0 * spreads[None, :] ** 2)
    w = np.exp(logits)
    w = w / np.maximum(w.sum(axis=1, keepdims=True), 1e-300)
    return ResampleWeights(matrix=w, centers=centers, spreads=spreads)


def _weights_matrix(weights) -> np.ndarray:
    return weights.matrix if isinstance(weights, ResampleWeights) else np.asarray(weights)


def downsample(frames, weights):
    """Frame-level -> phoneme-level via the transposed, column-renormalized
    weights: out_i = sum_t W[t,i] x_t / sum_t W[t,i]."""
    w = _weights_matrix(weights)
    x = np.asarray(frames)
    if x.shape[0] != w.shape[0]:
        raise ContractError(
            f"downsample: {x.shape[0]} frames vs weight matrix for {w.shape[0]}"
        )
    col = w / np.maximum(w.sum(axis=0, keepdims=True), 1e-300)
    return col.T @ x


def upsample(phoneme_feats, weights):
    """Phoneme-level -> frame-level: out_t = sum_i W[t,i] h_i (rows sum to 1)."""
    w = _weights_matrix(weights)
    h = np.asarray(phoneme_feats)
    if h.shape[0] != w.shape[1]:
        raise ContractError(
            f"upsample: {h.shape[0]} phonemes vs weight matrix for {w.shape[1]}"
        )
    return w @ h


# ---------------------------------------------------------------------------
# parameters


def _param_specs(cfg: ModelConfig, vocab_size: int, n_speakers: int):
    D, Fm = cfg.model_dim, cfg.ffn_mult * cfg.model_dim
    specs: list[tuple[str, tuple, float]] = [
        ("phoneme_embedding", (vocab_size, D), D**-0.5),
        ("speaker_embedding", (n_speakers, D), D**-0.5),
        ("mel_lift.w", (cfg.n_mels, D), cfg.n_mels**-0.5),
        ("mel_lift.b", (D,), 0.0),
        ("enc_proj.w", (D, cfg.code_dim), D**-0.5),
        ("enc_proj.b", (cfg.code_dim,), 0.0),
        ("dec_proj.w", (cfg.code_dim, D), cfg.code_dim**-0.5),
        ("dec_proj.b", (D,), 0.0),
        ("mel_out.w", (D, cfg.n_mels), D**-0.5),
        ("mel_out.b", (cfg.n_mels,), 0.0),
    ]
    if cfg.sigma_policy == "learnable":
        specs.append(("resampler.log_sigma", (1,), 0.0))
    for stack in ("penc", "menc", "dec"):
        for i in range(cfg.layers):
            p = f"{stack}.l{i}."
            for ffn in ("ffn1", "ffn2"):
                specs += [
                    (p + ffn + ".norm.gain", (D,), 1.0),
                    (p + ffn + ".norm.bias", (D,), 0.0),
                    (p + ffn + ".w1", (D, Fm), D**-0.5),
                    (p + ffn + ".b1", (Fm,), 0.0),
                    (p + ffn + ".w2", (Fm, D), Fm**-0.5),
                    (p + ffn + ".b2", (D,), 0.0),
                ]
            specs += [
                (p + "attn.norm.gain", (D,), 1.0),
                (p + "attn.norm.bias", (D,), 0.0),
                (p + "attn.wq", (D, D), D**-0.5),
                (p + "attn.bq", (D,), 0.0),
                (p + "attn.wk", (D, D), D**-0.5),
                (p + "attn.bk", (D,), 0.0),
                (p + "attn.wv", (D, D), D**-0.5),
                (p + "attn.bv", (D,), 0.0),
                (p + "attn.wo", (D, D), D**-0.5),
                (p + "attn.bo", (D,), 0.0),
                (p + "conv.norm.gain", (D,), 1.0),
                (p + "conv.norm.bias", (D,), 0.0),
                (p + "conv.in_a.w", (D, D), D**-0.5),
                (p + "conv.in_a.b", (D,), 0.0),
                (p + "conv.in_g.w", (D, D), D**-0.5),
                (p + "conv.in_g.b", (D,), 0.0),
                (p + "conv.dw", (cfg.conv_kernel, D), cfg.conv_kernel**-0.5),
                (p + "conv.out.w", (D, D), D**-0.5),
                (p + "conv.out.b", (D,), 0.0),
                (p + "final.norm.gain", (D,), 1.0),
                (p + "final.norm.bias", (D,), 0.0),
            ]
    return specs


def init_params(
    cfg: ModelConfig, vocab_size: int, n_speakers: int, rng: np.random.Generator, dtype=np.float32
) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, shape, scale in _param_specs(cfg, vocab_size, n_speakers):
        if name.endswith(".norm.gain"):
            arr = np.ones(shape)
        elif name == "resampler.log_sigma":
            arr = np.full(shape, np.log(cfg.sigma_value))
        elif scale == 0.0:
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, scale, size=shape)
        params[name] = arr.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# conformer blocks


def _ffn(pt: dict, prefix: str, x: Tensor) -> Tensor:
    h = ad.layer_norm(x, pt[prefix + ".norm.gain"], pt[prefix + ".norm.bias"])
    h = ad.linear(h, pt[prefix + ".w1"], pt[prefix + ".b1"])
    h = ad.swish(h)
    return ad.linear(h, pt[prefix + ".w2"], pt[prefix + ".b2"])


def _attention(pt: dict, prefix: str, x: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    B, L, D = x.data.shape
    dh = D // heads
    q = ad.linear(x, pt[prefix + ".wq"], pt[prefix + ".bq"])
    k = ad.linear(x, pt[prefix + ".wk"], pt[prefix + ".bk"])
    v = ad.linear(x, pt[prefix + ".wv"], pt[prefix + ".bv"])
    q = ad.transpose(ad.reshape(q, (B, L, heads, dh)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(k, (B, L, heads, dh)), (0, 2, 1, 3))
    v = ad.transpose(ad.reshape(v, (B, L, heads, dh)), (0, 2, 1, 3))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), dh**-0.5)
    pad = ~mask[:, None, None, :]  # mask out padded keys
    scores = ad.masked_fill(scores, pad, _NEG_INF)
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, v)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, L, D))
    return ad.linear(out, pt[prefix + ".wo"], pt[prefix + ".bo"])


def _conv_module(pt: dict, prefix: str, x: Tensor, mask_f: np.ndarray) -> Tensor:
    h = ad.layer_norm(x, pt[prefix + ".norm.gain"], pt[prefix + ".norm.bias"])
    a = ad.linear(h, pt[prefix + ".in_a.w"], pt[prefix + ".in_a.b"])
    g = ad.linear(h, pt[prefix + ".in_g.w"], pt[prefix + ".in_g.b"])
    h = ad.mul(a, ad.sigmoid(g))  # GLU gate
    h = ad.mul(h, mask_f)  # padded positions must not bleed through the kernel
    h = ad.conv1d_depthwise(h, pt[prefix + ".dw"])
    h = ad.swish(h)
    return ad.linear(h, pt[prefix + ".out.w"], pt[prefix + ".out.b"])


def conformer_block(pt: dict, prefix: str, x: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    mask_f = mask[..., None].astype(x.data.dtype)
    x = ad.add(x, ad.mul(_ffn(pt, prefix + "ffn1", x), 0.5))
    x = ad.add(x, _attention(pt, prefix + "attn", x, mask, heads))
    x = ad.add(x, _conv_module(pt, prefix + "conv", x, mask_f))
    x = ad.add(x, ad.mul(_ffn(pt, prefix + "ffn2", x), 0.5))
    x = ad.layer_norm(x, pt[prefix + "final.norm.gain"], pt[prefix + "final.norm.bias"])
    return ad.mul(x, mask_f)


def conformer_stack(
    pt: dict, stack: str, x: Tensor, mask: np.ndarray, layers: int, heads: int
) -> Tensor:
    for i in range(layers):
        x = conformer_block(pt, f"{stack}.l{i}.", x, mask, heads)
    return x


# ---------------------------------------------------------------------------
# batched resampling weights


def batch_resample_weights(pt: dict, batch: Batch, cfg: ModelConfig, dtype):
    """Row-normalized upsampling weights (B, T, N), zero at padded cells.

    Constant unless sigma_policy is 'learnable', in which case the matrix is
    differentiable w.r.t. the shared log-sigma parameter.
    """
    B, N = batch.durations.shape
    T = batch.mels.shape[1]
    d = batch.durations.astype(np.float64)
    centers = np.cumsum(d, axis=1) - d / 2.0
    t = np.arange(T)[None, :, None] + 0.5
    dist2 = (t - centers[:, None, :]) ** 2  # (B, T, N)
    ph_mask = batch.phoneme_mask[:, None, :].astype(np.float64)
    fr_mask = batch.frame_mask[:, :, None].astype(np.float64)
    if cfg.sigma_policy == "learnable":
        dist2_t = Tensor((-0.5 * dist2).astype(dtype))
        inv_s2 = ad.exp(ad.mul(pt["resampler.log_sigma"], -2.0))
        w = ad.exp(ad.mul(dist2_t, inv_s2))
        w = ad.mul(w, ph_mask.astype(dtype))
        w = ad.div(w, ad.add(ad.tsum(w, axis=2, keepdims=True), 1e-12))
        return ad.mul(w, fr_mask.astype(dtype))
    if cfg.sigma_policy == "ratio":
        spreads = np.maximum(d, 1.0) / 3.0
    else:
        spreads = np.full(d.shape, float(cfg.sigma_value))
    w = np.exp(-dist2 / (2.0 * np.maximum(spreads[:, None, :], 1e-12) ** 2))
    w = w * ph_mask
    w = w / np.maximum(w.sum(axis=2, keepdims=True), 1e-300)
    w = w * fr_mask
    return Tensor(w.astype(dtype))


def _downsample_t(frames: Tensor, w: Tensor) -> Tensor:
    col = ad.div(w, ad.add(ad.tsum(w, axis=1, keepdims=True), 1e-12))
    return ad.matmul(ad.transpose(col, (0, 2, 1)), frames)


def _upsample_t(phon: Tensor, w: Tensor) -> Tensor:
    return ad.matmul(w, phon)


# ---------------------------------------------------------------------------
# the codec


class CodecModel:
    def __init__(
        self,
        cfg: ModelConfig,
        features: FeatureConfig,
        vocab,
        speakers: list[str],
        rng: np.random.Generator | None = None,
        params: dict[str, np.ndarray] | None = None,
        rvq: RVQ | None = None,
        beta: float = 0.25,
        ema_decay: float = 0.99,
        ema_epsilon: float = 1e-5,
    ):
        cfg.validate("model")
        self.cfg = cfg
        self.features = features
        self.vocab = vocab
        self.speakers = list(speakers)
        self.dtype = np.float32 if params is None else next(iter(params.values())).dtype
        rng = rng if rng is not None else np.random.default_rng(0)
        if params is None:
            params = init_params(cfg, len(vocab), len(speakers), rng, dtype=np.float32)
        self.params = params
        if cfg.quantization == "rvq":
            self.rvq = rvq if rvq is not None else new_rvq(
                cfg.levels, cfg.codebook_size, cfg.code_dim,
                beta=beta, decay=ema_decay, epsilon=ema_epsilon, rng=rng,
            )
        else:
            self.rvq = None

    # -- parameter plumbing

    def param_tensors(self, train: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=train) for k, v in self.params.items()}

    def astype(self, dtype) -> "CodecModel":
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.dtype = np.dtype(dtype)
        return self

    # -- forward pieces

    def phoneme_encode(self, pt: dict, phonemes: np.ndarray, mask: np.ndarray) -> Tensor:
        """Phoneme IDs (B, N) -> linguistic features (B, N, D)."""
        emb = ad.embedding_lookup(pt["phoneme_embedding"], phonemes)
        return conformer_stack(pt, "penc", emb, mask, self.cfg.layers, self.cfg.heads)

    def forward_batch(self, pt: dict, batch: Batch, bypass: bool = False) -> dict:
        """Full training-path forward. Returns prediction, commitment,
        codes, encoder output, and the resampling weights."""
        dtype = self.dtype
        ph_mask = batch.phoneme_mask
        fr_mask = batch.frame_mask
        ling = self.phoneme_encode(pt, batch.phonemes, ph_mask)
        w = batch_resample_weights(pt, batch, self.cfg, dtype)
        mels = Tensor(batch.mels.astype(dtype))
        ph_mel = _downsample_t(mels, w)
        h = ad.add(ad.linear(ph_mel, pt["mel_lift.w"], pt["mel_lift.b"]), ling)
        h = conformer_stack(pt, "menc", h, ph_mask, self.cfg.layers, self.cfg.heads)
        z = ad.linear(h, pt["enc_proj.w"], pt["enc_proj.b"])  # (B, N, d)
        use_quantizer = self.rvq is not None and not bypass
        if use_quantizer:
            codes, latent, commitment = rvq_forward(self.rvq, z, mask=ph_mask)
        else:
            codes, latent, commitment = None, z, Tensor(np.zeros((), dtype=dtype))
        pred = self._decode_latent(pt, latent, ling, batch.speaker_ids, w, fr_mask, ph_mask)
        return {
            "pred": pred,
            "commitment": commitment,
            "codes": codes,
            "encoder_output": z,
            "weights": w,
        }

    def _decode_latent(
        self,
        pt: dict,
        latent: Tensor,
        ling: Tensor,
        speaker_ids: np.ndarray,
        w: Tensor,
        fr_mask: np.ndarray,
        ph_mask: np.ndarray,
    ) -> Tensor:
        spk = ad.embedding_lookup(pt["speaker_embedding"], np.asarray(speaker_ids))
        spk = ad.reshape(spk, (latent.data.shape[0], 1, self.cfg.model_dim))
        h = ad.linear(latent, pt["dec_proj.w"], pt["dec_proj.b"])
        h = ad.add(ad.add(h, ling), spk)
        h = ad.mul(h, ph_mask[..., None].astype(self.dtype))
        frames = _upsample_t(h, w)
        frames = conformer_stack(pt, "dec", frames, fr_mask, self.cfg.layers, self.cfg.heads)
        return ad.linear(frames, pt["mel_out.w"], pt["mel_out.b"])

    # -- single-utterance operations

    def _single_batch(self, phonemes, durations, speaker_id, mel_values=None) -> Batch:
        phonemes = np.asarray(phonemes, dtype=np.int64)
        durations = np.asarray(durations, dtype=np.int64)
        T = int(durations.sum())
        M = self.cfg.n_mels
        mels = np.zeros((1, T, M)) if mel_values is None else mel_values[None, ...]
        return Batch(
            phonemes=phonemes[None, :],
            durations=durations[None, :],
            mels=mels,
            speaker_ids=np.array([speaker_id], dtype=np.int64),
            phoneme_mask=np.ones((1, len(phonemes)), dtype=bool),
            frame_mask=np.ones((1, T), dtype=bool),
            ids=["_single"],
            hop_length=self.features.hop_length,
            n_fft=self.features.n_fft,
            sample_rate=self.features.sample_rate,
        )

    def encode_utterance(self, utt: Utterance) -> CodeSequence:
        """Utterance -> per-phoneme code index tuples (speaker never enters)."""
        if self.rvq is None:
            raise ContractError("encode_utterance: model has no quantizer (continuous variant)")
        batch = self._single_batch(utt.phonemes, utt.durations, 0, utt.mel.values)
        pt = self.param_tensors(train=False)
        out = self.forward_batch(pt, batch)
        codes = out["codes"]
        return CodeSequence(indices=codes.indices[0], vectors=codes.vectors[0])

    def encode_continuous(self, utt: Utterance) -> np.ndarray:
        """Encoder output before quantization, (N, d)."""
        batch = self._single_batch(utt.phonemes, utt.durations, 0, utt.mel.values)
        pt = self.param_tensors(train=False)
        out = self.forward_batch(pt, batch, bypass=True)
        return out["encoder_output"].data[0]

    def decode_codes(
        self,
        codes: CodeSequence,
        phonemes,
        durations,
        speaker_id: int,
        level1_only: bool = False,
    ) -> MelSpectrogram:
        """Code sequence + conditioning -> mel with sum(durations) frames."""
        if self.rvq is None:
            raise ContractError("decode_codes: model has no quantizer (continuous variant)")
        phonemes = np.asarray(phonemes, dtype=np.int64)
        durations = np.asarray(durations, dtype=np.int64)
        n = codes.indices.shape[0]
        if not (n == len(phonemes) == len(durations)):
            raise ContractError(
                f"decode_codes: lengths disagree: {n} codes, {len(phonemes)} phonemes, "
                f"{len(durations)} durations"
            )
        vectors = decode_vectors(self.rvq, codes.indices, level1_only=level1_only)
        return self._decode_vectors_to_mel(vectors, phonemes, durations, speaker_id)

    def decode_continuous(self, z: np.ndarray, phonemes, durations, speaker_id: int) -> MelSpectrogram:
        phonemes = np.asarray(phonemes, dtype=np.int64)
        durations = np.asarray(durations, dtype=np.int64)
        if not (z.shape[0] == len(phonemes) == len(durations)):
            raise ContractError(
                f"decode_continuous: lengths disagree: {z.shape[0]} latents, "
                f"{len(phonemes)} phonemes, {len(durations)} durations"
            )
        return self._decode_vectors_to_mel(np.asarray(z), phonemes, durations, speaker_id)

    def _decode_vectors_to_mel(self, vectors, phonemes, durations, speaker_id) -> MelSpectrogram:
        if not 0 <= speaker_id < len(self.speakers):
            raise ContractError(f"speaker_id {speaker_id} out of range")
        batch = self._single_batch(phonemes, durations, speaker_id)
        pt = self.param_tensors(train=False)
        ling = self.phoneme_encode(pt, batch.phonemes, batch.phoneme_mask)
        w = batch_resample_weights(pt, batch, self.cfg, self.dtype)
        latent = Tensor(vectors[None, ...].astype(self.dtype))
        pred = self._decode_latent(
            pt, latent, ling, batch.speaker_ids, w, batch.frame_mask, batch.phoneme_mask
        )
        return MelSpectrogram(
            values=pred.data[0].astype(np.float64),
            hop_length=self.features.hop_length,
            n_fft=self.features.n_fft,
            sample_rate=self.features.sample_rate,
        )

    def reconstruct(
        self,
        utt: Utterance,
        override_speaker: int | None = None,
        override_codes: CodeSequence | None = None,
        bypass_quantizer: bool = False,
    ) -> MelSpectrogram:
        """Encode-then-decode with optional substitutions: a different
        speaker embedding, externally supplied codes, or no quantization."""
        speaker = utt.speaker_id if override_speaker is None else int(override_speaker)
        if bypass_quantizer:
            if override_codes is not None:
                raise ContractError("reconstruct: override_codes is meaningless with bypass")
            z = self.encode_continuous(utt)
            return self.decode_continuous(z, utt.phonemes, utt.durations, speaker)
        codes = self.encode_utterance(utt) if override_codes is None else override_codes
        if codes.indices.shape[0] != utt.n_phonemes:
            raise ContractError(
                f"reconstruct: override codes cover {codes.indices.shape[0]} phonemes, "
                f"utterance has {utt.n_phonemes}"
            )
        return self.decode_codes(codes, utt.phonemes, utt.durations, speaker)


# ---------------------------------------------------------------------------
# checkpoints (model part)

FORMAT_VERSION = 1


def model_arrays(model: CodecModel) -> dict[str, np.ndarray]:
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    if model.rvq is not None:
        for l, book in enumerate(model.rvq.levels):
            arrays[f"rvq.l{l}.entries"] = book.entries
            arrays[f"rvq.l{l}.ema_count"] = book.ema_count
            arrays[f"rvq.l{l}.ema_sum"] = book.ema_sum
    return arrays


def model_meta(model: CodecModel) -> dict:
    import dataclasses as dc

    return {
        "format_version": FORMAT_VERSION,
        "model_config": dc.asdict(model.cfg),
        "feature_config": dc.asdict(model.features),
        "vocab": model.vocab.to_json(),
        "speakers": model.speakers,
        "dtype": str(np.dtype(model.dtype)),
        "rvq": None
        if model.rvq is None
        else {
            "beta": model.rvq.beta,
            "levels": [
                {"decay": b.decay, "epsilon": b.epsilon, "initialized": b.initialized}
                for b in model.rvq.levels
            ],
        },
    }


def save_model(model: CodecModel, path: str) -> None:
    write_container(path, meta=model_meta(model), arrays=model_arrays(model))


def _model_from_parts(meta: dict, arrays: dict[str, np.ndarray]) -> CodecModel:
    from .corpus import PhonemeVocab
    from .quantizer import Codebook

    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"checkpoint format version mismatch: expected {FORMAT_VERSION}, "
            f"found {meta.get('format_version')}"
        )
    cfg = ModelConfig(**meta["model_config"])
    features = FeatureConfig(**meta["feature_config"])
    vocab = PhonemeVocab.from_json(meta["vocab"])
    dtype = np.dtype(meta["dtype"])
    params = {
        k[len("param.") :]: v.astype(dtype)
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    rvq = None
    if meta.get("rvq") is not None:
        books = []
        for l, info in enumerate(meta["rvq"]["levels"]):
            books.append(
                Codebook(
                    entries=arrays[f"rvq.l{l}.entries"],
                    ema_count=arrays[f"rvq.l{l}.ema_count"],
                    ema_sum=arrays[f"rvq.l{l}.ema_sum"],
                    decay=info["decay"],
                    epsilon=info["epsilon"],
                    initialized=info["initialized"],
                )
            )
        rvq = RVQ(levels=books, beta=meta["rvq"]["beta"])
    return CodecModel(
        cfg, features, vocab, meta["speakers"], params=params, rvq=rvq
    )


def load_model(path: str) -> CodecModel:
    meta, arrays = read_container(path)
    return _model_from_parts(meta, arrays)
