"""Bidirectional transformer encoder over (source ∥ separator ∥ noisy target).

Source tokens embed by row selection, target positions embed as the
probability-weighted sum of word embeddings plus a linear time-step
embedding; the whole concatenated sequence attends to itself (pre-norm
blocks) and vocabulary logits are read off the target span only.

Checkpoints are a binary container of config JSON plus named tensors; the
exact byte layout is documented in docs/checkpoint-format.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .corpus import SEP_ID
from .tensor import Tensor

SELF_COND_MODES = ("none", "original", "averaged")

CKPT_MAGIC = b"SXDCKPT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class EncoderConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_len: int = 128
    dropout: float = 0.1
    self_cond_mode: str = "averaged"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.self_cond_mode not in SELF_COND_MODES:
            raise ValueError(f"self_cond_mode must be one of {SELF_COND_MODES}, got {self.self_cond_mode!r}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")


class EncoderModel:
    """Parameters plus the forward graph; rebuildable from a checkpoint.

    forward_calls counts every forward pass, which the sampler and trainer
    assert against (forward-pass budgets are part of the contract).
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.forward_calls = 0
        if rng is None:
            rng = np.random.default_rng(0)
        self._init_params(rng)

    # -- parameters -----------------------------------------------------

    def _param(self, name: str, array: np.ndarray) -> None:
        self.params[name] = Tensor(array.astype(self.dtype), requires_grad=True)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d, V = cfg.d_model, cfg.vocab_size
        std = 0.02

        def normal(*shape):
            return rng.normal(0.0, std, size=shape)

        self._param("tok_emb", normal(V, d))
        self._param("pos_emb", normal(cfg.max_len, d))
        self._param("time_w", normal(d))
        self._param("time_b", np.zeros(d))
        for i in range(cfg.layers):
            p = f"blocks.{i}."
            self._param(p + "ln1.g", np.ones(d))
            self._param(p + "ln1.b", np.zeros(d))
            for nm in ("wq", "wk", "wv", "wo"):
                self._param(p + "attn." + nm, normal(d, d))
            for nm in ("bq", "bk", "bv", "bo"):
                self._param(p + "attn." + nm, np.zeros(d))
            self._param(p + "ln2.g", np.ones(d))
            self._param(p + "ln2.b", np.zeros(d))
            self._param(p + "ff.w1", normal(d, cfg.d_ff))
            self._param(p + "ff.b1", np.zeros(cfg.d_ff))
            self._param(p + "ff.w2", normal(cfg.d_ff, d))
            self._param(p + "ff.b2", np.zeros(d))
        self._param("ln_f.g", np.ones(d))
        self._param("ln_f.b", np.zeros(d))
        self._param("out_w", normal(d, V))
        self._param("out_b", np.zeros(V))
        if cfg.self_cond_mode == "original":
            # concatenated (current ∥ previous) probabilities down to d_model
            self._param("selfcond_w", normal(2 * V, d))
            self._param("selfcond_b", np.zeros(d))

    def to_dtype(self, dtype) -> "EncoderModel":
        """Same parameters cast to another precision (for gradient checks)."""
        out = object.__new__(EncoderModel)
        out.config = self.config
        out.dtype = np.dtype(dtype)
        out.forward_calls = 0
        out.params = {
            name: Tensor(p.data.astype(out.dtype), requires_grad=True)
            for name, p in self.params.items()
        }
        return out

    # -- forward graph ---------------------------------------------------

    def time_embed(self, t_scaled: float) -> np.ndarray:
        """The d-vector the scalar time maps to: weight * t + bias."""
        if not 0.0 <= t_scaled <= 1.0:
            raise ValueError(f"scaled time step {t_scaled} outside [0, 1]")
        return self.params["time_w"].data * t_scaled + self.params["time_b"].data

    def build_input(self, src_ids, src_mask, target_probs, t_scaled,
                    self_cond_probs=None, training=False, rng=None):
        """Embed and concatenate; returns (hidden [B,T,d], attention bias [B,1,1,T]).

        The bias is 0 over real positions and -1e9 over source padding, so
        attention stays fully bidirectional across (source ∥ sep ∥ target).
        """
        cfg = self.config
        src_ids = np.asarray(src_ids, dtype=np.int64)
        src_mask = np.asarray(src_mask, dtype=bool)
        B, S = src_ids.shape
        probs = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs)
        probs = probs.astype(self.dtype, copy=False)
        L = probs.shape[1]
        total = S + 1 + L
        if total > cfg.max_len:
            raise ValueError(f"sequence of {total} positions exceeds max_len {cfg.max_len}")
        t_arr = np.asarray(t_scaled, dtype=self.dtype).reshape(-1)
        if t_arr.shape[0] == 1:
            t_arr = np.full(B, t_arr[0], dtype=self.dtype)
        if np.any(t_arr < 0) or np.any(t_arr > 1):
            raise ValueError("scaled time steps must lie in [0, 1]")

        sums = probs.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-5):
            worst = float(np.abs(sums - 1.0).max())
            raise ValueError(f"target probability rows must sum to 1 (worst deviation {worst:.2e})")

        tok = self.params["tok_emb"]
        src_h = T.gather_rows(tok, src_ids)
        sep_h = T.gather_rows(tok, np.full((B, 1), SEP_ID, dtype=np.int64))

        if cfg.self_cond_mode == "original":
            prev = self_cond_probs if self_cond_probs is not None else np.zeros_like(probs)
            inp = np.concatenate([probs, prev.astype(self.dtype, copy=False)], axis=-1)
            tgt_h = T.affine(Tensor(inp), self.params["selfcond_w"], self.params["selfcond_b"])
        else:
            if self_cond_probs is not None:
                raise ValueError("separate self-condition input is only valid in 'original' mode")
            tgt_h = T.matmul(Tensor(probs), tok)

        # time signal goes to the diffused span only; sources carry none
        t_col = t_arr.reshape(B, 1, 1)
        tvec = T.add(T.mul(Tensor(t_col), T.reshape(self.params["time_w"], (1, 1, cfg.d_model))),
                     self.params["time_b"])
        tgt_h = T.add(tgt_h, tvec)

        h = T.concat([src_h, sep_h, tgt_h], axis=1)
        h = T.add(h, T.slice_axis(self.params["pos_emb"], 0, 0, total))

        valid = np.concatenate([src_mask, np.ones((B, 1 + L), dtype=bool)], axis=1)
        bias = np.where(valid, 0.0, -1e9).astype(self.dtype)[:, None, None, :]

        if training and cfg.dropout > 0:
            h = T.dropout(h, cfg.dropout, rng, training=True)
        return h, bias

    def forward(self, src_ids, src_mask, target_probs, t_scaled,
                self_cond_probs=None, training=False, rng=None) -> Tensor:
        """Per-position vocabulary logits over the target span: [B, L, V]."""
        cfg = self.config
        if training and cfg.dropout > 0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")
        probs = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs)
        B, L = probs.shape[0], probs.shape[1]
        S = np.asarray(src_ids).shape[1]

        h, bias = self.build_input(src_ids, src_mask, target_probs, t_scaled,
                                   self_cond_probs, training, rng)
        H = cfg.heads
        dh = cfg.d_model // H
        total = S + 1 + L
        inv_sqrt = 1.0 / np.sqrt(dh)

        for i in range(cfg.layers):
            p = f"blocks.{i}."
            a = T.layer_norm(h, self.params[p + "ln1.g"], self.params[p + "ln1.b"])
            q = T.affine(a, self.params[p + "attn.wq"], self.params[p + "attn.bq"])
            k = T.affine(a, self.params[p + "attn.wk"], self.params[p + "attn.bk"])
            v = T.affine(a, self.params[p + "attn.wv"], self.params[p + "attn.bv"])
            qh = T.transpose(T.reshape(q, (B, total, H, dh)), (0, 2, 1, 3))
            kh = T.transpose(T.reshape(k, (B, total, H, dh)), (0, 2, 1, 3))
            vh = T.transpose(T.reshape(v, (B, total, H, dh)), (0, 2, 1, 3))
            scores = T.add(T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), inv_sqrt), Tensor(bias))
            attn = T.softmax(scores, axis=-1)
            if training and cfg.dropout > 0:
                attn = T.dropout(attn, cfg.dropout, rng, training=True)
            ctx = T.reshape(T.transpose(T.matmul(attn, vh), (0, 2, 1, 3)), (B, total, cfg.d_model))
            o = T.affine(ctx, self.params[p + "attn.wo"], self.params[p + "attn.bo"])
            if training and cfg.dropout > 0:
                o = T.dropout(o, cfg.dropout, rng, training=True)
            h = T.add(h, o)

            a2 = T.layer_norm(h, self.params[p + "ln2.g"], self.params[p + "ln2.b"])
            f = T.affine(T.gelu(T.affine(a2, self.params[p + "ff.w1"],
                                            self.params[p + "ff.b1"])),
                        self.params[p + "ff.w2"], self.params[p + "ff.b2"])
            if training and cfg.dropout > 0:
                f = T.dropout(f, cfg.dropout, rng, training=True)
            h = T.add(h, f)

        h = T.layer_norm(h, self.params["ln_f.g"], self.params["ln_f.b"])
        logits = T.affine(h, self.params["out_w"], self.params["out_b"])
        self.forward_calls += 1
        return T.slice_axis(logits, 1, S + 1, total)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: EncoderModel, extra: dict | None = None,
                    extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    """Write config + named tensors; no timestamps, so bytes are reproducible."""
    header = {"model": asdict(model.config), "extra": extra or {}}
    tensors: dict[str, np.ndarray] = {name: p.data for name, p in model.params.items()}
    if extra_tensors:
        overlap = set(tensors) & set(extra_tensors)
        if overlap:
            raise ValueError(f"extra tensor names collide with parameters: {sorted(overlap)}")
        tensors.update(extra_tensors)

    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (header dict, name->array). Raises on bad magic or truncation."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = _CODE_DTYPES[code]
            raw = fh.read(int(np.prod(shape)) * dtype.itemsize)
            if len(raw) != int(np.prod(shape)) * dtype.itemsize:
                raise ValueError(f"{path}: truncated tensor data for {name!r}")
            tensors[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        return header, tensors


def model_from_checkpoint(path, dtype=np.float32) -> tuple[EncoderModel, dict]:
    """Rebuild an EncoderModel (and the stored extra dict) from a checkpoint."""
    header, tensors = load_checkpoint(path)
    config = EncoderConfig(**header["model"])
    model = EncoderModel.__new__(EncoderModel)
    model.config = config
    model.dtype = np.dtype(dtype)
    model.forward_calls = 0
    model.params = {}
    probe = EncoderModel(config, rng=np.random.default_rng(0), dtype=dtype)
    missing = [n for n in probe.params if n not in tensors]
    if missing:
        raise ValueError(f"{path}: checkpoint missing parameters {missing[:4]}...")
    for name in probe.params:
        model.params[name] = Tensor(tensors[name].astype(model.dtype), requires_grad=True)
    return model, header.get("extra", {})
