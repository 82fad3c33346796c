"""Lightweight autoencoder that turns private samples into shareable embeddings.

Leaves keep the encoder; every node keeps the decoder and uses it to
regenerate identical bridge samples from the same embedding. Weights are
frozen once pre-training finishes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .nnkernel import DenseModel, ShapeError, sgd_step


class PretrainError(RuntimeError):
    def __init__(self, achieved_mse: float, mse_max: float):
        super().__init__(f"autoencoder held-out MSE {achieved_mse:.5f} exceeds limit {mse_max}")
        self.achieved_mse = achieved_mse
        self.mse_max = mse_max


@dataclass
class AutoEncoder:
    encoder: DenseModel
    decoder: DenseModel
    pretrain_fingerprint: str
    heldout_mse: float = float("nan")

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise ShapeError("encoder output and decoder input widths differ")

    @property
    def embed_dim(self) -> int:
        return self.encoder.output_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def param_count(self) -> int:
        return self.encoder.param_count + self.decoder.param_count

    def weights_digest(self) -> str:
        h = hashlib.sha256()
        for m in (self.encoder, self.decoder):
            h.update(m.flat_params().tobytes())
        return h.hexdigest()

    def to_text(self) -> str:
        return ("fingerprint " + self.pretrain_fingerprint + "\n[encoder]\n" + self.encoder.to_text()
                + "[decoder]\n" + self.decoder.to_text())

    @classmethod
    def from_text(cls, text: str) -> "AutoEncoder":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines[0].startswith("fingerprint ") or lines[1] != "[encoder]" or lines[4] != "[decoder]":
            raise ValueError("malformed autoencoder text")
        enc = DenseModel.from_text("\n".join(lines[2:4]))
        dec = DenseModel.from_text("\n".join(lines[5:7]))
        return cls(enc, dec, lines[0].split(None, 1)[1])


def encode(ae: AutoEncoder, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = ae.encoder.forward(x)
    return out[0] if x.ndim == 1 else out


def decode(ae: AutoEncoder, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    out = ae.decoder.forward(eps)
    return out[0] if eps.ndim == 1 else out


def reconstruction_mse(ae: AutoEncoder, x: np.ndarray) -> float:
    return float(np.mean((decode(ae, encode(ae, x)) - x) ** 2))


def _fingerprint(**config) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def pretrain(corpus: np.ndarray, epochs: int, lr: float, seed: int, embed_dim: int = 4,
             hidden: int = 8, batch_size: int = 32, holdout: float = 0.2,
             mse_max: float | None = 0.05) -> AutoEncoder:
    """Fit encoder/decoder by minibatch SGD on squared reconstruction error.

    The last ``holdout`` fraction of the corpus is never trained on and is
    used for the acceptance check against ``mse_max`` (skipped when None).
    """
    corpus = np.asarray(corpus, dtype=np.float64)
    n, d = corpus.shape
    n_hold = max(1, int(round(n * holdout)))
    train, held = corpus[:-n_hold], corpus[-n_hold:]
    rng = np.random.default_rng(seed)
    enc = DenseModel.initialize([d, hidden, embed_dim], rng)
    dec = DenseModel.initialize([embed_dim, hidden, d], rng)

    for _ in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            xb = train[order[start:start + batch_size]]
            emb, enc_cache = enc.forward_cached(xb)
            rec, dec_cache = dec.forward_cached(emb)
            d_rec = 2.0 * (rec - xb) / rec.size
            g_dec, d_emb = dec.backward(dec_cache, d_rec)
            g_enc, _ = enc.backward(enc_cache, d_emb)
            sgd_step(dec, g_dec, lr)
            sgd_step(enc, g_enc, lr)

    fp = _fingerprint(n=n, d=d, epochs=epochs, lr=lr, seed=seed, embed_dim=embed_dim,
                      hidden=hidden, batch_size=batch_size, holdout=holdout,
                      corpus=hashlib.sha256(corpus.tobytes()).hexdigest())
    ae = AutoEncoder(enc, dec, fp)
    ae.heldout_mse = reconstruction_mse(ae, held)
    if mse_max is not None and not ae.heldout_mse <= mse_max:
        raise PretrainError(ae.heldout_mse, mse_max)
    return ae
