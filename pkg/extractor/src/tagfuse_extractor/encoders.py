"""Audio and text encoders behind one small interface.

Two backends exist: pretrained transformer models ("transformers", needs the
`models` extra and local model availability) and a deterministic hash-feature
backend ("hash") for tests, smoke runs, and model-free environments. Model
inference never changes the on-disk contract: audio jobs emit a per-layer
frame-averaged matrix per track; text jobs emit one vector per track.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

HASH_BACKEND = "hash"

DEFAULT_AUDIO_LAYERS = 25
DEFAULT_AUDIO_DIM = 1024
DEFAULT_TEXT_DIM = 768


class AudioEncoder(Protocol):
    layers: int
    dim: int

    def hidden_states(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        """Per-frame, per-layer features of shape (frames, layers, dim)."""


class TextEncoder(Protocol):
    dim: int

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """One vector per input text, shape (len(texts), dim)."""


def average_layers(hidden: np.ndarray) -> np.ndarray:
    """Frame-average a (frames, layers, dim) stack down to (layers, dim)."""
    hidden = np.asarray(hidden)
    if hidden.ndim != 3 or hidden.shape[0] < 1:
        raise ValueError(f"expected (frames, layers, dim), got {hidden.shape}")
    return hidden.mean(axis=0, dtype=np.float64).astype(np.float32)


# --- deterministic hash backend -------------------------------------------------

_WINDOW_SECONDS = 0.5
_N_STATS = 8


def _window_stats(window: np.ndarray) -> np.ndarray:
    if window.size == 0:
        return np.zeros(_N_STATS)
    diffs = window[:-1] * window[1:] if window.size > 1 else np.zeros(1)
    return np.array([
        window.mean(),
        window.std(),
        window.min(),
        window.max(),
        np.abs(window).mean(),
        np.sqrt(np.mean(np.square(window))),
        np.count_nonzero(diffs < 0) / max(1, window.size - 1),
        window.size % 97 / 97.0,
    ])


@dataclass
class HashAudioEncoder:
    """Windowed signal statistics pushed through fixed seeded projections.

    Not a learned representation; exists so the full extraction path (decode,
    windowing, layer averaging, serialization) runs deterministically without
    downloading a pretrained model.
    """

    layers: int = DEFAULT_AUDIO_LAYERS
    dim: int = DEFAULT_AUDIO_DIM
    seed: int = 1337

    def __post_init__(self) -> None:
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        self._proj = rng.normal(size=(self.layers, self.dim, _N_STATS))

    def hidden_states(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0:
            raise ValueError("empty audio signal")
        hop = max(1, int(sample_rate * _WINDOW_SECONDS))
        windows = [samples[start:start + hop] for start in range(0, samples.size, hop)]
        out = np.empty((len(windows), self.layers, self.dim), dtype=np.float64)
        for t, window in enumerate(windows):
            stats = _window_stats(window)
            out[t] = self._proj @ stats
        return out


@dataclass
class HashTextEncoder:
    """Mean of per-token vectors derived from token digests; deterministic."""

    dim: int = DEFAULT_TEXT_DIM

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.Philox(key=seed))
        return rng.normal(size=self.dim)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = text.lower().split()
            if not tokens:
                continue
            out[i] = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return out


# --- pretrained transformer backend ----------------------------------------------


class TransformersAudioEncoder:
    """MERT-style encoder: all hidden-state layers over resampled audio."""

    def __init__(self, model_id: str, device: str = "cpu", target_rate: int = 24000):
        import torch  # deferred: only needed for real model runs
        from transformers import AutoModel

        self._torch = torch
        self.device = device
        self.target_rate = target_rate
        self.model = AutoModel.from_pretrained(model_id, trust_remote_code=True,
                                               output_hidden_states=True)
        self.model.eval().to(device)
        self.layers = self.model.config.num_hidden_layers + 1  # embeddings layer included
        self.dim = self.model.config.hidden_size

    def _resample(self, samples: np.ndarray, rate: int) -> np.ndarray:
        if rate == self.target_rate:
            return samples
        positions = np.arange(0, samples.size, rate / self.target_rate)
        return np.interp(positions, np.arange(samples.size), samples)

    def hidden_states(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        torch = self._torch
        audio = self._resample(np.asarray(samples, dtype=np.float32), sample_rate)
        with torch.no_grad():
            batch = torch.from_numpy(audio).unsqueeze(0).to(self.device)
            output = self.model(batch)
        stacked = torch.stack(output.hidden_states, dim=0)  # (layers, 1, frames, dim)
        return stacked.squeeze(1).permute(1, 0, 2).cpu().numpy()


class TransformersTextEncoder:
    """Encoder-side mean pooling; the output dim is read from the model config."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 16):
        import torch
        from transformers import AutoTokenizer, T5EncoderModel

        self._torch = torch
        self.device = device
        self.batch_size = batch_size
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = T5EncoderModel.from_pretrained(model_id)
        self.model.eval().to(device)
        self.dim = self.model.config.d_model

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = list(texts[start:start + self.batch_size])
                tokens = self.tokenizer(batch, return_tensors="pt", padding=True,
                                        truncation=True).to(self.device)
                hidden = self.model(**tokens).last_hidden_state
                mask = tokens["attention_mask"].unsqueeze(-1)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                chunks.append(pooled.cpu().numpy())
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.dim))


def make_audio_encoder(model_id: str, device: str = "cpu",
                       layers: int = DEFAULT_AUDIO_LAYERS,
                       dim: int = DEFAULT_AUDIO_DIM) -> AudioEncoder:
    if model_id == HASH_BACKEND:
        return HashAudioEncoder(layers=layers, dim=dim)
    return TransformersAudioEncoder(model_id, device=device)


def make_text_encoder(model_id: str, device: str = "cpu",
                      dim: int = DEFAULT_TEXT_DIM, batch_size: int = 16) -> TextEncoder:
    if model_id == HASH_BACKEND:
        return HashTextEncoder(dim=dim)
    return TransformersTextEncoder(model_id, device=device, batch_size=batch_size)
