"""Local-feature recovery: self-aware attention and text-guided spatial selection.

Both operate on token sequences of shape ``(M, d)``. The spatial branch views
the tokens as an ``H x W`` grid (``M == H * W``, square unless ``hw`` is
given). Its convolution weights are inputs; nothing here is trained.

Spatial-selection pipeline, in order:

1. 3x3 and 1x1 'same' convolutions of the grid (zero padding, no bias);
2. parameter-free cross-attention of each conv output with the label
   features: ``softmax(F T^T / scale) T``;
3. the two attended maps are concatenated along channels and reduced to two
   maps by channel-wise max and mean;
4. a depthwise convolution (one spatial kernel per map) whose two outputs
   are summed into a single logit map;
5. ``sigmoid`` gives the mask, which multiplies the input tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import read_matrix
from .types import row_softmax


def _tokens(x) -> np.ndarray:
    x = np.asarray(getattr(x, "rows", x), dtype=np.float64)
    if x.ndim != 2 or 0 in x.shape:
        raise ValueError(f"expected a non-empty (M, d) token matrix, got {x.shape}")
    return x


def saa_attention(V, scale: float | None = None) -> np.ndarray:
    """Row-stochastic attention computed from the values alone, ``softmax(V V^T / scale)``."""
    V = _tokens(V)
    scale = math.sqrt(V.shape[1]) if scale is None else float(scale)
    return row_softmax(V @ V.T, scale)


def saa(V, scale: float | None = None) -> np.ndarray:
    """Self-aware attention output ``A V`` (no projections, no parameters)."""
    V = _tokens(V)
    return saa_attention(V, scale) @ V


@dataclass(frozen=True)
class TssWeights:
    conv3: np.ndarray      # (3, 3, d_in, d_out)
    conv1: np.ndarray      # (1, 1, d_in, d_out)
    depthwise: np.ndarray  # (k, k, 2), k odd

    def __post_init__(self):
        c3 = np.array(self.conv3, dtype=np.float64)
        c1 = np.array(self.conv1, dtype=np.float64)
        dw = np.array(self.depthwise, dtype=np.float64)
        if c3.ndim != 4 or c3.shape[:2] != (3, 3):
            raise ValueError(f"conv3 must be (3, 3, d_in, d_out), got {c3.shape}")
        if c1.ndim != 4 or c1.shape[:2] != (1, 1):
            raise ValueError(f"conv1 must be (1, 1, d_in, d_out), got {c1.shape}")
        if c3.shape[2:] != c1.shape[2:]:
            raise ValueError("conv3 and conv1 channel dims differ")
        if dw.ndim != 3 or dw.shape[0] != dw.shape[1] or dw.shape[0] % 2 == 0 or dw.shape[2] != 2:
            raise ValueError(f"depthwise must be (k, k, 2) with odd k, got {dw.shape}")
        for name, arr in (("conv3", c3), ("conv1", c1), ("depthwise", dw)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d_in(self) -> int:
        return self.conv3.shape[2]

    @property
    def d_out(self) -> int:
        return self.conv3.shape[3]

    @classmethod
    def load(cls, directory) -> "TssWeights":
        """Read ``conv3``, ``conv1`` and ``depthwise`` matrix files from ``directory``.

        Each tensor is stored flattened to 2-D: conv3 as ``(9 * d_in, d_out)``,
        conv1 as ``(d_in, d_out)``, depthwise as ``(k * k, 2)``. The file
        suffix selects the matrix format (``.bin`` preferred, ``.csv`` accepted).
        """
        directory = Path(directory)

        def find(stem):
            for suffix in (".bin", ".csv"):
                if (directory / (stem + suffix)).exists():
                    return read_matrix(directory / (stem + suffix))
            raise FileNotFoundError(f"no {stem}.bin or {stem}.csv in {directory}")

        c3 = find("conv3")
        c1 = find("conv1")
        dw = find("depthwise")
        if c3.shape[0] % 9:
            raise ValueError(f"conv3 rows ({c3.shape[0]}) not a multiple of 9")
        k = math.isqrt(dw.shape[0])
        if k * k != dw.shape[0]:
            raise ValueError(f"depthwise rows ({dw.shape[0]}) not a perfect square")
        d_in = c3.shape[0] // 9
        return cls(c3.reshape(3, 3, d_in, c3.shape[1]),
                   c1.reshape(1, 1, c1.shape[0], c1.shape[1]),
                   dw.reshape(k, k, 2))

    def flat(self) -> dict[str, np.ndarray]:
        """The 2-D matrices :meth:`load` expects, keyed by file stem."""
        return {
            "conv3": self.conv3.reshape(-1, self.d_out),
            "conv1": self.conv1.reshape(-1, self.d_out),
            "depthwise": self.depthwise.reshape(-1, 2),
        }

    @classmethod
    def random(cls, d_in: int, d_out: int | None = None, k: int = 3, seed: int = 0,
               scale: float = 0.1) -> "TssWeights":
        rng = np.random.default_rng(seed)
        d_out = d_in if d_out is None else d_out
        return cls(rng.normal(0, scale, (3, 3, d_in, d_out)),
                   rng.normal(0, scale, (1, 1, d_in, d_out)),
                   rng.normal(0, 1.0, (k, k, 2)))


def grid_shape(m: int, hw: tuple[int, int] | None = None) -> tuple[int, int]:
    if hw is not None:
        h, w = hw
        if h * w != m:
            raise ValueError(f"grid {h}x{w} does not hold {m} tokens")
        return h, w
    side = math.isqrt(m)
    if side * side != m:
        raise ValueError(f"token count {m} is not a perfect square; pass hw explicitly")
    return side, side


def conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with zero 'same' padding; x (H, W, Cin), kernel (kh, kw, Cin, Cout)."""
    kh, kw = kernel.shape[:2]
    ph, pw = kh // 2, kw // 2
    H, W = x.shape[:2]
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((H, W, kernel.shape[3]))
    for di in range(kh):
        for dj in range(kw):
            out += xp[di:di + H, dj:dj + W, :] @ kernel[di, dj]
    return out


def depthwise_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel stride-1 'same' correlation; x (H, W, C), kernel (k, k, C)."""
    k = kernel.shape[0]
    p = k // 2
    H, W = x.shape[:2]
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    out = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            out += xp[di:di + H, dj:dj + W, :] * kernel[di, dj]
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def tss_mask(X, T, w: TssWeights, hw=None, attn_scale: float | None = None) -> np.ndarray:
    """Spatial mask in (0, 1), one value per token."""
    X = _tokens(X)
    T = _tokens(T)
    M, d = X.shape
    H, W = grid_shape(M, hw)
    if w.d_in != d:
        raise ValueError(f"weights expect d_in={w.d_in}, tokens have d={d}")
    if w.d_out != T.shape[1]:
        raise ValueError(f"weights produce d_out={w.d_out}, labels have d={T.shape[1]}")
    grid = X.reshape(H, W, d)
    scale = math.sqrt(w.d_out) if attn_scale is None else float(attn_scale)
    attended = []
    for kernel in (w.conv3, w.conv1):
        f = conv2d_same(grid, kernel).reshape(M, w.d_out)
        attended.append(row_softmax(f @ T.T, scale) @ T)
    cat = np.concatenate(attended, axis=1)
    pooled = np.stack([cat.max(axis=1), cat.mean(axis=1)], axis=1).reshape(H, W, 2)
    logits = depthwise_same(pooled, w.depthwise).sum(axis=2)
    return _sigmoid(logits).reshape(M)


def tss_forward(X, T, w: TssWeights, hw=None, attn_scale: float | None = None) -> np.ndarray:
    """Text-guided spatial selection: tokens scaled by their spatial mask."""
    X = _tokens(X)
    return tss_mask(X, T, w, hw, attn_scale)[:, None] * X


def lla_layer(prev, X, T, w: TssWeights, hw=None, saa_scale: float | None = None,
              attn_scale: float | None = None) -> np.ndarray:
    """One adapter step: ``prev + (saa(X) + tss_forward(X, T)) / 2``."""
    prev = _tokens(prev)
    X = _tokens(X)
    if prev.shape != X.shape:
        raise ValueError(f"shape mismatch: prev {prev.shape} vs X {X.shape}")
    return prev + 0.5 * (saa(X, saa_scale) + tss_forward(X, T, w, hw, attn_scale))
