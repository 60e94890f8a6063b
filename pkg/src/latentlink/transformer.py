"""Transformer internals shared by the diffusion planner and the AR executor.

Pre-norm blocks with multi-head attention and a GELU MLP, over the package's
autodiff engine. The only structural difference between the two agents is the
attention mask: the planner runs full bidirectional attention, the executor a
strictly causal one.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map with an optional low-rank additive adapter.

    The weight is stored input-major (d_in, d_out). An adapter, when present,
    contributes scale * x @ A^T @ B^T with A (r, d_in) and B (d_out, r); the
    base weight tensor is shared and never modified by adaptation.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype,
                 bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.w = Tensor(init_uniform(rng, (d_in, d_out), d_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None
        self.adapter: tuple[Tensor, Tensor, float] | None = None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.adapter is not None:
            a, b, scale = self.adapter
            low = T.matmul(T.matmul(x, T.swapaxes(a, 0, 1)), T.swapaxes(b, 0, 1))
            y = T.add(y, T.mul(low, Tensor(np.asarray(scale, dtype=x.dtype))))
        if self.b is not None:
            y = T.add(y, self.b)
        return y

    def adapted_view(self, a: Tensor, b: Tensor, scale: float) -> "Linear":
        view = object.__new__(Linear)
        view.d_in, view.d_out = self.d_in, self.d_out
        view.w, view.b = self.w, self.b
        view.adapter = (a, b, scale)
        return view

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class Attention:
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, dtype):
        if dim % n_heads != 0:
            raise T.ShapeError(f"dim {dim} not divisible by heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def __call__(self, x: Tensor, mask: Tensor | None) -> Tensor:
        length = x.shape[0]

        def split(t: Tensor) -> Tensor:
            return T.swapaxes(T.reshape(t, (length, self.n_heads, self.head_dim)), 0, 1)

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = T.matmul(q, T.swapaxes(k, 1, 2)) * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            scores = T.add(scores, mask)
        attn = T.softmax(scores, axis=-1)
        mixed = T.matmul(attn, v)
        merged = T.reshape(T.swapaxes(mixed, 0, 1), (length, self.dim))
        return self.wo(merged)

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name in ("wq", "wk", "wv", "wo"):
            out.extend(getattr(self, name).params(f"{prefix}.{name}"))
        return out


class Block:
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, dtype,
                 ffn_mult: int = 4):
        self.attn = Attention(dim, n_heads, rng, dtype)
        self.ffn_in = Linear(dim, ffn_mult * dim, rng, dtype)
        self.ffn_out = Linear(ffn_mult * dim, dim, rng, dtype)
        self.gain1 = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.gain2 = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor, mask: Tensor | None, eps: float) -> Tensor:
        x = T.add(x, self.attn(T.rmsnorm(x, self.gain1, eps), mask))
        h = self.ffn_out(T.gelu(self.ffn_in(T.rmsnorm(x, self.gain2, eps))))
        return T.add(x, h)

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = self.attn.params(f"{prefix}.attn")
        out.extend(self.ffn_in.params(f"{prefix}.ffn_in"))
        out.extend(self.ffn_out.params(f"{prefix}.ffn_out"))
        out.append((f"{prefix}.gain1", self.gain1))
        out.append((f"{prefix}.gain2", self.gain2))
        return out


class TransformerCore:
    """Embedding table, positional table, block stack, final norm, logit head."""

    NORM_EPS = 1e-5

    def __init__(self, vocab_size: int, dim: int, n_layers: int, n_heads: int,
                 max_len: int, causal: bool, rng: np.random.Generator,
                 dtype=np.float32):
        self.vocab_size = vocab_size
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        self.causal = causal
        self.dtype = np.dtype(dtype)
        self.emb = Tensor(init_uniform(rng, (vocab_size, dim), dim, self.dtype),
                          requires_grad=True)
        self.pos = Tensor(init_uniform(rng, (max_len, dim), dim, self.dtype),
                          requires_grad=True)
        self.blocks = [Block(dim, n_heads, rng, self.dtype) for _ in range(n_layers)]
        self.final_gain = Tensor(np.ones(dim, dtype=self.dtype), requires_grad=True)
        self.head = Linear(dim, vocab_size, rng, self.dtype, bias=False)
        self._mask_cache: dict[int, Tensor] = {}

    # -- forward -------------------------------------------------------------

    def _mask(self, length: int) -> Tensor | None:
        if not self.causal:
            return None
        cached = self._mask_cache.get(length)
        if cached is None:
            m = np.triu(np.full((length, length), -1e9, dtype=self.dtype), k=1)
            cached = Tensor(m)
            self._mask_cache[length] = cached
        return cached

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """Raw embedding rows, without positions (those are added in forward)."""
        return T.take_rows(self.emb, ids)

    def forward_rows(self, rows: Tensor) -> Tensor:
        """Input embedding rows (L, dim) to final-norm hidden states (L, dim)."""
        length = rows.shape[0]
        if length > self.max_len:
            raise T.ShapeError(f"sequence length {length} exceeds max_len {self.max_len}")
        if rows.shape[1] != self.dim:
            raise T.ShapeError(f"row width {rows.shape[1]} != model dim {self.dim}")
        x = T.add(rows, T.narrow(self.pos, 0, 0, length))
        mask = self._mask(length)
        for block in self.blocks:
            x = block(x, mask, self.NORM_EPS)
        return T.rmsnorm(x, self.final_gain, self.NORM_EPS)

    def forward_tokens(self, ids: np.ndarray) -> Tensor:
        return self.forward_rows(self.embed_tokens(ids))

    def logits(self, hidden: Tensor) -> Tensor:
        return self.head(hidden)

    # -- parameter registry ----------------------------------------------------

    def params(self) -> list[tuple[str, Tensor]]:
        out = [("emb", self.emb), ("pos", self.pos)]
        for i, block in enumerate(self.blocks):
            out.extend(block.params(f"blocks.{i}"))
        out.append(("final_gain", self.final_gain))
        out.extend(self.head.params("head"))
        return out

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.params()]

    def set_frozen(self, frozen: bool) -> None:
        for _, t in self.params():
            t.requires_grad = not frozen

    @property
    def frozen(self) -> bool:
        return all(not t.requires_grad for _, t in self.params())

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: t.data for name, t in self.params()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, t in self.params():
            src = arrays[prefix + name]
            if src.shape != t.shape:
                raise T.ShapeError(f"checkpoint entry {name} has shape {src.shape}, "
                                   f"expected {t.shape}")
            t.data = np.ascontiguousarray(src.astype(self.dtype))
