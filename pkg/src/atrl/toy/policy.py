"""Single-block attention policy over slot scenes, with manual gradients.

The network is deliberately minimal and deliberately attention-transparent:
one shared embedding table covers symbols wherever they occur (slot or
generated token), values are the input embeddings themselves, the attention
output is added straight into the residual stream, and logits are read
against the same embedding table (input/output weight tying). Attending a
context position is therefore, to first order, a vote for that position's
token: attention mass is the only channel through which one position can
inform another, and the recorded maps cannot misstate where information
flows. A learned value projection or untied output head would let content
ride a near-zero-attention channel by selective amplification, making the
maps lie — and the credit pipeline consumes exactly those maps.
Small enough that the full parameter gradient is hand-derived; the
finite-difference check in the trainer keeps that derivation honest.

Sequence layout fed to the block, for a trajectory of T generated tokens:

    position 0 .. V-1   slot embeddings (visual context)
    position V          begin-of-generation marker
    position V+1+t      generated token t, for t = 0 .. T-2

The query for generation step t sits at position V+t, so step t sees the
slots plus everything generated before it. Attention rows recorded at the
query positions are exactly the rows a step-by-step decode would produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor_io import AttentionTensor, TokenMeta


@dataclass
class ForwardCache:
    """Intermediates kept alive for the backward pass."""

    slots: np.ndarray        # (B, V) int
    tokens: np.ndarray       # (B, Tmax) int
    lengths: np.ndarray      # (B,) int
    ids_in: np.ndarray       # (B, Tmax) int, BOS then shifted tokens
    x: np.ndarray            # (B, N, d)
    q: np.ndarray            # (B, H, N, dh)
    k: np.ndarray            # (B, H, N, dh)
    v: np.ndarray            # (B, H, N, dh)
    attn: np.ndarray         # (B, H, N, N)
    ctx: np.ndarray          # (B, N, d)
    h: np.ndarray            # (B, N, d)
    logits: np.ndarray      # (B, Tmax, vocab_out)
    logp: np.ndarray        # (B, Tmax, vocab_out)
    step_mask: np.ndarray   # (B, Tmax) bool, True at live generation steps


class ToyPolicy:
    """Categorical policy over slot symbols and filler tokens."""

    def __init__(
        self,
        num_symbols: int = 10,
        num_fillers: int = 6,
        num_slots: int = 8,
        embed_dim: int = 16,
        heads: int = 2,
        max_len: int = 12,
        init_scale: float = 0.1,
        rng: np.random.Generator | None = None,
    ) -> None:
        if embed_dim % heads != 0:
            raise ValueError(f"embed_dim {embed_dim} not divisible by heads {heads}")
        self.num_symbols = num_symbols
        self.num_fillers = num_fillers
        self.num_slots = num_slots
        self.embed_dim = embed_dim
        self.heads = heads
        self.max_len = max_len
        self.vocab_out = num_symbols + num_fillers
        self.bos_token = self.vocab_out  # input-only id
        vocab_in = self.vocab_out + 1
        rng = rng if rng is not None else np.random.default_rng(0)
        d = embed_dim
        s = init_scale
        self.params: dict[str, np.ndarray] = {
            "e_tok": rng.normal(0.0, s, (vocab_in, d)),
            "p_slot": rng.normal(0.0, s, (num_slots, d)),
            "p_gen": rng.normal(0.0, s, (max_len + 1, d)),
            "w_q": rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)),
            "w_k": rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)),
            "b_out": np.zeros(self.vocab_out),
        }

    # --- parameter plumbing -------------------------------------------------

    def param_names(self) -> list[str]:
        return list(self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        off = 0
        for n in self.params:
            size = self.params[n].size
            self.params[n] = flat[off:off + size].reshape(self.params[n].shape).copy()
            off += size
        if off != flat.size:
            raise ValueError(f"flat vector size {flat.size}, expected {off}")

    def clone(self) -> "ToyPolicy":
        twin = ToyPolicy(
            num_symbols=self.num_symbols,
            num_fillers=self.num_fillers,
            num_slots=self.num_slots,
            embed_dim=self.embed_dim,
            heads=self.heads,
            max_len=self.max_len,
        )
        twin.params = {n: p.copy() for n, p in self.params.items()}
        return twin

    # --- forward -------------------------------------------------------------

    def forward(
        self,
        slots: np.ndarray,
        tokens: np.ndarray,
        lengths: np.ndarray,
    ) -> ForwardCache:
        """Teacher-forced pass over a padded batch.

        ``tokens[b, :lengths[b]]`` are the generated tokens; logits/logp are
        produced for exactly those steps (pad steps carry junk and are
        masked out of every consumer).
        """
        p = self.params
        big, t_max = tokens.shape
        vv = self.num_slots
        d, hh = self.embed_dim, self.heads
        dh = d // hh
        n = vv + t_max

        ids_in = np.full((big, t_max), self.bos_token, dtype=np.intp)
        if t_max > 1:
            ids_in[:, 1:] = tokens[:, :-1]
        x = np.empty((big, n, d))
        x[:, :vv] = p["e_tok"][slots] + p["p_slot"][None, :, :]
        x[:, vv:] = p["e_tok"][ids_in] + p["p_gen"][None, :t_max, :]

        def heads_of(m: np.ndarray) -> np.ndarray:
            return m.reshape(big, n, hh, dh).transpose(0, 2, 1, 3)

        q = heads_of(x @ p["w_q"])
        k = heads_of(x @ p["w_k"])
        # Identity value projection, and the head concat goes straight into
        # the residual stream: a context position influences an output only
        # in proportion to the attention mass it receives. A learned value
        # or output projection could smuggle content through a
        # near-zero-attention channel by selectively amplifying one source
        # direction, making the recorded maps lie about information flow.
        v = heads_of(x)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
        causal = np.tril(np.ones((n, n), dtype=bool))
        scores = np.where(causal[None, None], scores, -np.inf)
        scores -= scores.max(axis=3, keepdims=True)
        expd = np.exp(scores)
        attn = expd / expd.sum(axis=3, keepdims=True)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(big, n, d)
        h = x + ctx

        # Tied output head: logits are similarities to the shared embedding
        # table, so attention mass on a column is a first-order vote for
        # that column's token.
        logits = h[:, vv:] @ p["e_tok"][: self.vocab_out].T + p["b_out"]
        shifted = logits - logits.max(axis=2, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
        step_mask = np.arange(t_max)[None, :] < lengths[:, None]
        return ForwardCache(
            slots=slots, tokens=tokens, lengths=lengths, ids_in=ids_in,
            x=x, q=q, k=k, v=v, attn=attn, ctx=ctx, h=h,
            logits=logits, logp=logp, step_mask=step_mask,
        )

    def token_log_probs(self, cache: ForwardCache) -> np.ndarray:
        """(B, Tmax) log-prob of each taken token; 0 at pad steps."""
        big, t_max = cache.tokens.shape
        lp = cache.logp[np.arange(big)[:, None], np.arange(t_max)[None, :],
                        cache.tokens]
        return np.where(cache.step_mask, lp, 0.0)

    # --- backward ------------------------------------------------------------

    def backward(self, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(objective)/d(logits).

        ``dlogits`` must already be zero at pad steps. Returns a dict
        keyed like ``self.params``.
        """
        p = self.params
        big, t_max = cache.tokens.shape
        vv = self.num_slots
        d, hh = self.embed_dim, self.heads
        dh = d // hh
        n = vv + t_max

        dlogits = np.where(cache.step_mask[:, :, None], dlogits, 0.0)
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        # Tied head: e_tok picks up the output-side gradient here and the
        # input-side gradients below.
        h_gen = cache.h[:, vv:]
        grads["e_tok"][: self.vocab_out] += np.einsum("btd,btc->cd", h_gen, dlogits)
        grads["b_out"] = dlogits.sum(axis=(0, 1))
        dh_full = np.zeros((big, n, d))
        dh_full[:, vv:] = dlogits @ p["e_tok"][: self.vocab_out]

        dx = dh_full.copy()
        dctx = dh_full.reshape(big, n, hh, dh).transpose(0, 2, 1, 3)

        dattn = np.einsum("bhid,bhjd->bhij", dctx, cache.v)
        dv = np.einsum("bhij,bhid->bhjd", cache.attn, dctx)
        inner = (cache.attn * dattn).sum(axis=3, keepdims=True)
        dscores = cache.attn * (dattn - inner) / np.sqrt(dh)
        dq = dscores @ cache.k
        dk = np.einsum("bhij,bhid->bhjd", dscores, cache.q)

        def flat_heads(m: np.ndarray) -> np.ndarray:
            return m.transpose(0, 2, 1, 3).reshape(big, n, d)

        dqf, dkf, dvf = flat_heads(dq), flat_heads(dk), flat_heads(dv)
        grads["w_q"] = np.einsum("bni,bnj->ij", cache.x, dqf)
        grads["w_k"] = np.einsum("bni,bnj->ij", cache.x, dkf)
        dx += dqf @ p["w_q"].T + dkf @ p["w_k"].T + dvf

        dx_slots = dx[:, :vv]
        np.add.at(grads["e_tok"], cache.slots, dx_slots)
        grads["p_slot"] += dx_slots.sum(axis=0)
        dx_gen = np.where(cache.step_mask[:, :, None], dx[:, vv:], 0.0)
        np.add.at(grads["e_tok"], cache.ids_in, dx_gen)
        grads["p_gen"][:t_max] += dx_gen.sum(axis=0)
        return grads

    # --- trajectory views ------------------------------------------------------

    def attention_tensor(self, cache: ForwardCache, b: int) -> AttentionTensor:
        """Recorded attention for trajectory ``b`` as a (1, H, T, V+T) tensor."""
        t_len = int(cache.lengths[b])
        vv = self.num_slots
        rows = cache.attn[b, :, vv:vv + t_len, :vv + t_len]
        return AttentionTensor(values=rows[None], row_stochastic=True)

    def token_meta(self, gen_len: int) -> TokenMeta:
        """Modality labels for a trajectory of ``gen_len`` tokens."""
        return TokenMeta(ctx_modality="v" * self.num_slots + "l" * gen_len)

    def answer_of(self, tokens: np.ndarray, length: int) -> int | None:
        """Last emitted symbol token, the trajectory's committed answer.

        The whole sequence is answer-bearing: a stray symbol sampled late
        overrides whatever came before, the way a final stated result
        overrides intermediate work. Keeping a trajectory's answer intact
        is therefore a sequence-wide responsibility, not a single-token
        one. None when no symbol was emitted.
        """
        for t in range(length - 1, -1, -1):
            if tokens[t] < self.num_symbols:
                return int(tokens[t])
        return None
