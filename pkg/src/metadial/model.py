"""Two-stage copy-augmented seq2seq dialog model (belief span, then response).

A shared GRU encoder reads ``B_{t-1} <eos_b> R_{t-1} <eos_r> U_t <eos_u>``.
The belief decoder emits ``B_t`` and may copy tokens of the user utterance;
the response decoder starts from the match-indicator embedding and may copy
tokens of the belief span.  Each emission distribution is

    P_i(v) = [(1 - g_i) P_vocab_i(v) + g_i P_copy_i(v)] / normaliser,
    P_copy_i(v) = (1/Z) sum_{j : x_j = v} exp(psi_j),

with ``g_i = sigmoid(w . s_i + b)``.  Belief copy scores are
``psi_j = sigmoid(h_enc_j W_b) . s_i`` over user positions; response copy
scores are ``psi_j = sigmoid(h_b_j W_r) . h_b_j`` over belief-span positions,
where ``h_b_j`` is the belief-decoder state that emitted the ``j``-th span
token.  Both decoders use additive attention over the encoder states.

All functions take the parameter dict explicitly so the meta-learner can
evaluate the same graph at temporary parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus_io import EOS_R, GO, Batch, Vocab, collate
from .schema import EOS_B, BeliefState, DomainSpec, KnowledgeBase, MatchIndicator, kb_query, parse_belief

DECODERS = ("bdec", "rdec")
_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 50
    hidden: int = 50
    dropout: float = 0.5
    max_belief_len: int = 30
    max_response_len: int = 50
    init_scale: float = 0.08
    prob_floor: float = 1e-12
    trainable_embeddings: bool = True


def param_shapes(vocab_size: int, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    e, h, v = cfg.emb_dim, cfg.hidden, vocab_size
    shapes = {
        "emb": (v, e),
        "match_emb": (3, e),
        "enc_wx": (e, 3 * h), "enc_wh": (h, 3 * h), "enc_bx": (3 * h,), "enc_bh": (3 * h,),
    }
    for d in DECODERS:
        shapes.update({
            f"{d}_att_we": (h, h), f"{d}_att_ws": (h, h), f"{d}_att_v": (h, 1),
            f"{d}_wx": (e + h, 3 * h), f"{d}_wh": (h, 3 * h), f"{d}_bx": (3 * h,), f"{d}_bh": (3 * h,),
            f"{d}_out_w": (2 * h, v), f"{d}_out_b": (v,),
            f"{d}_gate_w": (h, 1), f"{d}_gate_b": (1,),
            f"{d}_copy_w": (h, h),
        })
    return shapes


def _is_bias(name: str) -> bool:
    return name.endswith(("_bx", "_bh", "_out_b", "_gate_b"))


def init_params(vocab_size: int, cfg: ModelConfig, rng=None, dtype=np.float32, embeddings=None) -> dict[str, ad.Tensor]:
    """Weights uniform in ``[-init_scale, init_scale]``, biases zero.

    ``embeddings`` (V x emb_dim), when given, replaces the random table.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {}
    for name, shape in param_shapes(vocab_size, cfg).items():
        if _is_bias(name):
            data = np.zeros(shape)
        else:
            data = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape)
        params[name] = ad.param(data.astype(dtype), name=name)
    if embeddings is not None:
        emb = np.asarray(embeddings, dtype=dtype)
        if emb.shape != (vocab_size, cfg.emb_dim):
            raise ad.ShapeError(f"embedding table {emb.shape} does not match {(vocab_size, cfg.emb_dim)}")
        params["emb"].data = emb.copy()
    return params


def resize_vocab(params: dict[str, ad.Tensor], new_size: int, cfg: ModelConfig, rng=None, new_rows=None):
    """Grow every vocabulary-indexed tensor to ``new_size`` entries; existing rows are kept.

    New embedding rows come from ``new_rows`` when given (shape
    ``(new_size - old_size, emb_dim)``), else small uniform noise.  New
    output-projection columns are drawn the same way; new biases are zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    old = params["emb"].shape[0]
    if new_size < old:
        raise ValueError(f"cannot shrink vocabulary from {old} to {new_size}")
    out = dict(params)
    extra = new_size - old
    if extra == 0:
        return out
    dtype = params["emb"].dtype
    rows = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(extra, cfg.emb_dim)) if new_rows is None else new_rows
    out["emb"] = ad.param(np.concatenate([params["emb"].data, np.asarray(rows, dtype=dtype)]), name="emb")
    for d in DECODERS:
        w = params[f"{d}_out_w"].data
        cols = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(w.shape[0], extra)).astype(dtype)
        out[f"{d}_out_w"] = ad.param(np.concatenate([w, cols], axis=1), name=f"{d}_out_w")
        b = params[f"{d}_out_b"].data
        out[f"{d}_out_b"] = ad.param(np.concatenate([b, np.zeros(extra, dtype=dtype)]), name=f"{d}_out_b")
    return out


# ---------------------------------------------------------------- dropout masks

def sample_dropout_masks(batch: Batch, cfg: ModelConfig, rng) -> dict[str, np.ndarray] | None:
    """Keep-masks for the input embeddings of encoder and both decoders.

    Sampled once per batch so every loss evaluation on that batch (the MAML
    inner and outer passes) sees the same units dropped.
    """
    if cfg.dropout <= 0.0:
        return None
    keep = 1.0 - cfg.dropout
    b = len(batch)
    return {
        "enc": (rng.random((b, batch.enc_ids.shape[1], cfg.emb_dim)) < keep).astype(np.float32),
        "bdec": (rng.random((b, batch.bspan_out.shape[1], cfg.emb_dim)) < keep).astype(np.float32),
        "rdec": (rng.random((b, batch.resp_out.shape[1], cfg.emb_dim)) < keep).astype(np.float32),
    }


# ---------------------------------------------------------------- building blocks

def encode(params, enc_ids: np.ndarray, enc_mask: np.ndarray, cfg: ModelConfig, masks=None):
    """Run the encoder; returns (states B x T x H, final state B x H).

    Padded steps carry the previous state, so the final state is the state
    after each row's last real token.
    """
    b, _ = enc_ids.shape
    dtype = params["emb"].dtype
    x = ad.embedding(params["emb"], enc_ids)
    if masks is not None:
        x = ad.dropout(x, masks["enc"], cfg.dropout)
    h0 = ad.tensor(np.zeros((b, cfg.hidden), dtype=dtype))
    states = ad.gru_sequence(x, h0, params["enc_wx"], params["enc_wh"], params["enc_bx"], params["enc_bh"],
                             step_mask=enc_mask)
    return states, states[:, -1]


@dataclass
class _EncoderView:
    states: ad.Tensor          # B x T x H
    final: ad.Tensor           # B x H
    neg_mask: np.ndarray       # B x T, 0 on real positions, -1e9 on padding


def attend(params, d: str, enc: _EncoderView, proj: ad.Tensor, s: ad.Tensor) -> ad.Tensor:
    """Additive attention of state ``s`` (B x H) over encoder states; returns the context (B x H).

    ``proj`` holds the encoder states already multiplied by ``W_e``.
    """
    return ad.additive_attention(proj, s, params[f"{d}_att_ws"], params[f"{d}_att_v"], enc.states, enc.neg_mask)


def _step(params, d: str, enc: _EncoderView, proj, x: ad.Tensor, s: ad.Tensor):
    ctx = attend(params, d, enc, proj, s)
    s = ad.gru_cell(ad.concat([x, ctx], axis=-1), s, params[f"{d}_wx"], params[f"{d}_wh"],
                    params[f"{d}_bx"], params[f"{d}_bh"])
    return s, ctx


def mixture(params, d: str, states: ad.Tensor, ctxs: ad.Tensor, copy_scores: ad.Tensor,
            copy_ids: np.ndarray, copy_mask: np.ndarray):
    """Gated, renormalized vocabulary/copy mixture for every decoder step.

    ``states``/``ctxs`` are B x L x H.  ``copy_scores`` are psi values of
    shape B x L x J (or B x 1 x J when they do not depend on the step);
    ``copy_ids`` and ``copy_mask`` (B x J) give the source token ids and
    which positions may be copied.  Returns (P: B x L x V, g: B x L x 1).
    """
    vocab_size = params[f"{d}_out_b"].shape[0]
    feat = ad.concat([states, ctxs], axis=-1)
    p_vocab = ad.softmax(ad.add(ad.matmul(feat, params[f"{d}_out_w"]), params[f"{d}_out_b"]))
    g = ad.sigmoid(ad.add(ad.matmul(states, params[f"{d}_gate_w"]), params[f"{d}_gate_b"]))
    dtype = states.dtype
    m = np.asarray(copy_mask, dtype=dtype)[:, None, :]
    masked = ad.add(copy_scores, (1.0 - m) * _NEG)
    # multiplying by the mask zeroes rows that have no copyable position at all
    weights = ad.mul(ad.softmax(masked), m)
    ids = np.broadcast_to(np.asarray(copy_ids)[:, None, :], weights.shape)
    p_copy = ad.scatter_add(weights, ids, vocab_size)
    num = ad.add(ad.mul(ad.sub(1.0, g), p_vocab), ad.mul(g, p_copy))
    return ad.div(num, ad.sum(num, axis=-1, keepdims=True)), g


def belief_copy_scores(params, enc_states: ad.Tensor, dec_states: ad.Tensor) -> ad.Tensor:
    """psi[i, j] = sigmoid(h_enc_j W_b) . s_i  -> B x L x T."""
    key = ad.sigmoid(ad.matmul(enc_states, params["bdec_copy_w"]))
    return ad.matmul(dec_states, ad.swapaxes(key, 1, 2))


def response_copy_scores(params, bspan_states: ad.Tensor) -> ad.Tensor:
    """psi[j] = sigmoid(h_b_j W_r) . h_b_j  -> B x 1 x J (the same for every response step)."""
    key = ad.sigmoid(ad.matmul(bspan_states, params["rdec_copy_w"]))
    psi = ad.sum(ad.mul(key, bspan_states), axis=-1)
    b, j = psi.shape
    return ad.reshape(psi, (b, 1, j))


def _view(params, batch_enc_ids, batch_enc_mask, cfg, masks):
    states, final = encode(params, batch_enc_ids, batch_enc_mask, cfg, masks)
    neg = ((1.0 - np.asarray(batch_enc_mask)) * _NEG).astype(states.dtype)
    return _EncoderView(states, final, neg)


def _proj(params, d, enc: _EncoderView):
    return ad.matmul(enc.states, params[f"{d}_att_we"])


# ---------------------------------------------------------------- teacher-forced pass

@dataclass
class TurnOutput:
    loss: ad.Tensor
    belief_probs: ad.Tensor
    belief_gates: ad.Tensor
    response_probs: ad.Tensor
    response_gates: ad.Tensor
    n_tokens: int


def _decoder_inputs(params, first: ad.Tensor | None, ids: np.ndarray, masks, key: str, cfg):
    """Embedded (and dropped-out) decoder inputs for every step, B x L x E.

    ``first`` (B x E), when given, is the input of step 0 and ``ids`` supply
    the remaining steps.
    """
    x = ad.embedding(params["emb"], ids)
    if first is not None:
        b, e = first.shape
        x = ad.concat([ad.reshape(first, (b, 1, e)), x], axis=1)
    if masks is not None:
        x = ad.dropout(x, masks[key], cfg.dropout)
    return x


def _run_decoder(params, d: str, enc: _EncoderView, inputs: ad.Tensor):
    proj = _proj(params, d, enc)
    s = enc.final
    states, ctxs = [], []
    for t in range(inputs.shape[1]):
        s, ctx = _step(params, d, enc, proj, inputs[:, t], s)
        states.append(s)
        ctxs.append(ctx)
    return ad.stack(states, axis=1), ad.stack(ctxs, axis=1)


def _force_belief(params, batch: Batch, enc: _EncoderView, cfg, masks):
    return _run_decoder(params, "bdec", enc, _decoder_inputs(params, None, batch.bspan_in, masks, "bdec", cfg))


def _force_response(params, batch: Batch, enc: _EncoderView, cfg, masks):
    steps = batch.resp_out.shape[1]
    first = ad.embedding(params["match_emb"], batch.match)
    inputs = _decoder_inputs(params, first, batch.resp_in[:, : steps - 1], masks, "rdec", cfg)
    return _run_decoder(params, "rdec", enc, inputs)


def _nll_sum(probs: ad.Tensor, targets: np.ndarray, mask: np.ndarray, floor: float) -> ad.Tensor:
    p = ad.gather(probs, targets)
    nll = ad.neg(ad.log(ad.clamp_min(p, floor)))
    return ad.sum(ad.mul(nll, np.asarray(mask, dtype=probs.dtype)))


def forward(params, batch: Batch, cfg: ModelConfig, masks=None) -> TurnOutput:
    """Teacher-forced pass over both stages; the loss is the mean negative log
    probability over every non-pad belief and response target token."""
    enc = _view(params, batch.enc_ids, batch.enc_mask, cfg, masks)
    b_states, b_ctxs = _force_belief(params, batch, enc, cfg, masks)
    b_probs, b_gates = mixture(params, "bdec", b_states, b_ctxs,
                               belief_copy_scores(params, enc.states, b_states),
                               batch.enc_ids, batch.user_mask)
    r_states, r_ctxs = _force_response(params, batch, enc, cfg, masks)
    r_probs, r_gates = mixture(params, "rdec", r_states, r_ctxs,
                               response_copy_scores(params, b_states),
                               batch.bspan_out, batch.bspan_mask)
    n = batch.n_target_tokens
    total = ad.add(_nll_sum(b_probs, batch.bspan_out, batch.bspan_mask, cfg.prob_floor),
                   _nll_sum(r_probs, batch.resp_out, batch.resp_mask, cfg.prob_floor))
    return TurnOutput(ad.mul(total, 1.0 / n), b_probs, b_gates, r_probs, r_gates, n)


def loss(params, batch: Batch, cfg: ModelConfig, masks=None) -> ad.Tensor:
    return forward(params, batch, cfg, masks).loss


# ---------------------------------------------------------------- greedy decoding

@dataclass
class DecodeOutput:
    ids: list[int]
    dists: list[np.ndarray] = field(default_factory=list)
    gates: list[float] = field(default_factory=list)


@dataclass
class TurnPrediction:
    belief: BeliefState
    belief_tokens: list[str]
    response: list[str]
    response_lex: list[str]
    match: MatchIndicator
    dropped: int
    belief_out: DecodeOutput
    response_out: DecodeOutput


def _greedy_loop(params, d, enc, proj, s, first_x, max_len, stop_id, scores_fn, copy_ids, copy_mask, keep_dists):
    """Greedy decoding of one stage for a whole batch; returns per-row outputs and the state stack."""
    b = s.shape[0]
    outs = [DecodeOutput([]) for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    states = []
    x = first_x
    for _ in range(max_len):
        s, ctx = _step(params, d, enc, proj, x, s)
        states.append(s)
        s3 = ad.reshape(s, (b, 1, -1))
        probs, g = mixture(params, d, s3, ad.reshape(ctx, (b, 1, -1)), scores_fn(s3), copy_ids, copy_mask)
        p = probs.data[:, 0]
        tok = p.argmax(axis=-1)
        for i in range(b):
            if done[i]:
                continue
            outs[i].ids.append(int(tok[i]))
            outs[i].gates.append(float(g.data[i, 0, 0]))
            if keep_dists:
                outs[i].dists.append(p[i].copy())
            if tok[i] == stop_id:
                done[i] = True
        if done.all():
            break
        x = ad.embedding(params["emb"], tok)
    return outs, ad.stack(states, axis=1)


def lexicalize(tokens, entity) -> list[str]:
    """Fill ``<slot>`` placeholders from a KB entity; unknown placeholders stay."""
    if entity is None:
        return list(tokens)
    out = []
    for tok in tokens:
        if tok == "<name>":
            out.extend(entity.name.split())
        elif tok.startswith("<") and tok[1:-1] in entity.values:
            out.append(entity.values[tok[1:-1]])
        else:
            out.append(tok)
    return out


def greedy_decode(params, examples, vocab: Vocab, cfg: ModelConfig, domains: dict,
                  oracle_belief: bool = False, keep_dists: bool = False) -> list[TurnPrediction]:
    """Decode belief span, query the KB, then decode the response, for a list of contexts.

    ``domains`` maps domain name to ``(DomainSpec, KnowledgeBase)``.  With
    ``oracle_belief`` the belief decoder is force-fed the oracle span (its
    states still feed the response copy) instead of decoding greedily.
    """
    examples = list(examples)
    batch = collate(examples, vocab)
    b = len(examples)
    eos_b, eos_r = vocab.id(EOS_B), vocab.id(EOS_R)
    with ad.no_grad():
        enc = _view(params, batch.enc_ids, batch.enc_mask, cfg, None)
        if oracle_belief:
            b_states, b_ctxs = _force_belief(params, batch, enc, cfg, None)
            probs, gates = mixture(params, "bdec", b_states, b_ctxs,
                                   belief_copy_scores(params, enc.states, b_states),
                                   batch.enc_ids, batch.user_mask)
            b_outs = []
            for i in range(b):
                n = int(batch.bspan_mask[i].sum())
                b_outs.append(DecodeOutput(
                    list(batch.bspan_out[i, :n]),
                    [probs.data[i, t].copy() for t in range(n)] if keep_dists else [],
                    [float(gates.data[i, t, 0]) for t in range(n)],
                ))
        else:
            proj = _proj(params, "bdec", enc)
            first = ad.embedding(params["emb"], np.full(b, vocab.id(GO)))
            b_outs, b_states = _greedy_loop(
                params, "bdec", enc, proj, enc.final, first, cfg.max_belief_len, eos_b,
                lambda s3: belief_copy_scores(params, enc.states, s3),
                batch.enc_ids, batch.user_mask, keep_dists)

        width = b_states.shape[1]
        span_ids = np.zeros((b, width), dtype=np.int64)
        span_mask = np.zeros((b, width))
        beliefs, matches, entities, dropped = [], [], [], []
        for i, ex in enumerate(examples):
            ids = b_outs[i].ids[:width]
            span_ids[i, : len(ids)] = ids
            span_mask[i, : len(ids)] = 1.0
            spec, kb = domains[ex.domain]
            toks = vocab.decode(ids)
            state, nd = parse_belief(toks, spec)
            m, hits = kb_query(kb, state.inform, spec)
            beliefs.append(state)
            matches.append(m)
            entities.append(hits[0] if hits else None)
            dropped.append(nd)

        proj = _proj(params, "rdec", enc)
        first = ad.embedding(params["match_emb"], np.array([m.index for m in matches]))
        r_scores = response_copy_scores(params, b_states)
        r_outs, _ = _greedy_loop(
            params, "rdec", enc, proj, enc.final, first, cfg.max_response_len, eos_r,
            lambda s3: r_scores, span_ids, span_mask, keep_dists)

    preds = []
    for i in range(b):
        b_toks = vocab.decode(b_outs[i].ids)
        r_ids = r_outs[i].ids
        r_toks = vocab.decode(r_ids[:-1] if r_ids and r_ids[-1] == eos_r else r_ids)
        preds.append(TurnPrediction(
            belief=beliefs[i],
            belief_tokens=b_toks,
            response=r_toks,
            response_lex=lexicalize(r_toks, entities[i]),
            match=matches[i],
            dropped=dropped[i],
            belief_out=b_outs[i],
            response_out=r_outs[i],
        ))
    return preds


def greedy_decode_turn(params, context, vocab: Vocab, cfg: ModelConfig, spec: DomainSpec, kb: KnowledgeBase,
                       oracle_belief: bool = False):
    """Single-context convenience wrapper: returns (belief, response tokens, match)."""
    pred = greedy_decode(params, [context], vocab, cfg, {context.domain: (spec, kb)}, oracle_belief)[0]
    return pred.belief, pred.response, pred.match
