"""Beam-search inference for both model families with per-hypothesis tree
states, optional shallow fusion with a subword bigram LM, and n-best output.

The encoder-decoder search is label-synchronous; the transducer search is
time-synchronous with a per-frame emission cap, merging duplicate label
sequences by log-sum-exp.  All searches run without gradient recording and
break score ties by token-id lexicographic order, so decoding is
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .biasing_tree import (DETACHED_STATE, PrefixTree, ROOT_STATE, TreeState,
                           advance_state, valid_set)
from .lexicon import SubwordVocab, TokenSeq, detokenize


@dataclass
class DecodeConfig:
    beam: int = 8
    lm_weight: float = 0.0
    max_symbols_per_frame: int = 3
    max_len: int = 60

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam width must be >= 1")
        if self.lm_weight < 0:
            raise ValueError("LM weight must be >= 0")


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float
    model_state: object
    tree_state: TreeState
    lm_state: int | None = None
    finished: bool = False
    hit_max_len: bool = False

    def sort_key(self):
        return (-self.log_score, self.tokens)


class BigramLM:
    """Add-one-smoothed subword bigram; contexts are SOS or a lexical id,
    targets are lexical ids plus EOS in the last column."""

    def __init__(self, logp: np.ndarray, n_lexical: int):
        self.logp = logp          # (L+1 contexts, L+1 targets)
        self.n_lexical = n_lexical

    def initial_state(self) -> int:
        return self.n_lexical     # SOS context row

    def advance(self, state: int, token: int) -> int:
        return token

    def log_prob_vector(self, state: int) -> np.ndarray:
        """Log P(. | state) over lexical targets + EOS (last slot)."""
        return self.logp[state]


def train_bigram_lm(token_seqs, vocab: SubwordVocab) -> BigramLM:
    """Counts over (context, next) with add-one smoothing.

    Each sequence contributes SOS -> first, consecutive pairs, and
    last -> EOS.  Contexts: lexical ids plus SOS (last row)."""
    L = vocab.n_lexical
    counts = np.ones((L + 1, L + 1), dtype=np.float64)   # add-one
    for seq in token_seqs:
        ctx = L
        for tok in seq:
            counts[ctx, tok] += 1.0
            ctx = tok
        counts[ctx, L] += 1.0                            # EOS column
    logp = np.log(counts / counts.sum(axis=1, keepdims=True))
    return BigramLM(logp, L)


def fuse_lm(step_logprob: np.ndarray, lm: BigramLM, lm_state: int,
            lam: float, include_eos: bool) -> np.ndarray:
    """Log-linear combination of model and LM scores.

    Adds lam * log P_LM to lexical slots; the last slot gets the LM
    end-of-sentence term when include_eos (encoder-decoder) and is left
    untouched otherwise (transducer blank, which has no LM probability).
    """
    if lam < 0:
        raise ValueError("LM weight must be >= 0")
    lmvec = lm.log_prob_vector(lm_state)
    out = step_logprob.copy()
    L = lm.n_lexical
    out[:L] += lam * lmvec[:L]
    if include_eos:
        out[L] += lam * lmvec[L]
    return out


def _tree_ops(tree: PrefixTree | None, biasing: bool):
    if not biasing or tree is None:
        return (lambda st: None), (lambda st, tok: st)
    return (lambda st: valid_set(tree, st)), (lambda st, tok: advance_state(tree, st, tok))


def beam_search_aed(model, features: np.ndarray, tree: PrefixTree | None,
                    cfg: DecodeConfig, lm: BigramLM | None = None) -> list[Hypothesis]:
    """Label-synchronous beam search; hypotheses finish on EOS.

    Returns hypotheses ranked by log score (ties broken by token ids).
    Hypotheses that reach max_len without EOS are finalized with
    hit_max_len set.
    """
    vocab = model.vocab
    L = vocab.n_lexical
    biasing = model.cfg.variant != "baseline"
    get_valid, advance = _tree_ops(tree, biasing)
    with ad.no_grad():
        h_enc = model.encode(features)
        init = Hypothesis(tokens=(), log_score=0.0,
                          model_state=model.init_state(),
                          tree_state=ROOT_STATE,
                          lm_state=lm.initial_state() if lm else None)
        active = [init]
        finished: list[Hypothesis] = []
        for _ in range(cfg.max_len):
            if not active:
                break
            cands: list[Hypothesis] = []
            for hyp in active:
                y_prev = hyp.tokens[-1] if hyp.tokens else vocab.sos
                p, new_state, _ = model.step(h_enc, hyp.model_state, y_prev,
                                             get_valid(hyp.tree_state))
                with np.errstate(divide="ignore"):
                    logp = np.log(p.data)
                if lm is not None and cfg.lm_weight > 0:
                    logp = fuse_lm(logp, lm, hyp.lm_state, cfg.lm_weight,
                                   include_eos=True)
                for sym in range(L + 1):
                    score = hyp.log_score + logp[sym]
                    if score == -math.inf:
                        continue
                    if sym == L:   # EOS
                        finished.append(replace(hyp, log_score=score,
                                                finished=True))
                    else:
                        cands.append(Hypothesis(
                            tokens=hyp.tokens + (sym,), log_score=score,
                            model_state=new_state,
                            tree_state=advance(hyp.tree_state, sym),
                            lm_state=(lm.advance(hyp.lm_state, sym)
                                      if lm else None)))
            cands.sort(key=Hypothesis.sort_key)
            active = cands[:cfg.beam]
            if len(finished) >= cfg.beam:
                finished.sort(key=Hypothesis.sort_key)
                # scores only decrease, so a strictly worse frontier is done
                if active and active[0].log_score < finished[cfg.beam - 1].log_score:
                    break
        for hyp in active:   # ran out of length budget
            finished.append(replace(hyp, finished=True, hit_max_len=True))
        finished.sort(key=Hypothesis.sort_key)
        return finished[:max(cfg.beam, 1)]


def beam_search_rnnt(model, features: np.ndarray, tree: PrefixTree | None,
                     cfg: DecodeConfig, lm: BigramLM | None = None) -> list[Hypothesis]:
    """Time-synchronous beam search with a per-frame emission cap.

    At each frame every hypothesis may emit up to max_symbols_per_frame
    labels and then a blank; hypotheses with identical label sequences are
    merged by log-sum-exp when they re-enter the per-frame beam.  The tree
    state advances on labels only.
    """
    vocab = model.vocab
    L = vocab.n_lexical
    biasing = model.cfg.variant != "baseline"
    get_valid, advance = _tree_ops(tree, biasing)
    with ad.no_grad():
        h_enc = model.encode(features)
        T = h_enc.data.shape[0]
        frame_rows = [Tensor(h_enc.data[t:t + 1]) for t in range(T)]
        init = Hypothesis(tokens=(), log_score=0.0,
                          model_state=model.predictor_step(model.init_pred_state(),
                                                           vocab.sos),
                          tree_state=ROOT_STATE,
                          lm_state=lm.initial_state() if lm else None)
        beam = [init]
        for t in range(T):
            merged: dict[tuple[int, ...], Hypothesis] = {}
            frontier = beam
            for s in range(cfg.max_symbols_per_frame + 1):
                expansions: list[Hypothesis] = []
                for hyp in frontier:
                    y_prev = hyp.tokens[-1] if hyp.tokens else vocab.sos
                    p, _ = model.joint_rows(hyp.model_state, frame_rows[t],
                                            y_prev, get_valid(hyp.tree_state))
                    with np.errstate(divide="ignore"):
                        logp = np.log(p.data[0])
                    blank_score = hyp.log_score + logp[L]
                    prev = merged.get(hyp.tokens)
                    if prev is None:
                        merged[hyp.tokens] = replace(hyp, log_score=blank_score)
                    else:
                        prev.log_score = np.logaddexp(prev.log_score, blank_score)
                    if s == cfg.max_symbols_per_frame:
                        continue
                    lab = logp[:L]
                    if lm is not None and cfg.lm_weight > 0:
                        lab = lab + cfg.lm_weight * lm.log_prob_vector(hyp.lm_state)[:L]
                    for sym in range(L):
                        score = hyp.log_score + lab[sym]
                        if score == -math.inf:
                            continue
                        expansions.append(Hypothesis(
                            tokens=hyp.tokens + (sym,), log_score=score,
                            model_state=model.predictor_step(hyp.model_state, sym),
                            tree_state=advance(hyp.tree_state, sym),
                            lm_state=(lm.advance(hyp.lm_state, sym)
                                      if lm else None)))
                expansions.sort(key=Hypothesis.sort_key)
                frontier = expansions[:cfg.beam]
                if not frontier:
                    break
            beam = sorted(merged.values(), key=Hypothesis.sort_key)[:cfg.beam]
        for hyp in beam:
            hyp.finished = True
        return beam


def hypothesis_words(vocab: SubwordVocab, hyp: Hypothesis) -> list[str]:
    """Words of a hypothesis; a trailing partial word is kept as a token."""
    words, partial = detokenize(vocab, TokenSeq(hyp.tokens))
    if partial:
        words.append(partial)
    return words


def format_nbest(vocab: SubwordVocab, utt_id: str,
                 hyps: list[Hypothesis]) -> str:
    """n-best lines: utt_id, rank, log score, space-joined words."""
    lines = []
    for rank, hyp in enumerate(hyps):
        words = " ".join(hypothesis_words(vocab, hyp))
        lines.append(f"{utt_id}\t{rank}\t{hyp.log_score:.6f}\t{words}")
    return "\n".join(lines) + "\n"
