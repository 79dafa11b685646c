"""Shared independent oracles and small-instance builders for the tests."""

import math

import numpy as np

from tcpgen import autodiff as ad
from tcpgen.biasing_tree import build_tree
from tcpgen.lexicon import SubwordVocab
from tcpgen.rng import Stream
from tcpgen.toy_models import ModelConfig, build_model

TINY_VOCAB = SubwordVocab(["KA", "TO", "KA_", "TO_", "RI_"])


def enumeration_transducer_loss(logp: np.ndarray, targets, blank: int) -> float:
    """Brute-force marginal over all blank-augmented alignments.

    Walks every interleaving of T blanks (each consuming a frame) and the
    labels in order (consuming none); paths terminate after the last frame
    with all labels emitted.
    """
    U = len(targets)
    T = logp.shape[1]
    total = -math.inf

    def rec(t, u, acc):
        nonlocal total
        if t == T:
            if u == U:
                total = np.logaddexp(total, acc)
            return
        rec(t + 1, u, acc + logp[u, t, blank])
        if u < U:
            rec(t, u + 1, acc + logp[u, t, targets[u]])

    rec(0, 0, 0.0)
    return -total


def random_log_lattice(stream: Stream, U: int, T: int, V: int) -> np.ndarray:
    """Random (U+1, T, V) lattice of log-distributions over the last axis."""
    raw = stream.gauss_array((U + 1, T, V))
    z = raw - raw.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def tiny_model(family: str, variant: str, seed: int,
               vocab: SubwordVocab = TINY_VOCAB):
    cfg = ModelConfig(family=family, variant=variant, feat_dim=2, hidden=3,
                      emb_dim=3, attn_dim=2, attn_val_dim=2, encoder_stride=1)
    return build_model(vocab, cfg, Stream(seed))


def tiny_instance(stream: Stream, vocab: SubwordVocab = TINY_VOCAB,
                  max_T: int = 5, max_U: int = 3):
    """Random (features, targets, tree) for a tiny model."""
    T = 2 + stream.randint(max_T - 1)
    feats = stream.gauss_array((T, 2))
    U = 1 + stream.randint(max_U)
    targets = [stream.randint(vocab.n_lexical) for _ in range(U)]
    words = ["KATO", "KARI", "TORI"]
    tree = build_tree(vocab, stream.sample(words, 1 + stream.randint(3)))
    return feats, targets, tree


def copy_shared_weights(src, dst) -> None:
    """Copy tensors present in both models (base weights of a variant).

    Where the destination widens a matrix with extra input columns (the
    transducer joint taking a biasing vector), the leading block is copied
    so the base path matches exactly.
    """
    sp = src.named_params()
    for name, p in dst.named_params().items():
        if name not in sp:
            continue
        s = sp[name].data
        if s.shape == p.data.shape:
            p.data = s.copy()
        elif (s.ndim == 2 and p.data.ndim == 2 and s.shape[0] == p.data.shape[0]
              and s.shape[1] < p.data.shape[1]):
            p.data[:, :s.shape[1]] = s


def oracle_valid_set(word_token_seqs, emitted, word_final):
    """Naive matcher: longest suffix of tokens since the last word-final
    unit, matched against every biasing word's token-sequence prefixes."""
    prefix = []
    for tok in emitted:
        if word_final[tok]:
            prefix = []
        else:
            prefix.append(tok)
    valid = set()
    for seq in word_token_seqs:
        if len(seq) > len(prefix) and list(seq[:len(prefix)]) == prefix:
            valid.add(seq[len(prefix)])
    return valid


def random_tree_case(stream, max_words: int = 50, max_stream: int = 100):
    """Random (vocab, tree, word token seqs, emitted id stream)."""
    from tcpgen.lexicon import tokenize_word

    syl = ["KA", "TO", "RI", "NU", "PE", "LO"]
    units = syl + [s + "_" for s in syl]
    vocab = SubwordVocab(units)
    n_words = 1 + stream.randint(max_words)
    words = set()
    while len(words) < n_words:
        n = 1 + stream.randint(3)
        words.add("".join(stream.choice(syl) for _ in range(n)))
    words = sorted(words)
    tree = build_tree(vocab, words)
    seqs = [tokenize_word(vocab, w).ids for w in words]
    stream_len = 1 + stream.randint(max_stream)
    emitted = [stream.randint(vocab.n_lexical) for _ in range(stream_len)]
    return vocab, tree, seqs, emitted


class _FakeCfg:
    variant = "baseline"


class FakeAED:
    """Scripted encoder-decoder: step u emits a prescribed distribution over
    lexical + EOS, independent of history.  State counts emitted steps."""

    def __init__(self, vocab, table):
        self.vocab = vocab
        self.cfg = _FakeCfg()
        self.table = table   # list of prob vectors, cycled by step index

    def encode(self, features):
        return ad.Tensor(np.zeros((len(features), 1)))

    def init_state(self):
        return 0

    def step(self, h_enc, state, y_prev, valid):
        p = self.table[min(state, len(self.table) - 1)]
        return ad.Tensor(np.asarray(p, dtype=np.float64)), state + 1, None


class FakeRNNT:
    """Scripted transducer: joint distribution depends on (frame, #labels).

    Encoder output row t carries the frame index; the predictor state is
    the number of consumed labels."""

    def __init__(self, vocab, table):
        self.vocab = vocab
        self.cfg = _FakeCfg()
        self.table = table   # dict (t, u) -> prob vector over lexical+blank

    def encode(self, features):
        T = len(features)
        return ad.Tensor(np.arange(T, dtype=np.float64).reshape(T, 1))

    def init_pred_state(self):
        return -1

    def predictor_step(self, state, y_in):
        return 0 if state == -1 else state + 1

    def joint_rows(self, state, frame_row, y_prev, valid):
        t = int(frame_row.data[0, 0])
        p = self.table[(t, state)]
        return ad.Tensor(np.asarray(p, dtype=np.float64).reshape(1, -1)), None


def enumerate_rnnt_marginals(table, T: int, n_lexical: int, cap: int):
    """All label sequences with per-frame emission cap, scored by the
    log-sum-exp of their alignment probabilities."""
    out: dict[tuple[int, ...], float] = {}

    def rec(t, tokens, this_frame, acc):
        if t == T:
            key = tuple(tokens)
            out[key] = np.logaddexp(out[key], acc) if key in out else acc
            return
        p = np.asarray(table[(t, len(tokens))], dtype=np.float64)
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        if np.isfinite(logp[n_lexical]):
            rec(t + 1, tokens, 0, acc + logp[n_lexical])
        if this_frame < cap:
            for sym in range(n_lexical):
                if np.isfinite(logp[sym]):
                    rec(t, tokens + [sym], this_frame + 1, acc + logp[sym])

    rec(0, [], 0, 0.0)
    return out


def fd_param_check(model, loss_fn, step: float = 1e-5, rel_tol: float = 1e-4):
    """Central finite differences against analytic grads for every tensor."""
    params = model.named_params()
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in params.items()}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        gflat = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            with ad.no_grad():
                hi = loss_fn().item()
            flat[k] = orig - step
            with ad.no_grad():
                lo = loss_fn().item()
            flat[k] = orig
            num = (hi - lo) / (2 * step)
            got = float(gflat[k])
            denom = max(abs(num), abs(got), 1e-6)
            assert abs(got - num) / denom <= rel_tol, \
                f"{name}[{k}]: analytic {got} vs fd {num}"
