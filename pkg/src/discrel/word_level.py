"""Token embeddings assembled from three information sources.

Each token's representation is the concatenation, always in this order, of

1. a frozen pre-trained word vector (out-of-vocabulary and padding tokens
   map to the zero vector, leaving the other two parts to carry the signal);
2. a trained subword feature: the token's byte-pair pieces are embedded,
   run through parallel convolutions of different widths with tanh and
   max-over-positions pooling, and the concatenated pools pass through a
   highway layer;
3. a reduced contextual feature: a frozen two-layer contextual embedder
   yields two aligned vectors per token, which are blended with trained
   softmax weights and a scale, then projected down.

The contextual embedder behind (3) is pluggable: a small character-level
bidirectional language model trained here, or a file of precomputed vectors
exported from a larger model.
"""

from __future__ import annotations

import abc
import math

import numpy as np

from . import tensor as T
from .bpe import MergeTable, apply_bpe
from .errors import ConfigError, DataError, InstanceKeyError, ParseError, ShapeError
from .init import uniform_param, zeros_param
from .recurrent import BiGRU
from .tensor import Parameter, Tensor

PAD_TOKEN = "<pad>"


# ---------------------------------------------------------------------------
# Frozen word vectors


def load_word_vectors(path) -> tuple[dict[str, int], np.ndarray]:
    """Parse a text vector file: one "word v1 v2 ..." per line.

    A first line of exactly two fields is treated as a "count dim" header
    and skipped.
    """
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split(" ")
            if lineno == 1 and len(fields) == 2:
                continue
            if len(fields) < 2:
                raise ParseError(f"{path}:{lineno}: expected 'word v1 ...', got {line!r}")
            word = fields[0]
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ParseError(f"{path}:{lineno}: vector has {vec.size} components, expected {dim}")
            if word not in vocab:
                vocab[word] = len(rows)
                rows.append(vec)
    if not rows:
        raise ParseError(f"{path}: no vectors found")
    return vocab, np.vstack(rows)


def save_word_vectors(path, vocab: dict[str, int], matrix: np.ndarray, header: bool = True) -> None:
    order = sorted(vocab, key=vocab.get)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(order)} {matrix.shape[1]}\n")
        for word in order:
            comps = " ".join(repr(float(v)) for v in matrix[vocab[word]])
            fh.write(f"{word} {comps}\n")


class WordEmbeddingTable:
    """Pre-trained word vectors, fixed for the whole life of the model."""

    def __init__(self, vocab: dict[str, int], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or len(vocab) != matrix.shape[0]:
            raise ShapeError(f"word table: {len(vocab)} words vs matrix {matrix.shape}")
        self.vocab = dict(vocab)
        self.matrix = matrix
        self.dim = matrix.shape[1]

    @classmethod
    def load(cls, path) -> "WordEmbeddingTable":
        vocab, matrix = load_word_vectors(path)
        return cls(vocab, matrix)

    def lookup(self, word: str) -> np.ndarray:
        if word == PAD_TOKEN:
            return np.zeros(self.dim)
        row = self.vocab.get(word)
        if row is None:
            return np.zeros(self.dim)
        return self.matrix[row]

    def embed(self, tokens) -> np.ndarray:
        return np.array([self.lookup(tok) for tok in tokens])


# ---------------------------------------------------------------------------
# Subword feature


class SubwordEncoder:
    """Piece embeddings -> parallel convolutions -> max pool -> highway."""

    PAD_INDEX = 0
    UNK_INDEX = 1

    def __init__(self, pieces, rng: np.random.Generator, emb_dim: int = 50,
                 kernel_sizes=(2, 3), channels: int = 50, name: str = "subword"):
        self.index = {piece: i + 2 for i, piece in enumerate(dict.fromkeys(pieces))}
        self.emb_dim = emb_dim
        self.kernel_sizes = tuple(kernel_sizes)
        self.channels = channels
        self.out_dim = channels * len(self.kernel_sizes)
        self.table = Parameter(rng.uniform(-0.1, 0.1, (len(self.index) + 2, emb_dim)),
                               name=f"{name}.table")
        self.kernels = []
        self.conv_biases = []
        for k in self.kernel_sizes:
            self.kernels.append(uniform_param(rng, (k, emb_dim, channels), f"{name}.conv{k}.kernel"))
            self.conv_biases.append(zeros_param((channels,), f"{name}.conv{k}.bias"))
        d = self.out_dim
        self.gate_w = uniform_param(rng, (d, d), f"{name}.gate_w")
        self.gate_b = zeros_param((d,), f"{name}.gate_b")
        self.carry_w = uniform_param(rng, (d, d), f"{name}.carry_w")
        self.carry_b = zeros_param((d,), f"{name}.carry_b")

    def parameters(self) -> list[Parameter]:
        return ([self.table] + self.kernels + self.conv_biases
                + [self.gate_w, self.gate_b, self.carry_w, self.carry_b])

    def indices(self, pieces) -> list[int]:
        if not pieces:
            raise DataError("SubwordEncoder: empty piece sequence")
        return [self.index.get(p, self.UNK_INDEX) for p in pieces]

    def encode_indices(self, idxs: list[int]) -> Tensor:
        """(1, out_dim) feature for a row of piece indices (padded as needed)."""
        if not idxs:
            raise DataError("SubwordEncoder: empty piece sequence")
        need = max(self.kernel_sizes)
        if len(idxs) < need:
            idxs = list(idxs) + [self.PAD_INDEX] * (need - len(idxs))
        emb = T.gather_rows(self.table, idxs)
        pools = []
        for kernel, bias in zip(self.kernels, self.conv_biases):
            conv = T.tanh(T.conv1d(emb, kernel, bias, pad="valid"))
            pools.append(T.topk_pool(conv, 1))
        u = T.reshape(T.concat(pools, axis=0), (1, self.out_dim))
        gate = T.sigmoid(T.add_bias(u @ self.gate_w, self.gate_b))
        transformed = T.relu(T.add_bias(u @ self.carry_w, self.carry_b))
        ones = T.constant(np.ones((1, self.out_dim)))
        return gate * transformed + (ones - gate) * u

    def encode(self, pieces) -> Tensor:
        return self.encode_indices(self.indices(pieces))


# ---------------------------------------------------------------------------
# Contextual feature


class ContextualEmbedder(abc.ABC):
    """Two aligned frozen vectors per token of a sentence."""

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        """Width of each per-token layer output."""

    @abc.abstractmethod
    def embed(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) arrays, each (len(tokens), dim)."""


class ContextualMixer:
    """Trained softmax blend of the two layers, scaled and projected down."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str = "mixer"):
        self.d_in = d_in
        self.d_out = d_out
        self.layer_logits = Parameter(np.zeros((1, 2)), name=f"{name}.layer_logits")
        self.scale = Parameter(np.ones((1,)), name=f"{name}.scale")
        self.proj_w = uniform_param(rng, (d_in, d_out), f"{name}.proj_w")
        self.proj_b = zeros_param((d_out,), f"{name}.proj_b")

    def parameters(self) -> list[Parameter]:
        return [self.layer_logits, self.scale, self.proj_w, self.proj_b]

    def weights(self) -> np.ndarray:
        """Current blend weights; always on the 2-simplex."""
        with T.no_grad():
            return T.softmax_rows(self.layer_logits).numpy().ravel().copy()

    def forward(self, h0: Tensor, h1: Tensor) -> Tensor:
        if h0.shape != h1.shape or h0.shape[1] != self.d_in:
            raise ShapeError(
                f"ContextualMixer: layer shapes {h0.shape}, {h1.shape} do not fit width {self.d_in}")
        s = T.softmax_rows(self.layer_logits)
        mixed = (T.scalar_mul(T.slice_cols(s, 0, 1), h0)
                 + T.scalar_mul(T.slice_cols(s, 1, 2), h1))
        return T.add_bias(T.scalar_mul(self.scale, mixed) @ self.proj_w, self.proj_b)


class ToyContextualEmbedder(ContextualEmbedder):
    """Small character-level bidirectional language model used as a stand-in.

    Words are encoded by a character convolution with max pooling; two
    stacked bidirectional recurrent layers produce the per-token outputs
    (lower layer, upper layer).  The model is trained to predict each
    position's next word with its forward state and previous word with its
    backward state, then frozen.
    """

    CHAR_PAD = 0
    CHAR_UNK = 1
    EDGE_CLASS = 0  # LM target for sequence boundaries and unseen words

    def __init__(self, words, chars, rng: np.random.Generator,
                 dim: int = 64, char_dim: int = 16):
        if dim % 2:
            raise ConfigError(f"contextual dim must be even (two directions), got {dim}")
        self.words = list(dict.fromkeys(words))
        self.chars = list(dict.fromkeys(chars))
        self._dim = dim
        self.char_dim = char_dim
        self.word_ids = {w: i + 1 for i, w in enumerate(self.words)}
        self.char_ids = {c: i + 2 for i, c in enumerate(self.chars)}
        self.frozen = False
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

        half = dim // 2
        n_classes = len(self.words) + 1
        self.char_table = Parameter(rng.uniform(-0.1, 0.1, (len(self.chars) + 2, char_dim)),
                                    name="toy.char_table")
        self.char_kernel = uniform_param(rng, (3, char_dim, dim), "toy.char_kernel")
        self.char_bias = zeros_param((dim,), "toy.char_bias")
        self.rnn1 = BiGRU(dim, half, rng, name="toy.rnn1")
        self.rnn2 = BiGRU(dim, half, rng, name="toy.rnn2")
        self.head_next_w = uniform_param(rng, (half, n_classes), "toy.head_next_w")
        self.head_next_b = zeros_param((n_classes,), "toy.head_next_b")
        self.head_prev_w = uniform_param(rng, (half, n_classes), "toy.head_prev_w")
        self.head_prev_b = zeros_param((n_classes,), "toy.head_prev_b")

    @classmethod
    def from_corpus(cls, sentences, rng: np.random.Generator,
                    dim: int = 64, char_dim: int = 16) -> "ToyContextualEmbedder":
        sentences = [list(s) for s in sentences]
        words = sorted({w for s in sentences for w in s})
        chars = sorted({c for w in words for c in w})
        if len(words) < 2 or not any(len(s) >= 2 for s in sentences):
            raise DataError("toy embedder: corpus too small to build a vocabulary")
        return cls(words, chars, rng, dim=dim, char_dim=char_dim)

    @property
    def dim(self) -> int:
        return self._dim

    def parameters(self) -> list[Parameter]:
        return ([self.char_table, self.char_kernel, self.char_bias]
                + self.rnn1.parameters() + self.rnn2.parameters()
                + [self.head_next_w, self.head_next_b, self.head_prev_w, self.head_prev_b])

    def _word_vector(self, word: str) -> Tensor:
        idxs = [self.char_ids.get(c, self.CHAR_UNK) for c in word]
        if len(idxs) < 3:
            idxs += [self.CHAR_PAD] * (3 - len(idxs))
        emb = T.gather_rows(self.char_table, idxs)
        conv = T.tanh(T.conv1d(emb, self.char_kernel, self.char_bias, pad="valid"))
        return T.reshape(T.topk_pool(conv, 1), (1, self._dim))

    def _layers(self, tokens) -> tuple[Tensor, Tensor]:
        if not tokens:
            raise DataError("toy embedder: empty token sequence")
        x = T.concat([self._word_vector(w) for w in tokens], axis=0)
        lower = self.rnn1.forward(x)
        upper = self.rnn2.forward(lower)
        return lower, upper

    def embed(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        tokens = list(tokens)
        key = " ".join(tokens)
        if self.frozen and key in self._cache:
            return self._cache[key]
        with T.no_grad():
            lower, upper = self._layers(tokens)
        result = (lower.numpy().copy(), upper.numpy().copy())
        if self.frozen:
            self._cache[key] = result
        return result

    def freeze(self) -> None:
        self.frozen = True

    def train_lm(self, sentences, epochs: int = 5, lr: float = 0.1,
                 seed: int = 0) -> list[float]:
        """Fit the language model; returns per-epoch training perplexity."""
        if self.frozen:
            raise ConfigError("toy embedder is frozen; training is closed")
        sentences = [list(s) for s in sentences if len(s) >= 1]
        if not sentences:
            raise DataError("toy embedder: nothing to train on")
        half = self._dim // 2
        rng = np.random.default_rng(seed)
        perplexities = []
        for _ in range(epochs):
            order = rng.permutation(len(sentences))
            total_nll = 0.0
            total_tokens = 0
            for si in order:
                sent = sentences[si]
                n = len(sent)
                _, upper = self._layers(sent)
                fwd = T.slice_cols(upper, 0, half)
                bwd = T.slice_cols(upper, half, self._dim)
                next_ids = [self.word_ids.get(w, self.EDGE_CLASS) for w in sent[1:]] + [self.EDGE_CLASS]
                prev_ids = [self.EDGE_CLASS] + [self.word_ids.get(w, self.EDGE_CLASS) for w in sent[:-1]]
                loss = (T.cross_entropy(T.add_bias(fwd @ self.head_next_w, self.head_next_b), next_ids)
                        + T.cross_entropy(T.add_bias(bwd @ self.head_prev_w, self.head_prev_b), prev_ids))
                T.backward(loss)
                T.adagrad_step(self.parameters(), lr=lr)
                total_nll += loss.item() / 2.0 * n
                total_tokens += n
            perplexities.append(math.exp(total_nll / total_tokens))
        return perplexities

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise ParseError(f"toy embedder state: missing array {p.name!r}")
            if arrays[p.name].shape != p.shape:
                raise ShapeError(f"toy embedder state: {p.name} has shape "
                                 f"{arrays[p.name].shape}, expected {p.shape}")
            p.data[...] = arrays[p.name]
        self._cache.clear()


def build_toy_embedder(sentences, dim: int = 64, char_dim: int = 16,
                       epochs: int = 5, lr: float = 0.1,
                       seed: int = 0) -> tuple[ToyContextualEmbedder, list[float]]:
    """Train a toy contextual embedder on the corpus and freeze it."""
    rng = np.random.default_rng(seed)
    embedder = ToyContextualEmbedder.from_corpus(sentences, rng, dim=dim, char_dim=char_dim)
    history = embedder.train_lm(sentences, epochs=epochs, lr=lr, seed=seed)
    embedder.freeze()
    return embedder, history


# ---------------------------------------------------------------------------
# Precomputed contextual vectors
#
# Text format, one file per corpus:
#   line 1:                "ctxvec 1 <dim>"
#   per instance:          "@ <ntokens> <space-joined tokens>"
#                          ntokens lines of lower-layer vectors
#                          ntokens lines of upper-layer vectors
# Floats are written with repr() so a round trip is bit-exact.

_CTX_MAGIC = "ctxvec"
_CTX_VERSION = 1


def save_contextual_vectors(path, entries, dim: int) -> None:
    """``entries`` iterates (tokens, lower, upper) with arrays (N, dim)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_CTX_MAGIC} {_CTX_VERSION} {dim}\n")
        for tokens, lower, upper in entries:
            tokens = list(tokens)
            lower = np.asarray(lower, dtype=np.float64)
            upper = np.asarray(upper, dtype=np.float64)
            n = len(tokens)
            if lower.shape != (n, dim) or upper.shape != (n, dim):
                raise ShapeError(f"contextual export: arrays {lower.shape}/{upper.shape} "
                                 f"do not match {n} tokens x {dim}")
            fh.write(f"@ {n} {' '.join(tokens)}\n")
            for arr in (lower, upper):
                for row in arr:
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")


class PrecomputedContextualEmbedder(ContextualEmbedder):
    """Replays per-instance vectors exported by a larger model."""

    def __init__(self, store: dict[str, tuple[np.ndarray, np.ndarray]], dim: int):
        self._store = store
        self._dim = dim

    @classmethod
    def load(cls, path) -> "PrecomputedContextualEmbedder":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 3 or header[0] != _CTX_MAGIC:
                raise ParseError(f"{path}: not a contextual-vector file")
            if header[1] != str(_CTX_VERSION):
                raise ParseError(f"{path}: unsupported version {header[1]}")
            dim = int(header[2])
            store: dict[str, tuple[np.ndarray, np.ndarray]] = {}
            lineno = 1
            while True:
                record = fh.readline()
                lineno += 1
                if not record:
                    break
                fields = record.rstrip("\n").split(" ")
                if fields[0] != "@" or len(fields) < 3:
                    raise ParseError(f"{path}:{lineno}: expected '@ <n> <tokens>' record")
                try:
                    n = int(fields[1])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad token count {fields[1]!r}") from None
                key = " ".join(fields[2:])
                layers = []
                for _ in range(2):
                    rows = []
                    for _ in range(n):
                        line = fh.readline()
                        lineno += 1
                        if not line:
                            raise ParseError(f"{path}:{lineno}: truncated record for {key!r}")
                        vals = line.split()
                        if len(vals) != dim:
                            raise ParseError(f"{path}:{lineno}: row has {len(vals)} values, expected {dim}")
                        rows.append([float(v) for v in vals])
                    layers.append(np.array(rows, dtype=np.float64).reshape(n, dim))
                store[key] = (layers[0], layers[1])
        return cls(store, dim)

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        tokens = list(tokens)
        key = " ".join(tokens)
        found = self._store.get(key)
        if found is None:
            raise InstanceKeyError(f"no stored contextual vectors for instance {key!r}")
        if found[0].shape[0] != len(tokens):
            raise InstanceKeyError(
                f"instance {key!r}: stored {found[0].shape[0]} token vectors, got {len(tokens)} tokens")
        return found


# ---------------------------------------------------------------------------
# Full token embedding


class TokenEmbedder:
    """Concatenates the enabled parts, [word | subword | contextual]."""

    def __init__(self, word_table: WordEmbeddingTable | None = None,
                 subword: SubwordEncoder | None = None,
                 merges: MergeTable | None = None,
                 mixer: ContextualMixer | None = None,
                 contextual: ContextualEmbedder | None = None):
        if word_table is None and subword is None and mixer is None:
            raise ConfigError("TokenEmbedder: no parts enabled")
        if (subword is None) != (merges is None):
            raise ConfigError("TokenEmbedder: subword encoder and merge table go together")
        if (mixer is None) != (contextual is None):
            raise ConfigError("TokenEmbedder: mixer and contextual embedder go together")
        if mixer is not None and contextual.dim != mixer.d_in:
            raise ShapeError(f"TokenEmbedder: embedder width {contextual.dim} != mixer input {mixer.d_in}")
        self.word_table = word_table
        self.subword = subword
        self.merges = merges
        self.mixer = mixer
        self.contextual = contextual
        self.dim = ((word_table.dim if word_table else 0)
                    + (subword.out_dim if subword else 0)
                    + (mixer.d_out if mixer else 0))

    def parameters(self) -> list[Parameter]:
        out = []
        if self.subword is not None:
            out.extend(self.subword.parameters())
        if self.mixer is not None:
            out.extend(self.mixer.parameters())
        return out

    def _subword_rows(self, tokens) -> Tensor:
        cache: dict[str, Tensor] = {}
        rows = []
        for tok in tokens:
            got = cache.get(tok)
            if got is None:
                if tok == PAD_TOKEN:
                    idxs = [SubwordEncoder.PAD_INDEX] * max(self.subword.kernel_sizes)
                else:
                    idxs = self.subword.indices(apply_bpe(tok, self.merges))
                got = self.subword.encode_indices(idxs)
                cache[tok] = got
            rows.append(got)
        return T.concat(rows, axis=0)

    def embed_sentence(self, tokens, n_real: int | None = None) -> Tensor:
        """(N, dim) embedding matrix for one argument's token row.

        ``n_real`` marks how many leading tokens are genuine; trailing
        padding gets zero vectors as contextual-embedder input.
        """
        tokens = list(tokens)
        if not tokens:
            raise DataError("embed_sentence: empty token sequence")
        n = len(tokens)
        if n_real is None:
            n_real = n
        if not (1 <= n_real <= n):
            raise ShapeError(f"embed_sentence: n_real={n_real} outside [1, {n}]")
        parts = []
        if self.word_table is not None:
            parts.append(T.constant(self.word_table.embed(tokens)))
        if self.subword is not None:
            parts.append(self._subword_rows(tokens))
        if self.mixer is not None:
            lower, upper = self.contextual.embed(tokens[:n_real])
            if lower.shape != (n_real, self.mixer.d_in):
                raise ShapeError(f"embed_sentence: contextual output {lower.shape} "
                                 f"!= ({n_real}, {self.mixer.d_in})")
            if n_real < n:
                fill = np.zeros((n - n_real, self.mixer.d_in))
                lower = np.vstack([lower, fill])
                upper = np.vstack([upper, fill])
            parts.append(self.mixer.forward(T.constant(lower), T.constant(upper)))
        if len(parts) == 1:
            return parts[0]
        return T.concat(parts, axis=1)
