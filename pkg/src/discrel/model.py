"""The assembled pair classifier.

Pipeline per instance: both arguments are padded to a fixed length, embedded
token by token, passed through their encoder stacks, cross-attended layer by
layer, 2-max pooled into the pair representation, and scored by two heads —
one over relation classes and one over implicit connectives.  The connective
head exists purely as a training-time auxiliary signal; prediction reads the
relation head alone.

Ablation toggles mirror the build-up used in experiments:

- ``bi_attention``   off: pool the encoder outputs directly, no attention
- ``res_block``      off: encoder blocks without their internal skip path
- ``res_pair``       off: only the deepest layer feeds the pair vector
- ``shared_stacks``  on: one set of encoder weights serves both arguments
- word/subword/contextual parts are chosen by what the token embedder holds
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import pad_truncate
from .errors import ConfigError, ParseError, ShapeError
from .init import uniform_param, zeros_param
from .pair_level import BiAttention, attention_map, build_pair_representation, pool_layer
from .sentence_level import argument_stacks
from .tensor import Parameter, Tensor
from .word_level import TokenEmbedder, ToyContextualEmbedder

CONTEXTUAL_STATE_PREFIX = "toy."


class ClassifierHead:
    """Affine map to class scores; optionally one hidden layer first."""

    def __init__(self, d_in: int, n_out: int, rng: np.random.Generator,
                 hidden: int = 0, name: str = "head"):
        if n_out < 2:
            raise ConfigError(f"{name}: need at least 2 classes, got {n_out}")
        self.hidden = hidden
        if hidden > 0:
            self.w1 = uniform_param(rng, (d_in, hidden), f"{name}.w1")
            self.b1 = zeros_param((hidden,), f"{name}.b1")
            self.w2 = uniform_param(rng, (hidden, n_out), f"{name}.w2")
            self.b2 = zeros_param((n_out,), f"{name}.b2")
        else:
            self.w = uniform_param(rng, (d_in, n_out), f"{name}.w")
            self.b = zeros_param((n_out,), f"{name}.b")

    def parameters(self) -> list[Parameter]:
        if self.hidden > 0:
            return [self.w1, self.b1, self.w2, self.b2]
        return [self.w, self.b]

    def forward(self, x: Tensor) -> Tensor:
        if self.hidden > 0:
            h = T.relu(T.add_bias(x @ self.w1, self.b1))
            return T.add_bias(h @ self.w2, self.b2)
        return T.add_bias(x @ self.w, self.b)


class RelationModel:
    def __init__(self, embedder: TokenEmbedder, n_relations: int, connectives,
                 rng: np.random.Generator, depth: int = 4, block_type: str = "conv",
                 kernel_size: int = 5, bi_attention: bool = True,
                 res_block: bool = True, res_pair: bool = True,
                 shared_stacks: bool = False, mask_padding: bool = False,
                 classifier_hidden: int = 0, max_tokens: int = 100,
                 embedding_dropout: float = 0.0, encoder_dropout: float = 0.0,
                 classifier_dropout: float = 0.0):
        connectives = list(connectives)
        if len(connectives) < 2:
            raise ConfigError("need at least 2 connectives for the auxiliary head")
        self.embedder = embedder
        self.depth = depth
        self.res_pair = res_pair
        self.mask_padding = mask_padding
        self.max_tokens = max_tokens
        self.embedding_dropout = embedding_dropout
        self.encoder_dropout = encoder_dropout
        self.classifier_dropout = classifier_dropout
        self.connectives = connectives
        self.connective_index = {c: i for i, c in enumerate(connectives)}

        width = embedder.dim
        self.stack1, self.stack2 = argument_stacks(
            width, depth, rng, block_type=block_type, kernel_size=kernel_size,
            residual=res_block, shared=shared_stacks)
        self.attention = BiAttention(width, rng) if bi_attention else None
        n_layers_pooled = depth if res_pair else 1
        self.pair_dim = 4 * n_layers_pooled * width
        self.relation_head = ClassifierHead(self.pair_dim, n_relations, rng,
                                            hidden=classifier_hidden, name="rel_head")
        self.connective_head = ClassifierHead(self.pair_dim, len(connectives), rng,
                                              hidden=classifier_hidden, name="conn_head")

    # -- parameters and state ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        """Trainable parameters only; frozen components never appear here."""
        groups = [self.embedder.parameters(), self.stack1.parameters()]
        if self.stack2 is not self.stack1:
            groups.append(self.stack2.parameters())
        if self.attention is not None:
            groups.append(self.attention.parameters())
        groups.append(self.relation_head.parameters())
        groups.append(self.connective_head.parameters())
        seen = set()
        out = []
        for group in groups:
            for p in group:
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything a checkpoint must hold to reproduce inference.

        Includes the frozen contextual embedder's weights (it has no other
        persistent home); the word-vector table is referenced by path in the
        run manifest instead of being copied around.
        """
        out = {p.name: p.data.copy() for p in self.parameters()}
        if isinstance(self.embedder.contextual, ToyContextualEmbedder):
            out.update(self.embedder.contextual.state_arrays())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise ParseError(f"checkpoint is missing array {p.name!r}")
            if arrays[p.name].shape != p.shape:
                raise ShapeError(f"checkpoint array {p.name!r} has shape "
                                 f"{arrays[p.name].shape}, expected {p.shape}")
            p.data[...] = arrays[p.name]
        if isinstance(self.embedder.contextual, ToyContextualEmbedder):
            self.embedder.contextual.load_state_arrays(
                {k: v for k, v in arrays.items() if k.startswith(CONTEXTUAL_STATE_PREFIX)})

    # -- forward -------------------------------------------------------------

    def _prepare(self, tokens) -> tuple[list[str], int]:
        padded = pad_truncate(tokens, self.max_tokens)
        return padded, min(len(tokens), self.max_tokens)

    def pair_representation(self, arg1_tokens, arg2_tokens,
                            training: bool = False,
                            rng: np.random.Generator | None = None) -> Tensor:
        tokens1, n1 = self._prepare(arg1_tokens)
        tokens2, n2 = self._prepare(arg2_tokens)
        e1 = T.dropout(self.embedder.embed_sentence(tokens1, n1),
                       self.embedding_dropout, rng, training)
        e2 = T.dropout(self.embedder.embed_sentence(tokens2, n2),
                       self.embedding_dropout, rng, training)
        layers1 = self.stack1.forward(e1, self.encoder_dropout, rng, training)
        layers2 = self.stack2.forward(e2, self.encoder_dropout, rng, training)
        if not self.res_pair:
            layers1 = layers1[-1:]
            layers2 = layers2[-1:]
        if self.attention is not None:
            return build_pair_representation(layers1, layers2, self.attention,
                                             self.mask_padding, n1, n2)
        slices = [pool_layer(v1, v2) for v1, v2 in zip(layers1, layers2)]
        return slices[0] if len(slices) == 1 else T.concat(slices, axis=0)

    def scores(self, arg1_tokens, arg2_tokens, training: bool = False,
               rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """(relation logits, connective logits), each a (1, C) row."""
        o = self.pair_representation(arg1_tokens, arg2_tokens, training, rng)
        row = T.dropout(T.reshape(o, (1, self.pair_dim)),
                        self.classifier_dropout, rng, training)
        return self.relation_head.forward(row), self.connective_head.forward(row)

    def attention_maps(self, arg1_tokens, arg2_tokens) -> list[np.ndarray]:
        """Per layer, the softmaxed score matrix of argument 1 over argument 2."""
        if self.attention is None:
            raise ConfigError("model was built without bi-attention")
        tokens1, n1 = self._prepare(arg1_tokens)
        tokens2, n2 = self._prepare(arg2_tokens)
        with T.no_grad():
            e1 = self.embedder.embed_sentence(tokens1, n1)
            e2 = self.embedder.embed_sentence(tokens2, n2)
            layers1 = self.stack1.forward(e1)
            layers2 = self.stack2.forward(e2)
            if not self.res_pair:
                layers1 = layers1[-1:]
                layers2 = layers2[-1:]
            return [attention_map(v1, v2, self.attention, self.mask_padding, n2)
                    for v1, v2 in zip(layers1, layers2)]
