"""Token/channel mixing block shared by the link predictor and the unlearner.

For a (tokens x channels) matrix ``H`` (optionally with leading batch axes)::

    H = H + W_tok2 @ gelu(W_tok1 @ LN_1(H))
    H = H + gelu(LN_2(H) @ W_cha1) @ W_cha2

LN normalizes each row over its channels.  There are no biases.
"""
from __future__ import annotations

import numpy as np

from .diffcore import glorot_uniform, ops

BLOCK_KEYS = ("ln1_g", "ln1_b", "tok1", "tok2", "ln2_g", "ln2_b", "cha1", "cha2")
SECOND_PROJECTIONS = ("tok2", "cha2")


def init_block(
    rng: np.random.Generator,
    n_tokens: int,
    n_channels: int,
    d_tok: int,
    d_cha: int,
    zero_second: bool = False,
) -> dict[str, np.ndarray]:
    """Weights for one block; ``zero_second`` zeros both output projections
    so the block starts as the identity map."""
    block = {
        "ln1_g": np.ones(n_channels),
        "ln1_b": np.zeros(n_channels),
        "tok1": glorot_uniform(rng, (d_tok, n_tokens)),
        "tok2": glorot_uniform(rng, (n_tokens, d_tok)),
        "ln2_g": np.ones(n_channels),
        "ln2_b": np.zeros(n_channels),
        "cha1": glorot_uniform(rng, (n_channels, d_cha)),
        "cha2": glorot_uniform(rng, (d_cha, n_channels)),
    }
    if zero_second:
        block["tok2"] = np.zeros((n_tokens, d_tok))
        block["cha2"] = np.zeros((d_cha, n_channels))
    return block


def mixer_block(h, p, prefix: str = ""):
    """Apply one block; ``p`` maps ``prefix + key`` to weights (tensors or arrays)."""
    w = lambda key: p[prefix + key]  # noqa: E731
    z = ops.layer_norm(h, w("ln1_g"), w("ln1_b"))
    h = ops.add(h, ops.matmul(w("tok2"), ops.gelu(ops.matmul(w("tok1"), z))))
    z = ops.layer_norm(h, w("ln2_g"), w("ln2_b"))
    h = ops.add(h, ops.matmul(ops.gelu(ops.matmul(z, w("cha1"))), w("cha2")))
    return h
