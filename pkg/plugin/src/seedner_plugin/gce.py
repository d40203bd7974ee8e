"""Noise-robust classification loss.

The generalized form (1 - p^q) / q interpolates between mean absolute
error at q = 1 (maximally noise-tolerant, slow to fit) and cross entropy
as q -> 0 (fast to fit, sensitive to label noise). Label smoothing folds
in by taking the loss's expectation under the smoothed target
distribution, so the q -> 0 limit is exactly smoothed cross entropy.
"""

from __future__ import annotations

import torch

IGNORE_INDEX = -100


def smoothed_gce_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    q: float,
    smoothing: float = 0.0,
    ignore_index: int = IGNORE_INDEX,
) -> torch.Tensor:
    """Mean over non-ignored rows of sum_k t_k * (1 - p_k^q) / q.

    ``logits`` is (N, K) raw scores, ``targets`` (N,) class indices, and
    t the one-hot target mixed with ``smoothing`` of uniform mass. Rows
    whose target equals ``ignore_index`` are dropped (padding). Computed
    in float64: near q = 0 the term 1 - p^q cancels catastrophically in
    single precision.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1]: {q}")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must be in [0, 1): {smoothing}")
    if logits.dim() != 2 or targets.dim() != 1 or logits.size(0) != targets.size(0):
        raise ValueError(
            f"shape mismatch: logits {tuple(logits.shape)}, targets {tuple(targets.shape)}")

    keep = targets != ignore_index
    if not bool(keep.any()):
        raise ValueError("every target is ignored")
    logits = logits[keep]
    targets = targets[keep]

    k = logits.size(-1)
    log_probs = torch.log_softmax(logits.double(), dim=-1)
    # (1 - p^q)/q == -expm1(q * log p)/q, stable for p -> 0 and q -> 0.
    per_class = -torch.expm1(q * log_probs) / q
    target_term = per_class.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    loss = (1.0 - smoothing) * target_term + (smoothing / k) * per_class.sum(-1)
    return loss.mean()
