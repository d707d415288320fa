"""Differentiable token selection via entropic optimal transport.

Pooling along a candidate axis is phrased as a transport problem between
the flattened candidate tokens and the output slots: the cost of sending
candidate token z to slot j is the negative scaled dot product with slot
j's learnable reference vector, candidates are only admissible toward
their own slot, and masked candidates are inadmissible everywhere.  The
plan is normalized in the log domain toward the slot marginals
(1/sqrt(K2) per slot, so the sqrt(K2)-scaled pooled output of a slot of
identical candidates is the candidate itself), and the pooled output is

    out_j = sqrt(K2) * sum_k P[k, j] * z_k.

With one admissible slot per candidate the balanced two-sided scaling
collapses to mask-uniform averaging regardless of cost, so only the slot
(column) marginals are enforced; the row constraint is dropped.  The
resulting per-slot weights are the entropic softmax of the references'
scores, which converges to hard minimum-cost selection as epsilon -> 0
and is differentiable everywhere.

A generic balanced log-domain Sinkhorn solver is provided separately for
transport problems with both marginals prescribed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class NumericalUnderflow(FloatingPointError):
    """Log-domain scalings produced non-finite values."""


_MASK_LOGIT = -1e30


@dataclass
class TransportPlan:
    """A nonnegative transport plan with its regularization metadata."""

    plan: torch.Tensor
    epsilon: float
    iterations: int
    row_marginal: torch.Tensor
    col_marginal: torch.Tensor

    def __post_init__(self):
        if self.plan.ndim != 2:
            raise ValueError("plan must be a matrix")
        if torch.any(self.plan < 0):
            raise ValueError("plan entries must be nonnegative")

    def rescaled_row_sums(self) -> torch.Tensor:
        return self.plan.sum(dim=1) / self.row_marginal

    def rescaled_col_sums(self) -> torch.Tensor:
        return self.plan.sum(dim=0) / self.col_marginal


def sinkhorn(
    cost,
    epsilon: float,
    iterations: int,
    row_marginal=None,
    col_marginal=None,
) -> TransportPlan:
    """Entropic OT by log-domain scaling with Newton-polished marginals.

    Solves for P = diag(u) exp(-cost/epsilon) diag(v) whose marginals
    match ``row_marginal`` and ``col_marginal`` (uniform probability
    vectors by default; totals must match).  The row potential is
    eliminated exactly, so row sums hold by construction and only the
    column potential is iterated: along a geometric epsilon path from
    the cost scale down to the target, each level takes damped Newton
    steps on the column-sum residual (falling back to a plain column
    scaling when a step does not reduce it).  Plain alternating scaling
    alone needs far more than 100 sweeps at cost-range/epsilon ratios in
    the thousands; the polished path reaches 1e-4 marginal error well
    inside a 100-iteration budget on bounded costs.  ``iterations`` caps
    the total update count; the solve stops early once the residual is
    at round-off.
    """
    C = torch.as_tensor(cost, dtype=torch.float64)
    if C.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not torch.all(torch.isfinite(C)):
        raise ValueError("cost must be finite")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n_rows, n_cols = C.shape
    r = (torch.full((n_rows,), 1.0 / n_rows, dtype=torch.float64)
         if row_marginal is None
         else torch.as_tensor(row_marginal, dtype=torch.float64))
    c = (torch.full((n_cols,), 1.0 / n_cols, dtype=torch.float64)
         if col_marginal is None
         else torch.as_tensor(col_marginal, dtype=torch.float64))
    if torch.any(r <= 0) or torch.any(c <= 0):
        raise ValueError("marginals must be positive")
    if not torch.isclose(r.sum(), c.sum()):
        raise ValueError("marginals must have equal total mass")
    log_c = torch.log(c)

    def row_softmax(g, e):
        return torch.softmax((g[None, :] - C) / e, dim=1)

    def colsums(g, e):
        return (r[:, None] * row_softmax(g, e)).sum(dim=0)

    def col_err(g, e):
        return float((colsums(g, e) / c - 1).abs().max())

    budget = int(iterations)
    spent = 0

    def newton_step(g, e):
        nonlocal spent
        spent += 1
        A = row_softmax(g, e)
        s = (r[:, None] * A).sum(dim=0)
        J = (torch.diag(s) - A.T @ (r[:, None] * A)) / e
        J = J + 1e-12 * float(s.max() / e) * torch.eye(n_cols, dtype=torch.float64)
        try:
            delta = torch.linalg.solve(J, c - s)
        except torch.linalg.LinAlgError:
            delta = torch.linalg.lstsq(J, c - s).solution
        base = col_err(g, e)
        step = 1.0
        for _ in range(25):
            trial = g + step * delta
            if col_err(trial, e) < base:
                return trial
            step *= 0.5
        return g + e * (log_c - torch.log(colsums(g, e)))

    g = torch.zeros(n_cols, dtype=torch.float64)
    eps0 = max(float(C.abs().max()), epsilon)
    n_levels = (
        max(int(math.ceil(math.log(eps0 / epsilon) / math.log(2.0))), 0)
        if eps0 > epsilon else 0
    )
    levels = [
        eps0 * (epsilon / eps0) ** (k / n_levels) for k in range(1, n_levels + 1)
    ] if n_levels else []
    for e in levels + [epsilon]:
        for _ in range(6):
            if spent >= budget:
                break
            err = col_err(g, e)
            if err < 1e-13 or (err < 1e-3 and e != epsilon):
                break
            g = newton_step(g, e)
    while spent < budget and col_err(g, epsilon) >= 1e-13:
        g = newton_step(g, epsilon)

    P = r[:, None] * row_softmax(g, epsilon)
    if not torch.all(torch.isfinite(P)):
        raise NumericalUnderflow("non-finite transport plan")
    return TransportPlan(P, float(epsilon), int(iterations), r, c)


class OtapParams(nn.Module):
    """Learnable slot references plus the transport regularization knobs.

    ``references`` has one row per output slot (or a single shared row,
    broadcast over slots); its width must match the token width.
    """

    def __init__(self, n_slots: int, width: int, epsilon: float = 0.1,
                 iterations: int = 50):
        super().__init__()
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.references = nn.Parameter(
            torch.zeros((n_slots, width), dtype=torch.float64)
        )
        self.epsilon = float(epsilon)
        self.iterations = int(iterations)

    def init_weights(self, generator: torch.Generator, std: float = 1.0) -> None:
        self.references.data.normal_(0.0, std, generator=generator)


def _selection_weights(values: torch.Tensor, params: OtapParams,
                       mask: torch.Tensor | None):
    k1, k2, k3 = values.shape[-3], values.shape[-2], values.shape[-1]
    refs = params.references
    if refs.shape[1] != k3:
        raise ValueError(
            f"reference width {refs.shape[1]} != token width {k3}"
        )
    if refs.shape[0] not in (1, k1):
        raise ValueError(
            f"{refs.shape[0]} references cannot serve {k1} slots"
        )
    scores = torch.einsum("...abk,ak->...ab", values,
                          refs.expand(k1, k3)) / math.sqrt(k3)
    logits = scores / params.epsilon
    if mask is not None:
        if mask.shape != values.shape[:-1]:
            raise ValueError("mask shape must match values minus feature axis")
        logits = torch.where(mask, logits, torch.full_like(logits, _MASK_LOGIT))
        empty = ~mask.any(dim=-1)
    else:
        empty = torch.zeros(values.shape[:-2], dtype=torch.bool)
    weights = torch.softmax(logits, dim=-1)
    if mask is not None:
        weights = weights * mask
    return weights, empty


def otap_aggregate(values: torch.Tensor, params: OtapParams,
                   mask: torch.Tensor | None = None):
    """Pool (..., K1, K2, K3) tokens to (..., K1, K3) along the K2 axis.

    Returns (pooled, empty) where ``empty`` flags slots with zero
    unmasked candidates; such slots pool to exactly zero.
    """
    weights, empty = _selection_weights(values, params, mask)
    pooled = torch.einsum("...ab,...abk->...ak", weights, values)
    pooled = pooled * (~empty).unsqueeze(-1)
    return pooled, empty


def otap_transport_plan(values: torch.Tensor, params: OtapParams,
                        mask: torch.Tensor | None = None) -> TransportPlan:
    """Materialize the full (K1*K2) x K1 plan for one unbatched instance.

    Row k of the plan corresponds to candidate (k // K2, k % K2); columns
    are output slots.  Cross-slot mass is zero by the admissibility
    costs, each column sums to 1/sqrt(K2) (its slot marginal), and
    ``sqrt(K2) * plan^T @ flat_tokens`` reproduces otap_aggregate.
    """
    if values.ndim != 3:
        raise ValueError("expected one unbatched (K1, K2, K3) instance")
    k1, k2, _ = values.shape
    weights, _ = _selection_weights(values, params, mask)
    plan = torch.zeros((k1 * k2, k1), dtype=torch.float64)
    for j in range(k1):
        plan[j * k2:(j + 1) * k2, j] = weights[j] / math.sqrt(k2)
    rows = torch.full((k1 * k2,), 1.0 / (k2 * math.sqrt(k2)), dtype=torch.float64)
    cols = torch.full((k1,), 1.0 / math.sqrt(k2), dtype=torch.float64)
    return TransportPlan(plan, params.epsilon, params.iterations, rows, cols)
