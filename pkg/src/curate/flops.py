"""Compute-cost accounting for selection-based training.

All costs are in units of F, the cost of one forward pass of the learner on
one example, and are quoted per trained data point.  A plain IID update
costs 3F (forward + backward at roughly twice the forward).

Full-resolution selection reuses the scoring forward pass of the selected
items for the training forward, so scoring a super-batch of B items to
train on b adds F*B/b - F:

    cost_jest = 3F + F*B/b - F = F * (2 + B/b)

Mixed-resolution selection scores with an approximate encode (factor A of a
full forward) and trains half the batch at each resolution.  The approximate
scoring pass cannot be reused for the full-resolution training forward:

    cost_flexi = 3F * (0.5 + 0.5*A) + A*F*B/b

Reference-model scoring is excluded by default (its embeddings are cached
across runs); pass ``include_reference=True`` to add a full-resolution
reference pass per super-batch item.
"""

from __future__ import annotations

from dataclasses import dataclass

COST_IID = "iid"
COST_JEST = "jest"
COST_FLEXI = "flexi"
COST_KINDS = (COST_IID, COST_JEST, COST_FLEXI)

DEFAULT_APPROX_FLOPS = 0.28
DEFAULT_APPROX_TIME = 1.0 / 3.0


def _check_forward_cost(forward_cost: float) -> None:
    if not forward_cost > 0.0:
        raise ValueError(f"forward cost must be positive, got {forward_cost}")


def _check_filter_ratio(filter_ratio: float) -> None:
    if not (0.0 <= filter_ratio < 1.0):
        raise ValueError(f"filter ratio must lie in [0, 1), got {filter_ratio}")


def _check_approx_factor(approx_factor: float) -> None:
    if not (0.0 < approx_factor <= 1.0):
        raise ValueError(f"approximation factor must lie in (0, 1], got {approx_factor}")


def cost_iid(forward_cost: float = 1.0) -> float:
    """Per-data-point cost of a plain IID update: 3F."""
    _check_forward_cost(forward_cost)
    return 3.0 * forward_cost


def cost_jest(
    filter_ratio: float,
    forward_cost: float = 1.0,
    include_reference: bool = False,
) -> float:
    """Per-data-point cost of full-resolution selection: F * (2 + B/b)."""
    _check_forward_cost(forward_cost)
    _check_filter_ratio(filter_ratio)
    ratio_bb = 1.0 / (1.0 - filter_ratio)
    cost = forward_cost * (2.0 + ratio_bb)
    if include_reference:
        cost += forward_cost * ratio_bb
    return cost


def ratio_jest(filter_ratio: float, include_reference: bool = False) -> float:
    """Full-resolution selection cost relative to an IID update."""
    return cost_jest(filter_ratio, 1.0, include_reference) / cost_iid(1.0)


def cost_flexi(
    filter_ratio: float,
    approx_factor: float,
    forward_cost: float = 1.0,
    include_reference: bool = False,
) -> float:
    """Per-data-point cost of mixed-resolution selection:
    3F*(0.5 + 0.5A) + A*F*B/b."""
    _check_forward_cost(forward_cost)
    _check_filter_ratio(filter_ratio)
    _check_approx_factor(approx_factor)
    ratio_bb = 1.0 / (1.0 - filter_ratio)
    cost = 3.0 * forward_cost * (0.5 + 0.5 * approx_factor)
    cost += approx_factor * forward_cost * ratio_bb
    if include_reference:
        cost += forward_cost * ratio_bb
    return cost


def ratio_flexi(
    filter_ratio: float, approx_factor: float, include_reference: bool = False
) -> float:
    """Mixed-resolution selection cost relative to an IID update."""
    return cost_flexi(filter_ratio, approx_factor, 1.0, include_reference) / cost_iid(
        1.0
    )


def overhead_percent(ratio: float) -> float:
    """Cost ratio re-expressed as percent FLOPs above the IID baseline."""
    return 100.0 * (ratio - 1.0)


def iso_flop_budget(base_examples: float, approx_fraction: float) -> float:
    """Example budget matching the compute of ``base_examples`` full-cost
    examples when a fraction lambda of each batch runs at quarter cost.

    Per-iteration cost scales with 0.25*lambda + (1 - lambda), so the budget
    is base / (0.25*lambda + 1 - lambda).
    """
    if not (0.0 <= approx_fraction <= 1.0):
        raise ValueError(
            f"approximate fraction must lie in [0, 1], got {approx_fraction}"
        )
    if base_examples <= 0.0:
        raise ValueError(f"base example budget must be positive, got {base_examples}")
    return base_examples / (0.25 * approx_fraction + 1.0 - approx_fraction)


def multires_train_cost_fraction(
    approx_flops: float = DEFAULT_APPROX_FLOPS,
    approx_time: float = DEFAULT_APPROX_TIME,
) -> tuple[float, float]:
    """(FLOP fraction, time fraction) of 50:50 mixed-resolution training
    relative to full-resolution training: 0.5 + 0.5 * factor each."""
    _check_approx_factor(approx_flops)
    _check_approx_factor(approx_time)
    return 0.5 + 0.5 * approx_flops, 0.5 + 0.5 * approx_time


@dataclass(frozen=True)
class FlopModel:
    """Cost model bound to one training configuration."""

    super_batch_size: int
    sub_batch_size: int
    forward_cost: float = 1.0
    approx_factor: float = DEFAULT_APPROX_FLOPS
    approx_fraction: float = 0.5
    include_reference: bool = False

    def __post_init__(self) -> None:
        _check_forward_cost(self.forward_cost)
        _check_approx_factor(self.approx_factor)
        if self.sub_batch_size < 1:
            raise ValueError(
                f"sub_batch_size must be >= 1, got {self.sub_batch_size}"
            )
        if self.sub_batch_size > self.super_batch_size:
            raise ValueError(
                f"sub_batch_size {self.sub_batch_size} exceeds super-batch "
                f"size {self.super_batch_size}"
            )
        if not (0.0 <= self.approx_fraction <= 1.0):
            raise ValueError(
                f"approximate fraction must lie in [0, 1], got {self.approx_fraction}"
            )

    @property
    def filter_ratio(self) -> float:
        return 1.0 - self.sub_batch_size / self.super_batch_size

    def cost_per_point(self, kind: str) -> float:
        """Per-trained-data-point cost under the given accounting kind."""
        if kind == COST_IID:
            return cost_iid(self.forward_cost)
        if kind == COST_JEST:
            return cost_jest(
                self.filter_ratio, self.forward_cost, self.include_reference
            )
        if kind == COST_FLEXI:
            return cost_flexi(
                self.filter_ratio,
                self.approx_factor,
                self.forward_cost,
                self.include_reference,
            )
        raise ValueError(f"unknown cost kind {kind!r}; expected one of {COST_KINDS}")

    def cost_per_step(self, kind: str) -> float:
        """Cost of one training step (sub-batch of b data points)."""
        return self.cost_per_point(kind) * self.sub_batch_size
