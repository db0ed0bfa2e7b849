"""Per-task execution under the three actions and the resulting cost breakdown.

Multi-slot transmission and MEC computation both reduce to the same
remaining-amount recurrence x_t = max(x_{t-1} - supply_{t-1}, 0) iterated
until empty (``drain``), with supplies expressed per slot. Cloud transmission
deliberately keeps the paper's single-rate form (rate at the decision slot);
the iterative variant is available behind a config flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List

from .config import CostWeights, SimParams, TaskSpec

ACTION_LOCAL = 0
ACTION_MEC = 1
ACTION_CLOUD = 2


class UnreachableCloudError(RuntimeError):
    """Cloud rate is zero at the decision slot; env converts to a stall."""


@dataclass
class CostBreakdown:
    """Time/energy/rent of one scheduled task plus penalty bookkeeping."""

    time_slots: float = 0.0
    energy: float = 0.0
    rent: float = 0.0
    deadline_overrun: float = 0.0
    overflow_mb: float = 0.0
    handover: bool = False
    scalar_cost: float = 0.0


@dataclass
class ExecutionTrace:
    """Slot-by-slot remaining amount from a drain run."""

    start_slot: int
    end_slot: int
    remaining_series: List[float] = field(default_factory=list)
    finished: bool = True
    remaining: float = 0.0

    @property
    def duration_slots(self) -> int:
        return self.end_slot - self.start_slot


def drain(initial: float, per_slot_supply: Iterable[float],
          max_slots: int | None = None, start_slot: int = 0) -> ExecutionTrace:
    """Iterate x <- max(x - supply, 0) until empty.

    ``per_slot_supply`` values are already per-slot deliveries (rate * T).
    If ``max_slots`` is exhausted first, the trace comes back unfinished and
    carries the remaining amount (the handover signal for the env).
    """
    if initial < 0:
        raise ValueError("initial amount must be nonnegative")
    remaining = float(initial)
    trace = ExecutionTrace(start_slot=start_slot, end_slot=start_slot,
                           remaining_series=[remaining])
    if remaining == 0.0:
        return trace
    supply_iter: Iterator[float] = iter(per_slot_supply)
    slots = 0
    while remaining > 0.0:
        if max_slots is not None and slots >= max_slots:
            trace.finished = False
            trace.remaining = remaining
            trace.end_slot = start_slot + slots
            return trace
        try:
            supply = next(supply_iter)
        except StopIteration:
            trace.finished = False
            trace.remaining = remaining
            trace.end_slot = start_slot + slots
            return trace
        if supply < 0:
            raise ValueError("supply values must be nonnegative")
        remaining = max(remaining - supply, 0.0)
        slots += 1
        trace.remaining_series.append(remaining)
    trace.end_slot = start_slot + slots
    return trace


def local_power(params: SimParams) -> float:
    """p_n = zeta * f^tau per slot of local computing."""
    return params.switched_capacitance * params.local_capacity_gc_per_slot ** params.power_exponent


def local_execute(task: TaskSpec, f_local_gc_per_slot: float,
                  zeta: float = 1.0, tau: float = 3.0) -> CostBreakdown:
    """Local action: time cr/f slots, energy p_n * time, no rent, no handover."""
    if f_local_gc_per_slot <= 0:
        raise ValueError("local capacity must be positive")
    time_slots = task.cycles_gc / f_local_gc_per_slot
    p_n = zeta * f_local_gc_per_slot ** tau
    return CostBreakdown(time_slots=time_slots, energy=p_n * time_slots)


def mec_execute(task: TaskSpec, rate_series: Iterable[float],
                capacity_series: Iterable[float], boundary_slot: int,
                tx_power_w: float, slot_s: float) -> CostBreakdown:
    """MEC action: drain data over rates, then cycles over MEC capacity.

    ``boundary_slot`` is the slot (relative to the decision slot 0) during
    which the vehicle crosses into the next RSU cell; a transmission still
    unfinished then is marked handover and carries no other cost fields.
    MEC-side execution energy is the server's, not the vehicle's, and is
    excluded.
    """
    if boundary_slot < 0:
        raise ValueError("boundary_slot must be >= 0 relative to the decision slot")
    tx = drain(task.data_mb, rate_series, max_slots=boundary_slot)
    if not tx.finished:
        return CostBreakdown(handover=True)
    comp = drain(task.cycles_gc, capacity_series, start_slot=tx.end_slot)
    if not comp.finished:
        raise RuntimeError("capacity series exhausted before MEC execution finished")
    tx_slots = tx.duration_slots
    return CostBreakdown(
        time_slots=float(tx_slots + comp.duration_slots),
        energy=tx_power_w * tx_slots * slot_s,
    )


def cloud_execute(task: TaskSpec, rate_now_mb_per_slot: float, params: SimParams) -> CostBreakdown:
    """Cloud action: single-rate transmission, constant-capacity computation, rent."""
    if rate_now_mb_per_slot <= 0:
        raise UnreachableCloudError("cloud rate is zero at the decision slot")
    tx_slots = task.data_mb / rate_now_mb_per_slot
    comp_slots = task.cycles_gc / params.cloud_capacity_gc_per_slot
    rent = (params.rent_transfer_coeff * task.data_mb
            + params.rent_compute_coeff * task.cycles_gc ** params.rent_price_exponent)
    return CostBreakdown(
        time_slots=tx_slots + comp_slots,
        energy=params.tx_power_w * tx_slots * params.slot_duration_s,
        rent=rent,
    )


def scalarize(breakdown: CostBreakdown, weights: CostWeights, slot_s: float) -> float:
    """C = xi1*t + xi2*e + xi3*rc with time converted to seconds."""
    c = (weights.xi_time * breakdown.time_slots * slot_s
         + weights.xi_energy * breakdown.energy
         + weights.xi_rent * breakdown.rent)
    breakdown.scalar_cost = c
    return c


def constant_supply_duration(initial: float, supply_per_slot: float) -> int:
    """Closed form ceil(d / s) matching drain on a constant supply."""
    if initial <= 0:
        return 0
    return int(math.ceil(initial / supply_per_slot - 1e-12))
