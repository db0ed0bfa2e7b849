"""The offloading MDP: task queue, battery, vehicle motion and handover,
Markov-modulated Poisson task arrivals, state assembly, reward and episode
control.

Each decision schedules the queue head onto one of {local, MEC, cloud} and
collapses the task's whole multi-slot execution into a single transition.
Every advanced slot steps the fading links, resamples MEC capacity, moves the
vehicle, advances the task-rate chain, and appends new arrivals (dropping and
counting any that would overflow the queue).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import channel, compute
from .config import (STREAM_CAPACITY, STREAM_FADING_CLOUD, STREAM_FADING_MEC,
                     STREAM_INIT, STREAM_RATE_CHAIN, STREAM_TASKS, CostWeights,
                     SimParams, TaskSpec, ValidationError, make_rng,
                     sample_uniform)

OBS_DIM_FULL = 112
OBS_DIM_REDUCED = 7

# Safety horizon for drains that face no boundary (parked vehicle): a link in
# a fade this deep for this long does not occur at sane configs.
_DRAIN_HORIZON = 2000


class RateChain:
    """Markov-modulated task arrival rate; transitions every dwell_slots."""

    def __init__(self, states, transition, dwell_slots: int = 20):
        self.states = np.asarray(states, dtype=np.float64)
        self.P = np.asarray(transition, dtype=np.float64)
        if self.P.shape != (len(self.states), len(self.states)):
            raise ValidationError("transition matrix shape does not match states")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("transition matrix rows must be stochastic")
        if dwell_slots <= 0:
            raise ValidationError("dwell_slots must be positive")
        self.dwell_slots = int(dwell_slots)
        self.state_idx = 0
        self._slots_in_state = 0

    def seed_state(self, rng: np.random.Generator) -> None:
        self.state_idx = int(rng.integers(len(self.states)))
        self._slots_in_state = 0

    @property
    def lam(self) -> float:
        return float(self.states[self.state_idx])

    def advance(self, rng: np.random.Generator) -> float:
        """One slot of dwell; transitions per P when the dwell expires."""
        self._slots_in_state += 1
        if self._slots_in_state >= self.dwell_slots:
            self._slots_in_state = 0
            row = self.P[self.state_idx]
            self.state_idx = int(rng.choice(len(self.states), p=row))
        return self.lam


def default_rate_chain(lam_range=(0.1, 0.9), dwell_slots: int = 20) -> RateChain:
    """Four states spread over the range; hub topology where only state 2
    connects to 1, 3 and 4 (numeric probabilities are an artifact choice)."""
    lo, hi = lam_range
    states = np.linspace(lo, hi, 4)
    third = 1.0 / 3.0
    P = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [third, 0.0, third, third],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
    ])
    return RateChain(states, P, dwell_slots)


def generate_arrivals(lam: float, rng: np.random.Generator, params: SimParams,
                      slot: int, id_start: int) -> List[TaskSpec]:
    """Poisson(lam) new tasks for one slot, sizes drawn from the config ranges."""
    if lam < 0:
        raise ValidationError("arrival rate must be nonnegative")
    count = int(rng.poisson(lam)) if lam > 0 else 0
    tasks = []
    for k in range(count):
        tasks.append(TaskSpec(
            id=id_start + k,
            data_mb=sample_uniform(params.task_size_range_mb, rng),
            cycles_gc=sample_uniform(params.task_cycles_range_gc, rng),
            deadline_slots=params.deadline_slots,
            arrival_slot=slot,
        ))
    return tasks


class QueueState:
    """FIFO task queue bounded by occupied megabytes."""

    def __init__(self, capacity_mb: float):
        self.capacity_mb = capacity_mb
        self.tasks: deque[TaskSpec] = deque()
        self.occupied_mb = 0.0

    def __len__(self):
        return len(self.tasks)

    def push(self, task: TaskSpec) -> bool:
        """Append unless the task would overflow; returns False on drop."""
        if self.occupied_mb + task.data_mb > self.capacity_mb + 1e-12:
            return False
        self.tasks.append(task)
        self.occupied_mb += task.data_mb
        return True

    def push_front(self, task: TaskSpec) -> None:
        self.tasks.appendleft(task)
        self.occupied_mb += task.data_mb

    def pop(self) -> TaskSpec:
        task = self.tasks.popleft()
        self.occupied_mb = max(0.0, self.occupied_mb - task.data_mb)
        return task


class OraclePredictors:
    """Window-mean persistence baseline standing in for trained predictors."""

    def predict_rates(self, mec_window: np.ndarray, cloud_window: np.ndarray):
        return float(np.mean(mec_window)), float(np.mean(cloud_window))

    def predict_task_rate(self, lam_window: np.ndarray) -> float:
        return float(np.mean(lam_window))


def oracle_predict(window) -> float:
    """Mean of the history window (the test/persistence baseline)."""
    window = np.asarray(window, dtype=np.float64)
    if window.size == 0:
        raise ValidationError("oracle_predict needs a nonempty window")
    return float(window.mean())


@dataclass
class StepOutcome:
    """Per-decision bookkeeping passed out through info."""

    action: int = 0
    completed: bool = False
    handover: bool = False
    cost: Optional[compute.CostBreakdown] = None
    bracket: float = 0.0
    reward: float = 0.0
    slots_advanced: int = 0
    dropped_tasks: int = 0
    dropped_mb: float = 0.0


class OffloadEnv:
    """Single-vehicle offloading environment (reset/step interface)."""

    def __init__(self, params: SimParams, weights: CostWeights, seed: int = 0,
                 mode: str = "dynamic", obs_mode: str = "full",
                 predictors=None, rate_chain: Optional[RateChain] = None,
                 max_decisions: Optional[int] = None,
                 max_slots: Optional[int] = None,
                 initial_fill_fraction: Optional[float] = None,
                 trace_writer: Optional[Callable[[dict], None]] = None):
        if mode not in ("dynamic", "static"):
            raise ValidationError(f"unknown mode {mode!r}")
        if obs_mode not in ("full", "reduced"):
            raise ValidationError(f"unknown obs_mode {obs_mode!r}")
        self.params = params
        self.weights = weights
        self.seed = int(seed)
        self.mode = mode
        self.obs_mode = obs_mode
        self.predictors = predictors if predictors is not None else OraclePredictors()
        self._chain_template = rate_chain
        self.max_decisions = max_decisions
        self.max_slots = max_slots
        # Static mode pre-fills per config; dynamic mode starts empty unless a
        # fill is requested (training uses exploring starts, evaluation never).
        if initial_fill_fraction is None:
            initial_fill_fraction = params.static_fill_fraction if mode == "static" else 0.0
        self.initial_fill_fraction = initial_fill_fraction
        self.trace_writer = trace_writer
        self.obs_dim = OBS_DIM_FULL if obs_mode == "full" else OBS_DIM_REDUCED
        self._done = True
        self._warm = False

    # -- world ------------------------------------------------------------

    def _reseed(self):
        p = self.params
        self.rng_tasks = make_rng(self.seed, STREAM_TASKS)
        self.rng_fad_m = make_rng(self.seed, STREAM_FADING_MEC)
        self.rng_fad_c = make_rng(self.seed, STREAM_FADING_CLOUD)
        self.rng_cap = make_rng(self.seed, STREAM_CAPACITY)
        self.rng_chain = make_rng(self.seed, STREAM_RATE_CHAIN)
        self.rng_init = make_rng(self.seed, STREAM_INIT)

    def _mec_distance(self) -> float:
        p = self.params
        pos_in_cell = self.position_m - self.cell_idx * p.rsu_spacing_m
        return abs(pos_in_cell - 0.5 * p.rsu_spacing_m)

    def reset(self) -> np.ndarray:
        p = self.params
        self._reseed()
        self.slot = 0
        self.decisions = 0
        self.position_m = 0.0
        self.cell_idx = 0
        self.battery = p.initial_battery
        self.queue = QueueState(p.queue_capacity_mb)
        self._task_counter = 0
        self.retransmissions = 0
        self.dropped_tasks = 0
        self.dropped_mb = 0.0
        self._window_dropped_mb = 0.0
        self._window_dropped_tasks = 0

        if self._chain_template is not None:
            self.chain = RateChain(self._chain_template.states,
                                   self._chain_template.P,
                                   self._chain_template.dwell_slots)
        else:
            self.chain = default_rate_chain(p.rate_chain_range, p.rate_chain_dwell_slots)
        self.chain.seed_state(self.rng_chain)

        self.mec_link = channel.make_mec_link(p, self._mec_distance(), self.rng_fad_m)
        self.cloud_link = channel.make_cloud_link(p, self.rng_fad_c)
        self.capacity_now = sample_uniform(p.mec_capacity_range_gc_per_slot, self.rng_cap)

        n_hist = p.gain_history_len
        self.gain_m_hist: deque = deque(maxlen=n_hist)
        self.gain_c_hist: deque = deque(maxlen=n_hist)
        self.rate_m_hist: deque = deque(maxlen=n_hist)
        self.rate_c_hist: deque = deque(maxlen=n_hist)
        self.cap_hist: deque = deque(maxlen=p.capacity_history_len)
        self.lam_hist: deque = deque(maxlen=5)

        if self.initial_fill_fraction > 0:
            self._prefill(self.initial_fill_fraction)

        warmup = max(p.gain_history_len, p.capacity_history_len, 5)
        for _ in range(warmup):
            self._advance_one_slot()
        self._done = False
        self._warm = True

        if self.mode == "dynamic":
            self._idle_until_task()
        if self.mode == "static" and len(self.queue) == 0:
            self._done = True
        return self._assemble_obs()

    def _prefill(self, fraction: float):
        p = self.params
        target = fraction * p.queue_capacity_mb
        while True:
            task = TaskSpec(
                id=self._task_counter,
                data_mb=sample_uniform(p.task_size_range_mb, self.rng_tasks),
                cycles_gc=sample_uniform(p.task_cycles_range_gc, self.rng_tasks),
                deadline_slots=p.deadline_slots,
                arrival_slot=0,
            )
            if self.queue.occupied_mb + task.data_mb > target:
                break
            self.queue.push(task)
            self._task_counter += 1

    def _advance_one_slot(self):
        """One slot transition: motion, fading, capacity, chain, arrivals."""
        p = self.params
        dist = p.vehicle_speed_mps * p.slot_duration_s
        self.position_m += dist
        new_cell = int(self.position_m // p.rsu_spacing_m)
        if new_cell != self.cell_idx:
            self.cell_idx = new_cell
            # Fresh RSU association: new small-scale channel.
            self.mec_link.h = channel.init_fading(self.rng_fad_m)
        else:
            channel.step_fading(self.mec_link, self.rng_fad_m)
        channel.step_fading(self.cloud_link, self.rng_fad_c)
        self.mec_link.large_scale = channel.large_scale_loss(
            self._mec_distance(), p.path_loss_exponent, p.path_loss_ref_m)

        self.capacity_now = sample_uniform(p.mec_capacity_range_gc_per_slot, self.rng_cap)
        lam = self.chain.advance(self.rng_chain)
        self.slot += 1

        if self.mode == "dynamic":
            for task in generate_arrivals(lam, self.rng_tasks, p, self.slot,
                                          self._task_counter):
                self._task_counter += 1
                if not self.queue.push(task):
                    self.dropped_tasks += 1
                    self.dropped_mb += task.data_mb
                    self._window_dropped_tasks += 1
                    self._window_dropped_mb += task.data_mb

        g_m = channel.gain(self.mec_link)
        g_c = channel.gain(self.cloud_link)
        self.gain_m_hist.append(g_m)
        self.gain_c_hist.append(g_c)
        self.rate_m_hist.append(channel.link_rate(self.mec_link, p.tx_power_w,
                                                  p.slot_duration_s))
        self.rate_c_hist.append(channel.link_rate(self.cloud_link, p.tx_power_w,
                                                  p.slot_duration_s))
        self.cap_hist.append(self.capacity_now)
        self.lam_hist.append(0.0 if self.mode == "static" else lam)

    def _idle_until_task(self):
        while len(self.queue) == 0 and not self._done:
            if self.max_slots is not None and self.slot >= self.max_slots:
                self._done = True
                return
            self._advance_one_slot()

    def _slots_to_boundary(self) -> Optional[int]:
        """Complete slots available before the crossing slot (None if parked)."""
        p = self.params
        dist = p.vehicle_speed_mps * p.slot_duration_s
        if dist <= 0:
            return None
        remaining = (self.cell_idx + 1) * p.rsu_spacing_m - self.position_m
        return max(0, int(math.ceil(remaining / dist - 1e-12)) - 1)

    # -- streams consumed by the compute drains ----------------------------

    def _rate_stream_mec(self):
        p = self.params
        while True:
            r = channel.link_rate(self.mec_link, p.tx_power_w, p.slot_duration_s)
            self._advance_one_slot()
            yield r

    def _rate_stream_cloud(self):
        p = self.params
        while True:
            r = channel.link_rate(self.cloud_link, p.tx_power_w, p.slot_duration_s)
            self._advance_one_slot()
            yield r

    def _capacity_stream(self):
        while True:
            c = self.capacity_now
            self._advance_one_slot()
            yield c

    # -- MDP interface ------------------------------------------------------

    def step(self, action: int):
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        if action not in (0, 1, 2):
            raise ValidationError(f"action must be in {{0,1,2}}, got {action}")
        p, w = self.params, self.weights
        # Peek, don't pop: the in-flight task keeps its queue reservation, so
        # arrivals during the service window can never push occupancy past the
        # capacity, and an interrupted task is simply still at the head.
        task = self.queue.tasks[0]
        self._window_dropped_mb = 0.0
        self._window_dropped_tasks = 0
        start_slot = self.slot
        out = StepOutcome(action=action)

        if action == compute.ACTION_LOCAL:
            bd = compute.local_execute(task, p.local_capacity_gc_per_slot,
                                       p.switched_capacitance, p.power_exponent)
            n_slots = max(1, int(math.ceil(bd.time_slots - 1e-9)))
            for _ in range(n_slots):
                self._advance_one_slot()
        elif action == compute.ACTION_MEC:
            allowed = self._slots_to_boundary()
            bd = compute.mec_execute(
                task, self._rate_stream_mec(), self._capacity_stream(),
                boundary_slot=allowed if allowed is not None else _DRAIN_HORIZON,
                tx_power_w=p.tx_power_w, slot_s=p.slot_duration_s)
            if bd.handover and allowed is None:
                # Parked vehicle hit the safety horizon, not a boundary: a
                # stall, not a handover.
                bd = compute.CostBreakdown(time_slots=2.0 * task.deadline_slots)
            elif bd.handover:
                self._advance_one_slot()  # the interrupted crossing slot
        else:
            allowed = self._slots_to_boundary()
            if p.cloud_uses_iterative_drain:
                bd = self._cloud_iterative(task, allowed)
            else:
                rate_now = channel.link_rate(self.cloud_link, p.tx_power_w,
                                             p.slot_duration_s)
                bd = self._cloud_single_rate(task, rate_now, allowed)
                if bd.handover:
                    for _ in range(allowed + 1):
                        self._advance_one_slot()
                else:
                    for _ in range(max(1, int(math.ceil(bd.time_slots - 1e-9)))):
                        self._advance_one_slot()

        out.cost = bd
        out.slots_advanced = self.slot - start_slot
        if bd.handover:
            self.retransmissions += 1
            reward = -p.handover_penalty
        else:
            self.queue.pop()
            out.completed = True
            bd.deadline_overrun = max(bd.time_slots - task.deadline_slots, 0.0)
            bd.overflow_mb = self._window_dropped_mb
            c = compute.scalarize(bd, w, p.slot_duration_s)
            out.bracket = c + w.eta * bd.deadline_overrun + w.psi * bd.overflow_mb
            reward = -w.upsilon * out.bracket
            self.battery -= bd.energy
            if self.battery <= 0.0:
                self.battery = 0.0
                self._done = True
        out.handover = bd.handover
        out.reward = reward
        out.dropped_tasks = self._window_dropped_tasks
        out.dropped_mb = self._window_dropped_mb
        self.decisions += 1

        if self.mode == "static":
            if len(self.queue) == 0:
                self._done = True
        else:
            self._idle_until_task()
        if self.max_decisions is not None and self.decisions >= self.max_decisions:
            self._done = True
        if self.max_slots is not None and self.slot >= self.max_slots:
            self._done = True

        info = {
            "slot": self.slot,
            "decisions": self.decisions,
            "action": action,
            "task_id": task.id,
            "task_data_mb": task.data_mb,
            "task_cycles_gc": task.cycles_gc,
            "completed": out.completed,
            "handover": out.handover,
            "time_slots": bd.time_slots,
            "energy": bd.energy,
            "rent": bd.rent,
            "scalar_cost": bd.scalar_cost,
            "deadline_overrun": bd.deadline_overrun,
            "overflow_mb": bd.overflow_mb,
            "bracket": out.bracket,
            "retransmissions": self.retransmissions,
            "dropped_tasks": self.dropped_tasks,
            "dropped_mb": self.dropped_mb,
            "queue_mb": self.queue.occupied_mb,
            "battery": self.battery,
            "slots_advanced": out.slots_advanced,
        }
        if self.trace_writer is not None:
            self.trace_writer(info)
        obs = self._assemble_obs() if not self._done else np.zeros(self.obs_dim)
        return obs, reward, self._done, info

    def _cloud_single_rate(self, task: TaskSpec, rate_now: float,
                           allowed: Optional[int]) -> compute.CostBreakdown:
        try:
            bd = compute.cloud_execute(task, rate_now, self.params)
        except compute.UnreachableCloudError:
            # Deadline-length stall with the full deadline penalty; no energy
            # or rent is charged for the unreachable attempt.
            return compute.CostBreakdown(time_slots=2.0 * task.deadline_slots)
        tx_slots_occupied = max(1, int(math.ceil(task.data_mb / rate_now - 1e-9)))
        if allowed is not None and tx_slots_occupied > allowed:
            return compute.CostBreakdown(handover=True)
        return bd

    def _cloud_iterative(self, task: TaskSpec, allowed: Optional[int]) -> compute.CostBreakdown:
        """Optional mode: cloud transmission uses the same drain recurrence as
        the MEC link instead of the paper's single-rate formula."""
        p = self.params
        tx = compute.drain(task.data_mb, self._rate_stream_cloud(),
                           max_slots=allowed if allowed is not None else _DRAIN_HORIZON)
        if not tx.finished:
            self._advance_one_slot()  # the interrupted crossing slot
            return compute.CostBreakdown(handover=True)
        comp_slots = task.cycles_gc / p.cloud_capacity_gc_per_slot
        total_occupied = max(1, int(math.ceil(tx.duration_slots + comp_slots - 1e-9)))
        for _ in range(total_occupied - tx.duration_slots):
            self._advance_one_slot()
        rent = (p.rent_transfer_coeff * task.data_mb
                + p.rent_compute_coeff * task.cycles_gc ** p.rent_price_exponent)
        return compute.CostBreakdown(
            time_slots=tx.duration_slots + comp_slots,
            energy=p.tx_power_w * tx.duration_slots * p.slot_duration_s,
            rent=rent,
        )

    # -- observation --------------------------------------------------------

    def _assemble_obs(self) -> np.ndarray:
        if not self._warm:
            raise RuntimeError("observation requested before reset warmed the histories")
        head = self.queue.tasks[0] if len(self.queue) else None
        d = head.data_mb if head else 0.0
        cr = head.cycles_gc if head else 0.0
        if self.obs_mode == "reduced":
            return np.array([
                self.queue.occupied_mb, self.battery, d, cr,
                self.gain_m_hist[-1], self.gain_c_hist[-1], self.cap_hist[-1],
            ])
        g_m = np.asarray(self.gain_m_hist)
        g_c = np.asarray(self.gain_c_hist)
        caps = np.asarray(self.cap_hist)
        t_m, t_c = self.predictors.predict_rates(np.asarray(self.rate_m_hist),
                                                 np.asarray(self.rate_c_hist))
        u = self.predictors.predict_task_rate(np.asarray(self.lam_hist))
        obs = np.concatenate([
            [self.queue.occupied_mb, self.battery, d, cr],
            g_m, g_c, caps, [t_m, t_c, u],
        ])
        if obs.shape[0] != self.obs_dim:
            raise RuntimeError(f"observation dim {obs.shape[0]} != {self.obs_dim}")
        return obs


def assemble_observation(env: OffloadEnv) -> np.ndarray:
    """Current decision-slot observation vector (112 full / 7 reduced)."""
    return env._assemble_obs()


def advance_rate_chain(chain: RateChain, rng: np.random.Generator) -> float:
    """One slot of the task-rate chain; returns the (possibly new) lambda."""
    return chain.advance(rng)


def world_trace(params: SimParams, weights: CostWeights, seed: int,
                n_slots: int, rate_chain: Optional[RateChain] = None) -> dict:
    """Roll the world with no scheduling for n_slots; used to pretrain
    predictors (rates and arrival intensity do not depend on actions)."""
    env = OffloadEnv(params, weights, seed=seed, mode="dynamic",
                     rate_chain=rate_chain)
    env.reset()
    rate_m = np.empty(n_slots)
    rate_c = np.empty(n_slots)
    lam = np.empty(n_slots)
    cap = np.empty(n_slots)
    for i in range(n_slots):
        env._advance_one_slot()
        rate_m[i] = env.rate_m_hist[-1]
        rate_c[i] = env.rate_c_hist[-1]
        lam[i] = env.lam_hist[-1]
        cap[i] = env.cap_hist[-1]
    return {"rate_mec": rate_m, "rate_cloud": rate_c, "lam": lam, "capacity": cap}
