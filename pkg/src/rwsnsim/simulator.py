"""Slotted Monte-Carlo engine comparing centralized and contention scheduling.

Slot order of events: the strategy picks the transmitter(s); a lone
transmitter gets a packet-error draw and the downlink charge, two or more
collide (losing transmit energy, no charge); then arrivals are applied,
dropping on full queues; finally contention controllers update and the
next beacon is computed. A run is strictly sequential and deterministic
given its seed: arrivals, strategy choices, error draws, and backoff draws
each consume their own substream, so runs that differ only in strategy see
identical arrival processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NetworkParams
from .energy import NodeEnergyProfile, energy_profiles, packet_success_prob
from .eqat import Decision, EqatController, TxProbDesign, eqat_decide, escalate, tx_prob
from .mdp import myopic_chooser, policy_chooser

STRATEGY_NAMES = ("ehmdp", "fq", "rs", "eqat", "dfq", "rc")


@dataclass
class RunMetrics:
    """Aggregate packet accounting for one run.

    Conservation: generated == delivered + dropped_overflow + in_queue_final
    (nothing is in flight at the end of a slot; collided and corrupted
    packets stay queued, so the retries-exhausted counter stays zero under
    pure backoff and exists for audit only).
    """

    generated: int = 0
    delivered: int = 0
    dropped_overflow: int = 0
    dropped_collision_retries_exhausted: int = 0
    in_queue_final: int = 0
    slots: int = 0
    duration: float = 0.0  # seconds simulated

    @property
    def throughput(self) -> int:
        return self.delivered

    @property
    def throughput_pps(self) -> float:
        return self.delivered / self.duration if self.duration > 0 else 0.0

    @property
    def loss_rate(self) -> float:
        return self.dropped_overflow / self.generated if self.generated else 0.0


@dataclass(frozen=True)
class SlotTrace:
    """End-of-slot snapshot; energy_levels is the battery change applied to
    the charged node (net of transmit cost, after clamping)."""

    slot: int
    batteries: tuple[int, ...]
    queues: tuple[int, ...]
    transmitters: tuple[int, ...]
    outcome: str  # success | ber_fail | collision | idle
    energy_levels: int


class Streams:
    """Named rng substreams so different random purposes never interleave."""

    def __init__(self, seed: int):
        self.arrival = np.random.default_rng([seed, 0])
        self.strategy = np.random.default_rng([seed, 1])
        self.ber = np.random.default_rng([seed, 2])
        self.backoff = np.random.default_rng([seed, 3])


class Simulation:
    def __init__(self, params: NetworkParams, strategy: "Strategy", seed: int,
                 trace: bool = False):
        self.params = params
        self.strategy = strategy
        self.rng = Streams(seed)
        self.profiles = energy_profiles(params)
        self.ps = packet_success_prob(params)
        n = params.n_nodes
        self.batteries = [params.initial_battery] * n
        self.queues = [0] * n
        self.metrics = RunMetrics()
        self.traces: list[SlotTrace] | None = [] if trace else None
        self.slot = 0
        strategy.bind(self)

    def can_transmit(self, node: int) -> bool:
        return (self.queues[node] >= 1
                and self.batteries[node] >= self.profiles[node].min_tx_level)

    def _apply_levels(self, node: int, delta: int) -> int:
        before = self.batteries[node]
        after = max(0, min(self.params.battery_levels, before + delta))
        self.batteries[node] = after
        return after - before

    def step(self):
        p = self.params
        transmitters = self.strategy.select(self)
        outcome = "idle"
        energy = 0

        if len(transmitters) == 1:
            (t,) = transmitters
            if self.can_transmit(t):
                if self.rng.ber.random() < self.ps:
                    outcome = "success"
                    self.queues[t] -= 1
                    self.metrics.delivered += 1
                else:
                    outcome = "ber_fail"
                # downlink charges the node either way, net of transmit cost
                energy = self._apply_levels(t, self.profiles[t].delta_levels)
            else:
                # a centrally selected node without a packet (or battery)
                # gets the whole slot as charge
                energy = self._apply_levels(t, self.profiles[t].harvest_only_levels)
        elif len(transmitters) >= 2:
            outcome = "collision"
            for t in transmitters:
                self._apply_levels(t, -self.profiles[t].min_tx_level)

        self.strategy.on_outcome(self, transmitters, outcome)

        lam = p.arrival_prob
        for _ in range(p.arrivals_per_slot):
            draws = self.rng.arrival.random(p.n_nodes)
            for n in range(p.n_nodes):
                if draws[n] < lam:
                    self.metrics.generated += 1
                    if self.queues[n] >= p.queue_cap:
                        self.metrics.dropped_overflow += 1
                    else:
                        self.queues[n] += 1

        self.strategy.end_of_slot(self)

        if self.traces is not None:
            self.traces.append(SlotTrace(
                slot=self.slot,
                batteries=tuple(self.batteries),
                queues=tuple(self.queues),
                transmitters=tuple(transmitters),
                outcome=outcome,
                energy_levels=energy,
            ))
        self.slot += 1

    def run(self, slots: int) -> RunMetrics:
        for _ in range(slots):
            self.step()
        m = self.metrics
        m.slots = slots
        m.duration = slots * self.params.slot_len
        m.in_queue_final = sum(self.queues)
        return m


# -- strategies ---------------------------------------------------------------


class Strategy:
    """One scheduling policy; centralized ones return at most one node."""

    name: str = "?"
    centralized: bool = True

    def bind(self, sim: Simulation):
        pass

    def select(self, sim: Simulation) -> list[int]:
        raise NotImplementedError

    def on_outcome(self, sim: Simulation, transmitters: list[int], outcome: str):
        pass

    def end_of_slot(self, sim: Simulation):
        pass


class FullQueueStrategy(Strategy):
    """Schedules the longest queue; ties to the lowest node index."""

    name = "fq"

    def select(self, sim):
        # max() keeps the first maximal element, i.e. the lowest index
        return [max(range(sim.params.n_nodes), key=lambda i: sim.queues[i])]


class RandomSelectionStrategy(Strategy):
    """Schedules uniformly among nodes holding at least one packet."""

    name = "rs"

    def select(self, sim):
        eligible = [i for i in range(sim.params.n_nodes) if sim.queues[i] >= 1]
        if not eligible:
            return []
        return [eligible[int(sim.rng.strategy.integers(len(eligible)))]]


class EhmdpStrategy(Strategy):
    """Scheduler driven by the solved policy, or its myopic stand-in."""

    def __init__(self, params: NetworkParams, vi_result=None):
        if vi_result is not None:
            self._choose = policy_chooser(vi_result)
            self.name = "ehmdp"
            self.exact = True
        else:
            self._choose = myopic_chooser(params)
            self.name = "ehmdp"
            self.exact = False

    def select(self, sim):
        return [self._choose(sim.batteries, sim.queues)]


class DecentralizedFullQueueStrategy(Strategy):
    """Every node whose queue is full (and can afford it) transmits."""

    name = "dfq"
    centralized = False

    def select(self, sim):
        cap = sim.params.queue_cap
        return [i for i in range(sim.params.n_nodes)
                if sim.queues[i] >= cap and sim.can_transmit(i)]


class RandomContentionStrategy(Strategy):
    """Each backlogged node transmits with a fixed contention probability."""

    name = "rc"
    centralized = False

    def __init__(self, contention_prob: float = 0.75):
        self.contention_prob = contention_prob

    def select(self, sim):
        out = []
        for i in range(sim.params.n_nodes):
            if sim.can_transmit(i):
                if sim.rng.strategy.random() < self.contention_prob:
                    out.append(i)
        return out


class EqatStrategy(Strategy):
    """Energy-queue aware contention with threshold gate and backoff.

    Beacon probabilities are the controllers' effective values computed at
    the end of the previous slot (one slot stale), zero for nodes that will
    still be backing off.
    """

    name = "eqat"
    centralized = False

    def __init__(self, design: TxProbDesign, alpha: float = 0.5, threshold: float = 0.0,
                 backoff_window: int = 8):
        self.design = design
        self.alpha = alpha
        self.threshold = threshold
        self.backoff_window = backoff_window

    def bind(self, sim: Simulation):
        p = sim.params
        self.controllers = [
            EqatController(design=self.design, alpha=self.alpha, threshold=self.threshold,
                           backoff_window=self.backoff_window)
            for _ in range(p.n_nodes)
        ]
        # design values on the (battery, queue) grid, computed once
        self._p_table = [
            [tx_prob(self.design, e, q, p) for q in range(p.queue_cap + 1)]
            for e in range(p.battery_levels + 1)
        ]
        self.beacon = self._beacon(sim)

    def _effective(self, sim: Simulation, node: int) -> float:
        ctl = self.controllers[node]
        base = self._p_table[sim.batteries[node]][sim.queues[node]]
        return escalate(base, ctl.alpha, ctl.fail_count)

    def _beacon(self, sim: Simulation) -> list[float]:
        # a node that will not contend (backoff, no packet, or battery below
        # one transmission) honestly advertises zero
        return [
            0.0
            if self.controllers[i].backoff_remaining > 0 or not sim.can_transmit(i)
            else self._effective(sim, i)
            for i in range(sim.params.n_nodes)
        ]

    def select(self, sim):
        n = sim.params.n_nodes
        ps_clean = sim.ps * (1.0 - sim.params.arrival_prob)
        # prefix/suffix products of (1 - beacon) for O(N) competitor terms
        pre = [1.0] * (n + 1)
        for i in range(n):
            pre[i + 1] = pre[i] * (1.0 - self.beacon[i])
        suf = [1.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            suf[i] = suf[i + 1] * (1.0 - self.beacon[i])

        out = []
        for i in range(n):
            ctl = self.controllers[i]
            if ctl.backoff_remaining > 0 or not sim.can_transmit(i):
                continue
            if sim.rng.strategy.random() >= self._effective(sim, i):
                continue
            if ps_clean * pre[i] * suf[i + 1] < ctl.threshold:
                continue
            out.append(i)
        return out

    def on_outcome(self, sim, transmitters, outcome):
        if outcome == "collision":
            for t in transmitters:
                self.controllers[t].on_collision(sim.rng.backoff)
        elif outcome == "success":
            self.controllers[transmitters[0]].on_success()
        elif outcome == "ber_fail":
            self.controllers[transmitters[0]].on_ber_failure()

    def end_of_slot(self, sim):
        for ctl in self.controllers:
            ctl.tick()
        self.beacon = self._beacon(sim)


def make_strategy(
    name: str,
    params: NetworkParams,
    *,
    design: TxProbDesign | None = None,
    vi_result=None,
    contention_prob: float = 0.75,
    eqat_alpha: float = 0.5,
    eqat_threshold: float = 0.0,
    backoff_window: int = 8,
) -> Strategy:
    """Fresh strategy instance for one run (contention state is per-run)."""
    name = name.lower()
    if name == "fq":
        return FullQueueStrategy()
    if name == "rs":
        return RandomSelectionStrategy()
    if name == "ehmdp":
        return EhmdpStrategy(params, vi_result=vi_result)
    if name == "dfq":
        return DecentralizedFullQueueStrategy()
    if name == "rc":
        return RandomContentionStrategy(contention_prob)
    if name == "eqat":
        return EqatStrategy(design or TxProbDesign.exponential(1.0, 0.05), alpha=eqat_alpha,
                            threshold=eqat_threshold, backoff_window=backoff_window)
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}")


def simulate_run(
    params: NetworkParams,
    strategy_name: str,
    slots: int,
    seed: int,
    trace: bool = False,
    **strategy_kw,
) -> tuple[RunMetrics, list[SlotTrace] | None]:
    strategy = make_strategy(strategy_name, params, **strategy_kw)
    sim = Simulation(params, strategy, seed=seed, trace=trace)
    metrics = sim.run(slots)
    return metrics, sim.traces
