"""Shared model types: network parameters, node/joint states, state indexing.

Everything here is immutable after construction and safe to share across
workers. Parameter validation is a total function that reports all
violations instead of raising on the first one.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from typing import Iterator, NamedTuple

import numpy as np


class NodeState(NamedTuple):
    """Quantized per-node state: battery level index and queue length."""

    battery: int
    queue: int


JointState = tuple[NodeState, ...]


class Action(NamedTuple):
    """Scheduling action: selected node (0-based) and its modulation order."""

    selected: int
    modulation: int


@dataclass(frozen=True)
class NetworkParams:
    """All physical and protocol constants of the homogeneous network.

    Battery is discretized into ``battery_levels`` steps of
    ``battery_quantum`` joules; a node's level lives in
    {0, ..., battery_levels} (the zero level exists, so there are K+1
    distinct values even though capacity is K quanta). Queue length lives
    in {0, ..., queue_cap}.
    """

    n_nodes: int
    packet_bits: int = 256
    ber_target: float = 5e-4
    kappa1: float = 0.2
    kappa2: float = 3.0
    bs_power: float = 3.0
    transfer_efficiency: float = 0.4
    bandwidth: float = 250e3
    slot_len: float = 10e-3
    arrival_period: float = 10e-3
    arrival_prob: float = 0.30
    battery_levels: int = 5
    battery_quantum: float = 2.5e-3
    battery_capacity: float | None = None
    queue_cap: int = 6
    max_modulation: int = 5
    channel_gain: tuple[float, ...] | None = None
    discount: float = 0.95
    vi_tol: float = 1e-6
    initial_battery: int | None = None

    def __post_init__(self):
        if self.battery_capacity is None:
            object.__setattr__(
                self, "battery_capacity", self.battery_levels * self.battery_quantum
            )
        if self.channel_gain is None:
            object.__setattr__(self, "channel_gain", (1.0,) * self.n_nodes)
        else:
            object.__setattr__(self, "channel_gain", tuple(float(g) for g in self.channel_gain))
        if self.initial_battery is None:
            object.__setattr__(self, "initial_battery", self.battery_levels)

    @property
    def arrivals_per_slot(self) -> int:
        """Arrival opportunities per scheduling slot (>= 1)."""
        if self.arrival_period <= 0:
            return 1
        return max(1, round(self.slot_len / self.arrival_period))

    @property
    def per_node_states(self) -> int:
        return (self.battery_levels + 1) * (self.queue_cap + 1)

    @property
    def joint_state_count(self) -> int:
        return self.per_node_states**self.n_nodes

    def replace(self, **changes) -> "NetworkParams":
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        # derived fields must be re-derived unless explicitly overridden
        if "battery_levels" in changes or "battery_quantum" in changes:
            kwargs["battery_capacity"] = None
        if "n_nodes" in changes and "channel_gain" not in changes:
            kwargs["channel_gain"] = None
        kwargs.update(changes)
        return NetworkParams(**kwargs)


def validate(params: NetworkParams) -> list[str]:
    """Return every violated parameter invariant (empty list means ok)."""
    v: list[str] = []
    p = params
    if p.n_nodes < 1:
        v.append("n_nodes must be >= 1")
    if p.packet_bits < 1:
        v.append("packet_bits must be >= 1")
    if not (0.0 < p.ber_target < 1.0):
        v.append("ber_target must lie strictly in (0, 1)")
    if p.kappa1 <= p.ber_target:
        v.append("ln(kappa1/ber_target) must be positive (kappa1 > ber_target)")
    if p.kappa2 <= 0:
        v.append("kappa2 must be positive")
    if p.bs_power < 0:
        v.append("bs_power must be non-negative")
    if not (0.0 <= p.transfer_efficiency <= 1.0):
        v.append("transfer_efficiency must lie in [0, 1]")
    if p.bandwidth <= 0:
        v.append("bandwidth must be positive")
    if p.slot_len <= 0:
        v.append("slot_len must be positive")
    if not (0.0 <= p.arrival_prob <= 1.0):
        v.append("arrival_prob must lie in [0, 1]")
    if p.battery_levels < 1:
        v.append("battery_levels must be >= 1")
    if p.battery_quantum <= 0:
        v.append("battery_quantum must be positive")
    if p.battery_capacity != p.battery_levels * p.battery_quantum:
        v.append("battery_capacity must equal battery_levels * battery_quantum")
    if p.queue_cap < 1:
        v.append("queue_cap must be >= 1")
    if p.max_modulation < 1:
        v.append("max_modulation must be >= 1")
    if len(p.channel_gain) != p.n_nodes:
        v.append("channel_gain must have one entry per node")
    if any(g <= 0 for g in p.channel_gain):
        v.append("all channel gains must be positive")
    if p.slot_len * p.bandwidth * p.max_modulation < p.packet_bits:
        v.append("a packet must fit in one slot at the fastest modulation "
                 "(slot_len * bandwidth * max_modulation >= packet_bits)")
    if not (0.0 <= p.discount < 1.0):
        v.append("discount must lie in [0, 1)")
    if p.vi_tol <= 0:
        v.append("vi_tol must be positive")
    if not (0 <= p.initial_battery <= p.battery_levels):
        v.append("initial_battery must lie in [0, battery_levels]")
    return v


def check_node_state(s: NodeState, params: NetworkParams) -> None:
    if not (0 <= s.battery <= params.battery_levels):
        raise ValueError(f"battery level {s.battery} outside [0, {params.battery_levels}]")
    if not (0 <= s.queue <= params.queue_cap):
        raise ValueError(f"queue length {s.queue} outside [0, {params.queue_cap}]")


def node_state_index(s: NodeState, params: NetworkParams) -> int:
    check_node_state(s, params)
    return s.battery * (params.queue_cap + 1) + s.queue


def node_state_unindex(idx: int, params: NetworkParams) -> NodeState:
    width = params.queue_cap + 1
    return NodeState(battery=idx // width, queue=idx % width)


def state_index(s: JointState, params: NetworkParams) -> int:
    """Mixed-radix encoding of a joint state; node 0 is most significant.

    Bijective onto [0, ((K+1)(Q+1))**N).
    """
    if len(s) != params.n_nodes:
        raise ValueError(f"joint state has {len(s)} nodes, expected {params.n_nodes}")
    m = params.per_node_states
    idx = 0
    for node in s:
        idx = idx * m + node_state_index(node, params)
    return idx


def state_unindex(idx: int, params: NetworkParams) -> JointState:
    if not (0 <= idx < params.joint_state_count):
        raise ValueError(f"state index {idx} outside [0, {params.joint_state_count})")
    m = params.per_node_states
    out = []
    for _ in range(params.n_nodes):
        out.append(node_state_unindex(idx % m, params))
        idx //= m
    return tuple(reversed(out))


def iter_joint_states(params: NetworkParams) -> Iterator[JointState]:
    """All joint states in index order."""
    for idx in range(params.joint_state_count):
        yield state_unindex(idx, params)


def draw_channel_gains(
    n_nodes: int,
    seed: int = 52,
    reference_gain: float = 11.0,
    reference_dist: float = 10.0,
    min_dist: float = 34.0,
    max_dist: float = 44.0,
    pathloss_exp: float = 2.0,
) -> tuple[float, ...]:
    """Static per-node power gains from a log-distance path-loss draw.

    Nodes are placed uniformly in [min_dist, max_dist] metres from the
    base station; gain_i = reference_gain * (reference_dist / d_i)**pathloss_exp.
    The draw is deterministic in (seed, n_nodes) so a scenario resolves to
    the same network every time.
    """
    rng = np.random.default_rng([seed, n_nodes])
    dist = rng.uniform(min_dist, max_dist, size=n_nodes)
    gains = reference_gain * (reference_dist / dist) ** pathloss_exp
    return tuple(float(g) for g in gains)


# -- configuration file loading ---------------------------------------------

_NETWORK_KEYS = {
    "n_nodes": int,
    "packet_bits": int,
    "ber_target": float,
    "kappa1": float,
    "kappa2": float,
    "bs_power": float,
    "transfer_efficiency": float,
    "bandwidth": float,
    "slot_len": float,
    "arrival_period": float,
    "arrival_prob": float,
    "battery_levels": int,
    "battery_quantum": float,
    "queue_cap": int,
    "max_modulation": int,
    "discount": float,
    "vi_tol": float,
    "initial_battery": int,
}


def params_from_config(path: str, n_nodes: int | None = None) -> NetworkParams:
    """Load NetworkParams from a flat key=value config file.

    Keys live in a ``[network]`` section; ``channel_gain`` is a
    comma-separated list, or omitted to defer to the path-loss draw
    controlled by the ``[channel]`` section (see the CLI docs for the
    full schema).
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    kwargs = {}
    if cp.has_section("network"):
        sec = cp["network"]
        for key, conv in _NETWORK_KEYS.items():
            if key in sec:
                kwargs[key] = conv(sec[key])
        if "channel_gain" in sec:
            kwargs["channel_gain"] = tuple(
                float(x) for x in sec["channel_gain"].split(",") if x.strip()
            )
    if n_nodes is not None:
        kwargs["n_nodes"] = n_nodes
    if "n_nodes" not in kwargs:
        raise ValueError(f"{path}: [network] n_nodes is required")
    if "channel_gain" not in kwargs:
        kwargs["channel_gain"] = draw_channel_gains(
            kwargs["n_nodes"], **channel_model_from_config(path)
        )
    return NetworkParams(**kwargs)


def channel_model_from_config(path: str) -> dict:
    """Read the [channel] path-loss model knobs from a config file."""
    cp = configparser.ConfigParser()
    cp.read(path)
    out: dict = {}
    if cp.has_section("channel"):
        sec = cp["channel"]
        for key, conv in (
            ("seed", int),
            ("reference_gain", float),
            ("reference_dist", float),
            ("min_dist", float),
            ("max_dist", float),
            ("pathloss_exp", float),
        ):
            if key in sec:
                out[key] = conv(sec[key])
    return out
