"""Centralized scheduling MDP: transition laws, sparse model, value iteration.

States are joint (battery, queue) tuples over all nodes; the action set is
the selected node (modulation is pre-folded, see the energy module). The
cost of a transition is the expected number of packets dropped to buffer
overflow, so the solved value function reads as discounted packet loss.

Boundary conventions (the interior cases follow the standard law; the
boundaries need explicit choices):
  * a selected node with an empty queue, or with too little battery to
    afford one transmission, spends the slot charging only: its queue
    follows the arrival-only law and its battery jumps by the full-slot
    harvest quantum;
  * at a full queue the "+1" mass folds into "stay full" and the pinned
    transition carries the overflow cost;
  * batteries clamp to [0, K] (overcharge is wasted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Action, JointState, NetworkParams, NodeState, check_node_state, state_index
from .energy import NodeEnergyProfile, energy_profiles, node_energy_profile, packet_success_prob

DEFAULT_STATE_BUDGET = 200_000

Dist = list[tuple[NodeState, float]]


class StateSpaceBudgetError(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(
            f"joint state space has {count} states, exceeding the budget of {budget}"
        )
        self.count = count
        self.budget = budget


class ValueIterationError(RuntimeError):
    pass


def can_transmit(s: NodeState, profile: NodeEnergyProfile) -> bool:
    """A node can transmit iff it has a packet and battery for one attempt."""
    return s.queue >= 1 and s.battery >= profile.min_tx_level


def _clamp(level: int, top: int) -> int:
    return max(0, min(top, level))


def _merge(pairs: list[tuple[NodeState, float]]) -> Dist:
    out: dict[NodeState, float] = {}
    for state, p in pairs:
        if p > 0.0:
            out[state] = out.get(state, 0.0) + p
    return sorted(out.items())


def unselected_transition(s: NodeState, params: NetworkParams) -> Dist:
    """Arrival-only law: queue +1 w.p. lambda (pinned at Q), battery unchanged."""
    check_node_state(s, params)
    lam = params.arrival_prob
    q_up = min(s.queue + 1, params.queue_cap)
    return _merge([
        (NodeState(s.battery, q_up), lam),
        (NodeState(s.battery, s.queue), 1.0 - lam),
    ])


def selected_transition(
    s: NodeState, params: NetworkParams, node: int = 0,
    profile: NodeEnergyProfile | None = None,
) -> Dist:
    """Law of the scheduled node.

    When transmitting: queue +1 w.p. (1-ps)*lambda, -1 w.p. ps*(1-lambda),
    unchanged otherwise, battery jumping by the net harvest quantum in all
    three cases (the downlink charges the node even after a corrupted
    packet). When it cannot transmit, the slot is charge-only.
    """
    check_node_state(s, params)
    if profile is None:
        profile = node_energy_profile(params, node)
    K = params.battery_levels
    lam = params.arrival_prob
    if not can_transmit(s, profile):
        e = _clamp(s.battery + profile.harvest_only_levels, K)
        q_up = min(s.queue + 1, params.queue_cap)
        return _merge([
            (NodeState(e, q_up), lam),
            (NodeState(e, s.queue), 1.0 - lam),
        ])
    ps = packet_success_prob(params)
    e = _clamp(s.battery + profile.delta_levels, K)
    q_up = min(s.queue + 1, params.queue_cap)
    return _merge([
        (NodeState(e, q_up), (1.0 - ps) * lam),
        (NodeState(e, s.queue - 1), ps * (1.0 - lam)),
        (NodeState(e, s.queue), (1.0 - ps) * (1.0 - lam) + ps * lam),
    ])


def node_reward(
    s_from: NodeState, s_to: NodeState, params: NetworkParams,
    selected: bool, profile: NodeEnergyProfile | None = None,
) -> float:
    """Expected packets this node drops on a transition pinned at a full queue."""
    if not (s_from.queue == s_to.queue == params.queue_cap):
        return 0.0
    if selected and profile is not None and can_transmit(s_from, profile):
        return (1.0 - packet_success_prob(params)) * params.arrival_prob
    return params.arrival_prob


def transition_reward(
    s_alpha: JointState, s_beta: JointState, action: Action | int, params: NetworkParams,
    profiles: list[NodeEnergyProfile] | None = None,
) -> float:
    """Expected dropped packets over all nodes for one joint transition."""
    k = action.selected if isinstance(action, Action) else action
    if profiles is None:
        profiles = energy_profiles(params)
    total = 0.0
    for n, (a, b) in enumerate(zip(s_alpha, s_beta)):
        total += node_reward(a, b, params, selected=(n == k), profile=profiles[n])
    return total


def joint_transition(
    s_alpha: JointState, action: Action | int, params: NetworkParams,
    profiles: list[NodeEnergyProfile] | None = None,
) -> list[tuple[JointState, float]]:
    """Product of the selected node's law with every other node's arrival law."""
    k = action.selected if isinstance(action, Action) else action
    if profiles is None:
        profiles = energy_profiles(params)
    acc: list[tuple[tuple[NodeState, ...], float]] = [((), 1.0)]
    for n, s in enumerate(s_alpha):
        dist = (
            selected_transition(s, params, node=n, profile=profiles[n])
            if n == k
            else unselected_transition(s, params)
        )
        acc = [(prefix + (ns,), p * pn) for prefix, p in acc for ns, pn in dist]
    return [(joint, p) for joint, p in acc]


@dataclass
class TransitionModel:
    """Sparse rows of (next state, probability, reward) per (state, action).

    Row r = state * n_actions + action spans entries
    [row_ptr[r], row_ptr[r+1]).
    """

    params: NetworkParams
    n_states: int
    n_actions: int
    row_ptr: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    profiles: list[NodeEnergyProfile] = field(default_factory=list)

    def row(self, state: int, action: int):
        r = state * self.n_actions + action
        lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
        return self.next_state[lo:hi], self.prob[lo:hi], self.reward[lo:hi]


def _per_node_tables(params: NetworkParams, profiles: list[NodeEnergyProfile]):
    """Per-node-state transition entries, as (next_idx, prob, reward) triples."""
    K, Q = params.battery_levels, params.queue_cap
    width = Q + 1
    states = [NodeState(b, q) for b in range(K + 1) for q in range(Q + 1)]

    unsel = []
    for s in states:
        entries = []
        for ns, p in unselected_transition(s, params):
            r = node_reward(s, ns, params, selected=False)
            entries.append((ns.battery * width + ns.queue, p, r))
        unsel.append(entries)

    sel = []
    for prof in profiles:
        rows = []
        for s in states:
            entries = []
            for ns, p in selected_transition(s, params, profile=prof):
                r = node_reward(s, ns, params, selected=True, profile=prof)
                entries.append((ns.battery * width + ns.queue, p, r))
            rows.append(entries)
        sel.append(rows)
    return sel, unsel


def build_model(params: NetworkParams, budget: int = DEFAULT_STATE_BUDGET) -> TransitionModel:
    """Enumerate the full joint model; O(states * actions * row width)."""
    n_states = params.joint_state_count
    if n_states > budget:
        raise StateSpaceBudgetError(n_states, budget)
    n = params.n_nodes
    m = params.per_node_states
    profiles = energy_profiles(params)
    sel, unsel = _per_node_tables(params, profiles)

    row_ptr = [0]
    next_out: list[int] = []
    prob_out: list[float] = []
    rew_out: list[float] = []

    for s in range(n_states):
        # decode to per-node state indices, node 0 most significant
        digits = []
        rem = s
        for _ in range(n):
            digits.append(rem % m)
            rem //= m
        digits.reverse()

        for k in range(n):
            acc = [(0, 1.0, 0.0)]
            for node, d in enumerate(digits):
                table = sel[k][d] if node == k else unsel[d]
                acc = [
                    (base * m + nxt, p * pe, r + re)
                    for base, p, r in acc
                    for nxt, pe, re in table
                ]
            total = 0.0
            for nxt, p, r in acc:
                next_out.append(nxt)
                prob_out.append(p)
                rew_out.append(r)
                total += p
            if abs(total - 1.0) > 1e-12:
                raise AssertionError(f"row ({s},{k}) sums to {total!r}")
            row_ptr.append(len(next_out))

    return TransitionModel(
        params=params,
        n_states=n_states,
        n_actions=n,
        row_ptr=np.asarray(row_ptr, dtype=np.int64),
        next_state=np.asarray(next_out, dtype=np.int64),
        prob=np.asarray(prob_out, dtype=np.float64),
        reward=np.asarray(rew_out, dtype=np.float64),
        profiles=profiles,
    )


@dataclass
class ValueIterationResult:
    values: np.ndarray            # expected discounted packet loss per state
    policy: np.ndarray            # minimizing node per state, lowest index on ties
    sweeps: int
    residual: float
    residual_history: list[float]
    params: NetworkParams
    profiles: list[NodeEnergyProfile]

    def action_for(self, s: JointState) -> Action:
        k = int(self.policy[state_index(s, self.params)])
        return Action(selected=k, modulation=self.profiles[k].order)


def value_iteration(
    model: TransitionModel,
    omega: float | None = None,
    tol: float | None = None,
    max_sweeps: int = 100_000,
) -> ValueIterationResult:
    """Solve the discounted model to the standard stopping bound.

    Stops when the sup-norm sweep difference drops below
    tol * (1 - omega) / (2 * omega), which bounds the distance of the
    greedy policy's value from optimal by tol.
    """
    p = model.params
    w = p.discount if omega is None else omega
    eps = p.vi_tol if tol is None else tol
    if not (0.0 <= w < 1.0):
        raise ValueError(f"discount {w} outside [0, 1)")
    threshold = eps * (1.0 - w) / (2.0 * w) if w > 0 else np.inf

    S, A = model.n_states, model.n_actions
    starts = model.row_ptr[:-1]
    base_cost = np.add.reduceat(model.prob * model.reward, starts).reshape(S, A)

    v = np.zeros(S)
    history: list[float] = []
    for sweep in range(1, max_sweeps + 1):
        cont = np.add.reduceat(model.prob * v[model.next_state], starts).reshape(S, A)
        q = base_cost + w * cont
        v_new = q.min(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        history.append(residual)
        v = v_new
        if residual < threshold:
            policy = q.argmin(axis=1)
            return ValueIterationResult(
                values=v, policy=policy, sweeps=sweep, residual=residual,
                residual_history=history, params=p, profiles=model.profiles,
            )
    raise ValueIterationError(
        f"no convergence after {max_sweeps} sweeps (last residual {history[-1]:.3e}, "
        f"threshold {threshold:.3e})"
    )


# -- per-slot action choosers -------------------------------------------------


def policy_chooser(result: ValueIterationResult):
    """Exact mode: table lookup of the solved policy."""
    p = result.params
    m = p.per_node_states
    width = p.queue_cap + 1

    def choose(batteries: list[int], queues: list[int]) -> int:
        idx = 0
        for b, q in zip(batteries, queues):
            idx = idx * m + b * width + q
        return int(result.policy[idx])

    return choose


def myopic_chooser(params: NetworkParams, profiles: list[NodeEnergyProfile] | None = None):
    """Approximate mode for joint spaces too large to enumerate.

    Scores each candidate by the change in expected overflow it causes for
    that node over this slot plus a discount-weighted look at the next
    slot, holding every other node to the arrival-only law (their terms
    cancel out of the argmin). Documented heuristic stand-in for the exact
    policy; ties go to the longest queue, then the lowest battery.
    """
    if profiles is None:
        profiles = energy_profiles(params)
    ps = packet_success_prob(params)
    # probability of at least one arrival over the slot's opportunities
    lam = 1.0 - (1.0 - params.arrival_prob) ** params.arrivals_per_slot
    Q = params.queue_cap
    w = params.discount

    def choose(batteries: list[int], queues: list[int]) -> int:
        best_key = None
        best = 0
        for n, (e, q) in enumerate(zip(batteries, queues)):
            prof = profiles[n]
            if q >= 1 and e >= prof.min_tx_level:
                imm_sel = (1.0 - ps) * lam if q == Q else 0.0
                next_full_sel = (
                    ps * lam + (1.0 - ps) if q == Q
                    else (1.0 - ps) * lam if q == Q - 1
                    else 0.0
                )
            else:  # charge-only slot: queue behaves as if unselected
                imm_sel = lam if q == Q else 0.0
                next_full_sel = 1.0 if q == Q else lam if q == Q - 1 else 0.0
            imm_uns = lam if q == Q else 0.0
            next_full_uns = 1.0 if q == Q else lam if q == Q - 1 else 0.0
            delta = (imm_sel - imm_uns) + w * lam * (next_full_sel - next_full_uns)
            key = (delta, -q, e, n)
            if best_key is None or key < best_key:
                best_key = key
                best = n
        return best

    return choose
