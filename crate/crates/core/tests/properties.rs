mod common;

use std::fs;
use std::sync::Arc;

use common::{fixture, random_instance, toy_instance};
use evwhittle::bound::{evaluate_policy, initial_distribution, solve_bound, solve_bound_lp};
use evwhittle::costfit::{fit_cost_chain, FitOptions, PriceTrace};
use evwhittle::index::compute_index_table;
use evwhittle::model::{ActionVector, ChargerState, CostChain, CostChainFile, Instance, SystemState};
use evwhittle::policies::{build_policy, dominates, lllp_interchange, lllp_interchange_counted, PolicyKind};
use evwhittle::sim::{brute_force_joint_dp, evaluate_joint_policy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn charger() -> impl Strategy<Value = ChargerState> {
    prop_oneof![
        Just(ChargerState { lead_time: 0, demand: 0 }),
        (1u32..=8, 0u32..=6).prop_map(|(lead_time, demand)| ChargerState { lead_time, demand }),
    ]
}

fn state_and_action() -> impl Strategy<Value = (SystemState, ActionVector)> {
    prop::collection::vec(charger(), 1..9).prop_flat_map(|chargers| {
        let n = chargers.len();
        (Just(chargers), prop::collection::vec(any::<bool>(), n), 0..=n).prop_map(|(chargers, coins, limit)| {
            let mut action = ActionVector::idle(chargers.len());
            let mut on = 0;
            for (i, s) in chargers.iter().enumerate() {
                if coins[i] && s.needs_charge() && on < limit {
                    action.0[i] = true;
                    on += 1;
                }
            }
            (SystemState { period: 0, cost_state: 0, chargers }, action)
        })
    })
}

proptest! {
    #[test]
    fn lllp_keeps_count_and_validity((state, action) in state_and_action()) {
        let out = lllp_interchange(&state, &action);
        prop_assert_eq!(out.count(), action.count());
        for (i, s) in state.chargers.iter().enumerate() {
            prop_assert!(!out.0[i] || s.needs_charge());
        }
    }

    #[test]
    fn lllp_is_idempotent((state, action) in state_and_action()) {
        let once = lllp_interchange(&state, &action);
        let (twice, swaps) = lllp_interchange_counted(&state, &once);
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(swaps, 0);
    }

    #[test]
    fn lllp_leaves_no_dominating_pair((state, action) in state_and_action()) {
        let out = lllp_interchange(&state, &action);
        let ch = &state.chargers;
        for i in 0..ch.len() {
            for k in 0..ch.len() {
                if ch[i].needs_charge() && !out.0[i] && out.0[k] {
                    prop_assert!(!dominates(ch[i], ch[k]));
                }
            }
        }
    }
}

/// Best randomization of two deterministic single-charger policies under the
/// discounted activation budget, by enumerating every deterministic policy.
fn enumerated_bound(instance: &Instance) -> f64 {
    let states = instance.charger_states();
    let k = instance.n_cost_states();
    let periods = instance.n_periods();
    let n_ext = states.len() * k * periods;
    let decisions: Vec<usize> = states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.needs_charge())
        .flat_map(|(ci, _)| (0..k * periods).map(move |r| ci * k * periods + r))
        .collect();
    let mu = initial_distribution(instance);
    let budget = instance.limit as f64 / instance.chargers as f64 / (1.0 - instance.discount);
    let mut lines = Vec::new();
    for mask in 0u32..(1 << decisions.len()) {
        let mut policy = vec![false; n_ext];
        for (bit, &e) in decisions.iter().enumerate() {
            policy[e] = mask >> bit & 1 == 1;
        }
        let v = evaluate_policy(instance, &policy).unwrap();
        let r: f64 = mu.iter().zip(&v.reward).map(|(m, x)| m * x).sum();
        let a: f64 = mu.iter().zip(&v.activations).map(|(m, x)| m * x).sum();
        lines.push((r, a));
    }
    let mut best = f64::NEG_INFINITY;
    for &(r1, a1) in &lines {
        if a1 <= budget {
            best = best.max(r1);
        }
        for &(r2, a2) in &lines {
            if a1 > budget && a2 < budget {
                let q = (budget - a2) / (a1 - a2);
                best = best.max(q * r1 + (1.0 - q) * r2);
            }
        }
    }
    instance.chargers as f64 * best
}

#[test]
fn bound_matches_policy_enumeration() {
    for (limit, beta) in [(0, 0.9), (1, 0.9), (1, 0.7), (2, 0.8)] {
        let inst = toy_instance(limit, beta);
        let oracle = enumerated_bound(&inst);
        let b = solve_bound(&inst).unwrap();
        assert!((b.value - oracle).abs() < 1e-8, "M={limit} β={beta}: {} vs {oracle}", b.value);
    }
}

#[test]
fn bound_matches_enumeration_with_periodic_cost() {
    let mut inst = toy_instance(1, 0.85);
    inst.cost = CostChain::periodic(
        vec![0.2, 0.9],
        vec![vec![vec![0.9, 0.1], vec![0.7, 0.3]], vec![vec![0.2, 0.8], vec![0.1, 0.9]]],
    )
    .unwrap();
    inst.arrivals = evwhittle::model::ArrivalModel::stationary(0.8, inst.arrivals.period(0).types().to_vec(), 2).unwrap();
    let oracle = enumerated_bound(&inst);
    let b = solve_bound(&inst).unwrap();
    assert!((b.value - oracle).abs() < 1e-8, "{} vs {oracle}", b.value);
}

#[test]
fn joint_optimum_at_full_capacity_is_separable() {
    let inst = toy_instance(2, 0.9);
    let joint = brute_force_joint_dp(&inst, 1e-10).unwrap();
    let mut single = inst.clone();
    single.chargers = 1;
    single.limit = 1;
    let one = brute_force_joint_dp(&single, 1e-10).unwrap();
    assert!((joint.value - 2.0 * one.value).abs() < 1e-8);
    let bound = solve_bound(&inst).unwrap();
    assert!((joint.value - bound.value).abs() < 1e-7);
}

#[test]
fn joint_optimum_sits_between_heuristics_and_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = vec![toy_instance(1, 0.9), toy_instance(1, 0.6)];
    for _ in 0..3 {
        let mut inst = random_instance(&mut rng, 2, 1);
        inst.max_lead = 2;
        inst.max_demand = 2;
        inst.penalty = evwhittle::model::PenaltyFunction::quadratic(0.3, 2).unwrap();
        inst.arrivals = evwhittle::model::ArrivalModel::stationary(
            0.7,
            evwhittle::model::ArrivalModel::uniform_feasible_types(2, 2),
            inst.n_periods(),
        )
        .unwrap();
        cases.push(inst);
    }
    for inst in &cases {
        let joint = brute_force_joint_dp(inst, 1e-10).unwrap();
        let bound = solve_bound(inst).unwrap();
        assert!(joint.value <= bound.value + 1e-7, "{} > {}", joint.value, bound.value);
        let table = Arc::new(compute_index_table(inst).unwrap());
        for kind in PolicyKind::ALL {
            let policy = build_policy(kind, inst, Some(table.clone())).unwrap();
            let v = evaluate_joint_policy(inst, policy.as_ref(), 1e-10).unwrap();
            assert!(v <= joint.value + 1e-7, "{kind}: {v} > {}", joint.value);
        }
    }
}

#[test]
fn dual_and_lp_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..4 {
        let inst = random_instance(&mut rng, 6, 2);
        let dual = solve_bound(&inst).unwrap().value;
        let lp = solve_bound_lp(&inst).unwrap();
        assert!((dual - lp).abs() < 1e-6, "{dual} vs {lp}");
    }
}

fn fitted_k5() -> evwhittle::costfit::FittedChain {
    let trace = PriceTrace::read_csv(fs::File::open(fixture("caiso_like_30d.csv")).unwrap()).unwrap();
    fit_cost_chain(&trace, &FitOptions::new(5)).unwrap()
}

#[test]
fn fitted_chain_matches_frozen_fixture() {
    let fitted = fitted_k5();
    let frozen: CostChainFile = serde_json::from_str(&fs::read_to_string(fixture("caiso_like_k5.json")).unwrap()).unwrap();
    let got = CostChainFile::from(fitted.chain);
    assert_eq!(got.levels.len(), 5);
    for (a, b) in got.levels.iter().zip(&frozen.levels) {
        assert!((a - b).abs() < 1e-12);
    }
    for (ra, rb) in got.matrix.unwrap().iter().zip(frozen.matrix.as_ref().unwrap()) {
        for (a, b) in ra.iter().zip(rb) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fitted_levels_average_to_half_retail() {
    let fitted = fitted_k5();
    let mut counts = [0usize; 5];
    for s in &fitted.states {
        counts[*s] += 1;
    }
    let n = fitted.states.len() as f64;
    let mean: f64 = counts.iter().zip(fitted.chain.levels()).map(|(c, l)| *c as f64 * l).sum::<f64>() / n;
    assert!((mean - 0.5).abs() < 1e-12);
    assert!(fitted.chain.levels().windows(2).all(|w| w[0] < w[1]));
    // equal-count bins
    assert!(counts.iter().all(|c| *c == 144));
}

#[test]
fn cost_chain_json_round_trip() {
    let chain = fitted_k5().chain;
    let text = serde_json::to_string(&chain).unwrap();
    let back: CostChain = serde_json::from_str(&text).unwrap();
    assert_eq!(back, chain);
}
