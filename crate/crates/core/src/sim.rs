//! Seeded episodes, paired Monte Carlo comparison and a brute-force joint DP
//! for toy instances.
//!
//! Every episode draws its exogenous randomness from independent ChaCha
//! streams derived from the seed: stream 0 drives the cost path, and charger
//! `i` owns one stream for arrival coin flips and one for EV types, consumed
//! once per vacancy. Departures happen at deadlines regardless of actions, so
//! two policies run with the same seed see exactly the same arrivals and costs.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{advance, sample_index, successor_distribution, ChargerState, Instance, SystemState};
use crate::policies::Policy;

/// Relative truncation tolerance used by [`default_horizon`].
pub const DEFAULT_TRUNCATION: f64 = 1e-3;

const MAX_JOINT_STATES: usize = 1_000_000;

/// Smallest horizon `H` with `β^H · N(1+ΔF_max)/(1−β) ≤ rel_tol · N(1+ΔF_max)`.
pub fn horizon_for_tolerance(discount: f64, rel_tol: f64) -> usize {
    ((rel_tol * (1.0 - discount)).ln() / discount.ln()).ceil().max(1.0) as usize
}

pub fn default_horizon(instance: &Instance) -> usize {
    horizon_for_tolerance(instance.discount, DEFAULT_TRUNCATION)
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Discounted total reward, `revenue − cost − penalty`.
    pub reward: f64,
    pub revenue: f64,
    pub cost: f64,
    pub penalty: f64,
    /// Units of charge delivered (undiscounted).
    pub energy: u64,
    /// Units of demand left unmet at departure (undiscounted).
    pub unmet: u64,
    pub departures: u64,
    pub completed: u64,
    pub completion_fraction: f64,
    pub activations_per_slot: f64,
    pub interchanges: u64,
    pub horizon: usize,
}

/// Seed-derived exogenous randomness.
struct Streams {
    cost: ChaCha8Rng,
    arrival: Vec<ChaCha8Rng>,
    kind: Vec<ChaCha8Rng>,
}

impl Streams {
    fn new(seed: u64, chargers: usize) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Streams {
            cost: stream(0),
            arrival: (0..chargers as u64).map(|i| stream(1 + 2 * i)).collect(),
            kind: (0..chargers as u64).map(|i| stream(2 + 2 * i)).collect(),
        }
    }
}

/// Runs one episode from an empty facility.
pub fn run_episode(instance: &Instance, policy: &dyn Policy, seed: u64, horizon: usize) -> Result<EpisodeMetrics> {
    let n = instance.chargers;
    let beta = instance.discount;
    let mut rng = Streams::new(seed, n);
    let j0 = sample_index(&instance.initial_cost_distribution(), rng.cost.gen::<f64>());
    let mut state = SystemState::empty(n, instance.initial.period, j0);
    let mut m = EpisodeMetrics {
        reward: 0.0,
        revenue: 0.0,
        cost: 0.0,
        penalty: 0.0,
        energy: 0,
        unmet: 0,
        departures: 0,
        completed: 0,
        completion_fraction: 1.0,
        activations_per_slot: 0.0,
        interchanges: 0,
        horizon,
    };
    let mut activations = 0u64;
    let mut weight = 1.0;
    for _ in 0..horizon {
        let d = policy.decide(&state);
        let a = &d.action;
        if a.len() != n {
            return Err(Error::Precondition(format!("policy {} returned {} actions", policy.name(), a.len())));
        }
        a.check_capacity(instance.limit)?;
        m.interchanges += d.interchanges as u64;
        let c = instance.cost.level(state.cost_state);
        let (mut revenue, mut cost, mut penalty) = (0.0, 0.0, 0.0);
        for (s, on) in state.chargers.iter().zip(&a.0) {
            if *on && !s.needs_charge() {
                return Err(Error::InvalidState(format!(
                    "policy {} activated charger in state ({},{})",
                    policy.name(),
                    s.lead_time,
                    s.demand
                )));
            }
            let served = u32::from(*on);
            if *on {
                revenue += 1.0;
                cost += c;
                m.energy += 1;
                activations += 1;
            }
            if s.lead_time == 1 {
                let left = s.demand - served;
                penalty += instance.penalty.value(left);
                m.unmet += u64::from(left);
                m.departures += 1;
                m.completed += u64::from(left == 0);
            }
        }
        m.revenue += weight * revenue;
        m.cost += weight * cost;
        m.penalty += weight * penalty;
        m.reward += weight * (revenue - cost - penalty);
        weight *= beta;

        let pa = instance.arrivals.period(state.period);
        for i in 0..n {
            let s = state.chargers[i];
            let arrival = if s.lead_time <= 1 {
                let coin = rng.arrival[i].gen::<f64>();
                let u = rng.kind[i].gen::<f64>();
                (coin < pa.rate()).then(|| pa.sample_type(u))
            } else {
                None
            };
            state.chargers[i] = advance(s, a.0[i], arrival);
        }
        state.cost_state = sample_index(instance.cost.row(state.cost_state, state.period), rng.cost.gen::<f64>());
        state.period = (state.period + 1) % instance.n_periods();
    }
    m.completion_fraction = if m.departures > 0 { m.completed as f64 / m.departures as f64 } else { 1.0 };
    m.activations_per_slot = activations as f64 / horizon.max(1) as f64;
    Ok(m)
}

/// Mean, standard deviation and 95% t-interval half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_dev: f64,
    pub ci_half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        if n < 2 {
            return Estimate { mean, std_dev: 0.0, ci_half_width: f64::INFINITY, n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof >= 1").inverse_cdf(0.975);
        Estimate { mean, std_dev, ci_half_width: t * std_dev / (n as f64).sqrt(), n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    /// True when the interval excludes zero on the positive side.
    pub fn significantly_positive(&self) -> bool {
        self.lower() > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub reward: Estimate,
    /// Mean reward divided by the number of chargers.
    pub reward_per_charger: f64,
    pub completion_fraction: f64,
    pub activations_per_slot: f64,
    pub interchanges: f64,
}

/// `policy − baseline`, seed by seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub policy: String,
    pub baseline: String,
    pub difference: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub policy: String,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicySummary>,
    pub paired: Vec<PairedDifference>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRow>,
}

impl ComparisonReport {
    pub fn summary(&self, policy: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == policy)
    }

    /// Per-seed rewards of `policy`, in seed order.
    pub fn rewards(&self, policy: &str) -> Vec<f64> {
        self.episodes.iter().filter(|r| r.policy == policy).map(|r| r.metrics.reward).collect()
    }

    /// Paired difference `a − b` over the common seeds.
    pub fn paired(&self, a: &str, b: &str) -> Estimate {
        let xa = self.rewards(a);
        let xb = self.rewards(b);
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        Estimate::from_samples(&d)
    }

    pub fn write_episodes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "seed",
            "policy",
            "reward",
            "revenue",
            "cost",
            "penalty",
            "energy",
            "unmet",
            "departures",
            "completed",
            "completion_fraction",
            "activations_per_slot",
            "interchanges",
            "horizon",
        ])?;
        for r in &self.episodes {
            let m = &r.metrics;
            wr.write_record([
                r.seed.to_string(),
                r.policy.clone(),
                m.reward.to_string(),
                m.revenue.to_string(),
                m.cost.to_string(),
                m.penalty.to_string(),
                m.energy.to_string(),
                m.unmet.to_string(),
                m.departures.to_string(),
                m.completed.to_string(),
                m.completion_fraction.to_string(),
                m.activations_per_slot.to_string(),
                m.interchanges.to_string(),
                m.horizon.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs every policy on every seed with common random numbers. Seeds run in
/// parallel; results are collected in seed order. `baseline` names the policy
/// that paired differences are taken against.
pub fn monte_carlo(
    instance: &Instance,
    policies: &[Box<dyn Policy>],
    seeds: &[u64],
    horizon: usize,
    baseline: Option<&str>,
) -> Result<ComparisonReport> {
    if seeds.len() < 2 {
        return Err(Error::Precondition("need at least two seeds".into()));
    }
    if let Some(b) = baseline {
        if !policies.iter().any(|p| p.name() == b) {
            return Err(Error::UnknownPolicy(b.to_string()));
        }
    }
    let per_seed: Vec<Vec<EpisodeMetrics>> = seeds
        .par_iter()
        .map(|&seed| policies.iter().map(|p| run_episode(instance, p.as_ref(), seed, horizon)).collect())
        .collect::<Result<_>>()?;
    let mut episodes = Vec::with_capacity(seeds.len() * policies.len());
    for (seed, row) in seeds.iter().zip(&per_seed) {
        for (p, m) in policies.iter().zip(row) {
            episodes.push(EpisodeRow { seed: *seed, policy: p.name().to_string(), metrics: m.clone() });
        }
    }
    let n = seeds.len() as f64;
    let summaries = policies
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let col = |f: fn(&EpisodeMetrics) -> f64| per_seed.iter().map(|r| f(&r[k])).collect::<Vec<_>>();
            let reward = Estimate::from_samples(&col(|m| m.reward));
            PolicySummary {
                policy: p.name().to_string(),
                reward_per_charger: reward.mean / instance.chargers as f64,
                reward,
                completion_fraction: col(|m| m.completion_fraction).iter().sum::<f64>() / n,
                activations_per_slot: col(|m| m.activations_per_slot).iter().sum::<f64>() / n,
                interchanges: col(|m| m.interchanges as f64).iter().sum::<f64>() / n,
            }
        })
        .collect();
    let mut report =
        ComparisonReport { horizon, seeds: seeds.to_vec(), policies: summaries, paired: Vec::new(), episodes };
    if let Some(b) = baseline {
        for p in policies.iter().filter(|p| p.name() != b) {
            report.paired.push(PairedDifference {
                policy: p.name().to_string(),
                baseline: b.to_string(),
                difference: report.paired(p.name(), b),
            });
        }
    }
    Ok(report)
}

/// Enumeration of the joint facility state space for the brute-force oracle.
struct JointSpace {
    singles: Vec<ChargerState>,
    n: usize,
    k: usize,
    periods: usize,
    len: usize,
}

impl JointSpace {
    fn new(instance: &Instance) -> Result<Self> {
        let singles = instance.charger_states();
        let n = instance.chargers;
        let k = instance.n_cost_states();
        let periods = instance.n_periods();
        let len = (0..n)
            .try_fold(k * periods, |acc: usize, _| acc.checked_mul(singles.len()))
            .filter(|l| *l <= MAX_JOINT_STATES)
            .ok_or(Error::TooLarge {
                states: (singles.len() as f64).powi(n as i32) as usize * k * periods,
            })?;
        Ok(JointSpace { singles, n, k, periods, len })
    }

    fn encode(&self, instance: &Instance, s: &SystemState) -> usize {
        let mut code = 0;
        for c in s.chargers.iter().rev() {
            code = code * self.singles.len() + instance.charger_index(*c);
        }
        (code * self.k + s.cost_state) * self.periods + s.period
    }

    fn decode(&self, mut code: usize) -> SystemState {
        let period = code % self.periods;
        code /= self.periods;
        let cost_state = code % self.k;
        code /= self.k;
        let chargers = (0..self.n)
            .map(|_| {
                let c = self.singles[code % self.singles.len()];
                code /= self.singles.len();
                c
            })
            .collect();
        SystemState { period, cost_state, chargers }
    }

    /// Joint successor distribution under `action`.
    fn successors(&self, instance: &Instance, s: &SystemState, action: &[bool]) -> Vec<(usize, f64)> {
        let mut partial: Vec<(Vec<ChargerState>, f64)> = vec![(Vec::with_capacity(self.n), 1.0)];
        for (c, a) in s.chargers.iter().zip(action) {
            let dist = successor_distribution(*c, *a, s.period, &instance.arrivals);
            partial = partial
                .into_iter()
                .flat_map(|(v, p)| {
                    dist.iter().map(move |(x, q)| {
                        let mut w = v.clone();
                        w.push(*x);
                        (w, p * q)
                    })
                })
                .collect();
        }
        let next_period = (s.period + 1) % self.periods;
        let mut out = Vec::new();
        for (chargers, p) in partial {
            for (j, q) in instance.cost.row(s.cost_state, s.period).iter().enumerate() {
                if *q > 0.0 {
                    let t = SystemState { period: next_period, cost_state: j, chargers: chargers.clone() };
                    out.push((self.encode(instance, &t), p * q));
                }
            }
        }
        out
    }

    fn initial(&self, instance: &Instance) -> Vec<(usize, f64)> {
        instance
            .initial_cost_distribution()
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(j, p)| (self.encode(instance, &SystemState::empty(self.n, instance.initial.period, j)), p))
            .collect()
    }
}

/// Feasible actions worth considering: subsets of chargers that want charge,
/// of size at most `M`.
fn joint_actions(s: &SystemState, limit: usize) -> Vec<Vec<bool>> {
    let cands: Vec<usize> = (0..s.chargers.len()).filter(|&i| s.chargers[i].needs_charge()).collect();
    (0u32..1 << cands.len())
        .filter(|m| m.count_ones() as usize <= limit)
        .map(|m| {
            let mut a = vec![false; s.chargers.len()];
            for (b, &i) in cands.iter().enumerate() {
                a[i] = m >> b & 1 == 1;
            }
            a
        })
        .collect()
}

fn joint_reward(instance: &Instance, s: &SystemState, a: &[bool]) -> f64 {
    let c = instance.cost.level(s.cost_state);
    s.chargers.iter().zip(a).map(|(x, on)| crate::model::reward(*x, c, *on, &instance.penalty)).sum()
}

#[derive(Clone, Debug)]
pub struct JointSolution {
    /// Optimal expected discounted reward from the empty facility.
    pub value: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Value iteration on the full joint MDP of a toy instance, to sup-norm
/// tolerance `tol`.
pub fn brute_force_joint_dp(instance: &Instance, tol: f64) -> Result<JointSolution> {
    instance.validate()?;
    let space = JointSpace::new(instance)?;
    let beta = instance.discount;
    let model: Vec<Vec<(f64, Vec<(usize, f64)>)>> = (0..space.len)
        .map(|code| {
            let s = space.decode(code);
            joint_actions(&s, instance.limit)
                .into_iter()
                .map(|a| (joint_reward(instance, &s, &a), space.successors(instance, &s, &a)))
                .collect()
        })
        .collect();
    let (values, iterations) = fixed_point(beta, tol, &model, |_, options, v| {
        options
            .iter()
            .map(|(r, succ)| r + beta * succ.iter().map(|(t, p)| p * v[*t]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let value = space.initial(instance).iter().map(|(c, p)| p * values[*c]).sum();
    Ok(JointSolution { value, values, iterations })
}

/// Exact (to `tol`) expected discounted reward of `policy` on the joint MDP.
pub fn evaluate_joint_policy(instance: &Instance, policy: &dyn Policy, tol: f64) -> Result<f64> {
    instance.validate()?;
    let space = JointSpace::new(instance)?;
    let beta = instance.discount;
    let model: Vec<(f64, Vec<(usize, f64)>)> = (0..space.len)
        .map(|code| {
            let s = space.decode(code);
            let a = policy.decide(&s).action;
            a.check_capacity(instance.limit)?;
            Ok((joint_reward(instance, &s, &a.0), space.successors(instance, &s, &a.0)))
        })
        .collect::<Result<_>>()?;
    let (values, _) = fixed_point(beta, tol, &model, |_, (r, succ), v| {
        r + beta * succ.iter().map(|(t, p)| p * v[*t]).sum::<f64>()
    });
    Ok(space.initial(instance).iter().map(|(c, p)| p * values[*c]).sum())
}

/// Jacobi iteration of a β-contraction until the update is below
/// `tol(1−β)/β`, which puts the result within `tol` of the fixed point.
fn fixed_point<T>(beta: f64, tol: f64, model: &[T], update: impl Fn(usize, &T, &[f64]) -> f64) -> (Vec<f64>, usize) {
    let mut v = vec![0.0; model.len()];
    let mut next = vec![0.0; model.len()];
    let stop = tol * (1.0 - beta) / beta;
    let mut it = 0;
    loop {
        it += 1;
        let mut delta: f64 = 0.0;
        for (i, m) in model.iter().enumerate() {
            next[i] = update(i, m, &v);
            delta = delta.max((next[i] - v[i]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta <= stop {
            return (v, it);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalModel, CostChain, InitialCondition, PenaltyFunction, PeriodArrivals};
    use crate::policies::{EdfPolicy, LlfPolicy};

    fn instance(n: usize, m: usize, rate: f64) -> Instance {
        Instance {
            chargers: n,
            limit: m,
            discount: 0.95,
            max_lead: 4,
            max_demand: 3,
            penalty: PenaltyFunction::quadratic(0.2, 3).unwrap(),
            arrivals: ArrivalModel::stationary(rate, ArrivalModel::uniform_feasible_types(4, 3), 1).unwrap(),
            cost: CostChain::new(vec![0.3, 0.7], vec![vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap(),
            initial: InitialCondition::default(),
        }
    }

    #[test]
    fn horizon_default() {
        let h = horizon_for_tolerance(0.999, 1e-3);
        assert!((13_000..15_000).contains(&h), "{h}");
        assert!(0.999f64.powi(h as i32) / 0.001 <= 1e-3 + 1e-12);
    }

    #[test]
    fn no_arrivals_means_nothing_happens() {
        let i = instance(3, 2, 0.0);
        let m = run_episode(&i, &EdfPolicy { limit: 2 }, 7, 200).unwrap();
        assert_eq!(m.reward, 0.0);
        assert_eq!(m.energy, 0);
        assert_eq!(m.activations_per_slot, 0.0);
    }

    #[test]
    fn zero_capacity_pays_only_penalties() {
        let i = instance(3, 0, 0.8);
        let m = run_episode(&i, &EdfPolicy { limit: 0 }, 3, 300).unwrap();
        assert_eq!(m.revenue, 0.0);
        assert_eq!(m.cost, 0.0);
        assert!(m.penalty > 0.0);
        assert!((m.reward + m.penalty).abs() < 1e-12);
    }

    #[test]
    fn accounting_identity() {
        let i = instance(4, 2, 0.7);
        let m = run_episode(&i, &LlfPolicy { limit: 2 }, 11, 500).unwrap();
        assert!((m.reward - (m.revenue - m.cost - m.penalty)).abs() < 1e-9);
    }

    #[test]
    fn deterministic_cycle_matches_hand_sum() {
        // one charger, EV (2,1) arrives at every vacancy, charged at once by EDF
        let mut i = instance(1, 1, 1.0);
        i.cost = CostChain::constant(0.5);
        i.arrivals = ArrivalModel::new(vec![PeriodArrivals::new(1.0, vec![(ChargerState::new(2, 1), 1.0)]).unwrap()])
            .unwrap();
        let h = 400;
        let m = run_episode(&i, &EdfPolicy { limit: 1 }, 1, h).unwrap();
        // slot 0 empty; EVs occupy slots (1,2), (3,4), ...; charged in the first slot of each stay
        let beta: f64 = 0.95;
        let expected: f64 = (0..h).filter(|t| t % 2 == 1).map(|t| 0.5 * beta.powi(t as i32)).sum();
        assert!((m.reward - expected).abs() < 1e-12, "{} vs {expected}", m.reward);
    }

    #[test]
    fn same_seed_is_reproducible_and_identical_policies_agree() {
        let i = instance(4, 2, 0.7);
        let policies: Vec<Box<dyn Policy>> = vec![Box::new(EdfPolicy { limit: 2 }), Box::new(EdfPolicy { limit: 2 })];
        let a = monte_carlo(&i, &policies, &[1, 2, 3], 300, None).unwrap();
        let b = monte_carlo(&i, &policies, &[1, 2, 3], 300, None).unwrap();
        assert_eq!(a, b);
        for pair in a.episodes.chunks(2) {
            assert_eq!(pair[0].metrics, pair[1].metrics);
        }
    }

    #[test]
    fn joint_dp_refuses_large_instances() {
        let i = instance(8, 2, 0.7);
        assert!(matches!(brute_force_joint_dp(&i, 1e-6), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn joint_space_round_trip() {
        let i = instance(2, 1, 0.7);
        let space = JointSpace::new(&i).unwrap();
        for code in (0..space.len).step_by(7) {
            assert_eq!(space.encode(&i, &space.decode(code)), code);
        }
    }

    #[test]
    fn estimate_interval() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-12);
        // t_{0.975,3} = 3.182446
        assert!((e.ci_half_width - 3.182446 * (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-5);
    }
}
