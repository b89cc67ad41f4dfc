//! Whittle indexes of the single-charger subsidy problem.
//!
//! Three independent routes are provided:
//!
//! * [`closed_form_index`] for a constant charging cost;
//! * [`compute_index_table`], an exact recursion over the lead time that
//!   carries the value differences `D(T,B) = V(T,B) - V(T,0)` as
//!   piecewise-linear functions of the subsidy. Differences between states
//!   with the same lead time never see the arrival continuation, so the
//!   recursion closes on itself;
//! * [`subsidy_value_iteration`] + [`index_by_bisection`], a brute-force
//!   oracle that solves the full subsidy MDP (arrivals included) and searches
//!   for the subsidy at which the optimal action flips.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{reward, ChargerState, Instance, PenaltyFunction};
use crate::pwl::PiecewiseLinearFn;

/// Index of an empty charger, and of the dummy arms padding the activation set.
pub const DUMMY_INDEX: f64 = 0.0;

/// Slope tolerance when checking that an advantage function is nondecreasing.
const MONOTONE_TOL: f64 = 1e-9;
const STITCH_TOL: f64 = 1e-9;

/// Per-arm bandit state: charger state plus cost state and period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExtendedState {
    pub charger: ChargerState,
    pub cost_state: usize,
    pub period: usize,
}

impl ExtendedState {
    pub fn new(lead_time: u32, demand: u32, cost_state: usize, period: usize) -> Self {
        ExtendedState { charger: ChargerState::new(lead_time, demand), cost_state, period }
    }
}

/// Closed-form index for a constant cost `cost`.
pub fn closed_form_index(lead_time: u32, demand: u32, cost: f64, discount: f64, penalty: &PenaltyFunction) -> f64 {
    let (t, b) = (lead_time, demand);
    if b == 0 || t == 0 {
        return 0.0;
    }
    if t == 1 {
        return 1.0 - cost + penalty.increment(b);
    }
    if b < t {
        return 1.0 - cost;
    }
    1.0 - cost + discount.powi(t as i32 - 1) * penalty.increment(b - t + 1)
}

/// `g_h(1, B) = V(1, B + h) - V(1, B)` as a function of the subsidy, built from
/// the explicit three-piece expressions at lead time one.
pub fn base_g(h: u32, demand: u32, cost: f64, penalty: &PenaltyFunction) -> Result<PiecewiseLinearFn> {
    let max_demand = penalty.max_demand();
    if h < 1 || demand + h > max_demand {
        return Err(Error::Precondition(format!(
            "base_g needs 1 <= h <= B̄ - B, got h={h}, B={demand}, B̄={max_demand}"
        )));
    }
    let f = |b: u32| penalty.value(b);
    let gain = 1.0 - cost;
    let idx = |b: u32| gain + penalty.increment(b);
    if demand == 0 {
        let top = idx(h);
        let left = gain - f(h - 1);
        if top > 0.0 {
            // constant, slope -1 between 0 and the index, constant
            PiecewiseLinearFn::from_knots(vec![0.0, top], vec![left, -f(h)], 0.0, 0.0)
        } else if top < 0.0 {
            // constant, slope +1 between the index and 0, constant
            PiecewiseLinearFn::from_knots(vec![top, 0.0], vec![left, -f(h)], 0.0, 0.0)
        } else {
            Ok(PiecewiseLinearFn::from_knots(vec![0.0], vec![left], 0.0, 0.0)?)
        }
    } else {
        let (lo, hi) = (idx(demand), idx(demand + h));
        let left = f(demand - 1) - f(demand + h - 1);
        let right = f(demand) - f(demand + h);
        if hi - lo > crate::pwl::KNOT_MERGE_TOL {
            PiecewiseLinearFn::from_knots(vec![lo, hi], vec![left, right], 0.0, 0.0)
        } else {
            PiecewiseLinearFn::from_knots(vec![lo], vec![left], 0.0, 0.0)
        }
    }
}

/// Whittle index for every `(T, B, cost state, period)` of an instance.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexTable {
    max_lead: u32,
    max_demand: u32,
    n_cost: usize,
    n_periods: usize,
    /// `[T-1][B][j][tau]`, flattened
    values: Vec<f64>,
}

/// One row of the CSV/JSON artifact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    #[serde(rename = "T")]
    pub lead_time: u32,
    #[serde(rename = "B")]
    pub demand: u32,
    pub cost_state: usize,
    pub period: usize,
    pub index: f64,
}

impl IndexTable {
    fn zeros(max_lead: u32, max_demand: u32, n_cost: usize, n_periods: usize) -> Self {
        let n = max_lead as usize * (max_demand as usize + 1) * n_cost * n_periods;
        IndexTable { max_lead, max_demand, n_cost, n_periods, values: vec![0.0; n] }
    }

    fn slot(&self, t: u32, b: u32, j: usize, tau: usize) -> usize {
        (((t as usize - 1) * (self.max_demand as usize + 1) + b as usize) * self.n_cost + j) * self.n_periods + tau
    }

    /// Index of a charger in cost state `j` during period `tau`.
    pub fn index(&self, s: ChargerState, j: usize, tau: usize) -> f64 {
        if s.lead_time == 0 {
            return DUMMY_INDEX;
        }
        self.values[self.slot(s.lead_time, s.demand, j, tau % self.n_periods)]
    }

    pub fn get(&self, s: &ExtendedState) -> f64 {
        self.index(s.charger, s.cost_state, s.period)
    }

    fn set(&mut self, t: u32, b: u32, j: usize, tau: usize, v: f64) {
        let i = self.slot(t, b, j, tau);
        self.values[i] = v;
    }

    pub fn max_lead(&self) -> u32 {
        self.max_lead
    }

    pub fn max_demand(&self) -> u32 {
        self.max_demand
    }

    pub fn n_cost_states(&self) -> usize {
        self.n_cost
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Whether the table was built for an instance with this grid.
    pub fn matches(&self, instance: &Instance) -> bool {
        self.max_lead == instance.max_lead
            && self.max_demand == instance.max_demand
            && self.n_cost == instance.n_cost_states()
            && self.n_periods == instance.n_periods()
    }

    /// All entries, empty state first, in `(T, B, cost_state, period)` order.
    pub fn records(&self) -> Vec<IndexRecord> {
        let mut out = Vec::with_capacity(self.values.len() + self.n_cost * self.n_periods);
        for j in 0..self.n_cost {
            for tau in 0..self.n_periods {
                out.push(IndexRecord { lead_time: 0, demand: 0, cost_state: j, period: tau, index: DUMMY_INDEX });
            }
        }
        for t in 1..=self.max_lead {
            for b in 0..=self.max_demand {
                for j in 0..self.n_cost {
                    for tau in 0..self.n_periods {
                        out.push(IndexRecord {
                            lead_time: t,
                            demand: b,
                            cost_state: j,
                            period: tau,
                            index: self.values[self.slot(t, b, j, tau)],
                        });
                    }
                }
            }
        }
        out
    }

    pub fn from_records(records: &[IndexRecord]) -> Result<Self> {
        let occupied = records.iter().filter(|r| r.lead_time > 0);
        let max_lead = occupied.clone().map(|r| r.lead_time).max();
        let Some(max_lead) = max_lead else {
            return Err(Error::Precondition("index table has no occupied states".into()));
        };
        let max_demand = occupied.clone().map(|r| r.demand).max().unwrap_or(0);
        let n_cost = records.iter().map(|r| r.cost_state + 1).max().unwrap_or(1);
        let n_periods = records.iter().map(|r| r.period + 1).max().unwrap_or(1);
        let mut table = Self::zeros(max_lead, max_demand, n_cost, n_periods);
        let mut seen = vec![false; table.values.len()];
        for r in occupied {
            let i = table.slot(r.lead_time, r.demand, r.cost_state, r.period);
            table.values[i] = r.index;
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Precondition("index table is missing grid entries".into()));
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in self.records() {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd.deserialize().collect::<std::result::Result<Vec<IndexRecord>, _>>()?;
        Self::from_records(&records)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.records())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let records: Vec<IndexRecord> = serde_json::from_str(s)?;
        Self::from_records(&records)
    }

    /// Largest violation of `index(T,B) <= index(T,B+1)` over `B >= T`.
    pub fn monotonicity_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 1..=self.max_lead {
            for b in t..self.max_demand {
                for j in 0..self.n_cost {
                    for tau in 0..self.n_periods {
                        let lo = self.values[self.slot(t, b, j, tau)];
                        let hi = self.values[self.slot(t, b + 1, j, tau)];
                        worst = worst.max(lo - hi);
                    }
                }
            }
        }
        worst
    }
}

/// The functions the recursion holds at one lead time.
pub struct RecursionLevel {
    lead_time: u32,
    max_demand: u32,
    n_cost: usize,
    n_periods: usize,
    /// `D(T,B,j,tau) = V(T,B,j,tau) - V(T,0,j,tau)`, indexed `[(B * K + j) * P + tau]`.
    diffs: Vec<PiecewiseLinearFn>,
    /// Passive-minus-active advantage `f(T,B,j,tau)` for `B >= 1`, same layout (B=0 unused).
    advantages: Vec<Option<PiecewiseLinearFn>>,
}

impl RecursionLevel {
    fn at(&self, b: u32, j: usize, tau: usize) -> usize {
        (b as usize * self.n_cost + j) * self.n_periods + tau % self.n_periods
    }

    pub fn lead_time(&self) -> u32 {
        self.lead_time
    }

    pub fn max_demand(&self) -> u32 {
        self.max_demand
    }

    pub fn n_cost_states(&self) -> usize {
        self.n_cost
    }

    /// Periods actually distinguished by the recursion (1 for a homogeneous cost chain).
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn diff(&self, b: u32, j: usize, tau: usize) -> &PiecewiseLinearFn {
        &self.diffs[self.at(b, j, tau)]
    }

    /// `g_h(T,B,j,tau) = V(T,B+h) - V(T,B)`.
    pub fn g(&self, h: u32, b: u32, j: usize, tau: usize) -> PiecewiseLinearFn {
        self.diff(b + h, j, tau).sub(self.diff(b, j, tau))
    }

    pub fn advantage(&self, b: u32, j: usize, tau: usize) -> Option<&PiecewiseLinearFn> {
        self.advantages[self.at(b, j, tau)].as_ref()
    }
}

/// Runs the lead-time recursion, handing every level to `visit`, and returns
/// the full index table.
pub fn index_recursion(instance: &Instance, mut visit: impl FnMut(&RecursionLevel)) -> Result<IndexTable> {
    instance.validate()?;
    let k = instance.n_cost_states();
    let out_periods = instance.n_periods();
    // with one transition matrix the index does not depend on the period
    let periods = if instance.cost.is_homogeneous() { 1 } else { out_periods };
    let max_demand = instance.max_demand;
    let beta = instance.discount;
    let penalty = &instance.penalty;
    let mut table = IndexTable::zeros(instance.max_lead, max_demand, k, out_periods);
    let n = (max_demand as usize + 1) * k * periods;

    let mut level = RecursionLevel {
        lead_time: 1,
        max_demand,
        n_cost: k,
        n_periods: periods,
        diffs: vec![PiecewiseLinearFn::constant(0.0); n],
        advantages: vec![None; n],
    };
    for b in 1..=max_demand {
        for j in 0..k {
            let c = instance.cost.level(j);
            let idx = 1.0 - c + penalty.increment(b);
            for tau in 0..periods {
                let at = level.at(b, j, tau);
                level.diffs[at] = base_g(b, 0, c, penalty)?;
                level.advantages[at] = Some(PiecewiseLinearFn::affine(1.0, -idx));
            }
            for tau in 0..out_periods {
                table.set(1, b, j, tau, idx);
            }
        }
    }
    visit(&level);

    let relu = PiecewiseLinearFn::positive_part();
    for t in 2..=instance.max_lead {
        let mut next = RecursionLevel {
            lead_time: t,
            max_demand,
            n_cost: k,
            n_periods: periods,
            diffs: vec![PiecewiseLinearFn::constant(0.0); n],
            advantages: vec![None; n],
        };
        for tau in 0..periods {
            let tau_next = (tau + 1) % periods;
            for j in 0..k {
                let row = instance.cost.row(j, tau);
                let gain = 1.0 - instance.cost.level(j);
                // beta * E[D(T-1, B', c', tau+1) | c = j]
                let cont: Vec<PiecewiseLinearFn> = (0..=max_demand)
                    .map(|b| {
                        let terms: Vec<(f64, &PiecewiseLinearFn)> = row
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| **p > 0.0)
                            .map(|(kk, p)| (beta * p, level.diff(b, kk, tau_next)))
                            .collect();
                        PiecewiseLinearFn::linear_combination(&terms)
                    })
                    .collect();
                for b in 1..=max_demand {
                    let passive = cont[b as usize].add_affine(1.0, 0.0);
                    let active = cont[b as usize - 1].add_affine(0.0, gain);
                    let advantage = passive.sub(&active);
                    let idx = advantage.least_root(MONOTONE_TOL)?;
                    let value = PiecewiseLinearFn::stitch(&active, &passive, idx, STITCH_TOL)?;
                    let at = next.at(b, j, tau);
                    next.diffs[at] = value.sub(&relu);
                    next.advantages[at] = Some(advantage);
                    if periods == out_periods {
                        table.set(t, b, j, tau, idx);
                    } else {
                        for p in 0..out_periods {
                            table.set(t, b, j, p, idx);
                        }
                    }
                }
            }
        }
        visit(&next);
        level = next;
    }
    Ok(table)
}

/// Whittle index table by the piecewise-linear recursion.
pub fn compute_index_table(instance: &Instance) -> Result<IndexTable> {
    index_recursion(instance, |_| {})
}

/// Fixed point of the subsidy Bellman operator on the single-charger grid.
#[derive(Clone, Debug)]
pub struct SubsidySolution {
    n_cost: usize,
    n_periods: usize,
    pub values: Vec<f64>,
    /// `Q_passive - Q_active` per state; the optimal action is active iff negative.
    pub advantage: Vec<f64>,
    pub iterations: usize,
}

impl SubsidySolution {
    fn at(&self, instance: &Instance, s: &ExtendedState) -> usize {
        (instance.charger_index(s.charger) * self.n_cost + s.cost_state) * self.n_periods + s.period
    }

    pub fn value(&self, instance: &Instance, s: &ExtendedState) -> f64 {
        self.values[self.at(instance, s)]
    }

    pub fn advantage_at(&self, instance: &Instance, s: &ExtendedState) -> f64 {
        self.advantage[self.at(instance, s)]
    }

    /// Activation is optimal only when strictly better than idling.
    pub fn is_active(&self, instance: &Instance, s: &ExtendedState) -> bool {
        self.advantage_at(instance, s) < 0.0
    }
}

/// Value iteration for the subsidy problem, arrivals included. The returned
/// values are within `tol` of the fixed point in sup norm.
pub fn subsidy_value_iteration(instance: &Instance, subsidy: f64, tol: f64) -> SubsidySolution {
    subsidy_value_iteration_from(instance, subsidy, tol, None)
}

fn subsidy_value_iteration_from(instance: &Instance, subsidy: f64, tol: f64, init: Option<&[f64]>) -> SubsidySolution {
    let states = instance.charger_states();
    let k = instance.n_cost_states();
    let np = instance.n_periods();
    let beta = instance.discount;
    let n = states.len() * k * np;
    let at = |cs: usize, j: usize, tau: usize| (cs * k + j) * np + tau;
    let mut v = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let r_max = instance.max_abs_reward() + subsidy.abs();
    let min_iters = ((tol * (1.0 - beta) / r_max).ln() / beta.ln()).ceil().max(1.0) as usize;
    let stop = tol * (1.0 - beta) / beta;

    // successor charger indexes for (passive, active); None means departure
    let succ: Vec<(Option<usize>, Option<usize>)> = states
        .iter()
        .map(|s| {
            if s.lead_time > 1 {
                let p = instance.charger_index(ChargerState::new(s.lead_time - 1, s.demand));
                let a = instance.charger_index(ChargerState::new(s.lead_time - 1, s.demand.saturating_sub(1)));
                (Some(p), Some(a))
            } else {
                (None, None)
            }
        })
        .collect();
    let arrival_types: Vec<Vec<(usize, f64)>> = (0..np)
        .map(|tau| {
            let pa = instance.arrivals.period(tau);
            pa.types().iter().map(|(s, q)| (instance.charger_index(*s), pa.rate() * q)).collect()
        })
        .collect();

    let mut cont = vec![0.0; n];
    let mut arrive = vec![0.0; k * np];
    let mut advantage = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        for cs in 0..states.len() {
            for tau in 0..np {
                let tn = (tau + 1) % np;
                for j in 0..k {
                    let row = instance.cost.row(j, tau);
                    cont[at(cs, j, tau)] = row.iter().enumerate().map(|(kk, p)| p * v[at(cs, kk, tn)]).sum();
                }
            }
        }
        for tau in 0..np {
            let rate = instance.arrivals.rate(tau);
            for j in 0..k {
                let mut w = (1.0 - rate) * cont[at(0, j, tau)];
                for (x, p) in &arrival_types[tau] {
                    w += p * cont[at(*x, j, tau)];
                }
                arrive[j * np + tau] = w;
            }
        }
        let mut delta: f64 = 0.0;
        for (cs, s) in states.iter().enumerate() {
            for j in 0..k {
                let c = instance.cost.level(j);
                for tau in 0..np {
                    let (cp, ca) = match succ[cs] {
                        (Some(p), Some(a)) => (cont[at(p, j, tau)], cont[at(a, j, tau)]),
                        _ => (arrive[j * np + tau], arrive[j * np + tau]),
                    };
                    let q_passive = reward(*s, c, false, &instance.penalty) + subsidy + beta * cp;
                    let q_active = reward(*s, c, true, &instance.penalty) + beta * ca;
                    let i = at(cs, j, tau);
                    let nv = q_passive.max(q_active);
                    delta = delta.max((nv - v[i]).abs());
                    v[i] = nv;
                    advantage[i] = q_passive - q_active;
                }
            }
        }
        if iterations >= min_iters && delta <= stop {
            break;
        }
    }
    SubsidySolution { n_cost: k, n_periods: np, values: v, advantage, iterations }
}

/// Symmetric bracket `[-hi, hi]` containing every index of the instance.
pub fn subsidy_bracket(instance: &Instance) -> f64 {
    1.0 + instance.cost.max_abs_level() + instance.penalty.max_increment()
}

const ORACLE_VI_TOL: f64 = 1e-12;

/// Index of one state by bisection on the subsidy, solving the subsidy MDP by
/// value iteration at every probe.
pub fn index_by_bisection(instance: &Instance, state: &ExtendedState, tol: f64) -> Result<f64> {
    instance.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Precondition("bisection tolerance must be positive".into()));
    }
    let hi0 = subsidy_bracket(instance);
    let (mut lo, mut hi) = (-hi0, hi0);
    let lo_sol = subsidy_value_iteration(instance, lo, ORACLE_VI_TOL);
    let hi_sol = subsidy_value_iteration(instance, hi, ORACLE_VI_TOL);
    if lo_sol.advantage_at(instance, state) >= 0.0 || hi_sol.advantage_at(instance, state) < 0.0 {
        return Err(Error::BracketFailure { lo, hi });
    }
    let mut warm = hi_sol.values;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let sol = subsidy_value_iteration_from(instance, mid, ORACLE_VI_TOL, Some(&warm));
        if sol.advantage_at(instance, state) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        warm = sol.values;
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection oracle applied to every occupied state of the grid.
pub fn index_table_by_bisection(instance: &Instance, tol: f64) -> Result<IndexTable> {
    let mut table = IndexTable::zeros(instance.max_lead, instance.max_demand, instance.n_cost_states(), instance.n_periods());
    for t in 1..=instance.max_lead {
        for b in 1..=instance.max_demand {
            for j in 0..instance.n_cost_states() {
                for tau in 0..instance.n_periods() {
                    let v = index_by_bisection(instance, &ExtendedState::new(t, b, j, tau), tol)?;
                    table.set(t, b, j, tau, v);
                }
            }
        }
    }
    Ok(table)
}

/// Subsidies in `grid` at which the optimal action at `state` changes.
pub fn action_flips(instance: &Instance, state: &ExtendedState, grid: &[f64]) -> Vec<(f64, bool)> {
    let mut flips = Vec::new();
    let mut prev: Option<bool> = None;
    let mut warm: Option<Vec<f64>> = None;
    for nu in grid {
        let sol = subsidy_value_iteration_from(instance, *nu, ORACLE_VI_TOL, warm.as_deref());
        let active = sol.is_active(instance, state);
        if prev.is_some_and(|p| p != active) {
            flips.push((*nu, active));
        }
        prev = Some(active);
        warm = Some(sol.values);
    }
    flips
}

/// True iff, along the sorted `grid`, the optimal action at `state` never
/// returns to active once it has become passive.
pub fn check_indexability(instance: &Instance, state: &ExtendedState, grid: &[f64]) -> bool {
    action_flips(instance, state, grid).iter().all(|(_, active)| !active)
}

/// [`check_indexability`] for every state of the grid at once.
pub fn check_indexability_all(instance: &Instance, grid: &[f64]) -> bool {
    let mut passive_seen: Option<Vec<bool>> = None;
    let mut warm: Option<Vec<f64>> = None;
    for nu in grid {
        let sol = subsidy_value_iteration_from(instance, *nu, ORACLE_VI_TOL, warm.as_deref());
        let passive: Vec<bool> = sol.advantage.iter().map(|a| *a >= 0.0).collect();
        if let Some(prev) = &passive_seen {
            if prev.iter().zip(&passive).any(|(was, now)| *was && !*now) {
                return false;
            }
        }
        passive_seen = Some(passive);
        warm = Some(sol.values);
    }
    true
}
