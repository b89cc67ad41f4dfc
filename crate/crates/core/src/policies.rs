//! Scheduling policies: Whittle index (optionally followed by the LLLP
//! interchange), EDF, LLF and the replanned valley-filling heuristic.

use std::cmp::Ordering;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::MinCostFlow;
use crate::index::IndexTable;
use crate::model::{ActionVector, ChargerState, Instance, PenaltyFunction, SystemState};

/// Unit cost given to later slots so valley filling prefers the earliest of
/// equally cheap slots.
const SLOT_TIE_BREAK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDecision {
    pub action: ActionVector,
    /// Priority used to rank each charger; `None` for chargers that were not
    /// candidates (empty or fully charged).
    pub priorities: Vec<Option<f64>>,
    /// Number of LLLP swaps performed while producing `action`.
    pub interchanges: usize,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, state: &SystemState) -> PolicyDecision;
}

/// The policy names accepted in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "whittle")]
    Whittle,
    #[serde(rename = "whittle+lllp")]
    WhittleLllp,
    #[serde(rename = "edf")]
    Edf,
    #[serde(rename = "llf")]
    Llf,
    #[serde(rename = "valley")]
    Valley,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Whittle, PolicyKind::WhittleLllp, PolicyKind::Edf, PolicyKind::Llf, PolicyKind::Valley];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Whittle => "whittle",
            PolicyKind::WhittleLllp => "whittle+lllp",
            PolicyKind::Edf => "edf",
            PolicyKind::Llf => "llf",
            PolicyKind::Valley => "valley",
        }
    }

    pub fn needs_index(&self) -> bool {
        matches!(self, PolicyKind::Whittle | PolicyKind::WhittleLllp)
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn candidates(state: &SystemState) -> impl Iterator<Item = (usize, ChargerState)> + '_ {
    state.chargers.iter().copied().enumerate().filter(|(_, s)| s.needs_charge())
}

/// Larger B first, then lower id.
fn tie_break(a: (usize, ChargerState), b: (usize, ChargerState)) -> Ordering {
    b.1.demand.cmp(&a.1.demand).then(a.0.cmp(&b.0))
}

/// Activates up to `limit` candidates in ascending `key` order.
fn rank_ascending(state: &SystemState, limit: usize, key: impl Fn(ChargerState) -> i64) -> PolicyDecision {
    let mut cands: Vec<_> = candidates(state).collect();
    cands.sort_by(|a, b| key(a.1).cmp(&key(b.1)).then(tie_break(*a, *b)));
    let n = state.chargers.len();
    let mut action = ActionVector::idle(n);
    let mut priorities = vec![None; n];
    for &(i, s) in &cands {
        priorities[i] = Some(key(s) as f64);
    }
    for &(i, _) in cands.iter().take(limit) {
        action.0[i] = true;
    }
    PolicyDecision { action, priorities, interchanges: 0 }
}

pub fn edf_policy(state: &SystemState, limit: usize) -> PolicyDecision {
    rank_ascending(state, limit, |s| s.lead_time as i64)
}

pub fn llf_policy(state: &SystemState, limit: usize) -> PolicyDecision {
    rank_ascending(state, limit, |s| s.laxity())
}

/// Ranks occupied chargers by index and activates the `limit` largest,
/// skipping any whose index is not strictly positive (a dummy arm wins).
pub fn whittle_policy(state: &SystemState, table: &IndexTable, limit: usize) -> PolicyDecision {
    let n = state.chargers.len();
    let mut priorities = vec![None; n];
    let mut cands: Vec<(usize, ChargerState, f64)> = candidates(state)
        .map(|(i, s)| {
            let v = table.index(s, state.cost_state, state.period);
            priorities[i] = Some(v);
            (i, s, v)
        })
        .collect();
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(tie_break((a.0, a.1), (b.0, b.1))));
    let mut action = ActionVector::idle(n);
    for &(i, _, v) in cands.iter().take(limit) {
        if v > 0.0 {
            action.0[i] = true;
        }
    }
    PolicyDecision { action, priorities, interchanges: 0 }
}

/// True when `i` has no more laxity and at least as much demand as `k`, with
/// one of the two strict.
pub fn dominates(i: ChargerState, k: ChargerState) -> bool {
    let (li, lk) = (i.laxity(), k.laxity());
    li <= lk && i.demand >= k.demand && (li < lk || i.demand > k.demand)
}

/// Applies [`lllp_interchange_counted`] and discards the swap count.
pub fn lllp_interchange(state: &SystemState, action: &ActionVector) -> ActionVector {
    lllp_interchange_counted(state, action).0
}

/// Swaps inactive occupied chargers into the active set whenever they dominate
/// an active one, until no such pair remains. Inactive chargers are scanned in
/// (laxity ascending, demand descending, id) order; each is swapped with the
/// least urgent active charger it dominates.
pub fn lllp_interchange_counted(state: &SystemState, action: &ActionVector) -> (ActionVector, usize) {
    let mut a = action.clone();
    let ch = &state.chargers;
    let urgency = |x: &usize, y: &usize| {
        ch[*x].laxity().cmp(&ch[*y].laxity()).then(tie_break((*x, ch[*x]), (*y, ch[*y])))
    };
    let mut swaps = 0;
    loop {
        let mut inactive: Vec<usize> = (0..ch.len()).filter(|&i| ch[i].needs_charge() && !a.0[i]).collect();
        inactive.sort_by(urgency);
        let mut swapped = false;
        for &i in &inactive {
            let victim = (0..ch.len())
                .filter(|&k| a.0[k] && dominates(ch[i], ch[k]))
                .max_by(urgency);
            if let Some(k) = victim {
                a.0[k] = false;
                a.0[i] = true;
                swaps += 1;
                swapped = true;
                break;
            }
        }
        if !swapped {
            return (a, swaps);
        }
    }
}

/// Conditional expected cost `E[c(t+k) | cost state j, period τ]` for
/// `k = 0..horizon`.
#[derive(Clone, Debug)]
pub struct CostForecast {
    horizon: usize,
    n_states: usize,
    // [tau][j][k]
    table: Vec<f64>,
}

impl CostForecast {
    pub fn new(instance: &Instance) -> Self {
        let horizon = instance.max_lead as usize;
        let n_states = instance.n_cost_states();
        let n_periods = instance.n_periods();
        let cost = &instance.cost;
        let mut table = Vec::with_capacity(n_periods * n_states * horizon);
        for tau in 0..n_periods {
            for j in 0..n_states {
                let mut dist = vec![0.0; n_states];
                dist[j] = 1.0;
                for k in 0..horizon {
                    table.push(dist.iter().zip(cost.levels()).map(|(p, c)| p * c).sum());
                    let period = (tau + k) % n_periods;
                    let mut next = vec![0.0; n_states];
                    for (from, p) in dist.iter().enumerate() {
                        if *p > 0.0 {
                            for (to, q) in cost.row(from, period).iter().enumerate() {
                                next[to] += p * q;
                            }
                        }
                    }
                    dist = next;
                }
            }
        }
        CostForecast { horizon, n_states, table }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn expected(&self, cost_state: usize, period: usize, k: usize) -> f64 {
        self.table[(period * self.n_states + cost_state) * self.horizon + k]
    }

    pub fn path(&self, cost_state: usize, period: usize) -> &[f64] {
        let start = (period * self.n_states + cost_state) * self.horizon;
        &self.table[start..start + self.horizon]
    }
}

/// Optimal deterministic plan over `costs` for the attached EVs: returns which
/// chargers charge in the first slot and the plan's value (profit minus
/// penalties).
pub fn valley_plan(state: &SystemState, limit: usize, penalty: &PenaltyFunction, costs: &[f64]) -> (ActionVector, f64) {
    let n = state.chargers.len();
    let evs: Vec<(usize, ChargerState)> = candidates(state).collect();
    let mut action = ActionVector::idle(n);
    if evs.is_empty() {
        return (action, 0.0);
    }
    let horizon = evs.iter().map(|(_, s)| s.lead_time as usize).max().unwrap_or(0).min(costs.len());
    // nodes: source, EVs, slots, sink
    let source = 0;
    let ev_node = |e: usize| 1 + e;
    let slot_node = |k: usize| 1 + evs.len() + k;
    let sink = 1 + evs.len() + horizon;
    let mut g = MinCostFlow::new(sink + 1);
    let mut arcs = Vec::new();
    let mut first = Vec::with_capacity(evs.len());
    let mut total = 0;
    for (e, &(i, s)) in evs.iter().enumerate() {
        g.add_arc(source, ev_node(e), s.demand as i64, 0.0);
        total += s.demand as i64;
        for k in 0..(s.lead_time as usize).min(horizon) {
            let arc = g.add_arc(ev_node(e), slot_node(k), 1, -(1.0 - costs[k]) + SLOT_TIE_BREAK * k as f64);
            arcs.push((arc, k));
            if k == 0 {
                first.push((i, arc));
            }
        }
        for u in 1..=s.demand {
            g.add_arc(ev_node(e), sink, 1, penalty.increment(u));
        }
    }
    for k in 0..horizon {
        g.add_arc(slot_node(k), sink, limit as i64, 0.0);
    }
    let (_, cost) = g.solve(source, sink, total);
    let tie_cost: f64 = arcs.iter().map(|&(a, k)| g.flow(a) as f64 * SLOT_TIE_BREAK * k as f64).sum();
    for (i, arc) in first {
        if g.flow(arc) > 0 {
            action.0[i] = true;
        }
    }
    (action, -(cost - tie_cost))
}

/// Plans every attached EV's remaining demand over its remaining slots against
/// the expected cost path and executes the first slot of the plan.
pub fn valley_filling_policy(
    state: &SystemState,
    limit: usize,
    penalty: &PenaltyFunction,
    forecast: &CostForecast,
) -> PolicyDecision {
    let costs = forecast.path(state.cost_state, state.period);
    let (action, _) = valley_plan(state, limit, penalty, costs);
    let priorities = state
        .chargers
        .iter()
        .map(|s| s.needs_charge().then(|| 1.0 - costs[0]))
        .collect();
    PolicyDecision { action, priorities, interchanges: 0 }
}

/// Whittle-index policy bound to a precomputed table.
#[derive(Clone, Debug)]
pub struct WhittlePolicy {
    table: Arc<IndexTable>,
    limit: usize,
    lllp: bool,
}

impl WhittlePolicy {
    pub fn new(table: Arc<IndexTable>, limit: usize, lllp: bool) -> Self {
        WhittlePolicy { table, limit, lllp }
    }
}

impl Policy for WhittlePolicy {
    fn name(&self) -> &str {
        if self.lllp {
            "whittle+lllp"
        } else {
            "whittle"
        }
    }

    fn decide(&self, state: &SystemState) -> PolicyDecision {
        let mut d = whittle_policy(state, &self.table, self.limit);
        if self.lllp {
            let (a, swaps) = lllp_interchange_counted(state, &d.action);
            d.action = a;
            d.interchanges = swaps;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct EdfPolicy {
    pub limit: usize,
}

impl Policy for EdfPolicy {
    fn name(&self) -> &str {
        "edf"
    }

    fn decide(&self, state: &SystemState) -> PolicyDecision {
        edf_policy(state, self.limit)
    }
}

#[derive(Clone, Debug)]
pub struct LlfPolicy {
    pub limit: usize,
}

impl Policy for LlfPolicy {
    fn name(&self) -> &str {
        "llf"
    }

    fn decide(&self, state: &SystemState) -> PolicyDecision {
        llf_policy(state, self.limit)
    }
}

#[derive(Clone, Debug)]
pub struct ValleyFillingPolicy {
    limit: usize,
    penalty: PenaltyFunction,
    forecast: CostForecast,
}

impl ValleyFillingPolicy {
    pub fn new(instance: &Instance) -> Self {
        ValleyFillingPolicy {
            limit: instance.limit,
            penalty: instance.penalty.clone(),
            forecast: CostForecast::new(instance),
        }
    }
}

impl Policy for ValleyFillingPolicy {
    fn name(&self) -> &str {
        "valley"
    }

    fn decide(&self, state: &SystemState) -> PolicyDecision {
        valley_filling_policy(state, self.limit, &self.penalty, &self.forecast)
    }
}

/// Builds a policy by kind. Index policies need `table`.
pub fn build_policy(kind: PolicyKind, instance: &Instance, table: Option<Arc<IndexTable>>) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Whittle | PolicyKind::WhittleLllp => {
            let table = table.ok_or_else(|| Error::Precondition(format!("policy {kind} needs an index table")))?;
            if !table.matches(instance) {
                return Err(Error::Precondition("index table does not match the instance".into()));
            }
            Box::new(WhittlePolicy::new(table, instance.limit, kind == PolicyKind::WhittleLllp))
        }
        PolicyKind::Edf => Box::new(EdfPolicy { limit: instance.limit }),
        PolicyKind::Llf => Box::new(LlfPolicy { limit: instance.limit }),
        PolicyKind::Valley => Box::new(ValleyFillingPolicy::new(instance)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::compute_index_table;
    use crate::model::{ArrivalModel, CostChain, InitialCondition};

    fn st(chargers: &[(u32, u32)]) -> SystemState {
        SystemState {
            period: 0,
            cost_state: 0,
            chargers: chargers.iter().map(|&(t, b)| ChargerState::new(t, b)).collect(),
        }
    }

    fn active(a: &ActionVector) -> Vec<usize> {
        (0..a.len()).filter(|&i| a.is_active(i)).collect()
    }

    fn instance(cost: CostChain, n: usize, m: usize, max_lead: u32, max_demand: u32) -> Instance {
        Instance {
            chargers: n,
            limit: m,
            discount: 0.95,
            max_lead,
            max_demand,
            penalty: PenaltyFunction::quadratic(0.2, max_demand).unwrap(),
            arrivals: ArrivalModel::stationary(0.7, ArrivalModel::uniform_feasible_types(max_lead, max_demand), 1)
                .unwrap(),
            cost,
            initial: InitialCondition::default(),
        }
    }

    /// A table with prescribed index values for a few states, zero elsewhere.
    fn table_with(values: &[((u32, u32), f64)]) -> IndexTable {
        let inst = instance(CostChain::constant(0.5), 2, 1, 5, 3);
        let mut records = compute_index_table(&inst).unwrap().records();
        for r in records.iter_mut() {
            r.index = values
                .iter()
                .find(|((t, b), _)| r.lead_time == *t && r.demand == *b)
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
        }
        IndexTable::from_records(&records).unwrap()
    }

    #[test]
    fn whittle_examples() {
        let table = table_with(&[((3, 1), 0.7), ((4, 2), 0.5), ((2, 1), -0.1)]);
        let s = st(&[(3, 1), (4, 2)]);
        assert_eq!(active(&whittle_policy(&s, &table, 1).action), vec![0]);
        let s = st(&[(3, 1), (2, 1)]);
        let d = whittle_policy(&s, &table, 2);
        assert_eq!(active(&d.action), vec![0]);
        assert_eq!(d.priorities, vec![Some(0.7), Some(-0.1)]);
        let s = st(&[(0, 0)]);
        assert_eq!(whittle_policy(&s, &table, 1).action.count(), 0);
    }

    #[test]
    fn whittle_idles_at_zero_index_and_breaks_ties() {
        let table = table_with(&[((3, 1), 0.4), ((3, 2), 0.4), ((5, 1), 0.0)]);
        let s = st(&[(3, 1), (5, 1), (3, 2)]);
        assert_eq!(active(&whittle_policy(&s, &table, 1).action), vec![2]);
        assert_eq!(active(&whittle_policy(&s, &table, 3).action), vec![0, 2]);
    }

    #[test]
    fn lllp_examples() {
        let s = st(&[(5, 1), (3, 2)]);
        let (a, swaps) = lllp_interchange_counted(&s, &ActionVector(vec![true, false]));
        assert_eq!(active(&a), vec![1]);
        assert_eq!(swaps, 1);
        let s = st(&[(3, 2), (5, 1)]);
        assert_eq!(active(&lllp_interchange(&s, &ActionVector(vec![true, false]))), vec![0]);
        let all = ActionVector(vec![true, true]);
        assert_eq!(lllp_interchange(&s, &all), all);
    }

    #[test]
    fn lllp_ignores_empty_and_finished_chargers() {
        let s = st(&[(5, 1), (0, 0), (2, 0)]);
        let a = ActionVector(vec![true, false, false]);
        assert_eq!(lllp_interchange_counted(&s, &a), (a.clone(), 0));
    }

    #[test]
    fn edf_examples() {
        let s = st(&[(2, 1), (5, 3), (1, 2)]);
        assert_eq!(active(&edf_policy(&s, 2).action), vec![0, 2]);
        assert_eq!(active(&edf_policy(&s, 5).action), vec![0, 1, 2]);
        let s = st(&[(3, 1), (3, 2), (3, 2)]);
        assert_eq!(active(&edf_policy(&s, 1).action), vec![1]);
    }

    #[test]
    fn llf_examples() {
        let s = st(&[(5, 1), (3, 2), (2, 2)]);
        assert_eq!(active(&llf_policy(&s, 2).action), vec![1, 2]);
        let s = st(&[(4, 1), (6, 3), (5, 2)]);
        assert_eq!(active(&llf_policy(&s, 1).action), vec![1]);
        let s = st(&[(0, 0), (0, 0)]);
        assert_eq!(llf_policy(&s, 2).action.count(), 0);
    }

    fn forecast_for(levels: Vec<f64>, matrix: Vec<Vec<f64>>, max_lead: u32) -> (Instance, CostForecast) {
        let inst = instance(CostChain::new(levels, matrix).unwrap(), 1, 1, max_lead, 3);
        let f = CostForecast::new(&inst);
        (inst, f)
    }

    #[test]
    fn forecast_follows_chain() {
        let (_, f) = forecast_for(vec![0.9, 0.1], vec![vec![0.0, 1.0], vec![1.0, 0.0]], 3);
        assert_eq!(f.path(0, 0), &[0.9, 0.1, 0.9]);
        let (_, f) = forecast_for(vec![0.2, 0.8], vec![vec![0.5, 0.5], vec![0.5, 0.5]], 2);
        assert!((f.expected(0, 0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn valley_defers_to_cheap_slot() {
        let (inst, f) = forecast_for(vec![0.9, 0.1], vec![vec![0.0, 1.0], vec![1.0, 0.0]], 2);
        let s = st(&[(2, 1)]);
        let d = valley_filling_policy(&s, 1, &inst.penalty, &f);
        assert_eq!(d.action.count(), 0);
    }

    #[test]
    fn valley_charges_when_penalty_exceeds_loss() {
        let (inst, f) = forecast_for(vec![0.99], vec![vec![1.0]], 1);
        let s = st(&[(1, 1)]);
        assert_eq!(active(&valley_filling_policy(&s, 1, &inst.penalty, &f).action), vec![0]);
        // with a unit cost above 1 + F(1) the penalty is cheaper
        let (inst, f) = forecast_for(vec![1.3], vec![vec![1.0]], 1);
        assert_eq!(valley_filling_policy(&s, 1, &inst.penalty, &f).action.count(), 0);
        assert_eq!(valley_filling_policy(&s, 0, &inst.penalty, &f).action.count(), 0);
    }

    #[test]
    fn valley_matches_enumeration_on_small_plans() {
        // brute force over per-slot assignments for two EVs sharing one slot per step
        let (inst, f) = forecast_for(vec![0.3, 0.7], vec![vec![0.6, 0.4], vec![0.3, 0.7]], 3);
        let s = st(&[(3, 2), (2, 2)]);
        let costs = f.path(0, 0).to_vec();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << 6) {
            // bit 3e+k: EV e charges in slot k
            let mut ok = true;
            let mut value = 0.0;
            for k in 0..3 {
                let used = (0..2).filter(|e| mask >> (3 * e + k) & 1 == 1).count();
                if used > 1 {
                    ok = false;
                }
            }
            for (e, ch) in s.chargers.iter().enumerate() {
                let mut got = 0;
                for k in 0..3 {
                    if mask >> (3 * e + k) & 1 == 1 {
                        if k >= ch.lead_time as usize {
                            ok = false;
                        }
                        got += 1;
                        value += 1.0 - costs[k];
                    }
                }
                if got > ch.demand {
                    ok = false;
                } else {
                    value -= inst.penalty.value(ch.demand - got);
                }
            }
            if ok {
                best = best.max(value);
            }
        }
        let (a, value) = valley_plan(&s, 1, &inst.penalty, &costs);
        assert!((value - best).abs() < 1e-9, "{value} vs {best}");
        assert_eq!(a.count(), 1);
    }

    #[test]
    fn kinds_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!(matches!("fifo".parse::<PolicyKind>(), Err(Error::UnknownPolicy(_))));
    }
}
