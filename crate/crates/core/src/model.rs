//! The charging-facility MDP: charger states, cost chain, arrivals, rewards and
//! the one-slot system dynamics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Lead time to deadline and remaining demand of one charger, both in slots.
///
/// `(0, 0)` encodes an empty charger; an attached EV always has `lead_time >= 1`.
/// Demand may exceed lead time: such an EV cannot finish and is penalized at
/// its deadline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChargerState {
    pub lead_time: u32,
    pub demand: u32,
}

impl ChargerState {
    pub const EMPTY: ChargerState = ChargerState { lead_time: 0, demand: 0 };

    pub const fn new(lead_time: u32, demand: u32) -> Self {
        ChargerState { lead_time, demand }
    }

    pub fn is_empty(&self) -> bool {
        self.lead_time == 0
    }

    /// True when an EV is attached and still wants charge.
    pub fn needs_charge(&self) -> bool {
        self.lead_time >= 1 && self.demand > 0
    }

    pub fn laxity(&self) -> i64 {
        self.lead_time as i64 - self.demand as i64
    }

    pub fn validate(&self, max_lead: u32, max_demand: u32) -> Result<()> {
        if self.lead_time == 0 && self.demand != 0 {
            return Err(Error::InvalidState(format!(
                "empty charger must be (0,0), got ({},{})",
                self.lead_time, self.demand
            )));
        }
        if self.lead_time > max_lead || self.demand > max_demand {
            return Err(Error::InvalidState(format!(
                "({},{}) outside grid T<={max_lead}, B<={max_demand}",
                self.lead_time, self.demand
            )));
        }
        Ok(())
    }
}

/// Non-completion penalty `F(0..=B̄)`, tabulated so convexity can be checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PenaltyFunction {
    table: Vec<f64>,
}

impl PenaltyFunction {
    pub fn new(table: Vec<f64>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidInstance("penalty table is empty".into()));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("penalty table has non-finite entries".into()));
        }
        if table[0] != 0.0 {
            return Err(Error::InvalidInstance(format!("F(0) must be 0, got {}", table[0])));
        }
        for b in 1..table.len() {
            let inc = table[b] - table[b - 1];
            if inc < -1e-12 {
                return Err(Error::InvalidInstance(format!("penalty decreases at B={b}")));
            }
            if b >= 2 && inc < (table[b - 1] - table[b - 2]) - 1e-12 {
                return Err(Error::InvalidInstance(format!("penalty is not convex at B={}", b - 1)));
            }
        }
        Ok(PenaltyFunction { table })
    }

    /// `F(b) = kappa * b^2` for `b = 0..=max_demand`.
    pub fn quadratic(kappa: f64, max_demand: u32) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(Error::InvalidInstance(format!("quadratic penalty needs kappa >= 0, got {kappa}")));
        }
        Self::new((0..=max_demand).map(|b| kappa * (b as f64) * (b as f64)).collect())
    }

    pub fn value(&self, b: u32) -> f64 {
        self.table[b as usize]
    }

    /// `F(b) - F(b - 1)` for `b >= 1`.
    pub fn increment(&self, b: u32) -> f64 {
        self.table[b as usize] - self.table[b as usize - 1]
    }

    pub fn max_increment(&self) -> f64 {
        (1..self.table.len() as u32).map(|b| self.increment(b)).fold(0.0, f64::max)
    }

    pub fn max_demand(&self) -> u32 {
        self.table.len() as u32 - 1
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

impl TryFrom<Vec<f64>> for PenaltyFunction {
    type Error = Error;
    fn try_from(table: Vec<f64>) -> Result<Self> {
        Self::new(table)
    }
}

impl From<PenaltyFunction> for Vec<f64> {
    fn from(p: PenaltyFunction) -> Self {
        p.table
    }
}

type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub enum Transitions {
    Homogeneous(Matrix),
    /// One matrix per period; the matrix of the current period drives the next step.
    Periodic(Vec<Matrix>),
}

/// Finite-state Markov chain of marginal charging cost, exogenous to the scheduler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostChainFile", into = "CostChainFile")]
pub struct CostChain {
    levels: Vec<f64>,
    transitions: Transitions,
}

/// On-disk form of a [`CostChain`]: exactly one of `matrix` / `per_period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostChainFile {
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_period: Option<Vec<Matrix>>,
}

impl TryFrom<CostChainFile> for CostChain {
    type Error = Error;
    fn try_from(f: CostChainFile) -> Result<Self> {
        match (f.matrix, f.per_period) {
            (Some(m), None) => CostChain::new(f.levels, m),
            (None, Some(ms)) => CostChain::periodic(f.levels, ms),
            _ => Err(Error::InvalidInstance(
                "cost chain needs exactly one of `matrix` or `per_period`".into(),
            )),
        }
    }
}

impl From<CostChain> for CostChainFile {
    fn from(c: CostChain) -> Self {
        match c.transitions {
            Transitions::Homogeneous(m) => CostChainFile { levels: c.levels, matrix: Some(m), per_period: None },
            Transitions::Periodic(ms) => CostChainFile { levels: c.levels, matrix: None, per_period: Some(ms) },
        }
    }
}

fn check_stochastic(m: &Matrix, k: usize) -> Result<()> {
    if m.len() != k {
        return Err(Error::InvalidInstance(format!("transition matrix has {} rows, expected {k}", m.len())));
    }
    for (j, row) in m.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidInstance(format!("row {j} has {} entries, expected {k}", row.len())));
        }
        if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInstance(format!("row {j} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInstance(format!("row {j} sums to {s}")));
        }
    }
    Ok(())
}

impl CostChain {
    pub fn new(levels: Vec<f64>, matrix: Matrix) -> Result<Self> {
        Self::check_levels(&levels)?;
        check_stochastic(&matrix, levels.len())?;
        Ok(CostChain { levels, transitions: Transitions::Homogeneous(matrix) })
    }

    pub fn periodic(levels: Vec<f64>, matrices: Vec<Matrix>) -> Result<Self> {
        Self::check_levels(&levels)?;
        if matrices.is_empty() {
            return Err(Error::InvalidInstance("per-period cost chain has no matrices".into()));
        }
        for m in &matrices {
            check_stochastic(m, levels.len())?;
        }
        Ok(CostChain { levels, transitions: Transitions::Periodic(matrices) })
    }

    pub fn constant(cost: f64) -> Self {
        CostChain { levels: vec![cost], transitions: Transitions::Homogeneous(vec![vec![1.0]]) }
    }

    fn check_levels(levels: &[f64]) -> Result<()> {
        if levels.is_empty() {
            return Err(Error::InvalidInstance("cost chain has no levels".into()));
        }
        if levels.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInstance("cost levels must be finite".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> f64 {
        self.levels[j]
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.transitions, Transitions::Homogeneous(_))
    }

    /// Number of distinct matrices (1 for a homogeneous chain).
    pub fn matrix_periods(&self) -> usize {
        match &self.transitions {
            Transitions::Homogeneous(_) => 1,
            Transitions::Periodic(ms) => ms.len(),
        }
    }

    /// Transition probabilities out of cost state `j` during period `period`.
    pub fn row(&self, j: usize, period: usize) -> &[f64] {
        match &self.transitions {
            Transitions::Homogeneous(m) => &m[j],
            Transitions::Periodic(ms) => &ms[period % ms.len()][j],
        }
    }

    pub fn min_level(&self) -> f64 {
        self.levels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_level(&self) -> f64 {
        self.levels.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    /// Distribution of the cost state at `period` once the chain has reached its
    /// (periodic) steady state.
    pub fn stationary(&self, period: usize) -> Vec<f64> {
        let k = self.n_states();
        let cycle = self.matrix_periods();
        // one full cycle starting at `period`
        let mut m = identity(k);
        for step in 0..cycle {
            let p = self.matrix_at(period + step);
            m = matmul(&m, p);
        }
        stationary_of(&m)
    }

    fn matrix_at(&self, period: usize) -> &Matrix {
        match &self.transitions {
            Transitions::Homogeneous(m) => m,
            Transitions::Periodic(ms) => &ms[period % ms.len()],
        }
    }
}

fn identity(k: usize) -> Matrix {
    (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let k = a.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for l in 0..k {
            let ail = a[i][l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..k {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

fn stationary_of(m: &Matrix) -> Vec<f64> {
    let k = m.len();
    // pi (M - I) = 0 with sum(pi) = 1: replace the last equation by normalization.
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(j, i)] = m[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..k {
        a[(k - 1, i)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    if let Some(pi) = a.lu().solve(&rhs) {
        if pi.iter().all(|p| *p > -1e-9 && p.is_finite()) {
            let mut v: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|p| *p /= s);
            return v;
        }
    }
    // Several recurrent classes: fall back to the Cesaro limit from uniform.
    let mut cur = vec![1.0 / k as f64; k];
    let mut avg = vec![0.0; k];
    let rounds = 20_000;
    for _ in 0..rounds {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += cur[i] * m[i][j];
            }
        }
        cur = next;
        avg.iter_mut().zip(&cur).for_each(|(a, c)| *a += c / rounds as f64);
    }
    avg
}

/// Arrival statistics for one period: probability that a vacated charger
/// receives a new EV, and the PMF of the new EV's `(T, B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodArrivals {
    rate: f64,
    types: Vec<(ChargerState, f64)>,
    cdf: Vec<f64>,
}

impl PeriodArrivals {
    pub fn new(rate: f64, types: Vec<(ChargerState, f64)>) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidInstance(format!("arrival rate {rate} outside [0,1]")));
        }
        if types.is_empty() {
            return Err(Error::InvalidInstance("arrival PMF is empty".into()));
        }
        if types.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::InvalidInstance("arrival PMF has negative mass".into()));
        }
        let total: f64 = types.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInstance(format!("arrival PMF sums to {total}")));
        }
        let mut acc = 0.0;
        let cdf = types
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(PeriodArrivals { rate, types, cdf })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn types(&self) -> &[(ChargerState, f64)] {
        &self.types
    }

    /// Inverse-CDF draw of an EV type from a uniform variate in `[0, 1)`.
    pub fn sample_type(&self, u: f64) -> ChargerState {
        let i = self.cdf.partition_point(|c| *c <= u).min(self.types.len() - 1);
        self.types[i].0
    }
}

/// Cyclostationary arrivals, one [`PeriodArrivals`] per period of the cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalModel {
    periods: Vec<PeriodArrivals>,
}

impl ArrivalModel {
    pub fn new(periods: Vec<PeriodArrivals>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::InvalidInstance("arrival model needs at least one period".into()));
        }
        Ok(ArrivalModel { periods })
    }

    /// Same rate and PMF in every one of `n_periods` periods.
    pub fn stationary(rate: f64, types: Vec<(ChargerState, f64)>, n_periods: usize) -> Result<Self> {
        let p = PeriodArrivals::new(rate, types)?;
        Self::new(vec![p; n_periods.max(1)])
    }

    /// Uniform PMF over all `(T, B)` with `1 <= B <= min(T, B̄)`, i.e. every EV is
    /// feasible on its own charger.
    pub fn uniform_feasible_types(max_lead: u32, max_demand: u32) -> Vec<(ChargerState, f64)> {
        let support: Vec<ChargerState> = (1..=max_lead)
            .flat_map(|t| (1..=t.min(max_demand)).map(move |b| ChargerState::new(t, b)))
            .collect();
        let p = 1.0 / support.len() as f64;
        support.into_iter().map(|s| (s, p)).collect()
    }

    /// Uniform PMF over the whole grid `1 <= T <= T̄, 1 <= B <= B̄`.
    pub fn uniform_all_types(max_lead: u32, max_demand: u32) -> Vec<(ChargerState, f64)> {
        let n = (max_lead * max_demand) as f64;
        (1..=max_lead)
            .flat_map(|t| (1..=max_demand).map(move |b| (ChargerState::new(t, b), 1.0 / n)))
            .collect()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn period(&self, period: usize) -> &PeriodArrivals {
        &self.periods[period % self.periods.len()]
    }

    pub fn rate(&self, period: usize) -> f64 {
        self.period(period).rate
    }
}

/// Where an episode (and the bound's initial distribution) starts: an empty
/// facility at `period`, with the cost state fixed or drawn from the periodic
/// steady state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    #[serde(default)]
    pub period: usize,
    #[serde(default)]
    pub cost_state: Option<usize>,
}

/// A complete problem instance.
#[derive(Clone, Debug)]
pub struct Instance {
    /// N, number of regular chargers.
    pub chargers: usize,
    /// M, maximum number of simultaneously active chargers.
    pub limit: usize,
    pub discount: f64,
    pub max_lead: u32,
    pub max_demand: u32,
    pub penalty: PenaltyFunction,
    pub arrivals: ArrivalModel,
    pub cost: CostChain,
    pub initial: InitialCondition,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        if self.limit > self.chargers {
            return Err(Error::InvalidInstance(format!(
                "limit M={} exceeds chargers N={}",
                self.limit, self.chargers
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidInstance(format!("discount {} not in (0,1)", self.discount)));
        }
        if self.max_lead < 1 || self.max_demand < 1 {
            return Err(Error::InvalidInstance("max lead time and max demand must be >= 1".into()));
        }
        if self.penalty.max_demand() != self.max_demand {
            return Err(Error::InvalidInstance(format!(
                "penalty table covers B<={}, instance has B̄={}",
                self.penalty.max_demand(),
                self.max_demand
            )));
        }
        for tau in 0..self.arrivals.n_periods() {
            for (s, _) in self.arrivals.period(tau).types() {
                if s.lead_time < 1 || s.demand < 1 || s.lead_time > self.max_lead || s.demand > self.max_demand {
                    return Err(Error::InvalidInstance(format!(
                        "arrival type ({},{}) outside 1<=T<={}, 1<=B<={}",
                        s.lead_time, s.demand, self.max_lead, self.max_demand
                    )));
                }
            }
        }
        if !self.cost.is_homogeneous() && self.cost.matrix_periods() != self.arrivals.n_periods() {
            return Err(Error::InvalidInstance(format!(
                "cost chain has {} period matrices but the cycle has {} periods",
                self.cost.matrix_periods(),
                self.arrivals.n_periods()
            )));
        }
        if self.initial.period >= self.n_periods() {
            return Err(Error::InvalidInstance("initial period outside the cycle".into()));
        }
        if let Some(j) = self.initial.cost_state {
            if j >= self.cost.n_states() {
                return Err(Error::InvalidInstance("initial cost state out of range".into()));
            }
        }
        Ok(())
    }

    /// N_τ, the number of periods per cycle.
    pub fn n_periods(&self) -> usize {
        self.arrivals.n_periods()
    }

    pub fn n_cost_states(&self) -> usize {
        self.cost.n_states()
    }

    /// Number of single-charger states: `(0,0)` plus every `(T, B)` with `T >= 1`.
    pub fn n_charger_states(&self) -> usize {
        1 + (self.max_lead as usize) * (self.max_demand as usize + 1)
    }

    pub fn charger_index(&self, s: ChargerState) -> usize {
        if s.lead_time == 0 {
            0
        } else {
            1 + (s.lead_time as usize - 1) * (self.max_demand as usize + 1) + s.demand as usize
        }
    }

    /// All single-charger states in index order.
    pub fn charger_states(&self) -> Vec<ChargerState> {
        let mut out = vec![ChargerState::EMPTY];
        for t in 1..=self.max_lead {
            for b in 0..=self.max_demand {
                out.push(ChargerState::new(t, b));
            }
        }
        out
    }

    /// Cost-state distribution at the start of an episode.
    pub fn initial_cost_distribution(&self) -> Vec<f64> {
        match self.initial.cost_state {
            Some(j) => {
                let mut v = vec![0.0; self.n_cost_states()];
                v[j] = 1.0;
                v
            }
            None => self.cost.stationary(self.initial.period),
        }
    }

    /// Upper bound on the magnitude of any single-charger per-slot reward.
    pub fn max_abs_reward(&self) -> f64 {
        1.0 + self.cost.max_abs_level() + self.penalty.value(self.max_demand)
    }
}

/// Per-slot reward of one charger in dollars.
pub fn reward(s: ChargerState, cost: f64, active: bool, penalty: &PenaltyFunction) -> f64 {
    if s.demand == 0 || s.lead_time == 0 {
        return 0.0;
    }
    let a = u32::from(active);
    let charge = (1.0 - cost) * a as f64;
    if s.lead_time == 1 {
        charge - penalty.value(s.demand - a)
    } else {
        charge
    }
}

/// Deterministic part of the charger transition. `arrival` is consulted only
/// when the EV departs (`T <= 1`).
pub fn advance(s: ChargerState, active: bool, arrival: Option<ChargerState>) -> ChargerState {
    if s.lead_time > 1 {
        let served = u32::from(active && s.demand > 0);
        ChargerState::new(s.lead_time - 1, s.demand - served)
    } else {
        arrival.unwrap_or(ChargerState::EMPTY)
    }
}

/// Distribution of the next charger state. Arrivals are drawn with the
/// statistics of the current period.
pub fn successor_distribution(
    s: ChargerState,
    active: bool,
    period: usize,
    arrivals: &ArrivalModel,
) -> Vec<(ChargerState, f64)> {
    if s.lead_time > 1 {
        return vec![(advance(s, active, None), 1.0)];
    }
    let pa = arrivals.period(period);
    let mut out = Vec::with_capacity(pa.types().len() + 1);
    if pa.rate() < 1.0 {
        out.push((ChargerState::EMPTY, 1.0 - pa.rate()));
    }
    if pa.rate() > 0.0 {
        out.extend(pa.types().iter().filter(|(_, q)| *q > 0.0).map(|(x, q)| (*x, pa.rate() * q)));
    }
    out
}

/// Global state of the facility at the start of a slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub period: usize,
    pub cost_state: usize,
    pub chargers: Vec<ChargerState>,
}

impl SystemState {
    pub fn empty(n: usize, period: usize, cost_state: usize) -> Self {
        SystemState { period, cost_state, chargers: vec![ChargerState::EMPTY; n] }
    }
}

/// Which chargers are switched on this slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<bool>);

impl ActionVector {
    pub fn idle(n: usize) -> Self {
        ActionVector(vec![false; n])
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_capacity(&self, limit: usize) -> Result<()> {
        let active = self.count();
        if active > limit {
            return Err(Error::CapacityViolation { active, limit });
        }
        Ok(())
    }
}

/// Undiscounted reward of the whole facility for one slot.
pub fn slot_reward(instance: &Instance, state: &SystemState, action: &ActionVector) -> f64 {
    let c = instance.cost.level(state.cost_state);
    state
        .chargers
        .iter()
        .zip(&action.0)
        .map(|(s, a)| reward(*s, c, *a, &instance.penalty))
        .sum()
}

/// Samples the next system state and returns it with the undiscounted slot reward.
pub fn system_step<R: Rng + ?Sized>(
    instance: &Instance,
    state: &SystemState,
    action: &ActionVector,
    rng: &mut R,
) -> Result<(SystemState, f64)> {
    if action.len() != state.chargers.len() {
        return Err(Error::Precondition(format!(
            "action has {} entries for {} chargers",
            action.len(),
            state.chargers.len()
        )));
    }
    action.check_capacity(instance.limit)?;
    let r = slot_reward(instance, state, action);
    let pa = instance.arrivals.period(state.period);
    let chargers = state
        .chargers
        .iter()
        .zip(&action.0)
        .map(|(s, a)| {
            let arrival = if s.lead_time <= 1 && rng.gen::<f64>() < pa.rate() {
                Some(pa.sample_type(rng.gen::<f64>()))
            } else {
                None
            };
            advance(*s, *a, arrival)
        })
        .collect();
    let cost_state = sample_index(instance.cost.row(state.cost_state, state.period), rng.gen::<f64>());
    let next = SystemState { period: (state.period + 1) % instance.n_periods(), cost_state, chargers };
    Ok((next, r))
}

/// Inverse-CDF draw from a discrete distribution.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: land on the last state with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `sum_t beta^t r_t`.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += weight * r;
        weight *= discount;
    }
    total
}
