//! Upper bound from relaxing the hard activation limit to a discounted
//! average budget of `M/N` per charger.
//!
//! The relaxed problem decouples into identical single-charger constrained
//! MDPs. It is solved through its Lagrangian dual: for a price `λ` on each
//! activation the unconstrained single-charger MDP is solved exactly by policy
//! iteration, and the dual is minimized over `λ`. An occupancy-measure linear
//! program gives an independent second solution.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::subsidy_bracket;
use crate::model::{reward, successor_distribution, ChargerState, Instance};

const IMPROVE_TOL: f64 = 1e-12;
const MAX_POLICY_ITERATIONS: usize = 10_000;
const MAX_DUAL_STEPS: usize = 500;

/// Layout of the single-charger extended state space `(charger, cost, period)`.
#[derive(Clone, Debug)]
struct Layout {
    states: Vec<ChargerState>,
    k: usize,
    periods: usize,
}

impl Layout {
    fn new(instance: &Instance) -> Self {
        Layout { states: instance.charger_states(), k: instance.n_cost_states(), periods: instance.n_periods() }
    }

    fn len(&self) -> usize {
        self.states.len() * self.k * self.periods
    }

    fn ext(&self, ci: usize, j: usize, tau: usize) -> usize {
        (ci * self.k + j) * self.periods + tau
    }

    /// Index of the regeneration value for cost state `j` at period `tau`.
    fn regen(&self, j: usize, tau: usize) -> usize {
        j * self.periods + tau
    }
}

/// Distribution over single-charger extended states.
pub fn initial_distribution(instance: &Instance) -> Vec<f64> {
    let layout = Layout::new(instance);
    let mut mu = vec![0.0; layout.len()];
    for (j, p) in instance.initial_cost_distribution().into_iter().enumerate() {
        mu[layout.ext(0, j, instance.initial.period)] = p;
    }
    mu
}

/// Exact evaluation of a stationary deterministic single-charger policy:
/// discounted reward and discounted activation count at every extended state.
#[derive(Clone, Debug)]
pub struct PolicyValues {
    pub reward: Vec<f64>,
    pub activations: Vec<f64>,
}

/// Evaluates `policy` (one action per extended state) by exploiting that every
/// departure regenerates through the arrival draw: values are affine in the
/// `K·N_τ` regeneration values, which are found by one small linear solve.
pub fn evaluate_policy(instance: &Instance, policy: &[bool]) -> Result<PolicyValues> {
    let layout = Layout::new(instance);
    let n_regen = layout.k * layout.periods;
    let beta = instance.discount;
    let cost = &instance.cost;
    let n = layout.len();
    let mut c_r = vec![0.0; n];
    let mut c_a = vec![0.0; n];
    let mut coef = vec![0.0; n * n_regen];
    for (ci, s) in layout.states.iter().enumerate() {
        for j in 0..layout.k {
            for tau in 0..layout.periods {
                let e = layout.ext(ci, j, tau);
                let a = policy[e];
                c_r[e] = reward(*s, cost.level(j), a, &instance.penalty);
                c_a[e] = f64::from(u8::from(a));
                let next_tau = (tau + 1) % layout.periods;
                let row = cost.row(j, tau);
                if s.lead_time <= 1 {
                    for (jn, p) in row.iter().enumerate() {
                        coef[e * n_regen + layout.regen(jn, next_tau)] += beta * p;
                    }
                } else {
                    let served = u32::from(a && s.demand > 0);
                    let nci = instance.charger_index(ChargerState::new(s.lead_time - 1, s.demand - served));
                    let (mut add_r, mut add_a) = (0.0, 0.0);
                    let mut acc = vec![0.0; n_regen];
                    for (jn, p) in row.iter().enumerate() {
                        if *p == 0.0 {
                            continue;
                        }
                        let f = layout.ext(nci, jn, next_tau);
                        add_r += p * c_r[f];
                        add_a += p * c_a[f];
                        for (x, y) in acc.iter_mut().zip(&coef[f * n_regen..(f + 1) * n_regen]) {
                            *x += p * y;
                        }
                    }
                    c_r[e] += beta * add_r;
                    c_a[e] += beta * add_a;
                    for (x, y) in coef[e * n_regen..(e + 1) * n_regen].iter_mut().zip(&acc) {
                        *x = beta * y;
                    }
                }
            }
        }
    }
    // regeneration value at (j, tau) averages over the arrival drawn in tau - 1
    let mut lhs = DMatrix::<f64>::identity(n_regen, n_regen);
    let mut rhs = DMatrix::<f64>::zeros(n_regen, 2);
    for j in 0..layout.k {
        for tau in 0..layout.periods {
            let u = layout.regen(j, tau);
            let drawn = (tau + layout.periods - 1) % layout.periods;
            for (s, p) in successor_distribution(ChargerState::EMPTY, false, drawn, &instance.arrivals) {
                let e = layout.ext(instance.charger_index(s), j, tau);
                rhs[(u, 0)] += p * c_r[e];
                rhs[(u, 1)] += p * c_a[e];
                for v in 0..n_regen {
                    lhs[(u, v)] -= p * coef[e * n_regen + v];
                }
            }
        }
    }
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("singular regeneration system".into()))?;
    let ur = DVector::from_iterator(n_regen, sol.column(0).iter().copied());
    let ua = DVector::from_iterator(n_regen, sol.column(1).iter().copied());
    let mut out = PolicyValues { reward: c_r, activations: c_a };
    for e in 0..n {
        let row = &coef[e * n_regen..(e + 1) * n_regen];
        out.reward[e] += row.iter().zip(ur.iter()).map(|(x, y)| x * y).sum::<f64>();
        out.activations[e] += row.iter().zip(ua.iter()).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(out)
}

/// Expected next-slot value of `values` from extended state `(ci, j, tau)`
/// under action `active`.
fn continuation(instance: &Instance, layout: &Layout, values: &[f64], ci: usize, j: usize, tau: usize, active: bool) -> f64 {
    let s = layout.states[ci];
    let next_tau = (tau + 1) % layout.periods;
    let row = instance.cost.row(j, tau);
    let mut total = 0.0;
    for (ns, q) in successor_distribution(s, active, tau, &instance.arrivals) {
        let nci = instance.charger_index(ns);
        for (jn, p) in row.iter().enumerate() {
            if *p > 0.0 {
                total += q * p * values[layout.ext(nci, jn, next_tau)];
            }
        }
    }
    total
}

/// Optimal unconstrained single-charger solution at activation price `λ`.
#[derive(Clone, Debug)]
pub struct LagrangianPoint {
    pub lambda: f64,
    pub policy: Vec<bool>,
    /// Discounted reward excluding the activation charge, at μ0.
    pub reward: f64,
    /// Discounted number of activations, at μ0.
    pub activations: f64,
    pub iterations: usize,
}

impl LagrangianPoint {
    /// Value of the penalized problem `reward − λ·activations`.
    pub fn value(&self) -> f64 {
        self.reward - self.lambda * self.activations
    }

    /// Dual function value for the per-charger budget `budget` (discounted).
    pub fn dual(&self, budget: f64) -> f64 {
        self.value() + self.lambda * budget
    }

    /// Value of this point's policy line at another price.
    fn line(&self, lambda: f64, budget: f64) -> f64 {
        self.reward - lambda * (self.activations - budget)
    }
}

/// Solves the single-charger MDP with reward `R − λ·a` by policy iteration,
/// starting from `warm` when given.
pub fn solve_lagrangian(instance: &Instance, lambda: f64, warm: Option<&[bool]>) -> Result<LagrangianPoint> {
    let layout = Layout::new(instance);
    let n = layout.len();
    let mu = initial_distribution(instance);
    let mut policy = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![false; n]);
    for it in 1..=MAX_POLICY_ITERATIONS {
        let vals = evaluate_policy(instance, &policy)?;
        let v: Vec<f64> = vals.reward.iter().zip(&vals.activations).map(|(r, a)| r - lambda * a).collect();
        let mut changed = false;
        for (ci, s) in layout.states.iter().enumerate() {
            for j in 0..layout.k {
                for tau in 0..layout.periods {
                    let e = layout.ext(ci, j, tau);
                    let c = instance.cost.level(j);
                    let q = |a: bool| {
                        reward(*s, c, a, &instance.penalty) - lambda * f64::from(u8::from(a))
                            + instance.discount * continuation(instance, &layout, &v, ci, j, tau, a)
                    };
                    let (qp, qa) = (q(false), q(true));
                    let current = if policy[e] { qa } else { qp };
                    let best = qa > qp;
                    let best_q = qa.max(qp);
                    if best != policy[e] && best_q > current + IMPROVE_TOL * (1.0 + current.abs()) {
                        policy[e] = best;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            let dot = |x: &[f64]| x.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>();
            return Ok(LagrangianPoint {
                lambda,
                reward: dot(&vals.reward),
                activations: dot(&vals.activations),
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::Precondition("policy iteration did not converge".into()))
}

/// Relaxed upper bound on the facility's expected discounted reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// N times the per-charger value.
    pub value: f64,
    pub per_charger: f64,
    /// Minimizing activation price.
    pub lambda: f64,
    /// Discounted activation frequency `(1−β)·E Σ β^t a_t` of the optimal
    /// relaxed solution.
    pub activation_frequency: f64,
    /// Per-charger budget M/N.
    pub budget: f64,
    pub dual_evaluations: usize,
}

/// Minimizes the dual over `λ ≥ 0`. The dual is the upper envelope of one line
/// per deterministic policy, so intersecting the lines of the bracketing
/// points converges in finitely many steps.
pub fn solve_bound(instance: &Instance) -> Result<BoundResult> {
    instance.validate()?;
    let beta = instance.discount;
    let ratio = instance.limit as f64 / instance.chargers as f64;
    let budget = ratio / (1.0 - beta);
    let scale = instance.max_abs_reward() / (1.0 - beta);
    let finish = |p: &LagrangianPoint, evals: usize, per_charger: f64| BoundResult {
        value: instance.chargers as f64 * per_charger,
        per_charger,
        lambda: p.lambda,
        // with a positive price the optimal mixture spends exactly the budget
        activation_frequency: if p.lambda > 0.0 { ratio } else { (1.0 - beta) * p.activations },
        budget: ratio,
        dual_evaluations: evals,
    };
    let mut lo = solve_lagrangian(instance, 0.0, None)?;
    let mut evals = 1;
    if lo.activations <= budget {
        let v = lo.dual(budget);
        return Ok(finish(&lo, evals, v));
    }
    let mut hi = solve_lagrangian(instance, subsidy_bracket(instance), Some(&lo.policy))?;
    evals += 1;
    if hi.activations > budget + 1e-9 * budget.max(1.0) {
        return Err(Error::Precondition("activation price bracket too small".into()));
    }
    for _ in 0..MAX_DUAL_STEPS {
        let slope_gap = lo.activations - hi.activations;
        let mut lambda = (hi.reward - lo.reward) / -slope_gap;
        if !(lambda > lo.lambda && lambda < hi.lambda) {
            lambda = 0.5 * (lo.lambda + hi.lambda);
        }
        let p = solve_lagrangian(instance, lambda, Some(&lo.policy))?;
        evals += 1;
        let envelope = lo.line(lambda, budget).max(hi.line(lambda, budget));
        let d = p.dual(budget);
        if d <= envelope + 1e-10 * scale || (p.activations - budget).abs() <= 1e-12 * budget.max(1.0) {
            return Ok(finish(&p, evals, d.min(envelope)));
        }
        if p.activations > budget {
            lo = p;
        } else {
            hi = p;
        }
    }
    Err(Error::Precondition("dual minimization did not converge".into()))
}

/// Occupancy-measure linear program of the single-charger constrained MDP.
#[derive(Clone, Debug)]
pub struct OccupancyLP {
    /// Variable `2e + a` is the discounted occupation of extended state `e`
    /// under action `a`.
    pub n_states: usize,
    /// Objective coefficient of every variable (maximized).
    pub objective: Vec<f64>,
    /// Balance rows: one per extended state, as sparse `(variable, coefficient)`
    /// terms with the right-hand side.
    pub balance: Vec<(Vec<(usize, f64)>, f64)>,
    /// Right-hand side of `Σ_e x(e, 1) ≤ M/N`.
    pub budget: f64,
}

impl OccupancyLP {
    pub fn n_vars(&self) -> usize {
        2 * self.n_states
    }

    /// Solves with the bundled simplex solver; returns the optimal value and
    /// the occupation measure.
    pub fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self.objective.iter().map(|c| problem.add_var(*c, (0.0, f64::INFINITY))).collect();
        for (terms, rhs) in &self.balance {
            let expr: Vec<_> = terms.iter().map(|(v, c)| (vars[*v], *c)).collect();
            problem.add_constraint(expr.as_slice(), ComparisonOp::Eq, *rhs);
        }
        let active: Vec<_> = (0..self.n_states).map(|e| (vars[2 * e + 1], 1.0)).collect();
        problem.add_constraint(active.as_slice(), ComparisonOp::Le, self.budget);
        let sol = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
        let x = vars.iter().map(|v| *sol.var_value(*v)).collect();
        Ok((sol.objective(), x))
    }
}

pub fn build_occupancy_lp(instance: &Instance, initial: &[f64]) -> Result<OccupancyLP> {
    let layout = Layout::new(instance);
    let n = layout.len();
    if initial.len() != n {
        return Err(Error::Precondition(format!("initial distribution has {} entries, expected {n}", initial.len())));
    }
    let mass: f64 = initial.iter().sum();
    if (mass - 1.0).abs() > 1e-9 || initial.iter().any(|p| *p < 0.0) {
        return Err(Error::Precondition(format!("initial distribution sums to {mass}")));
    }
    let beta = instance.discount;
    let mut objective = vec![0.0; 2 * n];
    let mut balance: Vec<(Vec<(usize, f64)>, f64)> = (0..n)
        .map(|e| (vec![(2 * e, 1.0), (2 * e + 1, 1.0)], (1.0 - beta) * initial[e]))
        .collect();
    for (ci, s) in layout.states.iter().enumerate() {
        for j in 0..layout.k {
            for tau in 0..layout.periods {
                let e = layout.ext(ci, j, tau);
                let next_tau = (tau + 1) % layout.periods;
                for a in [false, true] {
                    let var = 2 * e + usize::from(a);
                    objective[var] = reward(*s, instance.cost.level(j), a, &instance.penalty) / (1.0 - beta);
                    for (ns, q) in successor_distribution(*s, a, tau, &instance.arrivals) {
                        let nci = instance.charger_index(ns);
                        for (jn, p) in instance.cost.row(j, tau).iter().enumerate() {
                            if *p > 0.0 {
                                balance[layout.ext(nci, jn, next_tau)].0.push((var, -beta * q * p));
                            }
                        }
                    }
                }
            }
        }
    }
    for (terms, _) in balance.iter_mut() {
        terms.sort_by_key(|t| t.0);
        terms.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
    }
    Ok(OccupancyLP {
        n_states: n,
        objective,
        balance,
        budget: instance.limit as f64 / instance.chargers as f64,
    })
}

/// Bound computed through the occupancy LP instead of the dual.
pub fn solve_bound_lp(instance: &Instance) -> Result<f64> {
    instance.validate()?;
    let lp = build_occupancy_lp(instance, &initial_distribution(instance))?;
    let (value, _) = lp.solve()?;
    Ok(instance.chargers as f64 * value)
}
