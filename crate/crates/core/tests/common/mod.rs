#![allow(dead_code)]

use std::path::{Path, PathBuf};

use evwhittle::config::{CostConfig, FitConfig, InstanceConfig};
use evwhittle::costfit::FitOptions;
use evwhittle::model::{ArrivalModel, ChargerState, CostChain, InitialCondition, Instance, PenaltyFunction, PeriodArrivals};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Constant cost 0.5, ρ=0.7, β=0.999, F=0.2B², T̄=12, B̄=9.
pub fn constant_config(chargers: usize, limit: usize) -> InstanceConfig {
    let mut cfg = InstanceConfig::with_quadratic_penalty(0.2);
    cfg.chargers = chargers;
    cfg.limit = Some(limit);
    cfg
}

/// As [`constant_config`] with the 5-state chain fitted per hour of day.
pub fn dynamic_config(chargers: usize, limit: usize) -> InstanceConfig {
    let mut cfg = constant_config(chargers, limit);
    let mut options = FitOptions::new(5);
    options.per_period = Some(24);
    cfg.cost = CostConfig::Fit(FitConfig { trace: fixture("caiso_like_30d.csv"), options });
    cfg
}

pub fn build(cfg: &InstanceConfig) -> Instance {
    cfg.build(Path::new(env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn random_stochastic_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Small random instance with a Markov cost, possibly periodic, and random
/// convex penalty.
pub fn random_instance<R: Rng>(rng: &mut R, chargers: usize, limit: usize) -> Instance {
    let max_lead = rng.gen_range(2..=5);
    let max_demand = rng.gen_range(2..=5);
    let k = rng.gen_range(1..=3);
    let periods = rng.gen_range(1..=2);
    let discount = rng.gen_range(0.7..0.95);
    let mut levels: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    levels.sort_by(f64::total_cmp);
    let matrices: Vec<Vec<Vec<f64>>> =
        (0..periods).map(|_| (0..k).map(|_| random_stochastic_row(rng, k)).collect()).collect();
    let cost = CostChain::periodic(levels, matrices).unwrap();
    // convex increasing penalty with F(0) = 0
    let mut table = vec![0.0];
    let mut step = rng.gen_range(0.1..0.6);
    for _ in 0..max_demand {
        table.push(table.last().unwrap() + step);
        step += rng.gen_range(0.0..0.6);
    }
    let penalty = PenaltyFunction::new(table).unwrap();
    let arrivals = (0..periods)
        .map(|_| {
            let types = ArrivalModel::uniform_feasible_types(max_lead, max_demand);
            let w = random_stochastic_row(rng, types.len());
            let types = types.into_iter().zip(w).map(|((s, _), p)| (s, p)).collect();
            PeriodArrivals::new(rng.gen_range(0.2..0.95), types).unwrap()
        })
        .collect();
    Instance {
        chargers,
        limit,
        discount,
        max_lead,
        max_demand,
        penalty,
        arrivals: ArrivalModel::new(arrivals).unwrap(),
        cost,
        initial: InitialCondition::default(),
    }
}

/// Two chargers, T̄=2, B̄=1, two cost states: small enough for the joint DP.
pub fn toy_instance(limit: usize, discount: f64) -> Instance {
    let types = vec![
        (ChargerState { lead_time: 1, demand: 1 }, 0.5),
        (ChargerState { lead_time: 2, demand: 1 }, 0.5),
    ];
    Instance {
        chargers: 2,
        limit,
        discount,
        max_lead: 2,
        max_demand: 1,
        penalty: PenaltyFunction::quadratic(0.6, 1).unwrap(),
        arrivals: ArrivalModel::stationary(0.8, types, 1).unwrap(),
        cost: CostChain::new(vec![0.2, 0.9], vec![vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap(),
        initial: InitialCondition::default(),
    }
}
