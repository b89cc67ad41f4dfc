//! JSON run configuration. Unknown keys are rejected; omitted fields take
//! the defaults of the constant-cost experiments (N=10, ρ=0.7, T̄=12, B̄=9,
//! β=0.999, c=0.5). The penalty has no default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costfit::{fit_cost_chain, FitOptions, PriceTrace};
use crate::error::{Error, Result};
use crate::model::{
    ArrivalModel, ChargerState, CostChain, CostChainFile, InitialCondition, Instance, PenaltyFunction, PeriodArrivals,
};
use crate::policies::PolicyKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyConfig {
    /// `F(B) = κ·B²`.
    Quadratic(f64),
    /// `F(0..=B̄)`.
    Table(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Constant(f64),
    PerPeriod(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalType {
    #[serde(rename = "T")]
    pub lead_time: u32,
    #[serde(rename = "B")]
    pub demand: u32,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeDistribution {
    /// Uniform over `1 ≤ B ≤ min(T, B̄)`.
    UniformFeasible,
    /// Uniform over every `1 ≤ T ≤ T̄`, `1 ≤ B ≤ B̄`.
    UniformAll,
    #[serde(untagged)]
    Explicit(Vec<ArrivalType>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    #[serde(default = "default_rate")]
    pub rate: Rate,
    #[serde(default = "default_types")]
    pub types: TypeDistribution,
}

fn default_rate() -> Rate {
    Rate::Constant(0.7)
}

fn default_types() -> TypeDistribution {
    TypeDistribution::UniformFeasible
}

impl Default for ArrivalConfig {
    fn default() -> Self {
        ArrivalConfig { rate: default_rate(), types: default_types() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Price trace CSV, relative to the config file.
    pub trace: PathBuf,
    #[serde(flatten)]
    pub options: FitOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    Constant(f64),
    Chain(CostChainFile),
    /// CostChain JSON file, relative to the config file.
    File(PathBuf),
    Fit(FitConfig),
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::Constant(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    #[serde(default = "default_chargers")]
    pub chargers: usize,
    /// M; defaults to half the chargers, rounded down.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_max_lead")]
    pub max_lead: u32,
    #[serde(default = "default_max_demand")]
    pub max_demand: u32,
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub arrivals: ArrivalConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub initial: InitialCondition,
}

fn default_chargers() -> usize {
    10
}
fn default_discount() -> f64 {
    0.999
}
fn default_max_lead() -> u32 {
    12
}
fn default_max_demand() -> u32 {
    9
}

impl InstanceConfig {
    /// Constant-cost defaults with `F(B) = 0.2·B²`.
    pub fn with_quadratic_penalty(kappa: f64) -> Self {
        InstanceConfig {
            chargers: default_chargers(),
            limit: None,
            discount: default_discount(),
            max_lead: default_max_lead(),
            max_demand: default_max_demand(),
            penalty: PenaltyConfig::Quadratic(kappa),
            arrivals: ArrivalConfig::default(),
            cost: CostConfig::default(),
            initial: InitialCondition::default(),
        }
    }

    /// Builds and validates the instance; relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Instance> {
        let penalty = match &self.penalty {
            PenaltyConfig::Quadratic(k) => PenaltyFunction::quadratic(*k, self.max_demand)?,
            PenaltyConfig::Table(t) => PenaltyFunction::new(t.clone())?,
        };
        let cost = match &self.cost {
            CostConfig::Constant(c) => CostChain::constant(*c),
            CostConfig::Chain(file) => CostChain::try_from(file.clone())?,
            CostConfig::File(path) => {
                let text = std::fs::read_to_string(base.join(path))?;
                let file: CostChainFile = serde_json::from_str(&text)?;
                CostChain::try_from(file)?
            }
            CostConfig::Fit(fit) => {
                let trace = PriceTrace::read_csv(std::fs::File::open(base.join(&fit.trace))?)?;
                fit_cost_chain(&trace, &fit.options)?.chain
            }
        };
        let types = match &self.arrivals.types {
            TypeDistribution::UniformFeasible => ArrivalModel::uniform_feasible_types(self.max_lead, self.max_demand),
            TypeDistribution::UniformAll => ArrivalModel::uniform_all_types(self.max_lead, self.max_demand),
            TypeDistribution::Explicit(list) => {
                list.iter().map(|t| (ChargerState::new(t.lead_time, t.demand), t.p)).collect()
            }
        };
        let chain_periods = if cost.is_homogeneous() { 1 } else { cost.matrix_periods() };
        let arrivals = match &self.arrivals.rate {
            Rate::Constant(r) => ArrivalModel::stationary(*r, types, chain_periods)?,
            Rate::PerPeriod(rates) => ArrivalModel::new(
                rates.iter().map(|r| PeriodArrivals::new(*r, types.clone())).collect::<Result<_>>()?,
            )?,
        };
        let instance = Instance {
            chargers: self.chargers,
            limit: self.limit.unwrap_or(self.chargers / 2),
            discount: self.discount,
            max_lead: self.max_lead,
            max_demand: self.max_demand,
            penalty,
            arrivals,
            cost,
            initial: self.initial,
        };
        instance.validate()?;
        Ok(instance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    /// Seeds `0..n`.
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Cross-check the index table against bisection on value iteration.
    #[serde(default)]
    pub verify: bool,
    #[serde(default = "default_oracle_tol")]
    pub tol: f64,
}

fn default_oracle_tol() -> f64 {
    1e-6
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { verify: false, tol: default_oracle_tol() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceConfig,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    /// Episode length in slots; derived from `truncation` when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Policy that paired differences are reported against.
    #[serde(default)]
    pub baseline: Option<PolicyKind>,
    /// Values of M to sweep for a reward-per-charger curve.
    #[serde(default)]
    pub sweep_limits: Option<Vec<usize>>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Whittle, PolicyKind::WhittleLllp, PolicyKind::Edf, PolicyKind::Llf]
}

fn default_seeds() -> Seeds {
    Seeds::Count(20)
}

fn default_truncation() -> f64 {
    crate::sim::DEFAULT_TRUNCATION
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("no policies configured".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::Config("truncation must be positive".into()));
        }
        if let Some(b) = self.baseline {
            if !self.policies.contains(&b) {
                return Err(Error::Config(format!("baseline {b} is not among the policies")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self, instance: &Instance) -> usize {
        self.horizon.unwrap_or_else(|| crate::sim::horizon_for_tolerance(instance.discount, self.truncation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"instance": {"penalty": {"quadratic": 0.2}}}"#).unwrap();
        let i = cfg.instance.build(Path::new(".")).unwrap();
        assert_eq!((i.chargers, i.limit, i.max_lead, i.max_demand), (10, 5, 12, 9));
        assert_eq!(i.discount, 0.999);
        assert_eq!(i.cost.levels(), &[0.5]);
        assert_eq!(i.arrivals.rate(0), 0.7);
        assert_eq!(i.arrivals.period(0).types().len(), 72);
        assert_eq!(cfg.seeds.to_vec().len(), 20);
    }

    #[test]
    fn penalty_is_required() {
        let e = RunConfig::from_json(r#"{"instance": {}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(m) if m.contains("penalty")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"instance": {"penalty": {"quadratic": 0.2}, "chargerz": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"instance": {"penalty": {"quadratic": 0.2}}, "extra": 1}"#).is_err());
    }

    #[test]
    fn explicit_types_and_chain() {
        let text = r#"{
            "instance": {
                "chargers": 2, "limit": 1, "discount": 0.9, "max_lead": 3, "max_demand": 2,
                "penalty": {"table": [0, 0.2, 0.8]},
                "arrivals": {"rate": [0.5, 0.6], "types": [{"T": 2, "B": 1, "p": 0.5}, {"T": 3, "B": 2, "p": 0.5}]},
                "cost": {"chain": {"levels": [0.2, 0.8], "matrix": [[0.9, 0.1], [0.5, 0.5]]}}
            },
            "policies": ["edf", "whittle+lllp"],
            "seeds": [4, 9]
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let i = cfg.instance.build(Path::new(".")).unwrap();
        assert_eq!(i.n_periods(), 2);
        assert_eq!(i.arrivals.rate(1), 0.6);
        assert_eq!(cfg.policies, vec![PolicyKind::Edf, PolicyKind::WhittleLllp]);
        assert_eq!(cfg.seeds.to_vec(), vec![4, 9]);
    }

    #[test]
    fn unknown_policy_rejected() {
        let e = RunConfig::from_json(r#"{"instance": {"penalty": {"quadratic": 0.2}}, "policies": ["fifo"]}"#);
        assert!(e.is_err());
    }
}
