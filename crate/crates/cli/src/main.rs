use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use evwhittle::bound::{solve_bound, solve_bound_lp};
use evwhittle::config::{RunConfig, Seeds};
use evwhittle::costfit::{fit_cost_chain, FitOptions, PriceTrace};
use evwhittle::index::{closed_form_index, compute_index_table, index_table_by_bisection, IndexTable};
use evwhittle::model::{CostChainFile, Instance};
use evwhittle::policies::{build_policy, Policy, PolicyKind};
use evwhittle::sim::monte_carlo;

const DUAL_LP_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "evwhittle", version, about = "Whittle-index scheduling for EV charging facilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the index table and write it as CSV and JSON.
    Index {
        #[command(flatten)]
        common: Common,
        /// Check every index against bisection on value iteration.
        #[arg(long)]
        verify_oracle: bool,
    },
    /// Run the configured policies over the seeds and write reports.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, overriding the config.
        #[arg(long)]
        seeds: Option<u64>,
        /// Report paired differences against this policy.
        #[arg(long)]
        paired_baseline: Option<String>,
    },
    /// Compute the relaxed upper bound.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Also solve the occupancy LP and require agreement.
        #[arg(long)]
        verify_oracle: bool,
    },
    /// Fit a Markov cost chain to a `timestamp,price` CSV.
    Fitcost {
        #[arg(long)]
        trace: PathBuf,
        /// Number of cost states.
        #[arg(long, default_value_t = 5)]
        states: usize,
        /// Slot length in seconds.
        #[arg(long, default_value_t = 3600)]
        slot: i64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Retail price in trace units; twice the mean price when omitted.
        #[arg(long)]
        retail: Option<f64>,
        /// Estimate one transition matrix per period of this cycle length.
        #[arg(long)]
        per_period: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Verify(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<evwhittle::Error> for Failure {
    fn from(e: evwhittle::Error) -> Self {
        Failure::Other(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

struct Loaded {
    config: RunConfig,
    instance: Instance,
    out: PathBuf,
}

fn load(common: &Common) -> std::result::Result<Loaded, Failure> {
    let config = RunConfig::load(&common.config).map_err(|e| Failure::Config(e.into()))?;
    let base = common.config.parent().unwrap_or(Path::new("."));
    let instance = config
        .instance
        .build(base)
        .map_err(|e| Failure::Config(anyhow!(e).context("invalid instance")))?;
    let out = common.out.clone().or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok(Loaded { config, instance, out })
}

fn write(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn print_stdout(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_table(table: &IndexTable, out: &Path) -> anyhow::Result<()> {
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write(&out.join("index.csv"), &csv)?;
    write(&out.join("index.json"), table.to_json()?.as_bytes())
}

fn cmd_index(common: &Common, verify: bool) -> Outcome {
    let Loaded { config, instance, out } = load(common)?;
    let start = Instant::now();
    let table = compute_index_table(&instance)?;
    eprintln!(
        "index table: T<={} B<={} cost states {} periods {} ({} entries) in {:.3}s",
        instance.max_lead,
        instance.max_demand,
        instance.n_cost_states(),
        instance.n_periods(),
        table.records().len(),
        start.elapsed().as_secs_f64()
    );
    write_table(&table, &out)?;
    if instance.n_cost_states() == 1 {
        let c = instance.cost.level(0);
        let err = table
            .records()
            .iter()
            .map(|r| {
                let cf = closed_form_index(r.lead_time, r.demand, c, instance.discount, &instance.penalty);
                (r.index - cf).abs()
            })
            .fold(0.0, f64::max);
        eprintln!("max deviation from closed form: {err:.3e}");
    }
    if verify || config.oracle.verify {
        let start = Instant::now();
        let oracle = index_table_by_bisection(&instance, config.oracle.tol * 1e-2)?;
        let err = table
            .records()
            .iter()
            .zip(oracle.records())
            .map(|(a, b)| (a.index - b.index).abs())
            .fold(0.0, f64::max);
        eprintln!("oracle check: max deviation {err:.3e} in {:.3}s", start.elapsed().as_secs_f64());
        if err > config.oracle.tol {
            return Err(Failure::Verify(format!("index table deviates from oracle by {err:.3e}")));
        }
    }
    Ok(())
}

fn build_policies(kinds: &[PolicyKind], instance: &Instance) -> anyhow::Result<Vec<Box<dyn Policy>>> {
    let table = if kinds.iter().any(PolicyKind::needs_index) {
        Some(Arc::new(compute_index_table(instance)?))
    } else {
        None
    };
    kinds
        .iter()
        .map(|k| build_policy(*k, instance, table.clone()).map_err(Into::into))
        .collect()
}

fn cmd_simulate(common: &Common, seeds: Option<u64>, baseline: Option<&str>) -> Outcome {
    let Loaded { mut config, instance, out } = load(common)?;
    if let Some(n) = seeds {
        config.seeds = Seeds::Count(n);
    }
    let baseline = match baseline {
        Some(b) => {
            let kind: PolicyKind = b.parse().map_err(|e: evwhittle::Error| Failure::Config(e.into()))?;
            if !config.policies.contains(&kind) {
                config.policies.push(kind);
            }
            Some(kind)
        }
        None => config.baseline,
    };
    let seeds = config.seeds.to_vec();
    let horizon = config.horizon(&instance);
    let limits = config.sweep_limits.clone().unwrap_or_else(|| vec![instance.limit]);
    let mut curve = String::from("policy,limit,limit_ratio,reward_per_charger,ci_half_width_per_charger\n");
    let n = instance.chargers as f64;
    for (k, &limit) in limits.iter().enumerate() {
        let mut inst = instance.clone();
        inst.limit = limit;
        inst.validate().map_err(|e| Failure::Config(e.into()))?;
        let start = Instant::now();
        let policies = build_policies(&config.policies, &inst)?;
        let report = monte_carlo(&inst, &policies, &seeds, horizon, baseline.map(|b| b.as_str()))?;
        let bound = solve_bound(&inst)?;
        eprintln!(
            "M={limit}: {} policies x {} seeds x {horizon} slots in {:.2}s",
            policies.len(),
            seeds.len(),
            start.elapsed().as_secs_f64()
        );
        for p in &report.policies {
            eprintln!("  {:14} {:12.4} ± {:.4}", p.policy, p.reward.mean, p.reward.ci_half_width);
            curve.push_str(&format!(
                "{},{limit},{},{},{}\n",
                p.policy,
                limit as f64 / n,
                p.reward_per_charger,
                p.reward.ci_half_width / n
            ));
        }
        for d in &report.paired {
            eprintln!("  {} - {}: {:.4} ± {:.4}", d.policy, d.baseline, d.difference.mean, d.difference.ci_half_width);
        }
        eprintln!("  {:14} {:12.4}", "bound", bound.value);
        curve.push_str(&format!("bound,{limit},{},{},0\n", limit as f64 / n, bound.per_charger));
        let suffix = if limits.len() > 1 { format!("_m{limit}") } else { String::new() };
        let mut csv = Vec::new();
        report.write_episodes_csv(&mut csv)?;
        write(&out.join(format!("episodes{suffix}.csv")), &csv)?;
        let json = serde_json::json!({ "limit": limit, "bound": bound, "report": report });
        write(&out.join(format!("report{suffix}.json")), serde_json::to_string_pretty(&json).map_err(anyhow::Error::from)?.as_bytes())?;
        if k + 1 == limits.len() {
            write(&out.join("curve.csv"), curve.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_bound(common: &Common, verify: bool) -> Outcome {
    let Loaded { config, instance, out } = load(common)?;
    let start = Instant::now();
    let bound = solve_bound(&instance)?;
    eprintln!("bound {:.6} (lambda {:.6}) in {:.3}s", bound.value, bound.lambda, start.elapsed().as_secs_f64());
    let json = serde_json::to_string_pretty(&bound).map_err(anyhow::Error::from)?;
    write(&out.join("bound.json"), json.as_bytes())?;
    print_stdout(&json)?;
    if verify || config.oracle.verify {
        let lp = solve_bound_lp(&instance)?;
        let gap = (lp - bound.value).abs();
        eprintln!("occupancy LP {lp:.6}, gap {gap:.3e}");
        if gap > DUAL_LP_TOL {
            return Err(Failure::Verify(format!("dual and LP bounds differ by {gap:.3e}")));
        }
    }
    Ok(())
}

fn cmd_fitcost(trace: &Path, opts: FitOptions, out: Option<&Path>) -> Outcome {
    let file = fs::File::open(trace).with_context(|| format!("cannot open {}", trace.display()))?;
    let trace = PriceTrace::read_csv(file).map_err(|e| Failure::Config(e.into()))?;
    let fitted = fit_cost_chain(&trace, &opts).map_err(|e| Failure::Config(e.into()))?;
    eprintln!(
        "{} slots, retail {:.4}, levels {:?}",
        fitted.states.len(),
        fitted.retail,
        fitted.chain.levels()
    );
    let json = serde_json::to_string_pretty(&CostChainFile::from(fitted.chain)).map_err(anyhow::Error::from)?;
    match out {
        Some(path) => write(path, json.as_bytes())?,
        None => print_stdout(&json)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Index { common, verify_oracle } => cmd_index(common, *verify_oracle),
        Command::Simulate { common, seeds, paired_baseline } => cmd_simulate(common, *seeds, paired_baseline.as_deref()),
        Command::Bound { common, verify_oracle } => cmd_bound(common, *verify_oracle),
        Command::Fitcost { trace, states, slot, alpha, retail, per_period, out } => {
            let opts = FitOptions { states: *states, slot_seconds: *slot, alpha: *alpha, retail: *retail, per_period: *per_period };
            cmd_fitcost(trace, opts, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
