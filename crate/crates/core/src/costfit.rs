//! Fitting a finite-state Markov cost chain to a real-time price trace:
//! resample to slots, quantize into equal-count bins, count transitions.

use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CostChain;

/// Prices indexed by Unix time in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceTrace {
    times: Vec<i64>,
    prices: Vec<f64>,
}

#[derive(Deserialize)]
struct PriceRow {
    timestamp: String,
    price: f64,
}

fn parse_timestamp(s: &str) -> Result<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc().timestamp());
        }
    }
    Err(Error::DegenerateTrace(format!("unparseable timestamp `{s}`")))
}

impl PriceTrace {
    pub fn new(times: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        if times.len() != prices.len() {
            return Err(Error::DegenerateTrace("times and prices differ in length".into()));
        }
        if times.is_empty() {
            return Err(Error::DegenerateTrace("empty trace".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateTrace(format!("timestamps not increasing at {}", w[1])));
        }
        if let Some(p) = prices.iter().find(|p| !p.is_finite()) {
            return Err(Error::DegenerateTrace(format!("non-finite price {p}")));
        }
        Ok(PriceTrace { times, prices })
    }

    /// Reads CSV with header `timestamp,price`; timestamps are ISO-8601.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut prices = Vec::new();
        for row in reader.deserialize() {
            let row: PriceRow = row?;
            times.push(parse_timestamp(row.timestamp.trim())?);
            prices.push(row.price);
        }
        PriceTrace::new(times, prices)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

/// Mean price per slot of `slot_seconds`, slots aligned to the first sample.
/// Slots without samples repeat the previous slot's value.
pub fn resample(trace: &PriceTrace, slot_seconds: i64) -> Result<Vec<f64>> {
    if slot_seconds <= 0 {
        return Err(Error::Precondition("slot length must be positive".into()));
    }
    if trace.is_empty() {
        return Err(Error::DegenerateTrace("empty trace".into()));
    }
    let t0 = trace.times[0];
    let n_slots = ((trace.times[trace.len() - 1] - t0) / slot_seconds + 1) as usize;
    let mut sum = vec![0.0; n_slots];
    let mut count = vec![0usize; n_slots];
    for (t, p) in trace.times.iter().zip(&trace.prices) {
        let k = ((t - t0) / slot_seconds) as usize;
        sum[k] += p;
        count[k] += 1;
    }
    let mut out = Vec::with_capacity(n_slots);
    for k in 0..n_slots {
        let v = if count[k] > 0 { sum[k] / count[k] as f64 } else { out[k - 1] };
        out.push(v);
    }
    Ok(out)
}

/// Equal-count bins of a price series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantized {
    /// Mean price of each bin, increasing.
    pub levels: Vec<f64>,
    /// 0-based bin of every slot.
    pub states: Vec<usize>,
}

/// Splits the prices into `k` bins of equal count by rank (ties broken by
/// position) and labels each slot with its bin.
pub fn quantize(prices: &[f64], k: usize) -> Result<Quantized> {
    if k == 0 {
        return Err(Error::Precondition("need at least one cost state".into()));
    }
    let mut sorted = prices.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < k {
        return Err(Error::DegenerateTrace(format!("{} distinct prices for {k} states", sorted.len())));
    }
    let n = prices.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| prices[*a].total_cmp(&prices[*b]).then(a.cmp(b)));
    let mut states = vec![0; n];
    let mut levels = vec![0.0; k];
    for b in 0..k {
        let (lo, hi) = (b * n / k, (b + 1) * n / k);
        for &i in &order[lo..hi] {
            states[i] = b;
            levels[b] += prices[i];
        }
        levels[b] /= (hi - lo) as f64;
    }
    Ok(Quantized { levels, states })
}

/// Expresses prices in units of the retail charging price.
pub fn normalize(levels: &[f64], retail: f64) -> Result<Vec<f64>> {
    if !(retail > 0.0 && retail.is_finite()) {
        return Err(Error::Precondition(format!("retail price {retail} must be positive")));
    }
    Ok(levels.iter().map(|c| c / retail).collect())
}

/// Transition counts `[period][from][to]`; the period is that of the source
/// slot, slot 0 being period 0.
pub fn transition_counts(states: &[usize], k: usize, periods: usize) -> Vec<Vec<Vec<f64>>> {
    let mut counts = vec![vec![vec![0.0; k]; k]; periods];
    for (t, w) in states.windows(2).enumerate() {
        counts[t % periods][w[0]][w[1]] += 1.0;
    }
    counts
}

fn smooth(counts: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let k = counts.len();
    counts
        .iter()
        .enumerate()
        .map(|(from, row)| {
            let total: f64 = row.iter().sum::<f64>() + alpha * k as f64;
            if total > 0.0 {
                row.iter().map(|c| (c + alpha) / total).collect()
            } else {
                // never left this state and no smoothing: make it absorbing
                (0..k).map(|to| if to == from { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect()
}

/// Estimates `P[j][k] = (count(j→k) + α) / (count(j→·) + αK)`, per period of
/// the source slot when `per_period` is given.
pub fn estimate_chain(levels: &[f64], states: &[usize], alpha: f64, per_period: Option<usize>) -> Result<CostChain> {
    let k = levels.len();
    if states.len() < 2 {
        return Err(Error::DegenerateTrace("need at least two slots to count transitions".into()));
    }
    if let Some(s) = states.iter().find(|s| **s >= k) {
        return Err(Error::Precondition(format!("state {s} out of range for {k} levels")));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::Precondition(format!("smoothing {alpha} must be finite and nonnegative")));
    }
    match per_period {
        None => {
            let counts = transition_counts(states, k, 1);
            CostChain::new(levels.to_vec(), smooth(&counts[0], alpha))
        }
        Some(0) => Err(Error::Precondition("per-period count must be positive".into())),
        Some(periods) => {
            let counts = transition_counts(states, k, periods);
            CostChain::periodic(levels.to_vec(), counts.iter().map(|c| smooth(c, alpha)).collect())
        }
    }
}

/// Options for [`fit_cost_chain`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub states: usize,
    #[serde(default = "default_slot_seconds")]
    pub slot_seconds: i64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Retail charging price in trace units; defaults to twice the mean
    /// resampled price, putting the mean normalized cost at 0.5.
    #[serde(default)]
    pub retail: Option<f64>,
    #[serde(default)]
    pub per_period: Option<usize>,
}

fn default_slot_seconds() -> i64 {
    3600
}

fn default_alpha() -> f64 {
    0.5
}

impl FitOptions {
    pub fn new(states: usize) -> Self {
        FitOptions { states, slot_seconds: default_slot_seconds(), alpha: default_alpha(), retail: None, per_period: None }
    }
}

#[derive(Clone, Debug)]
pub struct FittedChain {
    pub chain: CostChain,
    /// Per-slot 0-based states of the resampled trace.
    pub states: Vec<usize>,
    /// Bin means in trace units, before normalization.
    pub raw_levels: Vec<f64>,
    pub retail: f64,
}

pub fn fit_cost_chain(trace: &PriceTrace, opts: &FitOptions) -> Result<FittedChain> {
    let prices = resample(trace, opts.slot_seconds)?;
    let q = quantize(&prices, opts.states)?;
    let retail = opts.retail.unwrap_or_else(|| 2.0 * prices.iter().sum::<f64>() / prices.len() as f64);
    let levels = normalize(&q.levels, retail)?;
    let chain = estimate_chain(&levels, &q.states, opts.alpha, opts.per_period)?;
    Ok(FittedChain { chain, states: q.states, raw_levels: q.levels, retail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Transitions;

    fn matrix(chain: &CostChain) -> Vec<Vec<f64>> {
        match chain.transitions() {
            Transitions::Homogeneous(m) => m.clone(),
            Transitions::Periodic(_) => panic!("expected homogeneous"),
        }
    }

    #[test]
    fn resample_examples() {
        let t = PriceTrace::new(vec![0, 1800, 3600], vec![10.0, 20.0, 7.0]).unwrap();
        assert_eq!(resample(&t, 3600).unwrap(), vec![15.0, 7.0]);
        let t = PriceTrace::new(vec![0, 7200], vec![4.0, 9.0]).unwrap();
        assert_eq!(resample(&t, 3600).unwrap(), vec![4.0, 4.0, 9.0]);
        let hours: Vec<i64> = (0..24).map(|h| h * 3600).collect();
        let p: Vec<f64> = (0..24).map(|h| h as f64 * 1.5).collect();
        assert_eq!(resample(&PriceTrace::new(hours, p.clone()).unwrap(), 3600).unwrap(), p);
    }

    #[test]
    fn trace_validation() {
        assert!(PriceTrace::new(vec![], vec![]).is_err());
        assert!(PriceTrace::new(vec![5, 5], vec![1.0, 2.0]).is_err());
        assert!(PriceTrace::new(vec![1, 2], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn csv_timestamps() {
        let text = "timestamp,price\n2023-04-01T00:00:00-07:00,10\n2023-04-01T08:00:00Z,20\n2023-04-01T09:00:00,30\n";
        let t = PriceTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.times()[1] - t.times()[0], 3600);
        assert_eq!(t.times()[2] - t.times()[1], 3600);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(q.levels, vec![1.5, 3.5]);
        assert_eq!(q.states, vec![0, 0, 1, 1]);
        let q = quantize(&[3.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(q.levels, vec![2.0]);
        assert!(matches!(quantize(&[2.0; 5], 2), Err(Error::DegenerateTrace(_))));
    }

    #[test]
    fn estimate_examples() {
        let c = estimate_chain(&[0.0, 1.0], &[0, 0, 1, 0], 0.0, None).unwrap();
        assert_eq!(matrix(&c), vec![vec![0.5, 0.5], vec![1.0, 0.0]]);
        let c = estimate_chain(&[0.0, 1.0], &[0, 0, 0], 0.5, None).unwrap();
        assert_eq!(matrix(&c)[1], vec![0.5, 0.5]);
        let c = estimate_chain(&[0.0, 1.0], &[0, 0, 1, 0], 1e9, None).unwrap();
        for x in matrix(&c).iter().flatten() {
            assert!((x - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn per_period_counts_by_source_slot() {
        // period 0 always goes 0 -> 1, period 1 always 1 -> 0
        let states = [0, 1, 0, 1, 0, 1];
        let c = estimate_chain(&[0.0, 1.0], &states, 0.0, Some(2)).unwrap();
        assert_eq!(c.row(0, 0), &[0.0, 1.0]);
        assert_eq!(c.row(1, 1), &[1.0, 0.0]);
    }
}
