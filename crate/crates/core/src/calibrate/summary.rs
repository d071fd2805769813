use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Chain;

/// Minimum chain length accepted by [`summarize_chain`].
pub const MIN_CHAIN_LEN: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Equal-tailed `(lower, upper)` per coordinate.
    pub credible_intervals: Vec<(f64, f64)>,
    pub level: f64,
    pub ess: Vec<f64>,
    pub acceptance_rate: f64,
}

impl PosteriorSummary {
    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        self.credible_intervals
            .iter()
            .zip(truth)
            .map(|((lo, hi), t)| lo <= t && t <= hi)
            .collect()
    }
}

pub fn summarize_chain(chain: &Chain, level: f64) -> Result<PosteriorSummary> {
    summarize_draws(&chain.thetas, chain.acceptance_rate, level)
}

/// Moments, equal-tailed intervals and ESS of a list of θ draws.
pub fn summarize_draws(thetas: &[Vec<f64>], acceptance_rate: f64, level: f64) -> Result<PosteriorSummary> {
    if thetas.len() < MIN_CHAIN_LEN {
        return Err(Error::Contract(format!(
            "chain has {} draws, need at least {MIN_CHAIN_LEN}",
            thetas.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("credible level must lie in (0, 1), got {level}")));
    }
    let p = thetas[0].len();
    let mut out = PosteriorSummary {
        mean: Vec::with_capacity(p),
        sd: Vec::with_capacity(p),
        credible_intervals: Vec::with_capacity(p),
        level,
        ess: Vec::with_capacity(p),
        acceptance_rate,
    };
    let tail = 0.5 * (1.0 - level);
    for j in 0..p {
        let xs: Vec<f64> = thetas.iter().map(|t| t[j]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let interval = (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail));
        if !(interval.0 <= mean && mean <= interval.1) {
            log::warn!("coordinate {j}: posterior mean {mean} lies outside its credible interval");
        }
        out.mean.push(mean);
        out.sd.push(var.max(0.0).sqrt());
        out.credible_intervals.push(interval);
        out.ess.push(effective_sample_size(&xs));
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Geyer's initial monotone sequence estimator. A constant chain has ESS
/// equal to its length.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= f64::MIN_POSITIVE {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (2.0 * sum - gamma0) / gamma0;
    n as f64 / tau.max(f64::MIN_POSITIVE)
}

/// Writes `iter, theta_1..theta_p, loglik, accept, max_constraint_residual`.
pub fn write_chain_csv(chain: &Chain, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = chain.p();
    let mut header = vec!["iter".to_string()];
    header.extend((1..=p).map(|j| format!("theta_{j}")));
    header.extend(["loglik", "accept", "max_constraint_residual"].map(String::from));
    w.write_record(&header)?;
    for (i, theta) in chain.thetas.iter().enumerate() {
        let mut rec = vec![(chain.burnin + i).to_string()];
        rec.extend(theta.iter().map(|v| format!("{v:.17e}")));
        rec.push(format!("{:.17e}", chain.loglik[i]));
        rec.push(u8::from(chain.accepted[i]).to_string());
        rec.push(format!("{:.6e}", chain.max_constraint_residual[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the θ columns of a chain CSV written by [`write_chain_csv`].
pub fn read_chain_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::config(format!("{} has no theta_ columns", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|&c| {
                rec[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("bad value {:?} in {}: {e}", &rec[c], path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}
