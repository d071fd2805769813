use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_DENSITY_GRID: usize = 512;

/// A density evaluated on a uniform grid.
#[derive(Clone, Debug, Serialize)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityTable {
    /// Trapezoid-rule integral of the density over its grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn argmax(&self) -> f64 {
        let i = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        self.x[i]
    }
}

/// Gaussian kernel density estimate with Silverman's bandwidth
/// `0.9 · min(sd, IQR/1.34) · n^{-1/5}` on a grid spanning the sample ± 4
/// bandwidths. A degenerate sample gets a bandwidth of `1e-3·max(|x|, 1)`.
pub fn emit_density_data(samples: &[f64], grid_size: usize) -> Result<DensityTable> {
    if samples.is_empty() {
        return Err(Error::config("density estimation needs a nonempty chain"));
    }
    if grid_size < 2 {
        return Err(Error::config("density grid needs at least two points"));
    }
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let q = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[h.ceil() as usize] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * n.powf(-0.2);
    if !(h > 0.0) {
        h = 1e-3 * mean.abs().max(1.0);
    }
    let (lo, hi) = (sorted[0] - 4.0 * h, sorted[sorted.len() - 1] + 4.0 * h);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();
    let density = x
        .iter()
        .map(|&g| {
            sorted
                .iter()
                .map(|s| (-0.5 * ((g - s) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityTable { x, density, bandwidth: h })
}

/// Two-column CSV `x,density`.
pub fn write_density_csv(table: &DensityTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "density"])?;
    for (x, d) in table.x.iter().zip(&table.density) {
        w.write_record([format!("{x:.10e}"), format!("{d:.10e}")])?;
    }
    w.flush()?;
    Ok(())
}
