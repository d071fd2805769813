//! Box-constrained Nelder–Mead with Latin-hypercube multistarts.
//!
//! The simplex lives in coordinates normalized to `[0, 1]^p`; trial points
//! are clamped onto the box, so the convergence tolerance is a diameter in
//! normalized units.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

use super::BoxDomain;

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    /// Convergence threshold on the simplex diameter (normalized units).
    pub diameter_tol: f64,
    pub max_iters: usize,
    /// Initial simplex edge (normalized units).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            diameter_tol: 1e-6,
            max_iters: 2000,
            initial_step: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Scaled<'a> {
    domain: &'a BoxDomain,
    widths: Vec<f64>,
}

impl Scaled<'_> {
    fn to_domain(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.domain.lower()[k] + v.clamp(0.0, 1.0) * self.widths[k])
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| ((v - self.domain.lower()[k]) / self.widths[k]).clamp(0.0, 1.0))
            .collect()
    }
}

/// Minimizes `f` over `domain` from `start`. Non-finite objective values are
/// treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, start: &[f64], domain: &BoxDomain, opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let p = domain.dim();
    if start.len() != p {
        return Err(Error::dim(format!("start has {} entries, domain dimension {p}", start.len())));
    }
    let scaled = Scaled {
        domain,
        widths: domain.widths(),
    };
    let mut eval = |u: &[f64]| -> Result<f64> {
        let v = f(&scaled.to_domain(u))?;
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    };
    let clamp = |u: &mut Vec<f64>| u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let u0 = scaled.to_unit(start);
    let mut simplex: Vec<Vec<f64>> = vec![u0.clone()];
    for k in 0..p {
        let mut v = u0.clone();
        // step inward when the start sits on the upper face
        v[k] = if v[k] + opts.initial_step <= 1.0 {
            v[k] + opts.initial_step
        } else {
            v[k] - opts.initial_step
        };
        simplex.push(v);
    }
    let mut values = simplex.iter().map(|u| eval(u)).collect::<Result<Vec<_>>>()?;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter <= opts.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; p];
        for v in &simplex[..p] {
            for k in 0..p {
                centroid[k] += v[k] / p as f64;
            }
        }
        let worst = simplex[p].clone();
        let along = |c: f64| -> Vec<f64> {
            let mut v: Vec<f64> = (0..p).map(|k| centroid[k] + c * (worst[k] - centroid[k])).collect();
            clamp(&mut v);
            v
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected)?;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded)?;
            if fe < fr {
                simplex[p] = expanded;
                values[p] = fe;
            } else {
                simplex[p] = reflected;
                values[p] = fr;
            }
            continue;
        }
        if fr < values[p - 1] {
            simplex[p] = reflected;
            values[p] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[p] {
            let c = along(-0.5);
            let fc = eval(&c)?;
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = eval(&c)?;
            (c, fc)
        };
        if fc < values[p].min(fr) {
            simplex[p] = contracted;
            values[p] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=p {
            let v: Vec<f64> = (0..p)
                .map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]))
                .collect();
            values[i] = eval(&v)?;
            simplex[i] = v;
        }
    }
    let best = (0..=p).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Ok(Minimum {
        x: scaled.to_domain(&simplex[best]),
        value: values[best],
        iterations,
        converged,
    })
}

/// `count` Latin-hypercube points in `domain` (one per stratum and axis).
pub fn latin_hypercube<R: Rng + ?Sized>(count: usize, domain: &BoxDomain, rng: &mut R) -> Vec<Vec<f64>> {
    let p = domain.dim();
    let widths = domain.widths();
    let mut points = vec![vec![0.0; p]; count];
    for k in 0..p {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / count as f64;
            points[i][k] = domain.lower()[k] + u * widths[k];
        }
    }
    points
}

#[derive(Clone, Debug)]
pub struct MultistartReport {
    pub best: Minimum,
    pub runs: Vec<Minimum>,
}

/// Runs Nelder–Mead from every start and returns the best converged run.
/// Fails only when no start converges.
pub fn multistart_nelder_mead<F>(
    mut f: F,
    starts: &[Vec<f64>],
    domain: &BoxDomain,
    opts: &NelderMeadOptions,
) -> Result<MultistartReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut runs = Vec::with_capacity(starts.len());
    for s in starts {
        runs.push(nelder_mead(&mut f, s, domain, opts)?);
    }
    let best = runs
        .iter()
        .filter(|r| r.converged && r.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned();
    match best {
        Some(best) => Ok(MultistartReport { best, runs }),
        None => {
            let summary: Vec<String> = runs
                .iter()
                .map(|r| format!("x={:?} f={:e} iters={}", r.x, r.value, r.iterations))
                .collect();
            Err(Error::Optimization(format!(
                "none of {} starts converged: [{}]",
                runs.len(),
                summary.join("; ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finds_interior_quadratic_minimum() {
        let dom = BoxDomain::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let f = |x: &[f64]| Ok((x[0] - 1.2).powi(2) + 3.0 * (x[1] + 0.7).powi(2));
        let m = nelder_mead(f, &[4.0, 4.0], &dom, &NelderMeadOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.2).abs() < 1e-5 && (m.x[1] + 0.7).abs() < 1e-5);
    }

    #[test]
    fn respects_bounds() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        let m = nelder_mead(|x| Ok((x[0] - 3.0).powi(2)), &[0.2], &dom, &NelderMeadOptions::default())
            .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multistart_escapes_local_minimum() {
        let dom = BoxDomain::interval(-3.0, 3.0).unwrap();
        // local min near x = 1.1, global near x = -1.3
        let f = |x: &[f64]| Ok(x[0].powi(4) - 3.0 * x[0].powi(2) + x[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let starts = latin_hypercube(10, &dom, &mut rng);
        let rep = multistart_nelder_mead(f, &starts, &dom, &NelderMeadOptions::default()).unwrap();
        assert!(rep.best.x[0] < 0.0);
        assert_eq!(rep.runs.len(), 10);
    }

    #[test]
    fn latin_hypercube_covers_strata() {
        let dom = BoxDomain::new(vec![0.0, 10.0], vec![1.0, 20.0]).unwrap();
        let pts = latin_hypercube(8, &dom, &mut ChaCha8Rng::seed_from_u64(0));
        for k in 0..2 {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| (((p[k] - dom.lower()[k]) / dom.widths()[k]) * 8.0) as usize)
                .collect();
            strata.sort();
            assert_eq!(strata, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn all_infinite_objective_fails() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        let opts = NelderMeadOptions {
            max_iters: 20,
            ..Default::default()
        };
        let err = multistart_nelder_mead(|_| Ok(f64::NAN), &[vec![0.5]], &dom, &opts);
        assert!(matches!(err, Err(Error::Optimization(_))));
    }
}
