//! Expectation-maximization deconvolution of photocount histograms.
//!
//! Detector response per beam: binomial loss with efficiency eta convolved
//! with Poissonian dark counts of mean d. The joint kernel factorizes over
//! the beams, so the E-step is two small matrix products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{JointDistribution, JointHistogram};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// L1 change of p that stops the iteration.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub dist: JointDistribution,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    /// Per-iteration log-likelihood of the data (monotone non-decreasing).
    pub loglik: Vec<f64>,
}

fn poisson_pmf(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let mut v = (-mean).exp();
    for i in 0..k {
        v *= mean / (i as f64 + 1.0);
    }
    v
}

/// Response matrix r[c][n] = P(c detected | n photons) for one beam.
fn response_matrix(eta: f64, dark: f64, n_max: usize, c_max: usize) -> Vec<Vec<f64>> {
    let mut r = vec![vec![0.0; n_max + 1]; c_max + 1];
    // binomial pmf rows built by recurrence in m
    for n in 0..=n_max {
        let mut bin = vec![0.0; n + 1];
        bin[0] = (1.0 - eta).powi(n as i32);
        for m in 1..=n {
            // C(n,m) eta^m (1-eta)^(n-m)
            bin[m] = bin[m - 1] * ((n - m + 1) as f64 / m as f64) * (eta / (1.0 - eta).max(f64::MIN_POSITIVE));
        }
        if eta == 1.0 {
            for v in bin.iter_mut() {
                *v = 0.0;
            }
            bin[n] = 1.0;
        }
        for (c, row) in r.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (m, &b) in bin.iter().enumerate().take(c.min(n) + 1) {
                acc += b * poisson_pmf(dark, c - m);
            }
            row[n] = acc;
        }
    }
    r
}

/// Maximum-likelihood reconstruction of p(n1, n2) from a photocount histogram.
///
/// Stops when the L1 change of p falls below `tol` or at `max_iter`; a run
/// that hits `max_iter` is returned with `converged = false`.
pub fn em_deconvolve(
    hist: &JointHistogram,
    efficiency: (f64, f64),
    dark: (f64, f64),
    cutoff: (usize, usize),
    opts: EmOptions,
) -> Result<EmResult> {
    for eta in [efficiency.0, efficiency.1] {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::BadEfficiency(eta));
        }
    }
    let (c1_max, c2_max) = hist.dims();
    let (n1_max, n2_max) = cutoff;

    // Extend the modeled count grid so each response column keeps ~all its
    // mass on-grid; dark counts spread detections above eta*n.
    let pad = |d: f64| (d + 10.0 * d.sqrt()).ceil() as usize + 5;
    let c1_grid = (c1_max + pad(dark.0)).max(n1_max);
    let c2_grid = (c2_max + pad(dark.1)).max(n2_max);
    let r1 = response_matrix(efficiency.0, dark.0, n1_max, c1_grid);
    let r2 = response_matrix(efficiency.1, dark.1, n2_max, c2_grid);
    for (r, n_max) in [(&r1, n1_max), (&r2, n2_max)] {
        for n in 0..=n_max {
            let col: f64 = r.iter().map(|row| row[n]).sum();
            if (col - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "response column for n={n} sums to {col}; increase cutoff"
                )));
            }
        }
    }

    // normalized data on the extended grid
    let total = hist.total_shots() as f64;
    let mut h = vec![vec![0.0; c2_grid + 1]; c1_grid + 1];
    for (c1, row) in hist.counts().iter().enumerate() {
        for (c2, &n) in row.iter().enumerate() {
            h[c1][c2] = n as f64 / total;
        }
    }

    // uniform start
    let cells = ((n1_max + 1) * (n2_max + 1)) as f64;
    let mut p = vec![vec![1.0 / cells; n2_max + 1]; n1_max + 1];
    let mut loglik = Vec::new();
    let mut iterations = 0;
    let mut final_change = f64::INFINITY;
    let mut converged = false;

    // q[c1][c2] = sum_n R1[c1][n1] p[n1][n2] R2[c2][n2]
    let forward = |p: &[Vec<f64>]| -> Vec<Vec<f64>> {
        // t[c1][n2] = sum_n1 R1[c1][n1] p[n1][n2]
        let mut t = vec![vec![0.0; n2_max + 1]; c1_grid + 1];
        for (c1, trow) in t.iter_mut().enumerate() {
            for n1 in 0..=n1_max {
                let r = r1[c1][n1];
                if r == 0.0 {
                    continue;
                }
                for (n2, tv) in trow.iter_mut().enumerate() {
                    *tv += r * p[n1][n2];
                }
            }
        }
        let mut q = vec![vec![0.0; c2_grid + 1]; c1_grid + 1];
        for (c1, qrow) in q.iter_mut().enumerate() {
            for (c2, qv) in qrow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for n2 in 0..=n2_max {
                    acc += t[c1][n2] * r2[c2][n2];
                }
                *qv = acc;
            }
        }
        q
    };

    for iter in 0..opts.max_iter {
        let q = forward(&p);
        let mut ll = 0.0;
        // ratio[c] = h[c]/q[c] where h > 0
        let mut ratio = vec![vec![0.0; c2_grid + 1]; c1_grid + 1];
        for c1 in 0..=c1_grid {
            for c2 in 0..=c2_grid {
                let hv = h[c1][c2];
                if hv > 0.0 {
                    if q[c1][c2] <= 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "observed count ({c1},{c2}) has zero model probability; \
                             increase cutoff"
                        )));
                    }
                    ll += hv * q[c1][c2].ln();
                    ratio[c1][c2] = hv / q[c1][c2];
                }
            }
        }
        ll *= total;
        loglik.push(ll);

        // back-projection: u[n1][n2] = sum_c R1[c1][n1] ratio[c1][c2] R2[c2][n2]
        let mut t = vec![vec![0.0; c2_grid + 1]; n1_max + 1];
        for (n1, trow) in t.iter_mut().enumerate() {
            for c1 in 0..=c1_grid {
                let r = r1[c1][n1];
                if r == 0.0 {
                    continue;
                }
                for (c2, tv) in trow.iter_mut().enumerate() {
                    *tv += r * ratio[c1][c2];
                }
            }
        }
        let mut change = 0.0;
        for n1 in 0..=n1_max {
            for n2 in 0..=n2_max {
                let mut u = 0.0;
                for c2 in 0..=c2_grid {
                    u += t[n1][c2] * r2[c2][n2];
                }
                let next = p[n1][n2] * u;
                change += (next - p[n1][n2]).abs();
                p[n1][n2] = next;
            }
        }
        iterations = iter + 1;
        final_change = change;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    // clean tiny negatives from rounding and renormalize
    let mut sum = 0.0;
    for row in &mut p {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
            sum += *v;
        }
    }
    for row in &mut p {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    Ok(EmResult {
        dist: JointDistribution::new(p)?,
        iterations,
        converged,
        final_change,
        loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::raw_moments;
    use approx::assert_relative_eq;

    #[test]
    fn identity_response_returns_normalized_histogram() {
        let h = JointHistogram::from_cells(&[(0, 0, 3), (1, 2, 5), (2, 1, 2)], 1).unwrap();
        let r = em_deconvolve(&h, (1.0, 1.0), (0.0, 0.0), (4, 4), EmOptions::default()).unwrap();
        assert!(r.converged);
        let norm = h.normalized();
        for n1 in 0..=2 {
            for n2 in 0..=2 {
                assert_relative_eq!(r.dist.p()[n1][n2], norm.p()[n1][n2], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn vacuum_is_fixed_point() {
        let h = JointHistogram::from_cells(&[(0, 0, 100)], 1).unwrap();
        let r = em_deconvolve(&h, (0.5, 0.5), (0.0, 0.0), (5, 5), EmOptions::default()).unwrap();
        assert_relative_eq!(r.dist.p()[0][0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_efficiency() {
        let h = JointHistogram::from_cells(&[(0, 0, 1)], 1).unwrap();
        for eta in [0.0, 1.5, -0.2] {
            let e = em_deconvolve(&h, (eta, 0.5), (0.0, 0.0), (3, 3), EmOptions::default());
            assert!(matches!(e, Err(Error::BadEfficiency(_))));
        }
    }

    #[test]
    fn loglik_monotone_with_loss_and_dark() {
        let h = JointHistogram::from_cells(
            &[(0, 0, 40), (1, 0, 25), (0, 1, 20), (1, 1, 10), (2, 2, 5)],
            1,
        )
        .unwrap();
        let r = em_deconvolve(
            &h,
            (0.7, 0.6),
            (0.1, 0.05),
            (8, 8),
            EmOptions { max_iter: 300, tol: 0.0 },
        )
        .unwrap();
        assert!(!r.converged);
        for pair in r.loglik.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn recovers_poisson_mean_exactly_in_expectation() {
        // feed the *exact* detected distribution of Poisson(2) through eta=0.5;
        // thinning keeps it Poisson with mean 1, and EM must undo the loss.
        let mean = 2.0f64;
        let eta = 0.5f64;
        let cutoff = 25usize;
        let mut pmf = Vec::new();
        let mut v = (-(mean * eta)).exp();
        for n in 0..=cutoff {
            pmf.push(v);
            v *= mean * eta / (n as f64 + 1.0);
        }
        let scale = 1e9;
        let cells: Vec<(u32, u32, u64)> = pmf
            .iter()
            .enumerate()
            .map(|(c, &p)| (c as u32, 0, (p * scale) as u64))
            .filter(|&(_, _, n)| n > 0)
            .collect();
        let h = JointHistogram::from_cells(&cells, 1).unwrap();
        let r = em_deconvolve(
            &h,
            (eta, 1.0),
            (0.0, 0.0),
            (cutoff, 0),
            EmOptions { max_iter: 20_000, tol: 1e-12 },
        )
        .unwrap();
        let m = raw_moments(&r.dist, 4);
        assert_relative_eq!(m.m(1, 0), mean, max_relative = 2e-3);
    }
}
