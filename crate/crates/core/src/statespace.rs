//! Sweep of the (mu, mu1, mu2, Delta) family of two-mode Gaussian states,
//! organized by the purity ratios r1 = mu/mu1 and r2 = mu/mu2: average
//! negativity and maximum relative bracket error per ratio cell, plus
//! iso-contour extraction for the 10% / 1% error thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::from_purities;
use crate::quantifiers::{negativity_bounds, negativity_exact, relative_error};

/// Smallest global purity sampled; experimental purities span decades but
/// the bracket error plateaus well above this.
pub const DEFAULT_MU_MIN: f64 = 1e-3;
/// Bisection tolerance for the admissible-seralian endpoints.
const DELTA_BISECT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioGrid {
    /// Ascending ratios mu/mu1 (>= 1 is the physical region of interest).
    pub r1_values: Vec<f64>,
    /// Ascending ratios mu/mu2.
    pub r2_values: Vec<f64>,
    /// Global-purity samples per cell (log-uniform in [mu_min, 1]).
    pub mu_samples: usize,
    /// Seralian samples per purity triple (uniform incl. endpoints).
    pub delta_samples: usize,
    pub mu_min: f64,
    pub seed: u64,
}

impl RatioGrid {
    pub fn new(r1_values: Vec<f64>, r2_values: Vec<f64>) -> Result<Self> {
        for vals in [&r1_values, &r2_values] {
            if vals.is_empty() {
                return Err(Error::InvalidInput("empty ratio axis".into()));
            }
            if vals.windows(2).any(|p| p[1] <= p[0]) || vals[0] <= 0.0 {
                return Err(Error::InvalidInput(
                    "ratio values must be positive and strictly ascending".into(),
                ));
            }
        }
        Ok(Self {
            r1_values,
            r2_values,
            mu_samples: 32,
            delta_samples: 16,
            mu_min: DEFAULT_MU_MIN,
            seed: 0,
        })
    }

    /// The default atlas over ratios [1, 4]^2 with step 0.25.
    pub fn default_atlas() -> Self {
        let vals: Vec<f64> = (0..=12).map(|i| 1.0 + 0.25 * i as f64).collect();
        Self::new(vals.clone(), vals).expect("static grid is valid")
    }

    /// Parse one axis from "min:max:steps".
    pub fn parse_axis(s: &str) -> Result<Vec<f64>> {
        let parts: Vec<&str> = s.split(':').collect();
        let err = |msg: &str| Error::InvalidInput(format!("grid axis {s:?}: {msg}"));
        if parts.len() != 3 {
            return Err(err("expected min:max:steps"));
        }
        let min: f64 = parts[0].parse().map_err(|_| err("bad min"))?;
        let max: f64 = parts[1].parse().map_err(|_| err("bad max"))?;
        let steps: usize = parts[2].parse().map_err(|_| err("bad steps"))?;
        if steps < 2 || !(max > min) {
            return Err(err("need max > min and steps >= 2"));
        }
        Ok((0..steps)
            .map(|i| min + (max - min) * i as f64 / (steps - 1) as f64)
            .collect())
    }
}

/// One (r1, r2) cell of the atlas. `e_av` and `delta_max` are None when no
/// sampled state in the cell is entangled (white area).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AtlasCell {
    pub r1: f64,
    pub r2: f64,
    pub e_av: Option<f64>,
    pub delta_max: Option<f64>,
    pub n_physical: u32,
    pub n_entangled: u32,
}

/// Admissible seralian interval for the purity triple, located by bisection
/// on from_purities success. None when no Delta is feasible.
pub fn delta_interval(mu: f64, mu1: f64, mu2: f64) -> Option<(f64, f64)> {
    let feasible = |d: f64| from_purities(mu, mu1, mu2, d).is_ok();
    // any physical two-mode state satisfies 2/mu <= Delta <= 1 + 1/mu^2
    let lo0 = 2.0 / mu;
    let hi0 = 1.0 + 1.0 / (mu * mu);

    // coarse scan for a feasible point (the feasible set is an interval);
    // escalate resolution because the window narrows near the physicality
    // boundary of the purity triple (e.g. strongly asymmetric marginals)
    let probe = [64usize, 1024]
        .iter()
        .find_map(|&n| {
            (0..=n)
                .map(|i| lo0 + (hi0 - lo0) * i as f64 / n as f64)
                .find(|&d| feasible(d))
        })?;

    let bisect = |mut good: f64, mut bad: f64| {
        while (good - bad).abs() > DELTA_BISECT_TOL * (1.0 + good.abs()) {
            let mid = 0.5 * (good + bad);
            if feasible(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let lo = if feasible(lo0) { lo0 } else { bisect(probe, lo0) };
    let hi = if feasible(hi0) { hi0 } else { bisect(probe, hi0) };
    Some((lo, hi))
}

fn cell_seed(global: u64, index: usize) -> u64 {
    // splitmix64 step keeps per-cell streams decorrelated
    let mut z = global ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sweep_cell(grid: &RatioGrid, index: usize, r1: f64, r2: f64) -> AtlasCell {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(grid.seed, index));
    let ln_lo = grid.mu_min.ln();

    let mut e_sum = 0.0;
    let mut n_physical = 0u32;
    let mut n_entangled = 0u32;
    let mut delta_max: Option<f64> = None;

    for _ in 0..grid.mu_samples {
        let mu = (ln_lo + rng.gen::<f64>() * (0.0 - ln_lo)).exp().min(1.0);
        let (mu1, mu2) = (mu / r1, mu / r2);
        let Some((d_lo, d_hi)) = delta_interval(mu, mu1, mu2) else {
            continue;
        };
        let Ok((e_min, e_max)) = negativity_bounds(mu, mu1, mu2) else {
            continue;
        };

        let n = grid.delta_samples.max(2);
        let mut any_entangled = false;
        for i in 0..n {
            let d = d_lo + (d_hi - d_lo) * i as f64 / (n - 1) as f64;
            let Ok(cov) = from_purities(mu, mu1, mu2, d) else {
                continue; // endpoint rounding
            };
            let Ok(e) = negativity_exact(&cov) else {
                continue;
            };
            n_physical += 1;
            if e > 1e-12 {
                n_entangled += 1;
                any_entangled = true;
                e_sum += e;
            }
        }
        if any_entangled && e_max > 0.0 {
            if let Some(d) = relative_error(e_min, e_max) {
                delta_max = Some(delta_max.map_or(d, |m: f64| m.max(d)));
            }
        }
    }

    AtlasCell {
        r1,
        r2,
        e_av: (n_entangled > 0).then(|| e_sum / n_entangled as f64),
        delta_max: if n_entangled > 0 { delta_max } else { None },
        n_physical,
        n_entangled,
    }
}

/// Sweep every (r1, r2) cell. Output order follows the grid (r1 fastest)
/// and is deterministic for a fixed grid seed.
pub fn sweep_atlas(grid: &RatioGrid) -> Vec<AtlasCell> {
    let mut out = Vec::with_capacity(grid.r1_values.len() * grid.r2_values.len());
    let mut index = 0usize;
    for &r2 in &grid.r2_values {
        for &r1 in &grid.r1_values {
            out.push(sweep_cell(grid, index, r1, r2));
            index += 1;
        }
    }
    out
}

/// CSV export: `r1,r2,E_av,delta_max,n_physical,n_entangled`, empty fields
/// for white cells.
pub fn atlas_to_csv(cells: &[AtlasCell]) -> String {
    let mut s = String::from("r1,r2,E_av,delta_max,n_physical,n_entangled\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.r1,
            c.r2,
            opt(c.e_av),
            opt(c.delta_max),
            c.n_physical,
            c.n_entangled
        ));
    }
    s
}

/// One interpolated crossing of an iso-contour of delta_max.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContourPoint {
    pub level: f64,
    pub r1: f64,
    pub r2: f64,
}

pub const CONTOUR_LEVELS: [f64; 2] = [0.10, 0.01];

/// Extract the 10% and 1% iso-contours of delta_max by linear interpolation
/// along each r2 row (delta_max decreases with r1 in the physical region).
pub fn threshold_curves(cells: &[AtlasCell]) -> Result<Vec<ContourPoint>> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("empty atlas".into()));
    }
    let mut rows: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for c in cells {
        let Some(d) = c.delta_max else { continue };
        match rows.iter_mut().find(|(r2, _)| *r2 == c.r2) {
            Some((_, row)) => row.push((c.r1, d)),
            None => rows.push((c.r2, vec![(c.r1, d)])),
        }
    }
    for (_, row) in rows.iter_mut() {
        row.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut points = Vec::new();
    for &level in &CONTOUR_LEVELS {
        let mut found = false;
        for (r2, row) in &rows {
            for pair in row.windows(2) {
                let ((x0, d0), (x1, d1)) = (pair[0], pair[1]);
                // downward crossing of the level
                if (d0 - level) * (d1 - level) <= 0.0 && d0 != d1 {
                    let t = (d0 - level) / (d0 - d1);
                    points.push(ContourPoint { level, r1: x0 + t * (x1 - x0), r2: *r2 });
                    found = true;
                    break;
                }
            }
        }
        if !found {
            return Err(Error::InsufficientGrid(level));
        }
    }
    Ok(points)
}

pub fn contours_to_csv(points: &[ContourPoint]) -> String {
    let mut s = String::from("level,r1,r2\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.level, p.r1, p.r2));
    }
    s
}
