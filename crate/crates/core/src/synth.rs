//! Synthetic photocount data: multimode noisy twin beams through lossy,
//! dark-count-afflicted detectors, plus the exact detected-field moment
//! oracle the simulator must converge to.
//!
//! Generator: ChaCha8 (documented in every metadata sidecar as "chacha8")
//! so streams are reproducible across platforms for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{forward_moments, params_of_twin_beam, TwinBeamSpec};
use crate::moments::{compose_iid, convolve, IntensityMoments, JointHistogram};

pub const GENERATOR_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Quantum efficiency in (0, 1].
    pub efficiency: f64,
    /// Mean dark counts per detection window.
    pub dark: f64,
    /// Detected counts above this clamp to it; None = unlimited.
    pub saturation: Option<u32>,
}

impl DetectorSpec {
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark: 0.0, saturation: None }
    }

    pub fn new(efficiency: f64, dark: f64, saturation: Option<u32>) -> Result<Self> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::BadEfficiency(efficiency));
        }
        if dark < 0.0 || !dark.is_finite() {
            return Err(Error::InvalidInput(format!("negative dark mean {dark}")));
        }
        Ok(Self { efficiency, dark, saturation })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimRun {
    pub spec: TwinBeamSpec,
    pub detectors: (DetectorSpec, DetectorSpec),
    pub shots: u64,
    pub seed: u64,
}

impl SimRun {
    pub fn new(
        spec: TwinBeamSpec,
        detectors: (DetectorSpec, DetectorSpec),
        shots: u64,
        seed: u64,
    ) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidInput("shots must be >= 1".into()));
        }
        Ok(Self { spec, detectors, shots, seed })
    }
}

/// Run metadata sidecar written next to simulated histograms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub spec: TwinBeamSpec,
    pub detectors: (DetectorSpec, DetectorSpec),
    pub shots: u64,
    pub seed: u64,
    pub generator: String,
}

impl RunMetadata {
    pub fn of(run: &SimRun) -> Self {
        Self {
            spec: run.spec,
            detectors: run.detectors,
            shots: run.shots,
            seed: run.seed,
            generator: GENERATOR_NAME.to_string(),
        }
    }
}

/// Bose-Einstein (geometric) sample with mean b, by inverse transform.
fn geometric(rng: &mut ChaCha8Rng, b: f64) -> u64 {
    if b <= 0.0 {
        return 0;
    }
    let q = b / (1.0 + b);
    // P(n) = (1-q) q^n; inverse CDF: n = floor(ln(1-U)/ln q), U uniform
    let u: f64 = rng.gen();
    ((1.0 - u).ln() / q.ln()).floor() as u64
}

fn thin(rng: &mut ChaCha8Rng, n: u64, eta: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    if eta >= 1.0 {
        return n;
    }
    Binomial::new(n, eta).expect("eta validated").sample(rng)
}

fn dark_counts(rng: &mut ChaCha8Rng, d: f64) -> u64 {
    if d <= 0.0 {
        return 0;
    }
    Poisson::new(d).expect("dark validated").sample(rng) as u64
}

/// Monte Carlo photocount histogram of the detected noisy twin beam.
/// Deterministic for a fixed seed.
pub fn simulate(run: &SimRun) -> JointHistogram {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let (det1, det2) = run.detectors;
    let mut cells: Vec<Vec<u64>> = vec![vec![0]];

    for _ in 0..run.shots {
        let mut n1 = 0u64;
        let mut n2 = 0u64;
        for _ in 0..run.spec.modes {
            let pairs = geometric(&mut rng, run.spec.pair_mean);
            n1 += pairs + geometric(&mut rng, run.spec.noise1);
            n2 += pairs + geometric(&mut rng, run.spec.noise2);
        }
        let mut c1 = thin(&mut rng, n1, det1.efficiency) + dark_counts(&mut rng, det1.dark);
        let mut c2 = thin(&mut rng, n2, det2.efficiency) + dark_counts(&mut rng, det2.dark);
        if let Some(sat) = det1.saturation {
            c1 = c1.min(sat as u64);
        }
        if let Some(sat) = det2.saturation {
            c2 = c2.min(sat as u64);
        }

        let (c1, c2) = (c1 as usize, c2 as usize);
        if c1 >= cells.len() {
            cells.resize_with(c1 + 1, Vec::new);
        }
        let width = cells.iter().map(Vec::len).max().unwrap_or(0).max(c2 + 1);
        for row in cells.iter_mut() {
            if row.len() < width {
                row.resize(width, 0);
            }
        }
        cells[c1][c2] += 1;
    }

    JointHistogram::new(cells, 1).expect("shots >= 1 guaranteed nonempty")
}

/// Scale normally-ordered moments for detector loss:
/// <W1^k W2^l> -> eta1^k eta2^l <W1^k W2^l>.
pub fn apply_loss(w: &IntensityMoments, eta1: f64, eta2: f64) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| eta1.powi(k as i32) * eta2.powi(l as i32) * w.w(k, l))
}

/// Joint moments of independent Poisson dark intensities: <W1^k W2^l> =
/// d1^k d2^l.
fn dark_moments(d1: f64, d2: f64) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| d1.powi(k as i32) * d2.powi(l as i32))
}

/// Joint moments of independent thermal noise modes of means (b1, b2):
/// <W1^k W2^l> = k! b1^k l! b2^l.
fn thermal_noise_moments(b1: f64, b2: f64) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| {
        crate::series::FACT[k] * b1.powi(k as i32) * crate::series::FACT[l] * b2.powi(l as i32)
    })
}

/// Exact detected-field intensity moments for the run. The generated field
/// places the thermal noise in its own mode per beam (independent draws),
/// so the per-mode moments are the pure twin-beam moments convolved with
/// the noise-mode moments; loss scales moments index-wise, M modes compose
/// by factorial-cumulant additivity, and Poisson dark counts convolve in.
/// Saturation is not modeled (it truncates the distribution, not the
/// underlying field).
pub fn analytic_moments(run: &SimRun) -> IntensityMoments {
    let pair = forward_moments(&params_of_twin_beam(&TwinBeamSpec {
        modes: 1,
        noise1: 0.0,
        noise2: 0.0,
        ..run.spec
    }));
    let per_mode = convolve(&pair, &thermal_noise_moments(run.spec.noise1, run.spec.noise2));
    let lossy = apply_loss(&per_mode, run.detectors.0.efficiency, run.detectors.1.efficiency);
    let multimode = compose_iid(&lossy, run.spec.modes as f64);
    convolve(&multimode, &dark_moments(run.detectors.0.dark, run.detectors.1.dark))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{intensity_moments_from_histogram, BootstrapConfig};
    use approx::assert_relative_eq;

    fn run(spec: TwinBeamSpec, eta: f64, dark: f64, shots: u64, seed: u64) -> SimRun {
        let det = DetectorSpec::new(eta, dark, None).unwrap();
        SimRun::new(spec, (det, det), shots, seed).unwrap()
    }

    #[test]
    fn vacuum_spec_gives_all_zero_shots() {
        let r = run(TwinBeamSpec::new(0.0, 0.0, 0.0, 1).unwrap(), 1.0, 0.0, 1000, 7);
        let h = simulate(&r);
        assert_eq!(h.counts(), &[vec![1000u64]]);
    }

    #[test]
    fn same_seed_identical_histogram() {
        let r = run(TwinBeamSpec::new(0.3, 0.1, 0.0, 3).unwrap(), 0.7, 0.2, 5000, 99);
        assert_eq!(simulate(&r).counts(), simulate(&r).counts());
        let r2 = SimRun { seed: 100, ..r };
        assert_ne!(simulate(&r2).counts(), simulate(&r).counts());
    }

    #[test]
    fn analytic_moments_vacuum_and_single_mode() {
        let r = run(TwinBeamSpec::new(0.0, 0.0, 0.0, 1).unwrap(), 1.0, 0.0, 1, 0);
        let w = analytic_moments(&r);
        assert_eq!(w.w(1, 0), 0.0);
        assert_eq!(w.w(2, 2), 0.0);

        // M = 1, ideal detection, no noise: definitionally forward_moments
        let spec = TwinBeamSpec::new(0.4, 0.0, 0.0, 1).unwrap();
        let r = run(spec, 1.0, 0.0, 1, 0);
        let direct = forward_moments(&params_of_twin_beam(&spec));
        let w = analytic_moments(&r);
        for k in 0..=4usize {
            for l in 0..=4 - k {
                assert_relative_eq!(w.w(k, l), direct.w(k, l), epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn noise_occupies_its_own_mode() {
        // the generator draws noise independently of the pairs, so the
        // beam-1 marginal is a two-mode (not single thermal) field:
        // <W1^2> = 2Bp^2 + 2 Bp Bn + 2 Bn^2
        let (bp, bn) = (0.4, 0.1);
        let spec = TwinBeamSpec::new(bp, bn, 0.0, 1).unwrap();
        let w = analytic_moments(&run(spec, 1.0, 0.0, 1, 0));
        assert_relative_eq!(w.w(1, 0), bp + bn, epsilon = 1e-12);
        assert_relative_eq!(
            w.w(2, 0),
            2.0 * (bp * bp + bp * bn + bn * bn),
            epsilon = 1e-12
        );
        // the cross-covariance is untouched by independent noise
        assert_relative_eq!(
            w.w(1, 1) - w.w(1, 0) * w.w(0, 1),
            bp * (bp + 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn loss_scaling_of_means_and_covariance() {
        let spec = TwinBeamSpec::new(0.2, 0.0, 0.0, 2).unwrap();
        let ideal = analytic_moments(&run(spec, 1.0, 0.0, 1, 0));
        let half = analytic_moments(&run(spec, 0.5, 0.0, 1, 0));
        assert_relative_eq!(half.w(1, 0), 0.5 * ideal.w(1, 0), epsilon = 1e-12);
        let cov_ideal = ideal.w(1, 1) - ideal.w(1, 0) * ideal.w(0, 1);
        let cov_half = half.w(1, 1) - half.w(1, 0) * half.w(0, 1);
        assert_relative_eq!(cov_half, 0.25 * cov_ideal, epsilon = 1e-12);
    }

    #[test]
    fn simulator_matches_analytic_moments() {
        // Bp = 0.1, M = 10, ideal detection: <n1> = 1, cross-covariance 1.1
        let spec = TwinBeamSpec::new(0.1, 0.0, 0.0, 10).unwrap();
        let r = run(spec, 1.0, 0.0, 200_000, 4242);
        let h = simulate(&r);
        let (w, se) = intensity_moments_from_histogram(&h, BootstrapConfig::default()).unwrap();
        let exact = analytic_moments(&r);
        assert_relative_eq!(exact.w(1, 0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(exact.w(1, 1) - exact.w(1, 0) * exact.w(0, 1), 1.1, epsilon = 1e-10);
        for (k, l) in [(1, 0), (0, 1), (1, 1), (2, 0), (2, 1), (2, 2)] {
            let diff = (w.w(k, l) - exact.w(k, l)).abs();
            assert!(
                diff <= 4.0 * se.se[k][l],
                "moment ({k},{l}): sample {} vs exact {} (se {})",
                w.w(k, l),
                exact.w(k, l),
                se.se[k][l]
            );
        }
    }

    #[test]
    fn lossy_dark_simulator_matches_analytic_moments() {
        let spec = TwinBeamSpec::new(0.15, 0.05, 0.02, 4).unwrap();
        let r = run(spec, 0.6, 0.3, 150_000, 7777);
        let h = simulate(&r);
        let (w, se) = intensity_moments_from_histogram(&h, BootstrapConfig::default()).unwrap();
        let exact = analytic_moments(&r);
        for (k, l) in [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 2)] {
            let diff = (w.w(k, l) - exact.w(k, l)).abs();
            assert!(
                diff <= 4.0 * se.se[k][l],
                "moment ({k},{l}): sample {} vs exact {} (se {})",
                w.w(k, l),
                exact.w(k, l),
                se.se[k][l]
            );
        }
    }

    #[test]
    fn saturation_clamps_counts() {
        let spec = TwinBeamSpec::new(2.0, 0.0, 0.0, 5).unwrap();
        let det = DetectorSpec::new(1.0, 0.0, Some(3)).unwrap();
        let r = SimRun::new(spec, (det, det), 2000, 5).unwrap();
        let h = simulate(&r);
        let (d1, d2) = h.dims();
        assert!(d1 <= 3 && d2 <= 3, "dims ({d1}, {d2})");
    }

    #[test]
    fn geometric_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 0.7;
        let n = 200_000;
        let sum: u64 = (0..n).map(|_| geometric(&mut rng, b)).sum();
        let mean = sum as f64 / n as f64;
        // var of geometric = b(1+b); SE = sqrt(var/n)
        let se = (b * (1.0 + b) / n as f64).sqrt();
        assert!((mean - b).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn metadata_names_generator() {
        let r = run(TwinBeamSpec::new(0.1, 0.0, 0.0, 1).unwrap(), 1.0, 0.0, 10, 1);
        let md = RunMetadata::of(&r);
        assert_eq!(md.generator, "chacha8");
        let json = serde_json::to_string(&md).unwrap();
        assert!(json.contains("\"generator\":\"chacha8\""));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(DetectorSpec::new(0.0, 0.0, None).is_err());
        assert!(DetectorSpec::new(0.5, -1.0, None).is_err());
        let spec = TwinBeamSpec::new(0.1, 0.0, 0.0, 1).unwrap();
        let det = DetectorSpec::ideal();
        assert!(SimRun::new(spec, (det, det), 0, 1).is_err());
    }
}
