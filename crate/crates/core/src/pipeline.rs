//! End-to-end analysis: photocount histogram -> (optional EM deconvolution)
//! -> intensity moments -> mode reduction -> quantifier report, with
//! bootstrap standard errors propagated to the quantifier level.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::{em_deconvolve, EmOptions};
use crate::error::{Error, Result};
use crate::moments::{
    raw_moments, resample_histogram, sample_intensity_moments, to_intensity_moments, Beam,
    estimate_modes, IntensityMoments, JointHistogram,
};
use crate::quantifiers::{full_report, QCReport, ReportOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSetting {
    /// Multithermal second-order estimator on the joint moments.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// When set, EM-deconvolve the detector response before taking moments;
    /// when None, moments describe the detected field directly.
    pub deconvolve: Option<DeconvolveOptions>,
    pub modes: ModeSetting,
    pub per_mode: bool,
    /// Bootstrap resamples for quantifier standard errors; 0 disables.
    pub resamples: usize,
    pub bootstrap_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeconvolveOptions {
    pub efficiency: (f64, f64),
    pub dark: (f64, f64),
    /// Photon-number cutoff of the reconstructed distribution; None sizes
    /// it from the histogram support and efficiency.
    pub cutoff: Option<(usize, usize)>,
    pub em: EmOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            deconvolve: None,
            modes: ModeSetting::Auto,
            per_mode: true,
            resamples: 200,
            bootstrap_seed: 0x0b007,
        }
    }
}

fn moments_of(hist: &JointHistogram, counts: &[Vec<u64>], opts: &AnalyzeOptions) -> Result<IntensityMoments> {
    let total = hist.total_shots() as f64;
    match &opts.deconvolve {
        None => Ok(sample_intensity_moments(counts, total)),
        Some(d) => {
            let work = JointHistogram::new(counts.to_vec(), hist.window_group())?;
            let (c1, c2) = work.dims();
            let auto = |c: usize, eta: f64, dark: f64| {
                (((c as f64 - dark).max(0.0) / eta).ceil() as usize + 4).max(c)
            };
            let cutoff = d.cutoff.unwrap_or((
                auto(c1, d.efficiency.0, d.dark.0),
                auto(c2, d.efficiency.1, d.dark.1),
            ));
            let r = em_deconvolve(&work, d.efficiency, d.dark, cutoff, d.em)?;
            if !r.converged {
                return Err(Error::NotConverged {
                    iterations: r.iterations,
                    change: r.final_change,
                });
            }
            Ok(to_intensity_moments(&raw_moments(&r.dist, 4)))
        }
    }
}

fn report_of(w: &IntensityMoments, opts: &AnalyzeOptions) -> Result<(QCReport, f64)> {
    let modes = match opts.modes {
        ModeSetting::Fixed(m) => m,
        // per-beam multithermal estimators; the joint variant is biased by
        // the pairing correlation (it estimates M Bp/(Bp+1) for twin beams)
        ModeSetting::Auto => {
            let m1 = estimate_modes(w, Beam::One)?;
            let m2 = estimate_modes(w, Beam::Two)?;
            (0.5 * (m1 + m2)).max(1.0)
        }
    };
    let report = full_report(w, modes, ReportOptions { per_mode: opts.per_mode })?;
    Ok((report, modes))
}

/// Outcome of one analysis, including bootstrap diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Analysis {
    pub report: QCReport,
    pub modes: f64,
    /// Resamples whose quantifier evaluation failed a model constraint
    /// (excluded from the standard errors).
    pub bootstrap_failures: usize,
}

/// Full analysis of a photocount histogram. Bootstrap standard errors are
/// computed by re-running the identical pipeline on multinomial resamples
/// of the histogram (ChaCha8 resampling stream).
pub fn analyze(hist: &JointHistogram, opts: &AnalyzeOptions) -> Result<Analysis> {
    if hist.total_shots() == 0 {
        return Err(Error::EmptyData);
    }
    let w = moments_of(hist, hist.counts(), opts)?;
    let (mut report, modes) = report_of(&w, opts)?;

    let mut failures = 0usize;
    if opts.resamples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.bootstrap_seed);
        let mut sums: BTreeMap<&'static str, (f64, f64, usize)> = BTreeMap::new();
        for _ in 0..opts.resamples {
            let counts = resample_histogram(hist, &mut rng);
            let resampled = moments_of(hist, &counts, opts)
                .and_then(|w| report_of(&w, opts));
            match resampled {
                Ok((r, _)) => {
                    for (name, value) in r.numeric_fields() {
                        if let Some(v) = value {
                            let e = sums.entry(name).or_insert((0.0, 0.0, 0));
                            e.0 += v;
                            e.1 += v * v;
                            e.2 += 1;
                        }
                    }
                }
                Err(_) => failures += 1,
            }
        }
        for (name, (s, sq, n)) in sums {
            if n > 1 {
                let nf = n as f64;
                let var = (sq - s * s / nf) / (nf - 1.0);
                report.errors.insert(name.to_string(), var.max(0.0).sqrt());
            }
        }
    }

    Ok(Analysis { report, modes, bootstrap_failures: failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::TwinBeamSpec;
    use crate::synth::{analytic_moments, simulate, DetectorSpec, SimRun};
    use approx::assert_relative_eq;

    #[test]
    fn analyze_vacuum_histogram() {
        let h = JointHistogram::from_cells(&[(0, 0, 500)], 1).unwrap();
        let opts = AnalyzeOptions { resamples: 10, ..AnalyzeOptions::default() };
        // vacuum has degenerate variance: the auto mode estimator must fail
        assert!(matches!(analyze(&h, &opts), Err(Error::DegenerateVariance(_))));
        let opts = AnalyzeOptions { modes: ModeSetting::Fixed(1.0), ..opts };
        let a = analyze(&h, &opts).unwrap();
        assert_eq!(a.report.mu, 1.0);
        assert_eq!(a.report.entanglement_verdict.to_string(), "separable");
    }

    #[test]
    fn analyze_twin_beam_within_errors() {
        let spec = TwinBeamSpec::new(0.2, 0.02, 0.02, 5).unwrap();
        let det = DetectorSpec::new(0.7, 0.0, None).unwrap();
        let run = SimRun::new(spec, (det, det), 120_000, 31).unwrap();
        let h = simulate(&run);
        let opts = AnalyzeOptions {
            modes: ModeSetting::Fixed(5.0),
            resamples: 60,
            ..AnalyzeOptions::default()
        };
        let a = analyze(&h, &opts).unwrap();
        // reference: same pipeline applied to exact detected moments
        let exact = crate::moments::reduce_per_mode(&analytic_moments(&run), 5.0).unwrap();
        let ref_report = full_report(&exact, 1.0, ReportOptions { per_mode: false }).unwrap();
        for (name, value) in a.report.numeric_fields() {
            let (Some(obs), Some(se)) = (value, a.report.errors.get(name)) else {
                continue;
            };
            let refv = ref_report
                .numeric_fields()
                .into_iter()
                .find(|(n, _)| *n == name)
                .and_then(|(_, v)| v)
                .unwrap();
            assert!(
                (obs - refv).abs() <= 5.0 * se.max(1e-9),
                "{name}: {obs} vs {refv} (se {se})"
            );
        }
        assert!(a.report.errors.contains_key("mu"));
    }

    #[test]
    fn auto_mode_estimation_recovers_m() {
        let spec = TwinBeamSpec::new(0.3, 0.0, 0.0, 8).unwrap();
        let det = DetectorSpec::ideal();
        let run = SimRun::new(spec, (det, det), 150_000, 17).unwrap();
        let h = simulate(&run);
        let opts = AnalyzeOptions { resamples: 0, ..AnalyzeOptions::default() };
        let a = analyze(&h, &opts).unwrap();
        assert_relative_eq!(a.modes, 8.0, max_relative = 0.05);
    }

    #[test]
    fn em_path_round_trips_ideal_detection() {
        let spec = TwinBeamSpec::new(0.15, 0.0, 0.0, 2).unwrap();
        let det = DetectorSpec::ideal();
        let run = SimRun::new(spec, (det, det), 30_000, 8).unwrap();
        let h = simulate(&run);
        let base = AnalyzeOptions {
            modes: ModeSetting::Fixed(2.0),
            resamples: 0,
            ..AnalyzeOptions::default()
        };
        let plain = analyze(&h, &base).unwrap();
        let em = analyze(
            &h,
            &AnalyzeOptions {
                deconvolve: Some(DeconvolveOptions {
                    efficiency: (1.0, 1.0),
                    dark: (0.0, 0.0),
                    cutoff: None,
                    em: EmOptions::default(),
                }),
                ..base
            },
        )
        .unwrap();
        assert_relative_eq!(plain.report.mu, em.report.mu, max_relative = 1e-4);
        assert_relative_eq!(plain.report.e_max, em.report.e_max, max_relative = 1e-3, epsilon = 1e-6);
    }
}
