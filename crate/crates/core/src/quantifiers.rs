//! Correlation quantifiers of two-beam Gaussian fields computed from
//! intensity moments: purities, Renyi-2 entropies, Kullback-Leibler
//! divergence, Gaussian steering, logarithmic-negativity bounds, the
//! Renyi-2 entanglement bracket and merged-beam squeezing measures, plus
//! the exact symplectic oracle values used to verify the moment formulas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{check_physical, CovMatrix};
use crate::moments::{merge_beams, reduce_per_mode, IntensityMoments, SingleBeamMoments};

/// Super-unity purities within this tolerance are clamped to 1.
pub const PURITY_CLAMP: f64 = 1e-9;
/// Square-root arguments more negative than this (relative) fail with
/// DomainError; smaller negatives are clamped to 0.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Global covariance determinant from intensity moments up to order 4
/// (the 13-term fourth-order polynomial). May come out nonpositive for
/// moment tables incompatible with a Gaussian state; the caller decides.
pub fn det_global_from_moments(w: &IntensityMoments) -> f64 {
    let w10 = w.w(1, 0);
    let w01 = w.w(0, 1);
    let w20 = w.w(2, 0);
    let w02 = w.w(0, 2);
    let w11 = w.w(1, 1);
    let w21 = w.w(2, 1);
    let w12 = w.w(1, 2);
    let w22 = w.w(2, 2);
    let s = w10 + w01;

    1.0 + 4.0 * s + 12.0 * s * s
        - 4.0 * w20 * (1.0 + 6.0 * w01 + 24.0 * w01 * w01)
        - 4.0 * w02 * (1.0 + 6.0 * w10 + 24.0 * w10 * w10)
        + 8.0 * w21 * (1.0 + 6.0 * w01)
        + 8.0 * w12 * (1.0 + 6.0 * w10)
        - 8.0 * w11 * (1.0 + 6.0 * w10 + 6.0 * w01 + 48.0 * w10 * w01)
        + 96.0 * w10 * w01 * (w10 + w01 + 5.0 * w10 * w01)
        + 24.0 * w20 * w02
        - 8.0 * w22
        + 48.0 * w11 * w11
}

/// Marginal covariance determinant of beam j from its first two moments.
pub fn det_marginal_from_moments(w: &IntensityMoments, j: u8) -> f64 {
    let (w1, w2) = match j {
        1 => (w.w(1, 0), w.w(2, 0)),
        2 => (w.w(0, 1), w.w(0, 2)),
        _ => panic!("beam index must be 1 or 2"),
    };
    1.0 + 4.0 * w1 + 12.0 * w1 * w1 - 4.0 * w2
}

fn purity_of_det(det: f64, which: &'static str) -> Result<f64> {
    if det <= 0.0 {
        return Err(Error::NonPositiveDeterminant { which, value: det });
    }
    let mu = 1.0 / det.sqrt();
    if mu > 1.0 + PURITY_CLAMP {
        // reported as-is; downstream formulas flag it
        Ok(mu)
    } else {
        Ok(mu.min(1.0))
    }
}

/// Global and marginal purities; values in (1, 1 + 1e-9] clamp to 1.
pub fn purities(w: &IntensityMoments) -> Result<(f64, f64, f64)> {
    let mu = purity_of_det(det_global_from_moments(w), "global covariance")?;
    let mu1 = purity_of_det(det_marginal_from_moments(w, 1), "beam-1 covariance")?;
    let mu2 = purity_of_det(det_marginal_from_moments(w, 2), "beam-2 covariance")?;
    Ok((mu, mu1, mu2))
}

/// Renyi-2 entropy S_R = -ln mu.
pub fn renyi2(mu: f64) -> f64 {
    -mu.ln()
}

/// Kullback-Leibler divergence between the state and the product of its
/// marginals: H = ln(mu / (mu1 mu2)).
pub fn kl_divergence(mu: f64, mu1: f64, mu2: f64) -> f64 {
    (mu / (mu1 * mu2)).ln()
}

/// One-way Gaussian steering of the other beam by beam j:
/// G = max{0, ln(mu/mu_j)}.
pub fn steering(mu: f64, mu_j: f64) -> f64 {
    (mu / mu_j).ln().max(0.0)
}

/// Two-way steering requires both directions strictly positive.
pub fn two_way_steering(mu: f64, mu1: f64, mu2: f64) -> bool {
    steering(mu, mu1) > 0.0 && steering(mu, mu2) > 0.0
}

fn guarded_sqrt(arg: f64, scale: f64) -> Result<f64> {
    if arg < -DOMAIN_TOL * scale.max(1.0) {
        return Err(Error::DomainError(arg));
    }
    Ok(arg.max(0.0).sqrt())
}

/// Purity-only lower and upper bounds on the logarithmic negativity,
/// clamped below at 0. Evaluated in a cancellation-free rearrangement that
/// stays accurate for purities down to 1e-6 (the direct textbook form
/// subtracts nearly equal large terms there).
pub fn negativity_bounds(mu: f64, mu1: f64, mu2: f64) -> Result<(f64, f64)> {
    for m in [mu, mu1, mu2] {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Unphysical(format!("purity {m} not in (0, 1]")));
        }
    }
    // E_max: the log argument (s - R)/(mu (s + R)) with s = mu1 + mu2 and
    // R = sqrt(s^2 - 4 mu1^2 mu2^2 / mu) simplifies to the reciprocal of
    // (mu (s + R) / (2 mu1 mu2))^2.
    let s = mu1 + mu2;
    let r = guarded_sqrt(s * s - 4.0 * mu1 * mu1 * mu2 * mu2 / mu, s * s)?;
    let e_max = (mu * (s + r) / (2.0 * mu1 * mu2)).ln().max(0.0);

    // E_min: argument t - sqrt(t^2 - 1/mu^2) rewritten with the conjugate,
    // t = 1/mu1^2 + 1/mu2^2 - 1/(2 mu^2) - 1/2. A nonpositive t or a
    // negative discriminant makes the argument leave (0, 1): the lower
    // bound certifies nothing and clamps to 0 (e.g. thermal products).
    let inv_mu_sq = 1.0 / (mu * mu);
    let t = 1.0 / (mu1 * mu1) + 1.0 / (mu2 * mu2) - 0.5 * inv_mu_sq - 0.5;
    let disc = t * t - inv_mu_sq;
    let e_min = if t <= 0.0 || disc <= 0.0 {
        0.0
    } else {
        let arg = inv_mu_sq / (t + disc.sqrt());
        (-0.5 * arg.ln()).max(0.0)
    };

    Ok((e_min.min(e_max), e_max))
}

/// Exact logarithmic negativity from the partial-transpose symplectic
/// eigenvalue of a physical covariance matrix.
pub fn negativity_exact(c: &CovMatrix) -> Result<f64> {
    let sym = check_physical(c)?;
    if !sym.physical {
        return Err(Error::Unphysical(format!("nu_minus = {}", sym.nu_minus)));
    }
    Ok((-sym.nu_tilde_minus.ln()).max(0.0))
}

/// Relative half-width of the negativity bracket; None when both bounds
/// vanish (0/0).
pub fn relative_error(e_min: f64, e_max: f64) -> Option<f64> {
    if e_min + e_max == 0.0 {
        None
    } else {
        Some((e_max - e_min) / (e_max + e_min))
    }
}

/// Principal squeezing variance of a single (merged) beam:
/// lambda = 1 + 2(B - |C|), |C|^2 = <W^2> - 2<W>^2.
pub fn squeezing_variance(b: &SingleBeamMoments) -> Result<(f64, f64, f64)> {
    let mean = b.w[1];
    let c_sq = b.w[2] - 2.0 * mean * mean;
    let tol = 1e-9 * (1.0 + b.w[2].abs());
    if c_sq < -tol {
        return Err(Error::NegativeCSquared(c_sq));
    }
    let abs_c = c_sq.max(0.0).sqrt();
    Ok((1.0 + 2.0 * (mean - abs_c), mean, abs_c))
}

/// Normalized second-order correlation g2 = <W^2>/<W>^2; super-Gaussian
/// statistics iff g2 > 2.
pub fn g2(b: &SingleBeamMoments) -> Result<f64> {
    let mean = b.w[1];
    if mean <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(b.w[2] / (mean * mean))
}

/// Bracket on the Gaussian Renyi-2 entanglement measure: G <= E2 <= H/2.
pub fn renyi2_entanglement_bracket(h: f64, g_1to2: f64) -> Result<(f64, f64)> {
    let upper = h / 2.0;
    if g_1to2 > upper + 1e-12 {
        return Err(Error::InvertedBracket { lower: g_1to2, upper });
    }
    Ok((g_1to2, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Entangled,
    Separable,
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Entangled => "entangled",
            Verdict::Separable => "separable",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

/// Entanglement verdict from the negativity bracket.
pub fn classify(e_min: f64, e_max: f64) -> Verdict {
    if e_min > 0.0 {
        Verdict::Entangled
    } else if e_max == 0.0 {
        Verdict::Separable
    } else {
        Verdict::Indeterminate
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Reduce moments to one typical mode before evaluating quantifiers.
    pub per_mode: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { per_mode: true }
    }
}

/// All quantifiers of one analyzed field. `errors` carries bootstrap
/// standard errors keyed by field name when resampled data exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QCReport {
    pub mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(rename = "S_R")]
    pub s_r: f64,
    #[serde(rename = "S_R1")]
    pub s_r1: f64,
    #[serde(rename = "S_R2")]
    pub s_r2: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "G_1to2")]
    pub g_1to2: f64,
    #[serde(rename = "G_2to1")]
    pub g_2to1: f64,
    pub two_way_steering: bool,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    #[serde(rename = "E_max")]
    pub e_max: f64,
    #[serde(rename = "delta_EN")]
    pub delta_en: Option<f64>,
    #[serde(rename = "E2_lower")]
    pub e2_lower: f64,
    #[serde(rename = "E2_upper")]
    pub e2_upper: f64,
    /// None when the merged beam has zero mean (vacuum).
    pub lambda_merged: Option<f64>,
    pub g2_merged: Option<f64>,
    pub entanglement_verdict: Verdict,
    pub per_mode: bool,
    #[serde(rename = "M")]
    pub modes: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub errors: BTreeMap<String, f64>,
}

impl QCReport {
    pub const CSV_HEADER: &'static str = "mu,mu1,mu2,S_R,S_R1,S_R2,H,G_1to2,G_2to1,\
         E_min,E_max,delta_EN,E2_lower,E2_upper,lambda_merged,g2_merged,verdict,per_mode,M";

    /// One flat CSV row matching `CSV_HEADER`; undefined values are empty.
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mu,
            self.mu1,
            self.mu2,
            self.s_r,
            self.s_r1,
            self.s_r2,
            self.h,
            self.g_1to2,
            self.g_2to1,
            self.e_min,
            self.e_max,
            opt(self.delta_en),
            self.e2_lower,
            self.e2_upper,
            opt(self.lambda_merged),
            opt(self.g2_merged),
            self.entanglement_verdict,
            self.per_mode,
            self.modes,
        )
    }

    /// Numeric fields in a stable order, for bootstrap aggregation.
    pub fn numeric_fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("mu", Some(self.mu)),
            ("mu1", Some(self.mu1)),
            ("mu2", Some(self.mu2)),
            ("S_R", Some(self.s_r)),
            ("S_R1", Some(self.s_r1)),
            ("S_R2", Some(self.s_r2)),
            ("H", Some(self.h)),
            ("G_1to2", Some(self.g_1to2)),
            ("G_2to1", Some(self.g_2to1)),
            ("E_min", Some(self.e_min)),
            ("E_max", Some(self.e_max)),
            ("delta_EN", self.delta_en),
            ("E2_lower", Some(self.e2_lower)),
            ("E2_upper", Some(self.e2_upper)),
            ("lambda_merged", self.lambda_merged),
            ("g2_merged", self.g2_merged),
        ]
    }
}

/// Evaluate every quantifier from a complete moment table. With
/// `per_mode` set and M > 1 the table is first reduced to one typical mode.
pub fn full_report(w: &IntensityMoments, modes: f64, opts: ReportOptions) -> Result<QCReport> {
    if !(modes >= 1.0) {
        return Err(Error::BadModeCount(modes));
    }
    let per_mode = opts.per_mode && modes > 1.0;
    let reduced;
    let w = if per_mode {
        reduced = reduce_per_mode(w, modes)?;
        &reduced
    } else {
        w
    };

    let (mu, mu1, mu2) = purities(w)?;
    let h = kl_divergence(mu, mu1, mu2);
    let g_1to2 = steering(mu, mu1);
    let g_2to1 = steering(mu, mu2);
    let (e_min, e_max) = negativity_bounds(mu, mu1, mu2)?;
    let (e2_lower, e2_upper) = renyi2_entanglement_bracket(h.max(0.0), g_1to2)?;

    let merged = merge_beams(w);
    let lambda_merged = match squeezing_variance(&merged) {
        Ok((lambda, _, _)) => Some(lambda),
        Err(Error::NegativeCSquared(_)) => None,
        Err(e) => return Err(e),
    };
    let g2_merged = match g2(&merged) {
        Ok(v) => Some(v),
        Err(Error::ZeroMean) => None,
        Err(e) => return Err(e),
    };

    Ok(QCReport {
        mu,
        mu1,
        mu2,
        s_r: renyi2(mu),
        s_r1: renyi2(mu1),
        s_r2: renyi2(mu2),
        h,
        g_1to2,
        g_2to1,
        two_way_steering: g_1to2 > 0.0 && g_2to1 > 0.0,
        e_min,
        e_max,
        delta_en: relative_error(e_min, e_max),
        e2_lower,
        e2_upper,
        lambda_merged,
        g2_merged,
        entanglement_verdict: classify(e_min, e_max),
        per_mode,
        modes,
        errors: BTreeMap::new(),
    })
}

/// Per-quantifier comparison of an analyzed field against the ideal noisy
/// twin beam fitted to its first and second per-mode moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceComparison {
    /// Fitted per-mode pair mean Bp.
    pub pair_mean: f64,
    /// Fitted per-mode noise means (Bn1, Bn2), clamped at 0.
    pub noise: (f64, f64),
    /// field name -> (observed, twin-beam reference, observed/reference).
    pub rows: Vec<(String, f64, f64, Option<f64>)>,
}

/// Fit a noisy twin beam to the per-mode moments and report each observed
/// quantifier next to the model value. Informative, not a pass/fail gate.
pub fn compare_to_twin_beam(w: &IntensityMoments, modes: f64) -> Result<ReferenceComparison> {
    let per_mode = reduce_per_mode(w, modes)?;
    let b1 = per_mode.w(1, 0);
    let b2 = per_mode.w(0, 1);
    let d_sq = (per_mode.w(1, 1) - b1 * b2).max(0.0);
    // D^2 = Bp (Bp + 1)  =>  Bp = (sqrt(1 + 4 D^2) - 1)/2
    let bp = 0.5 * ((1.0 + 4.0 * d_sq).sqrt() - 1.0);
    let spec = crate::gaussian::TwinBeamSpec::new(
        bp,
        (b1 - bp).max(0.0),
        (b2 - bp).max(0.0),
        1,
    )?;
    let ref_w = crate::gaussian::forward_moments(&crate::gaussian::params_of_twin_beam(&spec));

    let obs = full_report(&per_mode, 1.0, ReportOptions { per_mode: false })?;
    let model = full_report(&ref_w, 1.0, ReportOptions { per_mode: false })?;
    let model_fields: BTreeMap<_, _> = model.numeric_fields().into_iter().collect();
    let rows = obs
        .numeric_fields()
        .into_iter()
        .filter_map(|(name, ov)| {
            let mv = model_fields.get(name).copied().flatten()?;
            let ov = ov?;
            let ratio = if mv != 0.0 { Some(ov / mv) } else { None };
            Some((name.to_string(), ov, mv, ratio))
        })
        .collect();

    Ok(ReferenceComparison { pair_mean: bp, noise: (spec.noise1, spec.noise2), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{
        covariance_of, forward_moments, params_of_twin_beam, GaussianParams, TwinBeamSpec,
    };
    use approx::assert_relative_eq;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn tmsv_moments(bp: f64) -> IntensityMoments {
        forward_moments(&params_of_twin_beam(&TwinBeamSpec::new(bp, 0.0, 0.0, 1).unwrap()))
    }

    fn thermal_product(b1: f64, b2: f64) -> IntensityMoments {
        forward_moments(
            &GaussianParams::new_unchecked(
                b1,
                b2,
                num_complex::Complex64::ZERO,
                num_complex::Complex64::ZERO,
                num_complex::Complex64::ZERO,
                num_complex::Complex64::ZERO,
            )
            .unwrap(),
        )
    }

    #[test]
    fn det_global_vacuum() {
        assert_eq!(det_global_from_moments(&IntensityMoments::vacuum()), 1.0);
    }

    #[test]
    fn det_global_uncorrelated_thermals() {
        let w = thermal_product(0.5, 0.5);
        assert_relative_eq!(det_global_from_moments(&w), 16.0, epsilon = 1e-9);
    }

    #[test]
    fn det_global_tmsv_is_one() {
        for bp in [0.1, 0.5, 1.0, 3.0] {
            let w = tmsv_moments(bp);
            assert_relative_eq!(det_global_from_moments(&w), 1.0, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn det_marginal_examples() {
        assert_eq!(det_marginal_from_moments(&IntensityMoments::vacuum(), 1), 1.0);
        // thermal B = 1: <W> = 1, <W^2> = 2
        let w = thermal_product(1.0, 0.0);
        assert_relative_eq!(det_marginal_from_moments(&w, 1), 9.0, epsilon = 1e-12);
        // coherent beam mean 1: <W^2> = 1 -> reported as-is
        let w = IntensityMoments::from_fn(|k, _| if k <= 2 { 1.0_f64.powi(k as i32) } else { 1.0 });
        assert_relative_eq!(det_marginal_from_moments(&w, 1), 13.0, epsilon = 1e-12);
    }

    #[test]
    fn purities_examples() {
        let (mu, mu1, mu2) = purities(&IntensityMoments::vacuum()).unwrap();
        assert_eq!((mu, mu1, mu2), (1.0, 1.0, 1.0));

        let (mu, mu1, mu2) = purities(&tmsv_moments(1.0)).unwrap();
        assert_relative_eq!(mu, 1.0, epsilon = 1e-9);
        assert_relative_eq!(mu1, 1.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(mu2, 1.0 / 3.0, epsilon = 1e-9);

        let (mu, mu1, mu2) = purities(&thermal_product(0.5, 0.5)).unwrap();
        assert_relative_eq!(mu, 0.25, epsilon = 1e-9);
        assert_relative_eq!(mu1, 0.5, epsilon = 1e-9);
        assert_relative_eq!(mu2, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn purities_nonpositive_determinant() {
        // moments of a "state" violating Gaussianity hard enough to push
        // det sigma_1 negative: <W^2> large
        let w = IntensityMoments::from_fn(|k, l| match (k, l) {
            (0, 0) => 1.0,
            (2, 0) => 100.0,
            _ => 0.0,
        });
        assert!(matches!(
            purities(&w),
            Err(Error::NonPositiveDeterminant { which: "global covariance", .. })
        ));
    }

    #[test]
    fn entropy_divergence_steering_gold() {
        let (mu, mu1, mu2) = purities(&tmsv_moments(1.0)).unwrap();
        assert_relative_eq!(kl_divergence(mu, mu1, mu2), 9.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(steering(mu, mu1), 3.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(steering(mu, mu2), 3.0f64.ln(), epsilon = 1e-9);
        assert!(two_way_steering(mu, mu1, mu2));

        // products: H = 0, S_R additive
        let (mu, mu1, mu2) = purities(&thermal_product(0.5, 0.5)).unwrap();
        assert_relative_eq!(kl_divergence(mu, mu1, mu2), 0.0, epsilon = 1e-9);
        assert_relative_eq!(renyi2(mu), 4.0f64.ln(), epsilon = 1e-9);
        assert_eq!(steering(0.5, 0.9), 0.0);
        assert!(!two_way_steering(mu, mu1, mu2));
    }

    #[test]
    fn negativity_bounds_tmsv() {
        let (e_min, e_max) = negativity_bounds(1.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let gold = 2.0 * (1.0 + SQRT2).ln();
        assert_relative_eq!(e_min, gold, epsilon = 1e-9);
        assert_relative_eq!(e_max, gold, epsilon = 1e-9);
    }

    #[test]
    fn negativity_bounds_thermal_product_separable() {
        let (mu, mu1, mu2) = purities(&thermal_product(0.5, 0.5)).unwrap();
        let (e_min, e_max) = negativity_bounds(mu, mu1, mu2).unwrap();
        assert_eq!(e_min, 0.0);
        assert_eq!(e_max, 0.0);
        assert_eq!(classify(e_min, e_max), Verdict::Separable);
    }

    #[test]
    fn negativity_exact_gold() {
        let vac = covariance_of(&GaussianParams::vacuum());
        assert_eq!(negativity_exact(&vac).unwrap(), 0.0);

        let c = covariance_of(&params_of_twin_beam(&TwinBeamSpec::new(1.0, 0.0, 0.0, 1).unwrap()));
        assert_relative_eq!(
            negativity_exact(&c).unwrap(),
            2.0 * (1.0 + SQRT2).ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn negativity_bracket_noisy_twin_beam() {
        let spec = TwinBeamSpec::new(0.5, 0.2, 0.2, 1).unwrap();
        let g = params_of_twin_beam(&spec);
        let w = forward_moments(&g);
        let (mu, mu1, mu2) = purities(&w).unwrap();
        let (e_min, e_max) = negativity_bounds(mu, mu1, mu2).unwrap();
        let exact = negativity_exact(&covariance_of(&g)).unwrap();
        assert!(e_min - 1e-9 <= exact && exact <= e_max + 1e-9, "{e_min} {exact} {e_max}");
    }

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(1.0, 1.0), Some(0.0));
        assert_eq!(relative_error(0.0, 0.5), Some(1.0));
        assert_relative_eq!(relative_error(1.0, 1.5).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(relative_error(0.0, 0.0), None);
    }

    #[test]
    fn squeezing_examples() {
        let vac = SingleBeamMoments { w: [1.0, 0.0, 0.0, 0.0, 0.0] };
        let (lambda, _, _) = squeezing_variance(&vac).unwrap();
        assert_eq!(lambda, 1.0);

        // merged two-mode squeezed vacuum Bp = 0.125
        let merged = merge_beams(&tmsv_moments(0.125));
        assert_relative_eq!(merged.w[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(merged.w[2], 0.375, epsilon = 1e-12);
        let (lambda, b, abs_c) = squeezing_variance(&merged).unwrap();
        assert_relative_eq!(abs_c, 0.5, epsilon = 1e-9);
        assert_relative_eq!(b, 0.25, epsilon = 1e-9);
        assert_relative_eq!(lambda, 0.5, epsilon = 1e-9);

        // thermal B = 1: <W^2> = 2B^2 -> |C| = 0, lambda = 3
        let th = SingleBeamMoments { w: [1.0, 1.0, 2.0, 6.0, 24.0] };
        let (lambda, _, abs_c) = squeezing_variance(&th).unwrap();
        assert_relative_eq!(abs_c, 0.0, epsilon = 1e-9);
        assert_relative_eq!(lambda, 3.0, epsilon = 1e-9);

        // coherent light violates the model: <W^2> - 2<W>^2 = -<W>^2 < 0
        let coh = SingleBeamMoments { w: [1.0, 1.0, 1.0, 1.0, 1.0] };
        assert!(matches!(squeezing_variance(&coh), Err(Error::NegativeCSquared(_))));
    }

    #[test]
    fn g2_examples() {
        let coh = SingleBeamMoments { w: [1.0, 1.0, 1.0, 1.0, 1.0] };
        assert_relative_eq!(g2(&coh).unwrap(), 1.0, epsilon = 1e-12);
        let th = SingleBeamMoments { w: [1.0, 1.0, 2.0, 6.0, 24.0] };
        assert_relative_eq!(g2(&th).unwrap(), 2.0, epsilon = 1e-12);
        // merged TMSV Bp = 0.5: <W> = 1, <W^2> = 3
        let merged = merge_beams(&tmsv_moments(0.5));
        assert_relative_eq!(g2(&merged).unwrap(), 3.0, epsilon = 1e-9);
        let vac = SingleBeamMoments { w: [1.0, 0.0, 0.0, 0.0, 0.0] };
        assert!(matches!(g2(&vac), Err(Error::ZeroMean)));
    }

    #[test]
    fn bracket_examples() {
        let (lo, hi) = renyi2_entanglement_bracket(9.0f64.ln(), 3.0f64.ln()).unwrap();
        assert_relative_eq!(lo, hi, epsilon = 1e-12);
        assert_eq!(renyi2_entanglement_bracket(0.0, 0.0).unwrap(), (0.0, 0.0));
        assert_eq!(renyi2_entanglement_bracket(2.0, 0.5).unwrap(), (0.5, 1.0));
        assert!(matches!(
            renyi2_entanglement_bracket(1.0, 0.9),
            Err(Error::InvertedBracket { .. })
        ));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(1.7, 1.8), Verdict::Entangled);
        assert_eq!(classify(0.0, 0.0), Verdict::Separable);
        assert_eq!(classify(0.0, 0.1), Verdict::Indeterminate);
    }

    #[test]
    fn full_report_vacuum() {
        let r = full_report(&IntensityMoments::vacuum(), 1.0, ReportOptions::default()).unwrap();
        assert_eq!((r.mu, r.mu1, r.mu2), (1.0, 1.0, 1.0));
        assert_eq!(r.h, 0.0);
        assert_eq!(r.g_1to2, 0.0);
        assert_eq!(r.e_max, 0.0);
        assert_eq!(r.entanglement_verdict, Verdict::Separable);
        assert_eq!(r.delta_en, None);
        assert_eq!(r.g2_merged, None);
        assert_eq!(r.lambda_merged, Some(1.0));
    }

    #[test]
    fn full_report_tmsv_gold() {
        let r = full_report(&tmsv_moments(1.0), 1.0, ReportOptions::default()).unwrap();
        assert_relative_eq!(r.mu, 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.h, 9.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(r.g_1to2, 3.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(r.e_min, 2.0 * (1.0 + SQRT2).ln(), epsilon = 1e-9);
        assert_relative_eq!(r.e2_lower, r.e2_upper, epsilon = 1e-9);
        assert_eq!(r.entanglement_verdict, Verdict::Entangled);
        assert_eq!(r.delta_en.map(|d| d.abs() < 1e-9), Some(true));
    }

    #[test]
    fn full_report_per_mode_reduction() {
        // M-fold composition reduced per mode must reproduce the M = 1 report
        let w1 = tmsv_moments(0.2);
        let w10 = crate::moments::compose_iid(&w1, 10.0);
        let single = full_report(&w1, 1.0, ReportOptions::default()).unwrap();
        let reduced = full_report(&w10, 10.0, ReportOptions::default()).unwrap();
        assert_relative_eq!(single.mu, reduced.mu, epsilon = 1e-9);
        assert_relative_eq!(single.e_min, reduced.e_min, epsilon = 1e-9);
        assert!(reduced.per_mode);
    }

    #[test]
    fn full_report_propagates_bad_determinant() {
        let w = IntensityMoments::from_fn(|k, l| match (k, l) {
            (0, 0) => 1.0,
            (2, 0) => 100.0,
            _ => 0.0,
        });
        assert!(matches!(
            full_report(&w, 1.0, ReportOptions::default()),
            Err(Error::NonPositiveDeterminant { .. })
        ));
    }

    #[test]
    fn csv_row_field_count() {
        let r = full_report(&tmsv_moments(0.5), 1.0, ReportOptions::default()).unwrap();
        let header_cols = QCReport::CSV_HEADER.split(',').count();
        assert_eq!(r.to_csv_row().split(',').count(), header_cols);
    }

    #[test]
    fn reference_comparison_recovers_exact_twin_beam() {
        let spec = TwinBeamSpec::new(0.1, 0.05, 0.05, 1).unwrap();
        let w = crate::moments::compose_iid(
            &forward_moments(&params_of_twin_beam(&spec)),
            10.0,
        );
        let cmp = compare_to_twin_beam(&w, 10.0).unwrap();
        assert_relative_eq!(cmp.pair_mean, 0.1, epsilon = 1e-9);
        assert_relative_eq!(cmp.noise.0, 0.05, epsilon = 1e-9);
        for (name, obs, model, ratio) in &cmp.rows {
            assert_relative_eq!(obs, model, epsilon = 1e-8, max_relative = 1e-8);
            if let Some(r) = ratio {
                assert_relative_eq!(*r, 1.0, epsilon = 1e-7, max_relative = 1e-7);
            }
            assert!(!name.is_empty());
        }
    }
}
