//! Two-beam Gaussian states: parameters of the normal characteristic
//! function, covariance-matrix assembly, the Wick-expansion forward model
//! for intensity moments, physicality tests and purity parameterizations.
//!
//! Contraction convention (Perina): <a_j^2> = C_j, <a1 a2> = D12,
//! <a1^dag a2> = -Dbar12, <a_j^dag a_j> = B_j. Vacuum covariance is the
//! identity; no competing quadrature convention is exposed.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::IntensityMoments;

/// Tolerance on the uncertainty relation: physical iff nu_minus >= 1 - PHYS_TOL.
pub const PHYS_TOL: f64 = 1e-9;

/// The six coefficients of the normal characteristic function of a
/// two-beam Gaussian state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsJson", into = "ParamsJson")]
pub struct GaussianParams {
    pub b1: f64,
    pub b2: f64,
    pub c1: Complex64,
    pub c2: Complex64,
    pub d12: Complex64,
    pub dbar12: Complex64,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ParamsJson {
    B1: f64,
    B2: f64,
    C1: [f64; 2],
    C2: [f64; 2],
    D12: [f64; 2],
    Dbar12: [f64; 2],
}

impl TryFrom<ParamsJson> for GaussianParams {
    type Error = Error;
    fn try_from(j: ParamsJson) -> Result<Self> {
        GaussianParams::new_unchecked(
            j.B1,
            j.B2,
            Complex64::new(j.C1[0], j.C1[1]),
            Complex64::new(j.C2[0], j.C2[1]),
            Complex64::new(j.D12[0], j.D12[1]),
            Complex64::new(j.Dbar12[0], j.Dbar12[1]),
        )
    }
}

impl From<GaussianParams> for ParamsJson {
    fn from(g: GaussianParams) -> Self {
        ParamsJson {
            B1: g.b1,
            B2: g.b2,
            C1: [g.c1.re, g.c1.im],
            C2: [g.c2.re, g.c2.im],
            D12: [g.d12.re, g.d12.im],
            Dbar12: [g.dbar12.re, g.dbar12.im],
        }
    }
}

impl GaussianParams {
    pub fn vacuum() -> Self {
        Self {
            b1: 0.0,
            b2: 0.0,
            c1: Complex64::ZERO,
            c2: Complex64::ZERO,
            d12: Complex64::ZERO,
            dbar12: Complex64::ZERO,
        }
    }

    /// Build without the physicality check (mean intensities must still be
    /// nonnegative).
    pub fn new_unchecked(
        b1: f64,
        b2: f64,
        c1: Complex64,
        c2: Complex64,
        d12: Complex64,
        dbar12: Complex64,
    ) -> Result<Self> {
        if b1 < 0.0 || b2 < 0.0 {
            return Err(Error::Unphysical(format!("negative mean intensity ({b1}, {b2})")));
        }
        Ok(Self { b1, b2, c1, c2, d12, dbar12 })
    }

    /// Build and require the covariance matrix to pass `check_physical`.
    pub fn new_checked(
        b1: f64,
        b2: f64,
        c1: Complex64,
        c2: Complex64,
        d12: Complex64,
        dbar12: Complex64,
    ) -> Result<Self> {
        let g = Self::new_unchecked(b1, b2, c1, c2, d12, dbar12)?;
        let sym = check_physical(&covariance_of(&g))?;
        if !sym.physical {
            return Err(Error::Unphysical(format!(
                "nu_minus = {} < 1",
                sym.nu_minus
            )));
        }
        Ok(g)
    }
}

/// 4x4 quadrature covariance matrix with 2x2 blocks sigma1, sigma2, gamma.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    m: Matrix4<f64>,
}

impl CovMatrix {
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "covariance matrix asymmetric by {asym}"
            )));
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn sigma1(&self) -> Matrix2<f64> {
        self.m.fixed_view::<2, 2>(0, 0).into()
    }

    pub fn sigma2(&self) -> Matrix2<f64> {
        self.m.fixed_view::<2, 2>(2, 2).into()
    }

    pub fn gamma(&self) -> Matrix2<f64> {
        self.m.fixed_view::<2, 2>(0, 2).into()
    }

    pub fn det_global(&self) -> f64 {
        self.m.determinant()
    }

    pub fn det_sigma1(&self) -> f64 {
        self.sigma1().determinant()
    }

    pub fn det_sigma2(&self) -> f64 {
        self.sigma2().determinant()
    }

    pub fn det_gamma(&self) -> f64 {
        self.gamma().determinant()
    }

    /// Row-major 16-element array (the JSON wire format).
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[(i, j)];
            }
        }
        out
    }
}

/// Symplectic invariants of a two-mode covariance matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SymplecticData {
    pub nu_minus: f64,
    pub nu_plus: f64,
    /// Smallest symplectic eigenvalue of the partial transpose.
    pub nu_tilde_minus: f64,
    /// Seralian Delta = det sigma1 + det sigma2 + 2 det gamma.
    pub seralian: f64,
    pub physical: bool,
}

/// Noisy twin beam: thermal photon pairs with mean Bp per mode plus
/// independent thermal noise per beam, M identical modes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwinBeamSpec {
    pub pair_mean: f64,
    pub noise1: f64,
    pub noise2: f64,
    pub modes: u32,
}

impl TwinBeamSpec {
    pub fn new(pair_mean: f64, noise1: f64, noise2: f64, modes: u32) -> Result<Self> {
        if pair_mean < 0.0 || noise1 < 0.0 || noise2 < 0.0 {
            return Err(Error::Unphysical("negative twin-beam mean".into()));
        }
        if modes == 0 {
            return Err(Error::BadModeCount(0.0));
        }
        Ok(Self { pair_mean, noise1, noise2, modes })
    }
}

/// Assemble the covariance matrix from the characteristic-function
/// parameters. Vacuum maps to the identity.
pub fn covariance_of(g: &GaussianParams) -> CovMatrix {
    let block = |b: f64, c: Complex64| {
        Matrix2::new(
            1.0 + 2.0 * b + 2.0 * c.re,
            2.0 * c.im,
            2.0 * c.im,
            1.0 + 2.0 * b - 2.0 * c.re,
        )
    };
    let s1 = block(g.b1, g.c1);
    let s2 = block(g.b2, g.c2);
    let dm = g.d12 - g.dbar12;
    let dp = g.d12 + g.dbar12;
    let gamma = Matrix2::new(2.0 * dm.re, 2.0 * dm.im, 2.0 * dp.im, -2.0 * dp.re);

    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&s1);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&s2);
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(&gamma);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(&gamma.transpose());
    CovMatrix::new(m).expect("constructed symmetric")
}

// --- Wick expansion -------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
struct Op {
    beam: u8,
    dagger: bool,
}

fn contraction(g: &GaussianParams, a: Op, b: Op) -> Complex64 {
    match (a.beam, a.dagger, b.beam, b.dagger) {
        (1, x, 1, y) if x != y => Complex64::new(g.b1, 0.0),
        (2, x, 2, y) if x != y => Complex64::new(g.b2, 0.0),
        (1, false, 1, false) => g.c1,
        (1, true, 1, true) => g.c1.conj(),
        (2, false, 2, false) => g.c2,
        (2, true, 2, true) => g.c2.conj(),
        (1, false, 2, false) | (2, false, 1, false) => g.d12,
        (1, true, 2, true) | (2, true, 1, true) => g.d12.conj(),
        (1, true, 2, false) | (2, false, 1, true) => -g.dbar12,
        (1, false, 2, true) | (2, true, 1, false) => -g.dbar12.conj(),
        _ => unreachable!("beams are 1 or 2"),
    }
}

fn isserlis(g: &GaussianParams, ops: &[Op]) -> Complex64 {
    match ops.len() {
        0 => Complex64::ONE,
        n if n % 2 == 1 => Complex64::ZERO,
        n => {
            let mut total = Complex64::ZERO;
            let first = ops[0];
            for i in 1..n {
                let mut rest = Vec::with_capacity(n - 2);
                rest.extend_from_slice(&ops[1..i]);
                rest.extend_from_slice(&ops[i + 1..]);
                total += contraction(g, first, ops[i]) * isserlis(g, &rest);
            }
            total
        }
    }
}

/// Exact normally-ordered moments <W1^k W2^l> by summing all pairings of the
/// k+l creation and k+l annihilation operators. Purely algebraic; does not
/// require physicality.
pub fn forward_moments(g: &GaussianParams) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| {
        let mut ops = Vec::with_capacity(2 * (k + l));
        ops.extend(std::iter::repeat(Op { beam: 1, dagger: true }).take(k));
        ops.extend(std::iter::repeat(Op { beam: 2, dagger: true }).take(l));
        ops.extend(std::iter::repeat(Op { beam: 1, dagger: false }).take(k));
        ops.extend(std::iter::repeat(Op { beam: 2, dagger: false }).take(l));
        let v = isserlis(g, &ops);
        let scale = v.re.abs().max(1.0);
        assert!(
            v.im.abs() <= 1e-12 * scale,
            "moment ({k},{l}) has imaginary part {}",
            v.im
        );
        v.re
    })
}

/// Parameter combinations recoverable from intensity moments up to order 4.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InvariantSet {
    pub b1: f64,
    pub b2: f64,
    pub c1_sq: f64,
    pub c2_sq: f64,
    /// |D12|^2 + |Dbar12|^2.
    pub d_sq_sum: f64,
    /// Re{C1 Dbar12 D12*}.
    pub t1: f64,
    /// Re{C2* Dbar12 D12}.
    pub t2: f64,
    /// 2|D12|^2|Dbar12|^2 + Re{C1 C2* Dbar12^2} + Re{C1 C2 D12*^2}.
    pub q: f64,
    /// Set when a |C_j|^2 estimate came out negative beyond tolerance;
    /// values are retained for diagnostics.
    pub nonphysical: bool,
}

/// Evaluate the second- through fourth-order moment relations for the
/// looked-for parameter combinations.
pub fn extract_invariants(w: &IntensityMoments) -> InvariantSet {
    let w10 = w.w(1, 0);
    let w01 = w.w(0, 1);
    let w20 = w.w(2, 0);
    let w02 = w.w(0, 2);
    let w11 = w.w(1, 1);
    let w21 = w.w(2, 1);
    let w12 = w.w(1, 2);
    let w22 = w.w(2, 2);

    let c1_sq = w20 - 2.0 * w10 * w10;
    let c2_sq = w02 - 2.0 * w01 * w01;
    let d_sq_sum = w11 - w10 * w01;

    let cross_cov = w11 - w10 * w01;
    let t1 = -(-4.0 * w10 * cross_cov + w21 - w20 * w01) / 4.0;
    let t2 = -(-4.0 * w01 * cross_cov + w12 - w10 * w02) / 4.0;

    // fourth-order relation; see the determinant identity tests for the
    // cross-check against direct parameter evaluation
    let q = (w22 - 4.0 * w11 * w11 - 8.0 * w10 * w01 * w11 + 12.0 * w10 * w10 * w01 * w01
        - w20 * w02
        + 16.0 * w01 * t1
        + 16.0 * w10 * t2)
        / 4.0;

    let tol = 1e-9 * (1.0 + w20.abs() + w02.abs());
    InvariantSet {
        b1: w10,
        b2: w01,
        c1_sq,
        c2_sq,
        d_sq_sum,
        t1,
        t2,
        q,
        nonphysical: c1_sq < -tol || c2_sq < -tol,
    }
}

/// Symplectic eigenvalues and the uncertainty-principle test.
pub fn check_physical(c: &CovMatrix) -> Result<SymplecticData> {
    let d1 = c.det_sigma1();
    let d2 = c.det_sigma2();
    let dg = c.det_gamma();
    let det = c.det_global();
    let seralian = d1 + d2 + 2.0 * dg;

    let nu_pair = |delta: f64| -> Result<(f64, f64)> {
        let disc = delta * delta - 4.0 * det;
        let scale = (delta * delta).max(4.0 * det.abs()).max(1.0);
        if disc < -1e-9 * scale {
            return Err(Error::NegativeDiscriminant(disc));
        }
        let root = disc.max(0.0).sqrt();
        let plus_sq = (delta + root) / 2.0;
        // conjugate form avoids cancellation when root ~ delta
        let minus_sq = if plus_sq > 0.0 { det / plus_sq } else { (delta - root) / 2.0 };
        Ok((minus_sq.max(0.0).sqrt(), plus_sq.max(0.0).sqrt()))
    };

    let (nu_minus, nu_plus) = nu_pair(seralian)?;
    let (nu_tilde_minus, _) = nu_pair(d1 + d2 - 2.0 * dg)?;
    // nu_minus >= 1 is equivalent to 1 + det sigma >= Delta and Delta >= 2
    // (both roots of x^2 - Delta x + det at or above 1). Testing these
    // polynomial forms avoids the sqrt of a vanishing discriminant, which
    // amplifies f64 rounding to ~1e-8 for exactly pure states.
    let scale = (1.0 + det.abs()).max(seralian.abs());
    let positive_definite = c.matrix().cholesky().is_some();
    let physical = positive_definite
        && 1.0 + det - seralian >= -PHYS_TOL * scale
        && seralian >= 2.0 - PHYS_TOL;
    Ok(SymplecticData { nu_minus, nu_plus, nu_tilde_minus, seralian, physical })
}

/// Build the standard-form state with the requested global/marginal purities
/// and seralian: sigma1 = a I, sigma2 = b I, gamma = diag(c+, c-), c+ >= c-.
pub fn from_purities(mu: f64, mu1: f64, mu2: f64, delta: f64) -> Result<CovMatrix> {
    for m in [mu, mu1, mu2] {
        if !(m > 0.0 && m <= 1.0) {
            return Err(Error::Unphysical(format!("purity {m} outside (0, 1]")));
        }
    }
    let a = 1.0 / mu1;
    let b = 1.0 / mu2;
    let u = (delta - a * a - b * b) / 2.0;
    let v = (a * a * b * b + u * u - 1.0 / (mu * mu)) / (a * b);
    if v < 2.0 * u.abs() - 1e-12 {
        return Err(Error::Unphysical(format!(
            "no real off-diagonal block: v = {v} < 2|u| = {}",
            2.0 * u.abs()
        )));
    }
    let s = (v + 2.0 * u).max(0.0).sqrt();
    let d = (v - 2.0 * u).max(0.0).sqrt();
    let c_plus = (s + d) / 2.0;
    let c_minus = (s - d) / 2.0;

    let m = Matrix4::new(
        a, 0.0, c_plus, 0.0, //
        0.0, a, 0.0, c_minus, //
        c_plus, 0.0, b, 0.0, //
        0.0, c_minus, 0.0, b,
    );
    let cov = CovMatrix::new(m).expect("symmetric by construction");

    // round trip and physicality
    let sym = check_physical(&cov)?;
    if !sym.physical {
        return Err(Error::Unphysical(format!("nu_minus = {}", sym.nu_minus)));
    }
    let det = cov.det_global();
    if det <= 0.0 {
        return Err(Error::Unphysical(format!("det sigma = {det}")));
    }
    let mu_back = 1.0 / det.sqrt();
    let checks = [
        (mu_back, mu),
        (1.0 / cov.det_sigma1().sqrt(), mu1),
        (1.0 / cov.det_sigma2().sqrt(), mu2),
        (sym.seralian, delta),
    ];
    for (got, want) in checks {
        if (got - want).abs() > 1e-9 * want.abs().max(1.0) {
            return Err(Error::Unphysical(format!(
                "round trip failed: got {got}, want {want}"
            )));
        }
    }
    Ok(cov)
}

/// Characteristic-function parameters of one mode of a Gaussian noisy twin
/// beam: pairwise emission gives D12 = sqrt(Bp(Bp+1)), noise adds to the
/// mean intensities.
pub fn params_of_twin_beam(t: &TwinBeamSpec) -> GaussianParams {
    GaussianParams {
        b1: t.pair_mean + t.noise1,
        b2: t.pair_mean + t.noise2,
        c1: Complex64::ZERO,
        c2: Complex64::ZERO,
        d12: Complex64::new((t.pair_mean * (t.pair_mean + 1.0)).sqrt(), 0.0),
        dbar12: Complex64::ZERO,
    }
}

pub const DEFAULT_SAMPLING_ATTEMPTS: u32 = 100_000;

/// Rejection-sample a physical state with parameters bounded by `scale`.
/// Deterministic for a fixed seed.
pub fn random_physical_state(seed: u64, scale: f64) -> Result<GaussianParams> {
    random_physical_state_with(&mut ChaCha8Rng::seed_from_u64(seed), scale, DEFAULT_SAMPLING_ATTEMPTS)
}

pub fn random_physical_state_with(
    rng: &mut impl Rng,
    scale: f64,
    max_attempts: u32,
) -> Result<GaussianParams> {
    if scale == 0.0 {
        return Ok(GaussianParams::vacuum());
    }
    fn cplx(rng: &mut impl Rng, scale: f64) -> Complex64 {
        Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
    }
    for _ in 0..max_attempts {
        let g = GaussianParams {
            b1: rng.gen_range(0.0..scale),
            b2: rng.gen_range(0.0..scale),
            c1: cplx(rng, scale),
            c2: cplx(rng, scale),
            d12: cplx(rng, scale),
            dbar12: cplx(rng, scale),
        };
        if let Ok(sym) = check_physical(&covariance_of(&g)) {
            if sym.physical {
                return Ok(g);
            }
        }
    }
    Err(Error::SamplingExhausted(max_attempts))
}
