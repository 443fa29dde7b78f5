//! Bivariate power series truncated at total order 4.
//!
//! Moment tables are manipulated through their generating series
//! f(t1, t2) = sum_{k+l<=4} a[k][l] t1^k t2^l. Taking log of a
//! factorial-moment series gives the factorial cumulants, which are
//! additive under convolution of photon-number distributions.

pub const MAX_ORDER: usize = 4;

pub type Coeffs = [[f64; MAX_ORDER + 1]; MAX_ORDER + 1];

pub const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

pub fn zero() -> Coeffs {
    [[0.0; 5]; 5]
}

/// Product of two series, truncated at total order 4.
pub fn mul(a: &Coeffs, b: &Coeffs) -> Coeffs {
    let mut out = zero();
    for k1 in 0..=MAX_ORDER {
        for l1 in 0..=MAX_ORDER - k1 {
            if a[k1][l1] == 0.0 {
                continue;
            }
            for k2 in 0..=MAX_ORDER - k1 - l1 {
                for l2 in 0..=MAX_ORDER - k1 - l1 - k2 {
                    out[k1 + k2][l1 + l2] += a[k1][l1] * b[k2][l2];
                }
            }
        }
    }
    out
}

fn add_scaled(acc: &mut Coeffs, a: &Coeffs, s: f64) {
    for k in 0..=MAX_ORDER {
        for l in 0..=MAX_ORDER - k {
            acc[k][l] += s * a[k][l];
        }
    }
}

/// log of a series with constant term 1, via log(1+x) = x - x^2/2 + x^3/3 - x^4/4.
pub fn ln(a: &Coeffs) -> Coeffs {
    debug_assert!((a[0][0] - 1.0).abs() < 1e-9, "ln needs constant term 1");
    let mut x = *a;
    x[0][0] = 0.0;
    let x2 = mul(&x, &x);
    let x3 = mul(&x2, &x);
    let x4 = mul(&x3, &x);
    let mut out = zero();
    add_scaled(&mut out, &x, 1.0);
    add_scaled(&mut out, &x2, -0.5);
    add_scaled(&mut out, &x3, 1.0 / 3.0);
    add_scaled(&mut out, &x4, -0.25);
    out
}

/// exp of a series with zero constant term.
pub fn exp(a: &Coeffs) -> Coeffs {
    debug_assert!(a[0][0].abs() < 1e-9, "exp needs zero constant term");
    let x2 = mul(a, a);
    let x3 = mul(&x2, a);
    let x4 = mul(&x3, a);
    let mut out = zero();
    out[0][0] = 1.0;
    add_scaled(&mut out, a, 1.0);
    add_scaled(&mut out, &x2, 0.5);
    add_scaled(&mut out, &x3, 1.0 / 6.0);
    add_scaled(&mut out, &x4, 1.0 / 24.0);
    out
}

/// Multiply every non-constant coefficient by s (cumulant scaling).
pub fn scale(a: &Coeffs, s: f64) -> Coeffs {
    let mut out = *a;
    for k in 0..=MAX_ORDER {
        for l in 0..=MAX_ORDER - k {
            if k + l > 0 {
                out[k][l] *= s;
            }
        }
    }
    out
}
