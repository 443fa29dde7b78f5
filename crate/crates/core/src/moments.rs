//! Photocount ingestion and moment algebra.
//!
//! The pipeline here goes histogram -> photon-number distribution ->
//! raw moments -> intensity (falling-factorial) moments, with mode
//! reduction, beam merging and distribution entropy on top.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{self, Coeffs, FACT, MAX_ORDER};

/// Signed Stirling numbers of the first kind s(k, i), k <= 4.
/// Falling factorial: x(x-1)...(x-k+1) = sum_i s(k,i) x^i.
const STIRLING1: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, -1.0, 1.0, 0.0, 0.0],
    [0.0, 2.0, -3.0, 1.0, 0.0],
    [0.0, -6.0, 11.0, -6.0, 1.0],
];

fn binom(n: usize, k: usize) -> f64 {
    FACT[n] / (FACT[k] * FACT[n - k])
}

/// Falling factorial c(c-1)...(c-k+1) as f64.
pub fn falling_factorial(c: u64, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k as u64 {
        if c <= i {
            return 0.0;
        }
        acc *= (c - i) as f64;
    }
    acc
}

// ---------------------------------------------------------------------------
// Types

/// Empirical joint photocount histogram indexed by (c1, c2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointHistogram {
    counts: Vec<Vec<u64>>,
    total_shots: u64,
    window_group: u32,
}

impl JointHistogram {
    pub fn new(counts: Vec<Vec<u64>>, window_group: u32) -> Result<Self> {
        if window_group == 0 {
            return Err(Error::InvalidN);
        }
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyData);
        }
        let width = counts.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut counts = counts;
        for row in &mut counts {
            row.resize(width, 0);
        }
        Ok(Self { counts, total_shots: total, window_group })
    }

    pub fn from_cells(cells: &[(u32, u32, u64)], window_group: u32) -> Result<Self> {
        let c1max = cells.iter().map(|c| c.0).max().unwrap_or(0) as usize;
        let c2max = cells.iter().map(|c| c.1).max().unwrap_or(0) as usize;
        let mut counts = vec![vec![0u64; c2max + 1]; c1max + 1];
        for &(c1, c2, n) in cells {
            counts[c1 as usize][c2 as usize] += n;
        }
        Self::new(counts, window_group)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    pub fn window_group(&self) -> u32 {
        self.window_group
    }

    /// (max c1, max c2) grid extent.
    pub fn dims(&self) -> (usize, usize) {
        (self.counts.len() - 1, self.counts[0].len() - 1)
    }

    /// Normalize counts into a joint distribution over photocounts.
    pub fn normalized(&self) -> JointDistribution {
        let t = self.total_shots as f64;
        let p = self
            .counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / t).collect())
            .collect();
        JointDistribution::new(p).expect("normalized histogram is a distribution")
    }

    /// Histogram CSV: header `c1,c2,count`, one row per nonzero cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c1,c2,count\n");
        for (c1, row) in self.counts.iter().enumerate() {
            for (c2, &n) in row.iter().enumerate() {
                if n > 0 {
                    out.push_str(&format!("{c1},{c2},{n}\n"));
                }
            }
        }
        out
    }
}

/// Normalized joint photon-number distribution p(n1, n2).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DistributionJson", into = "DistributionJson")]
pub struct JointDistribution {
    p: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DistributionJson {
    cutoff: [usize; 2],
    p: Vec<Vec<f64>>,
}

impl TryFrom<DistributionJson> for JointDistribution {
    type Error = Error;
    fn try_from(j: DistributionJson) -> Result<Self> {
        JointDistribution::new(j.p)
    }
}

impl From<JointDistribution> for DistributionJson {
    fn from(d: JointDistribution) -> Self {
        let cutoff = d.cutoff();
        DistributionJson { cutoff: [cutoff.0, cutoff.1], p: d.p }
    }
}

impl JointDistribution {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let mut sum = 0.0;
        for row in &p {
            for &v in row {
                if !(0.0..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "distribution entry {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        let width = p.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut p = p;
        for row in &mut p {
            row.resize(width, 0.0);
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> &[Vec<f64>] {
        &self.p
    }

    /// (max n1, max n2) of the stored support.
    pub fn cutoff(&self) -> (usize, usize) {
        (self.p.len() - 1, self.p[0].len() - 1)
    }
}

/// Raw photon-number moments <n1^k n2^l>, k + l <= 4.
#[derive(Debug, Clone, Copy)]
pub struct PhotonNumberMoments {
    m: Coeffs,
}

impl PhotonNumberMoments {
    pub fn from_fn(f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = series::zero();
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                m[k][l] = f(k, l);
            }
        }
        assert!((m[0][0] - 1.0).abs() < 1e-9, "m[0][0] must be 1");
        Self { m }
    }

    pub fn m(&self, k: usize, l: usize) -> f64 {
        assert!(k + l <= MAX_ORDER, "moment order {} exceeds 4", k + l);
        self.m[k][l]
    }
}

/// Normally-ordered intensity moments <W1^k W2^l>, k + l <= 4.
#[derive(Debug, Clone, Copy)]
pub struct IntensityMoments {
    w: Coeffs,
}

impl IntensityMoments {
    pub fn from_fn(f: impl Fn(usize, usize) -> f64) -> Self {
        let mut w = series::zero();
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                w[k][l] = f(k, l);
            }
        }
        assert!((w[0][0] - 1.0).abs() < 1e-9, "w[0][0] must be 1");
        Self { w }
    }

    pub fn vacuum() -> Self {
        Self::from_fn(|k, l| if k + l == 0 { 1.0 } else { 0.0 })
    }

    pub fn w(&self, k: usize, l: usize) -> f64 {
        assert!(k + l <= MAX_ORDER, "moment order {} exceeds 4", k + l);
        self.w[k][l]
    }

    /// Coefficients of the factorial-moment generating series,
    /// a[k][l] = w[k][l] / (k! l!).
    pub(crate) fn to_series(self) -> Coeffs {
        let mut a = series::zero();
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                a[k][l] = self.w[k][l] / (FACT[k] * FACT[l]);
            }
        }
        a
    }

    pub(crate) fn from_series(a: Coeffs) -> Self {
        Self::from_fn(|k, l| a[k][l] * FACT[k] * FACT[l])
    }

    /// Swap the two beams.
    pub fn transposed(&self) -> Self {
        Self::from_fn(|k, l| self.w[l][k])
    }
}

/// Per-entry standard errors for an estimated moment table.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentErrors {
    pub se: Coeffs,
}

/// JSON wire format for a moment table: `{"max_order":4,"w":{"k,l":v},"se":{...}}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MomentTableJson {
    pub max_order: usize,
    pub w: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub se: BTreeMap<String, f64>,
}

impl MomentTableJson {
    pub fn from_moments(w: &IntensityMoments, se: Option<&MomentErrors>) -> Self {
        let mut wm = BTreeMap::new();
        let mut sm = BTreeMap::new();
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                wm.insert(format!("{k},{l}"), w.w(k, l));
                if let Some(e) = se {
                    sm.insert(format!("{k},{l}"), e.se[k][l]);
                }
            }
        }
        Self { max_order: MAX_ORDER, w: wm, se: sm }
    }

    pub fn to_moments(&self) -> Result<IntensityMoments> {
        if self.max_order > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "max_order {} exceeds 4",
                self.max_order
            )));
        }
        let mut w = series::zero();
        w[0][0] = 1.0;
        for (key, &v) in &self.w {
            let (k, l) = parse_kl(key)?;
            if k + l > MAX_ORDER {
                return Err(Error::InvalidInput(format!("moment order {},{} exceeds 4", k, l)));
            }
            w[k][l] = v;
        }
        Ok(IntensityMoments { w })
    }
}

fn parse_kl(key: &str) -> Result<(usize, usize)> {
    let mut it = key.split(',');
    let bad = || Error::InvalidInput(format!("bad moment key {key:?}"));
    let k = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let l = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((k, l))
}

/// Moments <W^k> of a single (merged) beam, k <= 4.
#[derive(Debug, Clone, Copy)]
pub struct SingleBeamMoments {
    pub w: [f64; 5],
}

impl SingleBeamMoments {
    pub fn mean(&self) -> f64 {
        self.w[1]
    }
}

// ---------------------------------------------------------------------------
// Loading

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Parse a histogram from CSV (`c1,c2,count`) or JSON.
pub fn load_histogram(reader: impl BufRead, format: Format) -> Result<JointHistogram> {
    match format {
        Format::Json => {
            let mut content = String::new();
            let mut reader = reader;
            reader
                .read_to_string(&mut content)
                .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
            let h: JointHistogram = serde_json::from_str(&content)
                .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
            JointHistogram::new(h.counts, h.window_group)
        }
        Format::Csv => {
            let mut cells = Vec::new();
            for (idx, line) in reader.lines().enumerate() {
                let lineno = idx + 1;
                let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                if idx == 0 {
                    if line != "c1,c2,count" {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("expected header 'c1,c2,count', got {line:?}"),
                        });
                    }
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected 3 fields, got {}", fields.len()),
                    });
                }
                let parse = |s: &str, what: &str| -> Result<u64> {
                    s.trim().parse::<u64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("invalid {what}: {s:?}"),
                    })
                };
                let c1 = parse(fields[0], "c1")?;
                let c2 = parse(fields[1], "c2")?;
                let n = parse(fields[2], "count")?;
                cells.push((c1 as u32, c2 as u32, n));
            }
            if cells.is_empty() {
                return Err(Error::EmptyData);
            }
            JointHistogram::from_cells(&cells, 1)
        }
    }
}

/// Parse a shot stream CSV (`c1,c2`, one row per detection window).
pub fn load_shots(reader: impl BufRead) -> Result<Vec<(u32, u32)>> {
    let mut shots = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            if line != "c1,c2" {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected header 'c1,c2', got {line:?}"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<u32> {
            s.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid count: {s:?}"),
            })
        };
        shots.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(shots)
}

/// Sum consecutive non-overlapping blocks of N shots componentwise.
/// A trailing partial block is dropped.
pub fn group_windows(shots: &[(u32, u32)], n: u32) -> Result<JointHistogram> {
    if n == 0 {
        return Err(Error::InvalidN);
    }
    let blocks = shots.len() / n as usize;
    if blocks == 0 {
        return Err(Error::EmptyData);
    }
    let cells: Vec<(u32, u32, u64)> = (0..blocks)
        .map(|b| {
            let block = &shots[b * n as usize..(b + 1) * n as usize];
            let c1 = block.iter().map(|s| s.0).sum();
            let c2 = block.iter().map(|s| s.1).sum();
            (c1, c2, 1)
        })
        .collect();
    JointHistogram::from_cells(&cells, n)
}

// ---------------------------------------------------------------------------
// Moment algebra

/// <n1^k n2^l> by exact finite sums over the stored support.
pub fn raw_moments(dist: &JointDistribution, max_order: usize) -> PhotonNumberMoments {
    assert!(max_order <= MAX_ORDER);
    PhotonNumberMoments::from_fn(|k, l| {
        if k + l > max_order {
            return 0.0;
        }
        let mut acc = 0.0;
        for (n1, row) in dist.p().iter().enumerate() {
            for (n2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += (n1 as f64).powi(k as i32) * (n2 as f64).powi(l as i32) * p;
                }
            }
        }
        acc
    })
}

/// Raw -> intensity moments via signed Stirling numbers of the first kind;
/// the two beam indices factorize.
pub fn to_intensity_moments(m: &PhotonNumberMoments) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| {
        let mut acc = 0.0;
        for i in 0..=k {
            let ski = STIRLING1[k][i];
            if ski == 0.0 {
                continue;
            }
            for j in 0..=l {
                let slj = STIRLING1[l][j];
                if slj != 0.0 {
                    acc += ski * slj * m.m(i, j);
                }
            }
        }
        acc
    })
}

/// Unbiased sample falling-factorial moments straight from photocounts.
pub fn sample_intensity_moments(counts: &[Vec<u64>], total: f64) -> IntensityMoments {
    IntensityMoments::from_fn(|k, l| {
        let mut acc = 0.0;
        for (c1, row) in counts.iter().enumerate() {
            for (c2, &n) in row.iter().enumerate() {
                if n > 0 {
                    acc += n as f64
                        * falling_factorial(c1 as u64, k)
                        * falling_factorial(c2 as u64, l);
                }
            }
        }
        acc / total
    })
}

/// Options for the bootstrap error estimate.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 200, seed: 0x0b007 }
    }
}

/// Multinomial resample of the histogram cells, via conditional binomials.
pub fn resample_histogram(hist: &JointHistogram, rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let total = hist.total_shots();
    let mut remaining = total;
    let mut prob_left = 1.0f64;
    let mut out = vec![vec![0u64; hist.counts()[0].len()]; hist.counts().len()];
    'outer: for (i, row) in hist.counts().iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let p_cell = n as f64 / total as f64;
            let p_cond = (p_cell / prob_left).clamp(0.0, 1.0);
            let draw = if p_cond >= 1.0 {
                remaining
            } else {
                Binomial::new(remaining, p_cond).expect("valid binomial").sample(rng)
            };
            out[i][j] = draw;
            remaining -= draw;
            prob_left -= p_cell;
            if remaining == 0 {
                break 'outer;
            }
        }
    }
    out
}

/// Sample intensity moments with bootstrap standard errors.
pub fn intensity_moments_from_histogram(
    hist: &JointHistogram,
    cfg: BootstrapConfig,
) -> Result<(IntensityMoments, MomentErrors)> {
    if hist.total_shots() == 0 {
        return Err(Error::EmptyData);
    }
    let total = hist.total_shots() as f64;
    let point = sample_intensity_moments(hist.counts(), total);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sum = series::zero();
    let mut sumsq = series::zero();
    for _ in 0..cfg.resamples {
        let counts = resample_histogram(hist, &mut rng);
        let w = sample_intensity_moments(&counts, total);
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                sum[k][l] += w.w(k, l);
                sumsq[k][l] += w.w(k, l) * w.w(k, l);
            }
        }
    }
    let mut se = series::zero();
    if cfg.resamples > 1 {
        let r = cfg.resamples as f64;
        for k in 0..=MAX_ORDER {
            for l in 0..=MAX_ORDER - k {
                let var = (sumsq[k][l] - sum[k][l] * sum[k][l] / r) / (r - 1.0);
                se[k][l] = var.max(0.0).sqrt();
            }
        }
    }
    Ok((point, MomentErrors { se }))
}

/// Scale all factorial cumulants by `s` (iid composition for s = M,
/// per-mode reduction for s = 1/M).
fn cumulant_scale(w: &IntensityMoments, s: f64) -> IntensityMoments {
    let fc = series::ln(&w.to_series());
    IntensityMoments::from_series(series::exp(&series::scale(&fc, s)))
}

/// Reduce joint moments of an M-fold iid composition to one typical mode.
pub fn reduce_per_mode(w: &IntensityMoments, modes: f64) -> Result<IntensityMoments> {
    if !(modes >= 1.0) {
        return Err(Error::BadModeCount(modes));
    }
    Ok(cumulant_scale(w, 1.0 / modes))
}

/// Moments of the sum of M iid copies of a field with moments `w`.
pub fn compose_iid(w: &IntensityMoments, modes: f64) -> IntensityMoments {
    cumulant_scale(w, modes)
}

/// Moments of the sum of two independent fields.
pub fn convolve(a: &IntensityMoments, b: &IntensityMoments) -> IntensityMoments {
    IntensityMoments::from_series(series::mul(&a.to_series(), &b.to_series()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beam {
    One,
    Two,
    Joint,
}

/// Multithermal second-order mode-count estimator.
pub fn estimate_modes(w: &IntensityMoments, beam: Beam) -> Result<f64> {
    let (num, den) = match beam {
        Beam::One => (w.w(1, 0) * w.w(1, 0), w.w(2, 0) - w.w(1, 0) * w.w(1, 0)),
        Beam::Two => (w.w(0, 1) * w.w(0, 1), w.w(0, 2) - w.w(0, 1) * w.w(0, 1)),
        Beam::Joint => (w.w(1, 0) * w.w(0, 1), w.w(1, 1) - w.w(1, 0) * w.w(0, 1)),
    };
    if den <= 0.0 {
        return Err(Error::DegenerateVariance(den));
    }
    Ok(num / den)
}

/// Moments of the merged beam W = W1 + W2 by binomial expansion.
pub fn merge_beams(w: &IntensityMoments) -> SingleBeamMoments {
    let mut out = [0.0; 5];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = (0..=k).map(|i| binom(k, i) * w.w(i, k - i)).sum();
    }
    SingleBeamMoments { w: out }
}

/// S = -sum p ln p with 0 ln 0 = 0.
pub fn shannon_entropy(dist: &JointDistribution) -> f64 {
    dist.p()
        .iter()
        .flatten()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
