//! `twinbeam` — reproducible command-line workflows for two-beam Gaussian
//! correlation analysis: analyze photocount data, simulate noisy twin
//! beams, sweep the purity-ratio atlas, reduce moment tables per mode and
//! report merged-beam squeezing.
//!
//! Exit codes: 0 success, 2 I/O, 3 parse/validation, 4 model constraint
//! violated, 5 convergence failure.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use twinbeam::em::EmOptions;
use twinbeam::moments::{
    group_windows, intensity_moments_from_histogram, load_histogram, load_shots, merge_beams,
    reduce_per_mode, BootstrapConfig, Format, JointHistogram, MomentTableJson,
};
use twinbeam::pipeline::{analyze, AnalyzeOptions, DeconvolveOptions, ModeSetting};
use twinbeam::quantifiers::{g2, squeezing_variance, QCReport};
use twinbeam::statespace::{atlas_to_csv, contours_to_csv, sweep_atlas, threshold_curves, RatioGrid};
use twinbeam::synth::{simulate, DetectorSpec, RunMetadata, SimRun};
use twinbeam::{Error, TwinBeamSpec};

const EXIT_IO: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_MODEL: u8 = 4;
const EXIT_CONVERGENCE: u8 = 5;

#[derive(Parser)]
#[command(name = "twinbeam", version, about = "Quantum-correlation analysis of two-beam Gaussian fields from photon counting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a photocount histogram or shot stream into a quantifier report
    Analyze(AnalyzeArgs),
    /// Generate synthetic noisy-twin-beam photocount data
    Simulate(SimulateArgs),
    /// Sweep the purity-ratio atlas (average negativity, max bracket error)
    Sweep(SweepArgs),
    /// Reduce a joint moment table to one typical mode
    Reduce(ReduceArgs),
    /// Merged-beam report: g2 and principal squeezing variance
    ReportMerge(ReportMergeArgs),
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    /// Histogram CSV/JSON (`c1,c2,count`) or shot-stream CSV (`c1,c2`)
    #[arg(long)]
    input: PathBuf,
    /// Report JSON path (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Detector efficiencies "eta1,eta2"; enables EM deconvolution
    #[arg(long)]
    efficiency: Option<String>,
    /// Mean dark counts per window "d1,d2" (EM only)
    #[arg(long, default_value = "0,0")]
    dark: String,
    /// Mode count M, or "auto" for the multithermal estimator
    #[arg(long, default_value = "auto")]
    modes: String,
    /// Group N consecutive windows of a shot stream before analysis
    #[arg(long, default_value_t = 1)]
    group: u32,
    /// Bootstrap resamples for quantifier standard errors (0 disables)
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    /// Bootstrap seed
    #[arg(long, default_value_t = 45063)]
    seed: u64,
    /// EM convergence tolerance (L1 change of the distribution)
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// EM iteration cap
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Report detected-field quantifiers without per-mode reduction
    #[arg(long)]
    no_per_mode: bool,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Histogram CSV output path; a `<output>.meta.json` sidecar records
    /// the configuration and generator
    #[arg(long)]
    output: PathBuf,
    /// Mean photon-pair number per mode
    #[arg(long)]
    pair_mean: f64,
    /// Thermal noise means per mode "n1,n2"
    #[arg(long, default_value = "0,0")]
    noise: String,
    /// Number of identical modes
    #[arg(long, default_value_t = 1)]
    modes: u32,
    #[arg(long)]
    shots: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Detector efficiencies "eta1,eta2"
    #[arg(long, default_value = "1,1")]
    efficiency: String,
    /// Mean dark counts per window "d1,d2"
    #[arg(long, default_value = "0,0")]
    dark: String,
    /// Saturation cutoff (counts clamp here); unlimited when omitted
    #[arg(long)]
    saturation: Option<u32>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Atlas CSV output path
    #[arg(long)]
    output: PathBuf,
    /// Ratio axes "r1min:r1max:steps,r2min:r2max:steps"
    #[arg(long, default_value = "1:4:13,1:4:13")]
    grid: String,
    #[arg(long, default_value_t = 32)]
    mu_samples: usize,
    #[arg(long, default_value_t = 16)]
    delta_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also extract the 10% / 1% error contours to this CSV
    #[arg(long)]
    contours: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReduceArgs {
    /// Moment-table JSON input
    #[arg(long)]
    input: PathBuf,
    /// Reduced moment-table JSON output (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Mode count M (>= 1)
    #[arg(long)]
    modes: f64,
}

#[derive(Args, Serialize)]
struct ReportMergeArgs {
    /// Histogram CSV/JSON input
    #[arg(long)]
    input: PathBuf,
    /// Report JSON path (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Mode count M used to reduce to one typical mode before merging,
    /// or "auto" for the multithermal estimator
    #[arg(long, default_value = "auto")]
    modes: String,
    /// Bootstrap resamples for standard errors (0 disables)
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    #[arg(long, default_value_t = 45063)]
    seed: u64,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

type CliResult<T> = Result<T, CliError>;

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError { code: EXIT_IO, msg: format!("{context}: {e}") }
}

fn parse_err(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_PARSE, msg: msg.into() }
}

fn model_err(e: &Error) -> CliError {
    let code = match e {
        Error::Parse { .. }
        | Error::EmptyData
        | Error::InvalidN
        | Error::InvalidInput(_)
        | Error::InsufficientGrid(_) => EXIT_PARSE,
        Error::NotConverged { .. } => EXIT_CONVERGENCE,
        _ => EXIT_MODEL,
    };
    CliError { code, msg: e.to_string() }
}

fn parse_pair(s: &str, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(parse_err(format!("{what}: expected \"a,b\", got {s:?}")));
    }
    let a = parts[0].trim().parse().map_err(|_| parse_err(format!("{what}: bad number {:?}", parts[0])))?;
    let b = parts[1].trim().parse().map_err(|_| parse_err(format!("{what}: bad number {:?}", parts[1])))?;
    Ok((a, b))
}

/// Write atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| io_err(&format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(&format!("renaming to {}", path.display()), e))
}

fn emit(output: Option<&Path>, contents: &str) -> CliResult<()> {
    match output {
        Some(p) => write_atomic(p, contents),
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: String,
    input: Option<String>,
    input_sha256: Option<String>,
    config: serde_json::Value,
}

fn provenance(command: &str, input: Option<&Path>, config: impl Serialize) -> CliResult<Provenance> {
    let (input_path, hash) = match input {
        None => (None, None),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| io_err(&format!("reading {}", p.display()), e))?;
            let digest = Sha256::digest(&bytes);
            (Some(p.display().to_string()), Some(format!("{digest:x}")))
        }
    };
    Ok(Provenance {
        tool: "twinbeam",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        input: input_path,
        input_sha256: hash,
        config: serde_json::to_value(config).expect("args serialize"),
    })
}

fn load_counts(path: &Path, group: u32) -> CliResult<JointHistogram> {
    let file = fs::File::open(path).map_err(|e| io_err(&format!("opening {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    };
    if format == Format::Csv {
        // histogram (`c1,c2,count`) vs shot stream (`c1,c2`): sniff the header
        use std::io::BufRead;
        let mut header = String::new();
        reader.read_line(&mut header).map_err(|e| io_err("reading header", e))?;
        let cols = header.trim().split(',').count();
        let file = fs::File::open(path).map_err(|e| io_err("reopening input", e))?;
        let reader = BufReader::new(file);
        if cols == 2 {
            let shots = load_shots(reader).map_err(|e| model_err(&e))?;
            return group_windows(&shots, group).map_err(|e| model_err(&e));
        }
    }
    let file = fs::File::open(path).map_err(|e| io_err("reopening input", e))?;
    let hist = load_histogram(BufReader::new(file), format).map_err(|e| model_err(&e))?;
    if group > 1 {
        return Err(parse_err("--group applies to shot-stream inputs only"));
    }
    Ok(hist)
}

fn parse_modes(s: &str) -> CliResult<ModeSetting> {
    match s {
        "auto" => Ok(ModeSetting::Auto),
        s => {
            let m: f64 = s.parse().map_err(|_| parse_err(format!("--modes: bad value {s:?}")))?;
            if !(m >= 1.0) {
                return Err(parse_err(format!("--modes must be >= 1, got {m}")));
            }
            Ok(ModeSetting::Fixed(m))
        }
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult<()> {
    let modes = parse_modes(&args.modes)?;
    let deconvolve = match &args.efficiency {
        None => None,
        Some(s) => {
            let efficiency = parse_pair(s, "--efficiency")?;
            let dark = parse_pair(&args.dark, "--dark")?;
            Some(DeconvolveOptions {
                efficiency,
                dark,
                cutoff: None,
                em: EmOptions { max_iter: args.max_iter, tol: args.tol },
            })
        }
    };
    let hist = load_counts(&args.input, args.group)?;
    let opts = AnalyzeOptions {
        deconvolve,
        modes,
        per_mode: !args.no_per_mode,
        resamples: args.resamples,
        bootstrap_seed: args.seed,
    };
    let prov = provenance("analyze", Some(&args.input), &args)?;
    let analysis = analyze(&hist, &opts).map_err(|e| model_err(&e))?;

    #[derive(Serialize)]
    struct Out {
        provenance: Provenance,
        modes: f64,
        bootstrap_failures: usize,
        report: QCReport,
    }
    let out = Out {
        provenance: prov,
        modes: analysis.modes,
        bootstrap_failures: analysis.bootstrap_failures,
        report: analysis.report,
    };
    let json = serde_json::to_string_pretty(&out).expect("report serializes");
    emit(args.output.as_deref(), &json)?;
    if args.output.is_some() {
        // flat CSV row for plot pipelines
        println!("{}", QCReport::CSV_HEADER);
        println!("{}", out.report.to_csv_row());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let (n1, n2) = parse_pair(&args.noise, "--noise")?;
    let (e1, e2) = parse_pair(&args.efficiency, "--efficiency")?;
    let (d1, d2) = parse_pair(&args.dark, "--dark")?;
    let spec = TwinBeamSpec::new(args.pair_mean, n1, n2, args.modes).map_err(|e| model_err(&e))?;
    let det1 = DetectorSpec::new(e1, d1, args.saturation).map_err(|e| model_err(&e))?;
    let det2 = DetectorSpec::new(e2, d2, args.saturation).map_err(|e| model_err(&e))?;
    let run = SimRun::new(spec, (det1, det2), args.shots, args.seed).map_err(|e| model_err(&e))?;

    let hist = simulate(&run);
    write_atomic(&args.output, &hist.to_csv())?;

    #[derive(Serialize)]
    struct Sidecar {
        provenance: Provenance,
        #[serde(flatten)]
        run: RunMetadata,
    }
    let sidecar = Sidecar {
        provenance: provenance("simulate", None, &args)?,
        run: RunMetadata::of(&run),
    };
    let meta_path = args.output.with_extension("meta.json");
    write_atomic(&meta_path, &serde_json::to_string_pretty(&sidecar).expect("metadata serializes"))
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let axes: Vec<&str> = args.grid.split(',').collect();
    if axes.len() != 2 {
        return Err(parse_err("--grid: expected two axes \"min:max:steps,min:max:steps\""));
    }
    let r1 = RatioGrid::parse_axis(axes[0]).map_err(|e| model_err(&e))?;
    let r2 = RatioGrid::parse_axis(axes[1]).map_err(|e| model_err(&e))?;
    let mut grid = RatioGrid::new(r1, r2).map_err(|e| model_err(&e))?;
    grid.mu_samples = args.mu_samples;
    grid.delta_samples = args.delta_samples;
    grid.seed = args.seed;

    eprintln!(
        "sweeping {} x {} ratio cells ({} purity samples each)...",
        grid.r1_values.len(),
        grid.r2_values.len(),
        grid.mu_samples
    );
    let cells = sweep_atlas(&grid);
    let entangled = cells.iter().filter(|c| c.n_entangled > 0).count();
    eprintln!("done: {} / {} cells contain entangled states", entangled, cells.len());
    write_atomic(&args.output, &atlas_to_csv(&cells))?;

    if let Some(contour_path) = &args.contours {
        let points = threshold_curves(&cells).map_err(|e| model_err(&e))?;
        write_atomic(contour_path, &contours_to_csv(&points))?;
    }
    Ok(())
}

fn cmd_reduce(args: ReduceArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| io_err(&format!("reading {}", args.input.display()), e))?;
    let table: MomentTableJson =
        serde_json::from_str(&text).map_err(|e| parse_err(format!("moment table JSON: {e}")))?;
    let w = table.to_moments().map_err(|e| model_err(&e))?;
    let reduced = reduce_per_mode(&w, args.modes).map_err(|e| model_err(&e))?;
    let out = serde_json::to_string_pretty(&MomentTableJson::from_moments(&reduced, None))
        .expect("table serializes");
    emit(args.output.as_deref(), &out)
}

fn resolve_modes(w: &twinbeam::IntensityMoments, setting: ModeSetting) -> CliResult<f64> {
    use twinbeam::moments::{estimate_modes, Beam};
    match setting {
        ModeSetting::Fixed(m) => Ok(m),
        ModeSetting::Auto => {
            let m1 = estimate_modes(w, Beam::One).map_err(|e| model_err(&e))?;
            let m2 = estimate_modes(w, Beam::Two).map_err(|e| model_err(&e))?;
            Ok((0.5 * (m1 + m2)).max(1.0))
        }
    }
}

/// Delta-method standard error of the sample estimate of
/// |C|^2 = w2 - 2 w1^2 from merged single-beam factorial moments.
fn c_sq_stderr(m: &twinbeam::moments::SingleBeamMoments, shots: f64) -> f64 {
    let [_, w1, w2, w3, w4] = m.w;
    // X1 = C, X2 = C(C-1); C^2(C-1)^2 = C^(4) + 4 C^(3) + 2 C^(2)
    let var_w2 = (w4 + 4.0 * w3 + 2.0 * w2 - w2 * w2) / shots;
    let var_w1 = (w2 + w1 - w1 * w1) / shots;
    let cov = (w3 + 2.0 * w2 - w1 * w2) / shots;
    (var_w2 + 16.0 * w1 * w1 * var_w1 - 8.0 * w1 * cov).max(0.0).sqrt()
}

fn cmd_report_merge(args: ReportMergeArgs) -> CliResult<()> {
    let hist = load_counts(&args.input, 1)?;
    let prov = provenance("report-merge", Some(&args.input), &args)?;
    let mode_setting = parse_modes(&args.modes)?;
    let cfg = BootstrapConfig { resamples: args.resamples, seed: args.seed };
    let (w, _) = intensity_moments_from_histogram(&hist, cfg).map_err(|e| model_err(&e))?;
    let modes = resolve_modes(&w, mode_setting)?;
    let per_mode = reduce_per_mode(&w, modes).map_err(|e| model_err(&e))?;
    let merged = merge_beams(&per_mode);
    let (lambda, b, abs_c) = match squeezing_variance(&merged) {
        Ok(v) => v,
        // |C|^2 = 0 is a physical boundary (no squeezing correlations);
        // clamp estimates within sampling error of zero instead of failing
        Err(Error::NegativeCSquared(c_sq))
            if c_sq.abs() <= 3.0 * c_sq_stderr(&merged, hist.total_shots() as f64) =>
        {
            (1.0 + 2.0 * merged.mean(), merged.mean(), 0.0)
        }
        Err(e) => return Err(model_err(&e)),
    };
    let g2_value = g2(&merged).map_err(|e| model_err(&e))?;

    // bootstrap at the quantifier level (reuse the moment resampling stream)
    let mut errors = std::collections::BTreeMap::new();
    if args.resamples > 1 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        let mut samples: Vec<(f64, f64)> = Vec::new();
        let total = hist.total_shots() as f64;
        for _ in 0..args.resamples {
            let counts = twinbeam::moments::resample_histogram(&hist, &mut rng);
            let wb = twinbeam::moments::sample_intensity_moments(&counts, total);
            let Ok(wb) = reduce_per_mode(&wb, modes) else { continue };
            let mb = merge_beams(&wb);
            if let (Ok((l, _, _)), Ok(g)) = (squeezing_variance(&mb), g2(&mb)) {
                samples.push((l, g));
            }
        }
        let stderr_of = |xs: &[f64]| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        if samples.len() > 1 {
            let ls: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let gs: Vec<f64> = samples.iter().map(|s| s.1).collect();
            errors.insert("lambda".to_string(), stderr_of(&ls));
            errors.insert("g2".to_string(), stderr_of(&gs));
        }
    }

    #[derive(Serialize)]
    struct Out {
        provenance: Provenance,
        modes: f64,
        lambda: f64,
        g2: f64,
        #[serde(rename = "B")]
        mean: f64,
        #[serde(rename = "absC")]
        abs_c: f64,
        squeezed: bool,
        super_gaussian: bool,
        errors: std::collections::BTreeMap<String, f64>,
    }
    let out = Out {
        provenance: prov,
        modes,
        lambda,
        g2: g2_value,
        mean: b,
        abs_c,
        squeezed: lambda < 1.0,
        super_gaussian: g2_value > 2.0,
        errors,
    };
    emit(args.output.as_deref(), &serde_json::to_string_pretty(&out).expect("report serializes"))
}

fn main() -> ExitCode {
    // clap's default exit code for usage errors is 2; remap to the
    // parse/validation code so 2 stays reserved for I/O failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::ReportMerge(a) => cmd_report_merge(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
