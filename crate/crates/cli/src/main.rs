use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use ffmxu::acceptance;
use ffmxu::cost::{cost_report, render_cost_report, Calibration};
use ffmxu::erns::ResidueSystem;
use ffmxu::field::{coeffs_from_json, coeffs_to_json, matrix_ntt_oracle, Polynomial, PrimeField, TwiddleMatrix};
use ffmxu::hlo::{validate, IrModule};
use ffmxu::mxu::{
    accumulate_probe, staged_matrix_ntt, AccumulatorModel, MxuConfig, ResidueTwiddle, Staging, PROBE_TARGETS,
};
use ffmxu::trace::{replay_spec, ReplayConfig, ReplaySpecFile};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

mod manifest;
use manifest::Manifest;

const EXIT_DOMAIN: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ffmxu", version, about = "Finite-field transforms on a simulated matrix unit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one polynomial through the oracle and the simulator and compare.
    Ntt(NttArgs),
    /// Print the accumulator probe grid.
    BenchAccumulator(OutArgs),
    /// Generate a Poisson trace and replay it against the service model.
    ScheduleReplay {
        #[arg(long)]
        spec: PathBuf,
        /// Calibration TOML; the embedded constants are used when absent.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Validate an IR module file; exits 2 on any violation.
    ValidateHlo {
        file: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print the derived cost and deficit tables.
    CostReport {
        /// Percent change applied to every TPU price.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        perturb_price: f64,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run every acceptance criterion.
    Selftest(OutArgs),
}

#[derive(clap::Args, Debug)]
struct OutArgs {
    /// Directory for JSON artifacts and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FieldName {
    F17,
    Dilithium,
    Bn254,
    Bn254Lane,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Acc {
    Fp32,
    Int32,
    Exact,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum OnOff {
    On,
    Off,
}

#[derive(clap::Args, Debug)]
struct NttArgs {
    #[arg(long, value_enum)]
    field: FieldName,
    /// JSON file `{"coeffs": [...]}`; coefficients as numbers or decimal strings.
    #[arg(long, conflicts_with = "degree")]
    input: Option<PathBuf>,
    /// Random polynomial of this size; requires --seed.
    #[arg(long, requires = "seed")]
    degree: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Limbs per residue; defaults to the fewest bytes that hold the modulus.
    #[arg(long)]
    limbs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Acc::Fp32)]
    accumulator: Acc,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    staging: OnOff,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// What a subcommand produced: text for stdout, JSON artifacts and an exit code.
struct Run {
    text: String,
    artifacts: Vec<(&'static str, String)>,
    code: u8,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli, &argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<u8, CliError> {
    let mut manifest = Manifest::new(argv);
    let (run, out) = match cli.cmd {
        Command::Ntt(a) => {
            manifest.subcommand = "ntt";
            if let Some(p) = &a.input {
                manifest.config(p, &read(p)?);
            }
            manifest.seed("polynomial", a.seed);
            (ntt(&a)?, a.out.out)
        }
        Command::BenchAccumulator(o) => {
            manifest.subcommand = "bench-accumulator";
            (bench_accumulator(), o.out)
        }
        Command::ScheduleReplay { spec, calibration, out } => {
            manifest.subcommand = "schedule-replay";
            let text = read(&spec)?;
            manifest.config(&spec, &text);
            let cal = load_calibration(calibration.as_deref(), &mut manifest)?;
            let file: ReplaySpecFile = serde_json::from_str(&text).map_err(|e| domain(format!("{}: {e}", spec.display())))?;
            manifest.seed("trace", Some(file.trace.seed));
            (schedule_replay(&file, &cal, &mut manifest)?, out.out)
        }
        Command::ValidateHlo { file, out } => {
            manifest.subcommand = "validate-hlo";
            let text = read(&file)?;
            manifest.config(&file, &text);
            (validate_hlo(&text)?, out.out)
        }
        Command::CostReport { perturb_price, calibration, out } => {
            manifest.subcommand = "cost-report";
            if !perturb_price.is_finite() || perturb_price <= -100.0 {
                return Err(CliError::Usage("--perturb-price must be finite and above -100".into()));
            }
            let cal = load_calibration(calibration.as_deref(), &mut manifest)?;
            let r = cost_report(&cal, perturb_price);
            (Run { text: render_cost_report(&r), artifacts: vec![("cost_report.json", to_json(&r))], code: 0 }, out.out)
        }
        Command::Selftest(o) => {
            manifest.subcommand = "selftest";
            (selftest(), o.out)
        }
    };
    print!("{}", run.text);
    for (name, body) in &run.artifacts {
        manifest.output(name, body);
    }
    let m = manifest.to_json();
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
            for (name, body) in run.artifacts.iter().chain([&("manifest.json", m)]) {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| CliError::Io(p.clone(), e))?;
            }
        }
        None => eprintln!("manifest: {}", serde_json::to_string(&manifest).expect("manifest serializes")),
    }
    Ok(run.code)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_calibration(path: Option<&Path>, manifest: &mut Manifest) -> Result<Calibration, CliError> {
    match path {
        Some(p) => {
            let text = read(p)?;
            manifest.config(p, &text);
            Calibration::from_toml_str(&text).map_err(domain)
        }
        None => Ok(Calibration::default()),
    }
}

fn field_of(f: FieldName) -> PrimeField {
    match f {
        FieldName::F17 => PrimeField::f17(),
        FieldName::Dilithium => PrimeField::dilithium(),
        FieldName::Bn254 => PrimeField::bn254(),
        FieldName::Bn254Lane => PrimeField::bn254_lane(),
    }
}

#[derive(Serialize)]
struct NttResult {
    field: FieldName,
    modulus: String,
    degree: usize,
    path: &'static str,
    limbs: Option<usize>,
    accumulator: Acc,
    staging: OnOff,
    passes: Option<usize>,
    flagged_cells: Option<usize>,
    agree: bool,
    mismatches: usize,
    oracle: serde_json::Value,
    simulated: serde_json::Value,
}

fn ntt(a: &NttArgs) -> Result<Run, CliError> {
    let field = Arc::new(field_of(a.field));
    let poly = match (&a.input, a.degree, a.seed) {
        (Some(p), _, _) => {
            let v: serde_json::Value = serde_json::from_str(&read(p)?).map_err(domain)?;
            let coeffs = coeffs_from_json(v.get("coeffs").unwrap_or(&v)).map_err(domain)?;
            Polynomial::new(field.clone(), coeffs).map_err(domain)?
        }
        (None, Some(d), Some(seed)) => {
            if d == 0 {
                return Err(CliError::Usage("--degree must be positive".into()));
            }
            Polynomial::random(field.clone(), d, &mut ChaCha8Rng::seed_from_u64(seed))
        }
        _ => return Err(CliError::Usage("ntt needs --input or --degree with --seed".into())),
    };
    let d = poly.degree();
    let w = TwiddleMatrix::new(field.clone(), d).map_err(domain)?;
    let oracle = matrix_ntt_oracle(&poly, &w).map_err(domain)?;
    let model = match a.accumulator {
        Acc::Fp32 => AccumulatorModel::Fp32Mantissa,
        Acc::Int32 => AccumulatorModel::Int32,
        Acc::Exact => AccumulatorModel::ExactOracle,
    };
    let staging = match a.staging {
        OnOff::On => Staging::On,
        OnOff::Off => Staging::Off,
    };
    let mut res = NttResult {
        field: a.field,
        modulus: field.modulus().to_string(),
        degree: d,
        path: "mxu",
        limbs: None,
        accumulator: a.accumulator,
        staging: a.staging,
        passes: None,
        flagged_cells: None,
        agree: false,
        mismatches: 0,
        oracle: coeffs_to_json(oracle.coeffs()),
        simulated: serde_json::Value::Null,
    };
    let simulated: Vec<BigUint> = match field.modulus_u64() {
        Some(m) if m < 1 << 32 => {
            let limbs = a.limbs.unwrap_or_else(|| (64 - m.leading_zeros()).div_ceil(8) as usize);
            let cfg = MxuConfig::new(model, limbs).map_err(domain)?;
            let d_max = cfg.d_max().map_or(d, |b| b.min(d));
            let tw = ResidueTwiddle::square(&field, d).map_err(domain)?;
            let p = poly.to_u64().expect("residues fit u64");
            let o = staged_matrix_ntt(&p, &tw, &cfg, d_max, staging).map_err(domain)?;
            res.limbs = Some(limbs);
            res.passes = Some(o.passes);
            res.flagged_cells = Some(o.report.flagged.len());
            o.values.into_iter().map(BigUint::from).collect()
        }
        _ => {
            // no matrix-unit lane for a 254-bit modulus: every product goes through the residue pipeline
            if a.limbs.is_some() {
                return Err(CliError::Usage("--limbs applies only to word-sized fields".into()));
            }
            res.path = "erns";
            erns_ntt(&field, &poly, &w)?
        }
    };
    res.mismatches = simulated.iter().zip(oracle.coeffs()).filter(|(s, o)| s != o).count();
    res.agree = res.mismatches == 0;
    res.simulated = coeffs_to_json(&simulated);
    let text = format!(
        "ntt {:?} d={} path={} passes={} flagged={} agree={} mismatches={}\n",
        a.field,
        d,
        res.path,
        res.passes.map_or("-".into(), |p| p.to_string()),
        res.flagged_cells.map_or("-".into(), |p| p.to_string()),
        res.agree,
        res.mismatches
    );
    let code = if res.agree { 0 } else { EXIT_VIOLATION };
    Ok(Run { text, artifacts: vec![("ntt.json", to_json(&res))], code })
}

fn erns_ntt(field: &PrimeField, poly: &Polynomial, w: &TwiddleMatrix) -> Result<Vec<BigUint>, CliError> {
    let sys = ResidueSystem::bn254();
    let d = poly.degree();
    let p: Vec<_> = poly.coeffs().iter().map(|c| sys.to_residues(c)).collect::<Result<_, _>>().map_err(domain)?;
    (0..d)
        .map(|u| {
            let row: Vec<_> =
                (0..d).map(|t| sys.to_residues(w.entry(u, t))).collect::<Result<_, _>>().map_err(domain)?;
            let (prods, _) = sys.bn254_full_mul(&p, &row).map_err(domain)?;
            prods.iter().try_fold(BigUint::from(0u8), |acc, r| {
                Ok(field.add(&acc, &sys.from_residues(r).map_err(domain)?))
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ProbeCell {
    target: u64,
    fp32_exact: bool,
    int32_exact: bool,
}

fn bench_accumulator() -> Run {
    let cells: Vec<ProbeCell> = PROBE_TARGETS
        .iter()
        .map(|&t| ProbeCell {
            target: t,
            fp32_exact: accumulate_probe(t, AccumulatorModel::Fp32Mantissa),
            int32_exact: accumulate_probe(t, AccumulatorModel::Int32),
        })
        .collect();
    let mark = |b: bool| if b { "exact" } else { "inexact" };
    let mut text = format!("{:<12} {:>10} {:>10}\n", "target", "fp32", "int32");
    for c in &cells {
        text += &format!("{:<12} {:>10} {:>10}\n", c.target, mark(c.fp32_exact), mark(c.int32_exact));
    }
    Run { text, artifacts: vec![("accumulator_grid.json", to_json(&cells))], code: 0 }
}

fn schedule_replay(file: &ReplaySpecFile, cal: &Calibration, manifest: &mut Manifest) -> Result<Run, CliError> {
    let mut cfg = ReplayConfig::v4(cal);
    if let Some(o) = &file.replay {
        o.apply(&mut cfg);
    }
    manifest.seed("verify", Some(cfg.verify_seed));
    let out = replay_spec(&file.trace, &cfg).map_err(domain)?;
    let failures: usize = out.report.classes.iter().map(|c| c.verification_failures).sum();
    let mut report = out.report.to_json();
    report.push('\n');
    Ok(Run {
        text: out.report.render_table(),
        artifacts: vec![("replay_report.json", report)],
        code: if failures > 0 { EXIT_VIOLATION } else { 0 },
    })
}

fn validate_hlo(text: &str) -> Result<Run, CliError> {
    let m = IrModule::from_json(text).map_err(domain)?;
    let violations = validate(&m).map_err(domain)?;
    for v in &violations {
        eprintln!("violation {} ({}): nodes {:?}", v.rule, v.rule.describe(), v.nodes.iter().map(|n| n.0).collect::<Vec<_>>());
        eprintln!("{}", v.dump);
    }
    let text = if violations.is_empty() {
        format!("ok: {} nodes, no violations\n", m.nodes.len())
    } else {
        format!("{} violation(s)\n", violations.len())
    };
    Ok(Run {
        text,
        artifacts: vec![("violations.json", to_json(&violations))],
        code: if violations.is_empty() { 0 } else { EXIT_VIOLATION },
    })
}

#[derive(Serialize)]
struct Verdict {
    id: u8,
    name: &'static str,
    passed: bool,
}

fn selftest() -> Run {
    let outcomes = acceptance::run_all();
    let text: String = outcomes.iter().map(|o| format!("{o}\n")).collect();
    let verdicts: Vec<Verdict> = outcomes.iter().map(|o| Verdict { id: o.id, name: o.name, passed: o.passed }).collect();
    let all = outcomes.iter().all(|o| o.passed);
    Run { text, artifacts: vec![("selftest.json", to_json(&verdicts))], code: if all { 0 } else { EXIT_DOMAIN } }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
