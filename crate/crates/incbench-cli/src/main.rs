//! incbench: generate reference bit streams, scan them for Z-liars,
//! and compare sources with the Kolmogorov-Smirnov test.
//!
//! Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
//!
//! Every value flag can also be supplied through a JSON config file
//! (`--config run.json`) whose top-level keys are subcommand names and
//! whose entries use the long flag names; explicit flags win over the
//! config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use incbench_core::bitio;
use incbench_core::csstest::{self, ScanOptions};
use incbench_core::numth;
use incbench_core::qsim::{
    self, ConfusionMatrix, DriftParams, GenerationConfig, ProtocolVariant,
};
use incbench_core::sources::{self, NoiseSetting, SourceSpec};
use incbench_core::stats;
use num_bigint::BigUint;
use serde_json::json;

mod overlay;

use overlay::Overlay;

#[derive(Parser)]
#[command(
    name = "incbench",
    about = "CSS4 incomputability benchmark pipeline",
    version
)]
struct Cli {
    /// JSON config file overlaid under the flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate bits from a named source into a .rbf file.
    Gen(GenArgs),
    /// Sample the qutrit simulator, or run the full generation loop.
    Qsim(QsimArgs),
    /// Scan a recorded bit string for Z-liars.
    Zscan(ZscanArgs),
    /// Enumerate the E-liars of an odd composite.
    Liars(LiarsArgs),
    /// List Carmichael numbers up to a bound.
    Carmichael(CarmichaelArgs),
    /// Aggregate scan reports and compare sources.
    Compare(CompareArgs),
    /// Check the measurement unitary and its four-factor decomposition.
    VerifyUnitary(VerifyUnitaryArgs),
    /// Apply the ternary-to-binary morphism to a trit file.
    Morphism(MorphismArgs),
}

#[derive(Args)]
struct GenArgs {
    /// mt19937 | hashctr | champernowne | file | qsim
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of bits to generate.
    #[arg(long)]
    bits: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input .rbf for --kind file.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// fig1 | fig2, for --kind qsim.
    #[arg(long)]
    protocol: Option<String>,
    /// default | none | <json array or file>, for --kind qsim.
    #[arg(long)]
    noise: Option<String>,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct QsimArgs {
    #[command(subcommand)]
    command: Option<QsimCommand>,
    #[command(flatten)]
    sample: QsimSampleArgs,
}

#[derive(Subcommand)]
enum QsimCommand {
    /// Emulate the generation loop: sequential files with fidelity
    /// drift and recalibration.
    Run(QsimRunArgs),
}

#[derive(Args)]
struct QsimSampleArgs {
    /// fig1 | fig2
    #[arg(long)]
    protocol: Option<String>,
    /// default | none | <json array or file>
    #[arg(long)]
    noise: Option<String>,
    /// Number of trits to sample.
    #[arg(long)]
    trits: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output .rtf path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the morphism image as .rbf.
    #[arg(long)]
    bits_out: Option<PathBuf>,
}

#[derive(Args)]
struct QsimRunArgs {
    /// Number of files to produce.
    #[arg(long)]
    files: Option<u32>,
    /// Trits per file.
    #[arg(long)]
    bits: Option<u64>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write morphism .rbf next to each .rtf.
    #[arg(long)]
    emit_bits: bool,
    /// Mean fidelity loss per file (0 disables drift).
    #[arg(long)]
    drift_step: Option<f64>,
    #[arg(long)]
    initial_fidelity: Option<f64>,
    #[arg(long)]
    reset_fidelity: Option<f64>,
}

#[derive(Args)]
struct ZscanArgs {
    /// Input .rbf file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated odd composites; defaults to the ten below 50.
    #[arg(long)]
    composites: Option<String>,
    #[arg(long)]
    step: Option<u64>,
    /// Output report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label recorded in the report; defaults to source/seed from the
    /// input sidecar, then to the file stem.
    #[arg(long)]
    source_id: Option<String>,
    /// Shards per composite; falls back to INCBENCH_THREADS, then 1.
    #[arg(long)]
    threads: Option<u64>,
    /// Z-liar positions recorded per composite.
    #[arg(long)]
    positions: Option<u64>,
    /// Do not record positions at all.
    #[arg(long)]
    no_positions: bool,
    /// Optional CSV row in the per-composite table layout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct LiarsArgs {
    /// Odd composite to profile.
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Args)]
struct CarmichaelArgs {
    /// Inclusive upper bound for the enumeration.
    #[arg(long)]
    max: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report files, grouped by parent directory (one directory per
    /// source): `--reports a/*.json b/*.json --labels a,b`.
    #[arg(long, num_args = 1.., action = clap::ArgAction::Append)]
    reports: Vec<PathBuf>,
    /// Comma-separated labels, one per report directory in order of
    /// first appearance.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-composite means table CSV.
    #[arg(long)]
    table1: Option<PathBuf>,
    /// Pairwise p-value matrix CSV.
    #[arg(long)]
    pvalues: Option<PathBuf>,
    /// Five-number summaries CSV.
    #[arg(long)]
    boxplot: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyUnitaryArgs {
    /// Allowed residual for the factor product, up to global phase.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct MorphismArgs {
    /// Input .rtf file.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output .rbf file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overlay = match Overlay::load(cli.config.as_deref()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &overlay) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum Failure {
    Usage(String),
    Domain(String),
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn domain(err: impl std::fmt::Display) -> Failure {
    Failure::Domain(err.to_string())
}

fn run(command: Command, overlay: &Overlay) -> Result<(), Failure> {
    match command {
        Command::Gen(args) => cmd_gen(args, overlay),
        Command::Qsim(args) => match args.command {
            Some(QsimCommand::Run(run_args)) => cmd_qsim_run(run_args, overlay),
            None => cmd_qsim_sample(args.sample, overlay),
        },
        Command::Zscan(args) => cmd_zscan(args, overlay),
        Command::Liars(args) => cmd_liars(args, overlay),
        Command::Carmichael(args) => cmd_carmichael(args, overlay),
        Command::Compare(args) => cmd_compare(args, overlay),
        Command::VerifyUnitary(args) => cmd_verify_unitary(args, overlay),
        Command::Morphism(args) => cmd_morphism(args, overlay),
    }
}

fn parse_protocol(value: &str) -> Result<ProtocolVariant, Failure> {
    match value {
        "fig1" => Ok(ProtocolVariant::Fig1),
        "fig2" => Ok(ProtocolVariant::Fig2),
        other => Err(usage(format!("unknown protocol '{other}' (fig1 | fig2)"))),
    }
}

/// `default`, `none`, an inline JSON 3x3 array, or a path to one.
fn parse_noise(value: &str) -> Result<NoiseSetting, Failure> {
    match value {
        "default" => Ok(NoiseSetting::Default),
        "none" => Ok(NoiseSetting::None),
        other => {
            let text = if other.trim_start().starts_with('[') {
                other.to_string()
            } else {
                std::fs::read_to_string(other)
                    .map_err(|e| usage(format!("cannot read noise file {other}: {e}")))?
            };
            let matrix: ConfusionMatrix = serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid confusion matrix: {e}")))?;
            Ok(NoiseSetting::Custom(matrix))
        }
    }
}

fn parse_composites(value: &str) -> Result<Vec<u64>, Failure> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| usage(format!("invalid composite '{part}'")))
        })
        .collect()
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| domain(format!("writing {}: {e}", path.display())))
}

fn to_pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_gen(args: GenArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("gen");
    let kind = section
        .string("kind", args.kind)
        .ok_or_else(|| usage("--kind is required"))?;
    let bits = section
        .u64("bits", args.bits)
        .ok_or_else(|| usage("--bits is required"))? as usize;
    let out = section
        .path("out", args.out)
        .ok_or_else(|| usage("--out is required"))?;
    let seed = section.u64("seed", args.seed).unwrap_or(0);
    let spec = match kind.as_str() {
        "mt19937" => SourceSpec::Mt19937 { seed },
        "hashctr" => SourceSpec::HashCtr { seed },
        "champernowne" => SourceSpec::Champernowne,
        "file" => {
            let path = section
                .path("in", args.input)
                .ok_or_else(|| usage("--kind file requires --in"))?;
            SourceSpec::File { path }
        }
        "qsim" => {
            let protocol =
                parse_protocol(&section.string("protocol", args.protocol).unwrap_or_else(|| "fig2".into()))?;
            let noise = parse_noise(&section.string("noise", args.noise).unwrap_or_else(|| "default".into()))?;
            SourceSpec::Qsim {
                protocol,
                noise,
                seed,
            }
        }
        other => return Err(usage(format!("unknown source kind '{other}'"))),
    };
    sources::generate(&spec, bits, &out).map_err(domain)?;
    eprintln!("wrote {} ({bits} bits, {})", out.display(), spec.kind_label());
    Ok(())
}

fn cmd_qsim_sample(args: QsimSampleArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("qsim");
    let protocol =
        parse_protocol(&section.string("protocol", args.protocol).unwrap_or_else(|| "fig2".into()))?;
    let noise = parse_noise(&section.string("noise", args.noise).unwrap_or_else(|| "default".into()))?;
    let count = section
        .u64("trits", args.trits)
        .ok_or_else(|| usage("--trits is required"))? as usize;
    let seed = section.u64("seed", args.seed).unwrap_or(0);
    let out = section
        .path("out", args.out)
        .ok_or_else(|| usage("--out is required"))?;
    let spec = protocol.spec();
    let trits = qsim::sample_trits(&spec, noise.matrix().as_ref(), count, seed);
    let sidecar = bitio::Sidecar {
        length_bits: trits.len() as u64,
        source: Some("qsim".into()),
        seed: Some(seed),
        created: None,
        spec: Some(json!({
            "protocol": protocol,
            "noise": noise,
            "trits": count,
            "seed": seed,
        })),
    };
    bitio::write_rtf_with_sidecar(&out, &trits, sidecar).map_err(domain)?;
    if let Some(bits_out) = section.path("bits-out", args.bits_out) {
        let bits = bitio::morphism_phi(&trits);
        bitio::write_rbf(&bits_out, &bits).map_err(domain)?;
    }
    eprintln!("wrote {} ({count} trits)", out.display());
    Ok(())
}

fn cmd_qsim_run(args: QsimRunArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("qsim-run");
    let protocol =
        parse_protocol(&section.string("protocol", args.protocol).unwrap_or_else(|| "fig2".into()))?;
    let noise = parse_noise(&section.string("noise", args.noise).unwrap_or_else(|| "default".into()))?;
    let files = section
        .u64("files", args.files.map(u64::from))
        .unwrap_or(qsim::DEFAULT_FILE_COUNT as u64) as u32;
    let symbols = section
        .u64("bits", args.bits)
        .unwrap_or(qsim::DEFAULT_SYMBOLS_PER_FILE as u64) as usize;
    let seed = section.u64("seed", args.seed).unwrap_or(0);
    let out_dir = section
        .path("out-dir", args.out_dir)
        .ok_or_else(|| usage("--out-dir is required"))?;
    let drift = DriftParams {
        initial_fidelity: section
            .f64("initial-fidelity", args.initial_fidelity)
            .unwrap_or(qsim::DEFAULT_INITIAL_FIDELITY),
        step: section.f64("drift-step", args.drift_step).unwrap_or(0.002),
        reset_fidelity: section
            .f64("reset-fidelity", args.reset_fidelity)
            .unwrap_or(qsim::DEFAULT_INITIAL_FIDELITY),
    };
    let config = GenerationConfig {
        protocol,
        noise: noise.matrix(),
        drift,
        files,
        symbols_per_file: symbols,
        seed,
        emit_bits: args.emit_bits || section.bool("emit-bits").unwrap_or(false),
    };
    let log = qsim::run_generation(&config, &out_dir).map_err(domain)?;
    eprintln!(
        "wrote {} file(s) under {}, {} recalibration(s)",
        log.files_written.len(),
        out_dir.display(),
        log.recalibrations.len()
    );
    Ok(())
}

fn cmd_zscan(args: ZscanArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("zscan");
    let input_path = section
        .path("input", args.input)
        .ok_or_else(|| usage("--input is required"))?;
    let out = section
        .path("out", args.out)
        .ok_or_else(|| usage("--out is required"))?;
    let composites = match section.string("composites", args.composites) {
        Some(list) => parse_composites(&list)?,
        None => csstest::default_composites(),
    };
    let step = section.u64("step", args.step).unwrap_or(1) as usize;
    let threads = section
        .u64("threads", args.threads)
        .or_else(|| {
            std::env::var("INCBENCH_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1) as usize;
    let record_positions = if args.no_positions || section.bool("no-positions").unwrap_or(false) {
        None
    } else {
        Some(section.u64("positions", args.positions).unwrap_or(1000) as usize)
    };

    let bits = bitio::read_rbf(&input_path).map_err(domain)?;
    let source_id = section
        .string("source-id", args.source_id)
        .unwrap_or_else(|| default_source_id(&input_path));
    let options = ScanOptions {
        source_id,
        threads,
        record_positions,
    };
    let report = csstest::scan(&bits, &composites, step, &options).map_err(domain)?;
    write_text(&out, &to_pretty(&report))?;
    if let Some(csv_path) = section.path("csv", args.csv) {
        let mut csv = String::from("source");
        for n in report.per_composite.keys() {
            csv.push_str(&format!(",{n}"));
        }
        csv.push('\n');
        csv.push_str(&report.source_id);
        for scan in report.per_composite.values() {
            csv.push_str(&format!(",{}", scan.zliar_count));
        }
        csv.push('\n');
        write_text(&csv_path, &csv)?;
    }
    eprintln!(
        "scanned {} bits, average metric {}",
        report.input_length, report.average_metric
    );
    Ok(())
}

/// source/seed from the sidecar when present, else the file stem.
fn default_source_id(path: &std::path::Path) -> String {
    let sidecar: Option<bitio::Sidecar> = std::fs::read_to_string(format!(
        "{}.json",
        path.display()
    ))
    .ok()
    .and_then(|text| serde_json::from_str(&text).ok());
    if let Some(sc) = sidecar {
        if let Some(source) = sc.source {
            return match sc.seed {
                Some(seed) => format!("{source}-{seed}"),
                None => source,
            };
        }
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn cmd_liars(args: LiarsArgs, overlay: &Overlay) -> Result<(), Failure> {
    let n = overlay
        .section("liars")
        .u64("n", args.n)
        .ok_or_else(|| usage("--n is required"))?;
    let profile = numth::euler_liars(n).map_err(domain)?;
    let (num, den) = profile.beta();
    let out = json!({
        "n": profile.n,
        "liars": profile.liars,
        "beta": num as f64 / den as f64,
    });
    println!("{}", serde_json::to_string(&out).unwrap());
    Ok(())
}

fn cmd_carmichael(args: CarmichaelArgs, overlay: &Overlay) -> Result<(), Failure> {
    let max = overlay
        .section("carmichael")
        .u64("max", args.max)
        .ok_or_else(|| usage("--max is required"))?;
    let carmichaels: Vec<u64> = (4..=max)
        .filter(|&n| numth::is_carmichael(&BigUint::from(n)))
        .collect();
    println!(
        "{}",
        serde_json::to_string(&json!({ "max": max, "carmichaels": carmichaels })).unwrap()
    );
    Ok(())
}

/// Groups report paths by parent directory, in order of first
/// appearance.
fn group_by_directory(paths: Vec<PathBuf>) -> Vec<Vec<PathBuf>> {
    let mut order: Vec<PathBuf> = Vec::new();
    let mut groups: Vec<Vec<PathBuf>> = Vec::new();
    for path in paths {
        let parent = path.parent().map(PathBuf::from).unwrap_or_default();
        match order.iter().position(|p| *p == parent) {
            Some(i) => groups[i].push(path),
            None => {
                order.push(parent);
                groups.push(vec![path]);
            }
        }
    }
    groups
}

fn cmd_compare(args: CompareArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("compare");
    let flat: Vec<PathBuf> = if args.reports.is_empty() {
        section
            .paths("reports")
            .ok_or_else(|| usage("--reports is required"))?
    } else {
        args.reports
    };
    // Globs like `dir/*.json` also match data-file sidecars; drop them.
    let flat: Vec<PathBuf> = flat
        .into_iter()
        .filter(|p| {
            let name = p.file_name().map(|s| s.to_string_lossy()).unwrap_or_default();
            !name.ends_with(".rbf.json") && !name.ends_with(".rtf.json")
        })
        .collect();
    let groups_paths = group_by_directory(flat);
    let labels_raw = section
        .string("labels", args.labels)
        .ok_or_else(|| usage("--labels is required"))?;
    let labels: Vec<String> = labels_raw.split(',').map(|s| s.trim().to_string()).collect();
    if labels.len() != groups_paths.len() {
        return Err(usage(format!(
            "{} label(s) for {} report director(ies)",
            labels.len(),
            groups_paths.len()
        )));
    }
    let out = section
        .path("out", args.out)
        .ok_or_else(|| usage("--out is required"))?;

    let mut groups = Vec::new();
    for (label, mut paths) in labels.into_iter().zip(groups_paths) {
        paths.sort();
        let mut reports = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| domain(format!("reading {}: {e}", path.display())))?;
            let report: csstest::ZScanReport = serde_json::from_str(&text)
                .map_err(|e| domain(format!("parsing {}: {e}", path.display())))?;
            reports.push(report);
        }
        groups.push((label, reports));
    }
    let comparison = stats::aggregate(&groups).map_err(domain)?;
    write_text(&out, &to_pretty(&comparison))?;
    if let Some(path) = section.path("table1", args.table1) {
        write_text(&path, &stats::table1_csv(&comparison))?;
    }
    if let Some(path) = section.path("pvalues", args.pvalues) {
        write_text(&path, &stats::pvalues_csv(&comparison))?;
    }
    if let Some(path) = section.path("boxplot", args.boxplot) {
        write_text(&path, &stats::boxplot_csv(&comparison))?;
    }
    for pair in &comparison.pairwise {
        eprintln!(
            "{} vs {}: D = {:.4}, p = {:.4}{}",
            pair.a,
            pair.b,
            pair.d,
            pair.p_value,
            if pair.significant { " (significant)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_verify_unitary(args: VerifyUnitaryArgs, overlay: &Overlay) -> Result<(), Failure> {
    let tolerance = overlay
        .section("verify-unitary")
        .f64("tolerance", args.tolerance)
        .unwrap_or(1e-10);
    let report = qsim::decomposition_report();
    let pass = report.unitarity_residual <= 1e-12
        && report.product_residual_mod_phase <= tolerance;
    let out = json!({
        "unitarity_residual": report.unitarity_residual,
        "factor_unitarity_residuals": report.factor_unitarity_residuals,
        "product_residual": report.product_residual,
        "product_residual_mod_phase": report.product_residual_mod_phase,
        "global_phase": report.global_phase,
        "tolerance": tolerance,
        "pass": pass,
    });
    println!("{}", serde_json::to_string_pretty(&out).unwrap());
    if pass {
        Ok(())
    } else {
        Err(domain(format!(
            "factor product deviates from the measurement unitary by {:e} (tolerance {tolerance:e})",
            report.product_residual_mod_phase
        )))
    }
}

fn cmd_morphism(args: MorphismArgs, overlay: &Overlay) -> Result<(), Failure> {
    let section = overlay.section("morphism");
    let input = section
        .path("in", args.input)
        .ok_or_else(|| usage("--in is required"))?;
    let out = section
        .path("out", args.out)
        .ok_or_else(|| usage("--out is required"))?;
    let trits = bitio::read_rtf(&input).map_err(domain)?;
    let bits = bitio::morphism_phi(&trits);
    let sidecar = bitio::Sidecar {
        length_bits: bits.len() as u64,
        source: Some("morphism".into()),
        seed: None,
        created: None,
        spec: Some(json!({ "in": input.display().to_string() })),
    };
    bitio::write_rbf_with_sidecar(&out, &bits, sidecar).map_err(domain)?;
    eprintln!("wrote {} ({} bits)", out.display(), bits.len());
    Ok(())
}
