//! Command-line front end.
//!
//! Settings are resolved in three layers: built-in defaults, then the
//! `--config` TOML file, then command-line flags. A flag always wins over
//! the file. `--set section.key=value` reaches any config field that has no
//! dedicated flag.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed input), 3 internal error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loopgraph::config::CandidatePolicy;
use loopgraph::metrics::pr_table;
use loopgraph::pipeline::{
    bench, format_records, parse_records, register_pair, report, BenchOptions, SequenceProcessor,
    RECORD_HEADER,
};
use loopgraph::scan_io::{load_labeled_scan, load_poses, ClassMap, ScanFormat};
use loopgraph::synthetic::{
    export_sequence, generate_scene, observe_sequence, square_trajectory, straight_trajectory,
    SceneSpec,
};
use loopgraph::{Error, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "loopgraph",
    version,
    about = "Semantic-graph LiDAR loop closing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run online loop closing over a scan directory.
    Sequence(SequenceArgs),
    /// Verify and register one scan pair.
    Pair(PairArgs),
    /// Register seeded synthetic scene pairs and summarize the errors.
    Bench(BenchArgs),
    /// Score a record file against ground-truth poses.
    Report(ReportArgs),
    /// Write a synthetic sequence in the KITTI layout.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    KittiBin,
    XyzText,
}

impl From<FormatArg> for ScanFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::KittiBin => ScanFormat::KittiBin,
            FormatArg::XyzText => ScanFormat::XyzText,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    First,
    BestGraph,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Class map file (TOML); the built-in SemanticKITTI map by default.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    eigen_k: Option<usize>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    rings: Option<usize>,
    #[arg(long)]
    sectors: Option<usize>,
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    box_tolerance: Option<f64>,
    #[arg(long)]
    triangle_tolerance: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    inlier_threshold: Option<f64>,
    #[arg(long)]
    graph_threshold: Option<f64>,
    #[arg(long)]
    background_threshold: Option<f64>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    exclusion_window: Option<usize>,
    #[arg(long)]
    keyframe_stride: Option<usize>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Any other field, e.g. `--set refinement.voxel_size=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(PipelineConfig, ClassMap), Failure> {
        let mut table: toml::Table = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in &self.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            set_key(&mut table, key.trim(), value.trim())?;
        }
        let mut cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Usage(e.to_string()))?;

        macro_rules! apply {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        apply!(
            seed => verification.seed,
            d_max => graph.d_max,
            eigen_k => graph.eigen_k,
            bin_width => graph.bin_width,
            rings => bev.rings,
            sectors => bev.sectors,
            max_range => bev.max_range,
            min_cluster_size => clustering.min_cluster_size,
            box_tolerance => verification.box_tolerance,
            triangle_tolerance => verification.triangle_tolerance,
            ransac_iterations => verification.ransac_iterations,
            inlier_threshold => verification.inlier_threshold,
            graph_threshold => verification.graph_threshold,
            background_threshold => verification.background_threshold,
            top_n => retrieval.top_n,
            exclusion_window => retrieval.exclusion_window,
            keyframe_stride => retrieval.keyframe_stride,
        );
        if let Some(p) = self.policy {
            cfg.retrieval.policy = match p {
                PolicyArg::First => CandidatePolicy::First,
                PolicyArg::BestGraph => CandidatePolicy::BestGraph,
            };
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let classes = match &self.classes {
            Some(path) => ClassMap::load(path).map_err(Failure::from)?,
            None => ClassMap::default(),
        };
        Ok((cfg, classes))
    }
}

fn set_key(table: &mut toml::Table, key: &str, value: &str) -> Result<(), Failure> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        return Err(Failure::Usage(format!("empty key in `--set {key}`")));
    };
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

#[derive(Args)]
struct SequenceArgs {
    /// Directory of scan files, processed in file-name order.
    #[arg(long)]
    scans: PathBuf,
    /// Directory of `.label` files named after the scans.
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth poses (KITTI format, one line per scan) for the summary.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "kitti-bin")]
    format: FormatArg,
    /// Record stream output; written line by line.
    #[arg(long)]
    out: PathBuf,
    /// Metrics summary output (needs --poses); stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Plot-ready precision/recall table (needs --poses).
    #[arg(long)]
    pr_table: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    candidate_labels: PathBuf,
    #[arg(long, value_enum, default_value = "kitti-bin")]
    format: FormatArg,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene spec (TOML); the default spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Seed of the first trial; trial i uses seed + i.
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    #[arg(long, default_value_t = 3.0)]
    max_offset: f64,
    /// Every Nth trial uses a relative yaw above 150 degrees (0 disables).
    #[arg(long, default_value_t = 3)]
    large_yaw_every: usize,
    /// Per-trial table output.
    #[arg(long)]
    trials_out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    pr_table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathShape {
    Square,
    Straight,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (velodyne/, labels/, poses.txt).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "square")]
    path: PathShape,
    /// Square side or straight-line length, meters.
    #[arg(long, default_value_t = 60.0)]
    length: f64,
    #[arg(long, default_value_t = 4.0)]
    step: f64,
    #[arg(long, default_value_t = 50.0)]
    range: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Io { .. }
            | Error::ScanFormat { .. }
            | Error::Labels { .. }
            | Error::PoseParse { .. }
            | Error::Record(_)
            | Error::TextRecord { .. }
            | Error::Metrics(_) => Failure::Data(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(io_failure(path))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Sequence(a) => run_sequence(a),
        Command::Pair(a) => run_pair(a),
        Command::Bench(a) => run_bench(a),
        Command::Report(a) => run_report(a),
        Command::Synth(a) => run_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}

/// Scan id from a numeric file stem, else the position in the listing.
fn list_scans(dir: &Path) -> Result<Vec<(usize, PathBuf)>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_failure(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .unwrap_or(i);
            (id, p)
        })
        .collect())
}

fn label_path(labels: &Path, scan: &Path) -> PathBuf {
    let stem = scan.file_stem().unwrap_or_default();
    labels.join(stem).with_extension("label")
}

fn run_sequence(a: SequenceArgs) -> Result<(), Failure> {
    let (cfg, classes) = a.config.resolve()?;
    let poses = a.poses.as_ref().map(load_poses).transpose()?;
    let scans = list_scans(&a.scans)?;
    let out = File::create(&a.out).map_err(io_failure(&a.out))?;
    let mut out = BufWriter::new(out);
    writeln!(out, "{RECORD_HEADER}").map_err(io_failure(&a.out))?;

    let mut proc = SequenceProcessor::new(&classes, &cfg)?;
    for (id, path) in &scans {
        let scan = load_labeled_scan(
            path,
            label_path(&a.labels, path),
            a.format.into(),
            &classes,
            *id,
        );
        proc.push(*id, scan);
        if let Some(r) = proc.output.records.last().filter(|r| r.query == *id) {
            writeln!(out, "{}", r.to_line()).map_err(io_failure(&a.out))?;
            out.flush().map_err(io_failure(&a.out))?;
        }
    }
    let output = proc.finish();
    let accepted = output.records.iter().filter(|r| r.accepted).count();
    eprintln!(
        "{} scans, {} skipped, {accepted} loops accepted",
        scans.len(),
        output.skipped.len()
    );
    if let Some(poses) = poses {
        summarize(
            &output.records,
            &poses,
            a.summary.as_deref(),
            a.pr_table.as_deref(),
        )?;
    }
    Ok(())
}

fn summarize(
    records: &[loopgraph::pipeline::LoopRecord],
    poses: &[loopgraph::Pose],
    summary_out: Option<&Path>,
    pr_out: Option<&Path>,
) -> Result<(), Failure> {
    let rep = report(records, poses)?;
    match summary_out {
        Some(path) => write_file(path, &rep.summary.to_text())?,
        None => print!("{}", rep.summary.to_text()),
    }
    if let Some(path) = pr_out {
        let sweep = rep.sweep.ok_or_else(|| {
            Failure::Data("no PR curve: records lack a positive or a negative".into())
        })?;
        write_file(path, &pr_table(&sweep))?;
    }
    Ok(())
}

fn run_pair(a: PairArgs) -> Result<(), Failure> {
    let (cfg, classes) = a.config.resolve()?;
    let q = load_labeled_scan(&a.query, &a.query_labels, a.format.into(), &classes, 0)?;
    let c = load_labeled_scan(
        &a.candidate,
        &a.candidate_labels,
        a.format.into(),
        &classes,
        1,
    )?;
    let result = register_pair(q, c, &classes, &cfg)?;
    print!("{}", format_records(&[result.to_record(0, 1)]));
    Ok(())
}

fn load_spec(path: &Option<PathBuf>) -> Result<SceneSpec, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_failure(p))?;
            Ok(SceneSpec::from_toml_str(&text)?)
        }
        None => Ok(SceneSpec::default()),
    }
}

fn run_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let (cfg, classes) = a.config.resolve()?;
    let spec = load_spec(&a.spec)?;
    let options = BenchOptions {
        trials: a.trials,
        seed: a.first_seed,
        max_offset: a.max_offset,
        large_yaw_every: a.large_yaw_every,
        max_range: cfg.bev.max_range,
    };
    let result = bench(&spec, &options, &classes, &cfg)?;
    if let Some(path) = &a.trials_out {
        let mut text = String::from("# seed\tpoints\taccepted\trte\trye_deg\ttime_ms\treason\n");
        for t in &result.trials {
            let (rte, rye) = t
                .error
                .map_or((f64::NAN, f64::NAN), |e| (e.translation, e.yaw_deg));
            text.push_str(&format!(
                "{}\t{}\t{}\t{rte}\t{rye}\t{}\t{}\n",
                t.seed,
                t.query_points,
                u8::from(t.accepted),
                t.timings.total(),
                t.reason.as_deref().unwrap_or("-")
            ));
        }
        write_file(path, &text)?;
    }
    print!("{}", result.summary.to_text());
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.records).map_err(io_failure(&a.records))?;
    let records = parse_records(&text)?;
    let poses = load_poses(&a.poses)?;
    summarize(&records, &poses, None, a.pr_table.as_deref())
}

fn run_synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = load_spec(&a.spec)?.with_seed(a.seed);
    let poses = match a.path {
        PathShape::Square => square_trajectory(a.length, a.step),
        PathShape::Straight => straight_trajectory(a.length, a.step),
    };
    let scene = generate_scene(&spec);
    let scans = observe_sequence(&scene, &poses, a.range, spec.noise, a.seed);
    export_sequence(&a.out, &scans, &poses)?;
    eprintln!("wrote {} scans to {}", scans.len(), a.out.display());
    Ok(())
}
