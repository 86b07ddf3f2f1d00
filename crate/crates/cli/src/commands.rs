use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use geod::consistency::{enforce_pairwise_rotations, full_report, DEFAULT_TOL_ROT, DEFAULT_TOL_TRANS};
use geod::graph::{degree_stats, laplacian, DegreeStats, Pose, PoseGraph};
use geod::io::dataset::{Dataset, GenerateConfig};
use geod::io::g2o::{parse_g2o, write_g2o};
use geod::io::{export_history_csv, export_trajectory_csv};
use geod::runtime::{run_distributed, RuntimeConfig};
use geod::solver::{evaluate_objective, in_basin, SolveResult, Solver, SolverConfig, TranslationMode};
use geod::synth::{gps_init, identity_init, spanning_tree_init};
use geod::{ConsistencyReport, Error, Result};

/// Largest graph for which the dense Laplacian spectrum is computed.
const LAMBDA2_MAX_N: usize = 2000;
/// Cap on the cycles composed by the global consistency check.
const CYCLE_LIMIT: usize = 100_000;

#[derive(Parser, Debug)]
#[command(name = "geod", version, about = "Geodesic distributed pose graph optimization")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a JSON {spec, noise, seed} config.
    Generate {
        config: PathBuf,
        out: PathBuf,
    },
    /// Solve a dataset and write trajectory, history and summary files.
    Solve(SolveArgs),
    /// Print size, connectivity, consistency and basin diagnostics.
    Info(InfoArgs),
    /// Convert between g2o and the native JSON format.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Defaults to the input file extension.
        #[arg(long, value_enum)]
        in_format: Option<Format>,
        /// Defaults to the output file extension.
        #[arg(long, value_enum)]
        out_format: Option<Format>,
        /// Add the inverse of every measurement whose opposite direction is missing.
        #[arg(long)]
        symmetrize: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    G2o,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InitMode {
    /// Dataset vertices perturbed with Gaussian noise.
    Gps,
    /// Measurements chained along a breadth-first tree from vertex 0.
    Tree,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RunMode {
    Reference,
    Distributed,
}

#[derive(Args, Debug)]
struct SolverFlags {
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 1e-2)]
    stop_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// per_step_averaged, online_averaged or raw.
    #[arg(long, default_value_t = TranslationMode::PerStepAveraged)]
    translation_mode: TranslationMode,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            stop_tol: self.stop_tol,
            max_iters: self.max_iters,
            translation_mode: self.translation_mode,
            record_history: true,
        }
    }
}

#[derive(Args, Debug)]
struct InitFlags {
    /// Seed of the GPS-like initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// GPS translation noise, meters.
    #[arg(long, default_value_t = 0.5)]
    gps_tau: f64,
    /// GPS rotation noise, radians.
    #[arg(long, default_value_t = 0.524)]
    gps_kappa: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = InitMode::Tree)]
    init: InitMode,
    #[arg(long, value_enum, default_value_t = RunMode::Reference)]
    mode: RunMode,
    #[arg(long, default_value = "geod-out")]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    init_flags: InitFlags,
    /// Solve on the raw rotations instead of their pairwise averages.
    #[arg(long)]
    no_enforce: bool,
    /// Distributed mode: per-round deadlock timeout, seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Distributed mode: write the message log (JSONL) to this file.
    #[arg(long)]
    message_log: Option<PathBuf>,
    /// Also print the summary JSON to stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct InfoArgs {
    dataset: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Basin margin: residual angles must stay below pi/2 - epsilon.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[command(flatten)]
    init_flags: InitFlags,
    #[arg(long)]
    json: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Solve(args) => cmd_solve(&args),
        Command::Info(args) => cmd_info(&args),
        Command::Convert {
            input,
            output,
            in_format,
            out_format,
            symmetrize,
        } => cmd_convert(&input, in_format, &output, out_format, symmetrize),
    }
}

fn format_of(path: &Path, explicit: Option<Format>) -> Result<Format> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("g2o") => Ok(Format::G2o),
        Some("json") => Ok(Format::Json),
        _ => Err(Error::InvalidConfig(format!(
            "cannot infer the format of {}; pass --format/--in-format/--out-format (g2o or json)",
            path.display()
        ))),
    }
}

fn load_dataset(path: &Path, format: Option<Format>) -> Result<Dataset> {
    match format_of(path, format)? {
        Format::Json => Dataset::load(path),
        Format::G2o => {
            let doc = parse_g2o(BufReader::new(File::open(path)?))?;
            log::info!("parsed {} poses / {} measurements", doc.n(), doc.measurements.len());
            Ok(Dataset::from_g2o(&doc, false))
        }
    }
}

fn cmd_generate(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: GenerateConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        Error::InvalidConfig(format!("{}: {}", e.path(), e.inner()))
    })?;
    cfg.spec.validate()?;
    cfg.noise.validate()?;
    let ds = Dataset::generate(&cfg)?;
    ds.save(out)?;
    log::info!("wrote {} vertices / {} measurements to {}", ds.n(), ds.measurements.len(), out.display());
    Ok(())
}

fn initialization(mode: InitMode, ds_poses: &[Pose], g: &PoseGraph, flags: &InitFlags) -> Result<Vec<Pose>> {
    Ok(match mode {
        InitMode::Gps => gps_init(ds_poses, flags.gps_tau, flags.gps_kappa, flags.seed),
        InitMode::Tree => spanning_tree_init(g, 0)?,
        InitMode::Identity => identity_init(g.n()),
    })
}

#[derive(Serialize)]
struct SolveSummary {
    dataset: String,
    n: usize,
    measurements: usize,
    mode: RunMode,
    init: InitMode,
    enforced_pairwise_rotations: bool,
    config: SolverConfig,
    iterations: usize,
    converged: bool,
    wall_clock_s: f64,
    initial_geodesic: f64,
    final_geodesic: f64,
    final_chordal: f64,
    consistency: ConsistencyReport,
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, args.format)?;
    let raw = ds.graph()?;
    let g = if args.no_enforce { raw } else { enforce_pairwise_rotations(&raw)? };
    let consistency = full_report(&g, DEFAULT_TOL_ROT, DEFAULT_TOL_TRANS, CYCLE_LIMIT)?;
    let init = initialization(args.init, &ds.poses()?, &g, &args.init_flags)?;
    let initial_geodesic = evaluate_objective(&init, &g)?.geodesic;
    let config = args.solver.config();

    let start = Instant::now();
    let result: SolveResult = match args.mode {
        RunMode::Reference => Solver::new(&g, config.clone())?.solve(init)?,
        RunMode::Distributed => {
            if !(args.timeout > 0.0 && args.timeout.is_finite()) {
                return Err(Error::InvalidConfig(format!("timeout must be positive, got {}", args.timeout)));
            }
            let rc = RuntimeConfig {
                solver: config.clone(),
                timeout: Duration::from_secs_f64(args.timeout),
                record_messages: args.message_log.is_some(),
            };
            let run = run_distributed(&g, init, &rc)?;
            if let (Some(path), Some(log)) = (&args.message_log, &run.log) {
                let audit = log.audit(&g);
                log::info!("message audit: {audit:?}");
                log.write_jsonl(BufWriter::new(File::create(path)?))?;
            }
            run.result
        }
    };
    let wall_clock_s = start.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out_dir)?;
    export_trajectory_csv(BufWriter::new(File::create(args.out_dir.join("trajectory.csv"))?), &result.estimates)?;
    export_history_csv(BufWriter::new(File::create(args.out_dir.join("history.csv"))?), &result.history)?;
    let summary = SolveSummary {
        dataset: args.dataset.display().to_string(),
        n: g.n(),
        measurements: g.num_directed(),
        mode: args.mode,
        init: args.init,
        enforced_pairwise_rotations: !args.no_enforce,
        config,
        iterations: result.iterations,
        converged: result.converged,
        wall_clock_s,
        initial_geodesic,
        final_geodesic: result.objective.geodesic,
        final_chordal: result.objective.chordal,
        consistency,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(args.out_dir.join("summary.json"), &text)?;
    if args.json {
        println!("{text}");
    } else {
        println!(
            "{} after {} iterations: geodesic {:.6}, chordal {:.6} ({:.3} s); results in {}",
            if result.converged { "converged" } else { "stopped (max_iters)" },
            result.iterations,
            result.objective.geodesic,
            result.objective.chordal,
            wall_clock_s,
            args.out_dir.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct BasinCheck {
    init: InitMode,
    in_basin: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct InfoReport {
    n: usize,
    measurements: usize,
    /// Directed measurements present in the file before pairing.
    measurements_in_file: usize,
    paired_in_file: bool,
    degree: DegreeStats,
    lambda2: Option<f64>,
    consistency: ConsistencyReport,
    /// Checked against the pairwise-averaged rotations the solver uses.
    basin_epsilon: f64,
    basin: Vec<BasinCheck>,
}

fn cmd_info(args: &InfoArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, args.format)?;
    let g = ds.graph()?;
    let lambda2 = if g.n() <= LAMBDA2_MAX_N {
        laplacian(&g).lambda2()
    } else {
        log::warn!("skipping the Laplacian spectrum for n = {} > {LAMBDA2_MAX_N}", g.n());
        None
    };
    let consistency = full_report(&g, DEFAULT_TOL_ROT, DEFAULT_TOL_TRANS, CYCLE_LIMIT)?;
    let enforced = enforce_pairwise_rotations(&g)?;
    let poses = ds.poses()?;
    let basin = [InitMode::Gps, InitMode::Tree, InitMode::Identity]
        .into_iter()
        .map(|mode| match initialization(mode, &poses, &enforced, &args.init_flags) {
            Ok(init) => BasinCheck {
                init: mode,
                in_basin: Some(in_basin(&init, &enforced, args.epsilon)),
                error: None,
            },
            Err(e) => BasinCheck {
                init: mode,
                in_basin: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let report = InfoReport {
        n: g.n(),
        measurements: g.num_directed(),
        measurements_in_file: ds.measurements.len(),
        paired_in_file: ds.is_paired(),
        degree: degree_stats(&g),
        lambda2,
        consistency,
        basin_epsilon: args.epsilon,
        basin,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print_info(&report);
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

fn print_info(r: &InfoReport) {
    println!("vertices            {}", r.n);
    println!(
        "measurements        {} directed ({} in file, {})",
        r.measurements,
        r.measurements_in_file,
        if r.paired_in_file { "paired" } else { "directed-only" }
    );
    println!("degree              min {} / mean {:.2} / max {}", r.degree.min, r.degree.mean, r.degree.max);
    println!("lambda2             {}", opt(r.lambda2));
    let c = &r.consistency;
    println!("pairwise defect     rot {} / trans {}", opt(c.pairwise_rot_max_defect), opt(c.pairwise_trans_max_defect));
    println!("minimal defect      rot {} / trans {}", opt(c.minimal_rot_defect), opt(c.minimal_trans_defect));
    if let Some(d) = c.global_max_cycle_defect {
        println!(
            "cycle defect        rot {:.6e} / trans {:.6e} over {} cycles",
            d.rotation, d.translation, d.cycles_checked
        );
    }
    for b in &r.basin {
        let state = match (&b.in_basin, &b.error) {
            (Some(true), _) => "inside".to_string(),
            (Some(false), _) => "outside".to_string(),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "-".to_string(),
        };
        println!("basin ({:<8})    {state} (epsilon {})", format!("{:?}", b.init).to_lowercase(), r.basin_epsilon);
    }
}

fn cmd_convert(
    input: &Path,
    in_format: Option<Format>,
    output: &Path,
    out_format: Option<Format>,
    symmetrize: bool,
) -> Result<()> {
    let in_format = format_of(input, in_format)?;
    let out_format = format_of(output, out_format)?;
    let mut ds = match in_format {
        Format::Json => Dataset::load(input)?,
        Format::G2o => {
            let doc = parse_g2o(BufReader::new(File::open(input)?))?;
            Dataset::from_g2o(&doc, false)
        }
    };
    if symmetrize {
        let ms = geod::graph::symmetrize(&ds.relative_measurements());
        let added = ms.len() - ds.measurements.len();
        let rebuilt = Dataset::from_parts(&ds.poses()?, &ms, ds.ground_truth);
        ds.measurements = rebuilt.measurements;
        log::info!("symmetrize added {added} inverse measurements");
    }
    match out_format {
        Format::Json => ds.save(output)?,
        Format::G2o => {
            let mut out = BufWriter::new(File::create(output)?);
            write_g2o(&mut out, &ds.poses()?, &ds.relative_measurements(), ds.ids.as_deref(), None)?;
        }
    }
    Ok(())
}
