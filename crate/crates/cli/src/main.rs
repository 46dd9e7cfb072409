//! `speaq`: grouping, assignment, simulation and self-verification from the
//! command line.
//!
//! Exit codes: 0 success, 1 verification or configuration failure, 2 I/O
//! failure (unreadable or malformed input, unwritable output).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speaq_core::io::{self, IoError, RunConfig, StrategyName};
use speaq_core::report::{self, assignment_report};
use speaq_core::simulator::run_comparison;
use speaq_core::speaq::{run_strategy, AssignContext};
use speaq_core::verify::{run_verify, VerifyConfig};
use speaq_core::{
    group_predicates, group_queries, hungarian, Assignment, AssignmentError, CostMatrix, Groupings,
};

#[derive(Parser)]
#[command(
    name = "speaq",
    version,
    about = "Label assignment for relation detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Group predicates by frequency and split queries proportionally.
    Group {
        /// CSV with header `predicate_id,count`.
        #[arg(long)]
        freq: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_g: usize,
        #[arg(long, default_value_t = 300)]
        n_q: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Assign GTs to predictions for every scene of a JSON Lines file.
    Assign {
        #[arg(long)]
        scenes: PathBuf,
        /// Directory holding predicate_groups.json and query_groups.json.
        #[arg(long)]
        groups_dir: Option<PathBuf>,
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "speaq")]
        strategy: StrategyArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare strategies on seeded synthetic scenes.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Also write an SVG chart of per-group frequencies.
        #[arg(long)]
        svg: bool,
    },
    /// Check the solver against exhaustive search and the grouping constraint.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        max_n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Swap in a solver that misreports its cost.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    Single,
    Iou,
    Agnostic,
    Speaq,
}

impl From<StrategyArg> for StrategyName {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Single => StrategyName::Single,
            StrategyArg::Iou => StrategyName::Iou,
            StrategyArg::Agnostic => StrategyName::Agnostic,
            StrategyArg::Speaq => StrategyName::Speaq,
        }
    }
}

enum Failure {
    /// Bad configuration, invalid arguments or a failed check.
    Check(String),
    Io(String),
}

impl Failure {
    fn check(e: impl fmt::Display) -> Self {
        Failure::Check(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } | IoError::Parse { .. } => Failure::Io(e.to_string()),
            IoError::Invalid { .. } => Failure::Check(e.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))
}

fn group(freq: &Path, n_g: usize, n_q: usize, out_dir: &Path) -> Result<(), Failure> {
    let table = io::read_frequency_csv(freq)?;
    let pg = group_predicates(&table, n_g).map_err(Failure::check)?;
    let qg = group_queries(&pg, n_q).map_err(Failure::check)?;
    create_dir(out_dir)?;
    io::write_groupings(out_dir, &pg, &qg)?;

    println!(
        "{:<6} {:>10} {:>8} {:>16}",
        "group", "predicates", "freq%", "queries"
    );
    for g in 0..pg.n_groups() {
        println!(
            "G{:<5} {:>10} {:>8.1} {:>7} ({:>5.1}%)",
            g + 1,
            pg.groups[g].len(),
            100.0 * pg.group_freq[g],
            qg.counts[g],
            100.0 * qg.counts[g] as f64 / n_q as f64
        );
    }
    Ok(())
}

fn assign(
    scenes_path: &Path,
    groups_dir: Option<&Path>,
    config: Option<&Path>,
    strategy: StrategyName,
    out_dir: &Path,
) -> Result<(), Failure> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let scenes = io::read_scenes(scenes_path)?;
    let loaded = match groups_dir {
        Some(dir) => Some((
            io::read_predicate_grouping(&dir.join(io::PREDICATE_GROUPS_FILE))?,
            io::read_query_grouping(&dir.join(io::QUERY_GROUPS_FILE))?,
        )),
        None => None,
    };
    let groupings = match &loaded {
        Some((pg, qg)) => Some(Groupings::new(pg, qg).map_err(Failure::check)?),
        None => None,
    };
    let ctx = AssignContext {
        weights: cfg.scenario.cost,
        quality: cfg.scenario.quality,
        groupings,
    };
    let strategy = strategy.with_params(cfg.iou_threshold, cfg.agnostic_d);
    let results = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            run_strategy(strategy, &s.gts, &s.preds, &ctx)
                .map_err(|e| Failure::Check(format!("scene {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rep = assignment_report(&strategy.kind().to_string(), &scenes, &results, &cfg.loss)
        .map_err(Failure::check)?;
    create_dir(out_dir)?;
    let json = report::to_canonical_json(&rep).map_err(Failure::check)?;
    io::write_file(&out_dir.join("assignments.json"), &json)?;
    let pairs: usize = results.iter().map(|r| r.pairs.len()).sum();
    println!(
        "{} scenes, {pairs} pairs ({})",
        scenes.len(),
        strategy.kind()
    );
    Ok(())
}

fn simulate(
    config: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    threads: usize,
    svg: bool,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.scenario.seed = seed;
    }
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Failure::check("no output directory: pass --out-dir or set out_dir"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(Failure::check)?;
    let rep = pool
        .install(|| run_comparison(&cfg.scenario, &cfg.strategy_list()))
        .map_err(Failure::check)?;

    create_dir(&out_dir)?;
    let json = report::to_canonical_json(&rep).map_err(Failure::check)?;
    io::write_file(&out_dir.join("report.json"), &json)?;
    if cfg.write_csv {
        for (name, text) in report::report_tables(&rep).map_err(Failure::check)? {
            io::write_file(&out_dir.join(name), &text)?;
        }
    }
    if svg || cfg.write_svg {
        io::write_file(
            &out_dir.join("frequency_per_group.svg"),
            &report::frequency_svg(&rep),
        )?;
    }
    for (name, s) in &rep.strategies {
        let ratio = s
            .suppressed_at(cfg.scenario.promising_iou_threshold)
            .unwrap_or(f64::NAN);
        println!(
            "{name:<9} suppressed@{} {ratio:.4}  avg_d {:.3}  gts/query {:.4}",
            cfg.scenario.promising_iou_threshold, s.avg_d, s.avg_gts_per_query
        );
    }
    Ok(())
}

fn faulty_solver(m: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let mut a = hungarian(m)?;
    if m.n() > 1 {
        a.total_cost += 1.0;
    }
    Ok(a)
}

fn verify(trials: usize, max_n: usize, seed: u64, inject_fault: bool) -> Result<(), Failure> {
    let cfg = VerifyConfig {
        trials,
        max_n,
        seed,
    };
    let solver = if inject_fault {
        faulty_solver
    } else {
        hungarian
    };
    let rep = run_verify(&cfg, solver);
    for s in &rep.suites {
        let status = if s.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {} ({} trials, {} failures)",
            s.name, s.trials, s.failures
        );
        if let Some(msg) = &s.first_failure {
            println!("     first failure: {msg}");
        }
    }
    if rep.passed() {
        Ok(())
    } else {
        Err(Failure::check("verification failed"))
    }
}

fn main() -> ExitCode {
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
    let result = match cli.command {
        Command::Group {
            freq,
            n_g,
            n_q,
            out_dir,
        } => group(&freq, n_g, n_q, &out_dir),
        Command::Assign {
            scenes,
            groups_dir,
            config,
            strategy,
            out_dir,
        } => assign(
            &scenes,
            groups_dir.as_deref(),
            config.as_deref(),
            strategy.into(),
            &out_dir,
        ),
        Command::Simulate {
            config,
            out_dir,
            seed,
            threads,
            svg,
        } => simulate(&config, out_dir.as_deref(), seed, threads, svg),
        Command::Verify {
            trials,
            max_n,
            seed,
            inject_fault,
        } => verify(trials, max_n, seed, inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
