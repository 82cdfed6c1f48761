use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;

use pccps::casestudy::{airplane_model, engine_model, EngineParams, Variant};
use pccps::explore::{
    check_time_properties, find_barb, reachable, run_seed, sample_trace, traces_csv, BarbResult, Clause, ExploreError,
    Limits, Plts,
};
use pccps::metric::{check_bisimilar, d_limit, metric_report, MetricError, MetricOptions, Verdict};
use pccps::modeldsl::{load_model, parse_model, render_model};
use pccps::scalar::{set_float_tolerance, Scalar};
use pccps::semantics::Cps;

/// Exit statuses.
const OK: u8 = 0;
const VERDICT: u8 = 1;
const USAGE: u8 = 2;
const RESOURCE: u8 = 3;

#[derive(Parser)]
#[command(name = "pccps", version, about = "Explore, simulate and compare probabilistic cyber-physical system models")]
struct Cli {
    /// Worker threads for the parallel engines.
    #[arg(long, global = true, env = "PCCPS_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check that a model file parses and is well formed.
    Parse { file: PathBuf },
    /// Build the reachable pLTS and print its size.
    Lts {
        file: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
        /// Write the graph in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Check time determinism, maximal progress, patience and well-timedness.
    Timecheck {
        file: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Sample traces under a uniform scheduler and write them as CSV.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 100)]
        slots: u64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the shortest trace ending in an output on a channel.
    Barb {
        file: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        max_slots: Option<u64>,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Compute the n-th iterate of the weak bisimulation metric.
    Metric {
        file1: PathBuf,
        file2: PathBuf,
        #[arg(long)]
        n: usize,
        /// Stop early once the table is stable, treating `--n` as a bound.
        #[arg(long)]
        limit: bool,
        /// JSON report; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        numeric: Numeric,
    },
    /// Iterate the metric until it separates the models or `--n-max` is reached.
    Bisim {
        file1: PathBuf,
        file2: PathBuf,
        #[arg(long)]
        n_max: usize,
        /// Exit with status 1 unless the models stay at distance zero.
        #[arg(long)]
        expect_bisimilar: bool,
        #[command(flatten)]
        numeric: Numeric,
    },
    /// Emit one of the built-in case-study models.
    Casestudy {
        which: Case,
        #[arg(long, default_value_t = 1)]
        g: u32,
        /// Output file; standard output when absent.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = Limits::default().max_states)]
    max_states: usize,
    #[arg(long, default_value_t = Limits::default().max_tau_depth)]
    max_tau_depth: usize,
}

impl LimitArgs {
    fn limits(&self) -> Limits {
        Limits { max_states: self.max_states, max_tau_depth: self.max_tau_depth }
    }
}

#[derive(Args)]
struct Numeric {
    /// Exact rational arithmetic (the default).
    #[arg(long, conflicts_with = "float")]
    rational: bool,
    /// Floating-point arithmetic with tolerance `--tol`.
    #[arg(long)]
    float: bool,
    #[arg(long, default_value_t = 1e-9, requires = "float")]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Engine,
    EngineTilde,
    EngineHat,
    Airplane,
}

/// A failure that ends the command with a given status.
struct Fail(u8, String);

impl From<ExploreError> for Fail {
    fn from(e: ExploreError) -> Self {
        match e {
            ExploreError::NotWellTimed { .. } => Fail(VERDICT, e.to_string()),
            _ => Fail(USAGE, e.to_string()),
        }
    }
}

impl From<MetricError> for Fail {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Truncated(_) => Fail(RESOURCE, e.to_string()),
            MetricError::Explore(e) => e.into(),
            _ => Fail(VERDICT, e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Fail + '_ {
    move |e| Fail(USAGE, format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(io(path))
}

fn load(path: &Path) -> Result<Cps, Fail> {
    load_model(&read(path)?).map_err(|e| Fail(USAGE, format!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => fs::write(p, text).map_err(io(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn explore(path: &Path, limits: Limits) -> Result<Plts, Fail> {
    Ok(reachable(&load(path)?, limits)?)
}

fn clause(name: &str, c: &Clause) {
    match c {
        Clause::Pass => println!("{name}: pass"),
        Clause::Fail { witness, detail } => println!("{name}: FAIL at state {witness} ({detail})"),
    }
}

fn metric<S: Scalar>(m1: &Cps, m2: &Cps, n: usize, limit: bool, out: Option<&Path>) -> Result<u8, Fail> {
    let opts = MetricOptions::default();
    let report = if limit { d_limit::<S>(m1, m2, n, &opts)? } else { metric_report::<S>(m1, m2, n, &opts)? };
    let mut js = serde_json::to_string_pretty(&report).expect("report serializes");
    js.push('\n');
    write_or_print(out, &js)?;
    Ok(OK)
}

fn bisim<S: Scalar>(m1: &Cps, m2: &Cps, n_max: usize, expect: bool) -> Result<u8, Fail> {
    match check_bisimilar::<S>(m1, m2, n_max, &MetricOptions::default())? {
        Verdict::BisimilarUpTo(n) => {
            println!("indistinguishable up to n = {n}");
            Ok(OK)
        }
        Verdict::Distinct { n, value, witness } => {
            println!("distinct: d^{n} = {value}");
            if let Some(w) = witness {
                println!("witness: {} moves with {} (term {})", w.mover, w.action, w.term);
            }
            Ok(if expect { VERDICT } else { OK })
        }
    }
}

fn run(cli: Cli) -> Result<u8, Fail> {
    match cli.cmd {
        Cmd::Parse { file } => {
            let text = read(&file)?;
            match parse_model(&text)
                .map_err(|e| e.to_string())
                .and_then(|mf| pccps::modeldsl::build_model(&mf).map(|_| mf).map_err(|e| e.to_string()))
            {
                Ok(mf) => {
                    println!("ok: model {} (granularity {})", mf.name, mf.granularity);
                    Ok(OK)
                }
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    Ok(VERDICT)
                }
            }
        }
        Cmd::Lts { file, limits, dot } => {
            let plts = explore(&file, limits.limits())?;
            println!("states: {}", plts.len());
            println!("edges: {}", plts.edge_count());
            println!("dead: {}", if plts.dead().is_some() { "reachable" } else { "unreachable" });
            if let Some(p) = dot {
                fs::write(&p, plts.to_dot()).map_err(io(&p))?;
            }
            if plts.truncated {
                eprintln!("truncated at {} states", limits.max_states);
                return Ok(RESOURCE);
            }
            Ok(OK)
        }
        Cmd::Timecheck { file, limits } => {
            let plts = explore(&file, limits.limits())?;
            let r = check_time_properties(&plts);
            clause("time determinism", &r.determinism);
            clause("maximal progress", &r.maximal_progress);
            clause("patience", &r.patience);
            clause("well-timedness", &r.well_timedness);
            if let Some(k) = r.untimed_bound {
                println!("longest untimed run: {k}");
            }
            if plts.truncated {
                eprintln!("inconclusive: truncated at {} states", limits.max_states);
                return Ok(RESOURCE);
            }
            Ok(if r.all_pass() { OK } else { VERDICT })
        }
        Cmd::Simulate { file, slots, runs, seed, out } => {
            let m = load(&file)?;
            let traces = (0..runs)
                .map(|i| sample_trace(&m, slots, run_seed(seed, i)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Fail(VERDICT, e.to_string()))?;
            write_or_print(out.as_deref(), &traces_csv(&traces))?;
            Ok(OK)
        }
        Cmd::Barb { file, channel, max_slots, limits } => {
            let m = load(&file)?;
            match find_barb(&m, &channel, max_slots, limits.limits())? {
                BarbResult::Found(t) => {
                    println!("output on {channel} in slot {}", t.slots());
                    for st in &t.steps {
                        println!("  {} {}", st.slot, pccps::explore::action_text(&st.action, &st.cause));
                    }
                    Ok(OK)
                }
                BarbResult::Absent { exhaustive } => {
                    let scope = if exhaustive { "in any slot" } else { "within the slot bound" };
                    println!("no output on {channel} {scope}");
                    Ok(VERDICT)
                }
                BarbResult::Inconclusive => {
                    eprintln!("inconclusive: state limit reached");
                    Ok(RESOURCE)
                }
            }
        }
        Cmd::Metric { file1, file2, n, limit, out, numeric } => {
            let (m1, m2) = (load(&file1)?, load(&file2)?);
            if numeric.float {
                set_float_tolerance(numeric.tol);
                metric::<f64>(&m1, &m2, n, limit, out.as_deref())
            } else {
                metric::<BigRational>(&m1, &m2, n, limit, out.as_deref())
            }
        }
        Cmd::Bisim { file1, file2, n_max, expect_bisimilar, numeric } => {
            let (m1, m2) = (load(&file1)?, load(&file2)?);
            if numeric.float {
                set_float_tolerance(numeric.tol);
                bisim::<f64>(&m1, &m2, n_max, expect_bisimilar)
            } else {
                bisim::<BigRational>(&m1, &m2, n_max, expect_bisimilar)
            }
        }
        Cmd::Casestudy { which, g, emit } => {
            if g == 0 {
                return Err(Fail(USAGE, "granularity must be at least 1".into()));
            }
            let mf = match which {
                Case::Engine => engine_model(&EngineParams::new(g, Variant::Standard)),
                Case::EngineTilde => engine_model(&EngineParams::new(g, Variant::Tilde)),
                Case::EngineHat => engine_model(&EngineParams::new(g, Variant::Hat)),
                Case::Airplane => airplane_model(g, Variant::Standard),
            };
            write_or_print(emit.as_deref(), &render_model(&mf))?;
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("--jobs must be positive");
            return ExitCode::from(USAGE);
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().expect("thread pool is set once");
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
