mod export;
mod table;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adjcont::continuation::{read_run, save_run, RunStore, Settings};
use adjcont::flow::corpus::{self, DEFAULT_CORPUS};
use adjcont::invc::{self, CurveState, Difference, SpectrumMode, CURVE_RUN};
use adjcont::osc;
use clap::{Args, Parser, Subcommand, ValueEnum};

use export::Format;

/// Environment variable holding the default run root.
const RUN_ROOT_ENV: &str = "ADJCONT_RUN_DIR";

#[derive(Parser, Debug)]
#[command(name = "adjcont", version, allow_negative_numbers = true, about = "Adjoint-based sensitivity continuation demos")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run root; each run is stored in `<dir>/<run name>`.
    #[arg(long, global = true, env = RUN_ROOT_ENV, default_value = "runs")]
    dir: PathBuf,
    /// Corrector residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Continuation steps per direction.
    #[arg(long, global = true)]
    itmx: Option<usize>,
    /// Print every n-th chart (events are always printed).
    #[arg(long, global = true)]
    npr: Option<usize>,
    /// Initial step size.
    #[arg(long, global = true)]
    h0: Option<f64>,
    /// Largest step size.
    #[arg(long, global = true)]
    hmax: Option<f64>,
    /// Format of exported data files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug, Clone, Copy)]
struct Mesh {
    /// Curve mesh size.
    #[arg(long, default_value_t = 377)]
    q: usize,
    /// Rotation numerator, coprime to q.
    #[arg(long, default_value_t = 233)]
    p_rot: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Oscillator adjoint homotopy e.da: 0 -> 1.
    OscAdjoint,
    /// Oscillator sweep of av over [0.5, 2.5] from the homotopy endpoint.
    OscSweep,
    /// Invariant-curve continuation in r2 over [-0.9, 0].
    InvcContinue {
        #[command(flatten)]
        mesh: Mesh,
    },
    /// Spectral diagnostics of the transversal operator at a stored chart.
    InvcSpectrum {
        #[command(flatten)]
        mesh: Mesh,
        #[arg(long, value_enum, default_value_t = ModeArg::Radius)]
        mode: ModeArg,
        /// Chart label or event name.
        #[arg(long, default_value = "A")]
        at: String,
    },
    /// Asymptotic-phase decay for 20 perturbed initial conditions.
    InvcPhase {
        #[command(flatten)]
        mesh: Mesh,
        #[arg(long, default_value = "A")]
        at: String,
        /// Iterations of the map.
        #[arg(long, default_value_t = 200)]
        k_max: usize,
        /// Perturbation size.
        #[arg(long, default_value_t = 1e-4)]
        delta0: f64,
        /// Mesh index of the base point.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Flow sensitivity corpus.
    FlowDemo {
        /// Alternative corpus file.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Impacting Van der Pol cycle and its period sensitivities.
    HybridDemo,
    /// Named invariant suite; exit 1 on any failure.
    Verify {
        #[arg(value_enum)]
        suite: verify::Suite,
        /// Curve mesh for the `curve` suite.
        #[arg(long, default_value_t = 55)]
        q: usize,
        #[arg(long, default_value_t = 34)]
        p_rot: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Radius,
    Full,
}

/// Failure of a command after argument validation.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
}

impl From<adjcont::Error> for Failure {
    fn from(e: adjcont::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn positive(name: &str, v: Option<f64>) -> Result<(), Failure> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(Failure::Usage(format!("--{name} must be positive, got {x}"))),
        _ => Ok(()),
    }
}

fn nonzero(name: &str, v: Option<usize>) -> Result<(), Failure> {
    match v {
        Some(0) => Err(Failure::Usage(format!("--{name} must be at least 1"))),
        _ => Ok(()),
    }
}

fn check_mesh(m: Mesh) -> Result<(), Failure> {
    if m.q < 3 || m.p_rot == 0 || m.p_rot >= m.q || gcd(m.q, m.p_rot) != 1 {
        return Err(Failure::Usage(format!(
            "--q {} and --p-rot {} must satisfy q >= 3, 0 < p_rot < q and gcd = 1",
            m.q, m.p_rot
        )));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn validate(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    positive("tol", c.tol)?;
    positive("h0", c.h0)?;
    positive("hmax", c.hmax)?;
    nonzero("itmx", c.itmx)?;
    nonzero("npr", c.npr)?;
    if let (Some(h0), Some(hmax)) = (c.h0, c.hmax) {
        if h0 > hmax {
            return Err(Failure::Usage(format!("--h0 {h0} exceeds --hmax {hmax}")));
        }
    }
    match &cli.cmd {
        Command::InvcContinue { mesh } | Command::InvcSpectrum { mesh, .. } => check_mesh(*mesh),
        Command::InvcPhase {
            mesh, k_max, delta0, ..
        } => {
            check_mesh(*mesh)?;
            positive("delta0", Some(*delta0))?;
            nonzero("k-max", Some(*k_max))
        }
        Command::Verify { q, p_rot, .. } => check_mesh(Mesh { q: *q, p_rot: *p_rot }),
        _ => Ok(()),
    }
}

/// Settings with the command-line overrides applied on top of `base`.
fn settings(c: &Common, base: Settings) -> Settings {
    Settings {
        tol: c.tol.unwrap_or(base.tol),
        itmx: c.itmx.unwrap_or(base.itmx),
        npr: c.npr.unwrap_or(base.npr),
        h0: c.h0.unwrap_or(base.h0),
        hmax: c.hmax.unwrap_or(base.hmax).max(c.h0.unwrap_or(0.0)),
        ..base
    }
}

/// Persists `run` and prints its tables from the stored copy.
fn save_and_print(run: &RunStore, prob: &adjcont::problem::Problem, dir: &Path) -> Result<RunStore, Failure> {
    save_run(run, prob, dir)?;
    let stored = read_run(dir, &run.run_name)?;
    table::print_run(&stored);
    Ok(stored)
}

fn osc_adjoint(c: &Common) -> Outcome {
    let s = settings(c, Settings::default());
    let (prob, run) = osc::run_homotopy(&s)?;
    let stored = save_and_print(&run, &prob, &c.dir)?;
    osc::homotopy_end_label(&stored)?;
    Ok(())
}

fn osc_sweep(c: &Common) -> Outcome {
    let s = settings(c, Settings::default());
    let home = match read_run(&c.dir, "osc_adjoint") {
        Ok(r) => r,
        Err(_) => {
            log::info!("no stored homotopy under {}; running it first", c.dir.display());
            let (prob, run) = osc::run_homotopy(&s)?;
            save_run(&run, &prob, &c.dir)?;
            run
        }
    };
    let label = osc::homotopy_end_label(&home)?;
    let s = if c.itmx.is_some() { s } else { osc::sweep_settings(&s) };
    let (prob, run) = osc::run_sweep(&c.dir, &home.run_name, label, &s)?;
    save_and_print(&run, &prob, &c.dir)?;
    Ok(())
}

fn curve_settings(c: &Common, q: usize) -> Settings {
    settings(c, invc::curve_settings(q))
}

fn invc_continue(c: &Common, m: Mesh) -> Outcome {
    let run = invc::run_curve(None, m.q, m.p_rot, &curve_settings(c, m.q))?;
    save_and_print(&run.store, &run.prob, &c.dir)?;
    if let Ok(cs) = run.state_at("A") {
        let fiber = invc::q_phi_limit(&cs, 10_000, Difference::Central)?;
        let path = export::curve(&c.dir, c.format, &cs, &fiber)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Stored curve state at a label or event name, running the continuation
/// first when the run directory has no curve run on this mesh.
fn stored_curve(c: &Common, m: Mesh, at: &str) -> Result<CurveState, Failure> {
    let matches = read_run(&c.dir, CURVE_RUN)
        .ok()
        .filter(|r| r.charts.first().is_some_and(|ch| ch.point.u.len() == 7 * m.q));
    let store = match matches {
        Some(r) => r,
        None => {
            log::info!("no q = {} curve run under {}; running it first", m.q, c.dir.display());
            let run = invc::run_curve(Some(&c.dir), m.q, m.p_rot, &curve_settings(c, m.q))?;
            run.store
        }
    };
    let label = match at.parse::<usize>() {
        Ok(l) => l,
        Err(_) => store
            .with_type(at)
            .first()
            .map(|ch| ch.label)
            .ok_or_else(|| Failure::Run(format!("no chart tagged `{at}` in run `{CURVE_RUN}`")))?,
    };
    Ok(invc::load_curve_state(&c.dir, CURVE_RUN, label, m.q, m.p_rot)?)
}

fn invc_spectrum(c: &Common, m: Mesh, mode: ModeArg, at: &str) -> Outcome {
    let cs = stored_curve(c, m, at)?;
    let fiber = invc::q_phi_limit(&cs, 10_000, Difference::Central)?;
    let mode = match mode {
        ModeArg::Radius => SpectrumMode::Radius,
        ModeArg::Full => SpectrumMode::Full,
    };
    let sp = invc::gamma_hat_spectrum(&cs, &fiber, mode)?;
    println!("{:>10} {:>12} {:>12}", "r2", "b", "max|1+z|");
    println!(
        "{:>10} {:>12} {:>12}",
        table::sci(cs.r2),
        table::sci(cs.b),
        table::sci(sp.radius)
    );
    if sp.radius < 1.0 {
        println!("transversally stable: max|1+z| < 1");
    } else {
        println!("not transversally stable: max|1+z| >= 1");
    }
    let path = export::spectrum(&c.dir, c.format, &sp)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn invc_phase(c: &Common, m: Mesh, at: &str, k_max: usize, delta0: f64, index: usize) -> Outcome {
    let cs = stored_curve(c, m, at)?;
    let fiber = invc::q_phi_limit(&cs, 10_000, Difference::Central)?;
    let curves = invc::phase_decay_ring(&cs, &fiber, index % m.q, &invc::perturbation_ring(20, delta0), k_max);
    let finals: Vec<f64> = curves.iter().map(|g| *g.last().expect("k = 0 is always present")).collect();
    let worst = finals.iter().copied().fold(0.0, f64::max);
    println!("{:>4} {:>12} {:>12}", "IC", "|gap(0)|", "|gap(k_max)|");
    for (j, g) in curves.iter().enumerate() {
        println!("{:>4} {:>12} {:>12}", j + 1, table::sci(g[0]), table::sci(finals[j]));
    }
    println!("largest final gap {} after {k_max} iterates", table::sci(worst));
    let path = export::decay(&c.dir, c.format, &curves)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn flow_demo(c: &Common, file: Option<&Path>) -> Outcome {
    let text = match file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?,
        None => DEFAULT_CORPUS.to_string(),
    };
    let outcomes = corpus::run(&corpus::parse(&text)?);
    table::print_corpus(&outcomes);
    let path = export::corpus(&c.dir, c.format, &outcomes)?;
    println!("wrote {}", path.display());
    if outcomes.iter().all(|o| o.passed) {
        Ok(())
    } else {
        Err(Failure::Run("corpus cases failed".into()))
    }
}

fn hybrid_demo() -> Outcome {
    use adjcont::flow::fields::{Impact, VanDerPol};
    use adjcont::flow::hybrid::{hybrid_period_sensitivity, HybridOrbit, ImpactingVdp};
    use nalgebra::DVector;

    let vector = DVector::from_column_slice;

    let sys = ImpactingVdp::default();
    let p = vector(&[1.0, 0.8]);
    let cyc = sys.cycle(&p)?;
    let wall = sys.wall_surface();
    let g = Impact { index: 1 };
    let orbit = HybridOrbit {
        f1: &VanDerPol,
        f2: &VanDerPol,
        g: &g,
        h_es: &wall,
        x0: vector(&[cyc.x_left, 0.0]),
        sigma: cyc.sigma,
        period: cyc.period,
        p: p.clone(),
        n_steps: 4000,
    };
    let sens = hybrid_period_sensitivity(&orbit)?;
    println!("impacting Van der Pol, wall at x = {}, restitution {}", sys.wall, p[1]);
    println!(
        "x_left {}  sigma {}  T {}",
        table::sci(cyc.x_left),
        table::sci(cyc.sigma),
        table::sci(cyc.period)
    );
    println!("{:>6} {:>12} {:>12}", "param", "dT/dp", "FD");
    let h = 1e-4;
    for (k, name) in ["mu", "r"].iter().enumerate() {
        let mut q = p.clone();
        q[k] += h;
        let up = sys.cycle(&q)?.period;
        q[k] -= 2.0 * h;
        let down = sys.cycle(&q)?.period;
        println!(
            "{:>6} {:>12} {:>12}",
            name,
            table::sci(sens.dt_dp[k]),
            table::sci((up - down) / (2.0 * h))
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    validate(cli)?;
    let c = &cli.common;
    match &cli.cmd {
        Command::OscAdjoint => osc_adjoint(c),
        Command::OscSweep => osc_sweep(c),
        Command::InvcContinue { mesh } => invc_continue(c, *mesh),
        Command::InvcSpectrum { mesh, mode, at } => invc_spectrum(c, *mesh, *mode, at),
        Command::InvcPhase {
            mesh,
            at,
            k_max,
            delta0,
            index,
        } => invc_phase(c, *mesh, at, *k_max, *delta0, *index),
        Command::FlowDemo { corpus } => flow_demo(c, corpus.as_deref()),
        Command::HybridDemo => hybrid_demo(),
        Command::Verify { suite, q, p_rot } => {
            if verify::run(*suite, *q, *p_rot) {
                Ok(())
            } else {
                Err(Failure::Run(format!("suite `{}` failed", suite.name())))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
