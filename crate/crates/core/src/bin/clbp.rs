//! Command-line front end: model generation, exact statistics, single
//! temperature solves and annealed sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clbp::constraints::{
    solve_constrained, BasisKind, ConstrainedOptions, DiagCount, Regime, Scope, SolveStatus, Solver,
};
use clbp::graph_model::{load_factor_graph, save_factor_graph, FactorGraph, LoadOptions};
use clbp::harness::{
    anneal_sweep, fmt_num, gen_fully_connected, gen_potts_regular, gen_wainwright_jordan, write_sweep_csv, AnnealSchedule,
    OracleMode, SweepOptions, RNG_NAME,
};
use clbp::oracle::exact_stats;
use clbp::{ConstraintError, HarnessError, ModelError, OracleError};

#[derive(Parser)]
#[command(name = "clbp", version, about = "Constrained loopy belief propagation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated model in the factor-graph text format.
    Gen(GenArgs),
    /// Exact statistics by enumeration.
    Exact(ExactArgs),
    /// Constrained solve at one temperature.
    Infer(InferArgs),
    /// Annealed temperature sweep.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Fc,
    Wj,
    Potts,
}

#[derive(Args)]
struct GenArgs {
    family: Family,
    /// Variable count (fc, potts).
    #[arg(long)]
    n: Option<usize>,
    /// Grid side (wj).
    #[arg(long)]
    l: Option<usize>,
    /// Field (fc).
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pairs {
    All,
    Edges,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Pairs::Edges)]
    pairs: Pairs,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    #[value(name = "2core")]
    TwoCore,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Orthonormal,
    Delta,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Clbp,
    Doubleloop,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Up,
    Down,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Auto,
    On,
    Off,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, value_parser = parse_regime)]
    regime: Regime,
    #[arg(long, value_enum, default_value_t = ScopeArg::TwoCore)]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value_t = BasisArg::Orthonormal)]
    basis: BasisArg,
    #[arg(long, value_enum, default_value_t = SolverArg::Clbp)]
    solver: SolverArg,
    #[arg(long)]
    tol_msg: Option<f64>,
    #[arg(long)]
    tol_constraint: Option<f64>,
    /// Cap on multiplier cycles.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Initial damping of messages and multipliers.
    #[arg(long)]
    damping: Option<f64>,
    /// Same-variable pairs per Potts variable: 3 (upper triangle) or 4 (ordered).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(3..=4))]
    potts_diag_count: u8,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: f64,
    #[command(flatten)]
    flags: SolverFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t_start: f64,
    #[arg(long)]
    t_end: f64,
    #[arg(long)]
    t_steps: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::Down)]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = OracleArg::Auto)]
    oracle: OracleArg,
    #[command(flatten)]
    flags: SolverFlags,
    #[arg(long)]
    out: PathBuf,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse()
}

/// Failure with its exit code.
struct Fail {
    code: u8,
    msg: String,
}

impl Fail {
    fn input(msg: impl ToString) -> Self {
        Self { code: 2, msg: msg.to_string() }
    }

    fn numeric(msg: impl ToString) -> Self {
        Self { code: 3, msg: msg.to_string() }
    }
}

impl From<ModelError> for Fail {
    fn from(e: ModelError) -> Self {
        Fail::input(e)
    }
}

impl From<OracleError> for Fail {
    fn from(e: OracleError) -> Self {
        Fail::input(e)
    }
}

impl From<ConstraintError> for Fail {
    fn from(e: ConstraintError) -> Self {
        match e {
            ConstraintError::Inference(_) | ConstraintError::VanishingDiagonal(_) => Fail::numeric(e),
            _ => Fail::input(e),
        }
    }
}

impl From<HarnessError> for Fail {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Constraint(c) => c.into(),
            other => Fail::input(other),
        }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Fail {
    Fail::input(format!("{}: {e}", path.display()))
}

fn load(path: &Path) -> Result<FactorGraph<f64>, Fail> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    Ok(load_factor_graph(&text, LoadOptions::default())?)
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn options(f: &SolverFlags) -> Result<ConstrainedOptions, Fail> {
    let mut o = ConstrainedOptions::default();
    o.build.scope = match f.scope {
        ScopeArg::TwoCore => Scope::TwoCore,
        ScopeArg::All => Scope::All,
    };
    if f.potts_diag_count == 4 {
        o.build.diag_count = DiagCount::Ordered;
    }
    o.basis = match f.basis {
        BasisArg::Orthonormal => BasisKind::Orthonormal,
        BasisArg::Delta => BasisKind::Delta,
    };
    o.solver = match f.solver {
        SolverArg::Clbp => Solver::Clbp,
        SolverArg::Doubleloop => Solver::DoubleLoop,
    };
    if let Some(v) = f.tol_msg {
        if !(v > 0.0) {
            return Err(Fail::input("--tol-msg must be positive"));
        }
        o.clbp.tol_msg = v;
        o.double_loop.tol = v;
    }
    if let Some(v) = f.tol_constraint {
        if !(v > 0.0) {
            return Err(Fail::input("--tol-constraint must be positive"));
        }
        o.tol_constraint = v;
    }
    if let Some(k) = f.max_iter {
        o.max_cycles = k.max(1);
    }
    if let Some(d) = f.damping {
        if !(0.0..1.0).contains(&d) {
            return Err(Fail::input("--damping must lie in [0, 1)"));
        }
        o.damping = d;
        o.clbp.damping = d;
    }
    Ok(o)
}

fn gen(a: GenArgs) -> Result<(), Fail> {
    let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| Fail::input(format!("--{flag} is required")));
    let (fg, what) = match a.family {
        Family::Fc => {
            let n = need(a.n, "n")?;
            (gen_fully_connected(n, a.h)?, format!("fully connected N={n} h={}", a.h))
        }
        Family::Wj => {
            let l = need(a.l, "l")?;
            (gen_wainwright_jordan(l, a.seed)?, format!("grid L={l} seed={} rng={RNG_NAME}", a.seed))
        }
        Family::Potts => {
            let n = need(a.n, "n")?;
            (gen_potts_regular(n, a.seed)?, format!("potts 3-regular N={n} seed={} rng={RNG_NAME}", a.seed))
        }
    };
    write(&a.out, &format!("# {what}\n{}", save_factor_graph(&fg)))
}

fn exact(a: ExactArgs) -> Result<(), Fail> {
    let fg = load(&a.model)?.scale_temperature(a.t)?;
    let n = fg.num_vars();
    let pairs: Vec<(usize, usize)> = match a.pairs {
        Pairs::All => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        Pairs::Edges => {
            let mut p = std::collections::BTreeSet::new();
            for f in fg.factors() {
                let m = f.members();
                for x in 0..m.len() {
                    for y in x + 1..m.len() {
                        p.insert((m[x].min(m[y]), m[x].max(m[y])));
                    }
                }
            }
            p.into_iter().collect()
        }
    };
    let s = exact_stats(&fg, &pairs)?;
    let mut out = String::from("kind,i,yi,j,yj,value\n");
    out.push_str(&format!("log_z,,,,,{}\n", fmt_num(s.log_z)));
    for (i, m) in s.single_marginals.iter().enumerate() {
        for (y, v) in m.iter().enumerate() {
            out.push_str(&format!("marginal,{i},{y},,,{}\n", fmt_num(*v)));
        }
    }
    for &(i, j) in &pairs {
        for y in 0..s.cards[i] {
            for y2 in 0..s.cards[j] {
                out.push_str(&format!("cov,{i},{y},{j},{y2},{}\n", fmt_num(s.cov(i, y, j, y2))));
            }
        }
    }
    write(&a.out, &out)
}

fn infer(a: InferArgs) -> Result<(), Fail> {
    let fg = load(&a.model)?;
    if !(a.t > 0.0 && a.t.is_finite()) {
        return Err(Fail::input("--t must be positive"));
    }
    let opts = options(&a.flags)?;
    let sol = solve_constrained(&fg, a.flags.regime, a.t, &opts)?;
    let mut out = String::from("kind,index,state,value\n");
    for (i, m) in sol.marginals().iter().enumerate() {
        for (y, v) in m.iter().enumerate() {
            out.push_str(&format!("marginal,{i},{y},{}\n", fmt_num(*v)));
        }
    }
    for (c, v) in sol.lambda.values.iter().enumerate() {
        out.push_str(&format!("lambda,{c},,{}\n", fmt_num(*v)));
    }
    for (c, v) in sol.violation.values.iter().enumerate() {
        out.push_str(&format!("delta,{c},,{}\n", fmt_num(*v)));
    }
    write(&a.out, &out)?;
    println!(
        "status={} cycles={} max_abs_delta={}",
        sol.status,
        sol.lambda.cycles,
        fmt_num(sol.max_abs_delta())
    );
    if sol.status == SolveStatus::NumericFault {
        return Err(Fail::numeric(format!("numeric fault: {}", sol.message)));
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Fail> {
    let fg = load(&a.model)?;
    let (lo, hi) = (a.t_start.min(a.t_end), a.t_start.max(a.t_end));
    let sched = match a.direction {
        DirectionArg::Down => AnnealSchedule::geometric(hi, lo, a.t_steps)?,
        DirectionArg::Up => AnnealSchedule::geometric(lo, hi, a.t_steps)?,
    };
    let opts = SweepOptions {
        constrained: options(&a.flags)?,
        oracle: match a.oracle {
            OracleArg::Auto => OracleMode::Auto,
            OracleArg::On => OracleMode::On,
            OracleArg::Off => OracleMode::Off,
        },
        ..Default::default()
    };
    let recs = anneal_sweep(&fg, a.flags.regime, &sched, &opts)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &recs).map_err(|e| io_fail(&a.out, e))?;
    fs::File::create(&a.out).and_then(|mut f| f.write_all(&buf)).map_err(|e| io_fail(&a.out, e))?;
    let conv = recs.iter().filter(|r| r.converged()).count();
    println!("{conv}/{} temperatures converged", recs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Exact(a) => exact(a),
        Cmd::Infer(a) => infer(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
