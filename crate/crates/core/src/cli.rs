//! Experiment runner: configuration, subcommands and CSV output.
//!
//! A configuration file is flat `key = value` text. Global keys (`seed`,
//! `threads`, `out`) come first, followed by a single `[subcommand]` section.
//! Lists are comma separated. [`ExperimentConfig::render`] produces the
//! canonical text, which parses back to the same configuration.

use crate::coupling::{self, CouplingConfig};
use crate::error::{Error, Result};
use crate::estimate::goodness_of_fit;
use crate::formulas::{self, f_threshold, CouplingProbs, MadPathParams, ThresholdVariant};
use crate::oracle::{self, EnumTree, PathChain};
use crate::rubin::{self, ClockStore, RubinWalk};
use crate::stats::{self, Backend, RecurrenceConfig, SpeedConfig};
use crate::tree::{LazyTree, OffspringLaw, VertexId};
use crate::walk::{trajectory_csv, Configuration, Walk, WalkParams};
use crate::{par, rng};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Parse(_) => EXIT_CONFIG,
        Error::InvariantViolation(_) | Error::Singular(_) => EXIT_INVARIANT,
        Error::InsufficientData(_) | Error::BudgetExceeded(_) => EXIT_DATA,
    }
}

/// How the walk weights are given.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum WalkSpec {
    Raw { u0: f64, u1: f64 },
    Multiplicative { alpha: f64, beta: f64 },
    Additive { alpha: f64, beta: f64 },
}

impl WalkSpec {
    pub fn params(&self) -> Result<WalkParams> {
        match *self {
            WalkSpec::Raw { u0, u1 } => WalkParams::new(u0, u1),
            WalkSpec::Multiplicative { alpha, beta } => WalkParams::multiplicative(alpha, beta),
            WalkSpec::Additive { alpha, beta } => WalkParams::additive(alpha, beta),
        }
    }

    fn take(f: &mut Fields) -> Result<Self> {
        let kind: String = f.take("walk", "raw".to_string())?;
        let spec = match kind.as_str() {
            "raw" => WalkSpec::Raw { u0: f.take("u0", 1.0)?, u1: f.take("u1", 1.0)? },
            "multiplicative" => WalkSpec::Multiplicative { alpha: f.take("alpha", 1.0)?, beta: f.take("beta", 0.0)? },
            "additive" => WalkSpec::Additive { alpha: f.take("alpha", 1.0)?, beta: f.take("beta", 0.0)? },
            _ => return Err(Error::Parse(format!("unknown walk kind '{kind}'"))),
        };
        spec.params()?;
        Ok(spec)
    }

    fn render(&self, out: &mut String) {
        match self {
            WalkSpec::Raw { u0, u1 } => {
                line(out, "walk", "raw");
                line(out, "u0", u0);
                line(out, "u1", u1);
            }
            WalkSpec::Multiplicative { alpha, beta } | WalkSpec::Additive { alpha, beta } => {
                let kind = if matches!(self, WalkSpec::Additive { .. }) { "additive" } else { "multiplicative" };
                line(out, "walk", kind);
                line(out, "alpha", alpha);
                line(out, "beta", beta);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub n_max: u64,
    /// Kernel and clock-driven samples for the trajectory check.
    pub samples: u64,
    pub d_max: u32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { n_max: 20, samples: 20_000, d_max: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfig {
    pub d: u32,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub level: u32,
    pub horizon: u64,
    pub half_hits: u64,
    pub batch: u64,
    pub max_runs: u64,
    pub threshold: f64,
    /// Cells with `|margin|` below this are left out of the agreement count.
    pub band: f64,
    pub backend: Backend,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            d: 2,
            u0: vec![0.1, 0.2, 0.3, 1.2, 1.5, 2.0, 3.0],
            u1: vec![0.1, 0.3, 0.5, 0.6, 1.2, 1.5, 3.0],
            level: 40,
            horizon: 8000,
            half_hits: 100,
            batch: 500,
            max_runs: 200_000,
            threshold: 0.5,
            band: 0.1,
            backend: Backend::Kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedCurveConfig {
    pub mode: formulas::Reinforcement,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub law: OffspringLaw,
    pub steps: u64,
    pub runs: u64,
    pub margin: u32,
}

impl Default for SpeedCurveConfig {
    fn default() -> Self {
        Self {
            mode: formulas::Reinforcement::Multiplicative,
            alpha: 15.0,
            beta: vec![0.0, 0.05, 0.1],
            law: OffspringLaw::Regular(10),
            steps: 1_000_000,
            runs: 8,
            margin: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingRunConfig {
    pub alpha: f64,
    pub d: u32,
    pub beta: f64,
    pub eps: f64,
    pub steps: u64,
    pub runs: u64,
    /// 0 derives the margin from the drift of the driving walk.
    pub margin: u32,
}

impl Default for CouplingRunConfig {
    fn default() -> Self {
        Self { alpha: 15.0, d: 10, beta: 0.0, eps: 0.05, steps: 1_000_000, runs: 4, margin: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreenConfig {
    pub walk: WalkSpec,
    pub law: OffspringLaw,
    pub n_star: u32,
    pub generations: usize,
    pub runs: u64,
    pub max_population: usize,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            walk: WalkSpec::Raw { u0: 1.0, u1: 1.0 },
            law: OffspringLaw::Regular(2),
            n_star: 3,
            generations: 20,
            runs: 200,
            max_population: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateConfig {
    pub walk: WalkSpec,
    pub law: OffspringLaw,
    pub steps: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { walk: WalkSpec::Raw { u0: 1.0, u1: 1.0 }, law: OffspringLaw::Regular(2), steps: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Verify(VerifyConfig),
    PhaseDiagram(PhaseConfig),
    SpeedCurve(SpeedCurveConfig),
    Coupling(CouplingRunConfig),
    Green(GreenConfig),
    Simulate(SimulateConfig),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::PhaseDiagram(_) => "phase-diagram",
            Command::SpeedCurve(_) => "speed-curve",
            Command::Coupling(_) => "coupling",
            Command::Green(_) => "green",
            Command::Simulate(_) => "simulate",
        }
    }

    fn from_fields(name: &str, f: &mut Fields) -> Result<Self> {
        Ok(match name {
            "verify" => {
                let d = VerifyConfig::default();
                Command::Verify(VerifyConfig {
                    n_max: f.take("n_max", d.n_max)?,
                    samples: f.take("samples", d.samples)?,
                    d_max: f.take("d_max", d.d_max)?,
                })
            }
            "phase-diagram" => {
                let d = PhaseConfig::default();
                Command::PhaseDiagram(PhaseConfig {
                    d: f.take("d", d.d)?,
                    u0: f.take_list("u0", d.u0)?,
                    u1: f.take_list("u1", d.u1)?,
                    level: f.take("level", d.level)?,
                    horizon: f.take("horizon", d.horizon)?,
                    half_hits: f.take("half_hits", d.half_hits)?,
                    batch: f.take("batch", d.batch)?,
                    max_runs: f.take("max_runs", d.max_runs)?,
                    threshold: f.take("threshold", d.threshold)?,
                    band: f.take("band", d.band)?,
                    backend: f.take("backend", d.backend)?,
                })
            }
            "speed-curve" => {
                let d = SpeedCurveConfig::default();
                Command::SpeedCurve(SpeedCurveConfig {
                    mode: f.take("mode", d.mode)?,
                    alpha: f.take("alpha", d.alpha)?,
                    beta: f.take_list("beta", d.beta)?,
                    law: f.take("law", d.law)?,
                    steps: f.take("steps", d.steps)?,
                    runs: f.take("runs", d.runs)?,
                    margin: f.take("margin", d.margin)?,
                })
            }
            "coupling" => {
                let d = CouplingRunConfig::default();
                Command::Coupling(CouplingRunConfig {
                    alpha: f.take("alpha", d.alpha)?,
                    d: f.take("d", d.d)?,
                    beta: f.take("beta", d.beta)?,
                    eps: f.take("eps", d.eps)?,
                    steps: f.take("steps", d.steps)?,
                    runs: f.take("runs", d.runs)?,
                    margin: f.take("margin", d.margin)?,
                })
            }
            "green" => {
                let d = GreenConfig::default();
                Command::Green(GreenConfig {
                    walk: WalkSpec::take(f)?,
                    law: f.take("law", d.law)?,
                    n_star: f.take("n_star", d.n_star)?,
                    generations: f.take("generations", d.generations)?,
                    runs: f.take("runs", d.runs)?,
                    max_population: f.take("max_population", d.max_population)?,
                })
            }
            "simulate" => {
                let d = SimulateConfig::default();
                Command::Simulate(SimulateConfig {
                    walk: WalkSpec::take(f)?,
                    law: f.take("law", d.law)?,
                    steps: f.take("steps", d.steps)?,
                })
            }
            _ => return Err(Error::Parse(format!("unknown subcommand '{name}'"))),
        })
    }

    fn render(&self, out: &mut String) {
        match self {
            Command::Verify(c) => {
                line(out, "n_max", c.n_max);
                line(out, "samples", c.samples);
                line(out, "d_max", c.d_max);
            }
            Command::PhaseDiagram(c) => {
                line(out, "d", c.d);
                line(out, "u0", list(&c.u0));
                line(out, "u1", list(&c.u1));
                line(out, "level", c.level);
                line(out, "horizon", c.horizon);
                line(out, "half_hits", c.half_hits);
                line(out, "batch", c.batch);
                line(out, "max_runs", c.max_runs);
                line(out, "threshold", c.threshold);
                line(out, "band", c.band);
                line(out, "backend", c.backend);
            }
            Command::SpeedCurve(c) => {
                line(out, "mode", c.mode);
                line(out, "alpha", c.alpha);
                line(out, "beta", list(&c.beta));
                line(out, "law", &c.law);
                line(out, "steps", c.steps);
                line(out, "runs", c.runs);
                line(out, "margin", c.margin);
            }
            Command::Coupling(c) => {
                line(out, "alpha", c.alpha);
                line(out, "d", c.d);
                line(out, "beta", c.beta);
                line(out, "eps", c.eps);
                line(out, "steps", c.steps);
                line(out, "runs", c.runs);
                line(out, "margin", c.margin);
            }
            Command::Green(c) => {
                c.walk.render(out);
                line(out, "law", &c.law);
                line(out, "n_star", c.n_star);
                line(out, "generations", c.generations);
                line(out, "runs", c.runs);
                line(out, "max_population", c.max_population);
            }
            Command::Simulate(c) => {
                c.walk.render(out);
                line(out, "law", &c.law);
                line(out, "steps", c.steps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub command: Command,
}

impl ExperimentConfig {
    /// Defaults for a subcommand.
    pub fn defaults(command: &str) -> Result<Self> {
        Self::from_sections(BTreeMap::new(), command, BTreeMap::new())
    }

    fn from_sections(
        global: BTreeMap<String, String>,
        command: &str,
        section: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut g = Fields(global);
        let seed = g.take("seed", 1u64)?;
        let threads = g.take("threads", 0usize)?;
        let out: String = g.take("out", "out".to_string())?;
        g.finish("global")?;
        let mut f = Fields(section);
        let command = Command::from_fields(command, &mut f)?;
        f.finish(command.name())?;
        Ok(Self { seed, threads: (threads > 0).then_some(threads), out: PathBuf::from(out), command })
    }

    /// Parse configuration text. `command` is required when the text has no
    /// section header.
    pub fn parse(text: &str, command: Option<&str>) -> Result<Self> {
        let (global, name, section) = split_sections(text)?;
        let name = match (name, command) {
            (Some(n), Some(c)) if n != c => {
                return Err(Error::Parse(format!("config section [{n}] does not match subcommand {c}")))
            }
            (Some(n), _) => n,
            (None, Some(c)) => c.to_string(),
            (None, None) => return Err(Error::Parse("config names no subcommand".into())),
        };
        Self::from_sections(global, &name, section)
    }

    /// Canonical text form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        line(&mut out, "seed", self.seed);
        line(&mut out, "threads", self.threads.unwrap_or(0));
        line(&mut out, "out", self.out.display());
        out.push_str(&format!("\n[{}]\n", self.command.name()));
        self.command.render(&mut out);
        out
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

type Sections = (BTreeMap<String, String>, Option<String>, BTreeMap<String, String>);

fn split_sections(text: &str) -> Result<Sections> {
    let mut global = BTreeMap::new();
    let mut name: Option<String> = None;
    let mut section = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        if let Some(h) = l.strip_prefix('[') {
            let h = h.strip_suffix(']').ok_or_else(|| Error::Parse(format!("line {}: bad section header", i + 1)))?;
            if name.is_some() {
                return Err(Error::Parse(format!("line {}: only one section is allowed", i + 1)));
            }
            name = Some(h.trim().to_string());
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
        let target = if name.is_some() { &mut section } else { &mut global };
        if target.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key '{}'", i + 1, k.trim())));
        }
    }
    Ok((global, name, section))
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Parse(format!("{key} = {v}: {e}"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|e| Error::Parse(format!("{key} = {v}: {e}"))))
                .collect(),
        }
    }

    fn finish(self, section: &str) -> Result<()> {
        match self.0.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Parse(format!("unknown key '{k}' in {section}"))),
        }
    }
}

fn line(out: &mut String, key: &str, value: impl fmt::Display) {
    let _ = writeln!(out, "{key} = {value}");
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Parser, Debug)]
#[command(name = "madwalk", version, about = "Once-reinforced biased random walks on trees")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the canonical configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Set a configuration key, e.g. `--set steps=100000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct CouplingArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    margin: Option<u32>,
    #[command(flatten)]
    rest: Overrides,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Check closed forms and samplers against exact oracles.
    Verify(Overrides),
    /// Classify recurrence over a (u0, u1) grid.
    PhaseDiagram(Overrides),
    /// Speed as a function of beta.
    SpeedCurve(Overrides),
    /// Coupled walks at beta and beta + eps.
    Coupling(CouplingArgs),
    /// Green branching process.
    Green(Overrides),
    /// Dump one trajectory.
    Simulate(Overrides),
}

impl Sub {
    fn name(&self) -> &'static str {
        match self {
            Sub::Verify(_) => "verify",
            Sub::PhaseDiagram(_) => "phase-diagram",
            Sub::SpeedCurve(_) => "speed-curve",
            Sub::Coupling(_) => "coupling",
            Sub::Green(_) => "green",
            Sub::Simulate(_) => "simulate",
        }
    }

    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let set = match self {
            Sub::Verify(o) | Sub::PhaseDiagram(o) | Sub::SpeedCurve(o) | Sub::Green(o) | Sub::Simulate(o) => &o.set,
            Sub::Coupling(c) => {
                let typed: [(&str, Option<String>); 7] = [
                    ("alpha", c.alpha.map(|x| x.to_string())),
                    ("d", c.d.map(|x| x.to_string())),
                    ("beta", c.beta.map(|x| x.to_string())),
                    ("eps", c.eps.map(|x| x.to_string())),
                    ("steps", c.steps.map(|x| x.to_string())),
                    ("runs", c.runs.map(|x| x.to_string())),
                    ("margin", c.margin.map(|x| x.to_string())),
                ];
                out.extend(typed.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
                &c.rest.set
            }
        };
        for s in set {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got '{s}'")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let name = cli.command.name();
    let (mut global, mut section) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
            let (g, n, s) = split_sections(&text)?;
            if let Some(n) = n {
                if n != name {
                    return Err(Error::Parse(format!("config section [{n}] does not match subcommand {name}")));
                }
            }
            (g, s)
        }
        None => (BTreeMap::new(), BTreeMap::new()),
    };
    for (k, v) in cli.command.overrides()? {
        section.insert(k, v);
    }
    if let Some(s) = cli.seed {
        global.insert("seed".into(), s.to_string());
    }
    if let Some(t) = cli.threads {
        global.insert("threads".into(), t.to_string());
    }
    if let Some(o) = &cli.out {
        global.insert("out".into(), o.display().to_string());
    }
    ExperimentConfig::from_sections(global, name, section)
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if cli.print_config {
        print!("{}", cfg.render());
        return EXIT_OK;
    }
    match run(&cfg) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Run a configuration, writing CSV files to its output directory and
/// returning a human-readable summary.
pub fn run(cfg: &ExperimentConfig) -> Result<String> {
    par::init_threads(cfg.threads);
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::InvalidParameter(format!("cannot create {}: {e}", cfg.out.display())))?;
    match &cfg.command {
        Command::Verify(c) => run_verify(c, cfg.seed, &cfg.out),
        Command::PhaseDiagram(c) => run_phase(c, cfg.seed, &cfg.out),
        Command::SpeedCurve(c) => run_speed(c, cfg.seed, &cfg.out),
        Command::Coupling(c) => run_coupling(c, cfg.seed, &cfg.out),
        Command::Green(c) => run_green(c, cfg.seed, &cfg.out),
        Command::Simulate(c) => run_simulate(c, cfg.seed, &cfg.out),
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", p.display())))
}

/// One line of the verification suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

fn check_below(name: &str, value: f64, limit: f64) -> Check {
    Check { name: name.into(), value, limit, pass: value <= limit }
}

fn check_above(name: &str, value: f64, limit: f64) -> Check {
    Check { name: name.into(), value, limit, pass: value >= limit }
}

/// Largest deviation of `phi` and `psi` from the path-chain oracle over a
/// 5 x 5 grid of `(a, b)` and `n <= n_max`.
pub fn formula_oracle_deviation(n_max: u64) -> Result<(f64, f64)> {
    let grid = [0.2, 0.4, 0.5, 0.6, 0.8];
    let bs = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut phi_dev: f64 = 0.0;
    let mut psi_dev: f64 = 0.0;
    for &a in &grid {
        for &b in &bs {
            let mp = MadPathParams::new(a, b)?;
            let wp = WalkParams::new(b / (1.0 - b), a / (1.0 - a))?;
            for n in 1..=n_max {
                let chain = PathChain::new(mp, n)?;
                for ell in [0, n / 2] {
                    if ell >= n {
                        continue;
                    }
                    let want = oracle::exact_path_hit(&chain, ell as i64, ell as i64)?;
                    phi_dev = phi_dev.max((formulas::phi(mp, ell, n)? - want).abs());
                }
                let want = oracle::exact_path_hit(&chain, 0, 0)?;
                psi_dev = psi_dev.max((formulas::psi(wp, n)? - want).abs());
            }
        }
    }
    Ok((phi_dev, psi_dev))
}

/// Largest interval-length residual over all coupled and decoupled
/// partitions for `d <= d_max`, at a few `(alpha, beta, eps)`.
pub fn partition_residual(d_max: u32) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for d in 1..=d_max {
        for (alpha, beta, eps) in [(15.0, 0.0, 0.05), (15.0, 0.05, 0.05), (3.0, 0.5, 0.02), (40.0, 0.2, 0.1)] {
            let c = CouplingProbs::new(alpha, d, beta, eps)?;
            for k in 0..=d {
                worst = worst.max(coupling::marginal_check(&c, k)?.max_residual());
            }
        }
    }
    Ok(worst)
}

/// Empirical 6-step trajectory counts on the depth-3 binary tree for the
/// kernel and clock-driven samplers, against the exact distribution.
pub struct TrajectoryComparison {
    pub exact: BTreeMap<Vec<VertexId>, f64>,
    pub kernel: BTreeMap<Vec<VertexId>, u64>,
    pub rubin: BTreeMap<Vec<VertexId>, u64>,
}

impl TrajectoryComparison {
    pub fn run(params: WalkParams, samples: u64, seed: u64) -> Result<Self> {
        let tree = LazyTree::regular(2)?.truncated(3);
        let exact = oracle::enumerate_step_distribution(&EnumTree::new(tree.clone(), 3, params), 6)?;
        let kernel_paths = par::map_runs(samples, |i| {
            let mut w = Walk::new(tree.clone(), params);
            let mut r = rng::stream(seed, i);
            let mut path = vec![w.position()];
            for _ in 0..6 {
                let u: f64 = r.random();
                w.step(u);
                path.push(w.position());
            }
            path
        });
        let rubin_paths = par::map_runs(samples, |i| {
            let clocks = ClockStore::new(rng::derive_seed(seed, 0x7275_6269, i));
            let mut w = RubinWalk::new(tree.clone(), params, clocks);
            let mut path = vec![w.position()];
            for _ in 0..6 {
                w.step();
                path.push(w.position());
            }
            path
        });
        let count = |paths: Vec<Vec<VertexId>>| {
            let mut m = BTreeMap::new();
            for p in paths {
                *m.entry(p).or_insert(0u64) += 1;
            }
            m
        };
        Ok(Self { exact, kernel: count(kernel_paths), rubin: count(rubin_paths) })
    }

    fn freqs(counts: &BTreeMap<Vec<VertexId>, u64>) -> BTreeMap<&Vec<VertexId>, f64> {
        let n = counts.values().sum::<u64>() as f64;
        counts.iter().map(|(k, &c)| (k, c as f64 / n)).collect()
    }

    pub fn tv(&self, counts: &BTreeMap<Vec<VertexId>, u64>) -> f64 {
        crate::estimate::total_variation(self.exact.iter().map(|(k, &p)| (k, p)), Self::freqs(counts))
    }

    /// Goodness-of-fit p-value, or 0 if a path outside the support was drawn.
    pub fn p_value(&self, counts: &BTreeMap<Vec<VertexId>, u64>) -> f64 {
        if counts.keys().any(|k| !self.exact.contains_key(k)) {
            return 0.0;
        }
        let obs: Vec<u64> = self.exact.keys().map(|k| counts.get(k).copied().unwrap_or(0)).collect();
        let exp: Vec<f64> = self.exact.values().copied().collect();
        goodness_of_fit(&obs, &exp, 5.0).1
    }
}

/// Run the verification suite.
pub fn verify_suite(c: &VerifyConfig, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (phi_dev, psi_dev) = formula_oracle_deviation(c.n_max)?;
    checks.push(check_below("phi_vs_oracle", phi_dev, 1e-10));
    checks.push(check_below("psi_vs_oracle", psi_dev, 1e-10));
    checks.push(check_below("partition_marginals", partition_residual(c.d_max)?, 1e-12));
    checks.push(check_below("f_base_1_150", f_threshold(1.0 / 150.0, ThresholdVariant::Base)?, 1.0 - 1e-12));
    checks.push(check_below("f_improved_1_22", f_threshold(1.0 / 22.0, ThresholdVariant::Improved)?, 1.0 - 1e-12));
    let line = EnumTree::new(LazyTree::regular(1)?, 6, WalkParams::new(1.0, 1.0)?);
    let h7: f64 = (1..=7).map(|k| 1.0 / k as f64).sum();
    checks.push(check_below("mean_range_harmonic", (oracle::exact_mean_return_range(&line)? - h7).abs(), 1e-12));
    let cmp = TrajectoryComparison::run(WalkParams::new(0.7, 1.8)?, c.samples, seed)?;
    checks.push(check_above("kernel_trajectories_p", cmp.p_value(&cmp.kernel), 1e-6));
    checks.push(check_above("rubin_trajectories_p", cmp.p_value(&cmp.rubin), 1e-6));
    Ok(checks)
}

fn run_verify(c: &VerifyConfig, seed: u64, out: &Path) -> Result<String> {
    let checks = verify_suite(c, seed)?;
    let mut csv = String::from("check,value,limit,pass\n");
    let mut report = String::new();
    for ch in &checks {
        let _ = writeln!(csv, "{},{:e},{:e},{}", ch.name, ch.value, ch.limit, ch.pass);
        let _ = writeln!(report, "{} {} value={:e} limit={:e}", if ch.pass { "ok  " } else { "FAIL" }, ch.name, ch.value, ch.limit);
    }
    write(out, "verify.csv", &csv)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        eprint!("{report}");
        Err(Error::InvariantViolation(format!("failed checks: {}", failed.join(", "))))
    }
}

/// One row of `phase.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub u0: f64,
    pub u1: f64,
    pub d: u32,
    pub report: stats::RecurrenceReport,
}

impl PhaseRow {
    pub fn in_band(&self, band: f64) -> bool {
        self.report.theory.margin.abs() < band - 1e-9
    }

    pub fn agrees(&self) -> bool {
        self.report.verdict == self.report.theory.phase
    }
}

pub fn phase_grid(c: &PhaseConfig, seed: u64) -> Result<Vec<PhaseRow>> {
    let law = OffspringLaw::regular(c.d)?;
    let mut rows = Vec::new();
    for (i, &u0) in c.u0.iter().enumerate() {
        for (j, &u1) in c.u1.iter().enumerate() {
            let mut rc = RecurrenceConfig::new(WalkParams::new(u0, u1)?, law.clone());
            rc.target_level = c.level;
            rc.horizon = c.horizon;
            rc.half_hits = c.half_hits;
            rc.batch = c.batch;
            rc.max_runs = c.max_runs;
            rc.threshold = c.threshold;
            rc.backend = c.backend;
            let cell_seed = rng::derive_seed(seed, i as u64, j as u64);
            rows.push(PhaseRow { u0, u1, d: c.d, report: stats::classify_recurrence(&rc, cell_seed)? });
        }
    }
    Ok(rows)
}

pub fn phase_csv(rows: &[PhaseRow]) -> String {
    let mut s = String::from("u0,u1,d,margin,escape_freq,ci_lo,ci_hi,verdict,theory\n");
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.u0, r.u1, r.d, p.theory.margin, p.escape_frequency, p.ci.0, p.ci.1, p.verdict, p.theory.phase
        );
    }
    s
}

fn run_phase(c: &PhaseConfig, seed: u64, out: &Path) -> Result<String> {
    let rows = phase_grid(c, seed)?;
    write(out, "phase.csv", &phase_csv(&rows))?;
    let scored: Vec<&PhaseRow> = rows.iter().filter(|r| !r.in_band(c.band)).collect();
    let agree = scored.iter().filter(|r| r.agrees()).count();
    Ok(format!(
        "phase-diagram: {agree}/{} cells off the band |margin| < {} agree with theory (level {}, horizon {})\n",
        scored.len(),
        c.band,
        c.level,
        c.horizon
    ))
}

fn run_speed(c: &SpeedCurveConfig, seed: u64, out: &Path) -> Result<String> {
    let mut csv = String::from("mode,alpha,beta,u0,u1,d,v,se,blocks\n");
    let mut report = String::new();
    for (i, &beta) in c.beta.iter().enumerate() {
        let params = match c.mode {
            formulas::Reinforcement::Multiplicative => WalkParams::multiplicative(c.alpha, beta)?,
            formulas::Reinforcement::Additive => WalkParams::additive(c.alpha, beta)?,
        };
        let sc = SpeedConfig { params, law: c.law.clone(), steps: c.steps, margin: c.margin, runs: c.runs };
        let e = stats::direct_speed(&sc, rng::derive_seed(seed, 0x7370_6565, i as u64))?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            c.mode,
            c.alpha,
            beta,
            params.u0,
            params.u1,
            c.law.mean(),
            e.v,
            e.standard_error,
            e.block_count
        );
        let _ = writeln!(report, "beta={beta} v={:.6} se={:.6} blocks={}", e.v, e.standard_error, e.block_count);
    }
    write(out, "speed.csv", &csv)?;
    Ok(report)
}

fn run_coupling(c: &CouplingRunConfig, seed: u64, out: &Path) -> Result<String> {
    let cfg = CouplingConfig {
        alpha: c.alpha,
        d: c.d,
        beta: c.beta,
        eps: c.eps,
        steps: c.steps,
        margin: (c.margin > 0).then_some(c.margin),
    };
    let probs = cfg.probs()?;
    let h = coupling::harvest_runs(&cfg, seed, c.runs)?;
    write(out, "blocks.csv", &coupling::blocks_csv(&h.blocks))?;
    let st = coupling::decoupling_stats(&h.blocks, &probs);
    let hard = [
        ("lockstep", h.lockstep_violations),
        ("regeneration", h.regeneration_violations),
        ("increment", h.increment_violations),
        ("duration", h.duration_violations() as u64),
        ("discrepancy", h.discrepancy_violations() as u64),
        ("single_backstep_negative", st.single_negative),
    ];
    let mut report = format!("coupling: {} blocks, discarded fraction {:.2e}\n", h.blocks.len(), h.discarded_fraction());
    for (name, n) in hard {
        let _ = writeln!(report, "violations {name} = {n}");
    }
    let sd = coupling::speed_diff_estimator(&h.blocks)?;
    let _ = writeln!(
        report,
        "v(beta) = {:.6} +- {:.6}\nv(beta+eps) = {:.6} +- {:.6}\ndifference = {:.3e} +- {:.3e}",
        sd.v_beta, sd.se_beta, sd.v_shifted, sd.se_shifted, sd.diff, sd.se_diff
    );
    if let Some((name, n)) = hard.iter().find(|(_, n)| *n > 0) {
        eprint!("{report}");
        return Err(Error::InvariantViolation(format!("{n} {name} violations")));
    }
    Ok(report)
}

fn run_green(c: &GreenConfig, seed: u64, out: &Path) -> Result<String> {
    let params = c.walk.params()?;
    let omega = Configuration::star();
    let results = par::map_runs(c.runs, |r| {
        let tree = LazyTree::new(c.law.clone(), rng::derive_seed(seed, 0x7472_6565, r));
        let clocks = ClockStore::new(rng::derive_seed(seed, 0x0067_726e, r));
        rubin::green_process(&tree, params, c.n_star, c.generations, &clocks, &omega, c.max_population)
    });
    let mut csv = String::from("run,generation,population,capped\n");
    let (mut survived, mut first) = (0u64, Vec::new());
    for (r, g) in results.into_iter().enumerate() {
        let g = g?;
        survived += g.survived as u64;
        first.push(g.generations.get(1).copied().unwrap_or(0) as f64);
        for (k, n) in g.generations.iter().enumerate() {
            let _ = writeln!(csv, "{r},{k},{n},{}", g.capped_at == Some(k));
        }
    }
    write(out, "green.csv", &csv)?;
    let (m, se) = crate::estimate::mean_se(&first);
    let expect = c.law.mean().powi(c.n_star as i32) * formulas::psi(params, c.n_star as u64)?;
    Ok(format!(
        "green: mean offspring {m:.4} +- {se:.4} (d^n psi_n = {expect:.4}); survived {survived}/{} to generation {}\n",
        c.runs, c.generations
    ))
}

fn run_simulate(c: &SimulateConfig, seed: u64, out: &Path) -> Result<String> {
    let tree = LazyTree::new(c.law.clone(), rng::derive_seed(seed, 0x7472_6565, 0));
    let mut walk = Walk::new(tree, c.walk.params()?);
    let mut r = rng::stream(seed, 0);
    let uniforms: Vec<f64> = (0..c.steps).map(|_| r.random()).collect();
    let csv = trajectory_csv(&mut walk, uniforms);
    write(out, "trajectory.csv", &csv)?;
    Ok(format!("simulate: {} steps, final level {}\n", c.steps, walk.level()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for name in ["verify", "phase-diagram", "speed-curve", "coupling", "green", "simulate"] {
            let c = ExperimentConfig::defaults(name).unwrap();
            let text = c.render();
            assert_eq!(ExperimentConfig::parse(&text, None).unwrap(), c, "{text}");
            assert_eq!(ExperimentConfig::parse(&text, Some(name)).unwrap().render(), text);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ExperimentConfig::parse("[coupling]\nalpha = x\n", None).is_err());
        assert!(ExperimentConfig::parse("[coupling]\nbogus = 1\n", None).is_err());
        assert!(ExperimentConfig::parse("[coupling]\n", Some("green")).is_err());
        assert!(ExperimentConfig::parse("seed = 3\n", None).is_err());
        assert!(ExperimentConfig::parse("[green]\nwalk = raw\nu0 = -1\n", None).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse(String::new())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::InvariantViolation(String::new())), EXIT_INVARIANT);
        assert_eq!(exit_code(&Error::InsufficientData(String::new())), EXIT_DATA);
    }

    #[test]
    fn phase_threshold_example() {
        let p = formulas::phase(WalkParams::new(0.3, 0.6).unwrap(), 2.0);
        assert_eq!(p.phase, formulas::Phase::Recurrent);
    }
}
