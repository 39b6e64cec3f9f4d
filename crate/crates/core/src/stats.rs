//! Single-walk estimators: recurrence classification, regeneration speed,
//! per-level range and visit counts.

use crate::coupling::scan_regenerations;
use crate::error::{Error, Result};
use crate::estimate::{jackknife_ratio, mean_se, wilson};
use crate::explored::{Arena, ROOT_PARENT};
use crate::formulas::{phase, Phase, PhaseVerdict};
use crate::par;
use crate::rng;
use crate::rubin::{ClockStore, RubinWalk};
use crate::tree::{LazyTree, OffspringLaw};
use crate::walk::{Walk, WalkParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

const TAG_TREE: u64 = 0x7472_6565;
const TAG_CLOCK: u64 = 0x636c_6f63;

/// How a single walk is simulated.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    /// Sample each step from the transition kernel.
    #[default]
    Kernel,
    /// Exponential clocks on directed edges.
    Rubin,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Kernel => "kernel",
            Backend::Rubin => "rubin",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Backend::Kernel),
            "rubin" => Ok(Backend::Rubin),
            _ => Err(Error::Parse(format!("unknown backend '{s}'"))),
        }
    }
}

enum Sim {
    Kernel(Walk, ChaCha8Rng),
    Rubin(RubinWalk),
}

impl Sim {
    fn new(backend: Backend, params: WalkParams, law: &OffspringLaw, seed: u64, run: u64) -> Self {
        let tree = LazyTree::new(law.clone(), rng::derive_seed(seed, TAG_TREE, run));
        match backend {
            Backend::Kernel => Sim::Kernel(Walk::new(tree, params), rng::stream(seed, run)),
            Backend::Rubin => {
                let clocks = ClockStore::new(rng::derive_seed(seed, TAG_CLOCK, run));
                Sim::Rubin(RubinWalk::new(tree, params, clocks))
            }
        }
    }

    #[inline]
    fn step(&mut self) {
        match self {
            Sim::Kernel(w, r) => {
                let u: f64 = r.random();
                w.step(u);
            }
            Sim::Rubin(w) => {
                w.step();
            }
        }
    }

    #[inline]
    fn node(&self) -> u32 {
        match self {
            Sim::Kernel(w, _) => w.pos,
            Sim::Rubin(w) => w.node(),
        }
    }

    #[inline]
    fn arena(&self) -> &Arena {
        match self {
            Sim::Kernel(w, _) => &w.arena,
            Sim::Rubin(w) => w.arena(),
        }
    }

    #[inline]
    fn level(&self) -> i64 {
        self.arena().get(self.node()).level
    }
}

/// Settings for [`classify_recurrence`].
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceConfig {
    pub params: WalkParams,
    pub law: OffspringLaw,
    pub horizon: u64,
    pub target_level: u32,
    /// Stop once this many runs have reached half the target level.
    pub half_hits: u64,
    /// Runs per batch; the run count is a multiple of this.
    pub batch: u64,
    pub max_runs: u64,
    /// Transient iff `P(reach L) / P(reach L/2)` is at least this.
    pub threshold: f64,
    pub backend: Backend,
}

impl RecurrenceConfig {
    pub fn new(params: WalkParams, law: OffspringLaw) -> Self {
        Self {
            params,
            law,
            horizon: 8000,
            target_level: 40,
            half_hits: 100,
            batch: 500,
            max_runs: 200_000,
            threshold: 0.5,
            backend: Backend::Kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceReport {
    pub runs: u64,
    /// Runs that came back to `r-1` within the horizon.
    pub returns_observed: u64,
    /// Runs that reached the target level without returning.
    pub escapes: u64,
    /// Runs that reached half the target level without returning.
    pub half_escapes: u64,
    pub escape_frequency: f64,
    /// 95% Wilson interval for the escape frequency.
    pub ci: (f64, f64),
    /// `escapes / half_escapes`, or 0 when nothing reached half way.
    pub conditional: f64,
    pub verdict: Phase,
    pub theory: PhaseVerdict,
    pub target_level: u32,
    pub horizon: u64,
}

#[derive(Copy, Clone, Debug, Default)]
struct EscapeRun {
    returned: bool,
    half: bool,
    full: bool,
}

fn escape_run(cfg: &RecurrenceConfig, seed: u64, run: u64) -> EscapeRun {
    let mut sim = Sim::new(cfg.backend, cfg.params, &cfg.law, seed, run);
    let half = (cfg.target_level / 2).max(1) as i64;
    let full = cfg.target_level as i64;
    let mut out = EscapeRun::default();
    sim.step();
    for _ in 1..cfg.horizon {
        sim.step();
        if sim.node() == ROOT_PARENT {
            out.returned = true;
            return out;
        }
        let l = sim.level();
        if l >= half {
            out.half = true;
        }
        if l >= full {
            out.full = true;
            return out;
        }
    }
    out
}

/// Estimate whether the walk escapes to infinity, comparing the frequency
/// of reaching level `L` before returning to `r-1` with that of reaching `L/2`.
/// Runs are added in batches until enough reach `L/2`.
pub fn classify_recurrence(cfg: &RecurrenceConfig, seed: u64) -> Result<RecurrenceReport> {
    if cfg.horizon < 10 * cfg.target_level as u64 {
        return Err(Error::InvalidParameter("horizon must be at least 10 * target level".into()));
    }
    if cfg.target_level < 2 || cfg.batch == 0 {
        return Err(Error::InvalidParameter("need target level >= 2 and batch >= 1".into()));
    }
    let (mut runs, mut returns, mut half, mut full) = (0u64, 0u64, 0u64, 0u64);
    while runs < cfg.max_runs && half < cfg.half_hits {
        let n = cfg.batch.min(cfg.max_runs - runs);
        let start = runs;
        for r in par::map_runs(n, |i| escape_run(cfg, seed, start + i)) {
            returns += r.returned as u64;
            half += r.half as u64;
            full += r.full as u64;
        }
        runs += n;
    }
    let conditional = if half == 0 { 0.0 } else { full as f64 / half as f64 };
    let verdict = if conditional >= cfg.threshold { Phase::Transient } else { Phase::Recurrent };
    Ok(RecurrenceReport {
        runs,
        returns_observed: returns,
        escapes: full,
        half_escapes: half,
        escape_frequency: full as f64 / runs as f64,
        ci: wilson(full, runs, 1.96),
        conditional,
        verdict,
        theory: phase(cfg.params, cfg.law.mean()),
        target_level: cfg.target_level,
        horizon: cfg.horizon,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SpeedMethod {
    /// Regenerations of the driving walk of the coupling.
    YRegeneration,
    /// Regenerations of the walk's own level process.
    DirectRegeneration,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SpeedEstimate {
    pub v: f64,
    pub standard_error: f64,
    pub block_count: usize,
    pub method: SpeedMethod,
    /// Mean and standard error of the level gained per block.
    pub level_gap: (f64, f64),
    pub steps: u64,
}

/// Fewest confirmed blocks [`direct_speed`] accepts.
pub const MIN_SPEED_BLOCKS: usize = 100;

/// Settings for [`direct_speed`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedConfig {
    pub params: WalkParams,
    pub law: OffspringLaw,
    pub steps: u64,
    pub margin: u32,
    pub runs: u64,
}

#[derive(Clone, Debug, Default)]
struct Blocks {
    dlevel: Vec<f64>,
    dtime: Vec<f64>,
}

fn speed_run(cfg: &SpeedConfig, seed: u64, run: u64) -> Blocks {
    let mut sim = Sim::new(Backend::Kernel, cfg.params, &cfg.law, seed, run);
    let mut levels = Vec::with_capacity(cfg.steps as usize + 1);
    levels.push(sim.level());
    for _ in 0..cfg.steps {
        sim.step();
        levels.push(sim.level());
    }
    let regen = scan_regenerations(&levels, cfg.margin);
    let mut b = Blocks::default();
    for w in regen.windows(2) {
        b.dlevel.push((levels[w[1]] - levels[w[0]]) as f64);
        b.dtime.push((w[1] - w[0]) as f64);
    }
    b
}

/// Speed from regeneration times of `|X_n|`: level gained over time spent,
/// summed over confirmed blocks. The stretch before the first regeneration
/// of each run is discarded.
pub fn direct_speed(cfg: &SpeedConfig, seed: u64) -> Result<SpeedEstimate> {
    if cfg.margin == 0 {
        return Err(Error::InvalidParameter("margin must be positive".into()));
    }
    let mut all = Blocks::default();
    for b in par::map_runs(cfg.runs, |r| speed_run(cfg, seed, r)) {
        all.dlevel.extend(b.dlevel);
        all.dtime.extend(b.dtime);
    }
    let n = all.dlevel.len();
    if n < MIN_SPEED_BLOCKS {
        return Err(Error::InsufficientData(format!("{n} regeneration blocks, need {MIN_SPEED_BLOCKS}")));
    }
    let (v, se) = jackknife_ratio(&all.dlevel, &all.dtime);
    Ok(SpeedEstimate {
        v,
        standard_error: se,
        block_count: n,
        method: SpeedMethod::DirectRegeneration,
        level_gap: mean_se(&all.dlevel),
        steps: cfg.steps * cfg.runs,
    })
}

/// Per-level summary of a nonnegative count.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStat {
    pub level: u32,
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

/// Settings shared by [`level_range`] and [`visit_counts`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileConfig {
    pub params: WalkParams,
    pub law: OffspringLaw,
    pub runs: u64,
    pub max_level: u32,
    /// Level past `max_level` a run must reach for its profile to count.
    pub confirm: u32,
    pub horizon: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeReport {
    pub levels: Vec<LevelStat>,
    /// Per level `k`, the empirical tail `P(xi_k > m)` for `m = 0, 1, ...`.
    pub tails: Vec<Vec<f64>>,
    pub used_runs: usize,
    /// Runs dropped because they never reached the confirmation level.
    pub dropped_runs: usize,
}

impl RangeReport {
    /// Largest excess of the empirical tail over a geometric tail with
    /// success probability `beta_star`, allowing `z` binomial standard errors.
    pub fn geometric_excess(&self, beta_star: f64, z: f64) -> f64 {
        let n = self.used_runs as f64;
        let mut worst = f64::NEG_INFINITY;
        for tail in &self.tails {
            for (m, &t) in tail.iter().enumerate() {
                let g = (1.0 - beta_star).powi(m as i32);
                let se = (t * (1.0 - t) / n).sqrt();
                worst = worst.max(t - z * se - g);
            }
        }
        worst
    }
}

fn run_until_confirmed(cfg: &ProfileConfig, seed: u64, run: u64) -> Option<Sim> {
    let mut sim = Sim::new(Backend::Kernel, cfg.params, &cfg.law, seed, run);
    let target = (cfg.max_level + cfg.confirm) as i64;
    for _ in 0..cfg.horizon {
        sim.step();
        if sim.level() >= target {
            return Some(sim);
        }
    }
    None
}

fn level_stats(samples: &[Vec<f64>]) -> Vec<LevelStat> {
    samples
        .iter()
        .enumerate()
        .map(|(k, xs)| {
            let (mean, se) = mean_se(xs);
            LevelStat { level: k as u32, mean, se, samples: xs.len() }
        })
        .collect()
}

/// Distinct vertices visited at each level `0..=max_level`, over runs that
/// reach `max_level + confirm` within the horizon.
pub fn level_range(cfg: &ProfileConfig, seed: u64) -> RangeReport {
    let k = cfg.max_level as usize + 1;
    let per_run = par::map_runs(cfg.runs, |r| {
        run_until_confirmed(cfg, seed, r).map(|sim| {
            let mut xi = vec![0u32; k];
            for node in &sim.arena().nodes {
                if (0..k as i64).contains(&node.level) {
                    xi[node.level as usize] += 1;
                }
            }
            xi
        })
    });
    let used: Vec<Vec<u32>> = per_run.iter().flatten().cloned().collect();
    let dropped = per_run.len() - used.len();
    let samples: Vec<Vec<f64>> = (0..k).map(|l| used.iter().map(|x| x[l] as f64).collect()).collect();
    let tails = (0..k)
        .map(|l| {
            let max = used.iter().map(|x| x[l]).max().unwrap_or(0);
            (0..=max)
                .map(|m| used.iter().filter(|x| x[l] > m).count() as f64 / used.len().max(1) as f64)
                .collect()
        })
        .collect();
    RangeReport { levels: level_stats(&samples), tails, used_runs: used.len(), dropped_runs: dropped }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisitReport {
    /// Visits to the first vertex hit at each level, over all runs.
    pub all: Vec<LevelStat>,
    /// The same, over runs that never came back to `r-1`.
    pub no_return: Vec<LevelStat>,
    /// `(u1 d + 1) / (1 - u1)` when `u1 < 1`.
    pub bound: Option<f64>,
    pub dropped_runs: usize,
}

/// Visits, within the horizon, to the first vertex reached at each level
/// `0..=max_level`. Runs that do not reach `max_level + confirm` are dropped.
pub fn visit_counts(cfg: &ProfileConfig, seed: u64) -> VisitReport {
    let k = cfg.max_level as usize + 1;
    let target = (cfg.max_level + cfg.confirm) as i64;
    let per_run = par::map_runs(cfg.runs, |r| {
        let mut sim = Sim::new(Backend::Kernel, cfg.params, &cfg.law, seed, r);
        let mut first = vec![u32::MAX; k];
        let mut visits: Vec<u32> = Vec::new();
        let mut returned = false;
        let mut reached = false;
        for _ in 0..cfg.horizon {
            sim.step();
            let n = sim.node();
            if n == ROOT_PARENT {
                returned = true;
                continue;
            }
            let l = sim.level();
            if visits.len() <= n as usize {
                visits.resize(n as usize + 1, 0);
            }
            visits[n as usize] += 1;
            if l < k as i64 && first[l as usize] == u32::MAX {
                first[l as usize] = n;
            }
            if l >= target {
                reached = true;
            }
        }
        reached.then(|| {
            let counts: Vec<u32> = first.iter().map(|&n| visits[n as usize]).collect();
            (counts, returned)
        })
    });
    let used: Vec<&(Vec<u32>, bool)> = per_run.iter().flatten().collect();
    let collect = |filter: bool| -> Vec<Vec<f64>> {
        (0..k)
            .map(|l| used.iter().filter(|(_, ret)| !filter || !ret).map(|(c, _)| c[l] as f64).collect())
            .collect()
    };
    let p = cfg.params;
    let bound = (p.u1 < 1.0).then(|| (p.u1 * cfg.law.mean() + 1.0) / (1.0 - p.u1));
    VisitReport {
        all: level_stats(&collect(false)),
        no_return: level_stats(&collect(true)),
        bound,
        dropped_runs: per_run.len() - used.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_walk_on_a_ray_is_recurrent() {
        let mut cfg = RecurrenceConfig::new(WalkParams::new(1.0, 1.0).unwrap(), OffspringLaw::regular(1).unwrap());
        cfg.target_level = 20;
        cfg.horizon = 4000;
        cfg.max_runs = 4000;
        let r = classify_recurrence(&cfg, 1).unwrap();
        // gambler's ruin from the root: P(reach L before r-1) = 1/(L+1)
        let expect = 1.0 / 21.0;
        assert!(r.ci.0 < expect && expect < r.ci.1, "{r:?}");
        assert!(r.conditional < 0.6);
    }

    #[test]
    fn binary_simple_walk_is_transient() {
        let cfg = RecurrenceConfig::new(WalkParams::new(1.0, 1.0).unwrap(), OffspringLaw::regular(2).unwrap());
        let r = classify_recurrence(&cfg, 2).unwrap();
        assert_eq!(r.verdict, Phase::Transient);
        assert_eq!(r.theory.phase, Phase::Transient);
    }

    #[test]
    fn horizon_precondition() {
        let mut cfg = RecurrenceConfig::new(WalkParams::new(1.0, 1.0).unwrap(), OffspringLaw::regular(2).unwrap());
        cfg.horizon = 100;
        assert!(classify_recurrence(&cfg, 0).is_err());
    }

    #[test]
    fn speed_needs_blocks() {
        let cfg = SpeedConfig {
            params: WalkParams::new(1.0, 1.0).unwrap(),
            law: OffspringLaw::regular(2).unwrap(),
            steps: 50,
            margin: 10,
            runs: 1,
        };
        assert!(matches!(direct_speed(&cfg, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn range_is_at_least_one_below_confirmation() {
        let cfg = ProfileConfig {
            params: WalkParams::new(1.0, 1.0).unwrap(),
            law: OffspringLaw::regular(2).unwrap(),
            runs: 50,
            max_level: 5,
            confirm: 5,
            horizon: 10_000,
        };
        let r = level_range(&cfg, 3);
        assert!(r.used_runs > 0);
        assert!(r.levels.iter().all(|l| l.mean >= 1.0));
    }
}
