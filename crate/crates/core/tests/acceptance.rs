//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use madwalk::cli::{self, PhaseConfig, TrajectoryComparison};
use madwalk::coupling::{self, CouplingConfig, Harvest};
use madwalk::formulas::{self, f_threshold, CouplingProbs, Phase, Reinforcement, ThresholdVariant};
use madwalk::rubin::{self, ClockStore};
use madwalk::stats::{self, ProfileConfig, RecurrenceConfig, SpeedConfig};
use madwalk::{rng, Configuration, LazyTree, OffspringLaw, VertexId, WalkParams};
use std::time::{Duration, Instant};

const SEED: u64 = 20_240_611;

// 1
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_N_MAX: u64 = 20;
const ORACLE_TIME: Duration = Duration::from_secs(10);
// 2
const TRAJ_SAMPLES: u64 = 1_000_000;
const TRAJ_TV: f64 = 0.005;
const TRAJ_TIME: Duration = Duration::from_secs(120);
// 3
const PHASE_TIME: Duration = Duration::from_secs(600);
// 4
const SPEED_Z: f64 = 3.0;
const SPEED_STEPS: u64 = 1_000_000;
const SPEED_RUNS: u64 = 4;
const SPEED_MARGIN: u32 = 40;
const SPEED_TIME: Duration = Duration::from_secs(300);
// 5
const PARTITION_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-14;
// 6, 7, 8
const ALPHA: f64 = 15.0;
const D: u32 = 10;
const EPS: f64 = 0.05;
const COUPLING_STEPS: u64 = 1_000_000;
const COUPLING_RUNS: u64 = 12;
const MIN_BLOCKS: usize = 100_000;
const BOUND_Z: f64 = 3.0;
const MONOTONE_Z: f64 = 3.0;
const COUPLING_TIME: Duration = Duration::from_secs(900);
const MONOTONE_TIME: Duration = Duration::from_secs(1800);
// 10
const GREEN_Z: f64 = 4.0;
const GREEN_RUNS: u64 = 400;
const GREEN_GENERATIONS: usize = 20;
const GREEN_TIME: Duration = Duration::from_secs(600);
// 11
const MONO_SAMPLES: u64 = 100_000;
const MONO_PATH: usize = 6;
// 12
const RANGE_Z: f64 = 3.0;
const RANGE_RUNS: u64 = 20_000;
const RANGE_LEVEL: u32 = 10;
const VISIT_HORIZON: u64 = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn c1_formula_oracle() -> Outcome {
    let t = Instant::now();
    let (phi, psi) = cli::formula_oracle_deviation(ORACLE_N_MAX).expect("oracle");
    let el = t.elapsed();
    Outcome {
        pass: phi <= ORACLE_TOL && psi <= ORACLE_TOL && within(el, ORACLE_TIME),
        detail: format!("25 (a,b) pairs, n<=20: max|phi-oracle|={phi:.2e} max|psi-oracle|={psi:.2e} in {el:.1?}"),
    }
}

fn c2_kernel_rubin() -> Outcome {
    let t = Instant::now();
    let params = WalkParams::new(0.7, 1.8).unwrap();
    let cmp = TrajectoryComparison::run(params, TRAJ_SAMPLES, SEED).expect("trajectories");
    let el = t.elapsed();
    let tv = cmp.tv(&cmp.rubin);
    Outcome {
        pass: tv < TRAJ_TV && within(el, TRAJ_TIME),
        detail: format!(
            "{} trajectories of 6 steps, 1e6 clock samples: TV={tv:.4} (kernel TV={:.4}, chi2 p={:.3}) in {el:.1?}",
            cmp.exact.len(),
            cmp.tv(&cmp.kernel),
            cmp.p_value(&cmp.rubin)
        ),
    }
}

fn c3_phase() -> Outcome {
    let t = Instant::now();
    let cfg = PhaseConfig::default();
    let rows = cli::phase_grid(&cfg, SEED).expect("phase grid");
    let scored: Vec<_> = rows.iter().filter(|r| !r.in_band(cfg.band)).collect();
    let agree = scored.iter().filter(|r| r.agrees()).count();
    let headline = WalkParams::multiplicative(0.6, 1.0).unwrap();
    let rc = RecurrenceConfig::new(headline, OffspringLaw::regular(2).unwrap());
    let h = stats::classify_recurrence(&rc, SEED).expect("headline");
    let el = t.elapsed();
    Outcome {
        pass: rows.len() == 49 && scored.len() == 49 && agree == 49 && h.verdict == Phase::Recurrent && within(el, PHASE_TIME),
        detail: format!(
            "{agree}/{} cells agree; d*alpha=1.2, beta=1: {} (P(L)/P(L/2)={:.3}, margin {:.2}) in {el:.1?}",
            scored.len(),
            h.verdict,
            h.conditional,
            h.theory.margin
        ),
    }
}

fn c4_line_speeds() -> Outcome {
    let t = Instant::now();
    let points = [(3.0, 1.0), (2.0, 0.5), (5.0, 2.0), (4.0, 0.25), (1.5, 0.3)];
    let mut worst = [0.0f64; 2];
    let mut lines = Vec::new();
    for (m, mode) in [Reinforcement::Multiplicative, Reinforcement::Additive].into_iter().enumerate() {
        for (i, &(alpha, beta)) in points.iter().enumerate() {
            let params = match mode {
                Reinforcement::Multiplicative => WalkParams::multiplicative(alpha, beta),
                Reinforcement::Additive => WalkParams::additive(alpha, beta),
            }
            .unwrap();
            let cfg = SpeedConfig {
                params,
                law: OffspringLaw::regular(1).unwrap(),
                steps: SPEED_STEPS,
                margin: SPEED_MARGIN,
                runs: SPEED_RUNS,
            };
            let e = stats::direct_speed(&cfg, rng::derive_seed(SEED, m as u64, i as u64)).expect("speed");
            let z = formulas::speed_z(mode, alpha, beta).unwrap();
            let dev = (e.v - z) / e.standard_error;
            worst[m] = worst[m].max(dev.abs());
            lines.push(format!(
                "{mode}({alpha},{beta}) v={:.4}+-{:.4} formula={z:.4} ({dev:+.1} SE), path-walk solution {:.4}",
                e.v,
                e.standard_error,
                formulas::mad_path_speed(params)
            ));
        }
    }
    let el = t.elapsed();
    Outcome {
        pass: worst.iter().all(|w| *w <= SPEED_Z) && within(el, SPEED_TIME),
        detail: format!(
            "max |dev| multiplicative {:.1} SE, additive {:.1} SE in {el:.1?}\n      {}",
            worst[0],
            worst[1],
            lines.join("\n      ")
        ),
    }
}

fn c5_partitions() -> Outcome {
    let partition = cli::partition_residual(D).expect("partitions");
    let mut identity: f64 = 0.0;
    for d in 1..=D {
        for (alpha, beta, eps) in [(15.0, 0.0, 0.05), (15.0, 0.05, 0.05), (3.0, 0.5, 0.02), (40.0, 0.2, 0.1)] {
            let c = CouplingProbs::new(alpha, d, beta, eps).unwrap();
            for k in 0..=d as usize {
                identity = identity
                    .max(c.base.total_residual(k).abs())
                    .max(c.shifted.total_residual(k).abs())
                    .max(c.delta_residual(k).abs());
            }
        }
    }
    Outcome {
        pass: partition <= PARTITION_TOL && identity <= IDENTITY_TOL,
        detail: format!("d<=10, all k: interval residual {partition:.1e}, identity residual {identity:.1e}"),
    }
}

fn harvest(beta: f64) -> (Harvest, Duration) {
    let t = Instant::now();
    let cfg = CouplingConfig { alpha: ALPHA, d: D, beta, eps: EPS, steps: COUPLING_STEPS, margin: None };
    let h = coupling::harvest_runs(&cfg, rng::derive_seed(SEED, 0x6370, beta.to_bits()), COUPLING_RUNS).expect("harvest");
    (h, t.elapsed())
}

fn c6_invariants(h: &Harvest, el: Duration, probs: &CouplingProbs) -> Outcome {
    let st = coupling::decoupling_stats(&h.blocks, probs);
    let counts = [
        h.lockstep_violations,
        h.duration_violations() as u64,
        h.discrepancy_violations() as u64,
        st.single_negative,
    ];
    Outcome {
        pass: h.blocks.len() >= MIN_BLOCKS && counts.iter().all(|&c| c == 0) && within(el, COUPLING_TIME),
        detail: format!(
            "{} blocks: lockstep {} duration {} |disc| {} single-backstep negative {} (regeneration {}, increment {}) in {el:.1?}",
            h.blocks.len(),
            counts[0],
            counts[1],
            counts[2],
            counts[3],
            h.regeneration_violations,
            h.increment_violations
        ),
    }
}

fn c7_bounds(h: &Harvest, probs: &CouplingProbs) -> Outcome {
    let st = coupling::decoupling_stats(&h.blocks, probs);
    let (g, gse) = st.single_gain;
    let mut pass = g >= st.single_gain_bound - BOUND_Z * gse;
    let mut parts = vec![format!("P(|B|=1, disc>=1)={g:.3e}+-{gse:.1e} vs lower {:.3e}", st.single_gain_bound)];
    for k in 2..=4u32 {
        let (p, se) = st.rows.get(k as usize).map(|r| r.p_decoupled).unwrap_or((0.0, 0.0));
        let bound = probs.decoupling_bound(k);
        pass &= p <= bound + BOUND_Z * se;
        parts.push(format!("P(D_{k})={p:.2e} vs upper {bound:.2e}"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn c8_monotone(h0: &Harvest, el0: Duration) -> Outcome {
    let (h1, el1) = harvest(EPS);
    let a = coupling::speed_diff_estimator(&h0.blocks).expect("estimator");
    let b = coupling::speed_diff_estimator(&h1.blocks).expect("estimator");
    let (z0, z1) = (a.diff / a.se_diff, b.diff / b.se_diff);
    let el = el0 + el1;
    Outcome {
        pass: z0 >= MONOTONE_Z && z1 >= MONOTONE_Z && within(el, MONOTONE_TIME),
        detail: format!(
            "v(0)={:.5} v(0.05)={:.5} v(0.1)={:.5}; gaps {:.2e} ({z0:.1} SE), {:.2e} ({z1:.1} SE) in {el:.1?}",
            a.v_beta, a.v_shifted, b.v_shifted, a.diff, b.diff
        ),
    }
}

fn c9_thresholds() -> Outcome {
    let base = f_threshold(1.0 / 150.0, ThresholdVariant::Base).unwrap();
    let improved = f_threshold(1.0 / 22.0, ThresholdVariant::Improved).unwrap();
    let samples: Vec<f64> = (1..=50).map(|i| f_threshold(i as f64 / 5000.0, ThresholdVariant::Base).unwrap()).collect();
    let increasing = samples.windows(2).all(|w| w[0] < w[1]);
    Outcome {
        pass: base < 1.0 && improved < 1.0 && increasing,
        detail: format!("f_base(1/150)={base:.4} f_improved(1/22)={improved:.4} increasing on 50 points of (0,1/100]: {increasing}"),
    }
}

fn c10_green() -> Outcome {
    let t = Instant::now();
    let params = WalkParams::new(0.7, 1.0).unwrap();
    let n_star = 3;
    let omega = Configuration::star();
    let runs = madwalk::par::map_runs(GREEN_RUNS, |r| {
        let tree = LazyTree::regular(2).unwrap();
        let clocks = ClockStore::new(rng::derive_seed(SEED, 0x6772, r));
        rubin::green_process(&tree, params, n_star, GREEN_GENERATIONS, &clocks, &omega, 1_000_000).expect("green")
    });
    let first: Vec<f64> = runs.iter().map(|g| g.generations[1] as f64).collect();
    let (m, se) = madwalk::estimate::mean_se(&first);
    let expect = 8.0 * formulas::psi(params, n_star as u64).unwrap();
    let survived = runs.iter().filter(|g| g.survived).count();
    let capped = runs.iter().filter(|g| g.capped_at.is_some()).count();
    let el = t.elapsed();
    Outcome {
        pass: (m - expect).abs() <= GREEN_Z * se && survived > 0 && capped == 0 && within(el, GREEN_TIME),
        detail: format!(
            "u=(0.7,1), d=2, n*=3: mean offspring {m:.4}+-{se:.4} vs d^n psi_n={expect:.4}; survived to generation 20 in {survived}/{GREEN_RUNS} in {el:.1?}"
        ),
    }
}

fn prefix(len: usize) -> Configuration {
    Configuration::from_edges((1..=len).map(|l| VertexId::from_path(&vec![1; l - 1]))).unwrap()
}

fn c11_path_monotonicity() -> Outcome {
    let pairs = [(2, 1), (3, 1), (4, 2), (6, 3), (5, 4)];
    let mut violations = 0;
    let mut parts = Vec::new();
    for (params, name) in [(WalkParams::new(0.5, 2.0).unwrap(), "u1>=u0"), (WalkParams::new(2.0, 0.5).unwrap(), "u1<=u0")] {
        for (i, &(long, short)) in pairs.iter().enumerate() {
            let (high, low) = if params.u1 >= params.u0 { (prefix(long), prefix(short)) } else { (prefix(short), prefix(long)) };
            let seed = rng::derive_seed(SEED, 0x6d6f, (name.len() * 10 + i) as u64);
            let r = rubin::path_monotonicity_check(params, &high, &low, MONO_PATH, MONO_SAMPLES, seed).expect("monotonicity");
            violations += r.violations;
            parts.push(format!("{}:{}/{}", r.violations, r.high_hits, r.low_hits));
        }
        let _ = name;
    }
    Outcome {
        pass: violations == 0,
        detail: format!("10 ordered pairs x 1e5 shared-clock samples: {violations} violations (violations:high hits/low hits {})", parts.join(" ")),
    }
}

fn c12_range_visits() -> Outcome {
    let law = OffspringLaw::regular(2).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let p = WalkParams::new(1.0, 1.0).unwrap();
    let mut rc = RecurrenceConfig::new(p, law.clone());
    rc.half_hits = u64::MAX;
    rc.max_runs = RANGE_RUNS;
    let esc = stats::classify_recurrence(&rc, SEED).expect("escape");
    let beta_star = esc.escape_frequency;
    let pc = ProfileConfig { params: p, law: law.clone(), runs: RANGE_RUNS, max_level: RANGE_LEVEL, confirm: 20, horizon: 100_000 };
    let range = stats::level_range(&pc, SEED);
    let worst = range.levels.iter().map(|l| l.mean - RANGE_Z * l.se).fold(f64::NEG_INFINITY, f64::max);
    pass &= worst <= 1.0 / beta_star && range.used_runs > 0;
    parts.push(format!(
        "u=(1,1): beta*={beta_star:.4}, max_k mean xi_k={:.3} <= 1/beta*={:.3}, geometric excess {:.3}",
        range.levels.iter().map(|l| l.mean).fold(0.0, f64::max),
        1.0 / beta_star,
        range.geometric_excess(beta_star, RANGE_Z)
    ));
    let q = WalkParams::new(1.5, 0.5).unwrap();
    let pc = ProfileConfig { params: q, horizon: VISIT_HORIZON, ..pc };
    let visits = stats::visit_counts(&pc, SEED);
    let bound = visits.bound.expect("u1 < 1");
    let worst = visits.no_return.iter().map(|l| l.mean - RANGE_Z * l.se).fold(f64::NEG_INFINITY, f64::max);
    pass &= worst <= bound;
    parts.push(format!(
        "u=(1.5,0.5): max_k conditional visits {:.3} <= (u1 d+1)/(1-u1)={bound:.3}",
        visits.no_return.iter().map(|l| l.mean).fold(0.0, f64::max)
    ));
    Outcome { pass, detail: parts.join("; ") }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "formula/oracle exactness", c1_formula_oracle());
    report(2, "kernel/clock equivalence", c2_kernel_rubin());
    report(3, "phase reproduction", c3_phase());
    report(4, "d=1 closed-form speeds", c4_line_speeds());
    report(5, "coupling marginal exactness", c5_partitions());
    let probs = CouplingProbs::new(ALPHA, D, 0.0, EPS).unwrap();
    let (h0, el0) = harvest(0.0);
    report(6, "hard coupling invariants", c6_invariants(&h0, el0, &probs));
    report(7, "quantitative decoupling bounds", c7_bounds(&h0, &probs));
    report(8, "monotonicity at alpha d = 150", c8_monotone(&h0, el0));
    report(9, "threshold function", c9_thresholds());
    report(10, "green process", c10_green());
    report(11, "path monotonicity", c11_path_monotonicity());
    report(12, "visit and range bounds", c12_range_visits());
    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.1?}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
