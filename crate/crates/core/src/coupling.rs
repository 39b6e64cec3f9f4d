//! Coupling of the multiplicative walks at `beta` and `beta + eps` on the
//! `d`-regular tree, driven by one uniform per step together with a walk `Y`
//! on the integers.
//!
//! When both walks have the same number `k` of visited children at their
//! positions (and neither is at `r-1`), one shared partition of `[0, 1)`
//! decides both moves so that they agree except on windows of size
//! `O(eps)`. Otherwise each walk uses its own partition. `Y` steps down
//! exactly when `u <= q_0(beta+eps)`, which forces both tree walks forward
//! whenever `Y` moves forward; regeneration times of `Y` therefore cut the
//! coupled run into i.i.d. blocks.

use crate::error::{Error, Result};
use crate::estimate::{jackknife_ratio, proportion};
use crate::explored::{Arena, ROOT, ROOT_PARENT};
use crate::formulas::{CouplingProbs, StepProbs};
use crate::rng;
use crate::tree::LazyTree;
use rand::Rng;

/// Bookkeeping tolerance for partition endpoints.
const PARTITION_TOL: f64 = 1e-12;

/// A move label. Visited children are numbered in visitation order; fresh
/// children get labels `k+1..=d` in ascending child index.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Parent,
    Visited(u32),
    Fresh(u32),
}

/// Piece `(previous hi, hi]` of a coupled partition.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Piece {
    pub hi: f64,
    pub beta: Outcome,
    pub shifted: Outcome,
}

/// Piece `(previous hi, hi]` of a single-walk partition.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SinglePiece {
    pub hi: f64,
    pub outcome: Outcome,
}

fn check_end(end: f64, what: &str, k: u32) -> Result<()> {
    if (end - 1.0).abs() > PARTITION_TOL {
        return Err(Error::InvariantViolation(format!("{what} partition at k={k} ends at {end}, not 1")));
    }
    Ok(())
}

/// Shared partition used when both walks see `k` visited children.
pub fn coupled_partition(c: &CouplingProbs, k: u32) -> Result<Vec<Piece>> {
    let d = c.d;
    if k > d {
        return Err(Error::InvalidParameter(format!("k={k} exceeds d={d}")));
    }
    let ku = k as usize;
    let (dq, dbar) = (c.dq[ku], c.dbar[ku]);
    let qs = c.shifted.q[ku];
    let pbar = c.base.pbar[ku];
    let ps = c.shifted.p[ku];
    let mut out = Vec::with_capacity(2 * d as usize + 2);
    if k < d {
        let free = (d - k) as f64;
        for i in k + 1..=d {
            let hi = (i - k) as f64 / free * dq;
            out.push(Piece { hi, beta: Outcome::Fresh(i), shifted: Outcome::Parent });
        }
    }
    out.push(Piece { hi: qs, beta: Outcome::Parent, shifted: Outcome::Parent });
    for i in 1..=k {
        let hi = qs + i as f64 * pbar;
        out.push(Piece { hi, beta: Outcome::Visited(i), shifted: Outcome::Visited(i) });
    }
    if k < d {
        let base = qs + k as f64 * pbar;
        for i in k + 1..=d {
            let hi = base + (i - k) as f64 * ps;
            out.push(Piece { hi, beta: Outcome::Fresh(i), shifted: Outcome::Fresh(i) });
        }
    }
    let end = out.last().map(|p| p.hi).unwrap_or(0.0);
    if k > 0 && k < d {
        if (end - (1.0 - dbar)).abs() > PARTITION_TOL {
            return Err(Error::InvariantViolation(format!(
                "deficit window at k={k} starts at {end}, expected {}",
                1.0 - dbar
            )));
        }
        // merge the visited sub-partition (shifted walk) with the fresh
        // sub-partition (base walk) of the window (1 - dbar, 1]
        let kf = k as f64;
        let free = (d - k) as f64;
        let a = |i: u32| 1.0 - (1.0 - i as f64 / kf) * dbar;
        let b = |i: u32| 1.0 - (1.0 - (i - k) as f64 / free) * dbar;
        let (mut ia, mut ib) = (1u32, k + 1);
        while ia <= k && ib <= d {
            let (ha, hb) = (a(ia), b(ib));
            let hi = ha.min(hb);
            out.push(Piece { hi, beta: Outcome::Fresh(ib), shifted: Outcome::Visited(ia) });
            if ha <= hi {
                ia += 1;
            }
            if hb <= hi {
                ib += 1;
            }
        }
    } else {
        check_end(end, "coupled", k)?;
    }
    check_end(out.last().unwrap().hi, "coupled", k)?;
    out.last_mut().unwrap().hi = 1.0;
    Ok(out)
}

/// Partition used by one walk on its own: parent, visited children, fresh children.
pub fn single_partition(s: &StepProbs, k: u32) -> Result<Vec<SinglePiece>> {
    let d = (s.p.len() - 1) as u32;
    if k > d {
        return Err(Error::InvalidParameter(format!("k={k} exceeds d={d}")));
    }
    let ku = k as usize;
    let mut out = vec![SinglePiece { hi: s.q[ku], outcome: Outcome::Parent }];
    for i in 1..=k {
        out.push(SinglePiece { hi: s.q[ku] + i as f64 * s.pbar[ku], outcome: Outcome::Visited(i) });
    }
    let base = s.q[ku] + k as f64 * s.pbar[ku];
    for i in k + 1..=d {
        out.push(SinglePiece { hi: base + (i - k) as f64 * s.p[ku], outcome: Outcome::Fresh(i) });
    }
    check_end(out.last().unwrap().hi, "single", k)?;
    out.last_mut().unwrap().hi = 1.0;
    Ok(out)
}

#[inline]
fn find<T>(pieces: &[T], hi: impl Fn(&T) -> f64, u: f64) -> usize {
    pieces.iter().position(|p| u <= hi(p)).unwrap_or(pieces.len() - 1)
}

/// Which walk a marginal row refers to.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Which {
    Beta,
    Shifted,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Case {
    Coupled,
    Decoupled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalRow {
    pub case: Case,
    pub walk: Which,
    pub outcome: Outcome,
    pub length: f64,
    pub expected: f64,
}

/// Total interval length per outcome, for both partitions at `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTable {
    pub k: u32,
    pub rows: Vec<MarginalRow>,
}

impl MarginalTable {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| (r.length - r.expected).abs()).fold(0.0, f64::max)
    }
}

fn expected(s: &StepProbs, k: u32, o: Outcome) -> f64 {
    match o {
        Outcome::Parent => s.q[k as usize],
        Outcome::Visited(_) => s.pbar[k as usize],
        Outcome::Fresh(_) => s.p[k as usize],
    }
}

fn outcomes(d: u32, k: u32) -> Vec<Outcome> {
    let mut v = vec![Outcome::Parent];
    v.extend((1..=k).map(Outcome::Visited));
    v.extend((k + 1..=d).map(Outcome::Fresh));
    v
}

/// Check that every partition at `k` gives each walk its kernel probabilities.
pub fn marginal_check(c: &CouplingProbs, k: u32) -> Result<MarginalTable> {
    let mut rows = Vec::new();
    let coupled = coupled_partition(c, k)?;
    for (walk, probs) in [(Which::Beta, &c.base), (Which::Shifted, &c.shifted)] {
        for o in outcomes(c.d, k) {
            let mut lo = 0.0;
            let mut length = 0.0;
            for p in &coupled {
                let got = if walk == Which::Beta { p.beta } else { p.shifted };
                if got == o {
                    length += p.hi - lo;
                }
                lo = p.hi;
            }
            rows.push(MarginalRow { case: Case::Coupled, walk, outcome: o, length, expected: expected(probs, k, o) });
        }
        let single = single_partition(probs, k)?;
        for o in outcomes(c.d, k) {
            let mut lo = 0.0;
            let mut length = 0.0;
            for p in &single {
                if p.outcome == o {
                    length += p.hi - lo;
                }
                lo = p.hi;
            }
            rows.push(MarginalRow { case: Case::Decoupled, walk, outcome: o, length, expected: expected(probs, k, o) });
        }
    }
    Ok(MarginalTable { k, rows })
}

/// What happened on one coupled step.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub y_up: bool,
    pub beta_up: bool,
    pub shifted_up: bool,
    /// The shared partition was used.
    pub coupled: bool,
}

/// The coupled triple `(X_beta, X_{beta+eps}, Y)`.
#[derive(Clone, Debug)]
pub struct CoupledWalk {
    probs: CouplingProbs,
    coupled: Vec<Vec<Piece>>,
    single_beta: Vec<Vec<SinglePiece>>,
    single_shifted: Vec<Vec<SinglePiece>>,
    tree: LazyTree,
    arenas: [Arena; 2],
    pos: [u32; 2],
    y: i64,
    steps: u64,
}

impl CoupledWalk {
    /// Both walks at `r-1` with only the root edge reinforced, `Y` at 0.
    pub fn new(probs: CouplingProbs) -> Result<Self> {
        if !probs.windows_disjoint() {
            return Err(Error::InvalidParameter(
                "eps too large: backstep and deficit windows overlap".into(),
            ));
        }
        let d = probs.d;
        let coupled = (0..=d).map(|k| coupled_partition(&probs, k)).collect::<Result<_>>()?;
        let single_beta = (0..=d).map(|k| single_partition(&probs.base, k)).collect::<Result<_>>()?;
        let single_shifted = (0..=d).map(|k| single_partition(&probs.shifted, k)).collect::<Result<_>>()?;
        let tree = LazyTree::regular(d)?;
        let arenas = [Arena::new(&tree), Arena::new(&tree)];
        Ok(Self { probs, coupled, single_beta, single_shifted, tree, arenas, pos: [ROOT_PARENT; 2], y: 0, steps: 0 })
    }

    pub fn probs(&self) -> &CouplingProbs {
        &self.probs
    }

    pub fn y(&self) -> i64 {
        self.y
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Levels of `(X_beta, X_{beta+eps})`.
    pub fn levels(&self) -> (i64, i64) {
        (self.arenas[0].get(self.pos[0]).level, self.arenas[1].get(self.pos[1]).level)
    }

    /// Visited-children counts at the current positions.
    pub fn visited_counts(&self) -> (u32, u32) {
        let k = |w: usize| self.arenas[w].get(self.pos[w]).children.len() as u32;
        (k(0), k(1))
    }

    /// Positions as vertex ids in each walk's own copy of the tree.
    pub fn positions(&self) -> (crate::VertexId, crate::VertexId) {
        (self.arenas[0].vertex(self.pos[0]), self.arenas[1].vertex(self.pos[1]))
    }

    fn apply(&mut self, w: usize, o: Outcome) {
        let here = self.pos[w];
        if here == ROOT_PARENT {
            self.pos[w] = ROOT;
            return;
        }
        let node = self.arenas[w].get(here);
        self.pos[w] = match o {
            Outcome::Parent => node.parent,
            Outcome::Visited(i) => node.children[i as usize - 1].1,
            Outcome::Fresh(i) => {
                let k = node.children.len() as u32;
                let c = node.nth_fresh(i - k);
                self.arenas[w].child(&self.tree, here, c)
            }
        };
    }

    /// One coupled step driven by `u` in `[0, 1)`.
    pub fn step(&mut self, u: f64) -> StepRecord {
        let (l0, l1) = self.levels();
        let (kb, ks) = self.visited_counts();
        let at_rp = self.pos.contains(&ROOT_PARENT);
        let coupled = kb == ks && !at_rp;
        if coupled {
            let t = &self.coupled[kb as usize];
            let p = t[find(t, |p| p.hi, u)];
            self.apply(0, p.beta);
            self.apply(1, p.shifted);
        } else {
            let tb = &self.single_beta[kb as usize];
            let ob = tb[find(tb, |p| p.hi, u)].outcome;
            let ts = &self.single_shifted[ks as usize];
            let os = ts[find(ts, |p| p.hi, u)].outcome;
            self.apply(0, ob);
            self.apply(1, os);
        }
        let y_up = u > self.probs.shifted.q[0];
        self.y += if y_up { 1 } else { -1 };
        self.steps += 1;
        let (n0, n1) = self.levels();
        StepRecord { y_up, beta_up: n0 > l0, shifted_up: n1 > l1, coupled }
    }
}

/// Regeneration times `N >= 1` of `path`: every earlier value is below
/// `path[N]`, no later value is, and the path later reaches
/// `path[N] + margin` (so the unobserved future is very unlikely to undo it).
pub fn scan_regenerations(path: &[i64], margin: u32) -> Vec<usize> {
    let n = path.len();
    if n < 2 {
        return Vec::new();
    }
    let mut suffix_min = vec![0i64; n];
    let mut suffix_max = vec![0i64; n];
    suffix_min[n - 1] = path[n - 1];
    suffix_max[n - 1] = path[n - 1];
    for i in (0..n - 1).rev() {
        suffix_min[i] = suffix_min[i + 1].min(path[i]);
        suffix_max[i] = suffix_max[i + 1].max(path[i]);
    }
    let mut out = Vec::new();
    let mut prefix_max = path[0];
    for i in 1..n {
        let v = path[i];
        if prefix_max < v && v <= suffix_min[i] && suffix_max[i] >= v + margin as i64 {
            out.push(i);
        }
        prefix_max = prefix_max.max(v);
    }
    out
}

/// Whether time 0 is a confirmed regeneration time of `path`.
pub fn regeneration_at_zero(path: &[i64], margin: u32) -> bool {
    let Some(&v) = path.first() else { return false };
    path.iter().all(|&x| x >= v) && path.iter().any(|&x| x >= v + margin as i64)
}

/// Smallest `M` with `((1-p)/p)^M <= 1e-12` for up-probability `p > 1/2`.
pub fn confirmation_margin(p: f64) -> Result<u32> {
    if !(p > 0.5 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("up-probability {p} does not drift upwards")));
    }
    if p == 1.0 {
        return Ok(1);
    }
    let m = (1e-12f64).ln() / ((1.0 - p) / p).ln();
    Ok(m.ceil().max(1.0) as u32)
}

/// One block between consecutive confirmed regeneration times of `Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegenBlock {
    pub run: u64,
    pub index: u64,
    pub duration: u64,
    pub dlevel_beta: i64,
    pub dlevel_shifted: i64,
    /// Backward steps of `Y` in the block.
    pub backsteps: u32,
    /// Offset within the block of the first step where the walks' level
    /// moves differ.
    pub decoupled_at: Option<u64>,
    pub discrepancy: i64,
    pub confirmed: bool,
}

/// Settings for one coupled run.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CouplingConfig {
    pub alpha: f64,
    pub d: u32,
    pub beta: f64,
    pub eps: f64,
    pub steps: u64,
    /// Overrides the margin derived from the `Y` drift.
    pub margin: Option<u32>,
}

impl CouplingConfig {
    pub fn probs(&self) -> Result<CouplingProbs> {
        CouplingProbs::new(self.alpha, self.d, self.beta, self.eps)
    }
}

/// Blocks and invariant counters from one or more coupled runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Harvest {
    pub blocks: Vec<RegenBlock>,
    pub steps: u64,
    /// Steps where `Y` moved up but some tree walk did not.
    pub lockstep_violations: u64,
    /// Regeneration times of `Y` that are not regeneration times of a tree walk's level.
    pub regeneration_violations: u64,
    /// Blocks where a level increment is not positive.
    pub increment_violations: u64,
    /// Steps before the first and after the last confirmed regeneration.
    pub discarded_steps: u64,
}

impl Harvest {
    pub fn merge(&mut self, other: Harvest) {
        self.blocks.extend(other.blocks);
        self.steps += other.steps;
        self.lockstep_violations += other.lockstep_violations;
        self.regeneration_violations += other.regeneration_violations;
        self.increment_violations += other.increment_violations;
        self.discarded_steps += other.discarded_steps;
    }

    pub fn discarded_fraction(&self) -> f64 {
        self.discarded_steps as f64 / self.steps.max(1) as f64
    }

    /// Blocks violating `duration <= 3 backsteps + 1`.
    pub fn duration_violations(&self) -> usize {
        self.blocks.iter().filter(|b| b.duration > 3 * b.backsteps as u64 + 1).count()
    }

    /// Blocks violating `|discrepancy| <= 2 backsteps`.
    pub fn discrepancy_violations(&self) -> usize {
        self.blocks.iter().filter(|b| b.discrepancy.unsigned_abs() > 2 * b.backsteps as u64).count()
    }
}

fn is_level_regeneration(levels: &[i64], t: usize, prefix_max: &[i64], suffix_min: &[i64]) -> bool {
    t > 0 && prefix_max[t - 1] < levels[t] && levels[t] <= suffix_min[t]
}

fn prefix_suffix(levels: &[i64]) -> (Vec<i64>, Vec<i64>) {
    let n = levels.len();
    let mut pre = levels.to_vec();
    for i in 1..n {
        pre[i] = pre[i - 1].max(levels[i]);
    }
    let mut suf = levels.to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        suf[i] = suf[i + 1].min(levels[i]);
    }
    (pre, suf)
}

/// Run one coupled walk for `cfg.steps` steps on stream `run` of `seed` and
/// cut it into blocks at confirmed regenerations of `Y`. The segment before
/// the first regeneration and the unconfirmed tail are discarded.
pub fn harvest_blocks(cfg: &CouplingConfig, seed: u64, run: u64) -> Result<Harvest> {
    let probs = cfg.probs()?;
    let margin = match cfg.margin {
        Some(m) => m,
        None => confirmation_margin(probs.y_up())?,
    };
    let mut walk = CoupledWalk::new(probs)?;
    let mut rng = rng::stream(seed, run);
    let n = cfg.steps as usize;
    let mut y = Vec::with_capacity(n + 1);
    let mut lb = Vec::with_capacity(n + 1);
    let mut ls = Vec::with_capacity(n + 1);
    let mut differ = Vec::with_capacity(n + 1);
    let mut harvest = Harvest { steps: cfg.steps, ..Default::default() };
    y.push(0);
    lb.push(-1);
    ls.push(-1);
    differ.push(false);
    for _ in 0..n {
        let u: f64 = rng.random();
        let rec = walk.step(u);
        if rec.y_up && !(rec.beta_up && rec.shifted_up) {
            harvest.lockstep_violations += 1;
        }
        let (a, b) = walk.levels();
        y.push(walk.y());
        lb.push(a);
        ls.push(b);
        differ.push(rec.beta_up != rec.shifted_up);
    }
    let regen = scan_regenerations(&y, margin);
    let (pb, sb) = prefix_suffix(&lb);
    let (ps, ss) = prefix_suffix(&ls);
    for &t in &regen {
        if !(is_level_regeneration(&lb, t, &pb, &sb) && is_level_regeneration(&ls, t, &ps, &ss)) {
            harvest.regeneration_violations += 1;
        }
    }
    for (i, w) in regen.windows(2).enumerate() {
        let (s, e) = (w[0], w[1]);
        let backsteps = (s + 1..=e).filter(|&j| y[j] < y[j - 1]).count() as u32;
        let decoupled_at = (s + 1..=e).find(|&j| differ[j]).map(|j| (j - s) as u64);
        let (db, ds) = (lb[e] - lb[s], ls[e] - ls[s]);
        if db < 1 || ds < 1 {
            harvest.increment_violations += 1;
        }
        harvest.blocks.push(RegenBlock {
            run,
            index: i as u64,
            duration: (e - s) as u64,
            dlevel_beta: db,
            dlevel_shifted: ds,
            backsteps,
            decoupled_at,
            discrepancy: db - ds,
            confirmed: true,
        });
    }
    let covered: u64 = harvest.blocks.iter().map(|b| b.duration).sum();
    harvest.discarded_steps = cfg.steps - covered;
    Ok(harvest)
}

/// Harvest `runs` independent runs (in parallel when enabled) and merge them
/// in run order.
pub fn harvest_runs(cfg: &CouplingConfig, seed: u64, runs: u64) -> Result<Harvest> {
    let parts = crate::par::map_runs(runs, |r| harvest_blocks(cfg, seed, r));
    let mut all = Harvest::default();
    for p in parts {
        all.merge(p?);
    }
    Ok(all)
}

/// Speeds of both walks and their paired difference.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SpeedDiff {
    pub v_beta: f64,
    pub se_beta: f64,
    pub v_shifted: f64,
    pub se_shifted: f64,
    /// `v_beta - v_shifted` from the per-block discrepancies.
    pub diff: f64,
    pub se_diff: f64,
    pub blocks: usize,
}

/// Minimum number of blocks accepted by [`speed_diff_estimator`].
pub const MIN_BLOCKS: usize = 1000;

pub fn speed_diff_estimator(blocks: &[RegenBlock]) -> Result<SpeedDiff> {
    if blocks.len() < MIN_BLOCKS {
        return Err(Error::InsufficientData(format!("{} blocks, need {MIN_BLOCKS}", blocks.len())));
    }
    let dur: Vec<f64> = blocks.iter().map(|b| b.duration as f64).collect();
    let col = |f: fn(&RegenBlock) -> i64| blocks.iter().map(|b| f(b) as f64).collect::<Vec<_>>();
    let (v_beta, se_beta) = jackknife_ratio(&col(|b| b.dlevel_beta), &dur);
    let (v_shifted, se_shifted) = jackknife_ratio(&col(|b| b.dlevel_shifted), &dur);
    let (diff, se_diff) = jackknife_ratio(&col(|b| b.discrepancy), &dur);
    Ok(SpeedDiff { v_beta, se_beta, v_shifted, se_shifted, diff, se_diff, blocks: blocks.len() })
}

/// Per-backstep-count block statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BackstepRow {
    pub k: u32,
    /// Estimate and standard error of the probability of `k` backsteps.
    pub p_backsteps: (f64, f64),
    /// Estimate and standard error of `k` backsteps with nonzero discrepancy.
    pub p_decoupled: (f64, f64),
    /// Upper bound on the latter (for `k >= 2`).
    pub bound: Option<f64>,
    pub negative: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingStats {
    pub blocks: u64,
    pub rows: Vec<BackstepRow>,
    /// Probability of one backstep and a positive discrepancy.
    pub single_gain: (f64, f64),
    pub single_gain_bound: f64,
    pub single_gain_sharp: f64,
    /// Single-backstep blocks with negative discrepancy.
    pub single_negative: u64,
    /// Single-backstep blocks that decoupled, and those among them with
    /// discrepancy exactly 2 after decoupling on the backstep.
    pub single_decoupled: u64,
    pub single_backstep_decoupled_two: u64,
}

pub fn decoupling_stats(blocks: &[RegenBlock], probs: &CouplingProbs) -> DecouplingStats {
    let n = blocks.len() as u64;
    let kmax = blocks.iter().map(|b| b.backsteps).max().unwrap_or(0);
    let rows = (0..=kmax)
        .map(|k| {
            let with_k: Vec<&RegenBlock> = blocks.iter().filter(|b| b.backsteps == k).collect();
            let dec = with_k.iter().filter(|b| b.discrepancy != 0).count() as u64;
            BackstepRow {
                k,
                p_backsteps: proportion(with_k.len() as u64, n),
                p_decoupled: proportion(dec, n),
                bound: (k >= 2).then(|| probs.decoupling_bound(k)),
                negative: with_k.iter().filter(|b| b.discrepancy < 0).count() as u64,
            }
        })
        .collect();
    let single: Vec<&RegenBlock> = blocks.iter().filter(|b| b.backsteps == 1).collect();
    let gain = single.iter().filter(|b| b.discrepancy >= 1).count() as u64;
    DecouplingStats {
        blocks: n,
        rows,
        single_gain: proportion(gain, n),
        single_gain_bound: probs.single_backstep_gain_bound(),
        single_gain_sharp: probs.single_backstep_gain_sharp(),
        single_negative: single.iter().filter(|b| b.discrepancy < 0).count() as u64,
        single_decoupled: single.iter().filter(|b| b.decoupled_at.is_some()).count() as u64,
        single_backstep_decoupled_two: single
            .iter()
            .filter(|b| b.decoupled_at.is_some() && b.discrepancy == 2)
            .count() as u64,
    }
}

/// `blocks.csv` body with its header.
pub fn blocks_csv(blocks: &[RegenBlock]) -> String {
    let mut s = String::from("run,blockIndex,duration,dlevelBeta,dlevelBetaEps,backsteps,decoupledAt,discrepancy\n");
    for b in blocks {
        let dec = b.decoupled_at.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            b.run, b.index, b.duration, b.dlevel_beta, b.dlevel_shifted, b.backsteps, dec, b.discrepancy
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs() -> CouplingProbs {
        CouplingProbs::new(15.0, 10, 0.05, 0.01).unwrap()
    }

    #[test]
    fn partitions_are_exact() {
        let c = probs();
        for k in 0..=10 {
            let t = marginal_check(&c, k).unwrap();
            assert!(t.max_residual() < 1e-12, "k={k}: {}", t.max_residual());
        }
    }

    #[test]
    fn k_zero_backstep_window() {
        let c = probs();
        let t = coupled_partition(&c, 0).unwrap();
        for (i, p) in t.iter().take(10).enumerate() {
            assert_eq!(p.shifted, Outcome::Parent);
            assert_eq!(p.beta, Outcome::Fresh(i as u32 + 1));
            assert!((p.hi - (i as f64 + 1.0) / 10.0 * c.dq[0]).abs() < 1e-18);
        }
    }

    #[test]
    fn k_full_has_no_fresh_moves() {
        let c = probs();
        let t = coupled_partition(&c, 10).unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.iter().all(|p| p.beta == p.shifted && !matches!(p.beta, Outcome::Fresh(_))));
    }

    #[test]
    fn zero_eps_moves_identically() {
        let c = CouplingProbs::new(3.0, 3, 0.2, 0.0).unwrap();
        let mut w = CoupledWalk::new(c).unwrap();
        let mut rng = rng::stream(5, 0);
        for _ in 0..5000 {
            let u: f64 = rng.random();
            let r = w.step(u);
            assert_eq!(r.beta_up, r.shifted_up);
            let (a, b) = w.positions();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn regeneration_scan_definition() {
        let inc = [1, -1, 1, 1, 1, 1, 1];
        let mut y = vec![0i64];
        for s in inc {
            y.push(y.last().unwrap() + s);
        }
        let r = scan_regenerations(&y, 2);
        assert!(!r.contains(&1) && !r.contains(&3));
        assert_eq!(r.first(), Some(&4));
        let inc: Vec<i64> = (0..20).collect();
        assert_eq!(scan_regenerations(&inc, 3), (1..=16).collect::<Vec<_>>());
        assert!(regeneration_at_zero(&inc, 3));
        let dip: Vec<i64> = vec![0, 1, -1, 0, 1, 2, 3];
        assert!(!regeneration_at_zero(&dip, 2));
    }

    #[test]
    fn margin() {
        assert_eq!(confirmation_margin(0.75).unwrap(), 26);
        assert!(confirmation_margin(0.5).is_err());
    }

    #[test]
    fn rejects_overlapping_windows() {
        let mut rejected = 0;
        for eps in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let c = CouplingProbs::new(20.0, 2, 0.0, eps).unwrap();
            let disjoint = c.windows_disjoint();
            assert_eq!(CoupledWalk::new(c).is_ok(), disjoint);
            rejected += usize::from(!disjoint);
        }
        assert!(rejected > 0);
    }
}
