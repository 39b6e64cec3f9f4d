//! Exponential-clock construction of the walk.
//!
//! Every directed edge `(v, s)` carries i.i.d. mean-one exponentials
//! `Y(v, s, 0), Y(v, s, 1), ...`. Standing at `v` after `m_s` departures
//! along `(v, s)`, the next ring of that edge is `sum_{i <= m_s} Y(v, s, i) / w_i`
//! and the walk leaves along the edge that rings first. The weights are 1
//! towards the parent and `u0` or `u1` towards a child, so the jump chain has
//! exactly the MAD kernel.
//!
//! Because the clocks are a pure function of `(seed, edge, index)`, walks
//! restricted to a subtree (extensions) can be run on the same clocks and
//! agree with the full walk there.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::explored::{Arena, ROOT, ROOT_PARENT};
use crate::rng;
use crate::tree::{LazyTree, PathKey, VertexId};
use crate::walk::{Configuration, Move, WalkParams};

/// Exponential clocks addressed by `(directed edge, index)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ClockStore {
    seed: u64,
}

impl ClockStore {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `Y(from, to, index)`, strictly positive.
    #[inline]
    pub fn clock(&self, from: PathKey, to: PathKey, index: u32) -> f64 {
        let h = rng::hash_words(&[self.seed, from.0, from.1, to.0, to.1, index as u64]);
        -rng::open_unit(h).ln()
    }

    pub fn clock_between(&self, from: &VertexId, to: &VertexId, index: u32) -> f64 {
        self.clock(from.key(), to.key(), index)
    }
}

/// Rate of the `j`-th clock on the directed edge `from -> to`.
pub fn clock_weight(params: WalkParams, omega: &Configuration, from: &VertexId, to: &VertexId, j: u32) -> Result<f64> {
    if from.parent().as_ref() == Some(to) {
        return Ok(1.0);
    }
    if to.parent().as_ref() == Some(from) {
        return Ok(child_weight(params, omega.contains(to), j));
    }
    Err(invalid(format!("{from} and {to} are not adjacent")))
}

#[inline]
fn child_weight(params: WalkParams, reinforced: bool, j: u32) -> f64 {
    if j == 0 && !reinforced {
        params.u0
    } else {
        params.u1
    }
}

/// Departures so far along one directed edge and the clock time they used.
#[derive(Copy, Clone, Debug, Default)]
struct Race {
    count: u32,
    used: f64,
}

impl Race {
    #[inline]
    fn next_ring(&self, clocks: &ClockStore, from: PathKey, to: PathKey, w: f64) -> f64 {
        self.used + clocks.clock(from, to, self.count) / w
    }

    #[inline]
    fn advance(&mut self, clocks: &ClockStore, from: PathKey, to: PathKey, w: f64) {
        self.used += clocks.clock(from, to, self.count) / w;
        self.count += 1;
    }
}

/// The full walk on a lazily explored tree, driven by clocks.
#[derive(Clone, Debug)]
pub struct RubinWalk {
    tree: LazyTree,
    params: WalkParams,
    clocks: ClockStore,
    arena: Arena,
    in_omega: Vec<bool>,
    /// Per node: departures towards its parent.
    up: Vec<Race>,
    /// Per node: departures from its parent towards it.
    down: Vec<Race>,
    pos: u32,
    steps: u64,
}

impl RubinWalk {
    pub fn new(tree: LazyTree, params: WalkParams, clocks: ClockStore) -> Self {
        let arena = Arena::new(&tree);
        let n = arena.nodes.len();
        Self {
            tree,
            params,
            clocks,
            arena,
            in_omega: vec![true; n],
            up: vec![Race::default(); n],
            down: vec![Race::default(); n],
            pos: ROOT_PARENT,
            steps: 0,
        }
    }

    pub fn with_configuration(tree: LazyTree, params: WalkParams, clocks: ClockStore, omega: &Configuration) -> Result<Self> {
        if !omega.is_coherent() {
            return Err(invalid("configuration is not coherent"));
        }
        let mut w = Self::new(tree, params, clocks);
        for v in omega.sorted() {
            w.arena.locate(&w.tree, &v);
        }
        let n = w.arena.nodes.len();
        w.in_omega.resize(n, true);
        w.up.resize(n, Race::default());
        w.down.resize(n, Race::default());
        Ok(w)
    }

    pub fn position(&self) -> VertexId {
        self.arena.vertex(self.pos)
    }

    pub fn level(&self) -> i64 {
        self.arena.get(self.pos).level
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn node(&self) -> u32 {
        self.pos
    }

    pub(crate) fn arena(&self) -> &Arena {
        &self.arena
    }

    /// The move whose clock rings first; ties go to the parent.
    pub fn choose(&self) -> Move {
        if self.pos == ROOT_PARENT {
            return Move::Child(1);
        }
        let node = self.arena.get(self.pos);
        let here = node.key;
        let parent_key = self.arena.get(node.parent).key;
        let mut best = Move::Parent;
        let mut best_t = self.up[self.pos as usize].next_ring(&self.clocks, here, parent_key, 1.0);
        for c in 1..=node.arity {
            let t = match node.child_node(c) {
                Some(n) => {
                    let r = self.down[n as usize];
                    let w = child_weight(self.params, self.in_omega[n as usize], r.count);
                    r.next_ring(&self.clocks, here, self.arena.get(n).key, w)
                }
                None => self.clocks.clock(here, here.child(c), 0) / self.params.u0,
            };
            if t < best_t {
                best_t = t;
                best = Move::Child(c);
            }
        }
        best
    }

    pub fn step(&mut self) -> Move {
        let m = self.choose();
        let from = self.pos;
        if from == ROOT_PARENT {
            self.pos = ROOT;
            self.steps += 1;
            return m;
        }
        let here = self.arena.get(from).key;
        match m {
            Move::Parent => {
                let p = self.arena.get(from).parent;
                let pk = self.arena.get(p).key;
                self.up[from as usize].advance(&self.clocks, here, pk, 1.0);
                self.pos = p;
            }
            Move::Child(c) => {
                let before = self.arena.nodes.len();
                let n = self.arena.child(&self.tree, from, c);
                if self.arena.nodes.len() > before {
                    self.in_omega.push(false);
                    self.up.push(Race::default());
                    self.down.push(Race::default());
                }
                let w = child_weight(self.params, self.in_omega[n as usize], self.down[n as usize].count);
                let ck = self.arena.get(n).key;
                self.down[n as usize].advance(&self.clocks, here, ck, w);
                self.pos = n;
            }
        }
        self.steps += 1;
        m
    }
}

/// A finite subtree whose top vertex has degree one inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialSubtree {
    root: VertexId,
    /// Lower endpoints of the edges, sorted.
    edges: Vec<VertexId>,
    leaves: Vec<VertexId>,
}

impl SpecialSubtree {
    /// Build from edges given by their lower endpoints.
    pub fn new<I: IntoIterator<Item = VertexId>>(edges: I) -> Result<Self> {
        let mut edges: Vec<VertexId> = edges.into_iter().collect();
        edges.sort();
        edges.dedup();
        if edges.is_empty() {
            return Err(invalid("a special subtree needs at least one edge"));
        }
        if edges.contains(&VertexId::RootParent) {
            return Err(invalid("r-1 is not the lower endpoint of an edge"));
        }
        let lower: std::collections::HashSet<&VertexId> = edges.iter().collect();
        let tops: Vec<&VertexId> = edges.iter().filter(|e| !lower.contains(&e.parent().unwrap())).collect();
        if tops.len() != 1 {
            let uppers: std::collections::HashSet<VertexId> = tops.iter().map(|e| e.parent().unwrap()).collect();
            return Err(invalid(if uppers.len() == 1 {
                "the top vertex has degree above one".to_string()
            } else {
                "edges do not form a connected subtree".to_string()
            }));
        }
        let root = tops[0].parent().unwrap();
        let leaves = edges
            .iter()
            .filter(|v| !edges.iter().any(|w| w.parent().as_ref() == Some(*v)))
            .cloned()
            .collect();
        Ok(Self { root, edges, leaves })
    }

    /// The path from `top` down to its strict descendant `bottom`.
    pub fn path(top: &VertexId, bottom: &VertexId) -> Result<Self> {
        if !(top.is_ancestor_of(bottom) && top != bottom) {
            return Err(invalid(format!("{top} is not a strict ancestor of {bottom}")));
        }
        let mut edges = Vec::new();
        let mut v = bottom.clone();
        while &v != top {
            let p = v.parent().unwrap();
            edges.push(v);
            v = p;
        }
        Self::new(edges)
    }

    pub fn root(&self) -> &VertexId {
        &self.root
    }

    pub fn edges(&self) -> &[VertexId] {
        &self.edges
    }

    pub fn leaves(&self) -> &[VertexId] {
        &self.leaves
    }

    /// Vertices with the top first.
    pub fn vertices(&self) -> Vec<VertexId> {
        let mut v = vec![self.root.clone()];
        v.extend(self.edges.iter().cloned());
        v
    }

    pub fn contains_edge(&self, lower: &VertexId) -> bool {
        self.edges.binary_search(lower).is_ok()
    }
}

/// Index-based copy of a special subtree for fast walking.
#[derive(Clone, Debug)]
struct LocalGraph {
    ids: Vec<VertexId>,
    keys: Vec<PathKey>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    reinforced: Vec<bool>,
}

impl LocalGraph {
    fn new(sub: &SpecialSubtree, omega: &Configuration) -> Self {
        let ids = sub.vertices();
        let index: HashMap<&VertexId, usize> = ids.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let n = ids.len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut reinforced = vec![false; n];
        for (i, v) in ids.iter().enumerate().skip(1) {
            let p = index[&v.parent().unwrap()];
            parent[i] = Some(p);
            children[p].push(i);
            reinforced[i] = omega.contains(v);
        }
        let keys = ids.iter().map(|v| v.key()).collect();
        Self { ids, keys, parent, children, reinforced }
    }

    fn degree(&self, v: usize) -> usize {
        self.children[v].len() + usize::from(self.parent[v].is_some())
    }
}

/// The walk induced on a special subtree by shared clocks.
#[derive(Clone, Debug)]
pub struct ExtensionWalk<'c> {
    g: LocalGraph,
    params: WalkParams,
    clocks: &'c ClockStore,
    up: Vec<Race>,
    down: Vec<Race>,
    pos: usize,
}

impl<'c> ExtensionWalk<'c> {
    pub fn new(sub: &SpecialSubtree, clocks: &'c ClockStore, params: WalkParams, omega: &Configuration) -> Self {
        let g = LocalGraph::new(sub, omega);
        let n = g.ids.len();
        Self { g, params, clocks, up: vec![Race::default(); n], down: vec![Race::default(); n], pos: 0 }
    }

    pub fn position(&self) -> &VertexId {
        &self.g.ids[self.pos]
    }

    fn index(&self) -> usize {
        self.pos
    }

    pub fn step(&mut self) -> &VertexId {
        let v = self.pos;
        if self.g.degree(v) == 1 {
            self.pos = self.g.parent[v].unwrap_or_else(|| self.g.children[v][0]);
            return &self.g.ids[self.pos];
        }
        let here = self.g.keys[v];
        let mut best: Option<usize> = None;
        let mut best_t = f64::INFINITY;
        if let Some(p) = self.g.parent[v] {
            best = Some(p);
            best_t = self.up[v].next_ring(self.clocks, here, self.g.keys[p], 1.0);
        }
        for &c in &self.g.children[v] {
            let r = self.down[c];
            let w = child_weight(self.params, self.g.reinforced[c], r.count);
            let t = r.next_ring(self.clocks, here, self.g.keys[c], w);
            if t < best_t {
                best_t = t;
                best = Some(c);
            }
        }
        let next = best.expect("interior vertex has neighbours");
        if self.g.parent[v] == Some(next) {
            self.up[v].advance(self.clocks, here, self.g.keys[next], 1.0);
        } else {
            let w = child_weight(self.params, self.g.reinforced[next], self.down[next].count);
            self.down[next].advance(self.clocks, here, self.g.keys[next], w);
        }
        self.pos = next;
        &self.g.ids[self.pos]
    }
}

/// The first `steps` moves of the extension on `sub`, starting at its top.
pub fn extension_walk(
    sub: &SpecialSubtree,
    clocks: &ClockStore,
    params: WalkParams,
    omega: &Configuration,
    steps: usize,
) -> Vec<VertexId> {
    let mut w = ExtensionWalk::new(sub, clocks, params, omega);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(w.position().clone());
    for _ in 0..steps {
        out.push(w.step().clone());
    }
    out
}

/// Whether the extension on the path `[top, bottom]` reaches `bottom` before
/// returning to `top`; `None` if undecided after `max_steps`.
pub fn path_hits(
    top: &VertexId,
    bottom: &VertexId,
    clocks: &ClockStore,
    params: WalkParams,
    omega: &Configuration,
    max_steps: u64,
) -> Result<Option<bool>> {
    let sub = SpecialSubtree::path(top, bottom)?;
    let mut w = ExtensionWalk::new(&sub, clocks, params, omega);
    let last = sub.edges.len();
    // vertices() lists the top, then the edges sorted, i.e. by depth on a path
    for _ in 0..max_steps {
        w.step();
        match w.index() {
            0 => return Ok(Some(false)),
            i if i == last => return Ok(Some(true)),
            _ => {}
        }
    }
    Ok(None)
}

/// Outcome of a shared-clock monotonicity experiment on a path.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub samples: u64,
    pub high_hits: u64,
    pub low_hits: u64,
    /// Samples where the lower environment hits first but the higher does not.
    pub violations: u64,
}

/// `omega_high >= omega_low` in the order that favours reaching far:
/// a superset when `u1 >= u0`, a subset when `u1 <= u0`.
pub fn is_ordered(params: WalkParams, high: &Configuration, low: &Configuration) -> bool {
    (params.u1 >= params.u0 && low.is_subset(high)) || (params.u1 <= params.u0 && high.is_subset(low))
}

/// Run both environments on the same clocks along the path from `r-1` to
/// `r.1.1...1` (level `n`) and count monotonicity violations.
pub fn path_monotonicity_check(
    params: WalkParams,
    high: &Configuration,
    low: &Configuration,
    n: usize,
    samples: u64,
    seed: u64,
) -> Result<MonotonicityReport> {
    if n == 0 {
        return Err(invalid("path length must be positive"));
    }
    let bottom = VertexId::from_path(&vec![1; n]);
    let on_path = |c: &Configuration| -> Result<Configuration> {
        Configuration::from_edges(c.sorted().into_iter().filter(|v| v.is_ancestor_of(&bottom)))
    };
    let (high, low) = (on_path(high)?, on_path(low)?);
    if !is_ordered(params, &high, &low) {
        return Err(invalid("environments are not ordered for these weights"));
    }
    let top = VertexId::RootParent;
    let rows = crate::par::map_runs(samples, |i| {
        let clocks = ClockStore::new(rng::derive_seed(seed, 0x6d6f_6e6f, i));
        let h = path_hits(&top, &bottom, &clocks, params, &high, u64::MAX).map(|x| x == Some(true));
        let l = path_hits(&top, &bottom, &clocks, params, &low, u64::MAX).map(|x| x == Some(true));
        (h.unwrap_or(false), l.unwrap_or(false))
    });
    let mut rep = MonotonicityReport { samples, high_hits: 0, low_hits: 0, violations: 0 };
    for (h, l) in rows {
        rep.high_hits += h as u64;
        rep.low_hits += l as u64;
        rep.violations += (l && !h) as u64;
    }
    Ok(rep)
}

/// Green vertex counts per generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenProcess {
    pub n_star: u32,
    /// `generations[k]` green vertices at level `k * n_star`.
    pub generations: Vec<u64>,
    /// Some green vertex exists at the last generation examined.
    pub survived: bool,
    /// Generation at which the population cap stopped the expansion.
    pub capped_at: Option<usize>,
}

/// Colour vertices at levels `k * n_star`: the root is green, and `mu` is
/// green when its green ancestor `nu` one generation up has an extension on
/// `[parent(nu), mu]` that reaches `mu` first.
pub fn green_process(
    tree: &LazyTree,
    params: WalkParams,
    n_star: u32,
    generation_cap: usize,
    clocks: &ClockStore,
    omega: &Configuration,
    max_population: usize,
) -> Result<GreenProcess> {
    if n_star == 0 {
        return Err(invalid("n_star must be positive"));
    }
    let mut green = vec![VertexId::root()];
    let mut generations = vec![1u64];
    for gen in 1..=generation_cap {
        if green.len() > max_population {
            return Ok(GreenProcess { n_star, generations, survived: true, capped_at: Some(gen - 1) });
        }
        let mut next = Vec::new();
        for nu in &green {
            let top = nu.parent().expect("green vertices are below r-1");
            for mu in descendants(tree, nu, n_star) {
                if path_hits(&top, &mu, clocks, params, omega, u64::MAX)? == Some(true) {
                    next.push(mu);
                }
            }
        }
        generations.push(next.len() as u64);
        green = next;
        if green.is_empty() {
            break;
        }
    }
    let survived = generations.len() == generation_cap + 1 && *generations.last().unwrap() > 0;
    Ok(GreenProcess { n_star, generations, survived, capped_at: None })
}

/// All descendants exactly `depth` levels below `v`.
pub fn descendants(tree: &LazyTree, v: &VertexId, depth: u32) -> Vec<VertexId> {
    let mut layer = vec![v.clone()];
    for _ in 0..depth {
        layer = layer.iter().flat_map(|u| tree.children(u)).collect();
    }
    layer
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> VertexId {
        s.parse().unwrap()
    }

    #[test]
    fn clocks_are_pure_and_positive() {
        let a = ClockStore::new(9);
        let b = ClockStore::new(9);
        for i in 0..100 {
            let x = a.clock_between(&v("r.1"), &v("r.1.2"), i);
            assert!(x > 0.0);
            assert_eq!(x, b.clock_between(&v("r.1"), &v("r.1.2"), i));
        }
        assert_ne!(a.clock_between(&v("r.1"), &v("r"), 0), a.clock_between(&v("r"), &v("r.1"), 0));
    }

    #[test]
    fn weights() {
        let p = WalkParams::new(0.4, 2.5).unwrap();
        let star = Configuration::star();
        assert_eq!(clock_weight(p, &star, &v("r.1"), &v("r"), 7).unwrap(), 1.0);
        assert_eq!(clock_weight(p, &star, &v("r"), &v("r.1"), 0).unwrap(), 0.4);
        assert_eq!(clock_weight(p, &star, &v("r"), &v("r.1"), 3).unwrap(), 2.5);
        let om = Configuration::from_edges([v("r"), v("r.1")]).unwrap();
        assert_eq!(clock_weight(p, &om, &v("r"), &v("r.1"), 0).unwrap(), 2.5);
        assert!(clock_weight(p, &star, &v("r"), &v("r.1.1"), 0).is_err());
    }

    #[test]
    fn special_subtrees() {
        let s = SpecialSubtree::new([v("r.1"), v("r.1.1"), v("r.1.2")]).unwrap();
        assert_eq!(s.root(), &v("r"));
        assert_eq!(s.leaves(), &[v("r.1.1"), v("r.1.2")]);
        assert!(SpecialSubtree::new([v("r.1"), v("r.2")]).is_err());
        assert!(SpecialSubtree::new([v("r.1"), v("r.2.1")]).is_err());
        let p = SpecialSubtree::path(&VertexId::RootParent, &v("r.2.1")).unwrap();
        assert_eq!(p.vertices(), vec![VertexId::RootParent, v("r"), v("r.2"), v("r.2.1")]);
    }

    #[test]
    fn extension_leaves_are_deterministic() {
        let s = SpecialSubtree::path(&v("r"), &v("r.1")).unwrap();
        let clocks = ClockStore::new(1);
        let t = extension_walk(&s, &clocks, WalkParams::new(1.0, 1.0).unwrap(), &Configuration::star(), 4);
        assert_eq!(t, vec![v("r"), v("r.1"), v("r"), v("r.1"), v("r")]);
    }

    #[test]
    fn ordering() {
        let star = Configuration::star();
        let more = Configuration::from_edges([v("r"), v("r.1")]).unwrap();
        let up = WalkParams::new(1.0, 2.0).unwrap();
        let down = WalkParams::new(2.0, 1.0).unwrap();
        assert!(is_ordered(up, &more, &star) && !is_ordered(up, &star, &more));
        assert!(is_ordered(down, &star, &more) && !is_ordered(down, &more, &star));
        assert!(path_monotonicity_check(up, &star, &more, 3, 10, 0).is_err());
    }
}
