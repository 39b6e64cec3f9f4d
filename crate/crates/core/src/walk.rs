//! The MAD-walk transition kernel.
//!
//! From a vertex `v != r-1` the walk moves to the parent with weight 1, to a
//! child whose edge is already reinforced with weight `u1`, and to any other
//! child with weight `u0`. From `r-1` it always moves to the root. Crossing
//! an edge reinforces it for good.

use std::collections::{HashSet, VecDeque};

use crate::error::{invalid, Result};
use crate::explored::{Arena, ROOT, ROOT_PARENT};
use crate::tree::{LazyTree, VertexId};

/// Edge weights relative to the parent edge.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct WalkParams {
    pub u0: f64,
    pub u1: f64,
}

impl WalkParams {
    pub fn new(u0: f64, u1: f64) -> Result<Self> {
        if !(u0.is_finite() && u1.is_finite() && u0 > 0.0 && u1 > 0.0) {
            return Err(invalid(format!("weights must be positive, got u0={u0}, u1={u1}")));
        }
        Ok(Self { u0, u1 })
    }

    /// Biased walk with bias `alpha` whose crossed edges are multiplied by `1 + beta`.
    pub fn multiplicative(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha must be positive"));
        }
        if !(beta > -1.0 && beta.is_finite()) {
            return Err(invalid(format!("multiplicative beta must exceed -1, got {beta}")));
        }
        Self::new(alpha / (1.0 + beta), alpha)
    }

    /// Biased walk with bias `alpha` whose crossed edges get `beta` added.
    pub fn additive(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha must be positive"));
        }
        if !(beta > -alpha.min(1.0) && beta.is_finite()) {
            return Err(invalid(format!("additive beta must exceed -min(alpha, 1), got {beta}")));
        }
        Self::new(alpha / (1.0 + beta), (alpha + beta) / (1.0 + beta))
    }

    /// Plain biased walk, `u0 = u1 = alpha`.
    pub fn unreinforced(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha)
    }
}

/// A finite coherent set of reinforced edges, each stored as its child endpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Configuration {
    edges: HashSet<VertexId>,
}

impl Configuration {
    /// The set containing only the edge `(r-1, r)`.
    pub fn star() -> Self {
        let mut edges = HashSet::new();
        edges.insert(VertexId::root());
        Self { edges }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Build from child endpoints, rejecting incoherent sets.
    pub fn from_edges<I: IntoIterator<Item = VertexId>>(edges: I) -> Result<Self> {
        let mut c = Self::empty();
        for e in edges {
            if e == VertexId::RootParent {
                return Err(invalid("r-1 is not the lower endpoint of any edge"));
            }
            c.edges.insert(e);
        }
        if !c.is_coherent() {
            return Err(invalid("configuration is not coherent"));
        }
        Ok(c)
    }

    /// Every reinforced edge below the root has its parent edge reinforced.
    pub fn is_coherent(&self) -> bool {
        self.edges.iter().all(|v| match v.parent() {
            Some(p) if !v.is_root() => self.edges.contains(&p),
            _ => true,
        })
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.edges.contains(v)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_subset(&self, other: &Configuration) -> bool {
        self.edges.is_subset(&other.edges)
    }

    /// Edges in a deterministic (sorted) order.
    pub fn sorted(&self) -> Vec<VertexId> {
        let mut v: Vec<_> = self.edges.iter().cloned().collect();
        v.sort();
        v
    }

    pub(crate) fn insert(&mut self, v: VertexId) {
        self.edges.insert(v);
    }
}

/// One step of the walk: to the parent or to child `i` (1-based).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Move {
    Parent,
    Child(u32),
}

/// A single walk trajectory on a lazily explored tree.
#[derive(Clone, Debug)]
pub struct Walk {
    tree: LazyTree,
    params: WalkParams,
    pub(crate) arena: Arena,
    pub(crate) pos: u32,
    steps: u64,
    history: Option<(usize, VecDeque<i64>)>,
}

impl Walk {
    /// Start at `r-1` with only the root edge reinforced.
    pub fn new(tree: LazyTree, params: WalkParams) -> Self {
        let arena = Arena::new(&tree);
        Self { tree, params, arena, pos: ROOT_PARENT, steps: 0, history: None }
    }

    /// Start at `r-1` with the coherent configuration `omega` reinforced.
    pub fn with_configuration(tree: LazyTree, params: WalkParams, omega: &Configuration) -> Result<Self> {
        if !omega.is_coherent() {
            return Err(invalid("configuration is not coherent"));
        }
        let mut w = Self::new(tree, params);
        for v in omega.sorted() {
            w.arena.locate(&w.tree, &v);
        }
        Ok(w)
    }

    /// Keep the last `capacity` levels visited.
    pub fn with_level_history(mut self, capacity: usize) -> Self {
        let mut h = VecDeque::with_capacity(capacity);
        h.push_back(self.level());
        self.history = Some((capacity, h));
        self
    }

    pub fn level_history(&self) -> Option<&VecDeque<i64>> {
        self.history.as_ref().map(|(_, h)| h)
    }

    pub fn tree(&self) -> &LazyTree {
        &self.tree
    }

    pub fn params(&self) -> WalkParams {
        self.params
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

    /// The reinforced edges so far.
    pub fn visited(&self) -> Configuration {
        let mut c = Configuration::empty();
        for n in self.arena.reinforced() {
            c.insert(self.arena.vertex(n));
        }
        c
    }

    /// Number of reinforced child edges at the current position.
    pub fn visited_children(&self) -> u32 {
        self.arena.get(self.pos).children.len() as u32
    }

    /// Unnormalized weights, parent first, then children by index.
    pub fn step_weights(&self) -> Vec<(VertexId, f64)> {
        let here = self.position();
        self.move_weights()
            .into_iter()
            .map(|(m, w)| {
                let v = match m {
                    Move::Parent => here.parent().expect("r-1 has no parent"),
                    Move::Child(i) => here.child(i),
                };
                (v, w)
            })
            .collect()
    }

    /// Unnormalized move weights in kernel order.
    pub fn move_weights(&self) -> Vec<(Move, f64)> {
        let node = self.arena.get(self.pos);
        if self.pos == ROOT_PARENT {
            return vec![(Move::Child(1), 1.0)];
        }
        let mut out = Vec::with_capacity(node.arity as usize + 1);
        out.push((Move::Parent, 1.0));
        for c in 1..=node.arity {
            let w = if node.is_reinforced(c) { self.params.u1 } else { self.params.u0 };
            out.push((Move::Child(c), w));
        }
        out
    }

    /// Normalized move probabilities in kernel order.
    pub fn move_probabilities(&self) -> Vec<(Move, f64)> {
        let w = self.move_weights();
        let total: f64 = w.iter().map(|(_, x)| x).sum();
        w.into_iter().map(|(m, x)| (m, x / total)).collect()
    }

    /// Choose the move selected by `u` under the inverse CDF in kernel order.
    pub fn choose(&self, u: f64) -> Move {
        if self.pos == ROOT_PARENT {
            return Move::Child(1);
        }
        let node = self.arena.get(self.pos);
        let (u0, u1) = (self.params.u0, self.params.u1);
        let k = node.children.len() as u32;
        let total = 1.0 + k as f64 * u1 + (node.arity - k) as f64 * u0;
        let mut t = u * total;
        if t < 1.0 || node.arity == 0 {
            return Move::Parent;
        }
        t -= 1.0;
        if k == 0 || k == node.arity {
            let w = if k == 0 { u0 } else { u1 };
            let c = (t / w).floor() as u32 + 1;
            return Move::Child(c.min(node.arity));
        }
        for c in 1..=node.arity {
            let w = if node.is_reinforced(c) { u1 } else { u0 };
            if t < w {
                return Move::Child(c);
            }
            t -= w;
        }
        Move::Child(node.arity)
    }

    /// Perform move `m`, reinforcing the crossed edge.
    pub fn apply(&mut self, m: Move) {
        self.pos = match m {
            Move::Parent => {
                let p = self.arena.get(self.pos).parent;
                assert!(self.pos != ROOT_PARENT, "r-1 has no parent");
                p
            }
            Move::Child(i) => {
                let node = self.arena.get(self.pos);
                assert!(i >= 1 && i <= node.arity, "child {i} out of range");
                if self.pos == ROOT_PARENT {
                    ROOT
                } else {
                    self.arena.child(&self.tree, self.pos, i)
                }
            }
        };
        self.steps += 1;
        if let Some((cap, h)) = self.history.as_mut() {
            if h.len() == *cap {
                h.pop_front();
            }
            h.push_back(self.arena.get(self.pos).level);
        }
    }

    /// One kernel step driven by a uniform `u` in `[0, 1)`.
    pub fn step(&mut self, u: f64) -> Move {
        let m = self.choose(u);
        self.apply(m);
        m
    }
}

/// CSV dump of a trajectory as `step,level,vertex_path` rows.
pub fn trajectory_csv(walk: &mut Walk, uniforms: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::from("step,level,vertex_path\n");
    out.push_str(&format!("{},{},{}\n", walk.steps(), walk.level(), walk.position()));
    for u in uniforms {
        walk.step(u);
        out.push_str(&format!("{},{},{}\n", walk.steps(), walk.level(), walk.position()));
    }
    out
}
