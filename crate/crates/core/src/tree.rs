//! Lazily generated rooted trees with the extra parent `r-1` above the root.
//!
//! Vertices are addressed by their child-index path from the root. Arities
//! are a pure function of `(seed, path)`, so a tree can be explored in any
//! order, from any thread, and always looks the same.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Child-count distribution of the tree.
#[derive(Clone, Debug, PartialEq)]
pub enum OffspringLaw {
    /// Every vertex has exactly `d` children.
    Regular(u32),
    /// `probs[k]` is the probability of `k` children.
    Table(Vec<f64>),
    /// `P(k) = p (1-p)^(k-1)` for `k >= 1`.
    Geometric(f64),
}

impl OffspringLaw {
    pub fn regular(d: u32) -> Result<Self> {
        if d == 0 {
            return Err(invalid("regular law needs d >= 1"));
        }
        Ok(Self::Regular(d))
    }

    pub fn table(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("table probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("table probabilities sum to {total}, not 1")));
        }
        let mut probs = probs;
        while probs.len() > 1 && probs[probs.len() - 1] == 0.0 {
            probs.pop();
        }
        if probs.len() > u32::MAX as usize {
            return Err(invalid("table support too large"));
        }
        Ok(Self::Table(probs))
    }

    pub fn geometric(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid("geometric parameter must lie in (0, 1]"));
        }
        Ok(Self::Geometric(p))
    }

    /// Mean number of children.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Regular(d) => *d as f64,
            Self::Table(p) => p.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
            Self::Geometric(p) => 1.0 / p,
        }
    }

    /// True when no vertex can be a leaf.
    pub fn no_leaves(&self) -> bool {
        match self {
            Self::Table(p) => p[0] == 0.0,
            _ => true,
        }
    }

    /// Inverse-CDF sample from a uniform in (0, 1).
    pub fn sample(&self, u: f64) -> u32 {
        match self {
            Self::Regular(d) => *d,
            Self::Table(p) => {
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return k as u32;
                    }
                }
                // rounding slack: fall back to the largest supported value
                p.iter().rposition(|x| *x > 0.0).unwrap_or(0) as u32
            }
            Self::Geometric(p) => {
                if *p >= 1.0 {
                    return 1;
                }
                let k = 1.0 + (u.ln() / (1.0 - p).ln()).floor();
                k.min(u32::MAX as f64) as u32
            }
        }
    }
}

impl fmt::Display for OffspringLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Regular(d) => write!(f, "regular:{d}"),
            Self::Geometric(p) => write!(f, "geom:{p}"),
            Self::Table(p) => {
                write!(f, "table:")?;
                let mut first = true;
                for (k, pk) in p.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                    if !first {
                        write!(f, ",")?;
                    }
                    first = false;
                    write!(f, "{k}={pk}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for OffspringLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("offspring law `{s}`: {m}"));
        let (kind, body) = s.trim().split_once(':').ok_or_else(|| bad("missing `:`"))?;
        match kind.trim() {
            "regular" => {
                let d: u32 = body.trim().parse().map_err(|_| bad("bad arity"))?;
                Self::regular(d)
            }
            "geom" => {
                let p: f64 = body.trim().parse().map_err(|_| bad("bad probability"))?;
                Self::geometric(p)
            }
            "table" => {
                let mut probs: Vec<f64> = Vec::new();
                for item in body.split(',').filter(|t| !t.trim().is_empty()) {
                    let (k, p) = item.split_once('=').ok_or_else(|| bad("expected k=p"))?;
                    let k: usize = k.trim().parse().map_err(|_| bad("bad count"))?;
                    let p: f64 = p.trim().parse().map_err(|_| bad("bad probability"))?;
                    if k > 1 << 20 {
                        return Err(bad("count too large for a table"));
                    }
                    if probs.len() <= k {
                        probs.resize(k + 1, 0.0);
                    }
                    probs[k] += p;
                }
                Self::table(probs)
            }
            _ => Err(bad("unknown kind")),
        }
    }
}

/// 128-bit rolling hash of a vertex path, used to address random variates.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathKey(pub u64, pub u64);

impl PathKey {
    /// Key of `r-1`.
    pub const ROOT_PARENT: PathKey = PathKey(0x243f_6a88_85a3_08d3, 0x1319_8a2e_0370_7344);

    /// Key of the root, the single child of `r-1`.
    pub fn root() -> PathKey {
        Self::ROOT_PARENT.child(1)
    }

    #[inline]
    pub fn child(self, i: u32) -> PathKey {
        let i = i as u64;
        PathKey(
            rng::mix64(self.0 ^ rng::mix64(i ^ 0xa409_3822_299f_31d0)),
            rng::mix64(self.1.rotate_left(23) ^ rng::mix64(i.wrapping_add(0x0829_7f3d_4c6f_a2b1))),
        )
    }
}

/// A vertex of the augmented tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexId {
    /// The extra vertex `r-1` at level -1.
    RootParent,
    /// Child-index path from the root; the empty path is the root.
    Node(Vec<u32>),
}

impl VertexId {
    pub fn root() -> Self {
        Self::Node(Vec::new())
    }

    pub fn from_path(path: &[u32]) -> Self {
        Self::Node(path.to_vec())
    }

    pub fn is_root(&self) -> bool {
        matches!(self, Self::Node(p) if p.is_empty())
    }

    pub fn level(&self) -> i64 {
        match self {
            Self::RootParent => -1,
            Self::Node(p) => p.len() as i64,
        }
    }

    pub fn path(&self) -> Option<&[u32]> {
        match self {
            Self::RootParent => None,
            Self::Node(p) => Some(p),
        }
    }

    /// Parent, or `None` for `r-1`.
    pub fn parent(&self) -> Option<VertexId> {
        match self {
            Self::RootParent => None,
            Self::Node(p) if p.is_empty() => Some(Self::RootParent),
            Self::Node(p) => Some(Self::Node(p[..p.len() - 1].to_vec())),
        }
    }

    /// The `i`-th child (1-based). The only child of `r-1` is the root.
    pub fn child(&self, i: u32) -> VertexId {
        assert!(i >= 1, "child indices are 1-based");
        match self {
            Self::RootParent => {
                assert_eq!(i, 1, "r-1 has a single child");
                Self::root()
            }
            Self::Node(p) => {
                let mut q = Vec::with_capacity(p.len() + 1);
                q.extend_from_slice(p);
                q.push(i);
                Self::Node(q)
            }
        }
    }

    /// Ancestor ordering: `self <= other` in the tree.
    pub fn is_ancestor_of(&self, other: &VertexId) -> bool {
        match (self, other) {
            (Self::RootParent, _) => true,
            (_, Self::RootParent) => false,
            (Self::Node(a), Self::Node(b)) => b.starts_with(a),
        }
    }

    pub fn key(&self) -> PathKey {
        match self {
            Self::RootParent => PathKey::ROOT_PARENT,
            Self::Node(p) => p.iter().fold(PathKey::root(), |k, &i| k.child(i)),
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RootParent => write!(f, "r-1"),
            Self::Node(p) => {
                write!(f, "r")?;
                for i in p {
                    write!(f, ".{i}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for VertexId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "r-1" {
            return Ok(Self::RootParent);
        }
        let mut parts = s.split('.');
        if parts.next() != Some("r") {
            return Err(Error::Parse(format!("vertex `{s}` must start with `r`")));
        }
        let path = parts
            .map(|t| match t.parse::<u32>() {
                Ok(i) if i >= 1 => Ok(i),
                _ => Err(Error::Parse(format!("bad child index `{t}` in `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Node(path))
    }
}

/// A tree whose arities are sampled on demand from `(law, seed, path)`.
///
/// An optional depth cut turns every vertex at that level into a leaf, which
/// gives the finite trees used by the exact oracles.
#[derive(Clone, Debug, PartialEq)]
pub struct LazyTree {
    law: OffspringLaw,
    seed: u64,
    depth: Option<u32>,
}

impl LazyTree {
    pub fn new(law: OffspringLaw, seed: u64) -> Self {
        Self { law, seed, depth: None }
    }

    pub fn regular(d: u32) -> Result<Self> {
        Ok(Self::new(OffspringLaw::regular(d)?, 0))
    }

    /// Same tree with every vertex at level `depth` made a leaf.
    pub fn truncated(mut self, depth: u32) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> Option<u32> {
        self.depth
    }

    pub fn arity(&self, v: &VertexId) -> u32 {
        match v {
            VertexId::RootParent => 1,
            VertexId::Node(p) => self.arity_at(v.key(), p.len() as i64),
        }
    }

    /// Arity of the vertex with key `key` at level `level`.
    #[inline]
    pub fn arity_at(&self, key: PathKey, level: i64) -> u32 {
        if level < 0 {
            return 1;
        }
        if matches!(self.depth, Some(dd) if level >= dd as i64) {
            return 0;
        }
        match self.law {
            OffspringLaw::Regular(d) => d,
            _ => self.law.sample(rng::open_unit(rng::hash_words(&[self.seed, key.0, key.1]))),
        }
    }

    pub fn children(&self, v: &VertexId) -> Vec<VertexId> {
        (1..=self.arity(v)).map(|i| v.child(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["regular:3", "table:1=0.5,3=0.5", "geom:0.25"] {
            let law: OffspringLaw = s.parse().unwrap();
            assert_eq!(law.to_string(), s);
        }
        let law: OffspringLaw = "table:0=0.0,2=0.5,3=0.5".parse().unwrap();
        assert_eq!(law.to_string(), "table:2=0.5,3=0.5");
        assert!("table:1=0.5".parse::<OffspringLaw>().is_err());
        assert!("regular:0".parse::<OffspringLaw>().is_err());
        assert!("poisson:1".parse::<OffspringLaw>().is_err());
    }

    #[test]
    fn means_and_leaves() {
        assert_eq!(OffspringLaw::Regular(4).mean(), 4.0);
        let t = OffspringLaw::table(vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        assert!((t.mean() - 2.0).abs() < 1e-12);
        assert!(t.no_leaves());
        assert!(!OffspringLaw::table(vec![0.5, 0.5]).unwrap().no_leaves());
        assert_eq!(OffspringLaw::Geometric(0.25).mean(), 4.0);
    }

    #[test]
    fn vertex_basics() {
        let v: VertexId = "r.1.2".parse().unwrap();
        assert_eq!(v.level(), 2);
        assert_eq!(v.to_string(), "r.1.2");
        assert_eq!(v.parent().unwrap().to_string(), "r.1");
        assert_eq!(VertexId::root().parent(), Some(VertexId::RootParent));
        assert_eq!(VertexId::RootParent.parent(), None);
        assert_eq!(VertexId::RootParent.child(1), VertexId::root());
        assert!(VertexId::root().is_ancestor_of(&v));
        assert!(!v.is_ancestor_of(&VertexId::root()));
        assert_eq!(VertexId::RootParent.key(), PathKey::ROOT_PARENT);
        assert_eq!(VertexId::root().key(), PathKey::root());
        assert!("r.0".parse::<VertexId>().is_err());
    }

    #[test]
    fn arities() {
        let t = LazyTree::regular(3).unwrap();
        assert_eq!(t.arity(&VertexId::RootParent), 1);
        assert_eq!(t.arity(&"r.2.3".parse().unwrap()), 3);
        assert_eq!(t.children(&VertexId::RootParent), vec![VertexId::root()]);
        let cut = t.clone().truncated(2);
        assert_eq!(cut.arity(&"r.1".parse().unwrap()), 3);
        assert!(cut.children(&"r.1.1".parse().unwrap()).is_empty());
    }
}
