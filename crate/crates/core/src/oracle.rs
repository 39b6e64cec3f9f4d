//! Exact ground truth on small instances.
//!
//! * [`PathChain`]: hitting probabilities of the (position, maximum) chain,
//!   by linear solve. Exact rational arithmetic up to `n = 12`, dense floating
//!   point with a residual check beyond.
//! * [`enumerate_step_distribution`]: every walk prefix on a finite tree
//!   together with its kernel probability.
//! * [`exact_mean_return_range`]: expected number of distinct vertices seen
//!   before the first return to `r-1`, by absorption analysis over
//!   (position, reinforced set).

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{invalid, Error, Result};
use crate::formulas::MadPathParams;
use crate::tree::{LazyTree, VertexId};
use crate::walk::{Move, Walk, WalkParams};

/// Largest target level solved in rational arithmetic by default.
pub const RATIONAL_UP_TO: u64 = 12;

/// The path walk's (position, maximum) chain, absorbed at `-1` and `n`.
#[derive(Clone, Debug)]
pub struct PathChain {
    pub n: u64,
    a: BigRational,
    b: BigRational,
}

impl PathChain {
    /// Chain with the exact binary values of `params.a`, `params.b`.
    pub fn new(params: MadPathParams, n: u64) -> Result<Self> {
        let conv = |x: f64| BigRational::from_float(x).ok_or_else(|| invalid("non-finite probability"));
        Self::rational(conv(params.a)?, conv(params.b)?, n)
    }

    pub fn rational(a: BigRational, b: BigRational, n: u64) -> Result<Self> {
        let zero = BigRational::zero();
        let one = BigRational::one();
        if !(a > zero && a < one && b > zero && b < one) {
            return Err(invalid("a and b must lie in (0, 1)"));
        }
        if n == 0 {
            return Err(invalid("target level must be positive"));
        }
        Ok(Self { n, a, b })
    }

    /// Non-absorbing states `(pos, max)` in elimination order: maximum
    /// descending, position ascending.
    pub fn states(&self) -> Vec<(i64, i64)> {
        let n = self.n as i64;
        let mut s = Vec::new();
        for max in (0..=n).rev() {
            for pos in 0..=max.min(n - 1) {
                s.push((pos, max));
            }
        }
        s
    }

    /// Outgoing transitions `(target, probability)` of a non-absorbing state.
    pub fn transitions(&self, (pos, max): (i64, i64)) -> [((i64, i64), BigRational); 2] {
        let up = if pos == max { self.b.clone() } else { self.a.clone() };
        let down = BigRational::one() - &up;
        [((pos + 1, max.max(pos + 1)), up), ((pos - 1, max), down)]
    }

    fn check_start(&self, pos: i64, max: i64) -> Result<()> {
        if !(-1 <= pos && pos <= max && max <= self.n as i64) {
            return Err(invalid(format!("need -1 <= pos <= max <= n, got ({pos}, {max})")));
        }
        Ok(())
    }

    /// Exact hitting probability of `n` before `-1`.
    pub fn hit_exact(&self, pos: i64, max: i64) -> Result<BigRational> {
        self.check_start(pos, max)?;
        let n = self.n as i64;
        if pos == n {
            return Ok(BigRational::one());
        }
        if pos == -1 {
            return Ok(BigRational::zero());
        }
        let states = self.states();
        let index: HashMap<(i64, i64), usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut rows: Vec<BTreeMap<usize, BigRational>> = Vec::with_capacity(states.len());
        let mut rhs: Vec<BigRational> = Vec::with_capacity(states.len());
        for &s in &states {
            let mut row = BTreeMap::new();
            row.insert(index[&s], BigRational::one());
            let mut c = BigRational::zero();
            for (t, p) in self.transitions(s) {
                if t.0 == n {
                    c += p;
                } else if t.0 >= 0 {
                    let e = row.entry(index[&t]).or_insert_with(BigRational::zero);
                    *e -= p;
                }
            }
            rows.push(row);
            rhs.push(c);
        }
        let x = solve_sparse_rational(rows, rhs)?;
        Ok(x[index[&(pos, max)]].clone())
    }

    /// Floating-point hitting probability from a dense solve, with the
    /// residual checked below `1e-12`.
    pub fn hit_float(&self, pos: i64, max: i64) -> Result<f64> {
        self.check_start(pos, max)?;
        let n = self.n as i64;
        if pos == n {
            return Ok(1.0);
        }
        if pos == -1 {
            return Ok(0.0);
        }
        let states = self.states();
        let index: HashMap<(i64, i64), usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let m = states.len();
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (i, &s) in states.iter().enumerate() {
            a[i][i] = 1.0;
            for (t, p) in self.transitions(s) {
                let p = p.to_f64().unwrap_or(f64::NAN);
                if t.0 == n {
                    b[i] += p;
                } else if t.0 >= 0 {
                    a[i][index[&t]] -= p;
                }
            }
        }
        let x = solve_dense(&a, &b)?;
        Ok(x[index[&(pos, max)]])
    }
}

/// Probability of hitting `n` before `-1` from `(pos, max)`, rational for
/// `n <= 12` and floating point otherwise.
pub fn exact_path_hit(chain: &PathChain, pos: i64, max: i64) -> Result<f64> {
    if chain.n <= RATIONAL_UP_TO {
        Ok(chain.hit_exact(pos, max)?.to_f64().unwrap_or(f64::NAN))
    } else {
        chain.hit_float(pos, max)
    }
}

/// Probability that the path walk from `r-1` reaches level `n` before
/// returning, when the first `reinforced` edges below the root are already
/// reinforced.
pub fn exact_path_hit_with_prefix(params: WalkParams, n: u64, reinforced: u64) -> Result<f64> {
    if reinforced > n {
        return Err(invalid("cannot reinforce beyond the target"));
    }
    let chain = PathChain::new(MadPathParams::from_walk(params), n)?;
    exact_path_hit(&chain, 0, reinforced as i64)
}

fn solve_sparse_rational(
    mut rows: Vec<BTreeMap<usize, BigRational>>,
    mut rhs: Vec<BigRational>,
) -> Result<Vec<BigRational>> {
    let m = rows.len();
    for j in 0..m {
        let pivot = rows[j].get(&j).cloned().unwrap_or_else(BigRational::zero);
        if pivot.is_zero() {
            return Err(Error::Singular(format!("zero pivot at {j}")));
        }
        let pivot_row: Vec<(usize, BigRational)> =
            rows[j].iter().filter(|(c, _)| **c > j).map(|(c, v)| (*c, v / &pivot)).collect();
        let pivot_rhs = &rhs[j] / &pivot;
        for i in j + 1..m {
            let Some(f) = rows[i].remove(&j) else { continue };
            for (c, v) in &pivot_row {
                let e = rows[i].entry(*c).or_insert_with(BigRational::zero);
                *e -= &f * v;
                if e.is_zero() {
                    rows[i].remove(c);
                }
            }
            rhs[i] = &rhs[i] - &f * &pivot_rhs;
        }
        rows[j] = pivot_row.into_iter().collect();
        rhs[j] = pivot_rhs;
    }
    let mut x = vec![BigRational::zero(); m];
    for j in (0..m).rev() {
        let mut v = rhs[j].clone();
        for (c, a) in &rows[j] {
            v -= a * &x[*c];
        }
        x[j] = v;
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting; fails if `||Ax - b||_inf >= 1e-12`.
pub(crate) fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let m = b.len();
    let mut w: Vec<Vec<f64>> = a.to_vec();
    let mut r = b.to_vec();
    for j in 0..m {
        let p = (j..m)
            .max_by(|&x, &y| w[x][j].abs().total_cmp(&w[y][j].abs()))
            .ok_or_else(|| Error::Singular("empty system".into()))?;
        if w[p][j].abs() < 1e-300 {
            return Err(Error::Singular(format!("zero pivot at {j}")));
        }
        w.swap(j, p);
        r.swap(j, p);
        for i in j + 1..m {
            let f = w[i][j] / w[j][j];
            if f == 0.0 {
                continue;
            }
            for c in j..m {
                w[i][c] -= f * w[j][c];
            }
            r[i] -= f * r[j];
        }
    }
    let mut x = vec![0.0; m];
    for j in (0..m).rev() {
        let s: f64 = (j + 1..m).map(|c| w[j][c] * x[c]).sum();
        x[j] = (r[j] - s) / w[j][j];
    }
    let residual = (0..m)
        .map(|i| ((0..m).map(|c| a[i][c] * x[c]).sum::<f64>() - b[i]).abs())
        .fold(0.0, f64::max);
    if !(residual < 1e-12) {
        return Err(Error::Singular(format!("residual {residual:e} too large")));
    }
    Ok(x)
}

/// A finite tree (a depth-truncated [`LazyTree`]) with walk parameters.
#[derive(Clone, Debug)]
pub struct EnumTree {
    pub tree: LazyTree,
    pub params: WalkParams,
}

impl EnumTree {
    pub fn new(tree: LazyTree, depth: u32, params: WalkParams) -> Self {
        Self { tree: tree.truncated(depth), params }
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth().expect("enumeration trees are truncated")
    }
}

/// Maximum number of enumerated prefixes.
pub const ENUMERATION_BUDGET: usize = 10_000_000;

/// Exact law of the first `len` steps from `r-1`: each key lists the
/// `len + 1` visited positions.
pub fn enumerate_step_distribution(t: &EnumTree, len: usize) -> Result<BTreeMap<Vec<VertexId>, f64>> {
    if len > 12 {
        return Err(invalid("prefix length is limited to 12"));
    }
    let mut out = BTreeMap::new();
    let start = Walk::new(t.tree.clone(), t.params);
    let mut path = vec![start.position()];
    enumerate(&start, len, 1.0, &mut path, &mut out)?;
    Ok(out)
}

fn enumerate(
    w: &Walk,
    left: usize,
    prob: f64,
    path: &mut Vec<VertexId>,
    out: &mut BTreeMap<Vec<VertexId>, f64>,
) -> Result<()> {
    if left == 0 {
        if out.len() >= ENUMERATION_BUDGET {
            return Err(Error::BudgetExceeded(format!("more than {ENUMERATION_BUDGET} prefixes")));
        }
        *out.entry(path.clone()).or_insert(0.0) += prob;
        return Ok(());
    }
    for (m, p) in w.move_probabilities() {
        let mut next = w.clone();
        next.apply(m);
        path.push(next.position());
        enumerate(&next, left - 1, prob * p, path, out)?;
        path.pop();
    }
    Ok(())
}

/// Maximum number of reinforced sets explored by [`exact_mean_return_range`].
pub const RANGE_STATE_BUDGET: usize = 200_000;

struct FiniteTree {
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
}

/// Expected number of distinct vertices other than `r-1` visited before the
/// walk first returns to `r-1`, exact on the truncated tree.
pub fn exact_mean_return_range(t: &EnumTree) -> Result<f64> {
    let ft = flatten(&t.tree, 128)?;
    let mut memo: HashMap<u128, Vec<f64>> = HashMap::new();
    let root_set = 1u128;
    let values = range_values(&ft, t.params, root_set, &mut memo)?;
    Ok(1.0 + values[0])
}

fn flatten(tree: &LazyTree, limit: usize) -> Result<FiniteTree> {
    let mut ids = vec![VertexId::root()];
    let mut parent = vec![usize::MAX];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut i = 0;
    while i < ids.len() {
        for c in tree.children(&ids[i]) {
            if ids.len() >= limit {
                return Err(Error::BudgetExceeded(format!("tree has more than {limit} vertices")));
            }
            let id = ids.len();
            ids.push(c);
            parent.push(i);
            children.push(Vec::new());
            children[i].push(id);
        }
        i += 1;
    }
    Ok(FiniteTree { parent, children })
}

/// Expected number of future discoveries from each vertex of `set`.
fn range_values(
    ft: &FiniteTree,
    params: WalkParams,
    set: u128,
    memo: &mut HashMap<u128, Vec<f64>>,
) -> Result<Vec<f64>> {
    if let Some(v) = memo.get(&set) {
        return Ok(v.clone());
    }
    if memo.len() >= RANGE_STATE_BUDGET {
        return Err(Error::BudgetExceeded(format!("more than {RANGE_STATE_BUDGET} reinforced sets")));
    }
    let members: Vec<usize> = (0..ft.parent.len()).filter(|v| set >> v & 1 == 1).collect();
    let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let m = members.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (i, &x) in members.iter().enumerate() {
        a[i][i] = 1.0;
        let total: f64 = 1.0
            + ft.children[x]
                .iter()
                .map(|&c| if set >> c & 1 == 1 { params.u1 } else { params.u0 })
                .sum::<f64>();
        // parent move: r-1 ends the excursion, any other parent is in the set
        if x != 0 {
            a[i][pos[&ft.parent[x]]] -= 1.0 / total;
        }
        for &c in &ft.children[x] {
            if set >> c & 1 == 1 {
                a[i][pos[&c]] -= params.u1 / total;
            } else {
                let p = params.u0 / total;
                let grown = range_values(ft, params, set | 1 << c, memo)?;
                let members_grown = (0..ft.parent.len()).filter(|v| (set | 1 << c) >> v & 1 == 1);
                let at_c = members_grown.take_while(|&v| v < c).count();
                b[i] += p * (1.0 + grown[at_c]);
            }
        }
    }
    let x = solve_dense(&a, &b)?;
    memo.insert(set, x.clone());
    Ok(x)
}

/// Kernel probability of a move sequence, as a product of normalized weights.
pub fn trajectory_probability(tree: &LazyTree, params: WalkParams, moves: &[Move]) -> f64 {
    let mut w = Walk::new(tree.clone(), params);
    let mut p = 1.0;
    for m in moves {
        let probs = w.move_probabilities();
        match probs.iter().find(|(x, _)| x == m) {
            Some((_, q)) => p *= q,
            None => return 0.0,
        }
        w.apply(*m);
    }
    p
}

/// Exact rational `k/l`.
pub fn ratio(k: i64, l: i64) -> BigRational {
    BigRational::new(BigInt::from(k), BigInt::from(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulas::phi;

    #[test]
    fn tiny_chains() {
        let c = PathChain::rational(ratio(1, 2), ratio(1, 2), 1).unwrap();
        assert_eq!(c.hit_exact(0, 0).unwrap(), ratio(1, 2));
        let c = PathChain::rational(ratio(1, 2), ratio(1, 2), 2).unwrap();
        assert_eq!(c.hit_exact(0, 0).unwrap(), ratio(1, 3));
        assert_eq!(c.hit_exact(-1, 0).unwrap(), ratio(0, 1));
        assert_eq!(c.hit_exact(2, 2).unwrap(), ratio(1, 1));
        assert!(c.hit_exact(1, 0).is_err());
    }

    #[test]
    fn rows_sum_to_one() {
        let c = PathChain::rational(ratio(2, 3), ratio(2, 5), 5).unwrap();
        for s in c.states() {
            let [(_, p), (_, q)] = c.transitions(s);
            assert_eq!(p + q, BigRational::one());
        }
    }

    #[test]
    fn float_and_rational_agree() {
        let p = MadPathParams::new(2.0 / 3.0, 0.4).unwrap();
        let c = PathChain::new(p, 6).unwrap();
        let exact = c.hit_exact(0, 0).unwrap().to_f64().unwrap();
        let float = c.hit_float(0, 0).unwrap();
        assert!((exact - float).abs() < 1e-12);
        assert!((exact - phi(p, 0, 6).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn enumeration_examples() {
        let t = EnumTree::new(LazyTree::regular(1).unwrap(), 5, WalkParams::new(1.0, 1.0).unwrap());
        let d = enumerate_step_distribution(&t, 2).unwrap();
        let back = vec![VertexId::RootParent, VertexId::root(), VertexId::RootParent];
        assert!((d[&back] - 0.5).abs() < 1e-15);

        let alpha = 1.7;
        let t = EnumTree::new(LazyTree::regular(2).unwrap(), 3, WalkParams::unreinforced(alpha).unwrap());
        let d = enumerate_step_distribution(&t, 3).unwrap();
        let key: Vec<VertexId> = ["r-1", "r", "r.2", "r"].iter().map(|s| s.parse().unwrap()).collect();
        let want = alpha / (2.0 * alpha + 1.0) * (1.0 / (2.0 * alpha + 1.0));
        assert!((d[&key] - want).abs() < 1e-15);
        assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_range_on_a_line_is_harmonic() {
        for depth in 1..=6u32 {
            let t = EnumTree::new(LazyTree::regular(1).unwrap(), depth, WalkParams::new(1.0, 1.0).unwrap());
            let h: f64 = (1..=depth + 1).map(|k| 1.0 / k as f64).sum();
            assert!((exact_mean_return_range(&t).unwrap() - h).abs() < 1e-12);
        }
    }
}
