//! Closed-form quantities: path hitting probabilities, the phase criterion,
//! one-dimensional speeds, coupling probabilities and the threshold function.

use crate::error::{invalid, Result};
use crate::walk::WalkParams;

/// Products longer than this are accumulated in log space.
const LOG_SPACE_FROM: u64 = 30;
const CRITICAL_TOL: f64 = 1e-12;

/// Parameters of a walk on the integers that steps up with probability `b`
/// at its running maximum and `a` elsewhere.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MadPathParams {
    pub a: f64,
    pub b: f64,
}

impl MadPathParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
            return Err(invalid(format!("a and b must lie in (0, 1), got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }

    /// The path walk induced by tree weights: `a = u1/(1+u1)`, `b = u0/(1+u0)`.
    pub fn from_walk(p: WalkParams) -> Self {
        Self { a: p.u1 / (1.0 + p.u1), b: p.u0 / (1.0 + p.u0) }
    }

    pub fn zeta(&self) -> f64 {
        (1.0 - self.a) / self.a
    }
}

fn product(n_terms: u64, factor: impl Fn(u64) -> f64) -> f64 {
    if n_terms > LOG_SPACE_FROM {
        (0..n_terms).map(|j| factor(j).ln()).sum::<f64>().exp()
    } else {
        (0..n_terms).map(factor).product()
    }
}

/// Probability that the walk started at `ell` (with maximum `ell`) hits `n`
/// before `-1`.
pub fn phi(params: MadPathParams, ell: u64, n: u64) -> Result<f64> {
    if n <= ell {
        return Err(invalid(format!("need ell < n, got ell={ell}, n={n}")));
    }
    let MadPathParams { a, b } = params;
    let lz = ((1.0 - a) / a).ln();
    let factor = |i: u64| {
        let j = (ell + i) as f64;
        if lz.abs() < CRITICAL_TOL {
            return b * (j + 1.0) / (b * j + 1.0);
        }
        // probability of returning to j from j-1 before -1
        let back = if lz < 0.0 {
            (j * lz).exp_m1() / ((j + 1.0) * lz).exp_m1()
        } else {
            (-lz).exp() * (-j * lz).exp_m1() / (-(j + 1.0) * lz).exp_m1()
        };
        b / (1.0 - (1.0 - b) * back)
    };
    Ok(product(n - ell, factor))
}

#[inline]
fn psi_factor(u0: f64, u1: f64, j: u64, unit_branch: bool) -> f64 {
    let m = (j + 1) as f64;
    if unit_branch {
        return u0 * m / (u0 * m + 1.0);
    }
    let e = m * u1.ln();
    if e > 700.0 {
        return 1.0;
    }
    let x = e.exp_m1();
    u0 * x / (u0 * x + u1 - 1.0)
}

/// Probability that the path walk from `r-1` hits level `n` before returning.
pub fn psi(params: WalkParams, n: u64) -> Result<f64> {
    if n < 1 {
        return Err(invalid("psi needs n >= 1"));
    }
    let unit = (params.u1 - 1.0).abs() < CRITICAL_TOL;
    Ok(product(n, |j| psi_factor(params.u0, params.u1, j, unit)))
}

/// Recurrence/transience verdict from the sign of the phase margin.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    Transient,
    Recurrent,
    Critical,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Transient => "transient",
            Phase::Recurrent => "recurrent",
            Phase::Critical => "critical",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PhaseVerdict {
    pub phase: Phase,
    pub margin: f64,
}

/// `margin = d*u0 - (1 - u1 + u0)`; transient above zero, recurrent below.
pub fn phase(params: WalkParams, d: f64) -> PhaseVerdict {
    let margin = d * params.u0 - (1.0 - params.u1 + params.u0);
    let phase = if margin.abs() <= CRITICAL_TOL {
        Phase::Critical
    } else if margin > 0.0 {
        Phase::Transient
    } else {
        Phase::Recurrent
    };
    PhaseVerdict { phase, margin }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Reinforcement {
    Multiplicative,
    Additive,
}

impl std::str::FromStr for Reinforcement {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicative" | "mult" => Ok(Self::Multiplicative),
            "additive" | "add" => Ok(Self::Additive),
            _ => Err(crate::Error::Parse(format!("unknown reinforcement `{s}`"))),
        }
    }
}

impl std::fmt::Display for Reinforcement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Multiplicative => "multiplicative",
            Self::Additive => "additive",
        })
    }
}

/// Published closed-form speeds on the half-line (`d = 1`).
pub fn speed_z(mode: Reinforcement, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 1.0) {
        return Err(invalid(format!("speed formula needs alpha >= 1, got {alpha}")));
    }
    if !(beta >= 0.0) {
        return Err(invalid(format!("speed formula needs beta >= 0, got {beta}")));
    }
    Ok(match mode {
        Reinforcement::Multiplicative => (alpha - 1.0) / (alpha + 1.0 + 2.0 * beta),
        Reinforcement::Additive => {
            alpha * (alpha - 1.0) / (alpha * (alpha + 1.0 + beta) + 2.0 * beta * (1.0 + beta))
        }
    })
}

/// Speed of the MAD walk on the half-line from the renewal structure of its
/// maxima: each new maximum costs one step plus, with probability `1-b`, a
/// backtrack of mean length `1 + 1/(2a-1)`.
pub fn mad_path_speed(params: WalkParams) -> f64 {
    let MadPathParams { a, b } = MadPathParams::from_walk(params);
    if a <= 0.5 {
        return 0.0;
    }
    b * (2.0 * a - 1.0) / (2.0 * a - b)
}

/// Step probabilities of the multiplicative walk on the `d`-regular tree at
/// reinforcement `beta`, indexed by the number `k` of visited children.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProbs {
    pub beta: f64,
    /// Probability of each fresh child.
    pub p: Vec<f64>,
    /// Probability of each visited child.
    pub pbar: Vec<f64>,
    /// Probability of the parent.
    pub q: Vec<f64>,
}

impl StepProbs {
    pub fn new(alpha: f64, d: u32, beta: f64) -> Self {
        let mut p = Vec::with_capacity(d as usize + 1);
        let mut pbar = Vec::with_capacity(d as usize + 1);
        let mut q = Vec::with_capacity(d as usize + 1);
        for k in 0..=d {
            let den = alpha * (d as f64 + k as f64 * beta) + 1.0 + beta;
            p.push(if k < d { alpha / den } else { 0.0 });
            pbar.push(if k > 0 { alpha * (1.0 + beta) / den } else { 0.0 });
            q.push((1.0 + beta) / den);
        }
        Self { beta, p, pbar, q }
    }

    /// `(d-k) p_k + k pbar_k + q_k - 1`.
    pub fn total_residual(&self, k: usize) -> f64 {
        let d = self.p.len() - 1;
        (d - k) as f64 * self.p[k] + k as f64 * self.pbar[k] + self.q[k] - 1.0
    }
}

/// Everything needed to couple the walks at `beta` and `beta + eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingProbs {
    pub alpha: f64,
    pub d: u32,
    pub eps: f64,
    pub base: StepProbs,
    pub shifted: StepProbs,
    /// `p_k(beta) - p_k(beta+eps)`.
    pub dp: Vec<f64>,
    /// `q_k(beta+eps) - q_k(beta)`.
    pub dq: Vec<f64>,
    /// `k (pbar_k(beta+eps) - pbar_k(beta))`.
    pub dbar: Vec<f64>,
    /// `1 + beta + alpha d`.
    pub eta: f64,
    /// Probability that time 0 is a regeneration time of the driving walk.
    pub p_inf: f64,
    /// `(1 + beta + eps) / (alpha d)`.
    pub r: f64,
}

impl CouplingProbs {
    pub fn new(alpha: f64, d: u32, beta: f64, eps: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || d == 0 {
            return Err(invalid("need alpha > 0 and d >= 1"));
        }
        if !(beta >= 0.0 && eps >= 0.0) {
            return Err(invalid(format!("need beta >= 0 and eps >= 0, got {beta}, {eps}")));
        }
        let ad = alpha * d as f64;
        let p_inf = (ad - (1.0 + beta + eps)) / ad;
        if !(p_inf > 0.0) {
            return Err(invalid(format!("need alpha*d > 1 + beta + eps, got p_inf = {p_inf}")));
        }
        let base = StepProbs::new(alpha, d, beta);
        let shifted = StepProbs::new(alpha, d, beta + eps);
        let n = d as usize + 1;
        let dp = (0..n).map(|k| base.p[k] - shifted.p[k]).collect();
        let dq = (0..n).map(|k| shifted.q[k] - base.q[k]).collect();
        let dbar = (0..n).map(|k| k as f64 * (shifted.pbar[k] - base.pbar[k])).collect();
        Ok(Self {
            alpha,
            d,
            eps,
            base,
            shifted,
            dp,
            dq,
            dbar,
            eta: 1.0 + beta + ad,
            p_inf,
            r: (1.0 + beta + eps) / ad,
        })
    }

    pub fn beta(&self) -> f64 {
        self.base.beta
    }

    /// `-(d-k) dp_k + dbar_k + dq_k`.
    pub fn delta_residual(&self, k: usize) -> f64 {
        -((self.d as usize - k) as f64) * self.dp[k] + self.dbar[k] + self.dq[k]
    }

    /// `eps alpha d / ((eta + eps) eta)`, equal to `dq_0`.
    pub fn dq0_closed(&self) -> f64 {
        let ad = self.alpha * self.d as f64;
        self.eps * ad / ((self.eta + self.eps) * self.eta)
    }

    /// Uniform upper bound on `dbar_k`.
    pub fn dbar_bound(&self) -> f64 {
        let ad = self.alpha * self.d as f64;
        self.eps * ad * ad / (4.0 * (self.eta + self.eps) * self.eta)
    }

    /// The backstep window and the visited-child deficit window of the
    /// coupled partition do not overlap.
    pub fn windows_disjoint(&self) -> bool {
        self.dq[0] + self.dbar_bound() < 1.0 - self.shifted.q[0]
    }

    /// Up-step probability of the driving walk, `1 - q_0(beta+eps)`.
    pub fn y_up(&self) -> f64 {
        1.0 - self.shifted.q[0]
    }

    /// Lower bound on the probability of a single-backstep block with
    /// positive discrepancy, in its sharper form `(1-q_0)^3 dq_0`.
    pub fn single_backstep_gain_sharp(&self) -> f64 {
        (1.0 - self.shifted.q[0]).powi(3) * self.dq[0]
    }

    /// `eps / (alpha d (r+1)^5)`.
    pub fn single_backstep_gain_bound(&self) -> f64 {
        self.eps / (self.alpha * self.d as f64 * (self.r + 1.0).powi(5))
    }

    /// Upper bound on the probability of decoupling in a block with `k` backsteps.
    pub fn decoupling_bound(&self, k: u32) -> f64 {
        let r = self.r;
        self.eps / (3.0 * (1.0 - r)) * k as f64 * (6.75 * r / (r + 1.0)).powi(k as i32)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ThresholdVariant {
    Base,
    Improved,
}

/// The function whose value below 1 certifies monotonicity at ratio `r`.
pub fn f_threshold(r: f64, variant: ThresholdVariant) -> Result<f64> {
    if !(r > 0.0 && r < 4.0 / 23.0) {
        return Err(invalid(format!("r must lie in (0, 4/23), got {r}")));
    }
    let common = (1.0 + r).powi(6) / ((1.0 - r) * (1.0 - 23.0 * r / 4.0).powi(3));
    Ok(match variant {
        ThresholdVariant::Base => r * 243.0 / 2.0 * common,
        ThresholdVariant::Improved => r * r * 2187.0 / 16.0 * common,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(u0: f64, u1: f64) -> WalkParams {
        WalkParams::new(u0, u1).unwrap()
    }

    #[test]
    fn phi_small_cases() {
        let half = MadPathParams::new(0.5, 0.3).unwrap();
        assert!((phi(half, 0, 1).unwrap() - 0.3).abs() < 1e-15);
        let hh = MadPathParams::new(0.5, 0.5).unwrap();
        assert!((phi(hh, 0, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(phi(hh, 2, 2).is_err());
        let lop = MadPathParams::new(2.0 / 3.0, 0.5).unwrap();
        assert!((phi(lop, 0, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn psi_small_cases() {
        assert!((psi(wp(1.0, 1.0), 1).unwrap() - 0.5).abs() < 1e-15);
        let u0 = 0.7;
        let want = u0 / (u0 + 1.0) * (2.0 * u0) / (2.0 * u0 + 1.0);
        assert!((psi(wp(u0, 1.0), 2).unwrap() - want).abs() < 1e-15);
        assert!(psi(wp(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn psi_continuity_at_unit_u1() {
        for n in [1, 3, 10, 40] {
            let unit = psi(wp(0.8, 1.0), n).unwrap();
            for u1 in [1.0 + 1e-8, 1.0 - 1e-8] {
                let general: f64 = (0..n).map(|j| psi_factor(0.8, u1, j, false)).product();
                assert!((general - unit).abs() < 1e-6, "n={n} u1={u1}");
            }
        }
    }

    #[test]
    fn psi_limits() {
        // transient, u1 > 1: converges to a positive limit
        let t = wp(1.0, 2.0);
        let (a, b) = (psi(t, 40).unwrap(), psi(t, 60).unwrap());
        assert!(b > 0.0 && (a - b) / a < 1e-6);
        // recurrent: psi d^n vanishes
        let r = wp(0.3, 0.6);
        assert!(psi(r, 60).unwrap() * 2f64.powi(60) < 1e-3);
    }

    #[test]
    fn phase_examples() {
        assert_eq!(phase(wp(1.0, 1.0), 2.0), PhaseVerdict { phase: Phase::Transient, margin: 1.0 });
        let m = phase(WalkParams::multiplicative(0.6, 1.0).unwrap(), 2.0);
        assert_eq!(m.phase, Phase::Recurrent);
        assert_eq!(phase(wp(0.5, 0.5), 2.0).phase, Phase::Critical);
    }

    #[test]
    fn speeds() {
        use Reinforcement::*;
        assert!((speed_z(Multiplicative, 3.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((speed_z(Multiplicative, 3.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(speed_z(Additive, 1.0, 2.5).unwrap(), 0.0);
        assert!(speed_z(Additive, 0.5, 0.0).is_err());
        let m = WalkParams::multiplicative(3.0, 1.0).unwrap();
        assert!((mad_path_speed(m) - 1.0 / 3.0).abs() < 1e-15);
        assert!((mad_path_speed(wp(3.0, 3.0)) - 0.5).abs() < 1e-15);
        assert_eq!(mad_path_speed(wp(2.0, 0.9)), 0.0);
    }

    #[test]
    fn coupling_probs_basics() {
        let c = CouplingProbs::new(1.0, 2, 0.0, 0.5).unwrap();
        assert!((c.base.q[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.base.p[0] - 1.0 / 3.0).abs() < 1e-15);
        let c = CouplingProbs::new(15.0, 10, 0.05, 0.01).unwrap();
        assert_eq!(c.base.q[10], c.shifted.q[10]);
        assert_eq!(c.base.p[10], 0.0);
        for k in 0..=10 {
            assert!(c.base.total_residual(k).abs() < 1e-14);
            assert!(c.shifted.total_residual(k).abs() < 1e-14);
            assert!(c.delta_residual(k).abs() < 1e-14);
            assert!(c.dp[k] >= 0.0 && c.dq[k] >= 0.0 && c.dbar[k] >= 0.0);
            assert!(c.dq[k] <= c.dq[0] && c.dbar[k] <= c.dbar_bound());
        }
        assert!((c.dq[0] - c.dq0_closed()).abs() < 1e-15);
        assert!(CouplingProbs::new(0.5, 2, 0.0, 0.1).is_err());
    }

    #[test]
    fn thresholds() {
        use ThresholdVariant::*;
        assert!(f_threshold(1.0 / 150.0, Base).unwrap() < 1.0);
        assert!(f_threshold(1.0 / 22.0, Improved).unwrap() < 1.0);
        assert!(f_threshold(0.2, Base).is_err());
    }
}
