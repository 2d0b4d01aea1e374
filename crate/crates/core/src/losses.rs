//! Classification losses, their Fenchel conjugates and the dual objective
//! `−c Σᵢ ℓ*(−αᵢ/c)`.
//!
//! Hinge and squared hinge are margin losses (non-increasing in the margin).
//! Logistic and exponential are usually quoted as `log(1 + eˣ)` and `eˣ`,
//! which increase in `x`; [`SignConvention`] selects between that literal
//! form and the margin form `log(1 + e⁻ˣ)`, `e⁻ˣ`. The two conjugates are
//! reflections of each other, `ℓ*_margin(s) = ℓ*_literal(−s)`.
//!
//! The logistic conjugate is implemented in its standard binary-entropy
//! form `s·log(s) + (1 − s)·log(1 − s)`. A frequently reproduced variant
//! reads `s·log(s) + (1 − s)·log(s)`, which is not the conjugate of
//! `log(1 + eˣ)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Hinge,
    SquaredHinge,
    Logistic,
    Exponential,
}

/// Orientation of the logistic and exponential losses. Ignored by hinge
/// and squared hinge, which are always margin losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SignConvention {
    /// `ℓ(x) = log(1 + e⁻ˣ)` / `e⁻ˣ`: non-increasing, usable in the dual.
    #[default]
    Margin,
    /// `ℓ(x) = log(1 + eˣ)` / `eˣ` exactly as usually printed. Its conjugate is
    /// infinite at every `−α/c < 0`, so the only feasible dual point is `α = 0`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LossSpec {
    pub kind: LossKind,
    pub convention: SignConvention,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::hinge()
    }
}

/// A real number or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::PosInfinity)
    }
}

/// Closed interval with a possibly infinite upper end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, convention: SignConvention) -> Self {
        LossSpec { kind, convention }
    }

    pub fn hinge() -> Self {
        LossSpec::new(LossKind::Hinge, SignConvention::Margin)
    }

    pub fn squared_hinge() -> Self {
        LossSpec::new(LossKind::SquaredHinge, SignConvention::Margin)
    }

    pub fn logistic() -> Self {
        LossSpec::new(LossKind::Logistic, SignConvention::Margin)
    }

    pub fn exponential() -> Self {
        LossSpec::new(LossKind::Exponential, SignConvention::Margin)
    }

    fn reflected(&self) -> bool {
        matches!(self.kind, LossKind::Logistic | LossKind::Exponential) && self.convention == SignConvention::Margin
    }

    /// `ℓ(x)`.
    pub fn loss(&self, x: f64) -> f64 {
        let x = if self.reflected() { -x } else { x };
        match self.kind {
            LossKind::Hinge => (1.0 - x).max(0.0),
            LossKind::SquaredHinge => (1.0 - x).max(0.0).powi(2),
            // log(1 + eˣ) without overflow
            LossKind::Logistic => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            LossKind::Exponential => x.exp(),
        }
    }

    /// `ℓ′(x)`; for hinge, the right derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        let (sign, x) = if self.reflected() { (-1.0, -x) } else { (1.0, x) };
        sign * match self.kind {
            LossKind::Hinge => {
                if x < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::SquaredHinge => -2.0 * (1.0 - x).max(0.0),
            LossKind::Logistic => 1.0 / (1.0 + (-x).exp()),
            LossKind::Exponential => x.exp(),
        }
    }

    /// `ℓ*(s) = sup_x { x·s − ℓ(x) }`.
    pub fn conjugate(&self, xstar: f64) -> ExtendedReal {
        let s = if self.reflected() { -xstar } else { xstar };
        let value = match self.kind {
            LossKind::Hinge if (-1.0..=0.0).contains(&s) => Some(s),
            LossKind::SquaredHinge if s <= 0.0 => Some(s + s * s / 4.0),
            LossKind::Logistic if (0.0..=1.0).contains(&s) => Some(xlogx(s) + xlogx(1.0 - s)),
            LossKind::Exponential if s >= 0.0 => Some(xlogx(s) - s),
            _ => None,
        };
        match value {
            Some(v) if xstar.is_finite() => ExtendedReal::Finite(v),
            _ => ExtendedReal::PosInfinity,
        }
    }

    /// Domain of `ℓ*`.
    pub fn conjugate_domain(&self) -> Interval {
        let (lo, hi) = match self.kind {
            LossKind::Hinge => (-1.0, 0.0),
            LossKind::SquaredHinge => (f64::NEG_INFINITY, 0.0),
            LossKind::Logistic => (0.0, 1.0),
            LossKind::Exponential => (0.0, f64::INFINITY),
        };
        if self.reflected() {
            Interval { lo: -hi, hi: -lo }
        } else {
            Interval { lo, hi }
        }
    }

    /// Values of a single `αᵢ` for which `ℓ*(−αᵢ/c)` is finite, intersected
    /// with `αᵢ ≥ 0`.
    pub fn feasible_interval(&self, c: f64) -> Interval {
        let dom = self.conjugate_domain();
        // −α/c ∈ [lo, hi]  ⇔  α ∈ [−c·hi, −c·lo]
        let lo = (-c * dom.hi).max(0.0);
        let hi = -c * dom.lo;
        if hi < lo {
            Interval { lo: 0.0, hi: 0.0 }
        } else {
            Interval { lo, hi }
        }
    }

    /// The per-coordinate dual term `t(α) = −c·ℓ*(−α/c)`; `None` outside the
    /// conjugate domain.
    pub fn dual_term(&self, alpha: f64, c: f64) -> Option<f64> {
        if self.kind == LossKind::Hinge && self.convention == SignConvention::Margin {
            // −c·(−α/c) rounds; the term is exactly α on [0, c]
            return (0.0..=c).contains(&alpha).then_some(alpha);
        }
        if alpha == 0.0 {
            // ℓ*(0) is finite for every kind; skip the −0.0 reflection
            return self.conjugate(0.0).finite().map(|v| -c * v);
        }
        self.conjugate(-alpha / c).finite().map(|v| -c * v)
    }

    /// First and second derivative of `t(α)` in the interior of its domain.
    pub fn dual_term_derivatives(&self, alpha: f64, c: f64) -> (f64, f64) {
        match (self.kind, self.convention) {
            (LossKind::Hinge, _) => (1.0, 0.0),
            (LossKind::SquaredHinge, _) => (1.0 - alpha / (2.0 * c), -1.0 / (2.0 * c)),
            (LossKind::Logistic, SignConvention::Margin) => {
                let s = alpha / c;
                ((1.0 - s).ln() - s.ln(), -1.0 / (c * s * (1.0 - s)))
            }
            (LossKind::Exponential, SignConvention::Margin) => (-(alpha / c).ln(), -1.0 / alpha),
            // the literal forms only admit α = 0
            (_, SignConvention::Literal) => (0.0, 0.0),
        }
    }

    /// Upper limit beyond which `t(α)` is non-increasing. Bounds the
    /// search on coordinates whose feasible interval is unbounded.
    pub fn search_cap(&self, c: f64) -> f64 {
        let interval = self.feasible_interval(c);
        let peak = match self.kind {
            LossKind::Hinge | LossKind::Logistic | LossKind::Exponential => c,
            LossKind::SquaredHinge => 2.0 * c,
        };
        interval.hi.min(peak.max(interval.lo))
    }

    /// True when `t(α)` is non-decreasing over the whole feasible interval,
    /// so the largest feasible `α` maximizes it.
    pub fn is_monotone_dual_term(&self) -> bool {
        self.kind == LossKind::Hinge
    }

    pub fn tag(&self) -> u32 {
        let kind = match self.kind {
            LossKind::Hinge => 0,
            LossKind::SquaredHinge => 1,
            LossKind::Logistic => 2,
            LossKind::Exponential => 3,
        };
        let literal = u32::from(self.convention == SignConvention::Literal);
        kind | (literal << 8)
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        let kind = match tag & 0xff {
            0 => LossKind::Hinge,
            1 => LossKind::SquaredHinge,
            2 => LossKind::Logistic,
            3 => LossKind::Exponential,
            _ => return None,
        };
        let convention = match tag >> 8 {
            0 => SignConvention::Margin,
            1 => SignConvention::Literal,
            _ => return None,
        };
        Some(LossSpec { kind, convention })
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            LossKind::Hinge => "hinge",
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::Logistic => "logistic",
            LossKind::Exponential => "exponential",
        };
        let reflectable = matches!(self.kind, LossKind::Logistic | LossKind::Exponential);
        if self.convention == SignConvention::Literal && reflectable {
            write!(f, "{name}-literal")
        } else {
            f.write_str(name)
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, convention) = match s.strip_suffix("-literal") {
            Some(base) => (base, SignConvention::Literal),
            None => (s, SignConvention::Margin),
        };
        let kind = match base {
            "hinge" => LossKind::Hinge,
            "squared-hinge" | "squared_hinge" => LossKind::SquaredHinge,
            "logistic" => LossKind::Logistic,
            "exponential" => LossKind::Exponential,
            other => return Err(Error::invalid(format!("unknown loss '{other}'"))),
        };
        Ok(LossSpec { kind, convention })
    }
}

/// `−c Σᵢ ℓ*(−αᵢ/c)`.
pub fn dual_objective(spec: &LossSpec, alpha: &[f64], c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    let interval = spec.feasible_interval(c);
    alpha.iter().enumerate().try_fold(0.0, |acc, (index, &a)| {
        if !interval.contains(a) {
            return Err(Error::InfeasibleDual { index, value: a });
        }
        spec.dual_term(a, c)
            .map(|t| acc + t)
            .ok_or(Error::InfeasibleDual { index, value: a })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_specs() -> Vec<LossSpec> {
        let mut specs = vec![LossSpec::hinge(), LossSpec::squared_hinge()];
        for kind in [LossKind::Logistic, LossKind::Exponential] {
            specs.push(LossSpec::new(kind, SignConvention::Margin));
            specs.push(LossSpec::new(kind, SignConvention::Literal));
        }
        specs
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(LossSpec::hinge().conjugate(-0.5), ExtendedReal::Finite(-0.5));
        assert_eq!(LossSpec::squared_hinge().conjugate(-2.0), ExtendedReal::Finite(-1.0));
        let e = LossSpec::new(LossKind::Exponential, SignConvention::Literal);
        assert_eq!(e.conjugate(1.0), ExtendedReal::Finite(-1.0));
        assert_eq!(e.conjugate(0.0), ExtendedReal::Finite(0.0));
    }

    #[test]
    fn conjugate_outside_domain_is_infinite() {
        assert!(LossSpec::hinge().conjugate(0.1).is_infinite());
        assert!(LossSpec::hinge().conjugate(-1.1).is_infinite());
        assert!(LossSpec::squared_hinge().conjugate(0.5).is_infinite());
        assert!(LossSpec::new(LossKind::Logistic, SignConvention::Literal)
            .conjugate(1.5)
            .is_infinite());
        assert!(LossSpec::exponential().conjugate(0.5).is_infinite());
    }

    #[test]
    fn dual_objective_examples() {
        let h = LossSpec::hinge();
        assert!((dual_objective(&h, &[0.2, 0.3], 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(dual_objective(&h, &[0.0, 0.0, 0.0], 2.0).unwrap(), 0.0);
        assert!(matches!(
            dual_objective(&h, &[0.5, 1.5], 1.0),
            Err(Error::InfeasibleDual { index: 1, .. })
        ));
        // α = 0 gives −c·n·ℓ*(0) for every kind
        for spec in all_specs() {
            let at_zero = spec.conjugate(0.0).finite().unwrap();
            let v = dual_objective(&spec, &[0.0; 4], 1.5).unwrap();
            assert!((v + 1.5 * 4.0 * at_zero).abs() < 1e-15);
        }
    }

    #[test]
    fn feasible_intervals() {
        assert_eq!(LossSpec::hinge().feasible_interval(2.0), Interval { lo: 0.0, hi: 2.0 });
        assert_eq!(
            LossSpec::logistic().feasible_interval(1.0),
            Interval { lo: 0.0, hi: 1.0 }
        );
        assert_eq!(
            LossSpec::squared_hinge().feasible_interval(1.0),
            Interval {
                lo: 0.0,
                hi: f64::INFINITY
            }
        );
        assert_eq!(
            LossSpec::exponential().feasible_interval(3.0),
            Interval {
                lo: 0.0,
                hi: f64::INFINITY
            }
        );
        let literal = LossSpec::new(LossKind::Logistic, SignConvention::Literal);
        assert_eq!(literal.feasible_interval(1.0), Interval { lo: 0.0, hi: 0.0 });
    }

    #[test]
    fn fenchel_young_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in all_specs() {
            let dom = spec.conjugate_domain();
            for _ in 0..200 {
                let x = rng.random_range(-6.0..6.0);
                let lo = dom.lo.max(-8.0);
                let hi = dom.hi.min(8.0);
                let s = rng.random_range(lo..=hi);
                let conj = spec.conjugate(s).finite().expect("in-domain");
                assert!(spec.loss(x) + conj >= x * s - 1e-10, "{spec}: x={x} s={s}");
            }
        }
    }

    #[test]
    fn conjugate_matches_grid_supremum() {
        // brute-force sup_x { x·s − ℓ(x) } on a fine grid
        let grid: Vec<f64> = (-60_000..=60_000).map(|k| k as f64 * 5e-4).collect();
        for spec in all_specs() {
            // points inside the literal-orientation domain
            let samples: Vec<f64> = match spec.kind {
                LossKind::Hinge => vec![-1.0, -0.7, -0.25, 0.0],
                LossKind::SquaredHinge => vec![-6.0, -2.0, -0.5, 0.0],
                LossKind::Logistic => vec![0.02, 0.3, 0.5, 0.9, 0.98],
                LossKind::Exponential => vec![0.0, 0.1, 1.0, 5.0, 40.0],
            };
            for raw in samples {
                let s = if spec.reflected() { -raw } else { raw };
                assert!(spec.conjugate_domain().contains(s));
                let brute = grid
                    .iter()
                    .map(|&x| x * s - spec.loss(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                let exact = spec.conjugate(s).finite().unwrap();
                assert!((brute - exact).abs() < 1e-4, "{spec} s={s}: {brute} vs {exact}");
            }
        }
    }

    #[test]
    fn hinge_objective_is_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let c = rng.random_range(0.1..5.0);
            let alpha: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..=c)).collect();
            let v = dual_objective(&LossSpec::hinge(), &alpha, c).unwrap();
            assert_eq!(v, alpha.iter().map(|a| c * (a / c)).sum::<f64>());
        }
    }

    #[test]
    fn hinge_term_non_decreasing() {
        let c = 1.7;
        let h = LossSpec::hinge();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let t = h.dual_term(c * k as f64 / 100.0, c).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn dual_terms_concave() {
        for spec in [
            LossSpec::hinge(),
            LossSpec::squared_hinge(),
            LossSpec::logistic(),
            LossSpec::exponential(),
        ] {
            let c = 1.3;
            let hi = spec.search_cap(c) * 1.5;
            let hi = hi.min(spec.feasible_interval(c).hi);
            let pts: Vec<f64> = (0..=60).map(|k| hi * k as f64 / 60.0).collect();
            for w in pts.windows(3) {
                let (a, b, d) = (
                    spec.dual_term(w[0], c).unwrap(),
                    spec.dual_term(w[1], c).unwrap(),
                    spec.dual_term(w[2], c).unwrap(),
                );
                assert!(b >= 0.5 * (a + d) - 1e-12, "{spec}");
            }
        }
    }

    #[test]
    fn dual_term_derivative_matches_finite_difference() {
        let c = 1.4;
        for spec in [LossSpec::squared_hinge(), LossSpec::logistic(), LossSpec::exponential()] {
            for &a in &[0.2, 0.7, 1.1] {
                let h = 1e-6;
                let fd = (spec.dual_term(a + h, c).unwrap() - spec.dual_term(a - h, c).unwrap()) / (2.0 * h);
                let (d1, _) = spec.dual_term_derivatives(a, c);
                assert!((fd - d1).abs() < 1e-6, "{spec} at {a}: {fd} vs {d1}");
            }
        }
    }

    #[test]
    fn parse_and_tag_round_trip() {
        for spec in all_specs() {
            let parsed: LossSpec = spec.to_string().parse().unwrap();
            assert_eq!(parsed, spec);
            assert_eq!(LossSpec::from_tag(spec.tag()), Some(spec));
        }
        assert!("quadratic".parse::<LossSpec>().is_err());
    }
}
