//! Log-barrier Newton polish of a greedy dual solution.
//!
//! Coordinate ascent can stall at points where no single multiplier can
//! move without leaving the spectral constraint, even though a joint move
//! would still improve the objective. The barrier problem
//!
//! ```text
//! maximize  t·Σ t(u) + Σ_b log det(I − S_b(u)) + Σ log(u − lo) + Σ log(hi − u)
//! ```
//!
//! is smooth and concave on the interior of the feasible set, and its
//! maximizer is within `ν/t` of the dual optimum, `ν` being the total
//! barrier parameter. Intended for small problems: every pair kernel is
//! held in memory.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Coordinate, DualCoefficients, Engine, Labels};
use crate::error::{Error, Result};
use crate::kernels::lambda_max;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    /// Stop once the barrier bound `ν/t` drops below this.
    pub gap_tol: f64,
    pub initial_t: f64,
    /// Factor by which `t` grows between centering steps.
    pub growth: f64,
    /// Newton iterations allowed per centering step.
    pub max_newton_steps: usize,
    /// Refuse problems whose pair kernels hold more entries than this.
    pub max_kernel_entries: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            gap_tol: 1e-8,
            initial_t: 1.0,
            growth: 10.0,
            max_newton_steps: 100,
            max_kernel_entries: 50_000_000,
        }
    }
}

impl RefineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) || !(self.initial_t > 0.0) || !(self.growth > 1.0) {
            return Err(Error::invalid(
                "refinement needs gap_tol > 0, initial_t > 0 and growth > 1",
            ));
        }
        if self.max_newton_steps == 0 {
            return Err(Error::invalid("refinement needs at least one Newton step"));
        }
        Ok(())
    }
}

struct Barrier<'e, 'a> {
    engine: &'e Engine<'a>,
    coords: Vec<Coordinate>,
    /// `(block, coefficient)` pairs: `β_{block,i}` moves by `coefficient·u`.
    entries: Vec<Vec<(usize, f64)>>,
    kernels: Vec<Vec<Arc<DMatrix<f64>>>>,
    lo: f64,
    hi: f64,
    nu: f64,
}

/// Quantities at one interior point.
struct State {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'e, 'a> Barrier<'e, 'a> {
    fn new(engine: &'e Engine<'a>) -> Result<Self> {
        let n = engine.bank.len();
        let mut coords = Vec::new();
        for i in 0..n {
            coords.extend(engine.coordinates_of(i));
        }
        let entries = coords
            .iter()
            .map(|c| match (engine.labels, c.class) {
                (Labels::Binary(y), _) => vec![(0, y[c.sample])],
                (Labels::Multiclass { labels, .. }, Some(k)) => {
                    vec![(k, -1.0), (labels[c.sample], 1.0)]
                }
                (Labels::Multiclass { .. }, None) => unreachable!(),
            })
            .collect();
        let kernels = (0..n)
            .map(|i| (0..n).map(|j| engine.bank.pair(i, j)).collect())
            .collect();
        let interval = engine.loss.feasible_interval(engine.c);
        let blocks = engine.labels.blocks();
        let p = engine.bank.patch_count();
        let sides = if interval.hi.is_finite() { 2.0 } else { 1.0 };
        Ok(Barrier {
            engine,
            entries,
            kernels,
            lo: interval.lo,
            hi: interval.hi,
            nu: (blocks * p) as f64 + sides * coords.len() as f64,
            coords,
        })
    }

    fn beta(&self, u: &DVector<f64>) -> Vec<Vec<f64>> {
        let n = self.engine.bank.len();
        let mut beta = vec![vec![0.0; n]; self.engine.labels.blocks()];
        for (c, coord) in self.coords.iter().enumerate() {
            for &(b, coef) in &self.entries[c] {
                beta[b][coord.sample] += coef * u[c];
            }
        }
        beta
    }

    /// `N_{b,i} = Σ_l β_{b,l} K(xᵢ,x_l)` for every block and sample.
    fn partial_sums(&self, beta: &[Vec<f64>]) -> Vec<Vec<DMatrix<f64>>> {
        let p = self.engine.bank.patch_count();
        beta.iter()
            .map(|coef| {
                self.kernels
                    .iter()
                    .map(|row| {
                        let mut m = DMatrix::zeros(p, p);
                        for (l, k) in row.iter().enumerate() {
                            if coef[l] != 0.0 {
                                m += &**k * coef[l];
                            }
                        }
                        m
                    })
                    .collect()
            })
            .collect()
    }

    fn in_box(&self, u: &DVector<f64>) -> bool {
        u.iter().all(|&v| v > self.lo && v < self.hi)
    }

    /// `(I − S_b)⁻¹` and `log det(I − S_b)` per block, or `None` outside the
    /// spectral constraint.
    fn slack_inverses(&self, sums: &[Vec<DMatrix<f64>>], beta: &[Vec<f64>]) -> Option<Vec<(DMatrix<f64>, f64)>> {
        let p = self.engine.bank.patch_count();
        let mut out = Vec::with_capacity(beta.len());
        for (coef, partial) in beta.iter().zip(sums) {
            let mut s = DMatrix::zeros(p, p);
            for (i, n_i) in partial.iter().enumerate() {
                if coef[i] != 0.0 {
                    s += n_i * coef[i];
                }
            }
            let slack = DMatrix::identity(p, p) - (&s + s.transpose()) * 0.5;
            let chol = slack.cholesky()?;
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if !logdet.is_finite() {
                return None;
            }
            out.push((chol.inverse(), logdet));
        }
        Some(out)
    }

    fn term_sum(&self, u: &DVector<f64>) -> f64 {
        u.iter()
            .map(|&v| {
                self.engine
                    .loss
                    .dual_term(v, self.engine.c)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .sum()
    }

    fn box_value(&self, u: &DVector<f64>) -> f64 {
        u.iter()
            .map(|&v| {
                let upper = if self.hi.is_finite() { (self.hi - v).ln() } else { 0.0 };
                (v - self.lo).ln() + upper
            })
            .sum()
    }

    /// Barrier value only; `None` outside the interior.
    fn value(&self, u: &DVector<f64>, t: f64) -> Option<f64> {
        if !self.in_box(u) {
            return None;
        }
        let beta = self.beta(u);
        let sums = self.partial_sums(&beta);
        let inv = self.slack_inverses(&sums, &beta)?;
        let logdet: f64 = inv.iter().map(|(_, l)| l).sum();
        Some(t * self.term_sum(u) + logdet + self.box_value(u))
    }

    fn state(&self, u: &DVector<f64>, t: f64) -> Option<State> {
        if !self.in_box(u) {
            return None;
        }
        let beta = self.beta(u);
        let sums = self.partial_sums(&beta);
        let inv = self.slack_inverses(&sums, &beta)?;
        let n = self.engine.bank.len();
        let m = self.coords.len();

        // D_{b,i} = N_{b,i} + N_{b,i}ᵀ and W_b D_{b,i} W_b
        let d: Vec<Vec<DMatrix<f64>>> = sums
            .iter()
            .map(|row| row.iter().map(|nm| nm + nm.transpose()).collect())
            .collect();
        let wdw: Vec<Vec<DMatrix<f64>>> = d
            .iter()
            .zip(&inv)
            .map(|(row, (w, _))| row.iter().map(|di| w * di * w).collect())
            .collect();
        let trace_wd: Vec<Vec<f64>> = d
            .iter()
            .zip(&inv)
            .map(|(row, (w, _))| row.iter().map(|di| w.dot(di)).collect())
            .collect();

        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        let c = self.engine.c;
        for (a, coord) in self.coords.iter().enumerate() {
            let v = u[a];
            let (d1, d2) = self.engine.loss.dual_term_derivatives(v, c);
            grad[a] += t * d1 + 1.0 / (v - self.lo);
            hess[(a, a)] += t * d2 - 1.0 / (v - self.lo).powi(2);
            if self.hi.is_finite() {
                grad[a] -= 1.0 / (self.hi - v);
                hess[(a, a)] -= 1.0 / (self.hi - v).powi(2);
            }
            for &(b, coef) in &self.entries[a] {
                grad[a] -= coef * trace_wd[b][coord.sample];
            }
        }
        for a in 0..m {
            let i = self.coords[a].sample;
            for bidx in a..m {
                let j = self.coords[bidx].sample;
                let mut h = 0.0;
                for &(b, ca) in &self.entries[a] {
                    for &(b2, cb) in &self.entries[bidx] {
                        if b != b2 {
                            continue;
                        }
                        let w = &inv[b].0;
                        let second = 2.0 * w.dot(&*self.kernels[i][j]);
                        let cross = wdw[b][i].dot(&d[b][j]);
                        h -= ca * cb * (second + cross);
                    }
                }
                hess[(a, bidx)] += h;
                if a != bidx {
                    hess[(bidx, a)] += h;
                }
            }
        }
        let logdet: f64 = inv.iter().map(|(_, l)| l).sum();
        debug_assert_eq!(n, self.kernels.len());
        Some(State {
            value: t * self.term_sum(u) + logdet + self.box_value(u),
            grad,
            hess,
        })
    }

    fn max_lambda(&self, u: &DVector<f64>) -> Result<f64> {
        let beta = self.beta(u);
        let sums = self.partial_sums(&beta);
        let p = self.engine.bank.patch_count();
        let mut top = 0.0f64;
        for (coef, partial) in beta.iter().zip(&sums) {
            let mut s = DMatrix::zeros(p, p);
            for (i, n_i) in partial.iter().enumerate() {
                s += n_i * coef[i];
            }
            top = top.max(lambda_max(&s)?);
        }
        Ok(top)
    }

    /// Maximizes the barrier objective for fixed `t` from an interior point.
    fn center(&self, mut u: DVector<f64>, t: f64, steps: usize) -> Result<DVector<f64>> {
        for _ in 0..steps {
            let st = self
                .state(&u, t)
                .ok_or_else(|| Error::Numerical("barrier iterate left the interior".into()))?;
            let neg = -&st.hess;
            let dir = match neg.clone().cholesky() {
                Some(ch) => ch.solve(&st.grad),
                None => neg
                    .lu()
                    .solve(&st.grad)
                    .ok_or_else(|| Error::Numerical("singular barrier Hessian".into()))?,
            };
            let decrement = st.grad.dot(&dir);
            if !decrement.is_finite() {
                return Err(Error::Numerical("non-finite Newton decrement".into()));
            }
            if decrement / 2.0 <= 1e-10 {
                break;
            }
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &u + &dir * s;
                if let Some(v) = self.value(&trial, t) {
                    if v >= st.value + 0.25 * s * decrement {
                        u = trial;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(u)
    }
}

/// Runs the barrier method from the engine's current multipliers. The
/// result replaces them only when it improves the dual objective.
pub(super) fn polish(engine: &mut Engine<'_>, opts: &RefineOptions) -> Result<bool> {
    let n = engine.bank.len();
    let p = engine.bank.patch_count();
    if n * n * p * p > opts.max_kernel_entries {
        return Err(Error::invalid(format!(
            "refinement needs {} kernel entries, limit is {}",
            n * n * p * p,
            opts.max_kernel_entries
        )));
    }
    let interval = engine.loss.feasible_interval(engine.c);
    if interval.hi <= interval.lo {
        return Ok(false);
    }
    if interval.lo != 0.0 {
        return Err(Error::invalid("refinement assumes multipliers bounded below by zero"));
    }
    let barrier = Barrier::new(engine)?;
    let cap = engine.loss.search_cap(engine.c);
    let start: Vec<f64> = barrier
        .coords
        .iter()
        .map(|&c| 0.9 * engine.value(c).min(cap) + 0.05 * cap)
        .collect();
    let mut u = DVector::from_vec(start);
    let lam = barrier.max_lambda(&u)?;
    if lam > 0.9 {
        u *= (0.9 / lam).sqrt() * 0.999;
    }
    if barrier.value(&u, opts.initial_t).is_none() {
        return Err(Error::InfeasibleStart {
            lambda_max: barrier.max_lambda(&u)?,
        });
    }

    let mut t = opts.initial_t;
    loop {
        u = barrier.center(u, t, opts.max_newton_steps)?;
        if barrier.nu / t < opts.gap_tol {
            break;
        }
        t *= opts.growth;
    }

    let polished = barrier.term_sum(&u);
    let greedy = engine.objective;
    if polished <= greedy {
        log::debug!("barrier polish {polished} did not beat greedy {greedy}");
        return Ok(true);
    }
    let coords = barrier.coords.clone();
    for (a, coord) in coords.into_iter().enumerate() {
        engine.set_value(coord, u[a]);
    }
    // set_value tracks β incrementally; rebuild both from α to drop drift
    engine.beta = super::folded_coefficients(&engine.alpha, engine.labels)?;
    engine.rebuild_blocks()?;
    debug_assert!(matches!(
        (&engine.alpha, engine.labels),
        (DualCoefficients::Binary(_), Labels::Binary(_)) | (DualCoefficients::Multiclass(_), Labels::Multiclass { .. })
    ));
    Ok(true)
}
