//! Two-phase simplex for the small linear programs of decoy estimation.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `minimize c.x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    /// `duals[i]` multiplies constraint `i` in the certificate `c.x >= sum_i duals[i] rhs[i]`:
    /// non-positive on `Le` rows, non-negative on `Ge` rows.
    Optimal {
        x: Vec<f64>,
        value: f64,
        duals: Vec<f64>,
    },
    Infeasible,
    Unbounded,
}

const COST_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

/// Revised simplex state: the basis is refactorized from scratch at every step, so
/// rounding does not accumulate across the long pivot sequences Bland's rule can take.
struct Revised {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Revised {
    fn basis_matrix(&self) -> DMatrix<f64> {
        self.a.select_columns(&self.basis)
    }

    fn primal(&self) -> Option<DVector<f64>> {
        self.basis_matrix().lu().solve(&self.b)
    }

    /// Minimizes `cost.x` letting only columns `< active` enter.
    fn optimize(&mut self, cost: &[f64], active: usize) -> Option<Step> {
        for _ in 0..MAX_PIVOTS {
            let inv = self.basis_matrix().try_inverse()?;
            let x_b = &inv * &self.b;
            let c_b = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| cost[j]));
            let pi = inv.transpose() * c_b;
            let scale = 1.0 + cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let entering = (0..active).find(|&j| !self.basis.contains(&j) && cost[j] - pi.dot(&self.a.column(j)) < -COST_TOL * scale);
            let Some(c) = entering else { return Some(Step::Optimal) };
            let u = &inv * self.a.column(c);
            let umax = u.amax();
            let mut best: Option<(f64, usize, usize)> = None;
            for (r, &ur) in u.iter().enumerate() {
                if ur > PIVOT_TOL * umax {
                    let ratio = x_b[r].max(0.0) / ur;
                    let cand = (ratio, self.basis[r], r);
                    best = match best {
                        None => Some(cand),
                        Some(b) if ratio < b.0 || (ratio == b.0 && cand.1 < b.1) => Some(cand),
                        keep => keep,
                    };
                }
            }
            match best {
                None => return Some(Step::Unbounded),
                Some((_, _, r)) => self.basis[r] = c,
            }
        }
        None
    }
}

impl LinearProgram {
    pub fn solve(&self) -> LpOutcome {
        let n = self.objective.len();
        let m = self.constraints.len();
        // Normalize: scale rows, make right-hand sides non-negative.
        let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::with_capacity(m);
        // Factor taking each normalized row back to the caller's row.
        let mut row_factor: Vec<(usize, f64)> = Vec::with_capacity(m);
        for c in &self.constraints {
            assert_eq!(c.coeffs.len(), n, "constraint width mismatch");
            let scale = c.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let mut a: Vec<f64> = c.coeffs.iter().map(|v| v / scale).collect();
            let mut b = c.rhs / scale;
            let mut s = c.sense;
            let mut sigma = 1.0;
            if b < 0.0 {
                sigma = -1.0;
                a.iter_mut().for_each(|v| *v = -*v);
                b = -b;
                s = match s {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
            }
            row_factor.push((rows.len(), sigma / scale));
            rows.push((a, s, b));
        }
        let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
        let width = n + n_slack + n_art;
        let mut a = DMatrix::zeros(m, width);
        let mut b = DVector::zeros(m);
        let mut basis = Vec::with_capacity(m);
        let (mut si, mut ai) = (n, n + n_slack);
        for (i, (coeffs, s, rhs)) in rows.iter().enumerate() {
            for (j, v) in coeffs.iter().enumerate() {
                a[(i, j)] = *v;
            }
            b[i] = *rhs;
            match s {
                Sense::Le => {
                    a[(i, si)] = 1.0;
                    basis.push(si);
                    si += 1;
                }
                Sense::Ge => {
                    a[(i, si)] = -1.0;
                    si += 1;
                    a[(i, ai)] = 1.0;
                    basis.push(ai);
                    ai += 1;
                }
                Sense::Eq => {
                    a[(i, ai)] = 1.0;
                    basis.push(ai);
                    ai += 1;
                }
            }
        }
        let art_start = n + n_slack;
        let mut lp = Revised { a, b, basis };
        if n_art > 0 {
            let mut cost = vec![0.0; width];
            cost[art_start..].iter_mut().for_each(|c| *c = 1.0);
            if lp.optimize(&cost, width).is_none() {
                return LpOutcome::Infeasible;
            }
            let Some(x_b) = lp.primal() else { return LpOutcome::Infeasible };
            let infeas: f64 = lp.basis.iter().zip(x_b.iter()).filter(|(&j, _)| j >= art_start).map(|(_, v)| v.max(0.0)).sum();
            if infeas > FEAS_TOL {
                return LpOutcome::Infeasible;
            }
            // Swap zero-level artificials out of the basis; drop rows that are redundant.
            let mut r = 0;
            while r < lp.basis.len() {
                if lp.basis[r] < art_start {
                    r += 1;
                    continue;
                }
                let bm = lp.basis_matrix();
                let lu = bm.lu();
                let swap = (0..art_start)
                    .filter(|j| !lp.basis.contains(j))
                    .find(|&j| lu.solve(&lp.a.column(j).into_owned()).is_some_and(|u| u[r].abs() > 1e-9));
                match swap {
                    Some(j) => {
                        lp.basis[r] = j;
                        r += 1;
                    }
                    None => {
                        lp.a = lp.a.clone().remove_row(r);
                        lp.b = lp.b.clone().remove_row(r);
                        lp.basis.remove(r);
                        row_factor.remove(r);
                    }
                }
            }
        }
        let mut cost = vec![0.0; width];
        cost[..n].copy_from_slice(&self.objective);
        match lp.optimize(&cost, art_start) {
            None => LpOutcome::Infeasible,
            Some(Step::Unbounded) => LpOutcome::Unbounded,
            Some(Step::Optimal) => {
                let Some(inv) = lp.basis_matrix().try_inverse() else { return LpOutcome::Infeasible };
                let x_b = &inv * &lp.b;
                let c_b = DVector::from_iterator(lp.basis.len(), lp.basis.iter().map(|&j| cost[j]));
                let pi = inv.transpose() * c_b;
                let mut duals = vec![0.0; m];
                for (&(orig, f), p) in row_factor.iter().zip(pi.iter()) {
                    duals[orig] = p * f;
                }
                let mut x = vec![0.0; n];
                for (&j, v) in lp.basis.iter().zip(x_b.iter()) {
                    if j < n {
                        x[j] = v.max(0.0);
                    }
                }
                let value = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                LpOutcome::Optimal { x, value, duals }
            }
        }
    }
}
