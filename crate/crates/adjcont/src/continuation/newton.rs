use faer::Mat;
use serde::{Deserialize, Serialize};

use super::Settings;
use crate::error::{Error, Result};
use crate::linalg::{dot, vec_norm2, vec_norm_inf, Lu, SPARSE_MIN_DIM};
use crate::problem::{Layout, Point, Problem};

/// One row of the corrector log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    pub it: usize,
    /// Number of damping trials for this step.
    pub sit: usize,
    pub gamma: f64,
    pub norm_d: f64,
    pub norm_f: f64,
    pub norm_u: f64,
}

/// Extra scalar equation that closes an underdetermined system.
#[derive(Clone, Debug)]
pub enum Closure {
    None,
    /// `tᵀ(x - x0) = 0`.
    Plane { t: Vec<f64>, x0: Vec<f64> },
    /// `x[col] = value`.
    Fix { col: usize, value: f64 },
}

/// The residual of a problem restricted to the free columns of a layout.
pub struct System<'a> {
    pub prob: &'a Problem,
    pub layout: &'a Layout,
    pub base: &'a Point,
}

impl<'a> System<'a> {
    pub fn new(prob: &'a Problem, layout: &'a Layout, base: &'a Point) -> Self {
        System { prob, layout, base }
    }

    pub fn point(&self, x: &[f64]) -> Point {
        self.layout.unpack(x, self.base)
    }

    pub fn n(&self) -> usize {
        self.layout.ncols
    }

    /// Dimension of the solution manifold without closure rows.
    pub fn manifold_dim(&self) -> isize {
        self.layout.ncols as isize - self.prob.residual_dim() as isize
    }

    pub fn residual(&self, x: &[f64], cl: &Closure) -> Result<Vec<f64>> {
        let mut f = self.prob.residual(&self.point(x))?;
        match cl {
            Closure::None => {}
            Closure::Plane { t, x0 } => {
                f.push(t.iter().zip(x.iter().zip(x0)).map(|(t, (a, b))| t * (a - b)).sum())
            }
            Closure::Fix { col, value } => f.push(x[*col] - value),
        }
        Ok(f)
    }

    pub fn jacobian(&self, x: &[f64], cl: &Closure) -> Result<Mat<f64>> {
        let m = self.prob.residual_dim();
        let extra = usize::from(!matches!(cl, Closure::None));
        let mut j = Mat::zeros(m + extra, self.n());
        self.prob.jacobian_into(&self.point(x), self.layout, &mut j)?;
        match cl {
            Closure::None => {}
            Closure::Plane { t, .. } => {
                for (c, v) in t.iter().enumerate() {
                    j[(m, c)] = *v;
                }
            }
            Closure::Fix { col, .. } => j[(m, *col)] = 1.0,
        }
        Ok(j)
    }

    /// LU of the closed Jacobian. For large systems a plane closure enters
    /// as a rank-one update of the sparse row `e_kᵀ`, `k = argmax |t_k|`.
    pub fn factor(&self, x: &[f64], cl: &Closure) -> Result<Lu> {
        match cl {
            Closure::Plane { t, .. } if self.n() >= SPARSE_MIN_DIM => {
                let k = (0..t.len()).max_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs())).unwrap_or(0);
                let j = self.jacobian(x, &Closure::Fix { col: k, value: 0.0 })?;
                let mut w = t.clone();
                w[k] -= 1.0;
                Lu::new(&j)?.with_row_update(self.n() - 1, w)
            }
            _ => Lu::new(&self.jacobian(x, cl)?),
        }
    }

    /// ‖(u, λ, η)‖₂ at `x`.
    pub fn norm_u(&self, x: &[f64]) -> f64 {
        let p = self.point(x);
        (vec_norm2(&p.u).powi(2) + vec_norm2(&p.lam_eta).powi(2)).sqrt()
    }

    /// Damped Newton iteration. Converged when ‖f‖∞ ≤ TOL and the last
    /// update satisfies ‖d‖ ≤ TOL (or no update was needed).
    pub fn newton(&self, x0: &[f64], cl: &Closure, s: &Settings) -> Result<(Vec<f64>, Vec<NewtonStep>)> {
        let mut x = x0.to_vec();
        let mut f = self.residual(&x, cl)?;
        if f.len() != self.n() {
            return Err(Error::Underdetermined {
                released: self.layout.released.len(),
                dim: self.n() as isize - f.len() as isize + 1,
            });
        }
        let mut log = vec![NewtonStep {
            it: 0,
            sit: 0,
            gamma: 0.0,
            norm_d: 0.0,
            norm_f: vec_norm2(&f),
            norm_u: self.norm_u(&x),
        }];
        if vec_norm_inf(&f) <= s.tol {
            return Ok((x, log));
        }
        for it in 1..=s.max_iter {
            let lu = self.factor(&x, cl)?;
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            let d = lu.solve(&neg);
            let nf = vec_norm2(&f);
            let mut gamma = 1.0;
            let mut sit = 1;
            let (xn, fnew) = loop {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + gamma * b).collect();
                match self.residual(&xt, cl) {
                    Ok(ft) if vec_norm2(&ft) <= (1.0 - gamma / 4.0) * nf => break (xt, ft),
                    _ if gamma > s.gamma_min => {
                        gamma /= 2.0;
                        sit += 1;
                    }
                    Ok(ft) => break (xt, ft),
                    Err(e) => return Err(e),
                }
            };
            x = xn;
            f = fnew;
            let norm_d = gamma * vec_norm2(&d);
            log.push(NewtonStep {
                it,
                sit,
                gamma,
                norm_d,
                norm_f: vec_norm2(&f),
                norm_u: self.norm_u(&x),
            });
            if vec_norm_inf(&f) <= s.tol && norm_d <= s.tol {
                return Ok((x, log));
            }
        }
        Err(Error::MaxIter {
            iterations: s.max_iter,
            residual: vec_norm_inf(&f),
        })
    }

    /// Unit tangent at `x` from the bordered system `[J; cᵀ] t = e_n`.
    pub fn bordered_tangent(&self, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let cl = Closure::Plane {
            t: c.to_vec(),
            x0: x.to_vec(),
        };
        let lu = self.factor(x, &cl)?;
        let mut rhs = vec![0.0; self.n()];
        rhs[self.n() - 1] = 1.0;
        let mut t = lu.solve(&rhs);
        let nt = vec_norm2(&t);
        t.iter_mut().for_each(|v| *v /= nt);
        Ok(t)
    }

    /// Tangent continued from `prev`, oriented along it.
    pub fn next_tangent(&self, x: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.bordered_tangent(x, prev)?;
        if dot(&t, prev) < 0.0 {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(t)
    }

    /// First tangent: border with unit vectors of the released labels in
    /// order, falling back to a QR kernel. Oriented positive along the first
    /// windowed label, else the first label, with a nonzero component.
    pub fn first_tangent(&self, x: &[f64], windowed: &[usize]) -> Result<Vec<f64>> {
        let mut found = None;
        for &c in &self.layout.label_col {
            let mut e = vec![0.0; self.n()];
            e[c] = 1.0;
            if let Ok(t) = self.bordered_tangent(x, &e) {
                found = Some(t);
                break;
            }
        }
        let mut t = match found {
            Some(t) => t,
            None => {
                let j = self.jacobian(x, &Closure::None)?;
                crate::linalg::kernel_vector(&j)?
            }
        };
        let small = 1e-8;
        let pick = windowed
            .iter()
            .chain(&self.layout.label_col)
            .find(|&&c| t[c].abs() > small)
            .copied();
        if let Some(c) = pick {
            if t[c] < 0.0 {
                t.iter_mut().for_each(|v| *v = -*v);
            }
        }
        Ok(t)
    }
}
