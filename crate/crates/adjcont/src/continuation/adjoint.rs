use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::problem::{Param, Point, Problem};

/// Solves the adjoint conditions at `point` for λ and every complementary
/// parameter not listed in `selection`, which fixes the listed ones.
pub fn solve_adjoint_direct(prob: &Problem, point: &Point, selection: &[(&str, f64)]) -> Result<Point> {
    if !prob.has_adjoint() {
        return Err(Error::Invalid("problem has no adjoint conditions".into()));
    }
    let mut fixed = vec![None; prob.n_adj() - prob.n_lambda()];
    for (label, v) in selection {
        match prob.param(label)? {
            Param::Eta(j) => fixed[j] = Some(*v),
            Param::Mu(_) => return Err(Error::Invalid(format!("`{label}` is not a complementary parameter"))),
        }
    }
    let free: Vec<String> = prob
        .eta_labels()
        .into_iter()
        .zip(&fixed)
        .filter(|(_, f)| f.is_none())
        .map(|(l, _)| l)
        .collect();
    let layout = prob.layout(&free)?;
    let mut p = point.clone();
    let nl = prob.n_lambda();
    p.lam_eta.iter_mut().for_each(|v| *v = 0.0);
    for (j, f) in fixed.iter().enumerate() {
        if let Some(v) = f {
            p.lam_eta[nl + j] = *v;
        }
    }
    let r = prob.residual(&p)?;
    let a0 = prob.zero_rows() + prob.n_mu();
    let rhs: Vec<f64> = r[a0..].iter().map(|v| -v).collect();
    let cols: Vec<usize> = layout.adj_col.iter().flatten().copied().collect();
    if cols.len() != rhs.len() {
        return Err(Error::dim("adjoint unknowns", rhs.len(), cols.len()));
    }
    let j = prob.jacobian(&p, &layout)?;
    let a = faer::Mat::from_fn(rhs.len(), cols.len(), |i, k| j[(a0 + i, cols[k])]);
    drop(j);
    let y = Lu::new(&a)?.solve(&rhs);
    for (k, c) in layout.adj_col.iter().enumerate() {
        if let Some(c) = c {
            let pos = cols.iter().position(|x| x == c).expect("listed column");
            p.lam_eta[k] = y[pos];
        }
    }
    Ok(p)
}
