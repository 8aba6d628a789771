//! Factorizations used by the corrector and the diagnostics.
//!
//! Global Jacobians are `faer` matrices; block Jacobians stay in `nalgebra`.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Par};
use faer::Mat;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

pub fn inf_norm(a: &Mat<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vec_norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Systems at least this large are factored by sparse LU.
pub const SPARSE_MIN_DIM: usize = 400;

struct SparseFactor {
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
}

impl SparseFactor {
    /// Supernodal factorization: exact zero pivots yield non-finite factors
    /// instead of aborting.
    fn new(m: &SparseColMat<usize, f64>) -> Result<Self> {
        let params = LuSymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let symbolic = factorize_symbolic_lu(m.symbolic(), params).map_err(|e| Error::Invalid(format!("sparse LU: {e:?}")))?;
        let mut numeric = NumericLu::new();
        let par = Par::Seq;
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_lu_scratch::<f64>(par, Default::default()));
        symbolic
            .factorize_numeric_lu(&mut numeric, m.as_ref(), par, MemStack::new(&mut buf), Default::default())
            .map_err(|_| Error::Singular { ratio: 0.0 })?;
        Ok(SparseFactor { symbolic, numeric })
    }

    fn solve(&self, rhs: &mut Mat<f64>, transpose: bool) {
        let par = Par::Seq;
        // SAFETY: `numeric` was produced from `symbolic` in `new`.
        let lu = unsafe { LuRef::new_unchecked(&self.symbolic, &self.numeric) };
        if transpose {
            let mut buf = MemBuffer::new(self.symbolic.solve_transpose_in_place_scratch::<f64>(rhs.ncols(), par));
            lu.solve_transpose_in_place_with_conj(Conj::No, rhs.as_mut(), par, MemStack::new(&mut buf));
        } else {
            let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), par));
            lu.solve_in_place_with_conj(Conj::No, rhs.as_mut(), par, MemStack::new(&mut buf));
        }
    }
}

enum Factor {
    Dense(PartialPivLu<f64>),
    Sparse(SparseFactor),
}

/// LU with partial pivoting plus a singularity test. Small systems use the
/// dense pivot ratio; large ones a condition lower bound from one solve.
pub struct Lu {
    factor: Factor,
    n: usize,
    ratio: f64,
    update: Option<RowUpdate>,
}

/// `A = B + e_r wᵀ` solved through the factors of `B`.
struct RowUpdate {
    row: usize,
    w: Vec<f64>,
    /// `B⁻¹ e_r`.
    z: Vec<f64>,
    /// `1 + wᵀ B⁻¹ e_r`.
    den: f64,
}

impl Lu {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dim("LU (square matrix)", a.nrows(), a.ncols()));
        }
        if a.nrows() >= SPARSE_MIN_DIM {
            Self::sparse(a)
        } else {
            Self::dense(a)
        }
    }

    fn dense(a: &Mat<f64>) -> Result<Self> {
        let n = a.nrows();
        let scale = inf_norm(a);
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let ratio = if scale > 0.0 { min_pivot / scale } else { 0.0 };
        if !(ratio >= SINGULAR_RTOL) {
            return Err(Error::Singular { ratio });
        }
        Ok(Lu {
            factor: Factor::Dense(lu),
            n,
            ratio,
            update: None,
        })
    }

    fn sparse(a: &Mat<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut entries = Vec::new();
        let mut row_sums = vec![0.0; n];
        for j in 0..n {
            for (i, &v) in a.col_as_slice(j).iter().enumerate() {
                if v != 0.0 {
                    entries.push(Triplet::new(i, j, v));
                    row_sums[i] += v.abs();
                }
            }
        }
        let scale = row_sums.iter().copied().fold(0.0, f64::max);
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::Invalid(format!("sparse assembly: {e:?}")))?;
        let mut lu = Lu {
            factor: Factor::Sparse(SparseFactor::new(&m)?),
            n,
            ratio: 0.0,
            update: None,
        };
        let b: Vec<f64> = (0..n).map(|i| (1.0 + i as f64 * 0.618_033_988_749_895).sin()).collect();
        let x = lu.solve(&b);
        let xn = vec_norm_inf(&x);
        let ratio = if xn.is_finite() && scale > 0.0 { vec_norm_inf(&b) / (scale * xn) } else { 0.0 };
        if !(ratio >= SINGULAR_RTOL) {
            return Err(Error::Singular { ratio });
        }
        lu.ratio = ratio;
        Ok(lu)
    }

    /// Reciprocal condition indicator: the smallest |U_ii| relative to the
    /// infinity norm for dense factors, `‖b‖/(‖A‖‖x‖)` for sparse ones.
    pub fn pivot_ratio(&self) -> f64 {
        self.ratio
    }

    /// Turns the factorization of `B` into one of `B + e_row wᵀ`
    /// (Sherman–Morrison). Keeps a dense row out of a sparse factorization.
    pub fn with_row_update(mut self, row: usize, w: Vec<f64>) -> Result<Self> {
        if row >= self.n || w.len() != self.n {
            return Err(Error::dim("row update", self.n, w.len()));
        }
        let mut e = vec![0.0; self.n];
        e[row] = 1.0;
        let z = self.solve(&e);
        let den = 1.0 + dot(&w, &z);
        let ratio = den.abs() / (1.0 + vec_norm2(&w) * vec_norm2(&z));
        if !(ratio >= SINGULAR_RTOL) {
            return Err(Error::Singular { ratio });
        }
        self.ratio = self.ratio.min(ratio);
        self.update = Some(RowUpdate { row, w, z, den });
        Ok(self)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.solve_base(b);
        if let Some(u) = &self.update {
            let c = dot(&u.w, &y) / u.den;
            y.iter_mut().zip(&u.z).for_each(|(v, z)| *v -= c * z);
        }
        y
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.solve_transpose_base(b);
        if let Some(u) = &self.update {
            let z = self.solve_transpose_base(&u.w);
            let c = y[u.row] / (1.0 + z[u.row]);
            y.iter_mut().zip(&z).for_each(|(v, z)| *v -= c * z);
        }
        y
    }

    fn solve_base(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = column(b, self.n);
        match &self.factor {
            Factor::Dense(lu) => lu.solve_in_place(&mut rhs),
            Factor::Sparse(lu) => lu.solve(&mut rhs, false),
        }
        rhs.col_as_slice(0).to_vec()
    }

    fn solve_transpose_base(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = column(b, self.n);
        match &self.factor {
            Factor::Dense(lu) => lu.solve_transpose_in_place(&mut rhs),
            Factor::Sparse(lu) => lu.solve(&mut rhs, true),
        }
        rhs.col_as_slice(0).to_vec()
    }
}

fn column(b: &[f64], n: usize) -> Mat<f64> {
    assert_eq!(b.len(), n, "right-hand side length");
    Mat::from_fn(n, 1, |i, _| b[i])
}

/// Unit vector spanning the kernel of an `(n-1) x n` matrix, via QR of its
/// transpose. Returns the last column of the full Q factor.
pub fn kernel_vector(a: &Mat<f64>) -> Result<Vec<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    if m + 1 != n {
        return Err(Error::dim("kernel (rows + 1 = columns)", n, m + 1));
    }
    let at = a.transpose().to_owned();
    let qr = at.qr();
    let r = qr.R();
    let scale = inf_norm(a).max(f64::MIN_POSITIVE);
    let min_diag = (0..m).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if m > 0 && min_diag < SINGULAR_RTOL * scale {
        return Err(Error::Singular {
            ratio: min_diag / scale,
        });
    }
    let q = qr.compute_Q();
    Ok((0..n).map(|i| q[(i, n - 1)]).collect())
}

pub fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn to_nalgebra(a: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}
