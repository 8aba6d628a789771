//! Linearized transport along the curve: Γ operators, stable-fiber
//! tangents, spectra, asymptotic-phase decay and small divisors.

use std::f64::consts::PI;
use std::fmt::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use super::CurveState;
use crate::error::{Error, Result};
use crate::linalg::to_faer;

/// Finite-difference scheme for the discrete tangent `v′_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difference {
    /// `q (v_{i+1} - v_i)`, the weights of the phase condition.
    Forward,
    /// `q (v_{i+1} - v_{i-1}) / 2`.
    Central,
}

/// Derivative of the curve samples with respect to `φ/2π`.
pub fn discrete_tangent(v: &[Vector2<f64>], scheme: Difference) -> Vec<Vector2<f64>> {
    let q = v.len();
    let qf = q as f64;
    (0..q)
        .map(|i| match scheme {
            Difference::Forward => (v[(i + 1) % q] - v[i]) * qf,
            Difference::Central => (v[(i + 1) % q] - v[(i + q - 1) % q]) * (qf / 2.0),
        })
        .collect()
}

/// `σ`: `(σx)_i = x_{i-p}` on `q` blocks of size one.
pub fn rotation_permutation(q: usize, p_rot: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(q, q);
    for i in 0..q {
        s[(i, (i + q - p_rot % q) % q)] = 1.0;
    }
    s
}

/// `diag(V_{i-p}) (σ ⊗ I₂)`, so that `Γ_ρ` is this matrix minus the identity.
pub fn gamma_rho_matrix(cs: &CurveState) -> DMatrix<f64> {
    let q = cs.q;
    let v = cs.jacobians();
    let sigma = rotation_permutation(q, cs.p_rot);
    let mut g = DMatrix::zeros(2 * q, 2 * q);
    for i in 0..q {
        let j = (0..q).find(|&j| sigma[(i, j)] == 1.0).expect("permutation row");
        g.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&v[j]);
    }
    g
}

fn stack(v: &[Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|x| [x[0], x[1]]))
}

/// `max_i |Γ_ρ v′|_i` for the chosen tangent scheme.
pub fn gamma_rho_defect(cs: &CurveState, scheme: Difference) -> f64 {
    let t = stack(&discrete_tangent(&cs.v, scheme));
    let r = gamma_rho_matrix(cs) * &t - &t;
    r.as_slice().chunks(2).map(|c| c[0].hypot(c[1])).fold(0.0, f64::max)
}

/// Fiber tangents `q_φ,i` with `q_φ,iᵀ v′_i = 1`.
#[derive(Clone, Debug)]
pub struct FiberData {
    pub scheme: Difference,
    pub tangent: Vec<Vector2<f64>>,
    pub q_phi: Vec<RowVector2<f64>>,
    /// Transport steps used by the slowest mesh point.
    pub steps: usize,
}

impl FiberData {
    /// `q_tr,i = I - v′_i q_φ,iᵀ`.
    pub fn transverse(&self, i: usize) -> Matrix2<f64> {
        Matrix2::identity() - self.tangent[i] * self.q_phi[i]
    }

    /// `q_tg,i = v′_i q_φ,iᵀ`.
    pub fn tangential(&self, i: usize) -> Matrix2<f64> {
        self.tangent[i] * self.q_phi[i]
    }
}

/// Limit of `v′ᵀ_{i+kp} V_{i+(k-1)p}⋯V_i / ‖v′_{i+kp}‖²`, renormalized at
/// each step to `q_φᵀ v′_i = 1`, until successive iterates differ by less
/// than `1e-10`.
pub fn q_phi_limit(cs: &CurveState, k_max: usize, scheme: Difference) -> Result<FiberData> {
    let q = cs.q;
    let v = cs.jacobians();
    let t = discrete_tangent(&cs.v, scheme);
    let mut q_phi = Vec::with_capacity(q);
    let mut steps = 0;
    for i in 0..q {
        let mut prod = Matrix2::identity();
        let mut j = i;
        let mut prev: Option<RowVector2<f64>> = None;
        let mut done = false;
        for k in 1..=k_max {
            prod = v[j] * prod;
            j = (j + cs.p_rot) % q;
            let row = t[j].transpose() * prod / t[j].norm_squared();
            let scale = row.dot(&t[i].transpose());
            if scale.abs() < f64::EPSILON {
                return Err(Error::Invalid(format!("fiber limit at mesh point {i} is tangent-free")));
            }
            let row = row / scale;
            // Keep the product bounded; the direction is all that matters.
            prod /= prod.norm();
            if let Some(p) = prev {
                if (row - p).amax() < 1e-10 {
                    q_phi.push(row);
                    steps = steps.max(k);
                    done = true;
                    break;
                }
            }
            prev = Some(row);
        }
        if !done {
            return Err(Error::NoConvergence(format!("fiber limit at mesh point {i} after {k_max} steps")));
        }
    }
    Ok(FiberData {
        scheme,
        tangent: t,
        q_phi,
        steps,
    })
}

/// Fiber tangents from the adjoint of the map blocks: `λ_map,{i-p}` scaled
/// to `·v′_i = 1`.
pub fn q_phi_from_adjoint(cs: &CurveState, scheme: Difference) -> Vec<RowVector2<f64>> {
    let q = cs.q;
    let t = discrete_tangent(&cs.v, scheme);
    (0..q)
        .map(|i| {
            let l = cs.lam_map[(i + q - cs.p_rot % q) % q].transpose();
            l / l.dot(&t[i].transpose())
        })
        .collect()
}

/// Largest relative difference between two fiber-tangent fields.
pub fn fiber_mismatch(a: &[RowVector2<f64>], b: &[RowVector2<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm() / y.norm())
        .fold(0.0, f64::max)
}

/// Largest `|λ_map,iᵀ V_i - λ_map,{i-p}ᵀ|`.
pub fn adjoint_shift_residual(cs: &CurveState) -> f64 {
    let q = cs.q;
    let v = cs.jacobians();
    (0..q)
        .map(|i| (cs.lam_map[i].transpose() * v[i] - cs.lam_map[(i + q - cs.p_rot % q) % q].transpose()).norm())
        .fold(0.0, f64::max)
}

/// `diag(V_{i-p} q_tr,{i-p}) (σ ⊗ I₂)`, so that `Γ̂_ρ` is this matrix minus
/// the identity.
pub fn gamma_hat_matrix(cs: &CurveState, fiber: &FiberData) -> DMatrix<f64> {
    let q = cs.q;
    let v = cs.jacobians();
    let mut g = DMatrix::zeros(2 * q, 2 * q);
    for i in 0..q {
        let j = (i + q - cs.p_rot % q) % q;
        g.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&(v[j] * fiber.transverse(j)));
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumMode {
    Radius,
    Full,
}

/// Spectral radius of `Γ̂_ρ + I`, i.e. `max |1 + z|` over its spectrum.
///
/// `(Γ̂_ρ + I)^q` is block diagonal with blocks similar to the 2×2 product
/// around one rotation cycle, so the power iteration runs in windows of `q`
/// steps and the radius is the `q`-th root of the window growth.
pub fn gamma_hat_radius(cs: &CurveState, fiber: &FiberData, max_windows: usize) -> Result<f64> {
    let q = cs.q;
    let v = cs.jacobians();
    let step = |x: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
        (0..q)
            .map(|i| {
                let j = (i + q - cs.p_rot % q) % q;
                v[j] * fiber.transverse(j) * x[j]
            })
            .collect()
    };
    let norm = |x: &[Vector2<f64>]| x.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    let mut x: Vec<Vector2<f64>> = (0..q)
        .map(|i| {
            let a = 1.0 + i as f64 / q as f64;
            Vector2::new(a.cos(), a.sin())
        })
        .collect();
    let mut prev = f64::NAN;
    for _ in 0..max_windows {
        let mut log_growth = 0.0;
        for _ in 0..q {
            x = step(&x);
            let n = norm(&x);
            if n == 0.0 {
                return Ok(0.0);
            }
            log_growth += n.ln();
            x.iter_mut().for_each(|y| *y /= n);
        }
        let r = (log_growth / q as f64).exp();
        if (r - prev).abs() < 1e-12 * r.max(1e-300) {
            return Ok(r);
        }
        prev = r;
    }
    Err(Error::NoConvergence(format!(
        "power iteration stagnated after {max_windows} windows of {q} steps"
    )))
}

/// All eigenvalues `(re, im)` of a square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let ev = to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::NoConvergence(format!("eigenvalues: {e:?}")))?;
    Ok(ev.into_iter().map(|z| (z.re, z.im)).collect())
}

/// Spectral data of `Γ_ρ` and `Γ̂_ρ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub mode: SpectrumMode,
    /// `max |1 + z|` over the spectrum of `Γ̂_ρ`.
    pub radius: f64,
    /// Eigenvalues `z` of `Γ_ρ` (full mode only).
    pub gamma: Vec<(f64, f64)>,
    /// Eigenvalues `z` of `Γ̂_ρ` (full mode only).
    pub gamma_hat: Vec<(f64, f64)>,
}

pub fn gamma_hat_spectrum(cs: &CurveState, fiber: &FiberData, mode: SpectrumMode) -> Result<Spectrum> {
    let radius = gamma_hat_radius(cs, fiber, 200)?;
    let (gamma, gamma_hat) = match mode {
        SpectrumMode::Radius => (vec![], vec![]),
        SpectrumMode::Full => {
            let shift = |ev: Vec<(f64, f64)>| ev.into_iter().map(|(re, im)| (re - 1.0, im)).collect();
            (
                shift(eigenvalues(&gamma_rho_matrix(cs))?),
                shift(eigenvalues(&gamma_hat_matrix(cs, fiber))?),
            )
        }
    };
    Ok(Spectrum {
        mode,
        radius,
        gamma,
        gamma_hat,
    })
}

/// Eigenvalues of the product of the 2×2 blocks around one rotation cycle.
pub fn cycle_multipliers(blocks: impl Fn(usize) -> Matrix2<f64>, q: usize, p_rot: usize) -> [(f64, f64); 2] {
    let mut prod = Matrix2::identity();
    let mut j = 0;
    for _ in 0..q {
        prod = blocks(j) * prod;
        j = (j + p_rot) % q;
    }
    let tr = prod.trace();
    let det = prod.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(tr / 2.0 + s, 0.0), (tr / 2.0 - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(tr / 2.0, s), (tr / 2.0, -s)]
    }
}

/// Gap norms `|M^k(v_{i0} + δ0) - M^k(v_{i0} + v′ q_φᵀ δ0)|` for
/// `k = 0..=k_max`.
pub fn phase_decay_experiment(
    cs: &CurveState,
    fiber: &FiberData,
    i0: usize,
    delta0: Vector2<f64>,
    k_max: usize,
) -> Vec<f64> {
    let base = cs.v[i0 % cs.q];
    let mut a = base + delta0;
    let mut b = base + fiber.tangent[i0 % cs.q] * (fiber.q_phi[i0 % cs.q] * delta0)[0];
    let mut out = Vec::with_capacity(k_max + 1);
    out.push((a - b).norm());
    for _ in 0..k_max {
        a = cs.map.eval(&a, cs.r2, cs.b);
        b = cs.map.eval(&b, cs.r2, cs.b);
        out.push((a - b).norm());
    }
    out
}

/// `n` perturbations of size `radius` equally spaced in direction.
pub fn perturbation_ring(n: usize, radius: f64) -> Vec<Vector2<f64>> {
    (0..n)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / n as f64;
            Vector2::new(a.cos(), a.sin()) * radius
        })
        .collect()
}

/// Decay curves for every perturbation, computed concurrently.
pub fn phase_decay_ring(cs: &CurveState, fiber: &FiberData, i0: usize, deltas: &[Vector2<f64>], k_max: usize) -> Vec<Vec<f64>> {
    std::thread::scope(|s| {
        let hs: Vec<_> = deltas
            .iter()
            .map(|d| s.spawn(move || phase_decay_experiment(cs, fiber, i0, *d, k_max)))
            .collect();
        hs.into_iter().map(|h| h.join().expect("decay worker panicked")).collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divisor {
    pub k: usize,
    pub value: f64,
    /// Smallest divisor over `1..=k`.
    pub running_min: f64,
    pub new_min: bool,
}

/// `|1 - e^{-2πikρ}| = 2|sin(πkρ)|` for `k = 1..=k_max`.
pub fn small_divisor_diagnostic(rho: f64, k_max: usize) -> Vec<Divisor> {
    let mut best = f64::INFINITY;
    (1..=k_max)
        .map(|k| {
            let value = 2.0 * (PI * k as f64 * rho).sin().abs();
            let new_min = value < best;
            best = best.min(value);
            Divisor {
                k,
                value,
                running_min: best,
                new_min,
            }
        })
        .collect()
}

fn save(path: &Path, text: String) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `phi,v1,v2,qphi1,qphi2` per mesh point.
pub fn write_curve_csv(path: &Path, cs: &CurveState, fiber: &FiberData) -> Result<()> {
    let mut w = String::new();
    writeln!(w, "phi,v1,v2,qphi1,qphi2").expect("write to string");
    for i in 0..cs.q {
        let phi = 2.0 * PI * i as f64 / cs.q as f64;
        let (v, f) = (cs.v[i], fiber.q_phi[i]);
        writeln!(w, "{phi:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", v[0], v[1], f[0], f[1]).expect("write to string");
    }
    save(path, w)
}

/// `operator,re,im` rows; the radius alone in radius mode.
pub fn write_spectrum_csv(path: &Path, sp: &Spectrum) -> Result<()> {
    let mut w = String::new();
    match sp.mode {
        SpectrumMode::Radius => {
            writeln!(w, "quantity,value").expect("write to string");
            writeln!(w, "max_abs_1_plus_z,{:.17e}", sp.radius).expect("write to string");
        }
        SpectrumMode::Full => {
            writeln!(w, "operator,re,im").expect("write to string");
            for (name, ev) in [("gamma", &sp.gamma), ("gamma_hat", &sp.gamma_hat)] {
                for (re, im) in ev {
                    writeln!(w, "{name},{re:.17e},{im:.17e}").expect("write to string");
                }
            }
        }
    }
    save(path, w)
}

/// `k` followed by one gap column per initial condition.
pub fn write_decay_csv(path: &Path, curves: &[Vec<f64>]) -> Result<()> {
    let mut w = String::new();
    let header: Vec<String> = (1..=curves.len()).map(|j| format!("ic{j}")).collect();
    writeln!(w, "k,{}", header.join(",")).expect("write to string");
    let n = curves.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..n {
        let row: Vec<String> = curves
            .iter()
            .map(|c| c.get(k).map_or(String::new(), |g| format!("{g:.17e}")))
            .collect();
        writeln!(w, "{k},{}", row.join(",")).expect("write to string");
    }
    save(path, w)
}
