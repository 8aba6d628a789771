//! Staged construction of extended continuation problems.
//!
//! A problem is a list of zero blocks `Φ_b(u[uidx_b]) = 0` and monitor blocks
//! `Ψ_b(u[uidx_b]) - μ_b = 0`. Every block may additionally contribute
//! `(DΦ_b)ᵀ λ_b` or `(DΨ_b)ᵀ η_b` to the adjoint conditions. Adjoint rows are
//! keyed by u-index: row `j` is the variation with respect to `u_j`.
//!
//! ```
//! use adjcont::problem::{Func, ProblemBuilder};
//!
//! let mut b = ProblemBuilder::new();
//! // x^2 + y^2 - 1 = 0 on two fresh variables
//! let circle = Func::new(1, |u: &[f64]| vec![u[0] * u[0] + u[1] * u[1] - 1.0])
//!     .with_jacobian(|u: &[f64]| vec![vec![2.0 * u[0], 2.0 * u[1]]]);
//! let idx = b.add_zero("circle", circle, &[], &[1.0, 0.0]).unwrap();
//! b.add_parameters("pars", &idx, &["x", "y"]).unwrap();
//! b.add_adjoint("circle", Default::default()).unwrap();
//! b.add_adjoint("pars", Default::default()).unwrap();
//! let prob = b.build();
//! assert_eq!(prob.n_u(), 2);
//! assert_eq!(prob.residual_dim(), 1 + 2 + 2);
//! assert!(prob.param("e.x").is_ok());
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use faer::Mat;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type EvalFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Block-local function with an optional analytic Jacobian.
#[derive(Clone)]
pub struct Func {
    dim: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl Func {
    pub fn new<F, R>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> R + Send + Sync + 'static,
        R: Into<Vec<f64>>,
    {
        Func {
            dim,
            eval: Arc::new(move |u| DVector::from_vec(f(u).into())),
            jac: None,
        }
    }

    /// Jacobian given as rows.
    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(move |u| {
            let rows = j(u);
            let m = rows.len();
            let n = rows.first().map_or(0, Vec::len);
            DMatrix::from_fn(m, n, |i, k| rows[i][k])
        }));
        self
    }

    pub fn with_matrix_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(j));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn eval(&self, u: &[f64]) -> DVector<f64> {
        (self.eval)(u)
    }

    /// Analytic Jacobian, or central differences when none was supplied.
    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(u),
            None => self.fd_jacobian(u),
        }
    }

    pub fn fd_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, u.len());
        let mut w = u.to_vec();
        for k in 0..u.len() {
            let h = fd_step(u[k]);
            w[k] = u[k] + h;
            let fp = self.eval(&w);
            w[k] = u[k] - h;
            let fm = self.eval(&w);
            w[k] = u[k];
            out.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        out
    }
}

/// `cbrt(eps) * max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Inactive,
    Active,
}

#[derive(Clone, Debug)]
struct Adjoint {
    /// Target adjoint row for each block variable.
    rows: Vec<usize>,
    /// Offset of this block's adjoint variables inside λ (zero) or η (monitor).
    var_off: usize,
}

#[derive(Clone)]
struct Block {
    name: String,
    func: Func,
    uidx: Vec<usize>,
    n_reused: usize,
    monitor: Option<Monitor>,
    adjoint: Option<Adjoint>,
}

#[derive(Clone)]
struct Monitor {
    labels: Vec<String>,
    kind: Kind,
    mu_off: usize,
}

/// Options for [`ProblemBuilder::add_adjoint`].
#[derive(Clone, Debug, Default)]
pub struct AdjointSpec {
    /// Complementary labels of a monitor block; defaults to `e.<label>`.
    pub labels: Option<Vec<String>>,
    /// Adjoint rows receiving the contributions of reused variables.
    pub aidx: Option<Vec<usize>>,
    /// Initial values of the new adjoint variables.
    pub l0: Option<Vec<f64>>,
}

impl AdjointSpec {
    pub fn labels(mut self, labels: &[&str]) -> Self {
        self.labels = Some(labels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn aidx(mut self, aidx: &[usize]) -> Self {
        self.aidx = Some(aidx.to_vec());
        self
    }

    pub fn l0(mut self, l0: &[f64]) -> Self {
        self.l0 = Some(l0.to_vec());
        self
    }
}

/// A continuation parameter: either a monitor value `μ_i` or a complementary
/// parameter equal to the adjoint variable `η_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Mu(usize),
    Eta(usize),
}

#[derive(Clone, Debug)]
pub struct Event {
    pub name: String,
    pub label: String,
    pub value: f64,
}

/// Values of all problem variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    /// λ for zero blocks followed by η for monitor blocks.
    pub lam_eta: Vec<f64>,
}

#[derive(Default)]
pub struct ProblemBuilder {
    blocks: Vec<Block>,
    names: HashMap<String, usize>,
    labels: HashMap<String, Param>,
    u0: Vec<f64>,
    mu0: Vec<f64>,
    lam0: Vec<f64>,
    eta0: Vec<f64>,
    events: Vec<Event>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_u(&self) -> usize {
        self.u0.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    /// Registers a zero block on `uidx` (reused) followed by fresh variables
    /// initialized from `u0`. Returns the resolved index list.
    pub fn add_zero(&mut self, name: &str, func: Func, uidx: &[usize], u0: &[f64]) -> Result<Vec<usize>> {
        self.add_block(name, func, uidx, u0, None)
    }

    pub fn add_monitor(
        &mut self,
        name: &str,
        func: Func,
        uidx: &[usize],
        labels: &[&str],
        kind: Kind,
    ) -> Result<Vec<usize>> {
        if labels.len() != func.dim() {
            return Err(Error::dim(format!("labels of monitor `{name}`"), func.dim(), labels.len()));
        }
        for (i, l) in labels.iter().enumerate() {
            if self.labels.contains_key(*l) || labels[..i].contains(l) {
                return Err(Error::DuplicateLabel(l.to_string()));
            }
        }
        let monitor = Monitor {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            kind,
            mu_off: self.mu0.len(),
        };
        self.add_block(name, func, uidx, &[], Some(monitor))
    }

    /// Monitors that project onto `u[uidx]`.
    pub fn add_parameters(&mut self, name: &str, uidx: &[usize], labels: &[&str]) -> Result<Vec<usize>> {
        if uidx.is_empty() {
            return Err(Error::Invalid(format!("parameter block `{name}` selects no variables")));
        }
        let n = uidx.len();
        let f = Func::new(n, |u: &[f64]| u.to_vec())
            .with_matrix_jacobian(move |_| DMatrix::identity(n, n));
        self.add_monitor(name, f, uidx, labels, Kind::Inactive)
    }

    /// Zero block `u[uidx1] - u[uidx2]`.
    pub fn add_glue(&mut self, name: &str, uidx1: &[usize], uidx2: &[usize]) -> Result<Vec<usize>> {
        if uidx1.len() != uidx2.len() {
            return Err(Error::dim(format!("glue `{name}`"), uidx1.len(), uidx2.len()));
        }
        if uidx1 == uidx2 {
            log::warn!("glue `{name}` joins identical indices; its residual vanishes identically");
        }
        let n = uidx1.len();
        let f = Func::new(n, move |u: &[f64]| (0..n).map(|i| u[i] - u[n + i]).collect::<Vec<_>>())
            .with_matrix_jacobian(move |_| {
                let mut j = DMatrix::zeros(n, 2 * n);
                for i in 0..n {
                    j[(i, i)] = 1.0;
                    j[(i, n + i)] = -1.0;
                }
                j
            });
        let idx: Vec<usize> = uidx1.iter().chain(uidx2).copied().collect();
        self.add_block(name, f, &idx, &[], None)
    }

    fn add_block(
        &mut self,
        name: &str,
        func: Func,
        uidx: &[usize],
        u0: &[f64],
        monitor: Option<Monitor>,
    ) -> Result<Vec<usize>> {
        if self.names.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let n = self.u0.len();
        if let Some(&bad) = uidx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let mut idx = uidx.to_vec();
        idx.extend(n..n + u0.len());
        let mut local: Vec<f64> = uidx.iter().map(|&i| self.u0[i]).collect();
        local.extend_from_slice(u0);
        let f = func.eval(&local);
        if f.len() != func.dim() {
            return Err(Error::dim(format!("output of block `{name}`"), func.dim(), f.len()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(name.to_string()));
        }
        self.u0.extend_from_slice(u0);
        if let Some(m) = &monitor {
            for (i, l) in m.labels.iter().enumerate() {
                self.labels.insert(l.clone(), Param::Mu(m.mu_off + i));
            }
            self.mu0.extend(f.iter());
        }
        self.names.insert(name.to_string(), self.blocks.len());
        self.blocks.push(Block {
            name: name.to_string(),
            func,
            uidx: idx.clone(),
            n_reused: uidx.len(),
            monitor,
            adjoint: None,
        });
        Ok(idx)
    }

    /// Appends the adjoint contribution of block `name`. Returns the adjoint
    /// rows that receive it, in the block's variable order.
    pub fn add_adjoint(&mut self, name: &str, spec: AdjointSpec) -> Result<Vec<usize>> {
        let &bi = self.names.get(name).ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        let n_u = self.u0.len();
        let block = &self.blocks[bi];
        if block.adjoint.is_some() {
            return Err(Error::AdjointExists(name.to_string()));
        }
        let dim = block.func.dim();
        let reused = &block.uidx[..block.n_reused];
        let mut rows = match &spec.aidx {
            Some(a) if a.len() != reused.len() => {
                return Err(Error::dim(format!("aidx of `{name}`"), reused.len(), a.len()))
            }
            Some(a) => a.clone(),
            None => reused.to_vec(),
        };
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_u) {
            return Err(Error::IndexOutOfRange { index: bad, len: n_u });
        }
        rows.extend_from_slice(&block.uidx[block.n_reused..]);
        let l0 = match spec.l0 {
            Some(l) if l.len() != dim => return Err(Error::dim(format!("l0 of `{name}`"), dim, l.len())),
            Some(l) => l,
            None => vec![0.0; dim],
        };
        let var_off;
        if let Some(m) = &block.monitor {
            let labels = spec
                .labels
                .unwrap_or_else(|| m.labels.iter().map(|l| format!("e.{l}")).collect());
            if labels.len() != dim {
                return Err(Error::dim(format!("complementary labels of `{name}`"), dim, labels.len()));
            }
            for (i, l) in labels.iter().enumerate() {
                if self.labels.contains_key(l) || labels[..i].contains(l) {
                    return Err(Error::DuplicateLabel(l.clone()));
                }
            }
            var_off = self.eta0.len();
            for (i, l) in labels.into_iter().enumerate() {
                self.labels.insert(l, Param::Eta(var_off + i));
            }
            self.eta0.extend(l0);
        } else {
            var_off = self.lam0.len();
            self.lam0.extend(l0);
        }
        self.blocks[bi].adjoint = Some(Adjoint {
            rows: rows.clone(),
            var_off,
        });
        Ok(rows)
    }

    /// Declares a named point where `label` crosses `value`.
    pub fn add_event(&mut self, name: &str, label: &str, value: f64) -> Result<()> {
        if !self.labels.contains_key(label) {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        self.events.push(Event {
            name: name.to_string(),
            label: label.to_string(),
            value,
        });
        Ok(())
    }

    pub fn uidx(&self, name: &str) -> Result<Vec<usize>> {
        let &bi = self.names.get(name).ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        Ok(self.blocks[bi].uidx.clone())
    }

    pub fn build(self) -> Problem {
        let n_lambda = self.lam0.len();
        let mut lam_eta = self.lam0;
        lam_eta.extend(self.eta0);
        let zero_rows = self
            .blocks
            .iter()
            .filter(|b| b.monitor.is_none())
            .map(|b| b.func.dim())
            .sum();
        let has_adjoint = self.blocks.iter().any(|b| b.adjoint.is_some());
        Problem {
            blocks: self.blocks,
            names: self.names,
            labels: self.labels,
            n_lambda,
            zero_rows,
            has_adjoint,
            init: Point {
                u: self.u0,
                mu: self.mu0,
                lam_eta,
            },
            events: self.events,
        }
    }
}

/// An assembled, immutable extended continuation problem.
#[derive(Clone)]
pub struct Problem {
    blocks: Vec<Block>,
    names: HashMap<String, usize>,
    labels: HashMap<String, Param>,
    n_lambda: usize,
    zero_rows: usize,
    has_adjoint: bool,
    init: Point,
    events: Vec<Event>,
}

/// Column placement of the variables of one continuation run.
///
/// The unknown vector is `[u; released μ; λ; released η]`, with μ and η in
/// their own index order.
#[derive(Clone, Debug)]
pub struct Layout {
    pub n_u: usize,
    pub mu_col: Vec<Option<usize>>,
    pub adj_col: Vec<Option<usize>>,
    pub released: Vec<String>,
    pub label_col: Vec<usize>,
    pub ncols: usize,
}

impl Layout {
    pub fn pack(&self, p: &Point) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        x[..self.n_u].copy_from_slice(&p.u);
        for (i, c) in self.mu_col.iter().enumerate() {
            if let Some(c) = c {
                x[*c] = p.mu[i];
            }
        }
        for (i, c) in self.adj_col.iter().enumerate() {
            if let Some(c) = c {
                x[*c] = p.lam_eta[i];
            }
        }
        x
    }

    /// Overwrites the free entries of `base` with `x`.
    pub fn unpack(&self, x: &[f64], base: &Point) -> Point {
        let mut p = base.clone();
        p.u.copy_from_slice(&x[..self.n_u]);
        for (i, c) in self.mu_col.iter().enumerate() {
            if let Some(c) = c {
                p.mu[i] = x[*c];
            }
        }
        for (i, c) in self.adj_col.iter().enumerate() {
            if let Some(c) = c {
                p.lam_eta[i] = x[*c];
            }
        }
        p
    }
}

impl Problem {
    pub fn n_u(&self) -> usize {
        self.init.u.len()
    }

    pub fn n_mu(&self) -> usize {
        self.init.mu.len()
    }

    pub fn n_lambda(&self) -> usize {
        self.n_lambda
    }

    pub fn n_adj(&self) -> usize {
        self.init.lam_eta.len()
    }

    pub fn has_adjoint(&self) -> bool {
        self.has_adjoint
    }

    pub fn zero_rows(&self) -> usize {
        self.zero_rows
    }

    pub fn adjoint_rows(&self) -> usize {
        if self.has_adjoint {
            self.n_u()
        } else {
            0
        }
    }

    pub fn residual_dim(&self) -> usize {
        self.zero_rows + self.n_mu() + self.adjoint_rows()
    }

    pub fn initial_point(&self) -> &Point {
        &self.init
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    pub fn param(&self, label: &str) -> Result<Param> {
        self.labels
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Labels of monitor parameters, in μ order.
    pub fn mu_labels(&self) -> Vec<String> {
        let mut v = vec![String::new(); self.n_mu()];
        for (k, p) in &self.labels {
            if let Param::Mu(i) = p {
                v[*i] = k.clone();
            }
        }
        v
    }

    /// Labels registered with [`Kind::Active`].
    pub fn active_labels(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter_map(|b| b.monitor.as_ref())
            .filter(|m| m.kind == Kind::Active)
            .flat_map(|m| m.labels.clone())
            .collect()
    }

    /// Complementary labels, in η order.
    pub fn eta_labels(&self) -> Vec<String> {
        let n_eta = self.n_adj() - self.n_lambda;
        let mut v = vec![String::new(); n_eta];
        for (k, p) in &self.labels {
            if let Param::Eta(j) = p {
                v[*j] = k.clone();
            }
        }
        v
    }

    /// Value of a continuation parameter at a point.
    pub fn value(&self, p: &Point, label: &str) -> Result<f64> {
        Ok(match self.param(label)? {
            Param::Mu(i) => p.mu[i],
            Param::Eta(j) => p.lam_eta[self.n_lambda + j],
        })
    }

    pub fn set_value(&self, p: &mut Point, label: &str, v: f64) -> Result<()> {
        match self.param(label)? {
            Param::Mu(i) => p.mu[i] = v,
            Param::Eta(j) => p.lam_eta[self.n_lambda + j] = v,
        }
        Ok(())
    }

    fn block(&self, name: &str) -> Result<&Block> {
        let &bi = self.names.get(name).ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        Ok(&self.blocks[bi])
    }

    pub fn block_uidx(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.block(name)?.uidx.clone())
    }

    /// Indices into `lam_eta` of the adjoint variables owned by a block.
    pub fn block_adjoint_vars(&self, name: &str) -> Result<Vec<usize>> {
        let b = self.block(name)?;
        let a = b
            .adjoint
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("block `{name}` has no adjoint")))?;
        let off = if b.monitor.is_some() {
            self.n_lambda + a.var_off
        } else {
            a.var_off
        };
        Ok((off..off + b.func.dim()).collect())
    }

    /// Adjoint rows a block contributes to.
    pub fn block_adjoint_rows(&self, name: &str) -> Result<Vec<usize>> {
        let b = self.block(name)?;
        b.adjoint
            .as_ref()
            .map(|a| a.rows.clone())
            .ok_or_else(|| Error::Invalid(format!("block `{name}` has no adjoint")))
    }

    /// Evaluates a single block at the global `u`.
    pub fn eval_block(&self, name: &str, u: &[f64]) -> Result<Vec<f64>> {
        let b = self.block(name)?;
        let loc: Vec<f64> = b.uidx.iter().map(|&i| u[i]).collect();
        Ok(b.func.eval(&loc).as_slice().to_vec())
    }

    /// Analytic Jacobian of a block and its central-difference counterpart.
    pub fn block_jacobians(&self, name: &str, u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let b = self.block(name)?;
        let loc: Vec<f64> = b.uidx.iter().map(|&i| u[i]).collect();
        Ok((b.func.jacobian(&loc), b.func.fd_jacobian(&loc)))
    }

    pub fn layout(&self, released: &[String]) -> Result<Layout> {
        let n_u = self.n_u();
        let mut mu_free = vec![false; self.n_mu()];
        let mut eta_free = vec![false; self.n_adj() - self.n_lambda];
        for l in released {
            match self.param(l)? {
                Param::Mu(i) => mu_free[i] = true,
                Param::Eta(j) => eta_free[j] = true,
            }
        }
        let mut col = n_u;
        let mu_col = mu_free
            .iter()
            .map(|&f| {
                f.then(|| {
                    col += 1;
                    col - 1
                })
            })
            .collect();
        let mut adj_col = Vec::with_capacity(self.n_adj());
        for _ in 0..self.n_lambda {
            adj_col.push(Some(col));
            col += 1;
        }
        for &f in &eta_free {
            adj_col.push(f.then(|| {
                col += 1;
                col - 1
            }));
        }
        let mut layout = Layout {
            n_u,
            mu_col,
            adj_col,
            released: released.to_vec(),
            label_col: vec![],
            ncols: col,
        };
        layout.label_col = released
            .iter()
            .map(|l| match self.param(l).expect("checked above") {
                Param::Mu(i) => layout.mu_col[i].expect("released"),
                Param::Eta(j) => layout.adj_col[self.n_lambda + j].expect("released"),
            })
            .collect();
        Ok(layout)
    }

    /// Layout that frees every variable; used for Jacobian checks.
    pub fn full_layout(&self) -> Layout {
        let mut all = self.mu_labels();
        all.extend(self.eta_labels());
        self.layout(&all).expect("own labels")
    }

    /// `[Φ(u); Ψ(u) - μ; (DΦ)ᵀλ + (DΨ)ᵀη]`.
    pub fn residual(&self, p: &Point) -> Result<Vec<f64>> {
        self.check_point(p)?;
        let mut out = vec![0.0; self.residual_dim()];
        let mut zr = 0;
        let mut mr = self.zero_rows;
        let ar = self.zero_rows + self.n_mu();
        let mut loc = Vec::new();
        for b in &self.blocks {
            loc.clear();
            loc.extend(b.uidx.iter().map(|&i| p.u[i]));
            let f = b.func.eval(&loc);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation(b.name.clone()));
            }
            match &b.monitor {
                None => {
                    out[zr..zr + f.len()].copy_from_slice(f.as_slice());
                    zr += f.len();
                }
                Some(m) => {
                    for (k, v) in f.iter().enumerate() {
                        out[mr + k] = v - p.mu[m.mu_off + k];
                    }
                    mr += f.len();
                }
            }
            if let Some(a) = &b.adjoint {
                let v = self.adjoint_slice(b, a, &p.lam_eta);
                if v.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let j = b.func.jacobian(&loc);
                if j.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Evaluation(b.name.clone()));
                }
                let jt = j.tr_mul(&DVector::from_column_slice(v));
                for (c, &row) in a.rows.iter().enumerate() {
                    out[ar + row] += jt[c];
                }
            }
        }
        Ok(out)
    }

    fn adjoint_slice<'a>(&self, b: &Block, a: &Adjoint, lam_eta: &'a [f64]) -> &'a [f64] {
        let off = if b.monitor.is_some() {
            self.n_lambda + a.var_off
        } else {
            a.var_off
        };
        &lam_eta[off..off + b.func.dim()]
    }

    fn check_point(&self, p: &Point) -> Result<()> {
        if p.u.len() != self.n_u() {
            return Err(Error::dim("u", self.n_u(), p.u.len()));
        }
        if p.mu.len() != self.n_mu() {
            return Err(Error::dim("mu", self.n_mu(), p.mu.len()));
        }
        if p.lam_eta.len() != self.n_adj() {
            return Err(Error::dim("lam_eta", self.n_adj(), p.lam_eta.len()));
        }
        Ok(())
    }

    /// Jacobian of [`Problem::residual`] with respect to the free variables of
    /// `layout`, written into the leading rows of `out` (which is zeroed first).
    pub fn jacobian_into(&self, p: &Point, layout: &Layout, out: &mut Mat<f64>) -> Result<()> {
        self.check_point(p)?;
        if out.ncols() != layout.ncols || out.nrows() < self.residual_dim() {
            return Err(Error::dim("Jacobian buffer columns", layout.ncols, out.ncols()));
        }
        out.fill(0.0);
        let mut zr = 0;
        let mut mr = self.zero_rows;
        let ar = self.zero_rows + self.n_mu();
        let mut loc = Vec::new();
        for b in &self.blocks {
            loc.clear();
            loc.extend(b.uidx.iter().map(|&i| p.u[i]));
            let j = b.func.jacobian(&loc);
            if j.iter().any(|x| !x.is_finite()) {
                return Err(Error::Evaluation(b.name.clone()));
            }
            let r0 = match &b.monitor {
                None => {
                    zr += j.nrows();
                    zr - j.nrows()
                }
                Some(m) => {
                    for k in 0..j.nrows() {
                        if let Some(c) = layout.mu_col[m.mu_off + k] {
                            out[(mr + k, c)] = -1.0;
                        }
                    }
                    mr += j.nrows();
                    mr - j.nrows()
                }
            };
            for r in 0..j.nrows() {
                for (k, &ui) in b.uidx.iter().enumerate() {
                    out[(r0 + r, ui)] += j[(r, k)];
                }
            }
            let Some(a) = &b.adjoint else { continue };
            let off = if b.monitor.is_some() {
                self.n_lambda + a.var_off
            } else {
                a.var_off
            };
            for r in 0..j.nrows() {
                if let Some(c) = layout.adj_col[off + r] {
                    for (k, &row) in a.rows.iter().enumerate() {
                        out[(ar + row, c)] += j[(r, k)];
                    }
                }
            }
            let v = DVector::from_column_slice(&p.lam_eta[off..off + j.nrows()]);
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            // Second-derivative terms by central differences of (DΦ_b)ᵀv.
            let h = fd_step(loc.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
            let mut w = loc.clone();
            for k in 0..loc.len() {
                w[k] = loc[k] + h;
                let jp = b.func.jacobian(&w).tr_mul(&v);
                w[k] = loc[k] - h;
                let jm = b.func.jacobian(&w).tr_mul(&v);
                w[k] = loc[k];
                for (c, &row) in a.rows.iter().enumerate() {
                    out[(ar + row, b.uidx[k])] += (jp[c] - jm[c]) / (2.0 * h);
                }
            }
        }
        Ok(())
    }

    pub fn jacobian(&self, p: &Point, layout: &Layout) -> Result<Mat<f64>> {
        let mut out = Mat::zeros(self.residual_dim(), layout.ncols);
        self.jacobian_into(p, layout, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Func {
        Func::new(1, |u: &[f64]| vec![u[0] * u[0] - u[1]])
            .with_jacobian(|u: &[f64]| vec![vec![2.0 * u[0], -1.0]])
    }

    #[test]
    fn empty_builder() {
        let b = ProblemBuilder::new();
        assert_eq!(b.n_u(), 0);
        assert_eq!(b.n_blocks(), 0);
    }

    #[test]
    fn fresh_counts_add_up() {
        let mut b = ProblemBuilder::new();
        b.add_zero("a", quad(), &[], &[1.0, 1.0]).unwrap();
        b.add_zero("b", quad(), &[], &[2.0, 4.0]).unwrap();
        assert_eq!(b.n_u(), 4);
    }

    #[test]
    fn duplicate_names_and_labels() {
        let mut b = ProblemBuilder::new();
        b.add_zero("phi", quad(), &[], &[1.0, 1.0]).unwrap();
        assert!(matches!(b.add_zero("phi", quad(), &[], &[0.0, 0.0]), Err(Error::DuplicateName(_))));
        b.add_parameters("p", &[0], &["da"]).unwrap();
        assert!(matches!(b.add_parameters("q", &[1], &["da"]), Err(Error::DuplicateLabel(_))));
        assert!(b.add_parameters("r", &[], &[]).is_err());
    }

    #[test]
    fn reuse_does_not_grow() {
        let mut b = ProblemBuilder::new();
        let idx = b.add_zero("a", quad(), &[], &[1.0, 1.0]).unwrap();
        let n = b.n_u();
        let again = b.add_zero("b", quad(), &idx, &[]).unwrap();
        assert_eq!(again, idx);
        assert_eq!(b.n_u(), n);
        assert!(matches!(b.add_zero("c", quad(), &[5, 0], &[]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut b = ProblemBuilder::new();
        let f = Func::new(2, |u: &[f64]| vec![u[0]]);
        assert!(matches!(b.add_zero("f", f, &[], &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn glue_rules() {
        let mut b = ProblemBuilder::new();
        b.add_zero("a", quad(), &[], &[1.0, 1.0]).unwrap();
        assert!(b.add_glue("g", &[0, 1], &[0]).is_err());
        b.add_glue("same", &[0], &[0]).unwrap();
        let p = b.build();
        assert_eq!(p.eval_block("same", &[3.0, 1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn adjoint_errors() {
        let mut b = ProblemBuilder::new();
        let idx = b.add_zero("a", quad(), &[], &[1.0, 1.0]).unwrap();
        assert!(matches!(b.add_adjoint("nope", Default::default()), Err(Error::UnknownBlock(_))));
        b.add_adjoint("a", Default::default()).unwrap();
        assert!(matches!(b.add_adjoint("a", Default::default()), Err(Error::AdjointExists(_))));
        b.add_zero("b", quad(), &idx, &[]).unwrap();
        assert!(b.add_adjoint("b", AdjointSpec::default().aidx(&[0])).is_err());
    }

    #[test]
    fn monitor_initial_mu_matches_psi() {
        let mut b = ProblemBuilder::new();
        let idx = b.add_zero("a", quad(), &[], &[3.0, 9.0]).unwrap();
        let sum = Func::new(1, |u: &[f64]| vec![u[0] + u[1]]);
        b.add_monitor("s", sum, &idx, &["s"], Kind::Inactive).unwrap();
        let p = b.build();
        assert_eq!(p.initial_point().mu, vec![12.0]);
        let r = p.residual(p.initial_point()).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
    }

    #[test]
    fn jacobian_fd_fallback_and_lambda_columns() {
        let mut b = ProblemBuilder::new();
        let idx = b.add_zero("a", quad(), &[], &[1.5, 2.0]).unwrap();
        let nojac = Func::new(1, |u: &[f64]| vec![u[0].sin() * u[1]]);
        b.add_monitor("m", nojac, &idx, &["m"], Kind::Inactive).unwrap();
        b.add_adjoint("a", AdjointSpec::default().l0(&[0.7])).unwrap();
        b.add_adjoint("m", AdjointSpec::default().l0(&[-0.3])).unwrap();
        let prob = b.build();
        let lay = prob.full_layout();
        let p = prob.initial_point().clone();
        let j = prob.jacobian(&p, &lay).unwrap();
        let x = lay.pack(&p);
        for c in 0..lay.ncols {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let fp = prob.residual(&lay.unpack(&xp, &p)).unwrap();
            let fm = prob.residual(&lay.unpack(&xm, &p)).unwrap();
            for r in 0..prob.residual_dim() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((fd - j[(r, c)]).abs() < 1e-6, "({r},{c}) fd {fd} vs {}", j[(r, c)]);
            }
        }
    }
}
