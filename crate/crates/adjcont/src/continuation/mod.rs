//! Correction, pseudo-arclength continuation, events and run storage.

mod adjoint;
mod newton;
mod store;

use serde::{Deserialize, Serialize};

pub use adjoint::solve_adjoint_direct;
pub use newton::{Closure, NewtonStep, System};
pub use store::{read_adjoint, read_chart, read_run, read_solution, run_dir, save_run, RunMeta};

use crate::error::{Error, Result};
use crate::linalg::{dot, vec_norm_inf};
use crate::problem::{Point, Problem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    pub gamma_min: f64,
    pub h0: f64,
    pub hmin: f64,
    pub hmax: f64,
    /// Steps per sweep direction.
    pub itmx: usize,
    /// Print every `npr`-th chart.
    pub npr: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol: 1e-6,
            max_iter: 10,
            gamma_min: 1.0 / 1024.0,
            h0: 0.1,
            hmin: 1e-5,
            hmax: 0.5,
            itmx: 100,
            npr: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

/// Released labels and computational-domain windows of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub released: Vec<String>,
    pub windows: Vec<Window>,
}

impl ActiveSet {
    pub fn new(released: &[&str]) -> Self {
        ActiveSet {
            released: released.iter().map(|s| s.to_string()).collect(),
            windows: vec![],
        }
    }

    pub fn window(mut self, label: &str, lo: f64, hi: f64) -> Self {
        self.windows.push(Window {
            label: label.to_string(),
            lo,
            hi,
        });
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub d: f64,
    pub f: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub label: usize,
    /// `EP`, `FP`, a user event name, or empty.
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(flatten)]
    pub point: Point,
    /// Values of the released labels, in run order.
    pub values: Vec<f64>,
    pub tangent: Vec<f64>,
    pub norms: Norms,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub label: usize,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub direction: i8,
    pub labels: Vec<usize>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStore {
    pub run_name: String,
    pub active: ActiveSet,
    pub settings: Settings,
    pub init_log: Vec<NewtonStep>,
    pub sweeps: Vec<Sweep>,
    pub charts: Vec<Chart>,
    pub events: Vec<EventRecord>,
}

impl RunStore {
    pub fn chart(&self, label: usize) -> Result<&Chart> {
        self.charts
            .iter()
            .find(|c| c.label == label)
            .ok_or(Error::MissingLabel(label))
    }

    pub fn with_type(&self, tag: &str) -> Vec<&Chart> {
        self.charts.iter().filter(|c| c.type_tag == tag).collect()
    }

    /// Column of `label` in the `values` arrays.
    pub fn column(&self, label: &str) -> Result<usize> {
        self.active
            .released
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn value(&self, chart: &Chart, label: &str) -> Result<f64> {
        Ok(chart.values[self.column(label)?])
    }
}

fn released_values(prob: &Problem, active: &ActiveSet, p: &Point) -> Result<Vec<f64>> {
    active.released.iter().map(|l| prob.value(p, l)).collect()
}

/// Corrects `start` with the released labels of `active` free. Without
/// closure the system must be square; otherwise the chart is constrained to
/// the hyperplane through the start point orthogonal to the local kernel.
pub fn correct(prob: &Problem, start: &Point, active: &ActiveSet, s: &Settings) -> Result<(Chart, Vec<NewtonStep>)> {
    let layout = prob.layout(&active.released)?;
    let sys = System::new(prob, &layout, start);
    let x0 = layout.pack(start);
    let (x, log, t) = match sys.manifold_dim() {
        0 => {
            let (x, log) = sys.newton(&x0, &Closure::None, s)?;
            (x, log, vec![])
        }
        1 => {
            let windowed = windowed_cols(prob, &layout, active)?;
            let t0 = sys.first_tangent(&x0, &windowed)?;
            let cl = Closure::Plane { t: t0, x0: x0.clone() };
            let (x, log) = sys.newton(&x0, &cl, s)?;
            let t = sys.first_tangent(&x, &windowed)?;
            (x, log, t)
        }
        d => {
            return Err(Error::Underdetermined {
                released: active.released.len(),
                dim: d,
            })
        }
    };
    let point = sys.point(&x);
    let last = log.last().copied().expect("log has the initial row");
    let chart = Chart {
        label: 1,
        type_tag: "EP".into(),
        values: released_values(prob, active, &point)?,
        point,
        tangent: t,
        norms: Norms {
            d: last.norm_d,
            f: last.norm_f,
            u: last.norm_u,
        },
        iterations: log.len() - 1,
    };
    Ok((chart, log))
}

fn windowed_cols(prob: &Problem, layout: &crate::problem::Layout, active: &ActiveSet) -> Result<Vec<usize>> {
    active
        .windows
        .iter()
        .map(|w| {
            let i = active
                .released
                .iter()
                .position(|l| *l == w.label)
                .ok_or_else(|| Error::Invalid(format!("window on unreleased label `{}`", w.label)))?;
            prob.param(&w.label)?;
            Ok(layout.label_col[i])
        })
        .collect()
}

struct Tracker<'a> {
    prob: &'a Problem,
    sys: System<'a>,
    active: &'a ActiveSet,
    s: &'a Settings,
    wcols: Vec<usize>,
    fold_col: Option<usize>,
    events: Vec<(String, usize, f64)>,
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    t: Vec<f64>,
    norms: Norms,
    iterations: usize,
}

const FOLD_NOISE: f64 = 1e-8;

impl<'a> Tracker<'a> {
    fn chart(&self, st: &State, label: usize, tag: &str) -> Result<Chart> {
        let point = self.sys.point(&st.x);
        Ok(Chart {
            label,
            type_tag: tag.to_string(),
            values: released_values(self.prob, self.active, &point)?,
            point,
            tangent: st.t.clone(),
            norms: st.norms,
            iterations: st.iterations,
        })
    }

    fn solve(&self, guess: &[f64], cl: &Closure, t_prev: &[f64]) -> Result<State> {
        let (x, log) = self.sys.newton(guess, cl, self.s)?;
        let t = self.sys.next_tangent(&x, t_prev)?;
        let last = log.last().copied().expect("nonempty log");
        Ok(State {
            x,
            t,
            norms: Norms {
                d: last.norm_d,
                f: last.norm_f,
                u: last.norm_u,
            },
            iterations: log.len() - 1,
        })
    }

    fn outward_at_boundary(&self, st: &State, dir: f64) -> bool {
        self.active.windows.iter().zip(&self.wcols).any(|(w, &c)| {
            let v = st.x[c];
            let td = dir * st.t[c];
            let near = |b: f64| (v - b).abs() <= 1e-10 * b.abs().max(1.0);
            (near(w.lo) && td < 0.0) || (near(w.hi) && td > 0.0)
        })
    }

    /// First window boundary crossed between `a` and `b`, as (column, bound, fraction).
    fn exit(&self, a: &State, b: &State) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (w, &c) in self.active.windows.iter().zip(&self.wcols) {
            let (va, vb) = (a.x[c], b.x[c]);
            for bound in [w.lo, w.hi] {
                let outside = if bound == w.lo { vb < bound } else { vb > bound };
                if outside && vb != va {
                    let frac = ((bound - va) / (vb - va)).clamp(0.0, 1.0);
                    if best.is_none_or(|(_, _, f)| frac < f) {
                        best = Some((c, bound, frac));
                    }
                }
            }
        }
        best
    }

    fn interpolate(a: &[f64], b: &[f64], frac: f64) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect()
    }

    /// Special points strictly between `a` and `b`, localized and ordered.
    fn special_points(&self, a: &State, b: &State) -> Vec<(String, State)> {
        let mut found: Vec<(f64, String, State)> = vec![];
        for (name, c, target) in &self.events {
            let (ga, gb) = (a.x[*c] - target, b.x[*c] - target);
            if ga * gb < 0.0 {
                let frac = ga / (ga - gb);
                let guess = Self::interpolate(&a.x, &b.x, frac);
                let cl = Closure::Fix { col: *c, value: *target };
                match self.solve(&guess, &cl, &a.t) {
                    Ok(st) => found.push((frac, name.clone(), st)),
                    Err(e) => log::warn!("event {name} not localized: {e}"),
                }
            }
        }
        if let Some(c) = self.fold_col {
            let (ga, gb) = (a.t[c], b.t[c]);
            if ga * gb < 0.0 && ga.abs().max(gb.abs()) > FOLD_NOISE {
                match self.locate_fold(a, b, c) {
                    Ok((frac, st)) => found.push((frac, "FP".into(), st)),
                    Err(e) => log::warn!("fold not localized: {e}"),
                }
            }
        }
        found.sort_by(|x, y| x.0.total_cmp(&y.0));
        found.into_iter().map(|(_, n, s)| (n, s)).collect()
    }

    /// Illinois iteration on the arclength along `a.t` for a zero of the
    /// tangent component `c`.
    fn locate_fold(&self, a: &State, b: &State, c: usize) -> Result<(f64, State)> {
        let s_end: f64 = dot(&a.t, &b.x) - dot(&a.t, &a.x);
        let at = |s: f64| -> Result<State> {
            let xp: Vec<f64> = a.x.iter().zip(&a.t).map(|(x, t)| x + s * t).collect();
            let cl = Closure::Plane { t: a.t.clone(), x0: xp.clone() };
            self.solve(&xp, &cl, &a.t)
        };
        let (mut s0, mut g0) = (0.0, a.t[c]);
        let (mut s1, mut g1) = (s_end, b.t[c]);
        let mut best = b.clone();
        let mut side = 0;
        for _ in 0..60 {
            let s = (s0 * g1 - s1 * g0) / (g1 - g0);
            let st = at(s)?;
            let g = st.t[c];
            best = st;
            if g.abs() <= 1e-12 || (s1 - s0).abs() <= 1e-14 * s_end.abs().max(1.0) {
                return Ok((s / s_end, best));
            }
            if g * g1 > 0.0 {
                s1 = s;
                g1 = g;
                if side == -1 {
                    g0 /= 2.0;
                }
                side = -1;
            } else {
                s0 = s;
                g0 = g;
                if side == 1 {
                    g1 /= 2.0;
                }
                side = 1;
            }
        }
        let frac = (dot(&a.t, &best.x) - dot(&a.t, &a.x)) / s_end;
        if best.t[c].abs() <= 1e-9 {
            Ok((frac, best))
        } else {
            Err(Error::NoConvergence("fold localization".into()))
        }
    }
}

/// Pseudo-arclength continuation from `start` in both directions.
pub fn continue_branch(
    prob: &Problem,
    start: &Point,
    active: &ActiveSet,
    s: &Settings,
    run_name: &str,
) -> Result<RunStore> {
    let (chart0, init_log) = correct(prob, start, active, s)?;
    let mut store = RunStore {
        run_name: run_name.to_string(),
        active: active.clone(),
        settings: s.clone(),
        init_log,
        sweeps: vec![],
        charts: vec![],
        events: vec![],
    };
    if chart0.tangent.is_empty() {
        store.sweeps.push(Sweep {
            direction: 0,
            labels: vec![1],
            status: "no free direction".into(),
        });
        store.charts.push(chart0);
        return Ok(store);
    }
    let layout = prob.layout(&active.released)?;
    let base = chart0.point.clone();
    let sys = System::new(prob, &layout, &base);
    let wcols = windowed_cols(prob, &layout, active)?;
    let mut events = vec![];
    for e in prob.events() {
        if let Some(i) = active.released.iter().position(|l| *l == e.label) {
            events.push((e.name.clone(), layout.label_col[i], e.value));
        }
    }
    let tracker = Tracker {
        prob,
        sys,
        active,
        s,
        wcols,
        fold_col: layout.label_col.first().copied(),
        events,
    };
    let st0 = State {
        x: layout.pack(&chart0.point),
        t: chart0.tangent.clone(),
        norms: chart0.norms,
        iterations: chart0.iterations,
    };
    let mut label = 0;
    let push = |store: &mut RunStore, chart: Chart, sweep: &mut Sweep| {
        if !chart.type_tag.is_empty() {
            store.events.push(EventRecord {
                label: chart.label,
                type_tag: chart.type_tag.clone(),
                values: chart.values.clone(),
            });
        }
        sweep.labels.push(chart.label);
        store.charts.push(chart);
    };
    let mut start_events_done = false;
    for dir in [1.0, -1.0] {
        let mut st = st0.clone();
        if dir < 0.0 {
            st.t.iter_mut().for_each(|v| *v = -*v);
        }
        if tracker.outward_at_boundary(&st, 1.0) {
            continue;
        }
        let mut sweep = Sweep {
            direction: dir as i8,
            labels: vec![],
            status: String::new(),
        };
        label += 1;
        push(&mut store, tracker.chart(&st, label, "EP")?, &mut sweep);
        if !start_events_done {
            start_events_done = true;
            for (name, c, v) in &tracker.events {
                if (st.x[*c] - v).abs() <= 1e-12 * v.abs().max(1.0) {
                    label += 1;
                    push(&mut store, tracker.chart(&st, label, name)?, &mut sweep);
                }
            }
        }
        let mut h = s.h0;
        let mut steps = 0;
        sweep.status = loop {
            if steps >= s.itmx {
                if let Some(last) = store.charts.last_mut() {
                    if last.type_tag.is_empty() {
                        last.type_tag = "EP".into();
                        store.events.push(EventRecord {
                            label: last.label,
                            type_tag: "EP".into(),
                            values: last.values.clone(),
                        });
                    }
                }
                break "step limit".to_string();
            }
            let xp: Vec<f64> = st.x.iter().zip(&st.t).map(|(x, t)| x + h * t).collect();
            let cl = Closure::Plane { t: st.t.clone(), x0: xp.clone() };
            let next = tracker
                .solve(&xp, &cl, &st.t)
                .and_then(|n| if dot(&n.t, &st.t) < 0.8 { Err(Error::Invalid("sharp turn".into())) } else { Ok(n) });
            let next = match next {
                Ok(n) => n,
                Err(e) => {
                    h /= 2.0;
                    if h < s.hmin {
                        break format!("corrector failure: {e}");
                    }
                    continue;
                }
            };
            steps += 1;
            let fast = next.iterations <= 3;
            let (end, tag) = match tracker.exit(&st, &next) {
                Some((c, bound, frac)) => {
                    let guess = Tracker::interpolate(&st.x, &next.x, frac);
                    let cl = Closure::Fix { col: c, value: bound };
                    (tracker.solve(&guess, &cl, &st.t)?, "EP")
                }
                None => (next, ""),
            };
            for (name, sp) in tracker.special_points(&st, &end) {
                label += 1;
                push(&mut store, tracker.chart(&sp, label, &name)?, &mut sweep);
            }
            label += 1;
            push(&mut store, tracker.chart(&end, label, tag)?, &mut sweep);
            if tag == "EP" {
                break "boundary".to_string();
            }
            st = end;
            if fast {
                h = (2.0 * h).min(s.hmax);
            }
        };
        store.sweeps.push(sweep);
    }
    Ok(store)
}

/// Largest residual entry of a stored chart.
pub fn chart_residual(prob: &Problem, chart: &Chart) -> Result<f64> {
    Ok(vec_norm_inf(&prob.residual(&chart.point)?))
}
