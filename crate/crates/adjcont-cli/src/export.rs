//! Data files written next to the runs, as CSV or JSON lines.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adjcont::continuation::run_dir;
use adjcont::flow::corpus::CaseOutcome;
use adjcont::invc::{self, CurveState, FiberData, Spectrum, SpectrumMode, CURVE_RUN};
use clap::ValueEnum;
use serde_json::{json, Value};

use crate::Failure;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

fn target(dir: &Path, stem: &str, f: Format) -> PathBuf {
    run_dir(dir, CURVE_RUN).join(format!("{stem}.{}", f.ext()))
}

fn write_lines(path: &Path, rows: impl IntoIterator<Item = Value>) -> Result<(), Failure> {
    let mut text = String::new();
    for r in rows {
        writeln!(text, "{r}").expect("write to string");
    }
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Failure::Run(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

pub fn curve(dir: &Path, f: Format, cs: &CurveState, fiber: &FiberData) -> Result<PathBuf, Failure> {
    let path = target(dir, "curve", f);
    match f {
        Format::Csv => invc::write_curve_csv(&path, cs, fiber)?,
        Format::Jsonl => write_lines(
            &path,
            (0..cs.q).map(|i| {
                json!({
                    "phi": 2.0 * PI * i as f64 / cs.q as f64,
                    "v": [cs.v[i][0], cs.v[i][1]],
                    "qphi": [fiber.q_phi[i][0], fiber.q_phi[i][1]],
                })
            }),
        )?,
    }
    Ok(path)
}

pub fn spectrum(dir: &Path, f: Format, sp: &Spectrum) -> Result<PathBuf, Failure> {
    let path = target(dir, "spectrum", f);
    match f {
        Format::Csv => invc::write_spectrum_csv(&path, sp)?,
        Format::Jsonl => {
            let mut rows = vec![json!({"quantity": "max_abs_1_plus_z", "value": sp.radius})];
            if sp.mode == SpectrumMode::Full {
                for (name, ev) in [("gamma", &sp.gamma), ("gamma_hat", &sp.gamma_hat)] {
                    rows.extend(ev.iter().map(|(re, im)| json!({"operator": name, "re": re, "im": im})));
                }
            }
            write_lines(&path, rows)?
        }
    }
    Ok(path)
}

pub fn decay(dir: &Path, f: Format, curves: &[Vec<f64>]) -> Result<PathBuf, Failure> {
    let path = target(dir, "decay", f);
    match f {
        Format::Csv => invc::write_decay_csv(&path, curves)?,
        Format::Jsonl => {
            let n = curves.iter().map(Vec::len).max().unwrap_or(0);
            write_lines(
                &path,
                (0..n).map(|k| json!({"k": k, "gaps": curves.iter().map(|c| c.get(k).copied()).collect::<Vec<_>>()})),
            )?
        }
    }
    Ok(path)
}

pub fn corpus(dir: &Path, f: Format, outcomes: &[CaseOutcome]) -> Result<PathBuf, Failure> {
    let path = dir.join(format!("flow_corpus.{}", f.ext()));
    match f {
        Format::Csv => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
            let fail = |e: csv::Error| Failure::Run(format!("{}: {e}", path.display()));
            let mut w = csv::Writer::from_path(&path).map_err(fail)?;
            w.write_record(["name", "check", "error", "tolerance", "passed", "source"]).map_err(fail)?;
            for o in outcomes {
                let (err, tol) = (format!("{:.17e}", o.error), format!("{:.17e}", o.tolerance));
                w.write_record([&o.name, &o.check, &err, &tol, &o.passed.to_string(), &o.source])
                    .map_err(fail)?;
            }
            w.flush().map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        }
        Format::Jsonl => write_lines(
            &path,
            outcomes.iter().map(|o| {
                json!({
                    "name": o.name,
                    "check": o.check,
                    "error": o.error,
                    "tolerance": o.tolerance,
                    "passed": o.passed,
                    "source": o.source,
                })
            }),
        )?,
    }
    Ok(path)
}
