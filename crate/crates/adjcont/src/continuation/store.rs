use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActiveSet, Chart, EventRecord, NewtonStep, RunStore, Settings, Sweep};
use crate::error::{Error, Result};
use crate::problem::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub name: String,
    pub uidx: Vec<usize>,
    /// Indices into `lam_eta`; empty when the block has no adjoint.
    pub adjoint: Vec<usize>,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_name: String,
    pub settings: Settings,
    pub active: ActiveSet,
    pub mu_labels: Vec<String>,
    pub eta_labels: Vec<String>,
    pub blocks: Vec<BlockMeta>,
    pub labels: Vec<(usize, String)>,
    pub sweeps: Vec<Sweep>,
    pub events: Vec<EventRecord>,
    pub init_log: Vec<NewtonStep>,
}

pub fn run_dir(dir: &Path, run_name: &str) -> PathBuf {
    dir.join(run_name)
}

/// Writes `meta.json`, `charts.jsonl` and `branch.csv` under `dir/<run_name>`.
pub fn save_run(store: &RunStore, prob: &Problem, dir: &Path) -> Result<PathBuf> {
    let root = run_dir(dir, &store.run_name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let blocks = prob
        .block_names()
        .into_iter()
        .map(|name| BlockMeta {
            uidx: prob.block_uidx(&name).expect("own block"),
            adjoint: prob.block_adjoint_vars(&name).unwrap_or_default(),
            name,
        })
        .collect();
    let meta = RunMeta {
        run_name: store.run_name.clone(),
        settings: store.settings.clone(),
        active: store.active.clone(),
        mu_labels: prob.mu_labels(),
        eta_labels: prob.eta_labels(),
        blocks,
        labels: store.charts.iter().map(|c| (c.label, c.type_tag.clone())).collect(),
        sweeps: store.sweeps.clone(),
        events: store.events.clone(),
        init_log: store.init_log.clone(),
    };
    let path = root.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let path = root.join("charts.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for c in &store.charts {
        serde_json::to_writer(&mut w, c).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = root.join("branch.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["label".to_string(), "type".to_string()];
    header.extend(store.active.released.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for c in &store.charts {
        let mut row = vec![c.label.to_string(), c.type_tag.clone()];
        row.extend(c.values.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(root)
}

fn read_meta(root: &Path) -> Result<RunMeta> {
    let path = root.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

fn read_charts(root: &Path) -> Result<Vec<Chart>> {
    let path = root.join("charts.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Format(e.to_string()))
        })
        .collect()
}

pub fn read_run(dir: &Path, run_name: &str) -> Result<RunStore> {
    let root = run_dir(dir, run_name);
    let meta = read_meta(&root)?;
    Ok(RunStore {
        run_name: meta.run_name,
        active: meta.active,
        settings: meta.settings,
        init_log: meta.init_log,
        sweeps: meta.sweeps,
        charts: read_charts(&root)?,
        events: meta.events,
    })
}

pub fn read_chart(dir: &Path, run_name: &str, label: usize) -> Result<Chart> {
    read_charts(&run_dir(dir, run_name))?
        .into_iter()
        .find(|c| c.label == label)
        .ok_or(Error::MissingLabel(label))
}

fn block_meta(meta: &RunMeta, block: &str) -> Result<BlockMeta> {
    meta.blocks
        .iter()
        .find(|b| b.name == block)
        .cloned()
        .ok_or_else(|| Error::UnknownBlock(block.to_string()))
}

/// `u[uidx]` of `block` at a stored chart.
pub fn read_solution(dir: &Path, run_name: &str, block: &str, label: usize) -> Result<Vec<f64>> {
    let root = run_dir(dir, run_name);
    let b = block_meta(&read_meta(&root)?, block)?;
    let c = read_chart(dir, run_name, label)?;
    Ok(b.uidx.iter().map(|&i| c.point.u[i]).collect())
}

/// Adjoint variables owned by `block` at a stored chart.
pub fn read_adjoint(dir: &Path, run_name: &str, block: &str, label: usize) -> Result<Vec<f64>> {
    let root = run_dir(dir, run_name);
    let b = block_meta(&read_meta(&root)?, block)?;
    if b.adjoint.is_empty() {
        return Err(Error::Invalid(format!("block `{block}` has no adjoint")));
    }
    let c = read_chart(dir, run_name, label)?;
    Ok(b.adjoint.iter().map(|&i| c.point.lam_eta[i]).collect())
}
