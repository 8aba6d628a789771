//! Printed tables in four-digit scientific notation.

use adjcont::continuation::RunStore;
use adjcont::flow::corpus::CaseOutcome;

/// `4.6833e+00` style: four decimals, signed two-digit exponent.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.4e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

pub fn print_run(run: &RunStore) {
    println!("run `{}`", run.run_name);
    println!("{:>5} {:>4} {:>11} {:>11} {:>11} {:>11}", "STEP", "IT", "GAMMA", "|d|", "|f|", "|U|");
    for s in &run.init_log {
        println!(
            "{:>5} {:>4} {:>11} {:>11} {:>11} {:>11}",
            s.it,
            s.sit,
            sci(s.gamma),
            sci(s.norm_d),
            sci(s.norm_f),
            sci(s.norm_u)
        );
    }
    let npr = run.settings.npr.max(1);
    for sweep in &run.sweeps {
        println!();
        let mut header = format!("{:>5} {:>4}", "LABEL", "TYPE");
        for l in &run.active.released {
            header.push_str(&format!(" {l:>11}"));
        }
        println!("{header}");
        for (k, label) in sweep.labels.iter().enumerate() {
            let Ok(c) = run.chart(*label) else { continue };
            if !(k % npr == 0 || !c.type_tag.is_empty() || k + 1 == sweep.labels.len()) {
                continue;
            }
            let mut row = format!("{:>5} {:>4}", c.label, c.type_tag);
            for v in &c.values {
                row.push_str(&format!(" {:>11}", sci(*v)));
            }
            println!("{row}");
        }
        if sweep.status != "boundary" {
            println!("direction {}: {}", sweep.direction, sweep.status);
        }
    }
}

pub fn print_corpus(outcomes: &[CaseOutcome]) {
    println!("{:<26} {:<14} {:>11} {:>11}  RESULT", "CASE", "CHECK", "ERROR", "TOL");
    for o in outcomes {
        println!(
            "{:<26} {:<14} {:>11} {:>11}  {}",
            o.name,
            o.check,
            sci(o.error),
            sci(o.tolerance),
            if o.passed { "PASS" } else { "FAIL" }
        );
        if let Some(m) = &o.message {
            println!("    {m}");
        }
    }
}
