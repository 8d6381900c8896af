//! Result files. Every number uses a fixed decimal format so that repeated
//! runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EnvKind, HarnessError, Method, RunRecord};
use crate::counterexample::write_counterexample;
use crate::rl::write_checkpoint;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn episodes_csv(record: &RunRecord) -> String {
    let mut out = String::from(
        "episode,success,cumulative_reward,effect_robustness,counterexamples,q_updates,theta,S,N,E,J\n",
    );
    for r in &record.rows {
        let theta = r.theta.as_ref().map_or_else(String::new, |t| {
            t.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(";")
        });
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{},{},{},{},{},{},{}",
            r.episode,
            u8::from(r.success),
            r.cumulative_reward,
            opt(r.effect_robustness),
            r.counterexamples,
            r.q_updates,
            theta,
            opt(r.scores.map(|s| s.sufficiency)),
            opt(r.scores.map(|s| s.necessity)),
            opt(r.scores.map(|s| s.existence)),
            opt(r.j),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env: EnvKind,
    pub method: Method,
    pub runs: usize,
    pub mean_success: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub std_success: f64,
}

/// Per (environment, method) mean and spread of the trailing success rate,
/// in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<((EnvKind, Method), Vec<f64>)> = Vec::new();
    for r in records {
        let key = (r.env, r.method);
        let rate = r.success_rate();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rate),
            None => groups.push((key, vec![rate])),
        }
    }
    groups
        .into_iter()
        .map(|((env, method), rates)| {
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let std = if rates.len() > 1 {
                (rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                env,
                method,
                runs: rates.len(),
                mean_success: mean,
                std_success: std,
            }
        })
        .collect()
}

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("env,method,runs,mean_success,std_success\n");
    for s in summarize(records) {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            s.env.as_str(),
            s.method.as_str(),
            s.runs,
            s.mean_success,
            s.std_success
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mkdir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Write the per-run files into `dir`. With `dump`, the final buffer goes
/// to `dir/counterexamples/`.
pub fn emit_results(record: &RunRecord, dir: &Path, dump: bool) -> Result<(), HarnessError> {
    mkdir(dir)?;
    write(&dir.join("episodes.csv"), &episodes_csv(record))?;
    let mut mined = format!("{}\n", record.mined_formula);
    if let Some(t) = &record.mined_theta {
        let names: Vec<String> = t.iter().map(|x| format!("{x:.6}")).collect();
        let _ = writeln!(mined, "# theta {}", names.join(" "));
    }
    write(&dir.join("mined_formula.txt"), &mined)?;
    write(&dir.join("qtable.txt"), &write_checkpoint(&record.qtable))?;
    write(
        &dir.join("summary.csv"),
        &summary_csv(std::slice::from_ref(record)),
    )?;
    if let Some(log) = &record.optimization {
        write(&dir.join("optimization.csv"), &log.to_csv())?;
    }
    if dump {
        let ce = dir.join("counterexamples");
        mkdir(&ce)?;
        for (i, t) in record.buffer.iter().enumerate() {
            write(&ce.join(format!("ce_{i:04}.txt")), &write_counterexample(t))?;
        }
    }
    Ok(())
}

/// Write the cross-run summary of a sweep.
pub fn emit_summary(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    mkdir(dir)?;
    write(&dir.join("summary.csv"), &summary_csv(records))
}
