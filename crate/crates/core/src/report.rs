//! CSV and JSON outputs of training runs.
//!
//! Metric files contain no timing, so two runs with the same seed write
//! byte-identical metric files. Wall-clock times go to `timing.csv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::train::{RunResult, StudyResult};

pub const EPOCH_HEADER: &str = "variant,target_domain,seed,epoch,l_cls,l_s,l_c,l_o,total,source_acc,target_acc";

/// One row per epoch of every run.
pub fn epoch_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(EPOCH_HEADER);
    out.push('\n');
    for r in runs {
        for e in &r.epochs {
            let l = &e.losses;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.variant, r.target_domain, r.seed, e.epoch, l.l_cls, l.l_s, l.l_c, l.l_o, l.total, e.source_acc, e.target_acc
            ));
        }
    }
    out
}

/// Final metrics of every run.
pub fn runs_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("variant,mode,target_domain,seed,source_acc,target_acc,style_domain_acc,style_class_acc\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.mode.name(),
            r.target_domain,
            r.seed,
            r.source_acc,
            r.target_acc,
            r.style.domain_accuracy,
            r.style.class_accuracy
        ));
    }
    out
}

pub fn timing_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("variant,target_domain,seed,seconds\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.variant,
            r.target_domain,
            r.seed,
            r.wall_clock.as_secs_f64()
        ));
    }
    out
}

/// Wide summary: one row per variant with target accuracy (percent) as
/// mean and sample sd over seeds for each target domain, then the average
/// over targets.
pub fn summary_csv(study: &StudyResult) -> String {
    let mut out = String::from("variant");
    for t in &study.targets {
        out.push_str(&format!(",domain{t}_mean,domain{t}_sd"));
    }
    out.push_str(",avg_mean,avg_sd\n");
    for &v in &study.variants {
        out.push_str(v.name());
        for (m, s) in study.summary_row(v) {
            out.push_str(&format!(",{:.2},{:.2}", 100.0 * m, 100.0 * s));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub version: &'a str,
    pub command: &'a str,
    pub seed: u64,
    pub seeds: usize,
    pub variants: Vec<String>,
    pub targets: Vec<usize>,
}

pub fn manifest_json(m: &Manifest<'_>) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_header_shape() {
        let study = StudyResult {
            variants: vec![crate::train::Variant::Vanilla],
            targets: vec![0, 1],
            seeds: vec![0],
            runs: vec![],
        };
        let s = summary_csv(&study);
        let first = s.lines().next().unwrap();
        assert_eq!(first, "variant,domain0_mean,domain0_sd,domain1_mean,domain1_sd,avg_mean,avg_sd");
        assert_eq!(s.lines().nth(1).unwrap().split(',').count(), 7);
    }

    #[test]
    fn epoch_header_only_when_empty() {
        assert_eq!(epoch_csv(&[]), format!("{EPOCH_HEADER}\n"));
    }
}
