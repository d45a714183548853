//! Aggregation of sweep results: per-(kind, noise, arm) mean and standard
//! deviation across seeds, as a Markdown summary and a tidy series CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::store::{format_float, ResultRow};
use crate::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub kind: String,
    pub noise: f64,
    pub arm: String,
    pub seeds: usize,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

/// Population standard deviation; a single seed reports 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[ResultRow]) -> AppResult<Vec<Aggregate>> {
    if rows.is_empty() {
        return Err(AppError::Data("no result rows to aggregate".into()));
    }
    // Keyed by (kind, noise-in-millis, arm) so f64 noise sorts stably.
    let mut groups: BTreeMap<(String, u64, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.kind.clone(), (r.noise * 1000.0).round() as u64, r.arm.clone());
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((kind, noise_m, arm), members) in groups {
        let p: Vec<f64> = members.iter().map(|r| r.precision).collect();
        let r: Vec<f64> = members.iter().map(|r| r.recall).collect();
        let f: Vec<f64> = members.iter().map(|r| r.f1).collect();
        let (pm, ps) = mean_std(&p);
        let (rm, rs) = mean_std(&r);
        let (fm, fs) = mean_std(&f);
        out.push(Aggregate {
            kind,
            noise: noise_m as f64 / 1000.0,
            arm,
            seeds: members.len(),
            precision_mean: pm,
            precision_std: ps,
            recall_mean: rm,
            recall_std: rs,
            f1_mean: fm,
            f1_std: fs,
        });
    }
    Ok(out)
}

pub fn write_series_csv(path: &Path, aggs: &[Aggregate]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "kind",
        "arm",
        "noise",
        "seeds",
        "precision_mean",
        "precision_std",
        "recall_mean",
        "recall_std",
        "f1_mean",
        "f1_std",
    ])?;
    for a in aggs {
        w.write_record([
            a.kind.clone(),
            a.arm.clone(),
            format_float(a.noise),
            a.seeds.to_string(),
            format_float(a.precision_mean),
            format_float(a.precision_std),
            format_float(a.recall_mean),
            format_float(a.recall_std),
            format_float(a.f1_mean),
            format_float(a.f1_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn markdown_summary(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    s.push_str("# Noise-sweep summary\n\n");
    s.push_str("Mean ± std across seeds, per vulnerability kind, noise level, and arm.\n");
    let mut kinds: Vec<&str> = aggs.iter().map(|a| a.kind.as_str()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    for kind in kinds {
        let _ = write!(s, "\n## {kind}\n\n");
        s.push_str("| noise | arm | precision | recall | F1 |\n");
        s.push_str("|------:|-----|-----------|--------|----|\n");
        for a in aggs.iter().filter(|a| a.kind == kind) {
            let _ = writeln!(
                s,
                "| {:.2} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                a.noise,
                a.arm,
                a.precision_mean,
                a.precision_std,
                a.recall_mean,
                a.recall_std,
                a.f1_mean,
                a.f1_std
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: &str, noise: f64, seed: u64, arm: &str, f1: f64) -> ResultRow {
        ResultRow {
            kind: kind.into(),
            noise,
            seed,
            arm: arm.into(),
            precision: f1,
            recall: f1,
            f1,
        }
    }

    #[test]
    fn single_row_mean_is_value_std_zero() {
        let aggs = aggregate(&[row("RE", 0.2, 1, "full", 0.8)]).unwrap();
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].f1_mean, 0.8);
        assert_eq!(aggs[0].f1_std, 0.0);
        assert_eq!(aggs[0].seeds, 1);
    }

    #[test]
    fn five_seed_mean_matches_hand_average() {
        let f1s = [0.8, 0.7, 0.9, 0.6, 1.0];
        let rows: Vec<ResultRow> = f1s
            .iter()
            .enumerate()
            .map(|(i, &f)| row("TD", 0.4, i as u64 + 1, "gb", f))
            .collect();
        let aggs = aggregate(&rows).unwrap();
        assert!((aggs[0].f1_mean - 0.8).abs() < 1e-12);
        assert_eq!(aggs[0].seeds, 5);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn markdown_mentions_every_kind() {
        let rows = vec![row("RE", 0.0, 1, "full", 1.0), row("IO", 0.0, 1, "full", 0.5)];
        let md = markdown_summary(&aggregate(&rows).unwrap());
        assert!(md.contains("## RE") && md.contains("## IO"));
    }
}
