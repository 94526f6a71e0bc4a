use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::run::RunSummary;
use crate::error::{Error, Result};

/// Rows of labelled values under named columns; missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// With recall curves on every summary: one row per run and one column per
/// list length. Otherwise: the metrics all summaries share, rows sorted by
/// the first shared metric, best first.
pub fn compare(summaries: &[RunSummary]) -> Result<ComparisonTable> {
    if summaries.is_empty() {
        return Err(Error::config("nothing to compare"));
    }
    if summaries.iter().all(|s| !s.recall.is_empty()) {
        let ns: BTreeSet<usize> = summaries
            .iter()
            .flat_map(|s| s.recall.keys().copied())
            .collect();
        let mut rows: Vec<(String, Vec<Option<f64>>)> = summaries
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    ns.iter().map(|n| s.recall.get(n).copied()).collect(),
                )
            })
            .collect();
        // the random-items baseline rides along when every run has one
        if summaries.iter().all(|s| !s.baseline_recall.is_empty()) {
            let base = &summaries[0].baseline_recall;
            rows.push((
                "random-items".into(),
                ns.iter().map(|n| base.get(n).copied()).collect(),
            ));
        }
        return Ok(ComparisonTable {
            columns: ns.iter().map(|n| format!("N={n}")).collect(),
            rows,
        });
    }

    let mut shared: BTreeSet<&String> = summaries[0].metrics.keys().collect();
    for s in &summaries[1..] {
        shared.retain(|k| s.metrics.contains_key(*k));
    }
    if shared.is_empty() {
        return Err(Error::data("the summaries share no metric"));
    }
    let columns: Vec<String> = shared.into_iter().cloned().collect();
    let mut rows: Vec<(String, Vec<Option<f64>>)> = summaries
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                columns.iter().map(|c| s.metrics.get(c).copied()).collect(),
            )
        })
        .collect();
    rows.sort_by(|a, b| {
        let (x, y) = (
            a.1[0].unwrap_or(f64::NEG_INFINITY),
            b.1[0].unwrap_or(f64::NEG_INFINITY),
        );
        y.total_cmp(&x).then_with(|| a.0.cmp(&b.0))
    });
    Ok(ComparisonTable { columns, rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["run".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (label, values) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(
                values
                    .iter()
                    .map(|v| v.map_or_else(String::new, |v| v.to_string())),
            );
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| run | {} |", self.columns.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(self.columns.len()));
        for (label, values) in &self.rows {
            let cells: Vec<String> = values.iter().map(|v| cell(*v)).collect();
            let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn summary(name: &str, metrics: &[(&str, f64)]) -> RunSummary {
        RunSummary {
            name: name.into(),
            pipeline: "replay".into(),
            agent: name.into(),
            seed: 0,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            std_errors: BTreeMap::new(),
            recall: BTreeMap::new(),
            baseline_recall: BTreeMap::new(),
            counts: BTreeMap::new(),
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn sorted_by_metric() {
        let t = compare(&[
            summary("random", &[("ctr", 0.04)]),
            summary("dqn", &[("ctr", 0.3)]),
            summary("popularity", &[("ctr", 0.1)]),
        ])
        .unwrap();
        let labels: Vec<&str> = t.rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(labels, ["dqn", "popularity", "random"]);
        assert_eq!(
            t.to_csv().unwrap(),
            "run,ctr\ndqn,0.3\npopularity,0.1\nrandom,0.04\n"
        );
        assert!(t.to_markdown().contains("| dqn | 0.3000 |"));
    }

    #[test]
    fn single_and_disjoint() {
        assert_eq!(
            compare(&[summary("a", &[("mrr", 0.2)])])
                .unwrap()
                .rows
                .len(),
            1
        );
        let err = compare(&[summary("a", &[("mrr", 0.2)]), summary("b", &[("ctr", 0.1)])]);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn recall_curves_go_wide() {
        let mut a = summary("k=1", &[]);
        let mut b = summary("k=3", &[]);
        for n in [10, 20] {
            a.recall.insert(n, n as f64 / 100.0);
            b.recall.insert(n, n as f64 / 50.0);
        }
        let t = compare(&[a, b]).unwrap();
        assert_eq!(t.columns, ["N=10", "N=20"]);
        assert_eq!(t.rows[1], ("k=3".to_string(), vec![Some(0.2), Some(0.4)]));
    }
}
