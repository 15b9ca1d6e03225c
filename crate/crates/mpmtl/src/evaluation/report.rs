//! Experiment report rows and their CSV renderings.

use std::io::Write;

use crate::error::Result;

/// One metric observation. `eps` is infinite for methods that spend no
/// privacy budget. A failed fit is recorded as NaN metric values plus a
/// `failed` row of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub replication: usize,
    pub metric: String,
    pub value: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub eps: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub rows: Vec<MetricRow>,
}

fn row_key(r: &MetricRow) -> (&str, f64, usize, &str) {
    (&r.method, r.eps, r.replication, &r.metric)
}

impl ExperimentReport {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        let mut report = ExperimentReport { rows };
        report.sort_rows();
        report
    }

    /// Deterministic order: method, eps, replication, metric.
    pub fn sort_rows(&mut self) {
        self.rows.sort_by(|a, b| {
            let (am, ae, ar, ak) = row_key(a);
            let (bm, be, br, bk) = row_key(b);
            am.cmp(bm)
                .then(ae.total_cmp(&be))
                .then(ar.cmp(&br))
                .then(ak.cmp(bk))
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "eps", "delta", "seed", "replication", "metric", "value", "runtime_s"])?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str(),
                &r.eps.to_string(),
                &r.delta.to_string(),
                &r.seed.to_string(),
                &r.replication.to_string(),
                r.metric.as_str(),
                &r.value.to_string(),
                &r.runtime_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Mean and sample standard deviation per (method, eps, metric),
    /// computed over the finite replication values; NaN when a group has
    /// no successful replication, zero std for a single one.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut sorted = self.rows.clone();
        sorted.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.eps.total_cmp(&b.eps))
                .then(a.metric.cmp(&b.metric))
        });
        let mut out: Vec<SummaryRow> = Vec::new();
        let mut group: Vec<f64> = Vec::new();
        let mut key: Option<(String, f64, String)> = None;
        let flush = |key: &Option<(String, f64, String)>, group: &[f64], out: &mut Vec<SummaryRow>| {
            if let Some((m, e, k)) = key {
                let finite: Vec<f64> = group.iter().copied().filter(|v| !v.is_nan()).collect();
                let (mean, std) = if finite.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
                    let std = if finite.len() < 2 {
                        0.0
                    } else {
                        let ss: f64 = finite.iter().map(|v| (v - mean) * (v - mean)).sum();
                        (ss / (finite.len() - 1) as f64).sqrt()
                    };
                    (mean, std)
                };
                out.push(SummaryRow {
                    method: m.clone(),
                    eps: *e,
                    metric: k.clone(),
                    mean,
                    std,
                });
            }
        };
        for r in &sorted {
            let this = (r.method.clone(), r.eps, r.metric.clone());
            if key.as_ref() != Some(&this) {
                flush(&key, &group, &mut out);
                key = Some(this);
                group.clear();
            }
            group.push(r.value);
        }
        flush(&key, &group, &mut out);
        out
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "eps", "metric", "mean", "std"])?;
        for s in self.summary() {
            w.write_record([
                s.method.as_str(),
                &s.eps.to_string(),
                s.metric.as_str(),
                &s.mean.to_string(),
                &s.std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_summary_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, eps: f64, rep: usize, metric: &str, value: f64) -> MetricRow {
        MetricRow {
            method: method.to_string(),
            eps,
            delta: 0.0,
            seed: 0,
            replication: rep,
            metric: metric.to_string(),
            value,
            runtime_s: 0.5,
        }
    }

    #[test]
    fn rows_sort_deterministically() {
        let rows = vec![
            row("b", 1.0, 0, "nmse", 0.2),
            row("a", f64::INFINITY, 1, "nmse", 0.1),
            row("a", 1.0, 0, "nmse", 0.3),
            row("a", 1.0, 0, "failed", 0.0),
        ];
        let report = ExperimentReport::new(rows);
        let keys: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("{}/{}/{}/{}", r.method, r.eps, r.replication, r.metric))
            .collect();
        assert_eq!(
            keys,
            vec!["a/1/0/failed", "a/1/0/nmse", "a/inf/1/nmse", "b/1/0/nmse"]
        );
    }

    #[test]
    fn csv_has_exact_header_and_rows() {
        let report = ExperimentReport::new(vec![row("stl", f64::INFINITY, 0, "nmse", 0.25)]);
        let text = report.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,eps,delta,seed,replication,metric,value,runtime_s"
        );
        assert_eq!(lines.next().unwrap(), "stl,inf,0,0,0,nmse,0.25,0.5");
        assert!(lines.next().is_none());
    }

    #[test]
    fn summary_aggregates_per_group() {
        let report = ExperimentReport::new(vec![
            row("m", 1.0, 0, "nmse", 0.2),
            row("m", 1.0, 1, "nmse", 0.4),
            row("m", 10.0, 0, "nmse", 0.1),
        ]);
        let s = report.summary();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].eps, 1.0);
        assert!((s[0].mean - 0.3).abs() < 1e-15);
        assert!((s[0].std - (0.02f64).sqrt()).abs() < 1e-12);
        assert_eq!(s[1].eps, 10.0);
        assert_eq!(s[1].std, 0.0);
    }

    #[test]
    fn summary_skips_failed_values() {
        let report = ExperimentReport::new(vec![
            row("m", 1.0, 0, "nmse", f64::NAN),
            row("m", 1.0, 1, "nmse", 0.4),
        ]);
        let s = report.summary();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean, 0.4);
        assert_eq!(s[0].std, 0.0);
    }

    #[test]
    fn summary_csv_header() {
        let report = ExperimentReport::new(vec![row("m", 1.0, 0, "nmse", 0.5)]);
        let text = report.summary_to_csv_string().unwrap();
        assert!(text.starts_with("method,eps,metric,mean,std\n"));
    }
}
