use std::io::Write;

use serde::Serialize;

use crate::uq::UqError;

/// One metric row: point value plus an optional 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub split: String,
    pub value: f64,
    pub ci: Option<(f64, f64)>,
}

impl MetricReport {
    pub fn point(metric: impl Into<String>, split: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            split: split.into(),
            value,
            ci: None,
        }
    }

    /// Percentile intervals can miss the full-sample value on skewed
    /// metrics; the interval is widened to contain it.
    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci = Some((lo.min(self.value), hi.max(self.value)));
        self
    }
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    split: &'a str,
    value: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
}

pub fn write_metric_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(MetricRow {
            metric: &r.metric,
            split: &r.split,
            value: r.value,
            ci_lo: r.ci.map(|c| c.0),
            ci_hi: r.ci.map(|c| c.1),
        })?;
    }
    if reports.is_empty() {
        w.write_record(["metric", "split", "value", "ci_lo", "ci_hi"])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed and
/// values outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram, UqError> {
    if bins == 0 {
        return Err(UqError::NoBins);
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Serialize)]
struct HistRow {
    bin_left: f64,
    bin_right: f64,
    count: usize,
}

pub fn write_histogram_csv<W: Write>(hist: &Histogram, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (b, &count) in hist.counts.iter().enumerate() {
        w.serialize(HistRow {
            bin_left: hist.edges[b],
            bin_right: hist.edges[b + 1],
            count,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_rows() {
        let reports = vec![
            MetricReport::point("auc_roc", "test", 0.8).with_ci(0.75, 0.85),
            MetricReport::point("nll", "test", 0.4),
        ];
        let mut buf = Vec::new();
        write_metric_csv(&reports, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "metric,split,value,ci_lo,ci_hi\nauc_roc,test,0.8,0.75,0.85\nnll,test,0.4,,\n"
        );
        let widened = MetricReport::point("x", "t", 0.9).with_ci(0.5, 0.8);
        assert_eq!(widened.ci, Some((0.5, 0.9)));
    }

    #[test]
    fn histogram_rows() {
        let h = histogram(&[0.0, 0.1, 0.5, 0.99, 1.0], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![2, 3]);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        let mut buf = Vec::new();
        write_histogram_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_left,bin_right,count\n0.0,0.5,2\n0.5,1.0,3\n");
    }
}
