//! Per-sample evaluation records and distribution summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::MetricsError;

/// Five-number summary with Tukey whiskers and the empirical CDF, computed
/// over the finite entries only. Summary fields are absent when no finite
/// values exist.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryStats {
    pub count: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// Smallest value within 1.5 IQR below q1.
    pub whisker_lo: Option<f64>,
    /// Largest value within 1.5 IQR above q3.
    pub whisker_hi: Option<f64>,
    /// (value, cumulative probability) pairs over the sorted finite values.
    pub cdf: Vec<[f64; 2]>,
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 == n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> SummaryStats {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    if finite.is_empty() {
        return SummaryStats {
            count: 0,
            median: None,
            q1: None,
            q3: None,
            whisker_lo: None,
            whisker_hi: None,
            cdf: Vec::new(),
        };
    }
    let q1 = quantile(&finite, 0.25);
    let q3 = quantile(&finite, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = finite.iter().copied().find(|v| *v >= lo_fence);
    let whisker_hi = finite.iter().rev().copied().find(|v| *v <= hi_fence);
    let n = finite.len();
    let cdf = finite
        .iter()
        .enumerate()
        .map(|(i, v)| [*v, (i + 1) as f64 / n as f64])
        .collect();
    SummaryStats {
        count: n,
        median: Some(quantile(&finite, 0.5)),
        q1: Some(q1),
        q3: Some(q3),
        whisker_lo,
        whisker_hi,
        cdf,
    }
}

/// Per-sample metric columns plus distribution summaries.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub psnr_db: Vec<f64>,
    pub sgcs: Vec<f64>,
    pub se_bps_hz: Vec<f64>,
    pub psnr_summary: SummaryStats,
    pub sgcs_summary: SummaryStats,
    pub se_summary: SummaryStats,
}

impl EvalReport {
    pub fn from_samples(psnr_db: Vec<f64>, sgcs: Vec<f64>, se_bps_hz: Vec<f64>) -> Self {
        let psnr_summary = summarize(&psnr_db);
        let sgcs_summary = summarize(&sgcs);
        let se_summary = summarize(&se_bps_hz);
        EvalReport {
            psnr_db,
            sgcs,
            se_bps_hz,
            psnr_summary,
            sgcs_summary,
            se_summary,
        }
    }

    pub fn median_psnr_db(&self) -> Option<f64> {
        self.psnr_summary.median
    }

    pub fn median_sgcs(&self) -> Option<f64> {
        self.sgcs_summary.median
    }

    pub fn median_se(&self) -> Option<f64> {
        self.se_summary.median
    }

    /// One row per sample; exact matches print their PSNR as `inf`.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "sample,psnr_db,sgcs,se_bps_hz")?;
        for i in 0..self.psnr_db.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i, self.psnr_db[i], self.sgcs[i], self.se_bps_hz[i]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summaries only, as JSON.
    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        #[derive(Serialize)]
        struct Summaries<'a> {
            samples: usize,
            psnr_db: &'a SummaryStats,
            sgcs: &'a SummaryStats,
            se_bps_hz: &'a SummaryStats,
        }
        let out = Summaries {
            samples: self.psnr_db.len(),
            psnr_db: &self.psnr_summary,
            sgcs: &self.sgcs_summary,
            se_bps_hz: &self.se_summary,
        };
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), &out)
            .map_err(|e| MetricsError::Format(format!("summary serialization: {e}")))?;
        Ok(())
    }
}
