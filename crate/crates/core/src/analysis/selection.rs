//! μ-driven image triage: ranking lists and coverage (rejection) tables.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::io::report::{Cell, Report, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    /// `(image, μ)`, lowest μ first.
    pub order: Vec<(String, f64)>,
}

/// Lowest-μ images first, since they most need a second look. Ties by id.
pub fn rank_images(mu_per_image: &[(String, f64)]) -> Result<RankingReport> {
    if mu_per_image.is_empty() {
        return Err(Error::EmptyInput("image scores"));
    }
    let mut order = mu_per_image.to_vec();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankingReport { order })
}

impl Report for RankingReport {
    fn kind(&self) -> &'static str {
        "ranking"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut t = Table::new(&["rank", "image", "mu"]);
        for (i, (id, mu)) in self.order.iter().enumerate() {
            t.push(vec![(i + 1).into(), id.as_str().into(), (*mu).into()]);
        }
        vec![("ranking", t)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub image: String,
    pub mu: f64,
    /// Dice against ground truth; absent when deployed without labels.
    pub dice: Option<f64>,
}

impl CoverageRecord {
    pub fn new(image: impl Into<String>, mu: f64, dice: Option<f64>) -> Self {
        Self {
            image: image.into(),
            mu,
            dice,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    /// Requested coverage in percent.
    pub coverage: f64,
    pub retained: usize,
    pub mean_dice: Option<f64>,
    /// Population standard deviation of the retained dice.
    pub std_dice: Option<f64>,
    /// Retained image ids, highest μ first.
    pub retained_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub total: usize,
    pub rows: Vec<CoverageRow>,
    /// All records, highest μ first (ties by id).
    pub ranked: Vec<CoverageRecord>,
}

/// Number of records kept at `coverage` percent of `total`.
pub fn retained_count(coverage: f64, total: usize) -> usize {
    let exact = coverage * total as f64 / 100.0;
    // shave float noise so that e.g. 70% of 10 stays 7, not 8
    let n = (exact - 1e-9 * exact.max(1.0)).ceil().max(0.0) as usize;
    n.min(total)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Keeps the top-μ fraction of images at each coverage and summarises their dice.
pub fn coverage_table(records: &[CoverageRecord], coverages: &[f64]) -> Result<CoverageTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput("coverage records"));
    }
    let with_dice = records.iter().filter(|r| r.dice.is_some()).count();
    if with_dice != 0 && with_dice != records.len() {
        return Err(Error::PreconditionViolation(format!(
            "dice given for {with_dice} of {} records; supply all or none",
            records.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| !r.mu.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite mu for {}", r.image)));
    }
    if let Some(c) = coverages.iter().find(|c| !(**c >= 0.0 && **c <= 100.0)) {
        return Err(Error::InvalidValue(format!("coverage {c} outside [0, 100]")));
    }
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| match b.mu.total_cmp(&a.mu) {
        Ordering::Equal => a.image.cmp(&b.image),
        o => o,
    });
    let rows = coverages
        .iter()
        .map(|&coverage| {
            let kept = &ranked[..retained_count(coverage, ranked.len())];
            let dice: Option<Vec<f64>> = kept.iter().map(|r| r.dice).collect();
            let stats = dice.filter(|d| !d.is_empty()).map(|d| mean_std(&d));
            CoverageRow {
                coverage,
                retained: kept.len(),
                mean_dice: stats.map(|s| s.0),
                std_dice: stats.map(|s| s.1),
                retained_ids: kept.iter().map(|r| r.image.clone()).collect(),
            }
        })
        .collect();
    Ok(CoverageTable {
        total: ranked.len(),
        rows,
        ranked,
    })
}

impl Report for CoverageTable {
    fn kind(&self) -> &'static str {
        "coverage"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut cov = Table::new(&["coverage", "retained", "total", "mean_dice", "std_dice"]);
        let mut part = Table::new(&["coverage", "image", "mu", "dice", "retained"]);
        for row in &self.rows {
            cov.push(vec![
                row.coverage.into(),
                row.retained.into(),
                self.total.into(),
                row.mean_dice.into(),
                row.std_dice.into(),
            ]);
            for (i, r) in self.ranked.iter().enumerate() {
                part.push(vec![
                    row.coverage.into(),
                    r.image.as_str().into(),
                    r.mu.into(),
                    Cell::from(r.dice),
                    (i < row.retained).into(),
                ]);
            }
        }
        vec![("coverage", cov), ("partition", part)]
    }
}
