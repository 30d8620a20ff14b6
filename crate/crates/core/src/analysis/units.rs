//! Per-unit analysis of one layer: unit SAMs, sorted unit scores, the
//! active/inertia split, and averaged unit-SAM heatmaps.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::feature::{extract_unit, FeatureMap, LabelMask};
use crate::io::render::Heatmap;
use crate::io::report::{Cell, Report, Table};
use crate::metrics::{sa_score, SaScore};
use crate::protoseg::{protoseg, SegmentationAbilityMap};

/// SAM of every unit of `layer`, or `None` where the unit is degenerate.
pub fn unit_sams(layer: &FeatureMap, init_mask: &LabelMask) -> Result<Vec<Option<SegmentationAbilityMap>>> {
    (0..layer.channels())
        .map(|c| {
            let unit = extract_unit(layer, c)?;
            match protoseg(&unit, init_mask) {
                Ok((_, sam)) => Ok(Some(sam)),
                Err(Error::EmptyClass(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitScore {
    pub unit_id: u32,
    pub score: SaScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSweepReport {
    pub layer_id: Option<u32>,
    /// Defined scores descending (ties by unit id), then undefined units.
    pub units: Vec<UnitScore>,
    /// Number of active units, when at least two scores are defined.
    pub boundary: Option<usize>,
}

impl UnitSweepReport {
    pub fn defined_scores(&self) -> Vec<f64> {
        self.units.iter().filter_map(|u| u.score.get()).collect()
    }
}

/// Descending by score, undefined last; stable, so ties keep unit order.
fn by_score_desc(a: &UnitScore, b: &UnitScore) -> Ordering {
    match (a.score.get(), b.score.get()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Scores every unit of a layer against `g`, seeding ProtoSeg with `init_mask`.
pub fn unit_sweep(layer: &FeatureMap, init_mask: &LabelMask, g: &LabelMask) -> Result<UnitSweepReport> {
    init_mask.check_same_dims(g)?;
    let sams = unit_sams(layer, init_mask)?;
    let mut units = sams
        .iter()
        .enumerate()
        .map(|(c, sam)| {
            let score = match sam {
                Some(sam) => sa_score(&sam.mask, g, 1)?,
                None => SaScore::undefined(),
            };
            Ok(UnitScore {
                unit_id: c as u32,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    units.sort_by(by_score_desc);
    let defined: Vec<f64> = units.iter().filter_map(|u| u.score.get()).collect();
    let boundary = split_active_inertia(&defined).ok();
    Ok(UnitSweepReport {
        layer_id: layer.layer_id,
        units,
        boundary,
    })
}

/// Index of the first inertia unit: the position after the largest drop
/// between consecutive sorted scores. Ties go to the earliest gap.
pub fn split_active_inertia(sorted_scores: &[f64]) -> Result<usize> {
    if sorted_scores.len() < 2 {
        return Err(Error::TooFewUnits(sorted_scores.len()));
    }
    if let Some(i) = sorted_scores.windows(2).position(|w| w[1] > w[0] || w[0].is_nan() || w[1].is_nan()) {
        return Err(Error::PreconditionViolation(format!(
            "scores must be sorted descending (violated at index {})",
            i + 1
        )));
    }
    let mut best = 1;
    let mut best_gap = sorted_scores[0] - sorted_scores[1];
    for i in 2..sorted_scores.len() {
        let gap = sorted_scores[i - 1] - sorted_scores[i];
        if gap > best_gap {
            best = i;
            best_gap = gap;
        }
    }
    Ok(best)
}

/// Per-pixel fraction of SAMs marking the pixel as object.
pub fn unit_heatmap<'a, I>(unit_sams: I) -> Result<Heatmap>
where
    I: IntoIterator<Item = &'a LabelMask>,
{
    let mut iter = unit_sams.into_iter();
    let first = iter.next().ok_or(Error::EmptyInput("unit SAM list"))?;
    let mut counts: Vec<u32> = first.labels().iter().map(|&l| u32::from(l != 0)).collect();
    let mut n = 1u32;
    for sam in iter {
        first.check_same_dims(sam)?;
        for (c, &l) in counts.iter_mut().zip(sam.labels()) {
            *c += u32::from(l != 0);
        }
        n += 1;
    }
    let values = counts.iter().map(|&c| f64::from(c) / f64::from(n)).collect();
    Heatmap::new(first.height(), first.width(), values)
}

impl Report for UnitSweepReport {
    fn kind(&self) -> &'static str {
        "unit_sweep"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut units = Table::new(&["rank", "unit", "sa_score", "group"]);
        for (rank, u) in self.units.iter().enumerate() {
            let group = match (u.score.defined, self.boundary) {
                (false, _) => "undefined",
                (true, Some(b)) if rank < b => "active",
                (true, Some(_)) => "inertia",
                (true, None) => "unsplit",
            };
            units.push(vec![rank.into(), u.unit_id.into(), Cell::from(u.score.get()), group.into()]);
        }
        let defined = self.defined_scores();
        let mut summary = Table::new(&["layer", "units", "defined", "active", "mean_sa"]);
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        summary.push(vec![
            Cell::from(self.layer_id),
            self.units.len().into(),
            defined.len().into(),
            Cell::from(self.boundary),
            Cell::from(mean),
        ]);
        vec![("units", units), ("summary", summary)]
    }
}
