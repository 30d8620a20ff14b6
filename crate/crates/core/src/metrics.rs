//! Scores over segmentation ability maps.

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask};
use crate::protoseg::{protoseg, SegmentationAbilityMap};

/// Dice overlap of a SAM with a reference mask.
///
/// `defined` is false when the SAM could not be computed (an empty class
/// during prototype estimation); `value` is then meaningless and zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaScore {
    pub value: f64,
    pub defined: bool,
}

impl SaScore {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            defined: true,
        }
    }

    pub fn undefined() -> Self {
        Self {
            value: 0.0,
            defined: false,
        }
    }

    pub fn get(&self) -> Option<f64> {
        self.defined.then_some(self.value)
    }
}

/// Confusion counts of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl Overlap {
    pub fn between(s: &LabelMask, g: &LabelMask, positive_class: usize) -> Result<Self> {
        s.check_same_dims(g)?;
        let mut o = Overlap::default();
        for (&a, &b) in s.labels().iter().zip(g.labels()) {
            match (usize::from(a) == positive_class, usize::from(b) == positive_class) {
                (true, true) => o.true_pos += 1,
                (true, false) => o.false_pos += 1,
                (false, true) => o.false_neg += 1,
                (false, false) => {}
            }
        }
        Ok(o)
    }

    /// `2|S∩G| / (|S| + |G|)`; both empty counts as perfect agreement.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            (2 * self.true_pos) as f64 / denom as f64
        }
    }
}

pub fn sa_score(s: &LabelMask, g: &LabelMask, positive_class: usize) -> Result<SaScore> {
    Ok(SaScore::new(Overlap::between(s, g, positive_class)?.dice()))
}

/// Mean SA score over the defined unit scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSaScore {
    pub mu: f64,
    pub unit_count: usize,
}

/// Averages the defined scores; undefined ones are skipped.
pub fn mean_of_scores(scores: &[SaScore]) -> Result<MeanSaScore> {
    let defined: Vec<f64> = scores.iter().filter_map(SaScore::get).collect();
    if defined.is_empty() {
        return Err(Error::EmptyInput("no defined unit scores"));
    }
    Ok(MeanSaScore {
        mu: defined.iter().sum::<f64>() / defined.len() as f64,
        unit_count: defined.len(),
    })
}

/// μ of unit SAMs scored against `reference` (normally the network output).
///
/// `None` entries are units whose SAM was undefined; they are excluded.
pub fn mean_sa_score(
    unit_sams: &[Option<SegmentationAbilityMap>],
    reference: &LabelMask,
    positive_class: usize,
) -> Result<MeanSaScore> {
    if unit_sams.is_empty() {
        return Err(Error::EmptyInput("unit SAM list"));
    }
    let scores = unit_sams
        .iter()
        .map(|sam| match sam {
            Some(sam) => sa_score(&sam.mask, reference, positive_class),
            None => Ok(SaScore::undefined()),
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of_scores(&scores)
}

/// `SA(noisy) − SA(clean)`.
pub fn sa_difference(sa_noisy: SaScore, sa_clean: SaScore) -> Result<f64> {
    match (sa_noisy.get(), sa_clean.get()) {
        (Some(noisy), Some(clean)) => Ok(noisy - clean),
        _ => Err(Error::Undefined),
    }
}

/// How much the network output improves on segmenting the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRecord {
    pub image_id: String,
    /// SA score of the input-intensity SAM against ground truth.
    pub sa_input: f64,
    /// Dice of the network output against ground truth.
    pub dice_output: f64,
    pub d: f64,
}

/// Runs ProtoSeg on the input image itself, seeded by the network output.
pub fn separableness(
    image_id: &str,
    x: &FeatureMap,
    init_mask: &LabelMask,
    g: &LabelMask,
) -> Result<GainRecord> {
    init_mask.check_same_dims(g)?;
    let (_, sam) = protoseg(x, init_mask)?;
    let sa_input = sa_score(&sam.mask, g, 1)?.value;
    let dice_output = sa_score(init_mask, g, 1)?.value;
    Ok(GainRecord {
        image_id: image_id.to_string(),
        sa_input,
        dice_output,
        d: dice_output - sa_input,
    })
}

/// `m(d)`, the mean gain distance.
pub fn mean_gain(records: &[GainRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("gain records"));
    }
    Ok(records.iter().map(|r| r.d).sum::<f64>() / records.len() as f64)
}
