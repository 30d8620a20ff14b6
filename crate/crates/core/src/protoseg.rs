//! Parameter-free prototype segmentation.
//!
//! Class prototypes are mask-weighted means of the feature vectors. Every
//! pixel is then scored by a softmax over negative squared Euclidean
//! distances to the prototypes, and the hard segmentation ability map (SAM)
//! is the per-pixel argmax of those probabilities.

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask, SoftMask};

/// One center per class, each of length `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    num_classes: usize,
    channels: usize,
    centers: Vec<f64>,
    member_counts: Vec<usize>,
}

impl PrototypeSet {
    /// Builds a set from explicit centers (`num_classes × channels`, class-major).
    pub fn from_centers(
        num_classes: usize,
        channels: usize,
        centers: Vec<f64>,
        member_counts: Vec<usize>,
    ) -> Result<Self> {
        if num_classes < 2 || channels == 0 {
            return Err(Error::InvalidValue(format!(
                "prototype set needs >= 2 classes and >= 1 channel, got {num_classes}x{channels}"
            )));
        }
        if centers.len() != num_classes * channels || member_counts.len() != num_classes {
            return Err(Error::dims(
                format!("{num_classes}x{channels} centers"),
                format!("{} centers, {} counts", centers.len(), member_counts.len()),
            ));
        }
        if let Some(k) = member_counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(k));
        }
        Ok(Self {
            num_classes,
            channels,
            centers,
            member_counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.centers[class * self.channels..(class + 1) * self.channels]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn member_counts(&self) -> &[usize] {
        &self.member_counts
    }
}

/// Weighted class means. `weight(i, k)` is the membership of pixel `i` in class `k`.
fn weighted_means(
    f: &FeatureMap,
    num_classes: usize,
    weight: impl Fn(usize, usize) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let c = f.channels();
    let mut sums = vec![0.0f64; num_classes * c];
    let mut totals = vec![0.0f64; num_classes];
    for i in 0..f.pixels() {
        let px = f.pixel(i);
        for k in 0..num_classes {
            let w = weight(i, k);
            if w == 0.0 {
                continue;
            }
            totals[k] += w;
            let row = &mut sums[k * c..(k + 1) * c];
            for (s, &v) in row.iter_mut().zip(px) {
                *s += w * f64::from(v);
            }
        }
    }
    for k in 0..num_classes {
        if totals[k] > 0.0 {
            for s in &mut sums[k * c..(k + 1) * c] {
                *s /= totals[k];
            }
        }
    }
    (sums, totals)
}

/// Per-class mean feature over pixels carrying that label.
pub fn compute_prototypes(f: &FeatureMap, mask: &LabelMask) -> Result<PrototypeSet> {
    f.check_spatial(mask.height(), mask.width())?;
    let k = mask.num_classes();
    let mut counts = vec![0usize; k];
    for &l in mask.labels() {
        counts[usize::from(l)] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let labels = mask.labels();
    let (centers, _) = weighted_means(f, k, |i, class| {
        if usize::from(labels[i]) == class {
            1.0
        } else {
            0.0
        }
    });
    PrototypeSet::from_centers(k, f.channels(), centers, counts)
}

/// Binary prototypes from a soft initial mask `B ∈ [0, 1]`.
///
/// The object center is `Σ B_i f_i / Σ B_i` and the background center uses
/// `1 − B_i`. Class membership counts (and `EmptyClass`) use the 0.5 threshold.
pub fn compute_prototypes_soft(f: &FeatureMap, mask: &SoftMask) -> Result<PrototypeSet> {
    f.check_spatial(mask.height(), mask.width())?;
    let hard = mask.binarize();
    let counts = vec![hard.count(0), hard.count(1)];
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let w = mask.weights();
    let (centers, _) = weighted_means(f, 2, |i, class| if class == 1 { w[i] } else { 1.0 - w[i] });
    PrototypeSet::from_centers(2, f.channels(), centers, counts)
}

/// Per-pixel class probabilities, `H×W×K`, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbabilityMap {
    /// Validates that every row is a probability distribution (sum within 1e-6).
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width * num_classes || num_classes < 2 {
            return Err(Error::dims(
                format!("{height}x{width}x{num_classes} probabilities"),
                format!("{}", probs.len()),
            ));
        }
        for (i, row) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidValue(format!(
                    "pixel {i} is not a probability distribution: {row:?}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// The `H×W` plane of class `k`.
    pub fn class_channel(&self, k: usize) -> Vec<f64> {
        self.probs
            .chunks_exact(self.num_classes)
            .map(|row| row[k])
            .collect()
    }
}

/// Negative squared distances from one pixel to every prototype.
pub(crate) fn pixel_logits(px: &[f32], protos: &PrototypeSet, out: &mut [f64]) {
    for (k, logit) in out.iter_mut().enumerate() {
        let d: f64 = px
            .iter()
            .zip(protos.center(k))
            .map(|(&v, &c)| {
                let diff = f64::from(v) - c;
                diff * diff
            })
            .sum();
        *logit = -d;
    }
}

/// In-place max-shifted softmax. Saturates to one-hot instead of overflowing.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn probability_map(f: &FeatureMap, protos: &PrototypeSet) -> Result<ProbabilityMap> {
    Ok(segment(f, protos)?.0)
}

/// Index of the largest value; only a strictly larger value displaces the
/// current best, so ties go to the lowest index.
fn argmax(row: &[f64]) -> u8 {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best as u8
}

/// Probabilities and hard labels in one pass. Labels are taken from the
/// logits, before rounding in the softmax can merge near-equal classes.
fn segment(f: &FeatureMap, protos: &PrototypeSet) -> Result<(ProbabilityMap, Vec<u8>)> {
    if f.channels() != protos.channels() {
        return Err(Error::dims(
            format!("{} channels", protos.channels()),
            format!("{} channels", f.channels()),
        ));
    }
    let k = protos.num_classes();
    let mut probs = vec![0.0f64; f.pixels() * k];
    let mut labels = Vec::with_capacity(f.pixels());
    for (i, row) in probs.chunks_exact_mut(k).enumerate() {
        pixel_logits(f.pixel(i), protos, row);
        labels.push(argmax(row));
        softmax_in_place(row);
    }
    let p = ProbabilityMap {
        height: f.height(),
        width: f.width(),
        num_classes: k,
        probs,
    };
    Ok((p, labels))
}

/// Hard segmentation map derived from a [`ProbabilityMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationAbilityMap {
    pub mask: LabelMask,
    pub source_layer: Option<u32>,
    pub source_unit: Option<u32>,
}

/// Per-pixel argmax. A class only wins with a strictly larger probability, so
/// ties go to the lowest index (background in the binary case).
pub fn hard_segment(p: &ProbabilityMap) -> SegmentationAbilityMap {
    let labels = p
        .probs
        .chunks_exact(p.num_classes)
        .map(argmax)
        .collect();
    SegmentationAbilityMap {
        mask: LabelMask::new(p.height, p.width, p.num_classes, labels)
            .expect("argmax labels are within the class count"),
        source_layer: None,
        source_unit: None,
    }
}

/// Prototypes from `init_mask`, then the soft map and its hard SAM.
pub fn protoseg(
    f: &FeatureMap,
    init_mask: &LabelMask,
) -> Result<(ProbabilityMap, SegmentationAbilityMap)> {
    let protos = compute_prototypes(f, init_mask)?;
    finish(f, &protos)
}

/// [`protoseg`] seeded by a soft initial mask.
pub fn protoseg_soft(
    f: &FeatureMap,
    init_mask: &SoftMask,
) -> Result<(ProbabilityMap, SegmentationAbilityMap)> {
    let protos = compute_prototypes_soft(f, init_mask)?;
    finish(f, &protos)
}

fn finish(
    f: &FeatureMap,
    protos: &PrototypeSet,
) -> Result<(ProbabilityMap, SegmentationAbilityMap)> {
    let (p, labels) = segment(f, protos)?;
    let mask = LabelMask::new(p.height, p.width, p.num_classes, labels)?;
    let sam = SegmentationAbilityMap {
        mask,
        source_layer: f.layer_id,
        source_unit: f.unit_id,
    };
    Ok((p, sam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmap(h: usize, w: usize, c: usize, v: &[f32]) -> FeatureMap {
        FeatureMap::new(h, w, c, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_features_give_equal_centers() {
        let f = fmap(2, 2, 3, &[0.25, -1.0, 4.0].repeat(4));
        let mask = LabelMask::from_rows(&[&[1, 0], &[0, 0]]).unwrap();
        let p = compute_prototypes(&f, &mask).unwrap();
        assert_eq!(p.center(0), &[0.25, -1.0, 4.0]);
        assert_eq!(p.center(1), &[0.25, -1.0, 4.0]);
        assert_eq!(p.member_counts(), &[3, 1]);
    }

    #[test]
    fn diagonal_mask_means() {
        let f = fmap(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        let mask = LabelMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let p = compute_prototypes(&f, &mask).unwrap();
        // object: (1 + 4) / 2, background: (2 + 3) / 2
        assert_eq!(p.center(1), &[2.5]);
        assert_eq!(p.center(0), &[2.5]);
    }

    #[test]
    fn all_object_mask_has_empty_background() {
        let f = fmap(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        let mask = LabelMask::from_rows(&[&[1, 1], &[1, 1]]).unwrap();
        assert!(matches!(compute_prototypes(&f, &mask), Err(Error::EmptyClass(0))));
    }

    #[test]
    fn prototypes_reject_spatial_mismatch() {
        let f = fmap(2, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        let mask = LabelMask::binary(1, 4, vec![0, 1, 0, 1]).unwrap();
        assert!(matches!(
            compute_prototypes(&f, &mask),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn soft_prototypes_weight_by_mask() {
        let f = fmap(1, 2, 1, &[0.0, 10.0]);
        let soft = SoftMask::new(1, 2, vec![0.25, 0.75]).unwrap();
        let p = compute_prototypes_soft(&f, &soft).unwrap();
        // object: (0.25*0 + 0.75*10) / 1.0, background: (0.75*0 + 0.25*10) / 1.0
        assert_eq!(p.center(1), &[7.5]);
        assert_eq!(p.center(0), &[2.5]);
        assert_eq!(p.member_counts(), &[1, 1]);

        let all_low = SoftMask::new(1, 2, vec![0.1, 0.4]).unwrap();
        assert!(matches!(
            compute_prototypes_soft(&f, &all_low),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn identical_prototypes_give_half() {
        let f = fmap(2, 2, 2, &[0.3, 1.0, 5.0, -2.0, 0.0, 0.0, 9.0, 9.0]);
        let protos = PrototypeSet::from_centers(2, 2, vec![1.0, 1.0, 1.0, 1.0], vec![1, 1]).unwrap();
        let p = probability_map(&f, &protos).unwrap();
        assert!(p.probs().iter().all(|&v| v == 0.5));
        assert!(hard_segment(&p).mask.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn separated_scalar_softmax() {
        let f = fmap(2, 2, 1, &[0.0, 0.0, 10.0, 10.0]);
        // class 0 = background at 10, class 1 = object at 0
        let protos = PrototypeSet::from_centers(2, 1, vec![10.0, 0.0], vec![2, 2]).unwrap();
        let p = probability_map(&f, &protos).unwrap();
        // logits (bg, obj) at value 0 are (-100, 0): p_obj = 1 / (1 + e^-100)
        let expected = 1.0 / (1.0 + (-100.0f64).exp());
        assert_eq!(p.pixel(0)[1], expected);
        assert!((p.pixel(0)[1] - 1.0).abs() < 1e-15);
        let sam = hard_segment(&p);
        assert_eq!(sam.mask.labels(), &[1, 1, 0, 0]);
    }

    #[test]
    fn one_hot_probabilities_round_trip() {
        let labels = vec![2u8, 0, 1, 1, 0, 2];
        let mut probs = vec![0.0; 18];
        for (i, &l) in labels.iter().enumerate() {
            probs[i * 3 + usize::from(l)] = 1.0;
        }
        let p = ProbabilityMap::new(2, 3, 3, probs).unwrap();
        assert_eq!(hard_segment(&p).mask.labels(), labels.as_slice());
    }

    #[test]
    fn multiclass_ties_go_to_lowest_index() {
        let p = ProbabilityMap::new(1, 1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(hard_segment(&p).mask.labels(), &[1]);
    }

    #[test]
    fn probability_map_rejects_channel_mismatch() {
        let f = fmap(1, 1, 2, &[0.0, 1.0]);
        let protos = PrototypeSet::from_centers(2, 1, vec![0.0, 1.0], vec![1, 1]).unwrap();
        assert!(matches!(
            probability_map(&f, &protos),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn mask_as_feature_is_fixpoint() {
        let mask = LabelMask::from_rows(&[&[0, 1, 1], &[0, 0, 1]]).unwrap();
        let (_, sam) = protoseg(&FeatureMap::from_mask(&mask), &mask).unwrap();
        assert_eq!(sam.mask, mask);
    }

    #[test]
    fn constant_features_give_background() {
        let f = fmap(2, 2, 1, &[3.0; 4]);
        let mask = LabelMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let (_, sam) = protoseg(&f, &mask).unwrap();
        assert!(sam.mask.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn huge_separation_saturates_without_nan() {
        let f = fmap(1, 2, 1, &[0.0, 1e6]);
        let mask = LabelMask::binary(1, 2, vec![1, 0]).unwrap();
        let (p, sam) = protoseg(&f, &mask).unwrap();
        assert_eq!(p.probs(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(sam.mask.labels(), &[1, 0]);
    }

    #[test]
    fn sam_carries_source_ids() {
        let mask = LabelMask::binary(1, 2, vec![1, 0]).unwrap();
        let mut f = FeatureMap::from_mask(&mask).with_layer(4);
        f.unit_id = Some(9);
        let (_, sam) = protoseg(&f, &mask).unwrap();
        assert_eq!((sam.source_layer, sam.source_unit), (Some(4), Some(9)));
    }

    fn feature_and_mask() -> impl Strategy<Value = (FeatureMap, LabelMask)> {
        (1usize..5, 2usize..5, 1usize..4).prop_flat_map(|(h, w, c)| {
            (
                prop::collection::vec(-50.0f32..50.0, h * w * c),
                prop::collection::vec(0u8..2, h * w),
            )
                .prop_map(move |(v, mut l)| {
                    l[0] = 0;
                    l[1] = 1;
                    (
                        FeatureMap::new(h, w, c, v).unwrap(),
                        LabelMask::binary(h, w, l).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn probabilities_are_normalized((f, mask) in feature_and_mask()) {
            let (p, _) = protoseg(&f, &mask).unwrap();
            for row in p.probs().chunks_exact(2) {
                prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn prototypes_are_convex((f, mask) in feature_and_mask()) {
            let protos = compute_prototypes(&f, &mask).unwrap();
            for k in 0..2 {
                for ch in 0..f.channels() {
                    let members = (0..f.pixels())
                        .filter(|&i| usize::from(mask.labels()[i]) == k)
                        .map(|i| f64::from(f.pixel(i)[ch]));
                    let (lo, hi) = members.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                    let c = protos.center(k)[ch];
                    prop_assert!(c >= lo - 1e-9 && c <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn channel_permutation_keeps_sam((f, mask) in feature_and_mask(), rot in 0usize..3) {
            let c = f.channels();
            let permuted: Vec<f32> = f
                .values()
                .chunks_exact(c)
                .flat_map(|px| (0..c).map(move |ch| px[(ch + rot) % c]))
                .collect();
            let g = FeatureMap::new(f.height(), f.width(), c, permuted).unwrap();
            let (_, a) = protoseg(&f, &mask).unwrap();
            let (_, b) = protoseg(&g, &mask).unwrap();
            prop_assert_eq!(a.mask, b.mask);
        }
    }
}
