//! Differentiable soft ProtoSeg.
//!
//! The hard SA score goes through an argmax and has no useful gradient, so the
//! training surrogate is a soft Dice loss on the positive-class probability
//! channel. Gradients with respect to the feature map are derived by hand for
//! this one graph: prototype means, squared-distance logits, softmax, soft Dice.
//!
//! Analytic gradients run in `f64`, independent of the storage precision of
//! the incoming [`FeatureMap`]; the finite-difference verifier evaluates the
//! loss in double-double.

use crate::ddouble::{DoubleDouble, Real};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask};
use crate::protoseg::ProbabilityMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Whether gradients flow through the prototype means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    #[default]
    ThroughPrototypes,
    DetachedPrototypes,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "through" | "through_prototypes" => Ok(Self::ThroughPrototypes),
            "detached" | "detached_prototypes" => Ok(Self::DetachedPrototypes),
            other => Err(Error::InvalidValue(format!("unknown grad mode {other:?}"))),
        }
    }
}

impl GradMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ThroughPrototypes => "through",
            Self::DetachedPrototypes => "detached",
        }
    }
}

/// Soft Dice loss settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub positive_class: usize,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            positive_class: 1,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Double-precision `H×W×C` tensor, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatures {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl DenseFeatures {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidValue("feature dims must be positive".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::dims(
                format!("{} values", height * width * channels),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite feature value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl From<&FeatureMap> for DenseFeatures {
    fn from(f: &FeatureMap) -> Self {
        Self {
            height: f.height(),
            width: f.width(),
            channels: f.channels(),
            values: f.values().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// `∂L/∂f`, same layout as the feature map it was taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl GradientTensor {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε)` over the positive-class channel.
pub fn soft_dice_loss(
    p: &ProbabilityMap,
    g: &LabelMask,
    positive_class: usize,
    epsilon: f64,
) -> Result<f64> {
    if p.height() != g.height() || p.width() != g.width() {
        return Err(Error::dims(
            format!("{}x{}", p.height(), p.width()),
            format!("{}x{}", g.height(), g.width()),
        ));
    }
    if positive_class >= p.num_classes() {
        return Err(Error::IndexOutOfRange {
            index: positive_class,
            len: p.num_classes(),
        });
    }
    check_epsilon(epsilon)?;
    let probs = p.class_channel(positive_class);
    let target = indicator(g, positive_class);
    Ok(soft_dice(&probs, &target, epsilon).loss)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::PreconditionViolation(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

fn indicator(g: &LabelMask, class: usize) -> Vec<f64> {
    g.labels()
        .iter()
        .map(|&l| if usize::from(l) == class { 1.0 } else { 0.0 })
        .collect()
}

struct SoftDice<T> {
    loss: T,
    numerator: T,
    denominator: T,
}

fn soft_dice<T: Real>(probs: &[T], target: &[f64], epsilon: f64) -> SoftDice<T> {
    let mut inter = T::from(0.0);
    let mut sum_p = T::from(0.0);
    let mut sum_g = T::from(0.0);
    for (&p, &t) in probs.iter().zip(target) {
        if t != 0.0 {
            inter = inter + p * T::from(t);
        }
        sum_p = sum_p + p;
        sum_g = sum_g + T::from(t);
    }
    let numerator = T::from(2.0) * inter + T::from(epsilon);
    let denominator = sum_p + sum_g + T::from(epsilon);
    SoftDice {
        loss: T::from(1.0) - numerator / denominator,
        numerator,
        denominator,
    }
}

/// The fixed parts of one loss evaluation: class weights and targets.
struct Graph {
    num_classes: usize,
    /// One-hot class weights per pixel, `N×K`.
    weights: Vec<f64>,
    totals: Vec<f64>,
    target: Vec<f64>,
    config: LossConfig,
}

struct Forward<T> {
    centers: Vec<T>,
    probs: Vec<T>,
    dice: SoftDice<T>,
}

/// Max-shifted softmax over any [`Real`].
fn softmax_generic<T: Real>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::from(0.0);
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

impl Graph {
    fn new(
        f: &DenseFeatures,
        init_mask: &LabelMask,
        g: &LabelMask,
        config: LossConfig,
    ) -> Result<Self> {
        for m in [init_mask, g] {
            if m.height() != f.height || m.width() != f.width {
                return Err(Error::dims(
                    format!("{}x{}", f.height, f.width),
                    format!("{}x{}", m.height(), m.width()),
                ));
            }
        }
        let k = init_mask.num_classes();
        if config.positive_class >= k {
            return Err(Error::IndexOutOfRange {
                index: config.positive_class,
                len: k,
            });
        }
        check_epsilon(config.epsilon)?;
        let mut weights = vec![0.0; f.pixels() * k];
        let mut totals = vec![0.0; k];
        for (i, &l) in init_mask.labels().iter().enumerate() {
            weights[i * k + usize::from(l)] = 1.0;
            totals[usize::from(l)] += 1.0;
        }
        if let Some(empty) = totals.iter().position(|&t| t == 0.0) {
            return Err(Error::EmptyClass(empty));
        }
        Ok(Self {
            num_classes: k,
            weights,
            totals,
            target: indicator(g, config.positive_class),
            config,
        })
    }

    fn centers<T: Real>(&self, values: &[T], channels: usize) -> Vec<T> {
        let (k, c) = (self.num_classes, channels);
        let mut centers = vec![T::from(0.0); k * c];
        for (px, w) in values.chunks_exact(c).zip(self.weights.chunks_exact(k)) {
            for class in 0..k {
                if w[class] != 0.0 {
                    let weight = T::from(w[class]);
                    for (acc, &v) in centers[class * c..(class + 1) * c].iter_mut().zip(px) {
                        *acc = *acc + weight * v;
                    }
                }
            }
        }
        for class in 0..k {
            let total = T::from(self.totals[class]);
            for acc in &mut centers[class * c..(class + 1) * c] {
                *acc = *acc / total;
            }
        }
        centers
    }

    fn forward<T: Real>(&self, values: &[T], channels: usize, fixed: Option<&[T]>) -> Forward<T> {
        let (k, c) = (self.num_classes, channels);
        let centers = fixed.map_or_else(|| self.centers(values, c), <[T]>::to_vec);
        let mut probs = vec![T::from(0.0); values.len() / c * k];
        for (px, row) in values.chunks_exact(c).zip(probs.chunks_exact_mut(k)) {
            for (class, logit) in row.iter_mut().enumerate() {
                let mut d = T::from(0.0);
                for (&v, &m) in px.iter().zip(&centers[class * c..(class + 1) * c]) {
                    let diff = v - m;
                    d = d + diff * diff;
                }
                *logit = -d;
            }
            softmax_generic(row);
        }
        let positive: Vec<T> = probs
            .chunks_exact(k)
            .map(|row| row[self.config.positive_class])
            .collect();
        let dice = soft_dice(&positive, &self.target, self.config.epsilon);
        Forward {
            centers,
            probs,
            dice,
        }
    }

    fn backward(&self, f: &DenseFeatures, fwd: &Forward<f64>, mode: GradMode) -> Vec<f64> {
        let (k, c) = (self.num_classes, f.channels);
        let pos = self.config.positive_class;
        let (num, den) = (fwd.dice.numerator, fwd.dice.denominator);
        let mut grad = vec![0.0; f.values.len()];
        // ∂L/∂centers, accumulated for the through-prototypes term
        let mut center_grad = vec![0.0; k * c];
        let mut dz = vec![0.0; k];
        for i in 0..f.pixels() {
            let row = &fwd.probs[i * k..(i + 1) * k];
            let q = row[pos];
            let dl_dq = (num - 2.0 * self.target[i] * den) / (den * den);
            for (class, d) in dz.iter_mut().enumerate() {
                let delta = if class == pos { 1.0 } else { 0.0 };
                *d = dl_dq * q * (delta - row[class]);
            }
            let px = &f.values[i * c..(i + 1) * c];
            let out = &mut grad[i * c..(i + 1) * c];
            for (class, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let center = &fwd.centers[class * c..(class + 1) * c];
                let cg = &mut center_grad[class * c..(class + 1) * c];
                for ch in 0..c {
                    let diff = px[ch] - center[ch];
                    out[ch] -= 2.0 * d * diff;
                    cg[ch] += 2.0 * d * diff;
                }
            }
        }
        if mode == GradMode::ThroughPrototypes {
            for i in 0..f.pixels() {
                let w = &self.weights[i * k..(i + 1) * k];
                let out = &mut grad[i * c..(i + 1) * c];
                for class in 0..k {
                    if w[class] == 0.0 {
                        continue;
                    }
                    let scale = w[class] / self.totals[class];
                    for (o, &g) in out.iter_mut().zip(&center_grad[class * c..(class + 1) * c]) {
                        *o += g * scale;
                    }
                }
            }
        }
        grad
    }
}

/// Soft Dice loss of the full forward graph at `f`.
pub fn protoseg_loss(
    f: &DenseFeatures,
    init_mask: &LabelMask,
    g: &LabelMask,
    config: LossConfig,
) -> Result<f64> {
    let graph = Graph::new(f, init_mask, g, config)?;
    Ok(graph.forward(&f.values, f.channels, None).dice.loss)
}

/// Analytic `∂L/∂f` with the default loss configuration.
pub fn protoseg_backward(
    f: &FeatureMap,
    init_mask: &LabelMask,
    g: &LabelMask,
    mode: GradMode,
) -> Result<GradientTensor> {
    protoseg_backward_dense(&f.into(), init_mask, g, mode, LossConfig::default())
        .map(|(_, grad)| grad)
}

/// Loss value and analytic gradient in double precision.
pub fn protoseg_backward_dense(
    f: &DenseFeatures,
    init_mask: &LabelMask,
    g: &LabelMask,
    mode: GradMode,
    config: LossConfig,
) -> Result<(f64, GradientTensor)> {
    let graph = Graph::new(f, init_mask, g, config)?;
    let fwd = graph.forward(&f.values, f.channels, None);
    let values = graph.backward(f, &fwd, mode);
    Ok((
        fwd.dice.loss,
        GradientTensor {
            height: f.height,
            width: f.width,
            channels: f.channels,
            values,
        },
    ))
}

/// Central-difference gradient of the loss under `mode`, evaluated in
/// double-double arithmetic so cancellation between the two probes stays far
/// below the differences being measured.
pub fn numeric_gradient(
    f: &DenseFeatures,
    init_mask: &LabelMask,
    g: &LabelMask,
    mode: GradMode,
    config: LossConfig,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::PreconditionViolation(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let graph = Graph::new(f, init_mask, g, config)?;
    let c = f.channels;
    let base: Vec<DoubleDouble> = f.values.iter().map(|&v| DoubleDouble::new(v)).collect();
    let frozen = match mode {
        GradMode::DetachedPrototypes => Some(graph.centers(&base, c)),
        GradMode::ThroughPrototypes => None,
    };
    let h = DoubleDouble::new(step);
    let mut probe = base.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        probe[j] = base[j] + h;
        let plus = graph.forward(&probe, c, frozen.as_deref()).dice.loss;
        probe[j] = base[j] - h;
        let minus = graph.forward(&probe, c, frozen.as_deref()).dice.loss;
        probe[j] = base[j];
        numeric.push(((plus - minus) / (h + h)).to_f64());
    }
    Ok(numeric)
}

/// Largest relative disagreement between the analytic and central-difference
/// gradients: `max |a − n| / max(|a|, |n|, 1e-12)`.
pub fn finite_diff_check(
    f: &DenseFeatures,
    init_mask: &LabelMask,
    g: &LabelMask,
    mode: GradMode,
    step: f64,
) -> Result<f64> {
    let config = LossConfig::default();
    let numeric = numeric_gradient(f, init_mask, g, mode, config, step)?;
    let (_, analytic) = protoseg_backward_dense(f, init_mask, g, mode, config)?;
    Ok(max_relative_error(&analytic.values, &numeric))
}

/// Central-difference step used by the gradient check.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A seeded random gradient-check problem: `H, W ∈ 2..=4`, `C ∈ 1..=3`,
/// features uniform in `[-1, 1)`, and random initial and reference masks
/// (the initial mask always holds both classes).
pub fn gradcheck_case(seed: u64) -> (DenseFeatures, LabelMask, LabelMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(2..=4);
    let w = rng.random_range(2..=4);
    let c = rng.random_range(1..=3);
    let values = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut init: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
    init[0] = 0;
    init[1] = 1;
    let truth = (0..h * w).map(|_| rng.random_range(0..2)).collect();
    (
        DenseFeatures::new(h, w, c, values).expect("positive dims and finite values"),
        LabelMask::binary(h, w, init).expect("binary labels"),
        LabelMask::binary(h, w, truth).expect("binary labels"),
    )
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}
