//! End-to-end acceptance checks on synthetic data.
//!
//! Runs without the libtest harness so the checks execute one after another
//! (keeping the timing budgets meaningful) and every check prints exactly one
//! PASS/FAIL line. Exits nonzero if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use protoseg::analysis::selection::{coverage_table, CoverageRecord};
use protoseg::analysis::sweep::{build_pool, layer_sweep, noise_sweep};
use protoseg::analysis::synthetic::{bed_image, gen_synthetic, write_synthetic_manifest, SyntheticManifestSpec, SyntheticSpec};
use protoseg::analysis::units::{split_active_inertia, unit_sams};
use protoseg::diffkernel::{finite_diff_check, gradcheck_case, GradMode, DEFAULT_FD_STEP};
use protoseg::feature::{FeatureMap, Interpolation, LabelMask};
use protoseg::io::manifest::{load_manifest, AnalysisManifest, ImageEntry, LayerEntry};
use protoseg::io::npy::{read_tensor, write_tensor, Layout, TensorData, TensorDump};
use protoseg::io::report::{save_report, ReportFormat};
use protoseg::metrics::{mean_sa_score, sa_score};
use protoseg::protoseg::{compute_prototypes, probability_map, protoseg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < budget, || format!("{what} took {elapsed:?}, budget {budget:?}"))
}

/// Random binary mask of the given size holding both classes.
fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMask {
    let p = rng.random_range(0.1..0.9);
    let mut labels: Vec<u8> = (0..h * w).map(|_| u8::from(rng.random_bool(p))).collect();
    let a = rng.random_range(0..h * w);
    let b = (a + 1 + rng.random_range(0..h * w - 1)) % (h * w);
    labels[a] = 0;
    labels[b] = 1;
    LabelMask::binary(h, w, labels).unwrap()
}

// ---------------------------------------------------------------------------

const GRID: i64 = 1 << 22;

/// Nearest-prototype labels computed exactly in integer arithmetic. Features
/// are `q / GRID`; comparing `Σ(f − S_k/n_k)²` across classes after scaling
/// by `GRID²·n_0²·n_1²` keeps everything integral.
fn exact_nearest_prototype(q: &[i64], channels: usize, mask: &[u8]) -> Vec<u8> {
    let mut sums = [vec![0i128; channels], vec![0i128; channels]];
    let mut n = [0i128; 2];
    for (px, &l) in q.chunks(channels).zip(mask) {
        n[l as usize] += 1;
        for (s, &v) in sums[l as usize].iter_mut().zip(px) {
            *s += i128::from(v);
        }
    }
    q.chunks(channels)
        .map(|px| {
            // n_k² · Σ(f − c_k)² in grid units
            let scaled = |k: usize| -> i128 {
                px.iter()
                    .zip(&sums[k])
                    .map(|(&v, &s)| {
                        let d = n[k] * i128::from(v) - s;
                        d * d
                    })
                    .sum()
            };
            let d0 = scaled(0) * n[1] * n[1];
            let d1 = scaled(1) * n[0] * n[0];
            u8::from(d1 < d0)
        })
        .collect()
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let (h, w, c) = (4, 4, 3);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<i64> = (0..h * w * c).map(|_| rng.random_range(-GRID..GRID)).collect();
        let mask = random_mask(&mut rng, h, w);
        let f = FeatureMap::new(h, w, c, q.iter().map(|&v| v as f32 / GRID as f32).collect()).unwrap();
        let (_, sam) = protoseg(&f, &mask).map_err(|e| e.to_string())?;
        let expected = exact_nearest_prototype(&q, c, mask.labels());
        ensure(sam.mask.labels() == expected.as_slice(), || format!("seed {seed}: SAM differs from oracle"))?;
    }
    within(start.elapsed(), Duration::from_secs(5), "1000 cases")?;
    Ok(format!("1000/1000 exact in {:?}", start.elapsed()))
}

fn mask_fixpoint() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1);
    for i in 0..100 {
        let (h, w) = (rng.random_range(1..24), rng.random_range(2..24));
        let mask = random_mask(&mut rng, h, w);
        let (_, sam) = protoseg(&FeatureMap::from_mask(&mask), &mask).map_err(|e| e.to_string())?;
        ensure(sam.mask == mask, || format!("mask {i} ({h}x{w}) is not a fixpoint"))?;
    }
    Ok("100/100 masks reproduced".into())
}

fn softmax_normalization() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50f7);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (h, w, c) = (rng.random_range(2..12), rng.random_range(2..12), rng.random_range(1..6));
        let scale = [1.0, 1e2, 1e4, 1e6][i % 4];
        let mask = random_mask(&mut rng, h, w);
        let values: Vec<f32> = mask
            .labels()
            .iter()
            .flat_map(|&l| (0..c).map(move |_| l))
            .map(|l| (f64::from(l) * scale + rng.random_range(-1.0..1.0)) as f32)
            .collect();
        let f = FeatureMap::new(h, w, c, values).unwrap();
        let protos = compute_prototypes(&f, &mask).map_err(|e| e.to_string())?;
        let p = probability_map(&f, &protos).map_err(|e| e.to_string())?;
        for row in p.probs().chunks(2) {
            ensure(row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), || format!("input {i}: bad row {row:?}"))?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max |Σp − 1| = {worst:e}"))?;
    Ok(format!("max |sum - 1| = {worst:.1e} over 100 inputs (separations to 1e6)"))
}

fn affine_invariance() -> Result<String, String> {
    // Values on a dyadic grid coarse enough that a·f + t is exact in f32.
    let (h, w, c) = (6, 6, 3);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xaff1 + seed);
        let base: Vec<f32> = (0..h * w * c).map(|_| rng.random_range(-(1 << 14)..(1 << 14)) as f32 / 16384.0).collect();
        let mask = random_mask(&mut rng, h, w);
        let f = FeatureMap::new(h, w, c, base.clone()).unwrap();
        let reference = protoseg(&f, &mask).map_err(|e| e.to_string())?.1.mask;
        let t: Vec<f32> = (0..c).map(|_| rng.random_range(-32..=32) as f32 / 4.0).collect();
        for a in [0.5f32, 2.0, 100.0] {
            let moved: Vec<f32> = base.iter().enumerate().map(|(i, &v)| a * v + t[i % c]).collect();
            let g = FeatureMap::new(h, w, c, moved).unwrap();
            let sam = protoseg(&g, &mask).map_err(|e| e.to_string())?.1.mask;
            ensure(sam == reference, || format!("seed {seed}, a = {a}: SAM changed"))?;
        }
    }
    Ok("300/300 transformed maps give identical SAMs".into())
}

fn dice_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ce);
    for i in 0..1000 {
        let (ps, pg) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let s: Vec<u8> = (0..256).map(|_| u8::from(rng.random_bool(ps))).collect();
        let g: Vec<u8> = (0..256).map(|_| u8::from(rng.random_bool(pg))).collect();
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (&a, &b) in s.iter().zip(&g) {
            match (a, b) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        let expected = if denom == 0 { 1.0 } else { f64::from(2 * tp) / f64::from(denom) };
        let sm = LabelMask::binary(16, 16, s).unwrap();
        let gm = LabelMask::binary(16, 16, g).unwrap();
        let got = sa_score(&sm, &gm, 1).map_err(|e| e.to_string())?;
        ensure(got.defined && got.value == expected, || format!("pair {i}: {} vs {expected}", got.value))?;
    }
    Ok("1000/1000 pairs exact".into())
}

fn gradient_check() -> Result<String, String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let (f, init, g) = gradcheck_case(seed);
        for mode in [GradMode::ThroughPrototypes, GradMode::DetachedPrototypes] {
            let err = finite_diff_check(&f, &init, &g, mode, DEFAULT_FD_STEP).map_err(|e| e.to_string())?;
            ensure(err < 1e-6, || format!("seed {seed} {mode:?}: max relative error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    within(start.elapsed(), Duration::from_secs(30), "200 gradient checks")?;
    Ok(format!("worst max relative error {worst:.2e} over 100 seeds x 2 modes in {:?}", start.elapsed()))
}

/// Mean SA over seeds of ProtoSeg on a synthetic layer seeded by the simulated output.
fn mean_synthetic_sa(separation: f64, seeds: u64) -> Result<f64, String> {
    let mut total = 0.0;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            seed,
            class_separation: separation,
            ..Default::default()
        };
        let s = gen_synthetic(&spec).map_err(|e| e.to_string())?;
        let (_, sam) = protoseg(&s.features, &s.output).map_err(|e| e.to_string())?;
        total += sa_score(&sam.mask, &s.truth, 1).map_err(|e| e.to_string())?.value;
    }
    Ok(total / seeds as f64)
}

fn separation_sensitivity() -> Result<String, String> {
    let sa: Vec<f64> = [0.0, 0.5, 2.0, 6.0]
        .iter()
        .map(|&d| mean_synthetic_sa(d, 100))
        .collect::<Result<_, _>>()?;
    let summary = format!("SA(0)={:.3} SA(0.5)={:.3} SA(2)={:.3} SA(6)={:.4}", sa[0], sa[1], sa[2], sa[3]);
    ensure(sa[1] < sa[2] && sa[2] < sa[3], || format!("not increasing: {summary}"))?;
    ensure(sa[3] >= 0.99, || format!("SA(6) below 0.99: {summary}"))?;
    ensure((0.3..=0.7).contains(&sa[0]), || format!("SA(0) outside [0.3, 0.7]: {summary}"))?;
    Ok(summary)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// The 50-image confidence bed: `(id, μ, output dice)` per image.
fn confidence_bed() -> Result<Vec<CoverageRecord>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbed);
    (0..50u64)
        .map(|n| {
            let spec = SyntheticSpec {
                seed: 1000 + n,
                channels: 8,
                class_separation: rng.random_range(0.0..4.0),
                ..Default::default()
            };
            let img = bed_image(&spec).map_err(|e| e.to_string())?;
            let sams = unit_sams(&img.units, &img.output).map_err(|e| e.to_string())?;
            let mu = mean_sa_score(&sams, &img.output, 1).map_err(|e| e.to_string())?.mu;
            let dice = sa_score(&img.output, &img.truth, 1).map_err(|e| e.to_string())?.value;
            Ok(CoverageRecord::new(format!("bed-{n:02}"), mu, Some(dice)))
        })
        .collect()
}

fn mu_dice_correlation() -> Result<String, String> {
    let start = Instant::now();
    let bed = confidence_bed()?;
    let mu: Vec<f64> = bed.iter().map(|r| r.mu).collect();
    let dice: Vec<f64> = bed.iter().map(|r| r.dice.unwrap()).collect();
    let rho = spearman(&mu, &dice);
    ensure(rho > 0.9, || format!("Spearman rho = {rho:.4}"))?;
    within(start.elapsed(), Duration::from_secs(60), "50-image bed")?;
    Ok(format!("Spearman rho = {rho:.4} over 50 images in {:?}", start.elapsed()))
}

fn coverage_trend() -> Result<String, String> {
    let bed = confidence_bed()?;
    let table = coverage_table(&bed, &[100.0, 90.0, 70.0, 50.0]).map_err(|e| e.to_string())?;
    let means: Vec<f64> = table.rows.iter().map(|r| r.mean_dice.unwrap()).collect();
    let line = table
        .rows
        .iter()
        .map(|r| format!("{}%: {:.4}", r.coverage, r.mean_dice.unwrap()))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(means.windows(2).all(|w| w[1] >= w[0]), || format!("not monotone: {line}"))?;
    Ok(line)
}

fn noise_identity() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticManifestSpec {
        images: 6,
        separations: vec![0.5, 1.0, 2.0, 4.0],
        downsample: vec![1, 2, 2, 4],
        ..Default::default()
    };
    let manifest = load_manifest(write_synthetic_manifest(dir.path(), &spec).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let levels = [0.0, 0.1, 0.5, 1.0];
    let a = noise_sweep(&manifest, &levels, Interpolation::Bilinear).map_err(|e| e.to_string())?;
    let zero: Vec<_> = a.summary.iter().filter(|s| s.level == 0.0).collect();
    ensure(zero.len() == spec.separations.len(), || "missing λ = 0 rows".into())?;
    ensure(zero.iter().all(|s| s.mean_difference == Some(0.0)), || format!("λ = 0 rows: {zero:?}"))?;
    ensure(a.rows.iter().filter(|r| r.level == 0.0).all(|r| r.difference == Some(0.0)), || "nonzero λ = 0 entry".into())?;
    let b = build_pool(Some(1))
        .map_err(|e| e.to_string())?
        .install(|| noise_sweep(&manifest, &levels, Interpolation::Bilinear))
        .map_err(|e| e.to_string())?;
    for (name, format) in [("json", ReportFormat::Json), ("csv", ReportFormat::Csv)] {
        let (pa, pb) = (dir.path().join(format!("a.{name}")), dir.path().join(format!("b.{name}")));
        save_report(&a, &pa, format).map_err(|e| e.to_string())?;
        save_report(&b, &pb, format).map_err(|e| e.to_string())?;
        ensure(std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap(), || format!("{name} reports differ"))?;
    }
    Ok(format!("{} layers exactly 0 at λ = 0; parallel and serial reports byte-identical", zero.len()))
}

/// Index of the first maximal gap by exhaustive comparison of all gaps.
fn brute_force_split(s: &[f64]) -> usize {
    let gaps: Vec<f64> = s.windows(2).map(|w| w[0] - w[1]).collect();
    let largest = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    gaps.iter().position(|&g| g == largest).unwrap() + 1
}

fn unit_split() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5b17);
    for i in 0..1000 {
        let n = rng.random_range(2..=64);
        // a coarse grid on half the lists makes tied gaps common
        let coarse = i % 2 == 0;
        let mut s: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(0..8u8)) / 8.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let got = split_active_inertia(&s).map_err(|e| e.to_string())?;
        ensure(got == brute_force_split(&s), || format!("list {i}: {got} vs {}", brute_force_split(&s)))?;
    }
    Ok("1000/1000 lists match exhaustive search".into())
}

fn io_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let mut cases = 0;
    for dims in 0..=4 {
        for _ in 0..10 {
            let shape: Vec<usize> = (0..dims).map(|_| rng.random_range(0..5)).collect();
            let len: usize = shape.iter().product();
            let datas = [
                TensorData::F32((0..len).map(|_| f32::from_bits(rng.random::<u32>() & 0xff7f_ffff)).collect()),
                TensorData::U8((0..len).map(|_| rng.random()).collect()),
            ];
            for data in datas {
                let t = TensorDump::new(shape.clone(), data).map_err(|e| e.to_string())?;
                let path = dir.path().join("t.npy");
                write_tensor(&path, &t).map_err(|e| e.to_string())?;
                let back = read_tensor(&path).map_err(|e| e.to_string())?;
                let bits = |t: &TensorDump| match t.data() {
                    TensorData::F32(v) => v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                    TensorData::U8(v) => v.iter().map(|&x| u32::from(x)).collect(),
                };
                ensure(back.shape() == t.shape() && back.dtype() == t.dtype() && bits(&back) == bits(&t), || {
                    format!("{:?} {:?} did not round-trip", t.dtype(), t.shape())
                })?;
                cases += 1;
            }
        }
    }
    // a report written twice is byte-identical
    let manifest = minimal_manifest(dir.path())?;
    let report = layer_sweep(&manifest, Interpolation::Bilinear);
    for format in [ReportFormat::Json, ReportFormat::Csv] {
        let (a, b) = (dir.path().join("r1"), dir.path().join("r2"));
        save_report(&report, &a, format).map_err(|e| e.to_string())?;
        save_report(&layer_sweep(&manifest, Interpolation::Bilinear), &b, format).map_err(|e| e.to_string())?;
        ensure(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), || format!("{format:?} report differs"))?;
    }
    Ok(format!("{cases} tensors (0-4 dims, f32 + u8) bit-identical; reports byte-identical"))
}

fn minimal_manifest(dir: &Path) -> Result<AnalysisManifest, String> {
    let spec = SyntheticManifestSpec {
        images: 2,
        ..Default::default()
    };
    load_manifest(write_synthetic_manifest(dir.join("m"), &spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn performance() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfa57);
    let (h, w, c) = (256, 256, 64);
    let truth = random_mask(&mut rng, h, w);
    let values: Vec<f32> = truth
        .labels()
        .iter()
        .flat_map(|&l| (0..c).map(move |_| l))
        .map(|l| f32::from(l) + rng.random_range(-2.0..2.0))
        .collect();
    let f = FeatureMap::new(h, w, c, values).unwrap();
    let single = build_pool(Some(1)).map_err(|e| e.to_string())?;
    let mut best = Duration::MAX;
    for _ in 0..3 {
        let start = Instant::now();
        single.install(|| {
            let (_, sam) = protoseg(&f, &truth).unwrap();
            sa_score(&sam.mask, &truth, 1).unwrap()
        });
        best = best.min(start.elapsed());
    }
    within(best, Duration::from_millis(200), "protoseg + SA on 256x256x64")?;

    // an 18-layer encoder/decoder-shaped sweep of one 256x256 image
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = unet_manifest(dir.path(), &mut rng, &truth)?;
    let start = Instant::now();
    let report = layer_sweep(&manifest, Interpolation::Bilinear);
    let sweep = start.elapsed();
    ensure(report.rows.len() == 18 && report.rows.iter().all(|r| r.sa.is_some()), || {
        format!("sweep rows: {:?}", report.rows.iter().map(|r| &r.status).collect::<Vec<_>>())
    })?;
    within(sweep, Duration::from_secs(2), "18-layer sweep")?;
    Ok(format!("protoseg + SA {best:?} single-threaded; 18-layer sweep {sweep:?}"))
}

fn unet_manifest(dir: &Path, rng: &mut ChaCha8Rng, truth: &LabelMask) -> Result<AnalysisManifest, String> {
    let (h, w) = (truth.height(), truth.width());
    // (channels, downsampling) per layer: encoder, bottleneck, decoder
    let levels = [1usize, 2, 4, 8, 16];
    let mut shape: Vec<(usize, usize)> = Vec::new();
    for (i, &d) in levels.iter().enumerate() {
        shape.extend([(16 << i, d); 2]);
    }
    for (i, &d) in levels.iter().rev().skip(1).enumerate() {
        shape.extend([(128 >> i, d); 2]);
    }
    assert_eq!(shape.len(), 18);
    write_tensor(dir.join("truth.npy"), &TensorDump::from_label_mask(truth)).map_err(|e| e.to_string())?;
    let mut layers = Vec::new();
    for (n, &(c, d)) in shape.iter().enumerate() {
        let (lh, lw) = (h / d, w / d);
        let values: Vec<f32> = (0..lh * lw)
            .flat_map(|i| {
                let l = truth.labels()[(i / lw) * d * w + (i % lw) * d];
                (0..c).map(move |_| l)
            })
            .map(|l| f32::from(l) + rng.random_range(-1.5..1.5))
            .collect();
        let name = format!("layer{:02}.npy", n + 1);
        let f = FeatureMap::new(lh, lw, c, values).unwrap();
        write_tensor(dir.join(&name), &TensorDump::from_feature_map(&f)).map_err(|e| e.to_string())?;
        layers.push(LayerEntry {
            layer_index: n as u32 + 1,
            channels: c,
            feature: name.into(),
            layout: Layout::ChannelLast,
        });
    }
    let manifest = AnalysisManifest {
        version: 1,
        global_seed: 0,
        images: vec![ImageEntry {
            id: "case".into(),
            input: None,
            ground_truth: Some("truth.npy".into()),
            output: "truth.npy".into(),
            layers,
        }],
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    load_manifest(dir.join("manifest.json")).map_err(|e| e.to_string())
}

fn main() {
    let checks: [(&str, Check); 13] = [
        ("oracle equivalence", oracle_equivalence),
        ("mask-identity fixpoint", mask_fixpoint),
        ("softmax normalization", softmax_normalization),
        ("affine argmax invariance", affine_invariance),
        ("dice oracle", dice_oracle),
        ("gradient check", gradient_check),
        ("separation sensitivity", separation_sensitivity),
        ("mu-dice correlation", mu_dice_correlation),
        ("coverage trend", coverage_trend),
        ("noise zero-level identity", noise_identity),
        ("unit split", unit_split),
        ("tensor and report i/o", io_round_trip),
        ("performance", performance),
    ];
    // quiet the default panic printer; failures are reported below
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
