//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 3`.

mod common;
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{fd_check, random_batch, tiny_bundle, GradStats, TINY_BINS, TINY_FRAMES};
use mdcyclegan::audio::{
    apply_normalizer, compute_spectrogram, fit_normalizer, griffin_lim, griffin_lim_traced, read_spectrogram_cache,
    write_spectrogram_cache, write_wav, GriffinLimOptions, Spectrogram, StftParams, Waveform,
};
use mdcyclegan::bands::{build_band_layout, concat_bands, slice_bands};
use mdcyclegan::datasets::{
    fixed_crops, load_spectrogram, Corpus, Domain, DomainKind, SyntheticDomainSpec,
};
use mdcyclegan::eval::{
    band_stats_distance, checkerboard_score, classifier_flip_rate, flip_rate_from_labels, identity_collapse_score,
    DomainClassifier,
};
use mdcyclegan::losses::{
    cycle_consistency_loss, discriminator_loss, generator_adversarial_loss, identity_mapping_loss, md_adversarial_loss,
    md_cyclegan_objective, objective_gradients, LossVariant, ObjectiveConfig, Side,
};
use mdcyclegan::models::{
    Direction, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, GeneratorMode, ModelBundle,
};
use mdcyclegan::nn::zero_grads;
use mdcyclegan::trainer::{load_checkpoint, save_checkpoint, RunSettings, TrainConfig, Trainer};
use ndarray::{Array2, Array4};
use oracle::{Loss, OneD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

// 1: loss values and the single-discriminator reduction.
fn losses() -> Outcome {
    let bce = LossVariant::NonsaturatingBce;
    let ls = LossVariant::LeastSquares;
    let mut worst_hand = 0.0f64;
    let mut hand = |got: f64, want: f64, what: &str| -> Result<(), String> {
        let e = (got - want).abs();
        worst_hand = worst_hand.max(e);
        check!(e <= 1e-10, "{what}: {got} vs {want}");
        Ok(())
    };
    hand(
        discriminator_loss(&[logit(0.8)], &[logit(0.3)], bce).unwrap(),
        -(0.8f64.ln() + 0.7f64.ln()),
        "BCE discriminator",
    )?;
    hand(discriminator_loss(&[0.8], &[0.3], ls).unwrap(), 0.065, "LS discriminator")?;
    hand(generator_adversarial_loss(&[logit(0.3)], bce).unwrap(), -(0.3f64.ln()), "BCE generator")?;
    hand(generator_adversarial_loss(&[1.0], ls).unwrap(), 0.0, "LS generator")?;
    let x = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let rx = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 5.0]).unwrap();
    hand(cycle_consistency_loss(&x, &rx, &x, &x).unwrap(), 0.25, "cycle")?;
    hand(cycle_consistency_loss(&x, &x, &x, &x).unwrap(), 0.0, "exact cycle")?;
    hand(identity_mapping_loss(&x, &x.mapv(|v| v + 0.5)).unwrap(), 0.5, "identity offset")?;

    let mut zero = tiny_bundle(3, GeneratorMode::Single, 1);
    for p in zero.discriminator_params_mut() {
        p.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let b = random_batch(2, TINY_BINS, TINY_FRAMES, &mut rng(2));
    let (total, per_band) =
        md_adversarial_loss(&b, &zero.disc_y, &zero.config.layout_y, bce, Side::GeneratorTerm).unwrap();
    hand(total, 3.0 * 2f64.ln(), "zero discriminators, three bands")?;
    hand(total, per_band.iter().sum(), "per-band sum")?;

    // m = 1 against the independent single-discriminator implementation.
    let bundle = tiny_bundle(1, GeneratorMode::Single, 5);
    let mut r = rng(99);
    let mut worst_oracle = 0.0f64;
    for i in 0..100 {
        let (loss, variant) = if i % 2 == 0 { (Loss::Bce, bce) } else { (Loss::Ls, ls) };
        let oracle = OneD::from_bundle(&bundle, 10.0, loss, 0.0);
        let t = random_batch(1 + i % 3, TINY_BINS, TINY_FRAMES, &mut r);
        for (side, real) in [(Side::RealTerm, true), (Side::FakeTerm, false)] {
            let (lib, _) = md_adversarial_loss(&t, &bundle.disc_y, &bundle.config.layout_y, variant, side).unwrap();
            worst_oracle = worst_oracle.max((lib - oracle.adversarial(&t, true, real)).abs());
        }
        let u = random_batch(2, TINY_BINS, TINY_FRAMES, &mut r);
        let cfg = ObjectiveConfig { cycle_weight: 10.0, identity_weight: 0.0, variant };
        let rep = md_cyclegan_objective(&bundle, &t, &u, &cfg);
        if t.dim().0 == u.dim().0 {
            let (rep, o) = (rep.unwrap(), oracle.objective(&t, &u));
            for (a, b) in [(rep.d_loss_x, o.d_x), (rep.d_loss_y, o.d_y), (rep.g_adv_xy, o.g_xy), (rep.g_adv_yx, o.g_yx), (rep.cycle, o.cycle), (rep.total_g, o.total_g)] {
                worst_oracle = worst_oracle.max((a - b).abs());
            }
        }
    }
    check!(worst_oracle <= 1e-12, "one-band losses differ from the single-discriminator oracle by {worst_oracle:e}");
    Ok(format!("hand values within {worst_hand:.1e}; oracle agreement {worst_oracle:.1e} over 100 tensors"))
}

// 2: finite-difference gradient checks.
fn gradients() -> Outcome {
    let mut lines = Vec::new();
    let mut record = |s: GradStats, what: String| -> Result<(), String> {
        check!(s.fraction() >= 0.99, "{what}: {}/{} coordinates within 1e-4", s.passed, s.total);
        lines.push(format!("{what} {}/{}", s.passed, s.total));
        Ok(())
    };
    let mut r = rng(10);
    let b = tiny_bundle(3, GeneratorMode::Single, 3);
    let g = b.gen_xy[0].clone();
    let x = random_batch(2, TINY_BINS, TINY_FRAMES, &mut r);
    let (y, trace) = g.forward_traced(&x, None).unwrap();
    let weights = random_batch(2, TINY_BINS, TINY_FRAMES, &mut r);
    let mut grads = zero_grads(&g.params);
    g.backward(&trace, &weights, &mut grads);
    let refs: Vec<_> = grads.iter().collect();
    let s = fd_check(&g, |g: &mut Generator<f64>| g.params.iter_mut().collect(), &refs, |g| {
        (g.forward(&x, None).unwrap() * &weights).sum()
    });
    let _ = y;
    record(s, "generator".into())?;
    for (i, d) in b.disc_y.iter().enumerate() {
        let xb = random_batch(3, d.input_bins(), TINY_FRAMES, &mut r);
        let w = [0.7, -1.3, 0.4];
        let (_, trace) = d.forward_traced(&xb).unwrap();
        let mut grads = zero_grads(&d.params);
        d.backward(&trace, &w, &mut grads, false);
        let refs: Vec<_> = grads.iter().collect();
        let s = fd_check(d, |d: &mut Discriminator<f64>| d.params.iter_mut().collect(), &refs, |d| {
            d.forward(&xb).unwrap().iter().zip(&w).map(|(l, w)| l * w).sum()
        });
        record(s, format!("disc[{i}]"))?;
    }
    for (mode, variant, mu) in [
        (GeneratorMode::Single, LossVariant::NonsaturatingBce, 0.0),
        (GeneratorMode::Single, LossVariant::LeastSquares, 0.5),
        (GeneratorMode::OneOne, LossVariant::NonsaturatingBce, 0.0),
        (GeneratorMode::OneMany, LossVariant::NonsaturatingBce, 0.0),
    ] {
        let b = tiny_bundle(3, mode, 7);
        let count: usize = b.generator_params().iter().chain(&b.discriminator_params()).map(|p| p.data.len()).sum();
        check!(count <= 2000, "tiny config has {count} parameters");
        let x = random_batch(2, TINY_BINS, TINY_FRAMES, &mut r);
        let y = random_batch(2, TINY_BINS, TINY_FRAMES, &mut r);
        let cfg = ObjectiveConfig { cycle_weight: 10.0, identity_weight: mu, variant };
        let (_, grads) = objective_gradients(&b, &x, &y, &cfg).unwrap();
        let sg = fd_check(&b, |b: &mut ModelBundle<f64>| b.generator_params_mut(), &grads.generator_flat(), |b| {
            md_cyclegan_objective(b, &x, &y, &cfg).unwrap().total_g
        });
        let sd = fd_check(&b, |b: &mut ModelBundle<f64>| b.discriminator_params_mut(), &grads.discriminator_flat(), |b| {
            let rep = md_cyclegan_objective(b, &x, &y, &cfg).unwrap();
            rep.d_loss_x + rep.d_loss_y
        });
        let tag = format!("{mode:?}/{variant:?}");
        record(sg, format!("{tag} G"))?;
        record(sd, format!("{tag} D"))?;
    }
    Ok(lines.join(", "))
}

// 3: shapes and the band partition.
fn shapes() -> Outcome {
    let g = Generator::<f32>::init(GeneratorConfig::default(), &mut rng(0)).unwrap();
    for frames in [64, 128] {
        let x = Array4::from_shape_simple_fn((2, 1, 161, frames), {
            let mut r = rng(frames as u64);
            move || r.gen_range(-2.0f32..2.0)
        });
        let y = g.forward(&x, None).unwrap();
        check!(y.dim() == x.dim(), "generator maps {:?} to {:?}", x.dim(), y.dim());
    }
    let l = build_band_layout(161, 3).unwrap();
    check!(l.widths == vec![53, 53, 55], "161 bins in 3 bands gave {:?}", l.widths);
    let mut r = rng(3);
    for case in 0..200 {
        let bins = r.gen_range(1..200);
        let bands = r.gen_range(1..=bins.min(8));
        let frames = r.gen_range(1..20);
        let mag = Array2::from_shape_simple_fn((frames, bins), || r.gen_range(0.0f32..10.0));
        let s = Spectrogram::new(mag, 0.01, 0.02, false).unwrap();
        let layout = build_band_layout(bins, bands).unwrap();
        let parts = slice_bands(&s, &layout).unwrap();
        check!(parts.iter().map(|p| p.bins()).collect::<Vec<_>>() == layout.widths, "case {case}: slice widths");
        check!(concat_bands(&parts).unwrap() == s, "case {case}: slice then concat changed the spectrogram");
    }
    Ok("generator shapes (2,1,161,64|128) kept; [53,53,55]; 200 slice/concat identities".into())
}

// 4: normalizer, cache, checkpoint, resume.
fn round_trips() -> Outcome {
    let mut r = rng(4);
    let specs: Vec<_> = (0..4)
        .map(|_| {
            let mag = Array2::from_shape_simple_fn((30, 161), || r.gen_range(0.0f32..40.0));
            Spectrogram::new(mag, 0.01, 0.02, false).unwrap()
        })
        .collect();
    let stats = fit_normalizer(&specs).unwrap();
    let mut worst = 0.0f64;
    // Relative to the spectrogram's peak: normalized values are stored in
    // f32, so one rounding at the data's scale is the floor.
    for s in &specs {
        let back = apply_normalizer(&apply_normalizer(s, &stats, false).unwrap(), &stats, true).unwrap();
        let peak = s.mag.iter().fold(1.0f64, |m, &v| m.max(v.abs() as f64));
        for (a, b) in s.mag.iter().zip(&back.mag) {
            worst = worst.max((a - b).abs() as f64 / peak);
        }
    }
    check!(worst <= 1e-6, "normalizer round trip error {worst:e} of the peak");

    let dir = tempfile::tempdir().unwrap();
    let stft = StftParams::default();
    let tone = Waveform::new((0..8000).map(|i| (i as f32 * 0.07).sin() * 0.3).collect(), 16_000).unwrap();
    let spec = compute_spectrogram(&tone, stft.window_s, stft.hop_s).unwrap();
    let (c1, c2) = (dir.path().join("a.spec"), dir.path().join("b.spec"));
    write_spectrogram_cache(&c1, &spec).unwrap();
    let read = read_spectrogram_cache(&c1, &stft).unwrap();
    write_spectrogram_cache(&c2, &read).unwrap();
    check!(read.mag == spec.mag && read.normalized == spec.normalized, "cache read differs from written spectrogram");
    check!(std::fs::read(&c1).unwrap() == std::fs::read(&c2).unwrap(), "cache bytes differ after a round trip");
    let wav = dir.path().join("t.wav");
    write_wav(&wav, &tone).unwrap();
    let cache = dir.path().join("cache");
    let first = load_spectrogram(&wav, &stft, Some(&cache)).unwrap();
    let second = load_spectrogram(&wav, &stft, Some(&cache)).unwrap();
    check!(first.mag == second.mag, "cached load differs from computed load");

    let corpus = Corpus::synthesize(
        &SyntheticDomainSpec::new(DomainKind::Smooth, 4, 0.5, 11),
        &SyntheticDomainSpec::new(DomainKind::Peaky, 4, 0.5, 12),
        &stft,
    )
    .unwrap();
    let settings = RunSettings {
        train: TrainConfig { crop_frames: 16, batch_size: 2, seed: 3, ..TrainConfig::default() },
        generator: GeneratorConfig::default(),
        discriminator: DiscriminatorConfig::default(),
        stft,
    };
    let mut a = Trainer::new(settings.clone(), &corpus).unwrap();
    let mut uninterrupted = Trainer::new(settings, &corpus).unwrap();
    let mut ref_losses = Vec::new();
    for _ in 0..10 {
        ref_losses.push(uninterrupted.step().unwrap());
    }
    let mut resumed_losses = Vec::new();
    for _ in 0..5 {
        resumed_losses.push(a.step().unwrap());
    }
    let (k1, k2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a.checkpoint(), &k1).unwrap();
    let loaded = load_checkpoint(&k1).unwrap();
    check!(loaded == a.checkpoint(), "loaded checkpoint differs from the saved state");
    save_checkpoint(&loaded, &k2).unwrap();
    check!(std::fs::read(&k1).unwrap() == std::fs::read(&k2).unwrap(), "checkpoint bytes differ after a round trip");
    drop(a);
    let mut b = Trainer::resume(loaded, &corpus).unwrap();
    for _ in 0..5 {
        resumed_losses.push(b.step().unwrap());
    }
    let mut worst_loss = 0.0f64;
    for (p, q) in ref_losses.iter().zip(&resumed_losses) {
        for (u, v) in [(p.d_loss_x, q.d_loss_x), (p.d_loss_y, q.d_loss_y), (p.g_adv_xy, q.g_adv_xy), (p.g_adv_yx, q.g_adv_yx), (p.cycle, q.cycle), (p.total_g, q.total_g)] {
            worst_loss = worst_loss.max((u - v).abs());
        }
    }
    check!(worst_loss <= 1e-10, "resumed losses differ by {worst_loss:e}");
    check!(b.bundle == uninterrupted.bundle, "resumed parameters differ");
    Ok(format!("normalizer {worst:.1e}; cache and checkpoint bitwise; resume max loss diff {worst_loss:.1e} over 10 steps"))
}

fn relative_l2(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|&q| (q as f64).powi(2)).sum();
    (num / den).sqrt()
}

// 5: Griffin-Lim.
fn griffin_lim_check() -> Outcome {
    let stft = StftParams::default();
    let samples = (0..16_000).map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin() * 0.5).collect();
    let tone = Waveform::new(samples, 16_000).unwrap();
    let spec = compute_spectrogram(&tone, stft.window_s, stft.hop_s).unwrap();
    let rec = griffin_lim(&spec, &GriffinLimOptions { iterations: 60, seed: 0, ..Default::default() }).unwrap();
    let again = compute_spectrogram(&rec, stft.window_s, stft.hop_s).unwrap();
    check!(again.mag.dim() == spec.mag.dim(), "reconstruction has {:?} frames x bins", again.mag.dim());
    let err = relative_l2(&again.mag, &spec.mag);
    check!(err < 0.1, "440 Hz relative magnitude error {err}");
    let mut r = rng(5);
    for case in 0..20 {
        let frames = r.gen_range(3..15);
        let mag = Array2::from_shape_simple_fn((frames, 161), || r.gen_range(0.0f32..3.0));
        let s = Spectrogram::new(mag, stft.hop_s, stft.window_s, false).unwrap();
        let (_, trace) = griffin_lim_traced(&s, &GriffinLimOptions { iterations: 30, seed: case, ..Default::default() }).unwrap();
        for (i, pair) in trace.windows(2).enumerate() {
            check!(pair[1] <= pair[0] * (1.0 + 1e-9), "case {case}: inconsistency rose at iteration {}: {pair:?}", i + 1);
        }
    }
    Ok(format!("440 Hz error {err:.4}; inconsistency non-increasing on 20 random magnitudes"))
}

pub const C6_SEEDS: [u64; 3] = [0, 1, 2];
const C6_STEPS: u64 = 2000;
const C6_CROP: usize = 64;

struct Measure {
    distance: f64,
    identity: f64,
    flip: f64,
}

struct Bench {
    corpus: Corpus,
    heldout: Corpus,
}

impl Bench {
    fn new() -> Self {
        let stft = StftParams::default();
        let make = |kind, n, seed| SyntheticDomainSpec::new(kind, n, 2.0, seed);
        Bench {
            corpus: Corpus::synthesize(&make(DomainKind::Smooth, 100, 101), &make(DomainKind::Peaky, 100, 202), &stft).unwrap(),
            heldout: Corpus::synthesize(&make(DomainKind::Smooth, 40, 303), &make(DomainKind::Peaky, 40, 404), &stft).unwrap(),
        }
    }

    /// Same budget for One-D and Three-D. Batch-1 training oscillates, so the
    /// discriminators learn slower, rates decay over the last half and the
    /// measured generator is the weight average.
    fn settings(bands: usize, seed: u64) -> RunSettings {
        RunSettings {
            train: TrainConfig {
                num_bands_x: bands,
                num_bands_y: bands,
                crop_frames: C6_CROP,
                batch_size: 1,
                total_steps: C6_STEPS,
                pretrain_d_steps: 0,
                learning_rate_g: 2e-4,
                learning_rate_d: 5e-5,
                lr_decay_steps: 1000,
                generator_ema: 0.995,
                seed,
                ..TrainConfig::default()
            },
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            stft: StftParams::default(),
        }
    }

    /// Trains one configuration; returns the measurements before and after.
    fn run(&self, bands: usize, seed: u64) -> Result<(Measure, Measure, f64), String> {
        let mut t = Trainer::new(Self::settings(bands, seed), &self.corpus).map_err(|e| e.to_string())?;
        let held = self.heldout.normalize(&t.norm_x).map_err(|e| e.to_string())?;
        let crops = |s: &[Spectrogram]| fixed_crops(s, C6_CROP).unwrap();
        let (tx, ty) = (crops(&t.dataset().x), crops(&t.dataset().y));
        let (hx, hy) = (crops(&held.x), crops(&held.y));
        let clf = DomainClassifier::fit(&tx, &ty, &hx, &hy, &build_band_layout(161, 8).unwrap()).map_err(|e| e.to_string())?;
        let three = build_band_layout(161, 3).unwrap();
        let measure = |t: &Trainer| -> Measure {
            let g = t.inference_bundle();
            let adapted = g.translate(Direction::XToY, &hx).unwrap();
            Measure {
                distance: band_stats_distance(&adapted, &hy, &three).unwrap().total,
                identity: identity_collapse_score(|b| g.translate(Direction::XToY, b), &hx).unwrap(),
                flip: classifier_flip_rate(&adapted, &clf, Domain::Y).unwrap(),
            }
        };
        let before = measure(&t);
        t.pretrain().map_err(|e| e.to_string())?;
        while t.step < C6_STEPS {
            t.step().map_err(|e| format!("step {}: {e}", t.step))?;
        }
        Ok((before, measure(&t), clf.heldout_accuracy))
    }
}

// 6: synthetic end-to-end.
fn synthetic_end_to_end() -> Outcome {
    let bench = Bench::new();
    let mut reduction_ok = true;
    let mut collapse_wins = 0;
    let mut notes = Vec::new();
    for seed in C6_SEEDS {
        let start = Instant::now();
        let (b3, a3, acc) = bench.run(3, seed)?;
        let (_, a1, _) = bench.run(1, seed)?;
        let reduction = 1.0 - a3.distance / b3.distance;
        let ok = reduction >= 0.5 && a3.flip >= 0.7;
        reduction_ok &= ok;
        if a1.identity < a3.identity {
            collapse_wins += 1;
        }
        println!(
            "  seed {seed}: classifier held-out acc {acc:.3}; Three-D distance {:.3} -> {:.3} ({:.0}% lower), flip {:.2} -> {:.2}, identity {:.3}; One-D identity {:.3}, distance {:.3}, flip {:.2} [{:.0}s]",
            b3.distance,
            a3.distance,
            100.0 * reduction,
            b3.flip,
            a3.flip,
            a3.identity,
            a1.identity,
            a1.distance,
            a1.flip,
            start.elapsed().as_secs_f64()
        );
        notes.push(format!("seed {seed}: -{:.0}%/flip {:.2}", 100.0 * reduction, a3.flip));
    }
    let summary = format!("{}; One-D lower identity score in {collapse_wins}/3 seeds", notes.join(", "));
    check!(reduction_ok, "Three-D reduction or flip rate short on some seed ({summary})");
    check!(collapse_wins >= 2, "One-D identity_collapse not below Three-D in 2 of 3 seeds ({summary})");
    Ok(summary)
}

// 7: metric sanity.
fn metrics() -> Outcome {
    let constant = Array4::from_elem((2, 1, 8, 8), 3.5f32);
    let c0 = checkerboard_score(&constant).unwrap();
    check!(c0 == 0.0, "checkerboard on a constant is {c0}");
    let board = Array4::from_shape_fn((2, 1, 8, 8), |(_, _, f, t)| if (f + t) % 2 == 0 { 1.0f32 } else { -1.0 });
    let c16 = checkerboard_score(&board).unwrap();
    check!((c16 - 16.0).abs() < 1e-9, "checkerboard on the +-1 board is {c16}");
    let shifted = checkerboard_score(&board.mapv(|v| 2.5 * v - 7.0)).unwrap();
    check!((shifted - 16.0).abs() < 1e-6, "checkerboard not affine invariant: {shifted}");
    let b = random_batch(3, 12, 8, &mut rng(7)).mapv(|v| v as f32);
    let id = identity_collapse_score(|x| Ok(x.clone()), &b).unwrap();
    check!(id == 0.0, "identity map scores {id}");
    let t = band_stats_distance(&b, &b, &build_band_layout(12, 3).unwrap()).unwrap().total;
    check!(t == 0.0, "self band distance {t}");
    use Domain::{X, Y};
    for (labels, want) in [(vec![Y, Y, Y], 1.0), (vec![X, X], 0.0), (vec![X, Y, Y, X], 0.5), (vec![Y], 1.0)] {
        let f = flip_rate_from_labels(&labels, Y).unwrap();
        check!(f == want && (0.0..=1.0).contains(&f), "flip rate of {labels:?} is {f}");
    }
    check!(flip_rate_from_labels(&[], Y).is_err(), "empty label set accepted");
    Ok("checkerboard 0 / 16, identity 0, self distance 0, flip-rate bounds".into())
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "loss oracles", losses),
        (2, "gradient checks", gradients),
        (3, "shape and partition invariants", shapes),
        (4, "pipeline round trips", round_trips),
        (5, "Griffin-Lim", griffin_lim_check),
        (6, "synthetic end-to-end", synthetic_end_to_end),
        (7, "metric sanity", metrics),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
