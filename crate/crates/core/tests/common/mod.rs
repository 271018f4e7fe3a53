#![allow(dead_code)]

use mdcyclegan::bands::build_band_layout;
use mdcyclegan::models::{
    init_parameters, BundleConfig, DiscriminatorConfig, GeneratorConfig, GeneratorMode, LayerSpec, ModelBundle,
};
use mdcyclegan::nn::Param;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_BINS: usize = 9;
pub const TINY_FRAMES: usize = 8;

pub fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        encoder_layers: vec![LayerSpec::new(2, 3, 3, 1, 1), LayerSpec::new(3, 3, 3, 2, 2)],
        skip_connections: true,
        noise_dim: 0,
    }
}

pub fn tiny_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        conv_layers: vec![LayerSpec::new(2, 3, 3, 2, 2), LayerSpec::new(3, 3, 3, 2, 2)],
        leaky_slope: 0.2,
    }
}

pub fn tiny_bundle(bands: usize, mode: GeneratorMode, seed: u64) -> ModelBundle<f64> {
    let config = BundleConfig {
        generator: tiny_generator(),
        discriminator: tiny_discriminator(),
        layout_x: build_band_layout(TINY_BINS, bands).unwrap(),
        layout_y: build_band_layout(TINY_BINS, bands).unwrap(),
        generator_mode: mode,
        frames: TINY_FRAMES,
    };
    let mut b = init_parameters::<f64>(config, seed).unwrap();
    // The default init is tiny; larger weights keep activations away from
    // zero so the checks exercise every path.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in b.generator_params_mut() {
        p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.6..0.6));
    }
    for p in b.discriminator_params_mut() {
        p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.6..0.6));
    }
    b
}

pub fn random_batch(n: usize, bins: usize, frames: usize, rng: &mut impl Rng) -> Array4<f64> {
    Array4::from_shape_simple_fn((n, 1, bins, frames), || rng.gen_range(-1.5..1.5))
}

pub struct GradStats {
    pub total: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradStats {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero; relative error is
/// meaningless there.
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < FD_ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central-difference check of `analytic` against `eval` for every
/// coordinate of the parameters returned by `params`.
pub fn fd_check<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> Vec<&mut Param<f64>>,
    analytic: &[&Vec<f64>],
    eval: impl Fn(&M) -> f64,
) -> GradStats {
    let mut m = model.clone();
    let shapes: Vec<usize> = params(&mut m).iter().map(|p| p.data.len()).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient buffer count");
    let mut stats = GradStats {
        total: 0,
        passed: 0,
        worst: 0.0,
    };
    for (t, &len) in shapes.iter().enumerate() {
        assert_eq!(analytic[t].len(), len);
        for i in 0..len {
            let orig = params(&mut m)[t].data[i];
            params(&mut m)[t].data[i] = orig + FD_STEP;
            let fp = eval(&m);
            params(&mut m)[t].data[i] = orig - FD_STEP;
            let fm = eval(&m);
            params(&mut m)[t].data[i] = orig;
            let e = rel_err(analytic[t][i], (fp - fm) / (2.0 * FD_STEP));
            stats.total += 1;
            if e <= FD_REL_TOL {
                stats.passed += 1;
            }
            stats.worst = stats.worst.max(e);
        }
    }
    stats
}
