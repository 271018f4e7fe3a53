//! Full cycle objective with hand-written backward pass. The trainer and the
//! public gradient entry point share these pieces.

use ndarray::{concatenate, s, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{md_side, mean_abs_with_grad, LossReport, LossVariant, Side};
use crate::error::{ensure, Result};
use crate::models::{assemble, Direction, GeneratorMode, GeneratorTrace, ModelBundle};
use crate::nn::{zero_grads, Grads, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub cycle_weight: f64,
    pub identity_weight: f64,
    pub variant: LossVariant,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            cycle_weight: 10.0,
            identity_weight: 0.0,
            variant: LossVariant::NonsaturatingBce,
        }
    }
}

/// Gradient buffers mirroring a bundle's networks.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleGrads<T> {
    pub gen_xy: Vec<Grads<T>>,
    pub gen_yx: Vec<Grads<T>>,
    pub disc_x: Vec<Grads<T>>,
    pub disc_y: Vec<Grads<T>>,
}

impl<T: Scalar> BundleGrads<T> {
    pub fn zeros(bundle: &ModelBundle<T>) -> Self {
        BundleGrads {
            gen_xy: bundle.gen_xy.iter().map(|g| zero_grads(&g.params)).collect(),
            gen_yx: bundle.gen_yx.iter().map(|g| zero_grads(&g.params)).collect(),
            disc_x: bundle.disc_x.iter().map(|d| zero_grads(&d.params)).collect(),
            disc_y: bundle.disc_y.iter().map(|d| zero_grads(&d.params)).collect(),
        }
    }

    pub(crate) fn gens_mut(&mut self, dir: Direction) -> &mut [Grads<T>] {
        match dir {
            Direction::XToY => &mut self.gen_xy,
            Direction::YToX => &mut self.gen_yx,
        }
    }

    /// Generator gradients flattened in [`ModelBundle::generator_params`]
    /// order.
    pub fn generator_flat(&self) -> Vec<&Vec<T>> {
        self.gen_xy.iter().chain(&self.gen_yx).flatten().collect()
    }

    /// Discriminator gradients in [`ModelBundle::discriminator_params`]
    /// order.
    pub fn discriminator_flat(&self) -> Vec<&Vec<T>> {
        self.disc_x.iter().chain(&self.disc_y).flatten().collect()
    }
}

/// One direction's generator set applied to a batch.
pub(crate) struct GenPass<T> {
    traces: Vec<GeneratorTrace<T>>,
    outputs: Vec<Array4<T>>,
    pub assembled: Array4<T>,
}

pub(crate) fn gen_forward<T: Scalar>(
    bundle: &ModelBundle<T>,
    dir: Direction,
    x: &Array4<T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<GenPass<T>> {
    let mut traces = Vec::new();
    let mut outputs = Vec::new();
    for g in bundle.generators(dir) {
        let noise = match (g.config.noise_dim, rng.as_deref_mut()) {
            (0, _) | (_, None) => None,
            (k, Some(r)) => {
                let (n, _, f, t) = x.dim();
                Some(Array4::from_shape_simple_fn((n, k, f, t), || T::lit(StandardNormal.sample(r))))
            }
        };
        let (y, trace) = g.forward_traced(x, noise.as_ref())?;
        traces.push(trace);
        outputs.push(y);
    }
    let assembled = assemble(bundle.config.assembly_layout(dir), outputs.clone())?;
    Ok(GenPass {
        traces,
        outputs,
        assembled,
    })
}

/// Batch the target discriminators judge. In one-many mode every band
/// generator's full output is judged, stacked along the batch axis.
pub(crate) fn fake_batch<T: Scalar>(bundle: &ModelBundle<T>, pass: &GenPass<T>) -> Array4<T> {
    match bundle.config.generator_mode {
        GeneratorMode::Single | GeneratorMode::OneOne => pass.assembled.clone(),
        GeneratorMode::OneMany => {
            let views: Vec<_> = pass.outputs.iter().map(|o| o.view()).collect();
            concatenate(Axis(0), &views).expect("generator outputs share a shape")
        }
    }
}

/// Backpropagates a gradient on the assembled output (plus, optionally, one
/// on the fake batch) through every generator of `dir`.
fn gen_backward<T: Scalar>(
    bundle: &ModelBundle<T>,
    dir: Direction,
    pass: &GenPass<T>,
    d_assembled: &Array4<T>,
    d_fake: Option<&Array4<T>>,
    grads: &mut [Grads<T>],
) -> Array4<T> {
    let mode = bundle.config.generator_mode;
    let mut d_total = d_assembled.clone();
    if let (Some(df), GeneratorMode::Single | GeneratorMode::OneOne) = (d_fake, mode) {
        d_total += df;
    }
    let n = d_assembled.shape()[0];
    let mut dx: Option<Array4<T>> = None;
    for (k, (g, trace)) in bundle.generators(dir).iter().zip(&pass.traces).enumerate() {
        let mut d_out = match bundle.config.assembly_layout(dir) {
            None => d_total.clone(),
            Some(layout) => {
                let mut d = Array4::zeros(d_total.raw_dim());
                let r = layout.range(k);
                d.slice_mut(s![.., .., r.clone(), ..]).assign(&d_total.slice(s![.., .., r, ..]));
                d
            }
        };
        if let (Some(df), GeneratorMode::OneMany) = (d_fake, mode) {
            d_out += &df.slice(s![k * n..(k + 1) * n, .., .., ..]);
        }
        let d_in = g.backward(trace, &d_out, &mut grads[k]);
        match dx.as_mut() {
            Some(acc) => *acc += &d_in,
            None => dx = Some(d_in),
        }
    }
    dx.expect("at least one generator")
}

/// Discriminator losses of both domains against the given fakes. Fakes are
/// treated as constants.
pub(crate) fn discriminator_side<T: Scalar>(
    bundle: &ModelBundle<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    fake_x: &Array4<T>,
    fake_y: &Array4<T>,
    variant: LossVariant,
    mut grads: Option<&mut BundleGrads<T>>,
) -> Result<(T, Vec<T>, T, Vec<T>)> {
    let cfg = &bundle.config;
    let domain = |discs, layout, real: &Array4<T>, fake: &Array4<T>, g: Option<&mut [Grads<T>]>| -> Result<(T, Vec<T>)> {
        let mut g = g;
        let (_, real_b, _) = md_side(real, discs, layout, variant, Side::RealTerm, g.as_deref_mut(), false)?;
        let (_, fake_b, _) = md_side(fake, discs, layout, variant, Side::FakeTerm, g, false)?;
        let per_band: Vec<T> = real_b.iter().zip(&fake_b).map(|(&r, &f)| r + f).collect();
        Ok((per_band.iter().copied().sum(), per_band))
    };
    let (dx, dx_b) = domain(&bundle.disc_x, &cfg.layout_x, x, fake_x, grads.as_deref_mut().map(|g| &mut g.disc_x[..]))?;
    let (dy, dy_b) = domain(&bundle.disc_y, &cfg.layout_y, y, fake_y, grads.map(|g| &mut g.disc_y[..]))?;
    Ok((dx, dx_b, dy, dy_b))
}

pub(crate) struct GeneratorSide<T> {
    pub g_adv_xy: T,
    pub g_adv_yx: T,
    pub cycle: T,
    pub identity: T,
    pub total_g: T,
}

/// Generator objective given the forward translations `fy = G_xy(x)` and
/// `fx = G_yx(y)`. Accumulates generator gradients when `grads` is given;
/// discriminator parameters only receive scratch gradients.
pub(crate) fn generator_side<T: Scalar>(
    bundle: &ModelBundle<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    fy: &GenPass<T>,
    fx: &GenPass<T>,
    cfg: &ObjectiveConfig,
    grads: Option<&mut BundleGrads<T>>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<GeneratorSide<T>> {
    let want = grads.is_some();
    let lambda = T::lit(cfg.cycle_weight);
    let mu = T::lit(cfg.identity_weight);
    let bc = &bundle.config;

    let recon_x = gen_forward(bundle, Direction::YToX, &fy.assembled, rng.as_deref_mut())?;
    let recon_y = gen_forward(bundle, Direction::XToY, &fx.assembled, rng.as_deref_mut())?;
    let (g_adv_xy, _, d_fake_y) = md_side(
        &fake_batch(bundle, fy),
        &bundle.disc_y,
        &bc.layout_y,
        cfg.variant,
        Side::GeneratorTerm,
        None,
        want,
    )?;
    let (g_adv_yx, _, d_fake_x) = md_side(
        &fake_batch(bundle, fx),
        &bundle.disc_x,
        &bc.layout_x,
        cfg.variant,
        Side::GeneratorTerm,
        None,
        want,
    )?;
    let (cyc_x, d_recon_x) = mean_abs_with_grad(&recon_x.assembled, x, lambda)?;
    let (cyc_y, d_recon_y) = mean_abs_with_grad(&recon_y.assembled, y, lambda)?;
    let cycle = cyc_x + cyc_y;

    let identity_passes = if cfg.identity_weight > 0.0 {
        let id_y = gen_forward(bundle, Direction::XToY, y, rng.as_deref_mut())?;
        let id_x = gen_forward(bundle, Direction::YToX, x, rng.as_deref_mut())?;
        let (iy, d_iy) = mean_abs_with_grad(&id_y.assembled, y, mu)?;
        let (ix, d_ix) = mean_abs_with_grad(&id_x.assembled, x, mu)?;
        Some((iy + ix, (id_y, d_iy), (id_x, d_ix)))
    } else {
        None
    };
    let identity = identity_passes.as_ref().map_or(T::zero(), |p| p.0);
    let total_g = g_adv_xy + g_adv_yx + lambda * cycle + mu * identity;
    ensure!(
        total_g.is_finite(),
        NonFinite,
        "generator objective is not finite (adv_xy {:?}, adv_yx {:?}, cycle {:?})",
        g_adv_xy,
        g_adv_yx,
        cycle
    );

    if let Some(grads) = grads {
        let d_fy = gen_backward(bundle, Direction::YToX, &recon_x, &d_recon_x, None, grads.gens_mut(Direction::YToX));
        let d_fx = gen_backward(bundle, Direction::XToY, &recon_y, &d_recon_y, None, grads.gens_mut(Direction::XToY));
        gen_backward(bundle, Direction::XToY, fy, &d_fy, d_fake_y.as_ref(), grads.gens_mut(Direction::XToY));
        gen_backward(bundle, Direction::YToX, fx, &d_fx, d_fake_x.as_ref(), grads.gens_mut(Direction::YToX));
        if let Some((_, (id_y, d_iy), (id_x, d_ix))) = &identity_passes {
            gen_backward(bundle, Direction::XToY, id_y, d_iy, None, grads.gens_mut(Direction::XToY));
            gen_backward(bundle, Direction::YToX, id_x, d_ix, None, grads.gens_mut(Direction::YToX));
        }
    }
    Ok(GeneratorSide {
        g_adv_xy,
        g_adv_yx,
        cycle,
        identity,
        total_g,
    })
}

fn check_batches<T: Scalar>(bundle: &ModelBundle<T>, x: &Array4<T>, y: &Array4<T>) -> Result<()> {
    let bins = bundle.config.bins();
    for (name, b) in [("x", x), ("y", y)] {
        let (n, c, f, t) = b.dim();
        ensure!(
            n >= 1 && c == 1 && f == bins && t == bundle.config.frames,
            Shape,
            "{name} batch {:?} must be (n, 1, {bins}, {})",
            b.dim(),
            bundle.config.frames
        );
    }
    Ok(())
}

fn objective_impl<T: Scalar>(
    bundle: &ModelBundle<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    cfg: &ObjectiveConfig,
    mut grads: Option<&mut BundleGrads<T>>,
) -> Result<LossReport> {
    check_batches(bundle, x, y)?;
    let fy = gen_forward(bundle, Direction::XToY, x, None)?;
    let fx = gen_forward(bundle, Direction::YToX, y, None)?;
    let (d_x, band_x, d_y, band_y) = discriminator_side(
        bundle,
        x,
        y,
        &fake_batch(bundle, &fx),
        &fake_batch(bundle, &fy),
        cfg.variant,
        grads.as_deref_mut(),
    )?;
    let g = generator_side(bundle, x, y, &fy, &fx, cfg, grads, None)?;
    let f = |v: T| v.to_f64_lossy();
    Ok(LossReport {
        d_loss_x: f(d_x),
        d_loss_y: f(d_y),
        per_band_d_x: band_x.into_iter().map(f).collect(),
        per_band_d_y: band_y.into_iter().map(f).collect(),
        g_adv_xy: f(g.g_adv_xy),
        g_adv_yx: f(g.g_adv_yx),
        cycle: f(g.cycle),
        identity: f(g.identity),
        total_g: f(g.total_g),
    })
}

/// Evaluates every term of the multi-discriminator cycle objective on one
/// pair of normalized batches. Noise channels, if any, are fed zeros.
pub fn md_cyclegan_objective<T: Scalar>(
    bundle: &ModelBundle<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    cfg: &ObjectiveConfig,
) -> Result<LossReport> {
    objective_impl(bundle, x, y, cfg, None)
}

/// Like [`md_cyclegan_objective`], also returning gradients: generator
/// buffers hold `∂ total_g`, discriminator buffers `∂ (d_loss_x + d_loss_y)`.
pub fn objective_gradients<T: Scalar>(
    bundle: &ModelBundle<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    cfg: &ObjectiveConfig,
) -> Result<(LossReport, BundleGrads<T>)> {
    let mut grads = BundleGrads::zeros(bundle);
    let report = objective_impl(bundle, x, y, cfg, Some(&mut grads))?;
    Ok((report, grads))
}
