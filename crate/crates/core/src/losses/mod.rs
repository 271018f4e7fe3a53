//! Adversarial, cycle and identity losses. Everything here is minimized.

mod objective;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::bands::BandLayout;
use crate::error::{ensure, Result};
use crate::models::Discriminator;
use crate::nn::{zero_grads, Grads, Scalar};

pub use objective::{md_cyclegan_objective, objective_gradients, BundleGrads, ObjectiveConfig};
pub(crate) use objective::{discriminator_side, fake_batch, gen_forward, generator_side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Sigmoid cross-entropy; the generator maximizes `log D(G(x))`.
    #[default]
    #[serde(alias = "bce")]
    NonsaturatingBce,
    /// Raw logits regressed to 1 (real) and 0 (fake).
    #[serde(alias = "ls")]
    LeastSquares,
}

impl std::str::FromStr for LossVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" | "nonsaturating_bce" => Ok(LossVariant::NonsaturatingBce),
            "ls" | "least_squares" => Ok(LossVariant::LeastSquares),
            other => Err(crate::Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// Which per-sample term of the adversarial game to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Discriminator on real data (target 1).
    RealTerm,
    /// Discriminator on generated data (target 0).
    FakeTerm,
    /// Generator on generated data (target 1).
    GeneratorTerm,
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Value and derivative of one per-sample term.
pub(crate) fn term<T: Scalar>(variant: LossVariant, side: Side, z: T) -> (T, T) {
    let half = T::lit(0.5);
    match (variant, side) {
        (LossVariant::NonsaturatingBce, Side::RealTerm | Side::GeneratorTerm) => (softplus(-z), sigmoid(z) - T::one()),
        (LossVariant::NonsaturatingBce, Side::FakeTerm) => (softplus(z), sigmoid(z)),
        (LossVariant::LeastSquares, Side::RealTerm | Side::GeneratorTerm) => {
            let d = z - T::one();
            (half * d * d, d)
        }
        (LossVariant::LeastSquares, Side::FakeTerm) => (half * z * z, z),
    }
}

fn check_logits<T: Scalar>(logits: &[T], what: &str) -> Result<()> {
    ensure!(!logits.is_empty(), InvalidArgument, "{what}: empty batch");
    ensure!(logits.iter().all(|z| z.is_finite()), NonFinite, "{what}: non-finite logit");
    Ok(())
}

/// Batch mean of one term, with the per-logit gradient of that mean.
pub(crate) fn side_mean<T: Scalar>(logits: &[T], variant: LossVariant, side: Side) -> Result<(T, Vec<T>)> {
    check_logits(logits, "adversarial loss")?;
    let n = T::lit(logits.len() as f64);
    let mut total = T::zero();
    let grads = logits
        .iter()
        .map(|&z| {
            let (v, d) = term(variant, side, z);
            total += v;
            d / n
        })
        .collect();
    Ok((total / n, grads))
}

/// Mean real term plus mean fake term.
pub fn discriminator_loss<T: Scalar>(real_logits: &[T], fake_logits: &[T], variant: LossVariant) -> Result<T> {
    Ok(side_mean(real_logits, variant, Side::RealTerm)?.0 + side_mean(fake_logits, variant, Side::FakeTerm)?.0)
}

pub fn generator_adversarial_loss<T: Scalar>(fake_logits: &[T], variant: LossVariant) -> Result<T> {
    Ok(side_mean(fake_logits, variant, Side::GeneratorTerm)?.0)
}

/// Mean of `|a - b|` and its gradient with respect to `a`.
pub(crate) fn mean_abs_with_grad<T: Scalar>(a: &Array4<T>, b: &Array4<T>, scale: T) -> Result<(T, Array4<T>)> {
    ensure!(a.dim() == b.dim(), Shape, "shape mismatch {:?} vs {:?}", a.dim(), b.dim());
    ensure!(!a.is_empty(), InvalidArgument, "empty batch");
    let n = T::lit(a.len() as f64);
    let diff = a - b;
    let value = diff.iter().map(|d| d.abs()).sum::<T>() / n;
    let grad = diff.mapv(|d| if d == T::zero() { T::zero() } else { d.signum() * scale / n });
    Ok((value, grad))
}

fn mean_abs<T: Scalar>(a: &Array4<T>, b: &Array4<T>) -> Result<T> {
    ensure!(a.dim() == b.dim(), Shape, "shape mismatch {:?} vs {:?}", a.dim(), b.dim());
    ensure!(!a.is_empty(), InvalidArgument, "empty batch");
    Ok(a.iter().zip(b).map(|(&p, &q)| (p - q).abs()).sum::<T>() / T::lit(a.len() as f64))
}

/// ℓ₁ cycle penalty: per-element mean over the X cycle plus that over the
/// Y cycle.
pub fn cycle_consistency_loss<T: Scalar>(x: &Array4<T>, recon_x: &Array4<T>, y: &Array4<T>, recon_y: &Array4<T>) -> Result<T> {
    Ok(mean_abs(recon_x, x)? + mean_abs(recon_y, y)?)
}

/// Mean absolute difference between a generator's output on target-domain
/// input and that input.
pub fn identity_mapping_loss<T: Scalar>(y: &Array4<T>, mapped: &Array4<T>) -> Result<T> {
    mean_abs(mapped, y)
}

/// One side of the multi-discriminator adversarial loss: each band slice is
/// judged by its own discriminator and the per-band means are summed.
pub fn md_adversarial_loss<T: Scalar>(
    batch: &Array4<T>,
    discs: &[Discriminator<T>],
    layout: &BandLayout,
    variant: LossVariant,
    side: Side,
) -> Result<(T, Vec<T>)> {
    let (total, per_band, _) = md_side(batch, discs, layout, variant, side, None, false)?;
    Ok((total, per_band))
}

/// Forward and optional backward of [`md_adversarial_loss`]. Parameter
/// gradients accumulate into `grads` when given; the batch gradient is
/// returned when `want_dx`.
pub(crate) fn md_side<T: Scalar>(
    batch: &Array4<T>,
    discs: &[Discriminator<T>],
    layout: &BandLayout,
    variant: LossVariant,
    side: Side,
    mut grads: Option<&mut [Grads<T>]>,
    want_dx: bool,
) -> Result<(T, Vec<T>, Option<Array4<T>>)> {
    ensure!(
        discs.len() == layout.num_bands(),
        Shape,
        "{} discriminators for {} bands",
        discs.len(),
        layout.num_bands()
    );
    if let Some(g) = grads.as_deref() {
        ensure!(g.len() == discs.len(), Shape, "gradient buffers do not match discriminators");
    }
    let slices = layout.slice_batch(batch)?;
    let mut per_band = Vec::with_capacity(discs.len());
    let mut dxs = Vec::new();
    for (b, (d, slice)) in discs.iter().zip(&slices).enumerate() {
        let (logits, trace) = d.forward_traced(slice)?;
        let (loss, dlogits) = side_mean(&logits, variant, side).map_err(|e| match e {
            crate::Error::NonFinite(m) => crate::Error::NonFinite(format!("band {b}: {m}")),
            other => other,
        })?;
        per_band.push(loss);
        if grads.is_some() || want_dx {
            let mut scratch;
            let g = match grads.as_deref_mut() {
                Some(g) => &mut g[b],
                None => {
                    scratch = zero_grads(&d.params);
                    &mut scratch
                }
            };
            if let Some(dx) = d.backward(&trace, &dlogits, g, want_dx) {
                dxs.push(dx);
            }
        }
    }
    let total = per_band.iter().copied().sum();
    let dx = if want_dx { Some(layout.concat_batch(&dxs)?) } else { None };
    Ok((total, per_band, dx))
}

/// Per-step loss summary. Discriminator totals are sums of their per-band
/// entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss_x: f64,
    pub d_loss_y: f64,
    pub per_band_d_x: Vec<f64>,
    pub per_band_d_y: Vec<f64>,
    pub g_adv_xy: f64,
    pub g_adv_yx: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.d_loss_x, self.d_loss_y, self.g_adv_xy, self.g_adv_yx, self.cycle, self.identity, self.total_g]
            .iter()
            .chain(&self.per_band_d_x)
            .chain(&self.per_band_d_y)
            .all(|v| v.is_finite())
    }
}
