//! Desk-scale metrics: identity collapse, per-band moment matching,
//! checkerboard energy and a domain-classifier flip rate.

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::bands::BandLayout;
use crate::datasets::Domain;
use crate::error::{ensure, Error, Result};

/// Held-out accuracy a classifier needs before its flip rate is reported.
pub const MIN_CLASSIFIER_ACCURACY: f64 = 0.95;
/// Batches with element variance below this have no checkerboard score.
pub const CHECKERBOARD_MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStatsDistance {
    pub per_band: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub identity_collapse: f64,
    pub band_stats_distance: BandStatsDistance,
    pub checkerboard: f64,
    pub flip_rate: f64,
}

/// Mean absolute elementwise change `map` makes to `batch`; zero for an
/// exact identity.
pub fn identity_collapse_score<F>(map: F, batch: &Array4<f32>) -> Result<f64>
where
    F: FnOnce(&Array4<f32>) -> Result<Array4<f32>>,
{
    let out = map(batch)?;
    ensure!(out.dim() == batch.dim(), Shape, "mapping changed shape {:?} -> {:?}", batch.dim(), out.dim());
    ensure!(!batch.is_empty(), InvalidArgument, "empty batch");
    Ok(out.iter().zip(batch).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / batch.len() as f64)
}

fn moments<'a>(values: impl Iterator<Item = &'a f32>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for &v in values {
        let v = v as f64;
        n += 1.0;
        sum += v;
        sq += v * v;
    }
    let mean = sum / n;
    (mean, (sq / n - mean * mean).max(0.0).sqrt())
}

/// Per band `|Δmean| + |Δstd|` over all elements of the band, and their sum.
pub fn band_stats_distance(adapted: &Array4<f32>, target: &Array4<f32>, layout: &BandLayout) -> Result<BandStatsDistance> {
    for b in [adapted, target] {
        ensure!(
            b.shape()[2] == layout.total_bins && !b.is_empty(),
            Shape,
            "batch with {} bins does not match layout of {}",
            b.shape()[2],
            layout.total_bins
        );
    }
    let per_band: Vec<f64> = (0..layout.num_bands())
        .map(|i| {
            let r = layout.range(i);
            let (ma, sa) = moments(adapted.slice(s![.., .., r.clone(), ..]).iter());
            let (mt, st) = moments(target.slice(s![.., .., r, ..]).iter());
            (ma - mt).abs() + (sa - st).abs()
        })
        .collect();
    Ok(BandStatsDistance {
        total: per_band.iter().sum(),
        per_band,
    })
}

/// Mean squared response of `[[1, -1], [-1, 1]]` over every 2×2 window,
/// divided by the element variance. Zero when the variance is negligible.
pub fn checkerboard_score(batch: &Array4<f32>) -> Result<f64> {
    let (_, _, f, t) = batch.dim();
    ensure!(f >= 2 && t >= 2, Shape, "checkerboard needs at least 2x2 maps, got {f}x{t}");
    let (_, std) = moments(batch.iter());
    let var = std * std;
    if var < CHECKERBOARD_MIN_VARIANCE {
        return Ok(0.0);
    }
    let (n, c, _, _) = batch.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for ch in 0..c {
            let m = batch.slice(s![i, ch, .., ..]);
            for a in 0..f - 1 {
                for b in 0..t - 1 {
                    let r = m[[a, b]] as f64 - m[[a, b + 1]] as f64 - m[[a + 1, b]] as f64 + m[[a + 1, b + 1]] as f64;
                    acc += r * r;
                }
            }
        }
    }
    let count = (n * c * (f - 1) * (t - 1)) as f64;
    Ok(acc / count / var)
}

/// Per-band mean of each sample, the classifier's features.
pub fn band_mean_features(batch: &Array4<f32>, layout: &BandLayout) -> Result<Vec<Vec<f64>>> {
    ensure!(
        batch.shape()[2] == layout.total_bins,
        Shape,
        "batch has {} bins, layout {}",
        batch.shape()[2],
        layout.total_bins
    );
    Ok(batch
        .outer_iter()
        .map(|sample| {
            (0..layout.num_bands())
                .map(|b| moments(sample.slice(s![.., layout.range(b), ..]).iter()).0)
                .collect()
        })
        .collect())
}

/// Logistic regression on standardized per-band means; positive class is
/// domain Y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifier {
    pub layout: BandLayout,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Accuracy on the held-out set it was validated against.
    pub heldout_accuracy: f64,
}

const CLASSIFIER_ITERS: usize = 2000;
const CLASSIFIER_LR: f64 = 0.5;
const CLASSIFIER_L2: f64 = 1e-4;

impl DomainClassifier {
    /// Fits on `train_x`/`train_y` and validates on held-out batches.
    /// Fails with [`Error::MetricUndefined`] below
    /// [`MIN_CLASSIFIER_ACCURACY`].
    pub fn fit(
        train_x: &Array4<f32>,
        train_y: &Array4<f32>,
        heldout_x: &Array4<f32>,
        heldout_y: &Array4<f32>,
        layout: &BandLayout,
    ) -> Result<Self> {
        let fx = band_mean_features(train_x, layout)?;
        let fy = band_mean_features(train_y, layout)?;
        ensure!(!fx.is_empty() && !fy.is_empty(), InvalidArgument, "classifier needs samples of both domains");
        let k = layout.num_bands();
        let all: Vec<(&Vec<f64>, f64)> = fx.iter().map(|f| (f, 0.0)).chain(fy.iter().map(|f| (f, 1.0))).collect();
        let n = all.len() as f64;
        let mean: Vec<f64> = (0..k).map(|j| all.iter().map(|(f, _)| f[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..k)
            .map(|j| (all.iter().map(|(f, _)| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8))
            .collect();
        let z: Vec<(Vec<f64>, f64)> = all
            .iter()
            .map(|(f, l)| ((0..k).map(|j| (f[j] - mean[j]) / std[j]).collect(), *l))
            .collect();
        let mut w = vec![0.0; k];
        let mut b = 0.0;
        for _ in 0..CLASSIFIER_ITERS {
            let mut gw = vec![0.0; k];
            let mut gb = 0.0;
            for (f, l) in &z {
                let p = sigmoid(b + f.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
                let e = p - l;
                gb += e;
                gw.iter_mut().zip(f).for_each(|(g, a)| *g += e * a);
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= CLASSIFIER_LR * (g / n + CLASSIFIER_L2 * *wj);
            }
            b -= CLASSIFIER_LR * gb / n;
        }
        let mut c = DomainClassifier {
            layout: layout.clone(),
            feature_mean: mean,
            feature_std: std,
            weights: w,
            bias: b,
            heldout_accuracy: 0.0,
        };
        c.heldout_accuracy = c.accuracy(heldout_x, heldout_y)?;
        if c.heldout_accuracy < MIN_CLASSIFIER_ACCURACY {
            return Err(Error::MetricUndefined(format!(
                "domain classifier reaches only {:.3} held-out accuracy (< {MIN_CLASSIFIER_ACCURACY})",
                c.heldout_accuracy
            )));
        }
        Ok(c)
    }

    /// Probability that each sample belongs to domain Y.
    pub fn prob_y(&self, batch: &Array4<f32>) -> Result<Vec<f64>> {
        Ok(band_mean_features(batch, &self.layout)?
            .iter()
            .map(|f| {
                let s: f64 = f
                    .iter()
                    .zip(&self.feature_mean)
                    .zip(&self.feature_std)
                    .zip(&self.weights)
                    .map(|(((v, m), sd), w)| (v - m) / sd * w)
                    .sum();
                sigmoid(s + self.bias)
            })
            .collect())
    }

    pub fn predict(&self, batch: &Array4<f32>) -> Result<Vec<Domain>> {
        Ok(self
            .prob_y(batch)?
            .into_iter()
            .map(|p| if p >= 0.5 { Domain::Y } else { Domain::X })
            .collect())
    }

    pub fn accuracy(&self, x: &Array4<f32>, y: &Array4<f32>) -> Result<f64> {
        let px = self.predict(x)?;
        let py = self.predict(y)?;
        let correct = px.iter().filter(|&&d| d == Domain::X).count() + py.iter().filter(|&&d| d == Domain::Y).count();
        Ok(correct as f64 / (px.len() + py.len()) as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fraction of labels equal to `target`.
pub fn flip_rate_from_labels(labels: &[Domain], target: Domain) -> Result<f64> {
    ensure!(!labels.is_empty(), InvalidArgument, "no labels");
    Ok(labels.iter().filter(|&&d| d == target).count() as f64 / labels.len() as f64)
}

/// Fraction of `adapted` samples the classifier assigns to `target`.
pub fn classifier_flip_rate(adapted: &Array4<f32>, classifier: &DomainClassifier, target: Domain) -> Result<f64> {
    flip_rate_from_labels(&classifier.predict(adapted)?, target)
}
