//! Contiguous, non-overlapping partition of the frequency axis. Each band
//! feeds one discriminator.

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::Spectrogram;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandLayout {
    pub total_bins: usize,
    pub widths: Vec<usize>,
    pub offsets: Vec<usize>,
}

/// Equal floor-width bands; the last band takes the remainder.
pub fn build_band_layout(total_bins: usize, num_bands: usize) -> Result<BandLayout> {
    ensure!(num_bands >= 1, InvalidArgument, "need at least one band");
    ensure!(
        num_bands <= total_bins,
        InvalidArgument,
        "{num_bands} bands do not fit in {total_bins} bins"
    );
    let base = total_bins / num_bands;
    let mut widths = vec![base; num_bands];
    widths[num_bands - 1] = total_bins - base * (num_bands - 1);
    BandLayout::from_widths(widths)
}

impl BandLayout {
    pub fn from_widths(widths: Vec<usize>) -> Result<Self> {
        ensure!(!widths.is_empty(), InvalidArgument, "band layout needs at least one band");
        ensure!(widths.iter().all(|&w| w >= 1), InvalidArgument, "band widths must be >= 1: {widths:?}");
        let offsets = widths
            .iter()
            .scan(0, |acc, &w| {
                let start = *acc;
                *acc += w;
                Some(start)
            })
            .collect();
        Ok(BandLayout {
            total_bins: widths.iter().sum(),
            widths,
            offsets,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.widths.len()
    }

    pub fn range(&self, band: usize) -> std::ops::Range<usize> {
        self.offsets[band]..self.offsets[band] + self.widths[band]
    }

    pub fn validate(&self) -> Result<()> {
        let rebuilt = BandLayout::from_widths(self.widths.clone())?;
        ensure!(
            rebuilt == *self,
            InvalidArgument,
            "band layout offsets/total inconsistent with widths {:?}",
            self.widths
        );
        Ok(())
    }

    /// Slices a `(batch, channel, freq, time)` tensor into per-band tensors.
    pub fn slice_batch<T: Clone>(&self, x: &Array4<T>) -> Result<Vec<Array4<T>>> {
        ensure!(
            x.shape()[2] == self.total_bins,
            Shape,
            "batch has {} bins, layout covers {}",
            x.shape()[2],
            self.total_bins
        );
        Ok((0..self.num_bands())
            .map(|b| x.slice(s![.., .., self.range(b), ..]).to_owned())
            .collect())
    }

    /// Inverse of [`slice_batch`](Self::slice_batch).
    pub fn concat_batch<T: Clone>(&self, parts: &[Array4<T>]) -> Result<Array4<T>> {
        ensure!(parts.len() == self.num_bands(), Shape, "expected {} band slices", self.num_bands());
        for (p, &w) in parts.iter().zip(&self.widths) {
            ensure!(p.shape()[2] == w, Shape, "band slice width {} != {}", p.shape()[2], w);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(2), &views)
            .map(|a| a.as_standard_layout().into_owned())
            .map_err(|e| crate::Error::Shape(e.to_string()))
    }
}

/// Splits a spectrogram along frequency; concatenating the slices restores
/// the input.
pub fn slice_bands(spec: &Spectrogram, layout: &BandLayout) -> Result<Vec<Spectrogram>> {
    ensure!(
        spec.bins() == layout.total_bins,
        Shape,
        "spectrogram has {} bins, layout covers {}",
        spec.bins(),
        layout.total_bins
    );
    Ok((0..layout.num_bands())
        .map(|b| {
            let r = layout.range(b);
            Spectrogram {
                mag: spec.mag.slice(s![.., r.clone()]).to_owned(),
                phase: spec.phase.as_ref().map(|p| p.slice(s![.., r.clone()]).to_owned()),
                frame_hop_s: spec.frame_hop_s,
                window_s: spec.window_s,
                normalized: spec.normalized,
            }
        })
        .collect())
}

/// Concatenates band slices along frequency.
pub fn concat_bands(slices: &[Spectrogram]) -> Result<Spectrogram> {
    ensure!(!slices.is_empty(), InvalidArgument, "no slices to concatenate");
    let first = &slices[0];
    let mags: Vec<_> = slices.iter().map(|s| s.mag.view()).collect();
    let mag = ndarray::concatenate(Axis(1), &mags).map_err(|e| crate::Error::Shape(e.to_string()))?;
    let phase = if slices.iter().all(|s| s.phase.is_some()) {
        let phases: Vec<_> = slices.iter().map(|s| s.phase.as_ref().unwrap().view()).collect();
        Some(ndarray::concatenate(Axis(1), &phases).map_err(|e| crate::Error::Shape(e.to_string()))?)
    } else {
        None
    };
    Ok(Spectrogram {
        mag,
        phase,
        frame_hop_s: first.frame_hop_s,
        window_s: first.window_s,
        normalized: first.normalized,
    })
}
