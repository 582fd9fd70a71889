use serde::{Deserialize, Serialize};

use crate::volume_io::{SubsampledVolume, Volume3D};

/// Equal-width histogram over `[min, max]` of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    if values.is_empty() {
        return Histogram { edges: vec![0.0; bins + 1], counts: vec![0; bins] };
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let edges = (0..=bins).map(|i| lo + span * i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let k = if span > 0.0 {
            (((v - lo) / span) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[k.min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

impl SubsampledVolume {
    pub fn histogram(&self, bins: usize) -> Histogram {
        histogram(&self.volume.data, bins)
    }
}

/// Mean of every z-image, bottom first.
pub fn z_profile(vol: &Volume3D<f64>) -> Vec<f64> {
    let n = vol.slice_len();
    (0..vol.dims[2])
        .map(|z| vol.z_slice(z).iter().sum::<f64>() / n as f64)
        .collect()
}
