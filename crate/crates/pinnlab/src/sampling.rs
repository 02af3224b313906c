//! Monte Carlo collocation batches: uniform i.i.d. interior, boundary and
//! initial-time samples over a rectangular space-time domain, reproducible
//! from a seed.

use crate::error::{Error, Result};
use crate::problems::RectDomain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCounts {
    pub interior: usize,
    pub boundary: usize,
    pub initial: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub point: [f64; 3],
    /// Outward unit normal, axis-aligned on a rectangle.
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub interior: Vec<[f64; 3]>,
    pub boundary: Vec<BoundarySample>,
    /// Spatial locations at t = 0.
    pub initial: Vec<[f64; 2]>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn counts(&self) -> BatchCounts {
        BatchCounts {
            interior: self.interior.len(),
            boundary: self.boundary.len(),
            initial: self.initial.len(),
        }
    }
}

/// Uniform draw from the open interval (lo, hi).
#[inline]
fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.gen();
        let x = lo + u * (hi - lo);
        if lo < x && x < hi {
            return x;
        }
    }
}

/// Draw a collocation batch over `domain x (0, t_final)`. Interior points
/// are strictly inside; boundary points lie on the four faces with
/// probability proportional to face length and carry outward unit normals;
/// initial points are spatial samples for the t = 0 terms. Identical seeds
/// give identical batches.
pub fn sample_batch(domain: &RectDomain, counts: BatchCounts, seed: u64) -> Result<SampleBatch> {
    domain.validate()?;
    if counts.interior == 0 || counts.boundary == 0 || counts.initial == 0 {
        return Err(Error::EmptySamples("batch counts must all be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let interior = (0..counts.interior)
        .map(|_| {
            [
                open_uniform(&mut rng, domain.x_min, domain.x_max),
                open_uniform(&mut rng, domain.y_min, domain.y_max),
                open_uniform(&mut rng, 0.0, domain.t_final),
            ]
        })
        .collect();

    let lx = domain.x_max - domain.x_min;
    let ly = domain.y_max - domain.y_min;
    let perimeter = 2.0 * (lx + ly);
    let boundary = (0..counts.boundary)
        .map(|_| {
            let s = rng.gen::<f64>() * perimeter;
            let t = open_uniform(&mut rng, 0.0, domain.t_final);
            let along_x = open_uniform(&mut rng, domain.x_min, domain.x_max);
            let along_y = open_uniform(&mut rng, domain.y_min, domain.y_max);
            let (point, normal) = if s < ly {
                ([domain.x_min, along_y, t], [-1.0, 0.0])
            } else if s < 2.0 * ly {
                ([domain.x_max, along_y, t], [1.0, 0.0])
            } else if s < 2.0 * ly + lx {
                ([along_x, domain.y_min, t], [0.0, -1.0])
            } else {
                ([along_x, domain.y_max, t], [0.0, 1.0])
            };
            BoundarySample { point, normal }
        })
        .collect();

    let initial = (0..counts.initial)
        .map(|_| {
            [
                open_uniform(&mut rng, domain.x_min, domain.x_max),
                open_uniform(&mut rng, domain.y_min, domain.y_max),
            ]
        })
        .collect();

    Ok(SampleBatch {
        interior,
        boundary,
        initial,
        seed,
    })
}

/// Derive a per-step (or per-run) seed from a master seed and an index,
/// splitmix64-style, so streams are decorrelated but reproducible.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
