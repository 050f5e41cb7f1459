use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Centers the cloud at its centroid and scales it so the farthest point
/// lies on the unit sphere.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Degenerate("cloud has no points".into()));
    }
    if !cloud.is_finite() {
        return Err(Error::Degenerate("cloud has non-finite coordinates".into()));
    }
    let c = cloud.centroid();
    let centered: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let scale = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    Ok(PointCloud::new(
        centered
            .into_iter()
            .map(|p| [p[0] / scale, p[1] / scale, p[2] / scale])
            .collect(),
    ))
}

/// Uniform resampling to `n` points: without replacement when the cloud has
/// at least `n` points, with replacement otherwise.
pub fn resample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptySet("resample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud.points();
    let picked: Vec<[f64; 3]> = if pts.len() >= n {
        sample(&mut rng, pts.len(), n)
            .iter()
            .map(|i| pts[i])
            .collect()
    } else {
        (0..n).map(|_| pts[rng.gen_range(0..pts.len())]).collect()
    };
    Ok(PointCloud::new(picked))
}
