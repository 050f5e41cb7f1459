use std::ops::Deref;

use crate::autodiff::Tensor2;
use crate::error::{Error, Result};

/// Ordered list of 3D points sampled from one structure's surface. The
/// order carries no meaning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud { points }
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    /// `N×3` tensor view of the cloud.
    pub fn to_tensor(&self) -> Tensor2 {
        let data = self.points.iter().flatten().copied().collect();
        Tensor2::from_vec(self.points.len(), 3, data).expect("N×3")
    }

    pub fn from_tensor(t: &Tensor2) -> Result<Self> {
        if t.cols() != 3 {
            return Err(Error::Dimension {
                op: "point cloud from tensor",
                left: t.shape(),
                right: (t.rows(), 3),
            });
        }
        Ok(PointCloud {
            points: t
                .data()
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        })
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Applies the row-vector transform `p ↦ M p` for a 3×3 matrix `m`.
    pub fn transformed(&self, m: &[[f64; 3]; 3]) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| {
                    let mut q = [0.0; 3];
                    for (r, row) in m.iter().enumerate() {
                        q[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
                    }
                    q
                })
                .collect(),
        }
    }

    /// Index-matched Euclidean distances between two clouds of equal size.
    pub fn pointwise_distances(&self, other: &PointCloud) -> Result<Vec<f64>> {
        if self.len() != other.len() {
            return Err(Error::UnequalCardinality(self.len(), other.len()));
        }
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| {
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .collect())
    }
}

impl Deref for PointCloud {
    type Target = [[f64; 3]];

    fn deref(&self) -> &Self::Target {
        &self.points
    }
}

impl From<Vec<[f64; 3]>> for PointCloud {
    fn from(points: Vec<[f64; 3]>) -> Self {
        PointCloud::new(points)
    }
}
