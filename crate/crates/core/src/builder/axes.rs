//! Principal axes of a point cloud.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, Point, Vector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AxesError {
    #[error("need at least 5 points, got {0}")]
    TooFewPoints(usize),
    #[error("points coincide; covariance has rank 0")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    /// Direction of largest spread (the grasp axis of a handle).
    pub principal: Vector,
    /// Direction of smallest spread (the face normal).
    pub normal: Vector,
}

/// PCA of a point set. Both axes are unit vectors with signs chosen so
/// they point toward `viewpoint`.
pub fn estimate_axes(points: &[Point], viewpoint: &Point) -> Result<Axes, AxesError> {
    if points.len() < 5 {
        return Err(AxesError::TooFewPoints(points.len()));
    }
    let c = centroid(points).expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues[order[2]];
    if scale <= 1e-18 {
        return Err(AxesError::Degenerate);
    }
    let to_view = viewpoint - c;
    let orient = |v: Vector| {
        let v = v.normalize();
        if v.dot(&to_view) < 0.0 {
            -v
        } else {
            v
        }
    };
    Ok(Axes {
        principal: orient(eig.eigenvectors.column(order[2]).into_owned()),
        normal: orient(eig.eigenvectors.column(order[0]).into_owned()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_and_plane() {
        let seg: Vec<Point> = (0..10).map(|i| Point::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let a = estimate_axes(&seg, &Point::new(5.0, 0.0, 0.0)).unwrap();
        assert!((a.principal - Vector::x()).norm() < 1e-9);

        let mut plane = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                plane.push(Point::new(i as f64 * 0.1, j as f64 * 0.07, 0.0));
            }
        }
        let a = estimate_axes(&plane, &Point::new(0.0, 0.0, 2.0)).unwrap();
        assert!((a.normal - Vector::z()).norm() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let p = vec![Point::new(1.0, 1.0, 1.0); 6];
        assert_eq!(estimate_axes(&p, &Point::origin()), Err(AxesError::Degenerate));
        assert_eq!(
            estimate_axes(&p[..3], &Point::origin()),
            Err(AxesError::TooFewPoints(3))
        );
    }
}
