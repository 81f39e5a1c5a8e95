use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
}

impl DistanceMetric {
    pub fn between(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (dx, dy) = ((a[0] - b[0]).abs(), (a[1] - b[1]).abs());
        match self {
            DistanceMetric::Euclidean => dx.hypot(dy),
            DistanceMetric::Manhattan => dx + dy,
        }
    }
}

/// Pairwise distances between `[N, 2]` planar coordinates.
pub fn distance_matrix(coords: &Tensor<f64>, metric: DistanceMetric) -> Result<Tensor<f64>> {
    if coords.rank() != 2 || coords.shape()[1] != 2 {
        return Err(Error::Data(format!("coordinates must be [N, 2], got {:?}", coords.shape())));
    }
    let n = coords.shape()[0];
    let c = coords.data();
    let point = |i: usize| [c[2 * i], c[2 * i + 1]];
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric.between(point(i), point(j));
            out.set(&[i, j], d);
            out.set(&[j, i], d);
        }
    }
    Ok(out)
}

/// Thresholded Gaussian kernel: `exp(-d²/σ²)` where `d <= kappa`, else 0.
pub fn gaussian_adjacency(dist: &Tensor<f64>, sigma: f64, kappa: f64) -> Result<Tensor<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Data(format!("kernel width must be positive, got {sigma}")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::Data(format!("kernel threshold must be nonnegative, got {kappa}")));
    }
    Ok(dist.map(|d| if d <= kappa { (-(d * d) / (sigma * sigma)).exp() } else { 0.0 }))
}

/// Mean of the off-diagonal entries; the initial perception radius.
pub fn mean_distance(dist: &Tensor<f64>) -> f64 {
    let n = dist.shape()[0];
    if n < 2 {
        return 0.0;
    }
    let total: f64 = dist.data().iter().sum();
    total / (n * (n - 1)) as f64
}

/// Checks the invariants of a distance matrix: square, finite, nonnegative, zero diagonal.
pub fn validate_distances(dist: &Tensor<f64>) -> Result<()> {
    if dist.rank() != 2 || dist.shape()[0] != dist.shape()[1] {
        return Err(Error::Data(format!("distance matrix must be square, got {:?}", dist.shape())));
    }
    let n = dist.shape()[0];
    for i in 0..n {
        for j in 0..n {
            let d = dist.at(&[i, j]);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Data(format!("distance ({i}, {j}) = {d} is not a finite nonnegative number")));
            }
            if i == j && d != 0.0 {
                return Err(Error::Data(format!("distance diagonal ({i}, {i}) = {d} must be zero")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> Tensor<f64> {
        Tensor::from_f64(&[2, 2], &[0.0, 0.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn three_four_five() {
        let e = distance_matrix(&pair(), DistanceMetric::Euclidean).unwrap();
        assert_eq!(e.at(&[0, 1]), 5.0);
        assert_eq!(e.at(&[1, 0]), 5.0);
        let m = distance_matrix(&pair(), DistanceMetric::Manhattan).unwrap();
        assert_eq!(m.at(&[0, 1]), 7.0);
        assert_eq!(m.at(&[0, 0]), 0.0);
        assert_eq!(m.at(&[1, 1]), 0.0);
    }

    #[test]
    fn kernel_examples() {
        let d = Tensor::from_f64(&[1, 3], &[0.0, 2.0, 5.0]).unwrap();
        let w = gaussian_adjacency(&d, 2.0, 4.0).unwrap();
        assert_eq!(w.data()[0], 1.0);
        assert!((w.data()[1] - (-1f64).exp()).abs() < 1e-15);
        assert!((w.data()[1] - 0.3679).abs() < 1e-4);
        assert_eq!(w.data()[2], 0.0);
        assert!(gaussian_adjacency(&d, 0.0, 1.0).is_err());
        assert!(gaussian_adjacency(&d, 1.0, -1.0).is_err());
    }

    #[test]
    fn validation_flags_bad_diagonal() {
        let d = Tensor::from_f64(&[2, 2], &[0.0, 1.0, 1.0, 0.5]).unwrap();
        assert!(validate_distances(&d).is_err());
    }

    proptest! {
        #[test]
        fn triangle_inequality(points in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..12)) {
            let flat: Vec<f64> = points.iter().flat_map(|&(x, y)| [x, y]).collect();
            let coords = Tensor::from_f64(&[points.len(), 2], &flat).unwrap();
            for metric in [DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
                let d = distance_matrix(&coords, metric).unwrap();
                validate_distances(&d).unwrap();
                let n = points.len();
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(d.at(&[i, j]), d.at(&[j, i]));
                        for k in 0..n {
                            prop_assert!(d.at(&[i, j]) <= d.at(&[i, k]) + d.at(&[k, j]) + 1e-9);
                        }
                    }
                }
            }
        }
    }
}
