use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::pose::Point3;
use crate::spatial::PointIndex;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEstimate {
    /// Unit normal oriented toward the sensor origin.
    pub normal: Vector3<f64>,
    /// `(λ2 − λ3) / λ1` of the neighbourhood covariance, λ1 ≥ λ2 ≥ λ3.
    pub planarity: f64,
    pub usable: bool,
}

/// PCA normals over the `neighbors` nearest points (the point included).
pub fn estimate_normals(
    points: &[Point3],
    neighbors: usize,
    min_planarity: f64,
) -> Vec<NormalEstimate> {
    assert!(
        neighbors >= 3,
        "normal estimation needs at least 3 neighbours"
    );
    let index = PointIndex::new(points);
    points
        .iter()
        .map(|p| {
            let nn = index.nearest_k(p, neighbors);
            normal_from_neighbourhood(p, nn.iter().map(|&(i, _)| &points[i]), min_planarity)
        })
        .collect()
}

fn normal_from_neighbourhood<'a>(
    p: &Point3,
    nbrs: impl Iterator<Item = &'a Point3> + Clone,
    min_planarity: f64,
) -> NormalEstimate {
    let n = nbrs.clone().count();
    let unusable = NormalEstimate {
        normal: Vector3::z(),
        planarity: 0.0,
        usable: false,
    };
    if n < 3 {
        return unusable;
    }
    let mean = nbrs.clone().sum::<Point3>() / n as f64;
    let mut cov = Matrix3::zeros();
    for q in nbrs {
        let d = q - mean;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2, l3) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]].max(0.0),
    );
    if !(l1 > 0.0) {
        return unusable;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into_owned().normalize();
    if normal.dot(p) > 0.0 {
        normal = -normal;
    }
    let planarity = (l2 - l3) / l1;
    NormalEstimate {
        normal,
        planarity,
        usable: planarity >= min_planarity,
    }
}
