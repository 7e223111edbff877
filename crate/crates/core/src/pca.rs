//! Principal-component projection used for plot-ready dumps of `q*`.

use nalgebra::DMatrix;

/// Projects the centred rows of `x` onto its top `k` principal directions.
///
/// Each direction's sign is fixed so its largest-magnitude loading is
/// positive. Columns beyond the feature count are zero.
pub fn project(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, k);
    if n == 0 || d == 0 {
        return out;
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut dir = eig.eigenvectors.column(idx).into_owned();
        let lead = dir.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            dir = -dir;
        }
        out.set_column(c, &(&centered * dir));
    }
    out
}
