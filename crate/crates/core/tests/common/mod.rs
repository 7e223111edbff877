//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Simplex projection by enumerating every support set: for each nonempty
/// subset the projection onto its affine hull is computed, and the closest
/// feasible candidate wins.
pub fn project_simplex_active_set(v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (members.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let mut x = vec![0.0; k];
        let mut feasible = true;
        for &i in &members {
            x[i] = v[i] - tau;
            if x[i] < -1e-15 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, x));
        }
    }
    best.unwrap().1
}

/// AUC by counting all positive / negative pairs.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins2 = 0u64;
    let mut pairs = 0u64;
    for i in 0..scores.len() {
        if !positive[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins2 += 2;
            } else if scores[i] == scores[j] {
                wins2 += 1;
            }
        }
    }
    wins2 as f64 / (2 * pairs) as f64
}

fn rbf_naive(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, bw: f64) -> f64 {
    let mut d2 = 0.0;
    for c in 0..a.ncols() {
        let t = a[(i, c)] - b[(j, c)];
        d2 += t * t;
    }
    (-d2 / (2.0 * bw * bw)).exp()
}

/// Biased MMD² by explicit loops over all pairs.
pub fn mmd_naive(x: &DMatrix<f64>, z: &DMatrix<f64>, bw: f64) -> f64 {
    let (n, m) = (x.nrows(), z.nrows());
    let mut xx = 0.0;
    for i in 0..n {
        for j in 0..n {
            xx += rbf_naive(x, i, x, j, bw);
        }
    }
    let mut zz = 0.0;
    for i in 0..m {
        for j in 0..m {
            zz += rbf_naive(z, i, z, j, bw);
        }
    }
    let mut xz = 0.0;
    for i in 0..n {
        for j in 0..m {
            xz += rbf_naive(x, i, z, j, bw);
        }
    }
    xx / (n * n) as f64 - 2.0 * xz / (n * m) as f64 + zz / (m * m) as f64
}

/// Weighted priors, means and per-class scatter matrices by explicit loops.
pub fn weighted_moments(x: &DMatrix<f64>, q: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>, Vec<DMatrix<f64>>) {
    let (m, d) = x.shape();
    let k = q.ncols();
    let mut priors = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut covs = vec![DMatrix::zeros(d, d); k];
    for c in 0..k {
        let mut mass = 0.0;
        for j in 0..m {
            mass += q[(j, c)];
        }
        priors[c] = mass / m as f64;
        for a in 0..d {
            let mut s = 0.0;
            for j in 0..m {
                s += q[(j, c)] * x[(j, a)];
            }
            means[c][a] = s / mass;
        }
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for j in 0..m {
                    s += q[(j, c)] * (x[(j, a)] - means[c][a]) * (x[(j, b)] - means[c][b]);
                }
                covs[c][(a, b)] = s / mass;
            }
        }
    }
    (priors, means, covs)
}

/// `log N(z | mu, cov)` through an LU inverse and determinant.
pub fn log_gauss_naive(z: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = z.len();
    let inv = cov.clone().lu().try_inverse().unwrap();
    let det = cov.clone().lu().determinant();
    let mut quad = 0.0;
    for a in 0..d {
        for b in 0..d {
            quad += (z[a] - mu[a]) * inv[(a, b)] * (z[b] - mu[b]);
        }
    }
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// One synthetic domain-shift trial: two Gaussian classes, the source drawn
/// with both class means shifted, the target with `m_k` samples per class.
pub struct Trial {
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
    pub z: DMatrix<f64>,
    pub u: Vec<usize>,
}

pub fn synthetic_trial(seed: u64, d: usize, n_per_class: usize, m_per_class: usize) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean2 = vec![0.0; d];
    mean2[0] = 2.0;
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut draw = |n: usize, mean: &[f64], offset: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|i| mean[i] + offset[i] + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    };
    let zero = vec![0.0; d];
    let mut xs = draw(n_per_class, &zero, &shift);
    xs.extend(draw(n_per_class, &mean2, &shift));
    let mut zs = draw(m_per_class, &zero, &zero);
    zs.extend(draw(m_per_class, &mean2, &zero));
    let labels = |per: usize| (0..2 * per).map(|i| if i < per { 1 } else { 2 }).collect();
    Trial {
        x: DMatrix::from_fn(2 * n_per_class, d, |i, j| xs[i][j]),
        y: labels(n_per_class),
        z: DMatrix::from_fn(2 * m_per_class, d, |i, j| zs[i][j]),
        u: labels(m_per_class),
    }
}

/// Least-squares fit of `[z, 1] θ ≈ Y` for one feature by solving the 2×2
/// normal equations with Cramer's rule.
pub fn ls_fit_1d(z: &[f64], y: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let m = z.len() as f64;
    let (sz, szz): (f64, f64) = (z.iter().sum(), z.iter().map(|v| v * v).sum());
    let det = szz * m - sz * sz;
    let mut theta = [[0.0; 2]; 2];
    for k in 0..2 {
        let szy: f64 = z.iter().zip(y).map(|(a, b)| a * b[k]).sum();
        let sy: f64 = y.iter().map(|b| b[k]).sum();
        theta[0][k] = (szy * m - sz * sy) / det;
        theta[1][k] = (szz * sy - sz * szy) / det;
    }
    theta
}

fn ls_contrast_1d(z: &[f64], q: &[[f64; 2]], theta: &[[f64; 2]; 2], src: &[[f64; 2]; 2]) -> f64 {
    let mut total = 0.0;
    for (j, &zj) in z.iter().enumerate() {
        for k in 0..2 {
            let a = zj * theta[0][k] + theta[1][k] - q[j][k];
            let b = zj * src[0][k] + src[1][k] - q[j][k];
            total += a * a - b * b;
        }
    }
    total / z.len() as f64
}

/// Saddle value `max_q min_θ` of the least-squares contrast for `D = 1`,
/// `K = 2`: the inner minimum is the exact refit, the outer maximum a
/// refining grid search over `q_j1 ∈ [0, 1]` (the dual is concave).
pub fn ls_saddle_grid_1d(z: &[f64], src: &[[f64; 2]; 2]) -> f64 {
    let m = z.len();
    let value = |p: &[f64]| {
        let q: Vec<[f64; 2]> = p.iter().map(|&v| [v, 1.0 - v]).collect();
        let theta = ls_fit_1d(z, &q);
        ls_contrast_1d(z, &q, &theta, src)
    };
    let mut centre = vec![0.5; m];
    let mut half = 0.5;
    let steps = 10usize;
    let mut best = value(&centre);
    for _ in 0..12 {
        let mut grid_best = (f64::NEG_INFINITY, centre.clone());
        let mut idx = vec![0usize; m];
        loop {
            let p: Vec<f64> = (0..m)
                .map(|j| (centre[j] - half + 2.0 * half * idx[j] as f64 / steps as f64).clamp(0.0, 1.0))
                .collect();
            let v = value(&p);
            if v > grid_best.0 {
                grid_best = (v, p);
            }
            let mut pos = 0;
            loop {
                if pos == m {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] <= steps {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == m {
                break;
            }
        }
        best = best.max(grid_best.0);
        centre = grid_best.1;
        half *= 0.4;
    }
    best
}
