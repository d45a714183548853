//! Top-2 principal components by power iteration, for the 2-D cluster
//! visualization export.

use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
}

/// Power iteration on the (matrix-free) covariance of `data`, deflating
/// the first component to find the second. Deterministic: fixed start
/// vector, sign fixed so the largest-magnitude coordinate is positive.
/// Iteration stops when successive vectors agree within `tol`.
pub fn top2_principal_components(data: &[Vec<f64>], tol: f64, max_iter: usize) -> Projection2D {
    let n = data.len();
    let dim = data.first().map(|d| d.len()).unwrap_or(0);
    let mut mean = alloc::vec![0.0; dim];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    if n > 0 {
        for m in &mut mean {
            *m /= n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let cov_apply = |v: &[f64], deflate: Option<(&[f64], f64)>| -> Vec<f64> {
        let mut out = alloc::vec![0.0; dim];
        for row in &centered {
            let proj = math::dot(row, v);
            for (o, r) in out.iter_mut().zip(row) {
                *o += proj * r;
            }
        }
        for o in &mut out {
            *o /= n.max(1) as f64;
        }
        if let Some((u, lambda)) = deflate {
            let uv = math::dot(u, v);
            for (o, ui) in out.iter_mut().zip(u) {
                *o -= lambda * uv * ui;
            }
        }
        out
    };

    let component = |deflate: Option<(&[f64], f64)>| -> (Vec<f64>, f64) {
        // Deterministic start: a gentle ramp so no coordinate axis is
        // privileged.
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.001 * i as f64).collect();
        normalize(&mut v);
        for _ in 0..max_iter {
            let mut next = cov_apply(&v, deflate);
            let norm = math::norm(&next);
            if norm <= 1e-300 {
                // Zero variance direction.
                return (alloc::vec![0.0; dim], 0.0);
            }
            for x in &mut next {
                *x /= norm;
            }
            // Sign-align with the previous iterate before the
            // convergence test.
            if math::dot(&next, &v) < 0.0 {
                for x in &mut next {
                    *x = -*x;
                }
            }
            let delta = v
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            v = next;
            if math::sqrt(delta) <= tol {
                break;
            }
        }
        fix_sign(&mut v);
        let cv = cov_apply(&v, deflate);
        let lambda = math::dot(&v, &cv);
        (v, lambda)
    };

    let (c1, l1) = component(None);
    let (c2, _) = component(Some((&c1, l1)));
    Projection2D { mean, components: [c1, c2] }
}

/// Projects one sample onto the two components.
pub fn project2(proj: &Projection2D, x: &[f64]) -> (f64, f64) {
    let centered: Vec<f64> = x.iter().zip(&proj.mean).map(|(v, m)| v - m).collect();
    (
        math::dot(&centered, &proj.components[0]),
        math::dot(&centered, &proj.components[1]),
    )
}

fn normalize(v: &mut [f64]) {
    let n = math::norm(v);
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut lead = 0.0;
    for &x in v.iter() {
        if math::abs(x) > math::abs(lead) {
            lead = x;
        }
    }
    if lead < 0.0 {
        for x in v {
            *x = -*x;
        }
    }
}
