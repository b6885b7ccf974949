//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use walkcoach_core::geo::{destination, haversine_m, Edge, GeoPoint, Poi, StreetGraph};
use rand_distr::{Distribution, Normal};
use walkcoach_core::stats::{condition_for, LmmData, Period, Sequence};

pub struct RandomGraph {
    pub graph: StreetGraph,
    pub points: Vec<GeoPoint>,
    /// Dense edge-weight matrix, infinity where absent.
    pub weights: Vec<Vec<f64>>,
}

/// Random planar-ish street graph: each node joined to a few near
/// neighbours plus occasional long links, detours inflating lengths.
pub fn random_graph(rng: &mut impl Rng, n: usize) -> RandomGraph {
    let center = GeoPoint::new(48.2, 16.37).unwrap();
    let points: Vec<GeoPoint> = (0..n)
        .map(|_| {
            let bearing = rng.random_range(0.0..360.0);
            let r = 2000.0 * rng.random::<f64>().sqrt();
            destination(center, bearing, r)
        })
        .collect();
    let mut weights = vec![vec![f64::INFINITY; n]; n];
    let mut edges = Vec::new();
    let mut add = |a: usize, b: usize, rng: &mut dyn rand::RngCore, weights: &mut Vec<Vec<f64>>| {
        if a == b || weights[a][b].is_finite() {
            return;
        }
        let w = haversine_m(points[a], points[b]) * rng.random_range(1.0..1.6);
        weights[a][b] = w;
        weights[b][a] = w;
        edges.push(Edge {
            u: format!("n{a}"),
            v: format!("n{b}"),
            length_m: w,
        });
    };
    for a in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&b| b != a)
            .map(|b| (haversine_m(points[a], points[b]), b))
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0));
        let k = rng.random_range(2..=4usize);
        for &(_, b) in order.iter().take(k) {
            add(a, b, rng, &mut weights);
        }
        if rng.random_bool(0.05) && n > 1 {
            let b = rng.random_range(0..n);
            add(a, b, rng, &mut weights);
        }
    }
    let graph = StreetGraph::new(
        points.iter().enumerate().map(|(i, p)| (format!("n{i}"), *p)),
        edges,
    )
    .unwrap();
    RandomGraph { graph, points, weights }
}

/// All-pairs distances by Floyd–Warshall.
pub fn floyd(weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = weights.len();
    let mut d = weights.to_vec();
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i][k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let cand = dik + d[k][j];
                if cand < d[i][j] {
                    d[i][j] = cand;
                }
            }
        }
    }
    d
}

pub fn poi_at(id: usize, p: GeoPoint) -> Poi {
    Poi::new(format!("w{id}"), format!("Waypoint {id}"), "park", p)
}

/// Dense restricted log-likelihood at explicit variance components.
pub fn dense_reml(data: &LmmData, var_intercept: f64, var_residual: f64) -> f64 {
    let n = data.len();
    let x = data.design_matrix();
    let p = x.ncols();
    let y = DVector::from_column_slice(&data.y);
    let v = DMatrix::from_fn(n, n, |i, j| {
        let same = data.participant[i] == data.participant[j];
        f64::from(same) * var_intercept + if i == j { var_residual } else { 0.0 }
    });
    let v_inv = v.clone().try_inverse().unwrap();
    let xtvx = x.transpose() * &v_inv * &x;
    let xtvx_inv = xtvx.clone().try_inverse().unwrap();
    let proj = &v_inv - &v_inv * &x * xtvx_inv * x.transpose() * &v_inv;
    let ypy = (y.transpose() * proj * &y)[(0, 0)];
    -0.5 * ((n - p) as f64 * (2.0 * std::f64::consts::PI).ln() + v.determinant().ln() + xtvx.determinant().ln() + ypy)
}

/// Dense criterion at ratio λ with the residual variance profiled out.
pub fn dense_profiled_reml(data: &LmmData, lambda: f64) -> f64 {
    let n = data.len();
    let x = data.design_matrix();
    let p = x.ncols();
    let y = DVector::from_column_slice(&data.y);
    let h = DMatrix::from_fn(n, n, |i, j| {
        let same = data.participant[i] == data.participant[j];
        f64::from(same) * lambda + if i == j { 1.0 } else { 0.0 }
    });
    let h_inv = h.try_inverse().unwrap();
    let beta = (x.transpose() * &h_inv * &x).try_inverse().unwrap() * x.transpose() * &h_inv * &y;
    let r = &y - &x * beta;
    let sigma2 = (r.transpose() * h_inv * &r)[(0, 0)] / (n - p) as f64;
    dense_reml(data, lambda * sigma2, sigma2)
}

/// Alpha from the item covariance matrix: k/(k-1) × (1 - trace / sum of
/// all entries).
pub fn covariance_alpha(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let k = m[0].len();
    let x = DMatrix::from_fn(n, k, |i, j| m[i][j]);
    let means = x.row_mean();
    let centered = DMatrix::from_fn(n, k, |i, j| x[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let kf = k as f64;
    kf / (kf - 1.0) * (1.0 - cov.trace() / cov.sum())
}

/// Two to four participants with both periods, random variance mix.
pub fn tiny_dataset(rng: &mut impl Rng) -> LmmData {
    let n_ab = rng.random_range(1..=2usize);
    let n_ba = if n_ab == 1 { 2 } else { rng.random_range(1..=2usize) };
    let sd_u = rng.random_range(0.0..1.0);
    let sd_e = rng.random_range(0.1..1.0);
    let u = Normal::new(0.0, sd_u).unwrap();
    let e = Normal::new(0.0, sd_e).unwrap();
    let mut data = LmmData::default();
    for i in 0..n_ab + n_ba {
        let seq = if i < n_ab { Sequence::AB } else { Sequence::BA };
        let ui = u.sample(rng);
        for period in [Period::A, Period::B] {
            let c = condition_for(seq, period);
            data.push(5.0 + ui + e.sample(rng), format!("P{i}"), c, seq);
        }
    }
    data
}
