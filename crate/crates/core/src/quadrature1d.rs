//! Gauss-Legendre and Gauss-Lobatto rules on `[-1, 1]`.
//!
//! Nodes are computed by Newton iteration on the Legendre recurrences; the
//! small closed-form rules only serve as test anchors.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_POINTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Affine image of the rule on `[a, b]`, assuming `self` lives on `[-1, 1]`.
    pub fn map_to_interval(&self, a: f64, b: f64) -> Result<QuadRule1D> {
        if !(a < b) {
            return Err(Error::OutOfRange(format!("interval [{a}, {b}] is empty")));
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let nodes = self
            .nodes
            .iter()
            .map(|&x| {
                // keep endpoints exact for Lobatto rules
                if x == -1.0 {
                    a
                } else if x == 1.0 {
                    b
                } else {
                    mid + half * x
                }
            })
            .collect();
        let weights = self.weights.iter().map(|w| w * half).collect();
        Ok(QuadRule1D { nodes, weights })
    }
}

/// Legendre `P_n(x)` and `P_{n-1}(x)` by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

pub fn gauss_legendre(n: usize) -> Result<QuadRule1D> {
    if n == 0 || n > MAX_POINTS {
        return Err(Error::OutOfRange(format!("Gauss-Legendre needs 1..={MAX_POINTS} points, got {n}")));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(n, x);
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, pm1) = legendre_pair(n, x);
        dp = if x.abs() < 1.0 { nf * (x * p - pm1) / (x * x - 1.0) } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule1D { nodes, weights })
}

pub fn gauss_lobatto(n: usize) -> Result<QuadRule1D> {
    if !(2..=MAX_POINTS).contains(&n) {
        return Err(Error::OutOfRange(format!("Gauss-Lobatto needs 2..={MAX_POINTS} points, got {n}")));
    }
    // interior nodes are the roots of P'_{N}, N = n - 1
    let big_n = n - 1;
    let nf = big_n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    for i in 1..n - 1 {
        let mut x = -(PI * i as f64 / nf).cos();
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(big_n, x);
            // (1 - x^2) P_N'(x) = N (P_{N-1} - x P_N)
            let f = nf * (pm1 - x * p);
            // d/dx [(1 - x^2) P_N'] = -N (N + 1) P_N
            let df = -nf * (nf + 1.0) * p;
            let dx = f / df;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
    }
    for i in 0..n {
        let (p, _) = legendre_pair(big_n, nodes[i]);
        weights[i] = 2.0 / (nf * (nf + 1.0) * p * p);
    }
    // symmetrize to remove round-off drift
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule1D { nodes, weights })
}
