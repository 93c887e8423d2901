//! Tensor-product space-time spaces on the active mesh of a slab.
//!
//! Space: `Q_m` Lagrange functions on equispaced lattice nodes of each
//! square element. Time: scaled monomials `τ^i`, `τ = (t − t_{n−1})/Δt`.
//! A slab function is `Σ_i v_i(x) τ^i`; global DOF `i * N + l` holds the
//! coefficient of spatial node `l` in `v_i`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::{BackgroundMesh, Rect};

pub const MAX_ORDER: usize = 3;

/// Monomial coefficients of the 1D Lagrange polynomials on `{0, 1/m, …, 1}`.
fn lagrange_coeffs(m: usize) -> &'static [Vec<f64>] {
    static TABLES: OnceLock<Vec<Vec<Vec<f64>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| {
        (1..=MAX_ORDER)
            .map(|m| {
                let nodes: Vec<f64> = (0..=m).map(|a| a as f64 / m as f64).collect();
                (0..=m)
                    .map(|a| {
                        // expand Π_{b≠a} (s − s_b)/(s_a − s_b)
                        let mut c = vec![1.0];
                        for b in (0..=m).filter(|&b| b != a) {
                            let d = nodes[a] - nodes[b];
                            let mut next = vec![0.0; c.len() + 1];
                            for (p, &cp) in c.iter().enumerate() {
                                next[p + 1] += cp / d;
                                next[p] -= cp * nodes[b] / d;
                            }
                            c = next;
                        }
                        c
                    })
                    .collect()
            })
            .collect()
    });
    &tables[m - 1]
}

/// `d^j/ds^j` of the polynomial with monomial coefficients `c` at `s`.
fn poly_derivative(c: &[f64], s: f64, j: usize) -> f64 {
    let mut acc = 0.0;
    for p in (j..c.len()).rev() {
        let falling: f64 = ((p - j + 1)..=p).map(|q| q as f64).product();
        acc = acc * s + c[p] * falling;
    }
    acc
}

fn check_order(m: usize) -> Result<()> {
    if (1..=MAX_ORDER).contains(&m) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("spatial order must be in 1..={MAX_ORDER}, got {m}")))
    }
}

/// Values and partial derivatives of the `(m+1)²` local basis functions at one point.
///
/// `partials[(ax * (d + 1) + ay) * n + l]` holds `∂x^ax ∂y^ay φ_l` for
/// `ax, ay ≤ d`, with local nodes in lexicographic order (x fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisEval {
    pub m: usize,
    pub max_deriv: usize,
    partials: Vec<f64>,
}

impl BasisEval {
    pub fn n_local(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    pub fn partial(&self, ax: usize, ay: usize) -> &[f64] {
        assert!(ax <= self.max_deriv && ay <= self.max_deriv, "derivative order not evaluated");
        let n = self.n_local();
        let k = ax * (self.max_deriv + 1) + ay;
        &self.partials[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        self.partial(0, 0)
    }

    pub fn gradient(&self, l: usize) -> [f64; 2] {
        [self.partial(1, 0)[l], self.partial(0, 1)[l]]
    }

    /// `D^order_n φ_l` for every local `l`: `Σ_a C(order, a) n_x^a n_y^(order−a) ∂x^a ∂y^(order−a)`.
    pub fn directional(&self, n: [f64; 2], order: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_local()];
        let mut binom = 1.0;
        for a in 0..=order {
            let w = binom * n[0].powi(a as i32) * n[1].powi((order - a) as i32);
            if w != 0.0 {
                for (o, p) in out.iter_mut().zip(self.partial(a, order - a)) {
                    *o += w * p;
                }
            }
            binom = binom * (order - a) as f64 / (a + 1) as f64;
        }
        out
    }
}

/// Evaluates the `Q_m` basis of element `rect` at `x` (anywhere in the plane).
pub fn eval_space_basis(rect: &Rect, m: usize, x: [f64; 2], max_deriv: usize) -> Result<BasisEval> {
    check_order(m)?;
    let coeffs = lagrange_coeffs(m);
    let h = [rect.side(0), rect.side(1)];
    let s = [(x[0] - rect.lo[0]) / h[0], (x[1] - rect.lo[1]) / h[1]];
    let d = max_deriv;
    // 1D tables: t1[axis][j][a]
    let mut t1 = [vec![vec![0.0; m + 1]; d + 1], vec![vec![0.0; m + 1]; d + 1]];
    for axis in 0..2 {
        for j in 0..=d {
            let scale = h[axis].powi(-(j as i32));
            for a in 0..=m {
                t1[axis][j][a] = if j > m { 0.0 } else { scale * poly_derivative(&coeffs[a], s[axis], j) };
            }
        }
    }
    let n = (m + 1) * (m + 1);
    let mut partials = vec![0.0; (d + 1) * (d + 1) * n];
    for ax in 0..=d {
        for ay in 0..=d {
            let base = (ax * (d + 1) + ay) * n;
            for b in 0..=m {
                for a in 0..=m {
                    partials[base + b * (m + 1) + a] = t1[0][ax][a] * t1[1][ay][b];
                }
            }
        }
    }
    Ok(BasisEval { m, max_deriv: d, partials })
}

/// Time basis `(τ^0, …, τ^k)` or its `t`-derivative at `t` in the closed slab.
pub fn eval_time_basis(k: usize, slab: (f64, f64), t: f64, deriv: usize) -> Result<Vec<f64>> {
    let dt = slab.1 - slab.0;
    let slack = 1e-12 * dt.max(slab.1.abs());
    if !(dt > 0.0) || t < slab.0 - slack || t > slab.1 + slack {
        return Err(Error::OutOfRange(format!("t = {t} outside slab [{}, {}]", slab.0, slab.1)));
    }
    let tau = ((t - slab.0) / dt).clamp(0.0, 1.0);
    Ok(time_basis_tau(k, tau, dt, deriv))
}

/// Time basis at reference coordinate `τ`.
pub fn time_basis_tau(k: usize, tau: f64, dt: f64, deriv: usize) -> Vec<f64> {
    (0..=k)
        .map(|i| match deriv {
            0 => tau.powi(i as i32),
            1 if i == 0 => 0.0,
            1 => i as f64 * tau.powi(i as i32 - 1) / dt,
            _ => panic!("time derivatives beyond first order are not used"),
        })
        .collect()
}

/// Degrees of freedom of one slab.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabSpace {
    pub m: usize,
    pub k: usize,
    pub slab: (f64, f64),
    /// Active elements, ascending.
    pub elements: Vec<usize>,
    /// Lattice ids `J * (nx m + 1) + I` of the spatial nodes, ascending.
    pub lattice_ids: Vec<usize>,
    /// Spatial node indices of each active element's local nodes.
    pub local_dofs: Vec<Vec<usize>>,
    element_pos: Vec<Option<usize>>,
    lattice_nx: usize,
    origin: [f64; 2],
    node_spacing: f64,
}

impl SlabSpace {
    pub fn n_space(&self) -> usize {
        self.lattice_ids.len()
    }

    pub fn n_dofs(&self) -> usize {
        (self.k + 1) * self.n_space()
    }

    pub fn n_local(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    pub fn dof(&self, time_index: usize, space_index: usize) -> usize {
        time_index * self.n_space() + space_index
    }

    pub fn position(&self, element: usize) -> Option<usize> {
        self.element_pos.get(element).copied().flatten()
    }

    pub fn contains_element(&self, element: usize) -> bool {
        self.position(element).is_some()
    }

    /// Spatial node indices of an active element.
    pub fn element_dofs(&self, element: usize) -> Option<&[usize]> {
        self.position(element).map(|p| self.local_dofs[p].as_slice())
    }

    pub fn node_coords(&self, space_index: usize) -> [f64; 2] {
        let id = self.lattice_ids[space_index];
        let (i, j) = (id % self.lattice_nx, id / self.lattice_nx);
        [self.origin[0] + i as f64 * self.node_spacing, self.origin[1] + j as f64 * self.node_spacing]
    }

    pub fn space_index_of_lattice(&self, lattice_id: usize) -> Option<usize> {
        self.lattice_ids.binary_search(&lattice_id).ok()
    }

    /// Active element whose (possibly extended) polynomial is used at `x`:
    /// the containing active element, or else the nearest one within one element width.
    pub fn host_element(&self, mesh: &BackgroundMesh, x: [f64; 2]) -> Result<usize> {
        let h = mesh.h();
        let slack = 1e-12 * h;
        if let Some(e) = mesh.locate(x) {
            if self.contains_element(e) {
                return Ok(e);
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for &e in &self.elements {
            let r = mesh.element_rect(e);
            let dx = (r.lo[0] - x[0]).max(x[0] - r.hi[0]).max(0.0);
            let dy = (r.lo[1] - x[1]).max(x[1] - r.hi[1]).max(0.0);
            let d = dx.hypot(dy);
            if d <= slack {
                return Ok(e);
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, e));
            }
        }
        match best {
            Some((d, e)) if d <= h => Ok(e),
            _ => Err(Error::PointNotInActiveMesh(x[0], x[1])),
        }
    }

    /// Spatial field `Σ_i c_i τ^i` collapsed at time `t` into spatial coefficients.
    pub fn spatial_coefficients(&self, coeffs: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_len(coeffs)?;
        let tb = eval_time_basis(self.k, self.slab, t, 0)?;
        let n = self.n_space();
        let mut out = vec![0.0; n];
        for (i, w) in tb.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(&coeffs[i * n..(i + 1) * n]) {
                *o += w * c;
            }
        }
        Ok(out)
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() == self.n_dofs() {
            Ok(())
        } else {
            Err(Error::Config(format!("expected {} coefficients, got {}", self.n_dofs(), coeffs.len())))
        }
    }

    /// Value and spatial gradient of a slab function at `(t, x)`.
    pub fn evaluate_with_gradient(&self, mesh: &BackgroundMesh, coeffs: &[f64], t: f64, x: [f64; 2]) -> Result<(f64, [f64; 2])> {
        self.check_len(coeffs)?;
        let e = self.host_element(mesh, x)?;
        let basis = eval_space_basis(&mesh.element_rect(e), self.m, x, 1)?;
        let tb = eval_time_basis(self.k, self.slab, t, 0)?;
        let dofs = self.element_dofs(e).expect("host element is active");
        let n = self.n_space();
        let (mut v, mut g) = (0.0, [0.0; 2]);
        for (l, &d) in dofs.iter().enumerate() {
            let c: f64 = tb.iter().enumerate().map(|(i, w)| w * coeffs[i * n + d]).sum();
            v += c * basis.values()[l];
            let gl = basis.gradient(l);
            g[0] += c * gl[0];
            g[1] += c * gl[1];
        }
        Ok((v, g))
    }

    pub fn evaluate(&self, mesh: &BackgroundMesh, coeffs: &[f64], t: f64, x: [f64; 2]) -> Result<f64> {
        self.evaluate_with_gradient(mesh, coeffs, t, x).map(|r| r.0)
    }

    /// Nodal interpolant of a spatial field.
    pub fn interpolate_space(&self, g: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.n_space()).map(|l| g(self.node_coords(l))).collect()
    }

    /// Interpolant of `g(t, x)`: nodal in space, collocated at `k + 1` equispaced times.
    pub fn interpolate(&self, g: impl Fn(f64, [f64; 2]) -> f64) -> Vec<f64> {
        let k = self.k;
        let dt = self.slab.1 - self.slab.0;
        let taus: Vec<f64> = if k == 0 { vec![0.0] } else { (0..=k).map(|q| q as f64 / k as f64).collect() };
        // inverse Vandermonde via Gaussian elimination on a (k+1)² system
        let n = self.n_space();
        let mut out = vec![0.0; self.n_dofs()];
        for l in 0..n {
            let x = self.node_coords(l);
            let rhs: Vec<f64> = taus.iter().map(|&tau| g(self.slab.0 + tau * dt, x)).collect();
            let c = solve_vandermonde(&taus, &rhs);
            for i in 0..=k {
                out[i * n + l] = c[i];
            }
        }
        out
    }
}

fn solve_vandermonde(taus: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = taus.len();
    let mut a: Vec<Vec<f64>> = taus
        .iter()
        .zip(rhs)
        .map(|(&t, &r)| {
            let mut row: Vec<f64> = (0..n).map(|p| t.powi(p as i32)).collect();
            row.push(r);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// A slab function frozen at one time: spatial coefficients on the slab's nodes.
#[derive(Clone, Debug)]
pub struct SpatialField<'a> {
    pub space: &'a SlabSpace,
    pub values: Vec<f64>,
}

impl<'a> SpatialField<'a> {
    pub fn at_time(space: &'a SlabSpace, coeffs: &[f64], t: f64) -> Result<Self> {
        Ok(Self { space, values: space.spatial_coefficients(coeffs, t)? })
    }

    /// Element whose polynomial is used for a point of background element `e`.
    pub fn host(&self, mesh: &BackgroundMesh, e: usize, x: [f64; 2]) -> Result<usize> {
        if self.space.contains_element(e) {
            Ok(e)
        } else {
            self.space.host_element(mesh, x)
        }
    }

    pub fn value(&self, mesh: &BackgroundMesh, e: usize, x: [f64; 2]) -> Result<f64> {
        let host = self.host(mesh, e, x)?;
        let b = eval_space_basis(&mesh.element_rect(host), self.space.m, x, 0)?;
        let dofs = self.space.element_dofs(host).expect("host element is active");
        Ok(dofs.iter().zip(b.values()).map(|(&d, v)| self.values[d] * v).sum())
    }

    pub fn value_and_gradient(&self, mesh: &BackgroundMesh, e: usize, x: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let host = self.host(mesh, e, x)?;
        let b = eval_space_basis(&mesh.element_rect(host), self.space.m, x, 1)?;
        let dofs = self.space.element_dofs(host).expect("host element is active");
        let (mut v, mut g) = (0.0, [0.0; 2]);
        for (l, &d) in dofs.iter().enumerate() {
            let c = self.values[d];
            v += c * b.values()[l];
            let gl = b.gradient(l);
            g[0] += c * gl[0];
            g[1] += c * gl[1];
        }
        Ok((v, g))
    }
}

/// Numbers the lattice nodes of the active elements.
pub fn build_dof_map(mesh: &BackgroundMesh, active: &[usize], m: usize, k: usize, slab: (f64, f64)) -> Result<SlabSpace> {
    check_order(m)?;
    if active.is_empty() {
        return Err(Error::EmptyActiveMesh);
    }
    let mut elements = active.to_vec();
    elements.sort_unstable();
    elements.dedup();
    let lattice_nx = mesh.nx() * m + 1;
    let local_lattice = |e: usize| -> Vec<usize> {
        let (ei, ej) = mesh.element_ij(e);
        let mut ids = Vec::with_capacity((m + 1) * (m + 1));
        for b in 0..=m {
            for a in 0..=m {
                ids.push((ej * m + b) * lattice_nx + ei * m + a);
            }
        }
        ids
    };
    let mut lattice_ids: Vec<usize> = elements.iter().flat_map(|&e| local_lattice(e)).collect();
    lattice_ids.sort_unstable();
    lattice_ids.dedup();
    let local_dofs = elements
        .iter()
        .map(|&e| local_lattice(e).iter().map(|id| lattice_ids.binary_search(id).expect("node numbered")).collect())
        .collect();
    let mut element_pos = vec![None; mesh.n_elements()];
    for (p, &e) in elements.iter().enumerate() {
        element_pos[e] = Some(p);
    }
    let bb = mesh.bbox();
    Ok(SlabSpace {
        m,
        k,
        slab,
        elements,
        lattice_ids,
        local_dofs,
        element_pos,
        lattice_nx,
        origin: [bb.x_min, bb.y_min],
        node_spacing: mesh.h() / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BBox;
    use proptest::prelude::*;

    fn unit_rect() -> Rect {
        Rect::new([0.0, 0.0], [1.0, 1.0])
    }

    #[test]
    fn bilinear_nodal_and_center_values() {
        let b = eval_space_basis(&unit_rect(), 1, [0.0, 0.0], 0).unwrap();
        assert_eq!(b.values(), &[1.0, 0.0, 0.0, 0.0]);
        let b = eval_space_basis(&unit_rect(), 1, [0.5, 0.5], 0).unwrap();
        assert!(b.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(eval_space_basis(&unit_rect(), 4, [0.5, 0.5], 0).is_err());
    }

    #[test]
    fn nodal_property() {
        let r = Rect::new([0.2, -0.1], [0.45, 0.15]);
        for m in 1..=3 {
            for b in 0..=m {
                for a in 0..=m {
                    let x = [r.lo[0] + r.side(0) * a as f64 / m as f64, r.lo[1] + r.side(1) * b as f64 / m as f64];
                    let ev = eval_space_basis(&r, m, x, 0).unwrap();
                    for (l, &v) in ev.values().iter().enumerate() {
                        let expect = if l == b * (m + 1) + a { 1.0 } else { 0.0 };
                        assert!((v - expect).abs() < 1e-12, "m {m} node ({a},{b}) l {l}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let r = Rect::new([0.3, 0.1], [0.4, 0.2]);
        let e = 1e-6;
        for m in 1..=3 {
            for x in [[0.33, 0.17], [0.45, 0.05], [0.29, 0.21]] {
                let ev = eval_space_basis(&r, m, x, m).unwrap();
                for ax in 0..=m {
                    for ay in 0..=m {
                        if ax + ay == 0 {
                            continue;
                        }
                        // differentiate the next-lower partial numerically
                        let (dx, lower) = if ax > 0 { ([e, 0.0], (ax - 1, ay)) } else { ([0.0, e], (ax, ay - 1)) };
                        let p = eval_space_basis(&r, m, [x[0] + dx[0], x[1] + dx[1]], m).unwrap();
                        let q = eval_space_basis(&r, m, [x[0] - dx[0], x[1] - dx[1]], m).unwrap();
                        for l in 0..ev.n_local() {
                            let fd = (p.partial(lower.0, lower.1)[l] - q.partial(lower.0, lower.1)[l]) / (2.0 * e);
                            let an = ev.partial(ax, ay)[l];
                            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0 / r.side(0).powi((ax + ay) as i32 - 1)), "m {m} ({ax},{ay}) l {l}: {fd} vs {an}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn directional_derivatives() {
        let r = Rect::new([0.0, 0.0], [0.5, 0.5]);
        let x = [0.1, 0.7];
        let ev = eval_space_basis(&r, 3, x, 3).unwrap();
        let n = [0.6, 0.8];
        for order in 1..=3 {
            let d = ev.directional(n, order);
            // order-th central difference along n, Richardson-extrapolated
            let at = |s: f64| eval_space_basis(&r, 3, [x[0] + s * n[0], x[1] + s * n[1]], 0).unwrap().values().to_vec();
            let diff = |e: f64| -> Vec<f64> {
                match order {
                    1 => { let (p, q) = (at(e), at(-e)); p.iter().zip(&q).map(|(a, b)| (a - b) / (2.0 * e)).collect() }
                    2 => { let (p, c, q) = (at(e), at(0.0), at(-e)); (0..16).map(|l| (p[l] - 2.0 * c[l] + q[l]) / (e * e)).collect() }
                    _ => { let (p2, p1, q1, q2) = (at(2.0 * e), at(e), at(-e), at(-2.0 * e)); (0..16).map(|l| (p2[l] - 2.0 * p1[l] + 2.0 * q1[l] - q2[l]) / (2.0 * e * e * e)).collect() }
                }
            };
            let e = 2e-3;
            let (coarse, fine) = (diff(e), diff(0.5 * e));
            let fd: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
            for l in 0..16 {
                assert!((fd[l] - d[l]).abs() <= 1e-5 * d[l].abs().max(1.0), "order {order} l {l}: {} vs {}", fd[l], d[l]);
            }
        }
        let axis = ev.directional([1.0, 0.0], 2);
        assert_eq!(axis, ev.partial(2, 0));
    }

    proptest! {
        #[test]
        fn partition_of_unity(m in 1usize..=3, x in -1.0f64..2.0, y in -1.0f64..2.0) {
            let ev = eval_space_basis(&unit_rect(), m, [x, y], 1).unwrap();
            let s: f64 = ev.values().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-11);
            let gx: f64 = ev.partial(1, 0).iter().sum();
            prop_assert!(gx.abs() < 1e-10);
        }

        #[test]
        fn polynomial_reproduction(m in 1usize..=3, x in -0.5f64..1.5, y in -0.5f64..1.5, c in prop::collection::vec(-1.0f64..1.0, 10)) {
            // total degree ≤ m polynomial
            let p = |x: [f64; 2]| {
                let mut v = 0.0;
                let mut idx = 0;
                for a in 0..=m {
                    for b in 0..=(m - a) {
                        v += c[idx] * x[0].powi(a as i32) * x[1].powi(b as i32);
                        idx += 1;
                    }
                }
                v
            };
            let r = Rect::new([0.1, 0.2], [0.6, 0.7]);
            let ev = eval_space_basis(&r, m, [x, y], 0).unwrap();
            let mut v = 0.0;
            for b in 0..=m {
                for a in 0..=m {
                    let node = [r.lo[0] + 0.5 * a as f64 / m as f64, r.lo[1] + 0.5 * b as f64 / m as f64];
                    v += p(node) * ev.values()[b * (m + 1) + a];
                }
            }
            prop_assert!((v - p([x, y])).abs() < 1e-12 * (1.0 + p([x, y]).abs()) * 10.0);
        }
    }

    #[test]
    fn time_basis() {
        let s = (0.2, 0.3);
        assert_eq!(eval_time_basis(3, s, 0.2, 0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let v = eval_time_basis(3, s, 0.3, 0).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        let d = eval_time_basis(2, (0.0, 0.1), 0.05, 1).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 10.0).abs() < 1e-12 && (d[2] - 10.0).abs() < 1e-12);
        assert!(eval_time_basis(1, s, 0.31, 0).is_err());
    }

    #[test]
    fn dof_counts() {
        let mesh = BackgroundMesh::new(BBox::unit(), 2, 2).unwrap();
        let s = build_dof_map(&mesh, &[0, 1, 2, 3], 1, 1, (0.0, 0.1)).unwrap();
        assert_eq!((s.n_space(), s.n_dofs()), (9, 18));
        let s = build_dof_map(&mesh, &[3], 2, 0, (0.0, 0.1)).unwrap();
        assert_eq!(s.n_dofs(), 9);
        // L shape: elements 0, 1, 2 share the center node
        let s = build_dof_map(&mesh, &[0, 1, 2], 1, 1, (0.0, 0.1)).unwrap();
        assert_eq!((s.n_space(), s.n_dofs()), (8, 16));
        assert!(matches!(build_dof_map(&mesh, &[], 1, 1, (0.0, 0.1)), Err(Error::EmptyActiveMesh)));
        let mesh = BackgroundMesh::new(BBox::unit(), 4, 4).unwrap();
        let s = build_dof_map(&mesh, &(0..16).collect::<Vec<_>>(), 3, 2, (0.0, 0.1)).unwrap();
        assert_eq!(s.n_space(), 13 * 13);
    }

    #[test]
    fn shared_nodes_have_shared_coordinates() {
        let mesh = BackgroundMesh::new(BBox::new(-1.0, 1.0, -1.0, 1.0), 4, 4).unwrap();
        let s = build_dof_map(&mesh, &[5, 6, 9], 2, 0, (0.0, 1.0)).unwrap();
        for (p, &e) in s.elements.iter().enumerate() {
            let r = mesh.element_rect(e);
            for (l, &d) in s.local_dofs[p].iter().enumerate() {
                let (a, b) = (l % 3, l / 3);
                let x = s.node_coords(d);
                assert!((x[0] - (r.lo[0] + 0.25 * a as f64)).abs() < 1e-14);
                assert!((x[1] - (r.lo[1] + 0.25 * b as f64)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn evaluation() {
        let mesh = BackgroundMesh::new(BBox::unit(), 4, 4).unwrap();
        let s = build_dof_map(&mesh, &[5, 6, 9, 10], 2, 1, (0.5, 0.75)).unwrap();
        let ones = {
            let mut c = vec![0.0; s.n_dofs()];
            c[..s.n_space()].fill(1.0);
            c
        };
        assert!((s.evaluate(&mesh, &ones, 0.6, [0.4, 0.4]).unwrap() - 1.0).abs() < 1e-13);
        let g = |x: [f64; 2]| x[0] * x[0] - 2.0 * x[1];
        let c = s.interpolate(|t, x| g(x) * (t - 0.5) / 0.25);
        for l in 0..s.n_space() {
            let x = s.node_coords(l);
            assert!((s.evaluate(&mesh, &c, 0.75, x).unwrap() - g(x)).abs() < 1e-12);
        }
        // quadratic field reproduced anywhere inside, and gradient exact
        let (v, gr) = s.evaluate_with_gradient(&mesh, &c, 0.75, [0.41, 0.55]).unwrap();
        assert!((v - g([0.41, 0.55])).abs() < 1e-12);
        assert!((gr[0] - 0.82).abs() < 1e-11 && (gr[1] + 2.0).abs() < 1e-11);
        // τ = 0 sees only the i = 0 field
        let rnd: Vec<f64> = (0..s.n_dofs()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let mut only0 = rnd.clone();
        only0[s.n_space()..].fill(0.0);
        let x = [0.37, 0.62];
        assert_eq!(s.evaluate(&mesh, &rnd, 0.5, x).unwrap(), s.evaluate(&mesh, &only0, 0.5, x).unwrap());
        // canonical extension slightly outside the active set, failure far away
        assert!(s.evaluate(&mesh, &c, 0.75, [0.8, 0.5]).is_ok());
        assert!(matches!(s.evaluate(&mesh, &c, 0.75, [0.95, 0.95]), Err(Error::PointNotInActiveMesh(..))));
        assert!(s.evaluate(&mesh, &c[1..], 0.75, x).is_err());
    }
}
