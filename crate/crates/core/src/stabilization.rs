//! Ghost-penalty stabilization and time-dependent macroelement partitions.
//!
//! Faces are stabilized either all along the interface band ("full") or
//! only inside macroelements, each built around one element whose cut
//! fraction stays above `δ` at every time sample of the slab.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fespace::{eval_space_basis, SlabSpace};
use crate::implicit_quadrature::gauss_cached;
use crate::levelset::{ActiveMeshes, LevelSetProblem, SlabGeometry};
use crate::mesh::{BackgroundMesh, Rect};
use crate::par;

/// Longest face path from a small element to its large root.
pub const MAX_MACRO_PATH: usize = 4;
/// Slack on the large-element test, absorbing quadrature round-off of full elements.
const LARGE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Face,
    Patch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    Macro,
}

/// Where the surface normal-derivative penalty is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalPenaltyDomain {
    /// `Γ(t) ∩ K`, scaled by `h^{2i−2}`.
    Interface,
    /// Whole surface-active elements, scaled by `h^{2i−3}`.
    Elements,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationConfig {
    pub variant: Variant,
    pub mode: Mode,
    /// Bulk constant: `τ` for patches, `τ_F^i = τ` for faces.
    pub tau: f64,
    /// Surface ghost-penalty constant: `τ_Γ` for patches, `τ_{F,Γ}^i` for faces.
    pub tau_surface: f64,
    /// Normal-derivative constant `τ_Γ^i`.
    pub tau_normal: f64,
    pub delta: f64,
    pub delta_surface: f64,
    pub normal_domain: NormalPenaltyDomain,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Patch,
            mode: Mode::Macro,
            tau: 1.0,
            tau_surface: 1.0,
            tau_normal: 1.0,
            delta: 0.5,
            delta_surface: 0.5,
            normal_domain: NormalPenaltyDomain::Interface,
        }
    }
}

impl StabilizationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("tau_surface", self.tau_surface), ("tau_normal", self.tau_normal)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        // an interface chord is at most √2 h long
        if !(self.delta_surface > 0.0 && self.delta_surface <= std::f64::consts::SQRT_2) {
            return Err(Error::Config(format!("delta_surface must lie in (0, √2], got {}", self.delta_surface)));
        }
        Ok(())
    }
}

fn is_active(list: &[usize], e: usize) -> bool {
    list.binary_search(&e).is_ok()
}

/// Interior faces of the bulk active mesh touching a surface-active element.
pub fn full_face_set(mesh: &BackgroundMesh, active: &ActiveMeshes) -> Vec<usize> {
    mesh.interior_faces()
        .iter()
        .copied()
        .filter(|&f| {
            let (a, b) = mesh.element_patch(f).expect("interior face");
            active.is_bulk(a) && active.is_bulk(b) && (active.is_surface(a) || active.is_surface(b))
        })
        .collect()
}

/// Interior faces between two surface-active elements.
pub fn full_surface_face_set(mesh: &BackgroundMesh, active: &ActiveMeshes) -> Vec<usize> {
    internal_faces(mesh, &active.surface)
}

/// Interior faces whose two elements both belong to `elements` (ascending).
pub fn internal_faces(mesh: &BackgroundMesh, elements: &[usize]) -> Vec<usize> {
    mesh.interior_faces()
        .iter()
        .copied()
        .filter(|&f| {
            let (a, b) = mesh.element_patch(f).expect("interior face");
            is_active(elements, a) && is_active(elements, b)
        })
        .collect()
}

/// Bulk large test: `|K ∩ Ω(t_q)| ≥ δ|K|` at every sample.
pub fn bulk_large_elements(mesh: &BackgroundMesh, geom: &SlabGeometry, delta: f64) -> Vec<usize> {
    let area = mesh.element_area();
    geom.elements
        .iter()
        .filter(|c| (0..geom.times.len()).all(|q| c.fraction(q, area) >= delta - LARGE_SLACK))
        .map(|c| c.element)
        .collect()
}

/// Surface large test: `|K ∩ Γ(t_q)| ≥ δ_s h` at every sample.
pub fn surface_large_classify(geom: &SlabGeometry, element: usize, delta_s: f64, h: f64) -> bool {
    geom.get(element)
        .is_some_and(|c| (0..geom.times.len()).all(|q| c.interface_length(q) >= delta_s * h * (1.0 - LARGE_SLACK)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroPartition {
    pub delta: f64,
    /// Elements of the partitioned mesh, ascending.
    pub elements: Vec<usize>,
    /// Large elements, ascending.
    pub large: Vec<usize>,
    /// `(element, root)` pairs in element order.
    pub roots: Vec<(usize, usize)>,
    /// Faces internal to some macroelement.
    pub faces: Vec<usize>,
}

impl MacroPartition {
    pub fn root_of(&self, element: usize) -> Option<usize> {
        self.roots.binary_search_by_key(&element, |r| r.0).ok().map(|p| self.roots[p].1)
    }

    pub fn n_macros(&self) -> usize {
        self.large.len()
    }

    pub fn is_large(&self, element: usize) -> bool {
        self.large.binary_search(&element).is_ok()
    }
}

/// Attaches every small element to the nearest large element by a face path
/// through small elements; ties go to the lower root id.
pub fn build_macro_partition(mesh: &BackgroundMesh, elements: &[usize], large: &[usize], delta: f64) -> Result<MacroPartition> {
    let mut elements = elements.to_vec();
    elements.sort_unstable();
    let mut large = large.to_vec();
    large.sort_unstable();
    if large.is_empty() {
        return Err(Error::NoLargeElements { delta });
    }
    let n = mesh.n_elements();
    let mut in_set = vec![false; n];
    for &e in &elements {
        in_set[e] = true;
    }
    let mut root: Vec<Option<usize>> = vec![None; n];
    let mut dist = vec![usize::MAX; n];
    let mut frontier: Vec<usize> = Vec::new();
    for &e in &large {
        root[e] = Some(e);
        dist[e] = 0;
        frontier.push(e);
    }
    let mut depth = 0;
    while !frontier.is_empty() {
        depth += 1;
        let mut next: Vec<usize> = Vec::new();
        for &e in &frontier {
            let r = root[e].expect("frontier has a root");
            for (nb, _) in mesh.neighbors(e) {
                if !in_set[nb] || dist[nb] < depth {
                    continue;
                }
                if dist[nb] == usize::MAX {
                    dist[nb] = depth;
                    next.push(nb);
                }
                if root[nb].is_none_or(|cur| r < cur) {
                    root[nb] = Some(r);
                }
            }
        }
        if depth > MAX_MACRO_PATH {
            if let Some(&e) = next.iter().min() {
                return Err(Error::MacroPathTooLong { element: e, max_path: MAX_MACRO_PATH });
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    let mut roots = Vec::with_capacity(elements.len());
    for &e in &elements {
        match root[e] {
            Some(r) => roots.push((e, r)),
            None => return Err(Error::MacroPathTooLong { element: e, max_path: MAX_MACRO_PATH }),
        }
    }
    let faces = mesh
        .interior_faces()
        .iter()
        .copied()
        .filter(|&f| {
            let (a, b) = mesh.element_patch(f).expect("interior face");
            in_set[a] && in_set[b] && root[a] == root[b]
        })
        .collect();
    Ok(MacroPartition { delta, elements, large, roots, faces })
}

/// Stabilized faces for the bulk field, with the partition when macro mode is used.
pub fn bulk_stabilized_faces(
    mesh: &BackgroundMesh,
    geom: &SlabGeometry,
    active: &ActiveMeshes,
    cfg: &StabilizationConfig,
) -> Result<(Vec<usize>, Option<MacroPartition>)> {
    match cfg.mode {
        Mode::Full => Ok((full_face_set(mesh, active), None)),
        Mode::Macro => {
            let large = bulk_large_elements(mesh, geom, cfg.delta);
            let part = build_macro_partition(mesh, &active.bulk, &large, cfg.delta)?;
            Ok((part.faces.clone(), Some(part)))
        }
    }
}

/// Stabilized faces for the surface field.
pub fn surface_stabilized_faces(
    mesh: &BackgroundMesh,
    geom: &SlabGeometry,
    active: &ActiveMeshes,
    cfg: &StabilizationConfig,
) -> Result<(Vec<usize>, Option<MacroPartition>)> {
    match cfg.mode {
        Mode::Full => Ok((full_surface_face_set(mesh, active), None)),
        Mode::Macro => {
            let large: Vec<usize> = active
                .surface
                .iter()
                .copied()
                .filter(|&e| surface_large_classify(geom, e, cfg.delta_surface, mesh.h()))
                .collect();
            let part = build_macro_partition(mesh, &active.surface, &large, cfg.delta_surface)?;
            Ok((part.faces.clone(), Some(part)))
        }
    }
}

/// Dense local matrix over the concatenated local nodes of two elements.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMatrix {
    pub elements: (usize, usize),
    pub n: usize,
    pub values: Vec<f64>,
}

impl LocalMatrix {
    fn zeros(elements: (usize, usize), n: usize) -> Self {
        Self { elements, n, values: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn add_outer(&mut self, w: f64, b: &[f64]) {
        for i in 0..self.n {
            let wi = w * b[i];
            if wi != 0.0 {
                for j in 0..self.n {
                    self.values[i * self.n + j] += wi * b[j];
                }
            }
        }
    }

    /// `cᵀ M c`.
    pub fn quadratic_form(&self, c: &[f64]) -> f64 {
        (0..self.n).map(|i| c[i] * (0..self.n).map(|j| self.get(i, j) * c[j]).sum::<f64>()).sum()
    }
}

/// `Σ_i weights[i−1] ∫_F ⟦D^i_{n_F} u⟧ ⟦D^i_{n_F} v⟧` for `i = 1..=weights.len()`.
pub fn face_jump_matrix(mesh: &BackgroundMesh, face: usize, m: usize, weights: &[f64]) -> Result<LocalMatrix> {
    let (e1, e2) = mesh.element_patch(face)?;
    let f = mesh.face(face);
    let axis = f.normal_axis();
    let (r1, r2) = (mesh.element_rect(e1), mesh.element_rect(e2));
    let nl = (m + 1) * (m + 1);
    let mut out = LocalMatrix::zeros((e1, e2), 2 * nl);
    let g = gauss_cached(m + 1);
    let half = 0.5 * f.length();
    let mut jump = vec![0.0; 2 * nl];
    for (&s, &w) in g.nodes.iter().zip(&g.weights) {
        let x = [0.5 * (f.a[0] + f.b[0]) + s * 0.5 * (f.b[0] - f.a[0]), 0.5 * (f.a[1] + f.b[1]) + s * 0.5 * (f.b[1] - f.a[1])];
        let b1 = eval_space_basis(&r1, m, x, m)?;
        let b2 = eval_space_basis(&r2, m, x, m)?;
        for (i, &c) in weights.iter().enumerate() {
            let order = i + 1;
            let (ax, ay) = if axis == 0 { (order, 0) } else { (0, order) };
            jump[..nl].copy_from_slice(b1.partial(ax, ay));
            for (j, v) in b2.partial(ax, ay).iter().enumerate() {
                jump[nl + j] = -v;
            }
            out.add_outer(c * w * half, &jump);
        }
    }
    Ok(out)
}

/// `scale ∫_{K1∪K2} (u1 − u2)(v1 − v2)` with canonical polynomial extensions.
pub fn patch_jump_matrix(mesh: &BackgroundMesh, face: usize, m: usize, scale: f64) -> Result<LocalMatrix> {
    let (e1, e2) = mesh.element_patch(face)?;
    let (r1, r2) = (mesh.element_rect(e1), mesh.element_rect(e2));
    let nl = (m + 1) * (m + 1);
    let mut out = LocalMatrix::zeros((e1, e2), 2 * nl);
    let g = gauss_cached(m + 1);
    let mut jump = vec![0.0; 2 * nl];
    for r in [r1, r2] {
        let (hx, hy) = (0.5 * r.side(0), 0.5 * r.side(1));
        let c = r.center();
        for (&sy, &wy) in g.nodes.iter().zip(&g.weights) {
            for (&sx, &wx) in g.nodes.iter().zip(&g.weights) {
                let x = [c[0] + hx * sx, c[1] + hy * sy];
                let b1 = eval_space_basis(&r1, m, x, 0)?;
                let b2 = eval_space_basis(&r2, m, x, 0)?;
                jump[..nl].copy_from_slice(b1.values());
                for (j, v) in b2.values().iter().enumerate() {
                    jump[nl + j] = -v;
                }
                out.add_outer(scale * wx * wy * hx * hy, &jump);
            }
        }
    }
    Ok(out)
}

/// `Σ_i τ_Γ^i h^{2i−2} Σ_p w_p D^i_n φ_a D^i_n φ_b` over the given surface rule of element `e`.
pub fn normal_derivative_matrix(
    rect: &Rect,
    m: usize,
    points: &[[f64; 2]],
    weights: &[f64],
    normals: &[[f64; 2]],
    coeffs: &[f64],
) -> Result<Vec<f64>> {
    let nl = (m + 1) * (m + 1);
    let mut out = vec![0.0; nl * nl];
    for ((x, &w), n) in points.iter().zip(weights).zip(normals) {
        let b = eval_space_basis(rect, m, *x, m)?;
        for (i, &c) in coeffs.iter().enumerate() {
            let d = b.directional(*n, i + 1);
            for a in 0..nl {
                let wa = c * w * d[a];
                for bb in 0..nl {
                    out[a * nl + bb] += wa * d[bb];
                }
            }
        }
    }
    Ok(out)
}

/// Time mass matrix `T_ij = Σ_q ω_q τ_q^{i+j}` of the monomial basis.
pub fn time_mass(k: usize, taus: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
    (0..=k)
        .map(|i| (0..=k).map(|j| taus.iter().zip(weights).map(|(t, w)| w * t.powi((i + j) as i32)).sum()).collect())
        .collect()
}

/// Which field a ghost penalty acts on (sets the `h` scaling).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Bulk,
    Surface,
}

/// Spatial ghost-penalty triplets `(l, l', value)` over the given faces.
pub fn assemble_spatial_ghost_penalty(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    faces: &[usize],
    cfg: &StabilizationConfig,
    field: Field,
) -> Result<Vec<(usize, usize, f64)>> {
    let h = mesh.h();
    let m = space.m;
    let tau = match field {
        Field::Bulk => cfg.tau,
        Field::Surface => cfg.tau_surface,
    };
    let face_weights: Vec<f64> = (1..=m)
        .map(|i| match field {
            Field::Bulk => tau * h.powi(2 * i as i32 - 1),
            Field::Surface => tau * h.powi(2 * i as i32 - 2),
        })
        .collect();
    let patch_scale = match field {
        Field::Bulk => tau * h.powi(-2),
        Field::Surface => tau * h.powi(-3),
    };
    let locals = par::try_map(faces, |&f| match cfg.variant {
        Variant::Face => face_jump_matrix(mesh, f, m, &face_weights),
        Variant::Patch => patch_jump_matrix(mesh, f, m, patch_scale),
    })?;
    let nl = space.n_local();
    let mut triplets = Vec::with_capacity(locals.len() * 4 * nl * nl);
    for loc in &locals {
        let d1 = space.element_dofs(loc.elements.0).ok_or_else(|| inactive(loc.elements.0))?;
        let d2 = space.element_dofs(loc.elements.1).ok_or_else(|| inactive(loc.elements.1))?;
        let dofs: Vec<usize> = d1.iter().chain(d2).copied().collect();
        for i in 0..loc.n {
            for j in 0..loc.n {
                let v = loc.get(i, j);
                if v != 0.0 {
                    triplets.push((dofs[i], dofs[j], v));
                }
            }
        }
    }
    Ok(triplets)
}

fn inactive(e: usize) -> Error {
    Error::Config(format!("stabilized face touches element {e} outside the active mesh"))
}

/// Expands spatial triplets with the time mass matrix into slab DOFs.
pub fn tensor_with_time(spatial: &[(usize, usize, f64)], tmass: &[Vec<f64>], n_space: usize) -> Vec<(usize, usize, f64)> {
    let kk = tmass.len();
    let mut out = Vec::with_capacity(spatial.len() * kk * kk);
    for i in 0..kk {
        for j in 0..kk {
            let t = tmass[i][j];
            for &(a, b, v) in spatial {
                out.push((i * n_space + a, j * n_space + b, t * v));
            }
        }
    }
    out
}

/// Normal-derivative penalty of the surface field, integrated in time with
/// the slab rule `(τ_q, ω_q)` (ω in physical time).
pub fn assemble_normal_derivative(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    geom: &SlabGeometry,
    problem: &LevelSetProblem,
    taus: &[f64],
    time_weights: &[f64],
    cfg: &StabilizationConfig,
) -> Result<Vec<(usize, usize, f64)>> {
    let h = mesh.h();
    let m = space.m;
    let k = space.k;
    let n = space.n_space();
    let nl = space.n_local();
    let shift = match cfg.normal_domain {
        NormalPenaltyDomain::Interface => 2,
        NormalPenaltyDomain::Elements => 3,
    };
    let coeffs: Vec<f64> = (1..=m).map(|i| cfg.tau_normal * h.powi(2 * i as i32 - shift)).collect();
    let blocks = par::try_map(&space.elements, |&e| -> Result<Vec<(usize, usize, f64)>> {
        let rect = mesh.element_rect(e);
        let dofs = space.element_dofs(e).expect("active");
        let mut local = Vec::new();
        let Some(cut) = geom.get(e) else { return Ok(local) };
        for q in 0..taus.len() {
            let mat = match cfg.normal_domain {
                NormalPenaltyDomain::Interface => {
                    let s = &cut.surface[q];
                    if s.is_empty() {
                        continue;
                    }
                    normal_derivative_matrix(&rect, m, &s.points, &s.weights, &s.normals, &coeffs)?
                }
                NormalPenaltyDomain::Elements => {
                    let t = geom.times[q];
                    let (p, w, nn) = element_normal_rule(&rect, m, |x| {
                        let g = problem.grad_phi(t, x);
                        let norm = g[0].hypot(g[1]);
                        (norm > 0.0).then(|| [g[0] / norm, g[1] / norm])
                    });
                    normal_derivative_matrix(&rect, m, &p, &w, &nn, &coeffs)?
                }
            };
            for i in 0..=k {
                for j in 0..=k {
                    let tw = time_weights[q] * taus[q].powi((i + j) as i32);
                    if tw == 0.0 {
                        continue;
                    }
                    for a in 0..nl {
                        for b in 0..nl {
                            let v = mat[a * nl + b];
                            if v != 0.0 {
                                local.push((i * n + dofs[a], j * n + dofs[b], tw * v));
                            }
                        }
                    }
                }
            }
        }
        Ok(local)
    })?;
    Ok(blocks.into_iter().flatten().collect())
}

#[allow(clippy::type_complexity)]
fn element_normal_rule(
    rect: &Rect,
    m: usize,
    normal: impl Fn([f64; 2]) -> Option<[f64; 2]>,
) -> (Vec<[f64; 2]>, Vec<f64>, Vec<[f64; 2]>) {
    let g = gauss_cached(m + 1);
    let (hx, hy) = (0.5 * rect.side(0), 0.5 * rect.side(1));
    let c = rect.center();
    let (mut p, mut w, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for (&sy, &wy) in g.nodes.iter().zip(&g.weights) {
        for (&sx, &wx) in g.nodes.iter().zip(&g.weights) {
            let x = [c[0] + hx * sx, c[1] + hy * sy];
            if let Some(nn) = normal(x) {
                p.push(x);
                w.push(wx * wy * hx * hy);
                n.push(nn);
            }
        }
    }
    (p, w, n)
}

/// Writes the partition (elements) and face sets (faces) as two CSV files.
pub fn write_partition_csv(
    mesh: &BackgroundMesh,
    partition: &MacroPartition,
    full_faces: &[usize],
    elements_path: &Path,
    faces_path: &Path,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(elements_path)?);
    writeln!(f, "element,ix,iy,x_center,y_center,large,root")?;
    for &(e, r) in &partition.roots {
        let (i, j) = mesh.element_ij(e);
        let c = mesh.element_rect(e).center();
        writeln!(f, "{e},{i},{j},{},{},{},{r}", c[0], c[1], partition.is_large(e) as u8)?;
    }
    let mut g = std::io::BufWriter::new(std::fs::File::create(faces_path)?);
    writeln!(g, "face,element1,element2,x0,y0,x1,y1,full,macro")?;
    let mut all: Vec<usize> = full_faces.iter().chain(&partition.faces).copied().collect();
    all.sort_unstable();
    all.dedup();
    for fid in all {
        let face = mesh.face(fid);
        let (a, b) = mesh.element_patch(fid)?;
        writeln!(
            g,
            "{fid},{a},{b},{},{},{},{},{},{}",
            face.a[0],
            face.a[1],
            face.b[0],
            face.b[1],
            full_faces.binary_search(&fid).is_ok() as u8,
            partition.faces.binary_search(&fid).is_ok() as u8
        )?;
    }
    Ok(())
}
