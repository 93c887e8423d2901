//! Problem definitions in evolving domains and active-mesh classification.
//!
//! `Ω(t) = {φ(t, ·) < 0}` and `Γ(t) = {φ(t, ·) = 0}`. All level sets are
//! closed-form in time and are transported exactly by the velocity field.
//! Sources are derived from the closed-form solutions by second-order
//! forward differentiation ([`crate::jet`]).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::implicit_quadrature::{classify_cell, cut_rules, CellSign, CutQuadRule, LevelSet};
use crate::jet::Jet;
use crate::mesh::{BBox, BackgroundMesh};
use crate::par;

/// Geometry of the evolving domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Circle of radius `r0` whose center orbits `pivot` at distance `orbit`
    /// with angular speed π, starting below the pivot.
    OrbitingCircle { pivot: [f64; 2], orbit: f64, r0: f64 },
    /// Circle whose horizontal offset is sheared: `x_c = (1 - y²) t`, `y_c = 0`.
    Kite { r0: f64 },
    /// Fixed circle.
    StaticCircle { center: [f64; 2], r0: f64 },
}

impl Shape {
    pub fn r0(&self) -> f64 {
        match *self {
            Shape::OrbitingCircle { r0, .. } | Shape::Kite { r0 } | Shape::StaticCircle { r0, .. } => r0,
        }
    }

    fn orbit_center(pivot: [f64; 2], orbit: f64, t: f64) -> [f64; 2] {
        let (s, c) = (PI * t).sin_cos();
        [pivot[0] + orbit * s, pivot[1] - orbit * c]
    }

    /// Offset `x - x_c(t, x)`.
    fn offset(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match *self {
            Shape::OrbitingCircle { pivot, orbit, .. } => {
                let c = Self::orbit_center(pivot, orbit, t);
                [x[0] - c[0], x[1] - c[1]]
            }
            Shape::Kite { .. } => [x[0] - (1.0 - x[1] * x[1]) * t, x[1]],
            Shape::StaticCircle { center, .. } => [x[0] - center[0], x[1] - center[1]],
        }
    }

    pub fn phi(&self, t: f64, x: [f64; 2]) -> f64 {
        let d = self.offset(t, x);
        let r0 = self.r0();
        d[0] * d[0] + d[1] * d[1] - r0 * r0
    }

    pub fn grad_phi(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let d = self.offset(t, x);
        match self {
            Shape::Kite { .. } => [2.0 * d[0], 2.0 * d[0] * 2.0 * x[1] * t + 2.0 * d[1]],
            _ => [2.0 * d[0], 2.0 * d[1]],
        }
    }

    /// Offset as jets.
    fn offset_jet(&self, t: Jet, x: Jet, y: Jet) -> [Jet; 2] {
        match *self {
            Shape::OrbitingCircle { pivot, orbit, .. } => {
                let arg = t * PI;
                [x - (arg.sin() * orbit + pivot[0]), y - (pivot[1] - arg.cos() * orbit)]
            }
            Shape::Kite { .. } => [x - (1.0 - y * y) * t, y],
            Shape::StaticCircle { center, .. } => [x - center[0], y - center[1]],
        }
    }

    /// Squared distance `r²` to the moving center.
    pub fn r2_jet(&self, t: Jet, x: Jet, y: Jet) -> Jet {
        let d = self.offset_jet(t, x, y);
        d[0] * d[0] + d[1] * d[1]
    }

    pub fn phi_jet(&self, t: Jet, x: Jet, y: Jet) -> Jet {
        self.r2_jet(t, x, y) - self.r0() * self.r0()
    }

    /// Spatial gradient of φ as jets (needed when a normal enters a differentiated expression).
    pub fn grad_phi_jet(&self, t: Jet, x: Jet, y: Jet) -> [Jet; 2] {
        let d = self.offset_jet(t, x, y);
        match self {
            Shape::Kite { .. } => [d[0] * 2.0, d[0] * y * t * 4.0 + d[1] * 2.0],
            _ => [d[0] * 2.0, d[1] * 2.0],
        }
    }
}

/// Prescribed divergence-free velocity.
#[derive(Clone, Debug, PartialEq)]
pub enum Velocity {
    Zero,
    /// Rigid rotation `omega * (c_y - y, x - c_x)`.
    Rotation { center: [f64; 2], omega: f64 },
    /// `(1 - y², 0)`.
    Shear,
}

impl Velocity {
    pub fn eval(&self, _t: f64, x: [f64; 2]) -> [f64; 2] {
        match *self {
            Velocity::Zero => [0.0, 0.0],
            Velocity::Rotation { center, omega } => [omega * (center[1] - x[1]), omega * (x[0] - center[0])],
            Velocity::Shear => [1.0 - x[1] * x[1], 0.0],
        }
    }

    /// `J[i][j] = ∂β_i/∂x_j`.
    pub fn jacobian(&self, _t: f64, x: [f64; 2]) -> [[f64; 2]; 2] {
        match *self {
            Velocity::Zero => [[0.0; 2]; 2],
            Velocity::Rotation { omega, .. } => [[0.0, -omega], [omega, 0.0]],
            Velocity::Shear => [[0.0, -2.0 * x[1]], [0.0, 0.0]],
        }
    }

    pub fn divergence(&self, t: f64, x: [f64; 2]) -> f64 {
        let j = self.jacobian(t, x);
        j[0][0] + j[1][1]
    }
}

/// Closed-form bulk solutions.
#[derive(Clone, Debug, PartialEq)]
pub enum BulkSolution {
    /// `cos(π r / r0) sin(π t)` with `r` the distance to the moving center.
    RadialCosine { r0: f64 },
    /// `0.5 + 0.4 cos(πx) cos(πy) cos(2πt)`.
    CosineProduct,
    Constant(f64),
}

/// `cos(a √s)` with first and second derivatives in `s`, stable at `s = 0`.
fn cos_sqrt(a: f64, s: f64) -> (f64, f64, f64) {
    let z = a * s.max(0.0).sqrt();
    let (sinc, q) = if z < 1e-3 {
        let z2 = z * z;
        (1.0 - z2 / 6.0, -1.0 / 3.0 + z2 / 30.0)
    } else {
        let (sz, cz) = z.sin_cos();
        (sz / z, (z * cz - sz) / (z * z * z))
    };
    (z.cos(), -0.5 * a * a * sinc, -0.25 * a.powi(4) * q)
}

impl BulkSolution {
    pub fn jet(&self, shape: &Shape, t: Jet, x: Jet, y: Jet) -> Jet {
        match *self {
            BulkSolution::RadialCosine { r0 } => {
                let s = shape.r2_jet(t, x, y);
                let (c0, c1, c2) = cos_sqrt(PI / r0, s.v);
                s.chain(c0, c1, c2) * (t * PI).sin()
            }
            BulkSolution::CosineProduct => {
                (x * PI).cos() * (y * PI).cos() * (t * (2.0 * PI)).cos() * 0.4 + 0.5
            }
            BulkSolution::Constant(c) => Jet::constant(c),
        }
    }

    /// Spatial gradient as jets, where available in closed form.
    pub fn gradient_jet(&self, t: Jet, x: Jet, y: Jet) -> Option<[Jet; 2]> {
        match *self {
            BulkSolution::CosineProduct => {
                let ct = (t * (2.0 * PI)).cos() * (0.4 * PI);
                Some([
                    -((x * PI).sin() * (y * PI).cos() * ct),
                    -((x * PI).cos() * (y * PI).sin() * ct),
                ])
            }
            BulkSolution::Constant(_) => Some([Jet::constant(0.0), Jet::constant(0.0)]),
            BulkSolution::RadialCosine { .. } => None,
        }
    }
}

/// A convection-diffusion problem `∂ₜu + ∇·(βu) − ∇·(D∇u) = f` in `Ω(t)`
/// with homogeneous Neumann data on `Γ(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetProblem {
    pub name: String,
    pub shape: Shape,
    pub velocity: Velocity,
    pub diffusion: f64,
    pub solution: BulkSolution,
    pub bbox: BBox,
    pub final_time: f64,
}

/// The level set of a problem frozen at time `t`.
pub struct Frozen<'a> {
    pub shape: &'a Shape,
    pub t: f64,
}

impl LevelSet for Frozen<'_> {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.shape.phi(self.t, x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.shape.grad_phi(self.t, x)
    }
}

impl LevelSetProblem {
    pub fn frozen(&self, t: f64) -> Frozen<'_> {
        Frozen { shape: &self.shape, t }
    }

    pub fn phi(&self, t: f64, x: [f64; 2]) -> f64 {
        self.shape.phi(t, x)
    }

    pub fn grad_phi(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.shape.grad_phi(t, x)
    }

    pub fn beta(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.velocity.eval(t, x)
    }

    pub fn exact_jet(&self, t: f64, x: [f64; 2]) -> Jet {
        let (tj, xj, yj) = Jet::vars(t, x);
        self.solution.jet(&self.shape, tj, xj, yj)
    }

    pub fn exact(&self, t: f64, x: [f64; 2]) -> f64 {
        match self.solution {
            BulkSolution::Constant(c) => c,
            _ => self.exact_jet(t, x).v,
        }
    }

    pub fn exact_gradient(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.exact_jet(t, x).grad()
    }

    pub fn initial(&self, x: [f64; 2]) -> f64 {
        self.exact(0.0, x)
    }

    /// `f = ∂ₜu + β·∇u − DΔu` (β is divergence-free).
    pub fn source(&self, t: f64, x: [f64; 2]) -> f64 {
        if let BulkSolution::Constant(_) = self.solution {
            return 0.0;
        }
        let u = self.exact_jet(t, x);
        let b = self.beta(t, x);
        let g = u.grad();
        u.dt() + b[0] * g[0] + b[1] * g[1] - self.diffusion * u.laplacian()
    }

    /// Largest velocity magnitude over sample points of the box.
    pub fn max_speed(&self, t: f64) -> f64 {
        let n = 16;
        let bb = self.bbox;
        let mut m = 0.0f64;
        for j in 0..=n {
            for i in 0..=n {
                let x = [
                    bb.x_min + bb.width() * i as f64 / n as f64,
                    bb.y_min + bb.height() * j as f64 / n as f64,
                ];
                let b = self.beta(t, x);
                m = m.max(b[0].hypot(b[1]));
            }
        }
        m
    }

    pub fn moving_circle() -> Self {
        let r0 = 0.17;
        Self {
            name: "moving_circle".into(),
            shape: Shape::OrbitingCircle { pivot: [0.5, 0.5], orbit: 0.28, r0 },
            velocity: Velocity::Rotation { center: [0.5, 0.5], omega: PI },
            diffusion: 1.0,
            solution: BulkSolution::RadialCosine { r0 },
            bbox: BBox::unit(),
            final_time: 0.5,
        }
    }

    /// Sheared circle; `r0` and the box are configuration values.
    pub fn kite_with(r0: f64, bbox: BBox, final_time: f64) -> Self {
        Self {
            name: "kite".into(),
            shape: Shape::Kite { r0 },
            velocity: Velocity::Shear,
            diffusion: 1.0,
            solution: BulkSolution::RadialCosine { r0 },
            bbox,
            final_time,
        }
    }

    pub fn kite() -> Self {
        Self::kite_with(0.5, BBox::new(-1.0, 2.0, -1.0, 1.0), 0.5)
    }

    /// Stationary circle with a constant solution and no transport.
    pub fn resting_circle(center: [f64; 2], r0: f64, value: f64, diffusion: f64) -> Self {
        Self {
            name: "resting_circle".into(),
            shape: Shape::StaticCircle { center, r0 },
            velocity: Velocity::Zero,
            diffusion,
            solution: BulkSolution::Constant(value),
            bbox: BBox::unit(),
            final_time: 1.0,
        }
    }
}

/// Exchange law `f_C = b_B u_B − b_S u_S − b_BS u_B u_S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingModel {
    pub b_bulk: f64,
    pub b_surface: f64,
    pub b_mixed: f64,
}

impl Default for CouplingModel {
    fn default() -> Self {
        Self { b_bulk: 1.0, b_surface: 1.0, b_mixed: 1.0 }
    }
}

impl CouplingModel {
    pub fn henry(b_bulk: f64, b_surface: f64) -> Self {
        Self { b_bulk, b_surface, b_mixed: 0.0 }
    }

    pub fn flux(&self, ub: f64, us: f64) -> f64 {
        self.b_bulk * ub - self.b_surface * us - self.b_mixed * ub * us
    }
}

/// Bulk-surface surfactant problem with exchange on `Γ(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledProblem {
    pub bulk: LevelSetProblem,
    pub surface_diffusion: f64,
    pub coupling: CouplingModel,
}

pub fn tangential_gradient(grad: [f64; 2], n: [f64; 2]) -> [f64; 2] {
    let gn = grad[0] * n[0] + grad[1] * n[1];
    [grad[0] - gn * n[0], grad[1] - gn * n[1]]
}

/// `∇_Γ·β = ∇·β − nᵀ(∇β)n`.
pub fn surface_divergence(jac: [[f64; 2]; 2], n: [f64; 2]) -> f64 {
    let mut njn = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            njn += n[i] * jac[i][j] * n[j];
        }
    }
    jac[0][0] + jac[1][1] - njn
}

impl CoupledProblem {
    pub fn surfactant() -> Self {
        let mut bulk = LevelSetProblem::moving_circle();
        bulk.name = "coupled_circle".into();
        bulk.diffusion = 0.01;
        bulk.solution = BulkSolution::CosineProduct;
        Self { bulk, surface_diffusion: 1.0, coupling: CouplingModel::default() }
    }

    fn normal_jet(&self, t: Jet, x: Jet, y: Jet) -> [Jet; 2] {
        let g = self.bulk.shape.grad_phi_jet(t, x, y);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        [g[0] / norm, g[1] / norm]
    }

    /// Surface solution `(b_B u_B + n·D∇u_B) / (b_S + b_BS u_B)`, extended off Γ
    /// with the level-set normal.
    pub fn surface_jet(&self, t: f64, x: [f64; 2]) -> Result<Jet> {
        let (tj, xj, yj) = Jet::vars(t, x);
        let ub = self.bulk.solution.jet(&self.bulk.shape, tj, xj, yj);
        let g = self.bulk.solution.gradient_jet(tj, xj, yj).ok_or_else(|| {
            Error::Config("coupled problems need a bulk solution with a closed-form gradient".into())
        })?;
        let n = self.normal_jet(tj, xj, yj);
        let c = self.coupling;
        let flux = (n[0] * g[0] + n[1] * g[1]) * self.bulk.diffusion;
        Ok((ub * c.b_bulk + flux) / (ub * c.b_mixed + c.b_surface))
    }

    pub fn exact_surface(&self, t: f64, x: [f64; 2]) -> f64 {
        self.surface_jet(t, x).map(|j| j.v).unwrap_or(f64::NAN)
    }

    pub fn exact_bulk(&self, t: f64, x: [f64; 2]) -> f64 {
        self.bulk.exact(t, x)
    }

    pub fn bulk_source(&self, t: f64, x: [f64; 2]) -> f64 {
        self.bulk.source(t, x)
    }

    /// `f_S` on `Γ(t)`: material derivative, stretching and Laplace-Beltrami
    /// terms of the exact surface field minus the exchange flux.
    pub fn surface_source(&self, t: f64, x: [f64; 2]) -> f64 {
        let Ok(us) = self.surface_jet(t, x) else { return f64::NAN };
        let (tj, xj, yj) = Jet::vars(t, x);
        let phi = self.bulk.shape.phi_jet(tj, xj, yj);
        let gphi = phi.grad();
        let gnorm = gphi[0].hypot(gphi[1]);
        let n = [gphi[0] / gnorm, gphi[1] / gnorm];
        let hphi = phi.hessian_xy();
        let nhn = |h: [[f64; 2]; 2]| {
            n[0] * n[0] * h[0][0] + 2.0 * n[0] * n[1] * h[0][1] + n[1] * n[1] * h[1][1]
        };
        let curvature = (phi.laplacian() - nhn(hphi)) / gnorm;
        let g = us.grad();
        let lap_beltrami = us.laplacian() - nhn(us.hessian_xy()) - curvature * (n[0] * g[0] + n[1] * g[1]);
        let b = self.bulk.beta(t, x);
        let material = us.dt() + b[0] * g[0] + b[1] * g[1];
        let stretch = surface_divergence(self.bulk.velocity.jacobian(t, x), n) * us.v;
        let ub = self.bulk.exact(t, x);
        material + stretch - self.surface_diffusion * lap_beltrami - self.coupling.flux(ub, us.v)
    }

    pub fn surface_divergence_beta(&self, t: f64, x: [f64; 2], n: [f64; 2]) -> f64 {
        surface_divergence(self.bulk.velocity.jacobian(t, x), n)
    }
}

/// Intersection status of an element at one time sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutStatus {
    Empty,
    Full,
    Cut,
}

/// Cut rules of one element at every time sample of a slab.
#[derive(Clone, Debug)]
pub struct ElementCut {
    pub element: usize,
    pub volume: Vec<CutQuadRule>,
    pub surface: Vec<CutQuadRule>,
}

impl ElementCut {
    pub fn status(&self, q: usize) -> CutStatus {
        if !self.surface[q].is_empty() {
            CutStatus::Cut
        } else if self.volume[q].is_empty() {
            CutStatus::Empty
        } else {
            CutStatus::Full
        }
    }

    pub fn is_bulk_active(&self) -> bool {
        self.volume.iter().any(|r| !r.is_empty())
    }

    /// Cut at a sample, or changing status between samples.
    pub fn is_surface_active(&self) -> bool {
        let n = self.volume.len();
        let statuses: Vec<_> = (0..n).map(|q| self.status(q)).collect();
        statuses.contains(&CutStatus::Cut) || statuses.windows(2).any(|w| w[0] != w[1])
    }

    pub fn fraction(&self, q: usize, area: f64) -> f64 {
        (self.volume[q].weight_sum() / area).clamp(0.0, 1.0)
    }

    pub fn interface_length(&self, q: usize) -> f64 {
        self.surface[q].weight_sum()
    }
}

/// Element rules for all time samples of a slab, for every element that
/// meets `Ω(t_q)` at some sample.
#[derive(Clone, Debug)]
pub struct SlabGeometry {
    pub times: Vec<f64>,
    pub n_s: usize,
    pub elements: Vec<ElementCut>,
    /// Mesh element id to position in `elements`.
    pub index: Vec<Option<usize>>,
}

impl SlabGeometry {
    pub fn compute(mesh: &BackgroundMesh, problem: &LevelSetProblem, times: &[f64], n_s: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config("time sample set is empty".into()));
        }
        let frozen: Vec<_> = times.iter().map(|&t| problem.frozen(t)).collect();
        let per_element = par::map_range(mesh.n_elements(), |e| -> Result<Option<ElementCut>> {
            let rect = mesh.element_rect(e);
            let signs: Vec<_> = frozen.iter().map(|f| classify_cell(f, &rect)).collect();
            if signs.iter().all(|s| *s == CellSign::Outside) {
                return Ok(None);
            }
            let mut cut = ElementCut { element: e, volume: Vec::with_capacity(times.len()), surface: Vec::new() };
            for f in &frozen {
                let r = cut_rules(f, &rect, n_s)?;
                cut.volume.push(r.volume);
                cut.surface.push(r.surface);
            }
            Ok(cut.is_bulk_active().then_some(cut))
        });
        let mut elements = Vec::new();
        for r in per_element {
            if let Some(c) = r? {
                elements.push(c);
            }
        }
        let mut index = vec![None; mesh.n_elements()];
        for (i, c) in elements.iter().enumerate() {
            index[c.element] = Some(i);
        }
        Ok(Self { times: times.to_vec(), n_s, elements, index })
    }

    pub fn get(&self, element: usize) -> Option<&ElementCut> {
        self.index.get(element).copied().flatten().map(|i| &self.elements[i])
    }
}

/// Active bulk and interface meshes of one slab.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveMeshes {
    pub bulk: Vec<usize>,
    pub surface: Vec<usize>,
    pub slab: (f64, f64),
    pub times: Vec<f64>,
    /// Set when `Δt · max|β| > h`: the interface may skip elements between samples.
    pub sweep_warning: bool,
}

impl ActiveMeshes {
    pub fn from_geometry(geom: &SlabGeometry, slab: (f64, f64), sweep_warning: bool) -> Self {
        let bulk = geom.elements.iter().map(|c| c.element).collect();
        let surface = geom.elements.iter().filter(|c| c.is_surface_active()).map(|c| c.element).collect();
        Self { bulk, surface, slab, times: geom.times.clone(), sweep_warning }
    }

    pub fn is_bulk(&self, e: usize) -> bool {
        self.bulk.binary_search(&e).is_ok()
    }

    pub fn is_surface(&self, e: usize) -> bool {
        self.surface.binary_search(&e).is_ok()
    }
}

/// Checks the one-layer-per-slab sweep condition.
pub fn sweep_check(mesh: &BackgroundMesh, problem: &LevelSetProblem, slab: (f64, f64)) -> bool {
    let speed = problem.max_speed(slab.0).max(problem.max_speed(slab.1));
    let sweeps = (slab.1 - slab.0) * speed > mesh.h() * (1.0 + 1e-12);
    if sweeps {
        log::warn!(
            "slab [{}, {}]: interface may cross more than one element layer (dt*|beta| = {:.3e} > h = {:.3e})",
            slab.0,
            slab.1,
            (slab.1 - slab.0) * speed,
            mesh.h()
        );
    }
    sweeps
}

/// Active meshes for the slab with time samples `times`.
pub fn classify_elements(
    mesh: &BackgroundMesh,
    problem: &LevelSetProblem,
    slab: (f64, f64),
    times: &[f64],
    n_s: usize,
) -> Result<ActiveMeshes> {
    if slab.1 <= slab.0 {
        return Err(Error::Config(format!("empty slab {slab:?}")));
    }
    if times.iter().any(|&t| t < slab.0 || t > slab.1) {
        return Err(Error::Config("time samples must lie inside the slab".into()));
    }
    let geom = SlabGeometry::compute(mesh, problem, times, n_s)?;
    Ok(ActiveMeshes::from_geometry(&geom, slab, sweep_check(mesh, problem, slab)))
}

/// Built-in problems by name.
pub fn builtin_problems() -> Vec<LevelSetProblem> {
    vec![LevelSetProblem::moving_circle(), LevelSetProblem::kite(), CoupledProblem::surfactant().bulk]
}

pub fn builtin_problem(name: &str) -> Result<LevelSetProblem> {
    builtin_problems()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown problem '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_source(p: &LevelSetProblem, t: f64, x: [f64; 2]) -> f64 {
        let e = 1e-4;
        let u = |t: f64, x: [f64; 2]| p.exact(t, x);
        let ut = (u(t + e, x) - u(t - e, x)) / (2.0 * e);
        let ux = (u(t, [x[0] + e, x[1]]) - u(t, [x[0] - e, x[1]])) / (2.0 * e);
        let uy = (u(t, [x[0], x[1] + e]) - u(t, [x[0], x[1] - e])) / (2.0 * e);
        let lap = (u(t, [x[0] + e, x[1]]) + u(t, [x[0] - e, x[1]]) + u(t, [x[0], x[1] + e]) + u(t, [x[0], x[1] - e])
            - 4.0 * u(t, x))
            / (e * e);
        let b = p.beta(t, x);
        ut + b[0] * ux + b[1] * uy - p.diffusion * lap
    }

    #[test]
    fn moving_circle_values() {
        let p = LevelSetProblem::moving_circle();
        let c = [0.5 + 0.28 * (PI * 0.5).sin(), 0.5 - 0.28 * (PI * 0.5).cos()];
        assert!((p.exact(0.5, c) - 1.0).abs() < 1e-14);
        let t = 0.3;
        let c = [0.5 + 0.28 * (PI * t).sin(), 0.5 - 0.28 * (PI * t).cos()];
        let on = [c[0] + 0.17, c[1]];
        assert!((p.exact(t, on) + (PI * t).sin()).abs() < 1e-13);
        assert!(p.phi(t, on).abs() < 1e-15);
    }

    #[test]
    fn sources_match_finite_differences() {
        for p in [LevelSetProblem::moving_circle(), LevelSetProblem::kite(), CoupledProblem::surfactant().bulk] {
            for &(t, x) in &[(0.13, [0.55, 0.3]), (0.41, [0.62, 0.41]), (0.05, [0.1, 0.05])] {
                let f = p.source(t, x);
                let fd = fd_source(&p, t, x);
                assert!((f - fd).abs() <= 1e-6 * (1.0 + f.abs()) * 100.0, "{}: {f} vs {fd}", p.name);
            }
        }
    }

    #[test]
    fn source_near_center_is_finite() {
        let p = LevelSetProblem::moving_circle();
        let c = [0.5, 0.5 - 0.28];
        let f0 = p.source(0.0, c);
        let f1 = p.source(0.0, [c[0] + 1e-9, c[1]]);
        assert!(f0.is_finite() && (f0 - f1).abs() < 1e-6 * f0.abs().max(1.0));
    }

    #[test]
    fn neumann_compatibility() {
        let p = LevelSetProblem::moving_circle();
        for k in 0..32 {
            let t = 0.03 * k as f64;
            let th = 0.7 * k as f64;
            let c = [0.5 + 0.28 * (PI * t).sin(), 0.5 - 0.28 * (PI * t).cos()];
            let x = [c[0] + 0.17 * th.cos(), c[1] + 0.17 * th.sin()];
            let g = p.exact_gradient(t, x);
            let gp = p.grad_phi(t, x);
            let n = [gp[0] / gp[0].hypot(gp[1]), gp[1] / gp[0].hypot(gp[1])];
            assert!((p.diffusion * (n[0] * g[0] + n[1] * g[1])).abs() <= 1e-12);
        }
    }

    #[test]
    fn velocities_are_divergence_free_and_transport_phi() {
        for p in builtin_problems() {
            for &(t, x) in &[(0.1, [0.3, 0.7]), (0.77, [0.45, 0.2]), (0.5, [-0.3, 0.4])] {
                let e = 1e-5;
                let b = |x: [f64; 2]| p.beta(t, x);
                let div = (b([x[0] + e, x[1]])[0] - b([x[0] - e, x[1]])[0]
                    + b([x[0], x[1] + e])[1]
                    - b([x[0], x[1] - e])[1])
                    / (2.0 * e);
                assert!(div.abs() < 1e-8);
                // material derivative of φ vanishes: the interface moves with β
                let pt = (p.phi(t + e, x) - p.phi(t - e, x)) / (2.0 * e);
                let g = p.grad_phi(t, x);
                let bb = p.beta(t, x);
                assert!((pt + bb[0] * g[0] + bb[1] * g[1]).abs() < 1e-8, "{}", p.name);
            }
        }
    }

    #[test]
    fn initial_matches_exact() {
        for p in builtin_problems() {
            let x = [0.47, 0.3];
            assert_eq!(p.initial(x), p.exact(0.0, x));
        }
    }

    #[test]
    fn tangential_projection() {
        assert_eq!(tangential_gradient([2.0, 0.0], [1.0, 0.0]), [0.0, 0.0]);
        assert_eq!(tangential_gradient([0.0, 3.0], [1.0, 0.0]), [0.0, 3.0]);
        assert_eq!(tangential_gradient([1.0, 1.0], [1.0, 0.0]), [0.0, 1.0]);
    }

    #[test]
    fn surface_divergence_cases() {
        let rot = Velocity::Rotation { center: [0.5, 0.5], omega: PI };
        for th in [0.0, 0.4, 1.3, 2.9] {
            let n = [f64::cos(th), f64::sin(th)];
            assert!(surface_divergence(rot.jacobian(0.0, [0.1, 0.2]), n).abs() < 1e-15);
        }
        // β = (x, −y) on a vertical interface
        let jac = [[1.0, 0.0], [0.0, -1.0]];
        assert_eq!(surface_divergence(jac, [1.0, 0.0]), -1.0);
        assert_eq!(surface_divergence([[0.0; 2]; 2], [0.6, 0.8]), 0.0);
    }

    #[test]
    fn coupled_exact_fields_satisfy_exchange_law() {
        let cp = CoupledProblem::surfactant();
        let t = 0.2;
        let c = [0.5 + 0.28 * (PI * t).sin(), 0.5 - 0.28 * (PI * t).cos()];
        let x = [c[0] + 0.17 * 0.8, c[1] + 0.17 * 0.6];
        let ub = cp.exact_bulk(t, x);
        let us = cp.exact_surface(t, x);
        let g = cp.bulk.exact_gradient(t, x);
        let flux = cp.bulk.diffusion * (0.8 * g[0] + 0.6 * g[1]);
        assert!((-flux - cp.coupling.flux(ub, us)).abs() < 1e-14);
        assert!(cp.surface_source(t, x).is_finite());
    }

    /// Surface source by a parametrized finite-difference oracle on the circle.
    #[test]
    fn surface_source_matches_parametric_oracle() {
        let cp = CoupledProblem::surfactant();
        let r0 = 0.17;
        let center = |t: f64| [0.5 + 0.28 * (PI * t).sin(), 0.5 - 0.28 * (PI * t).cos()];
        // Γ(t) rotates rigidly with angular speed π, so material points follow θ + πt
        let us_at = |t: f64, th: f64| {
            let c = center(t);
            cp.exact_surface(t, [c[0] + r0 * th.cos(), c[1] + r0 * th.sin()])
        };
        let (t, th) = (0.23, 1.1);
        let e = 1e-4;
        let material = (us_at(t + e, th + PI * e) - us_at(t - e, th - PI * e)) / (2.0 * e);
        let d2 = (us_at(t, th + e) - 2.0 * us_at(t, th) + us_at(t, th - e)) / (e * e);
        let lb = d2 / (r0 * r0);
        let c = center(t);
        let x = [c[0] + r0 * th.cos(), c[1] + r0 * th.sin()];
        let ub = cp.exact_bulk(t, x);
        let us = us_at(t, th);
        let oracle = material - cp.surface_diffusion * lb - cp.coupling.flux(ub, us);
        let f = cp.surface_source(t, x);
        assert!((f - oracle).abs() < 1e-5 * (1.0 + f.abs()), "{f} vs {oracle}");
    }

    #[test]
    fn classification() {
        let mesh = BackgroundMesh::new(BBox::unit(), 20, 20).unwrap();
        let mut p = LevelSetProblem::moving_circle();
        p.shape = Shape::StaticCircle { center: [0.5, 0.22], r0: 0.17 };
        p.velocity = Velocity::Zero;
        let a = classify_elements(&mesh, &p, (0.0, 0.1), &[0.0], 3).unwrap();
        for e in 0..mesh.n_elements() {
            let r = mesh.element_rect(e);
            // dense sample oracle
            let mut min = f64::INFINITY;
            for j in 0..=40 {
                for i in 0..=40 {
                    let x = [r.lo[0] + r.side(0) * i as f64 / 40.0, r.lo[1] + r.side(1) * j as f64 / 40.0];
                    min = min.min(p.phi(0.0, x));
                }
            }
            if min < -1e-12 {
                assert!(a.is_bulk(e), "element {e}");
            }
        }
        let b = classify_elements(&mesh, &p, (0.1, 0.2), &[0.1], 3).unwrap();
        assert_eq!(a.bulk, b.bulk);
        assert_eq!(a.surface, b.surface);
    }

    #[test]
    fn moving_circle_classification_against_dense_oracle() {
        let mesh = BackgroundMesh::new(BBox::unit(), 10, 10).unwrap();
        let p = LevelSetProblem::moving_circle();
        let dt = 0.1 / 3.0;
        let times = [0.2, 0.2 + dt / 2.0, 0.2 + dt];
        let a = classify_elements(&mesh, &p, (0.2, 0.2 + dt), &times, 3).unwrap();
        assert!(!a.sweep_warning);
        assert!(!a.surface.is_empty());
        assert!(a.surface.len() < a.bulk.len());
        assert!(a.surface.iter().all(|e| a.is_bulk(*e)));
        for e in 0..mesh.n_elements() {
            let r = mesh.element_rect(e);
            let (mut neg, mut pos) = (false, false);
            let mut any_cut = false;
            for &t in &times {
                let (mut n_t, mut p_t) = (false, false);
                for j in 0..50 {
                    for i in 0..50 {
                        let x = [r.lo[0] + r.side(0) * (i as f64 + 0.5) / 50.0, r.lo[1] + r.side(1) * (j as f64 + 0.5) / 50.0];
                        if p.phi(t, x) < 0.0 {
                            n_t = true;
                        } else {
                            p_t = true;
                        }
                    }
                }
                neg |= n_t;
                pos |= p_t;
                any_cut |= n_t && p_t;
            }
            let _ = pos;
            assert_eq!(a.is_bulk(e), neg, "bulk {e}");
            if any_cut {
                assert!(a.is_surface(e), "surface {e}");
            }
        }
    }

    #[test]
    fn sweep_warning_is_raised() {
        let mesh = BackgroundMesh::new(BBox::unit(), 10, 10).unwrap();
        let p = LevelSetProblem::moving_circle();
        let a = classify_elements(&mesh, &p, (0.0, 0.2), &[0.0, 0.1, 0.2], 3).unwrap();
        assert!(a.sweep_warning);
    }

    #[test]
    fn catalog() {
        let names: Vec<_> = builtin_problems().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["moving_circle", "kite", "coupled_circle"]);
        assert!(builtin_problem("nope").is_err());
    }
}
