//! Coupled bulk-surface transport with Langmuir exchange on the interface.
//!
//! Unknowns are a bulk field on the active mesh and a surface field on the
//! interface-active mesh, both tensor-product slab functions on the same
//! background basis. The exchange term `(f_C(u_B, u_S), v_B − v_S)_Γ` is
//! nonlinear when `b_BS ≠ 0`; each slab is solved by Newton's method.

use crate::diagnostics::{self, ConservationTracker, Domain, RunReport, SlabRecord};
use crate::error::{Error, Result};
use crate::fespace::{build_dof_map, eval_space_basis, SlabSpace, SpatialField};
use crate::levelset::{sweep_check, tangential_gradient, ActiveMeshes, CoupledProblem, ElementCut, SlabGeometry};
use crate::linalg::{condition_number_2, relative_residual, Factorization, SparseMatrix};
use crate::mesh::BackgroundMesh;
use crate::par;
use crate::schemes_bulk::{bulk_element_block, scatter_blocks, BulkTerms, DtRule, SchemeKind, SlabTimeRule, Trace};
use crate::stabilization::{
    assemble_normal_derivative, assemble_spatial_ghost_penalty, bulk_stabilized_faces, surface_stabilized_faces, tensor_with_time,
    time_mass, Field, MacroPartition, Mode, StabilizationConfig,
};

/// Newton iteration controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// Stop when `‖R‖ ≤ tol (1 + ‖L‖)`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 25, max_halvings: 8 }
    }
}

/// Converged Newton iterate with its residual history `‖R(x_j)‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton: `step(x, r)` returns the correction `δ` with `J(x) δ = −r`.
pub fn newton_solve(
    mut residual: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut step: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
    x0: Vec<f64>,
    rhs_norm: f64,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome> {
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!("Newton tolerance must be positive, got {}", cfg.tol)));
    }
    let target = cfg.tol * (1.0 + rhs_norm);
    let mut x = x0;
    let mut r = residual(&x)?;
    let mut rn = norm2(&r);
    let mut history = vec![rn];
    let mut iterations = 0;
    while rn > target {
        if iterations == cfg.max_iter {
            return Err(Error::NonConvergence(format!(
                "Newton stopped after {} iterations with residual {rn:.3e} (target {target:.3e})",
                cfg.max_iter
            )));
        }
        let delta = step(&x, &r)?;
        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let tr = residual(&trial)?;
            let tn = norm2(&tr);
            if tn.is_finite() && (tn < rn || halvings == cfg.max_halvings) {
                if !(tn < rn) {
                    log::warn!("Newton line search exhausted {halvings} halvings (residual {tn:.3e} ≥ {rn:.3e})");
                }
                x = trial;
                r = tr;
                rn = tn;
                break;
            }
            if halvings == cfg.max_halvings {
                return Err(Error::NonFinite("Newton residual"));
            }
            lambda *= 0.5;
            halvings += 1;
        }
        iterations += 1;
        history.push(rn);
        if iterations == cfg.max_iter && rn > target && history.len() >= 2 {
            // stagnation at the rounding floor of the linear solver counts as converged
            let prev = history[history.len() - 2];
            if rn >= 0.5 * prev && rn <= 1e3 * target {
                log::warn!("Newton stagnated at {rn:.3e} near target {target:.3e}");
                break;
            }
        }
    }
    Ok(NewtonOutcome { x, iterations, residuals: history })
}

/// Bulk and surface spaces of one slab; bulk DOFs first.
#[derive(Clone, Debug)]
pub struct CoupledSlabSpace {
    pub bulk: SlabSpace,
    pub surface: SlabSpace,
}

impl CoupledSlabSpace {
    pub fn offset(&self) -> usize {
        self.bulk.n_dofs()
    }

    pub fn n_dofs(&self) -> usize {
        self.bulk.n_dofs() + self.surface.n_dofs()
    }
}

/// Interface quadrature point of the exchange term with cached basis values.
#[derive(Clone, Debug)]
struct ExchangePoint {
    element: usize,
    /// `ω_q w_p`.
    weight: f64,
    tau: f64,
    phi: Vec<f64>,
}

/// Linear operator, right-hand side and exchange data of one coupled slab.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    pub slab_index: usize,
    /// Everything except the `b_BS u_B u_S` exchange term.
    pub linear: SparseMatrix,
    pub rhs: Vec<f64>,
    pub space: CoupledSlabSpace,
    pub rule: SlabTimeRule,
    pub geometry: SlabGeometry,
    pub active: ActiveMeshes,
    pub bulk_partition: Option<MacroPartition>,
    pub surface_partition: Option<MacroPartition>,
    pub b_mixed: f64,
    exchange: Vec<ExchangePoint>,
    pub prev_mass: f64,
    pub prev_abs_mass: f64,
    pub source: f64,
    pub source_abs: f64,
}

impl CoupledSystem {
    fn local_values(&self, c: &[f64], p: &ExchangePoint) -> (f64, f64) {
        let (b, s) = (&self.space.bulk, &self.space.surface);
        let db = b.element_dofs(p.element).expect("bulk active");
        let ds = s.element_dofs(p.element).expect("surface active");
        let (nb, ns, off) = (b.n_space(), s.n_space(), self.space.offset());
        let (mut ub, mut us) = (0.0, 0.0);
        let mut tp = 1.0;
        for i in 0..=b.k {
            for (a, &phi) in p.phi.iter().enumerate() {
                ub += tp * phi * c[i * nb + db[a]];
                us += tp * phi * c[off + i * ns + ds[a]];
            }
            tp *= p.tau;
        }
        (ub, us)
    }

    /// `R(c) = A c − b_BS (u_B u_S, v_B − v_S)_Γ − L`.
    pub fn residual(&self, c: &[f64]) -> Vec<f64> {
        let mut r = self.linear.matvec(c);
        for (ri, li) in r.iter_mut().zip(&self.rhs) {
            *ri -= li;
        }
        if self.b_mixed != 0.0 {
            let (b, s) = (&self.space.bulk, &self.space.surface);
            let (nb, ns, off) = (b.n_space(), s.n_space(), self.space.offset());
            for p in &self.exchange {
                let (ub, us) = self.local_values(c, p);
                let g = -self.b_mixed * p.weight * ub * us;
                let db = b.element_dofs(p.element).expect("bulk active");
                let ds = s.element_dofs(p.element).expect("surface active");
                let mut tp = 1.0;
                for i in 0..=b.k {
                    for (a, &phi) in p.phi.iter().enumerate() {
                        r[i * nb + db[a]] += g * tp * phi;
                        r[off + i * ns + ds[a]] -= g * tp * phi;
                    }
                    tp *= p.tau;
                }
            }
        }
        r
    }

    /// Exact Jacobian of [`Self::residual`].
    pub fn jacobian(&self, c: &[f64]) -> Result<SparseMatrix> {
        if self.b_mixed == 0.0 {
            return Ok(self.linear.clone());
        }
        let (b, s) = (&self.space.bulk, &self.space.surface);
        let (nb, ns, off) = (b.n_space(), s.n_space(), self.space.offset());
        let k = b.k;
        let mut t = Vec::new();
        for p in &self.exchange {
            let (ub, us) = self.local_values(c, p);
            let db = b.element_dofs(p.element).expect("bulk active");
            let ds = s.element_dofs(p.element).expect("surface active");
            let tp: Vec<f64> = (0..=k).map(|i| p.tau.powi(i as i32)).collect();
            let nl = p.phi.len();
            for i in 0..=k {
                for a in 0..nl {
                    let test = p.weight * tp[i] * p.phi[a];
                    if test == 0.0 {
                        continue;
                    }
                    let (rb, rs) = (i * nb + db[a], off + i * ns + ds[a]);
                    for j in 0..=k {
                        for bb in 0..nl {
                            let trial = tp[j] * p.phi[bb];
                            let d_ub = -self.b_mixed * us * trial * test;
                            let d_us = -self.b_mixed * ub * trial * test;
                            let (cb, cs) = (j * nb + db[bb], off + j * ns + ds[bb]);
                            t.push((rb, cb, d_ub));
                            t.push((rb, cs, d_us));
                            t.push((rs, cb, -d_ub));
                            t.push((rs, cs, -d_us));
                        }
                    }
                }
            }
        }
        self.linear.add(&SparseMatrix::from_triplets(self.linear.dim(), t)?)
    }
}

/// Discretization parameters of a coupled run.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledConfig {
    pub m: usize,
    pub k: usize,
    pub n_t: usize,
    pub n_s: usize,
    pub h: f64,
    pub dt: DtRule,
    pub final_time: f64,
    pub scheme: SchemeKind,
    pub stab: StabilizationConfig,
    pub newton: NewtonConfig,
    pub compute_cond: bool,
    pub measure_errors: bool,
}

impl CoupledConfig {
    /// Defaults of the surfactant study: `Δt = h/4`, `δ_B = 0.7`, `δ_S = 0.5`, all `τ = 1`,
    /// raised to `τ_Γ = 10` (macro) or `N_t = 20` (full) for the conservative scheme at `m = k = 2`.
    pub fn with_defaults(m: usize, k: usize, h: f64, final_time: f64, scheme: SchemeKind, mode: Mode) -> Self {
        let stab = StabilizationConfig { mode, delta: 0.7, delta_surface: 0.5, ..StabilizationConfig::default() };
        let mut cfg = Self {
            m,
            k,
            n_t: crate::schemes_bulk::default_time_points(m, k),
            n_s: m + 2,
            h,
            dt: DtRule::RatioToH(0.25),
            final_time,
            scheme,
            stab,
            newton: NewtonConfig::default(),
            compute_cond: false,
            measure_errors: true,
        };
        if scheme == SchemeKind::Conservative && m == 2 && k == 2 {
            match mode {
                Mode::Macro => cfg.stab.tau_surface = 10.0,
                Mode::Full => cfg.n_t = 20,
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > crate::fespace::MAX_ORDER || self.n_t < 2 {
            return Err(Error::Config(format!("invalid orders m = {}, N_t = {}", self.m, self.n_t)));
        }
        if !(self.h > 0.0) || !(self.final_time > 0.0) || !(self.dt.resolve(self.h) > 0.0) {
            return Err(Error::Config("h, T and dt must be positive".into()));
        }
        self.stab.validate()
    }
}

/// Previous-slab data of both fields.
pub struct CoupledTrace<'a> {
    pub bulk: Trace<'a>,
    pub surface: Trace<'a>,
}

/// Local matrix, local right-hand side, `[prev mass, source, |source|]` and exchange points.
type SurfaceBlock = (Vec<f64>, Vec<f64>, [f64; 3], Vec<ExchangePoint>);

/// Surface and exchange contribution of one interface-active element over
/// local indices `[bulk (k+1)n_l ; surface (k+1)n_l]`.
#[allow(clippy::too_many_arguments)]
fn surface_element_block(
    mesh: &BackgroundMesh,
    problem: &CoupledProblem,
    k: usize,
    m: usize,
    cut: &ElementCut,
    rule: &SlabTimeRule,
    scheme: SchemeKind,
    trace: &Trace,
) -> Result<SurfaceBlock> {
    let nl = (m + 1) * (m + 1);
    let nd = (k + 1) * nl;
    let n2 = 2 * nd;
    let rect = mesh.element_rect(cut.element);
    let dt = rule.dt();
    let last = rule.len() - 1;
    let cm = problem.coupling;
    let mut mat = vec![0.0; n2 * n2];
    let mut rhs = vec![0.0; n2];
    // prev mass, source, |source|
    let mut sums = [0.0; 3];
    let mut exchange = Vec::new();
    let z = || vec![0.0; nl * nl];
    let (mut mass, mut conv, mut stiff, mut load) = (z(), z(), z(), vec![0.0; nl]);
    for q in 0..rule.len() {
        let surf = &cut.surface[q];
        if surf.is_empty() {
            continue;
        }
        let t = rule.times[q];
        mass.fill(0.0);
        conv.fill(0.0);
        stiff.fill(0.0);
        load.fill(0.0);
        let (wt, tau) = (rule.weights[q], rule.taus[q]);
        for ((&x, &w), &n) in surf.points.iter().zip(&surf.weights).zip(&surf.normals) {
            let b = eval_space_basis(&rect, m, x, 1)?;
            let phi = b.values();
            let beta = problem.bulk.beta(t, x);
            let grads: Vec<[f64; 2]> = (0..nl).map(|a| b.gradient(a)).collect();
            let tg: Vec<[f64; 2]> = grads.iter().map(|g| tangential_gradient(*g, n)).collect();
            let bg: Vec<f64> = grads.iter().map(|g| beta[0] * g[0] + beta[1] * g[1]).collect();
            let div = match scheme {
                SchemeKind::Conservative => 0.0,
                SchemeKind::NonConservative => problem.surface_divergence_beta(t, x, n),
            };
            let f = problem.surface_source(t, x);
            sums[1] += wt * w * f;
            sums[2] += wt * w * f.abs();
            for a in 0..nl {
                load[a] += w * f * phi[a];
                for bb in 0..nl {
                    mass[a * nl + bb] += w * phi[a] * phi[bb];
                    conv[a * nl + bb] += w * match scheme {
                        SchemeKind::Conservative => phi[bb] * bg[a],
                        SchemeKind::NonConservative => phi[a] * (bg[bb] + div * phi[bb]),
                    };
                    stiff[a * nl + bb] += w * problem.surface_diffusion * (tg[a][0] * tg[bb][0] + tg[a][1] * tg[bb][1]);
                }
            }
            exchange.push(ExchangePoint { element: cut.element, weight: wt * w, tau, phi: phi.to_vec() });
        }
        let p: Vec<f64> = (0..=k).map(|i| tau.powi(i as i32)).collect();
        let dp: Vec<f64> = (0..=k).map(|i| if i == 0 { 0.0 } else { i as f64 * tau.powi(i as i32 - 1) / dt }).collect();
        for i in 0..=k {
            for j in 0..=k {
                let pp = wt * p[i] * p[j];
                let (c_mass, c_conv) = match scheme {
                    SchemeKind::Conservative => (-wt * dp[i] * p[j], -pp),
                    SchemeKind::NonConservative => (wt * p[i] * dp[j], pp),
                };
                let jump = match scheme {
                    SchemeKind::Conservative if q == last => p[i] * p[j],
                    SchemeKind::NonConservative if q == 0 => p[i] * p[j],
                    _ => 0.0,
                };
                for a in 0..nl {
                    for bb in 0..nl {
                        let s = a * nl + bb;
                        let (rb, rs) = (i * nl + a, nd + i * nl + a);
                        let (cb, cs) = (j * nl + bb, nd + j * nl + bb);
                        mat[rs * n2 + cs] += (c_mass + jump) * mass[s] + c_conv * conv[s] + pp * stiff[s];
                        // linear exchange (b_B u_B − b_S u_S, v_B − v_S)
                        let e = pp * mass[s];
                        mat[rb * n2 + cb] += cm.b_bulk * e;
                        mat[rb * n2 + cs] -= cm.b_surface * e;
                        mat[rs * n2 + cb] -= cm.b_bulk * e;
                        mat[rs * n2 + cs] += cm.b_surface * e;
                    }
                }
            }
            for a in 0..nl {
                rhs[nd + i * nl + a] += wt * p[i] * load[a];
            }
        }
        if q == 0 {
            for (&x, &w) in surf.points.iter().zip(&surf.weights) {
                let b = eval_space_basis(&rect, m, x, 0)?;
                let u = trace.value(mesh, cut.element, x)?;
                sums[0] += w * u;
                for a in 0..nl {
                    rhs[nd + a] += w * u * b.values()[a];
                }
            }
        }
    }
    Ok((mat, rhs, sums, exchange))
}

/// Assembles the linear part, right-hand side and exchange data of one slab.
pub fn assemble_coupled(
    mesh: &BackgroundMesh,
    problem: &CoupledProblem,
    cfg: &CoupledConfig,
    slab_index: usize,
    slab: (f64, f64),
    trace: &CoupledTrace,
) -> Result<CoupledSystem> {
    let rule = SlabTimeRule::lobatto(cfg.n_t, slab)?;
    let geometry = SlabGeometry::compute(mesh, &problem.bulk, &rule.times, cfg.n_s)?;
    let active = ActiveMeshes::from_geometry(&geometry, slab, sweep_check(mesh, &problem.bulk, slab));
    if active.surface.is_empty() {
        return Err(Error::EmptyActiveMesh);
    }
    let space = CoupledSlabSpace {
        bulk: build_dof_map(mesh, &active.bulk, cfg.m, cfg.k, slab)?,
        surface: build_dof_map(mesh, &active.surface, cfg.m, cfg.k, slab)?,
    };
    let n = space.n_dofs();
    let off = space.offset();
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];

    let f_bulk = |t: f64, x: [f64; 2]| problem.bulk_source(t, x);
    let terms = BulkTerms { problem: &problem.bulk, source: &f_bulk };
    let blocks = par::try_map(&geometry.elements, |cut| {
        bulk_element_block(mesh, &space.bulk, cut, &rule, &terms, cfg.scheme, &trace.bulk).map(|b| (cut.element, b))
    })?;
    scatter_blocks(&space.bulk, &blocks, 0, &mut triplets, &mut rhs);
    let mut prev_mass: f64 = blocks.iter().map(|(_, b)| b.prev_mass).sum();
    let mut source: f64 = blocks.iter().map(|(_, b)| b.source).sum();
    let mut source_abs: f64 = blocks.iter().map(|(_, b)| b.source_abs).sum();

    let surface_cuts: Vec<&ElementCut> = active.surface.iter().map(|&e| geometry.get(e).expect("surface-active elements are bulk-active")).collect();
    let sblocks = par::try_map(&surface_cuts, |cut| {
        surface_element_block(mesh, problem, cfg.k, cfg.m, cut, &rule, cfg.scheme, &trace.surface)
    })?;
    let nl = space.bulk.n_local();
    let nd = (cfg.k + 1) * nl;
    let (nb, ns) = (space.bulk.n_space(), space.surface.n_space());
    let mut exchange = Vec::new();
    for (cut, (mat, lrhs, sums, pts)) in surface_cuts.iter().zip(sblocks) {
        let db = space.bulk.element_dofs(cut.element).expect("bulk active");
        let ds = space.surface.element_dofs(cut.element).expect("surface active");
        let g = |r: usize| {
            if r < nd {
                (r / nl) * nb + db[r % nl]
            } else {
                off + ((r - nd) / nl) * ns + ds[(r - nd) % nl]
            }
        };
        for r in 0..2 * nd {
            rhs[g(r)] += lrhs[r];
            for c in 0..2 * nd {
                let v = mat[r * 2 * nd + c];
                if v != 0.0 {
                    triplets.push((g(r), g(c), v));
                }
            }
        }
        prev_mass += sums[0];
        source += sums[1];
        source_abs += sums[2];
        exchange.extend(pts);
    }

    let tmass = time_mass(cfg.k, &rule.taus, &rule.weights);
    let (bfaces, bulk_partition) = bulk_stabilized_faces(mesh, &geometry, &active, &cfg.stab)?;
    let spatial = assemble_spatial_ghost_penalty(mesh, &space.bulk, &bfaces, &cfg.stab, Field::Bulk)?;
    triplets.extend(tensor_with_time(&spatial, &tmass, nb));
    let (sfaces, surface_partition) = surface_stabilized_faces(mesh, &geometry, &active, &cfg.stab)?;
    let spatial = assemble_spatial_ghost_penalty(mesh, &space.surface, &sfaces, &cfg.stab, Field::Surface)?;
    let shifted = |(i, j, v): (usize, usize, f64)| (off + i, off + j, v);
    triplets.extend(tensor_with_time(&spatial, &tmass, ns).into_iter().map(shifted));
    let normal = assemble_normal_derivative(mesh, &space.surface, &geometry, &problem.bulk, &rule.taus, &rule.weights, &cfg.stab)?;
    triplets.extend(normal.into_iter().map(shifted));

    let prev_abs_mass = abs_masses(mesh, &geometry, &active, 0, |e, x| trace.bulk.value(mesh, e, x), |e, x| trace.surface.value(mesh, e, x))?;
    Ok(CoupledSystem {
        slab_index,
        linear: SparseMatrix::from_triplets(n, triplets)?,
        rhs,
        space,
        rule,
        geometry,
        active,
        bulk_partition,
        surface_partition,
        b_mixed: problem.coupling.b_mixed,
        exchange,
        prev_mass,
        prev_abs_mass,
        source,
        source_abs,
    })
}

/// `∫_Ω |u_B| + ∫_Γ |u_S|` at time sample `q`.
fn abs_masses(
    mesh: &BackgroundMesh,
    geometry: &SlabGeometry,
    active: &ActiveMeshes,
    q: usize,
    ub: impl Fn(usize, [f64; 2]) -> Result<f64> + Sync,
    us: impl Fn(usize, [f64; 2]) -> Result<f64> + Sync,
) -> Result<f64> {
    let _ = mesh;
    let parts = par::try_map(&geometry.elements, |cut| -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in cut.volume[q].points.iter().zip(&cut.volume[q].weights) {
            acc += w * ub(cut.element, x)?.abs();
        }
        if active.is_surface(cut.element) {
            for (&x, &w) in cut.surface[q].points.iter().zip(&cut.surface[q].weights) {
                acc += w * us(cut.element, x)?.abs();
            }
        }
        Ok(acc)
    })?;
    Ok(parts.iter().sum())
}

/// Signed and absolute total mass `∫_Ω u_B + ∫_Γ u_S` at sample `q`.
pub fn coupled_mass_at(mesh: &BackgroundMesh, system: &CoupledSystem, coeffs: &[f64], q: usize) -> Result<(f64, f64)> {
    let off = system.space.offset();
    let t = system.rule.times[q];
    let fb = SpatialField::at_time(&system.space.bulk, &coeffs[..off], t)?;
    let fs = SpatialField::at_time(&system.space.surface, &coeffs[off..], t)?;
    let parts = par::try_map(&system.geometry.elements, |cut| -> Result<(f64, f64)> {
        let (mut s, mut a) = (0.0, 0.0);
        for (&x, &w) in cut.volume[q].points.iter().zip(&cut.volume[q].weights) {
            let u = fb.value(mesh, cut.element, x)?;
            s += w * u;
            a += w * u.abs();
        }
        if system.active.is_surface(cut.element) {
            for (&x, &w) in cut.surface[q].points.iter().zip(&cut.surface[q].weights) {
                let u = fs.value(mesh, cut.element, x)?;
                s += w * u;
                a += w * u.abs();
            }
        }
        Ok((s, a))
    })?;
    Ok(parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1)))
}

/// Constant-in-time extension of the previous traces as a Newton start.
fn initial_guess(mesh: &BackgroundMesh, space: &CoupledSlabSpace, trace: &CoupledTrace) -> Vec<f64> {
    let mut x = vec![0.0; space.n_dofs()];
    let nodal = |s: &SlabSpace, tr: &Trace, out: &mut [f64]| {
        for (l, o) in out.iter_mut().enumerate().take(s.n_space()) {
            let p = s.node_coords(l);
            let e = mesh.locate(p).unwrap_or(0);
            *o = tr.value(mesh, e, p).unwrap_or(0.0);
        }
    };
    let off = space.offset();
    nodal(&space.bulk, &trace.bulk, &mut x[..off]);
    nodal(&space.surface, &trace.surface, &mut x[off..]);
    x
}

/// Solves one slab by Newton's method.
pub fn solve_coupled(mesh: &BackgroundMesh, system: &CoupledSystem, trace: &CoupledTrace, cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    let x0 = initial_guess(mesh, &system.space, trace);
    let rhs_norm = norm2(&system.rhs);
    let linear_lu = if system.b_mixed == 0.0 { Some(Factorization::new(&system.linear)?) } else { None };
    let tag = |e: Error| match e {
        Error::Singular { slab: None, reason } => Error::Singular { slab: Some(system.slab_index), reason },
        other => other,
    };
    newton_solve(
        |c| Ok(system.residual(c)),
        |c, r| {
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            match &linear_lu {
                Some(lu) => lu.solve(&neg),
                None => {
                    let j = system.jacobian(c)?;
                    let d = Factorization::new(&j)?.solve(&neg)?;
                    let res = relative_residual(&j, &d, &neg);
                    if !(res <= crate::linalg::SOLVE_TOL) {
                        return Err(Error::SolveResidual { residual: res });
                    }
                    Ok(d)
                }
            }
        },
        x0,
        rhs_norm,
        cfg,
    )
    .map_err(tag)
}

/// Solution of one coupled slab.
#[derive(Clone, Debug)]
pub struct CoupledSolution {
    pub space: CoupledSlabSpace,
    pub coeffs: Vec<f64>,
}

impl CoupledSolution {
    pub fn bulk_coeffs(&self) -> &[f64] {
        &self.coeffs[..self.space.offset()]
    }

    pub fn surface_coeffs(&self) -> &[f64] {
        &self.coeffs[self.space.offset()..]
    }
}

#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub mesh: BackgroundMesh,
    pub report: RunReport,
    pub final_solution: CoupledSolution,
}

/// Runs the coupled problem from `t = 0` to `cfg.final_time`.
pub fn run_coupled(problem: &CoupledProblem, cfg: &CoupledConfig) -> Result<CoupledRun> {
    cfg.validate()?;
    let mesh = BackgroundMesh::covering(problem.bulk.bbox, cfg.h)?;
    let dt = cfg.dt.resolve(cfg.h);
    let ends = crate::schemes_bulk::time_grid(cfg.final_time, dt)?;
    let ub0 = |x: [f64; 2]| problem.exact_bulk(0.0, x);
    let us0 = |x: [f64; 2]| problem.exact_surface(0.0, x);
    let exact_b = |t: f64, x: [f64; 2]| problem.exact_bulk(t, x);
    let exact_s = |t: f64, x: [f64; 2]| problem.exact_surface(t, x);
    let mut report = RunReport { h: cfg.h, dt, ..Default::default() };
    let mut tracker: Option<ConservationTracker> = None;
    let mut prev: Option<CoupledSolution> = None;
    let mut t0 = 0.0;
    for (n, &t1) in ends.iter().enumerate() {
        let slab_no = n + 1;
        let (system, outcome) = {
            let trace = match &prev {
                None => CoupledTrace { bulk: Trace::Analytic(&ub0), surface: Trace::Analytic(&us0) },
                Some(s) => CoupledTrace {
                    bulk: Trace::Discrete(SpatialField::at_time(&s.space.bulk, s.bulk_coeffs(), t0)?),
                    surface: Trace::Discrete(SpatialField::at_time(&s.space.surface, s.surface_coeffs(), t0)?),
                },
            };
            let system = assemble_coupled(&mesh, problem, cfg, slab_no, (t0, t1), &trace)?;
            let outcome = solve_coupled(&mesh, &system, &trace, &cfg.newton)?;
            (system, outcome)
        };
        let sol = CoupledSolution { space: system.space.clone(), coeffs: outcome.x };
        let (mass, abs_mass) = coupled_mass_at(&mesh, &system, &sol.coeffs, system.rule.len() - 1)?;
        let tr = tracker.get_or_insert_with(|| ConservationTracker::new(system.prev_mass, system.prev_abs_mass));
        let e_c = tr.push(mass, abs_mass, system.source, system.source_abs);
        let cond = if cfg.compute_cond { Some(condition_number_2(&system.jacobian(&sol.coeffs)?)?) } else { None };
        let (bulk_inc, surf_inc) = if cfg.measure_errors {
            let geo = |t: f64| problem.bulk.frozen(t);
            (
                diagnostics::l2l2_increment(&mesh, &sol.space.bulk, sol.bulk_coeffs(), cfg.n_t, cfg.n_s, Domain::Bulk, geo, &exact_b)?,
                Some(diagnostics::l2l2_increment(&mesh, &sol.space.surface, sol.surface_coeffs(), cfg.n_t, cfg.n_s, Domain::Surface, geo, &exact_s)?),
            )
        } else {
            (0.0, None)
        };
        log::debug!("coupled slab {slab_no}: {} Newton iterations, residuals {:?}", outcome.iterations, outcome.residuals);
        report.records.push(SlabRecord {
            slab: slab_no,
            t: t1,
            dt: t1 - t0,
            l2l2_increment: bulk_inc,
            l2_error: None,
            surface_l2l2_increment: surf_inc,
            e_c,
            identity_residual: (mass - system.prev_mass - system.source).abs(),
            mass_scale: abs_mass.max(system.prev_abs_mass).max(system.source_abs),
            nnz: system.linear.nnz(),
            n_dofs: system.space.n_dofs(),
            cond,
            newton_iters: Some(outcome.iterations),
            newton_residuals: outcome.residuals,
        });
        report.final_mass = mass;
        prev = Some(sol);
        t0 = t1;
    }
    let tr = tracker.expect("at least one slab");
    report.initial_mass = tr.initial_mass;
    report.source_total = tr.source_total;
    report.mass_scale = tr.scale;
    let last = prev.expect("at least one slab");
    if cfg.measure_errors {
        let ls = problem.bulk.frozen(cfg.final_time);
        let t = cfg.final_time;
        report.final_l2_error = diagnostics::l2_error_final(&mesh, &last.space.bulk, last.bulk_coeffs(), t, &ls, cfg.n_s, Domain::Bulk, &exact_b)?;
        report.surface_final_l2_error =
            Some(diagnostics::l2_error_final(&mesh, &last.space.surface, last.surface_coeffs(), t, &ls, cfg.n_s, Domain::Surface, &exact_s)?);
        report.l2l2_error = diagnostics::l2l2_error(report.records.iter().map(|r| r.l2l2_increment));
        report.surface_l2l2_error = Some(diagnostics::l2l2_error(report.records.iter().filter_map(|r| r.surface_l2l2_increment)));
    }
    Ok(CoupledRun { mesh, report, final_solution: last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{CouplingModel, LevelSetProblem};

    #[test]
    fn scalar_newton_converges_quadratically() {
        let out = newton_solve(
            |x| Ok(vec![x[0] + x[0] * x[0] - 2.0]),
            |x, r| Ok(vec![-r[0] / (1.0 + 2.0 * x[0])]),
            vec![1.0],
            2.0,
            &NewtonConfig::default(),
        );
        // x + x² − 2 has the root 1 at the start point
        let out = out.unwrap();
        assert_eq!(out.iterations, 0);
        let out = newton_solve(
            |x| Ok(vec![x[0] * x[0] + 2.0 * x[0] - 2.0]),
            |x, r| Ok(vec![-r[0] / (2.0 * x[0] + 2.0)]),
            vec![1.0],
            2.0,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!((out.x[0] - (3f64.sqrt() - 1.0)).abs() < 1e-12);
        let r = &out.residuals;
        let j = r.iter().position(|&v| v < 1e-3).unwrap();
        assert!(r[j + 1] <= 10.0 * r[j] * r[j], "{r:?}");
    }

    #[test]
    fn newton_reports_non_convergence() {
        let cfg = NewtonConfig { max_iter: 3, ..NewtonConfig::default() };
        let out = newton_solve(|x| Ok(vec![x[0].atan()]), |x, r| Ok(vec![-r[0] * (1.0 + x[0] * x[0])]), vec![10.0], 0.0, &cfg);
        assert!(out.is_err());
    }

    #[test]
    fn tangential_gradient_examples() {
        assert_eq!(tangential_gradient([1.0, 1.0], [1.0, 0.0]), [0.0, 1.0]);
        assert_eq!(tangential_gradient([2.0, 0.0], [1.0, 0.0]), [0.0, 0.0]);
        assert_eq!(tangential_gradient([0.0, 3.0], [1.0, 0.0]), [0.0, 3.0]);
    }

    fn small_cfg(scheme: SchemeKind) -> CoupledConfig {
        let mut cfg = CoupledConfig::with_defaults(1, 1, 0.1, 0.05, scheme, Mode::Macro);
        cfg.measure_errors = false;
        cfg
    }

    #[test]
    fn henry_model_needs_one_newton_step() {
        let mut p = CoupledProblem::surfactant();
        p.coupling = CouplingModel::henry(1.0, 1.0);
        let run = run_coupled(&p, &small_cfg(SchemeKind::Conservative)).unwrap();
        for r in &run.report.records {
            assert!(r.newton_iters.unwrap() <= 1, "{:?}", r.newton_residuals);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let mut p = CoupledProblem::surfactant();
        p.bulk.solution = crate::levelset::BulkSolution::Constant(0.0);
        p.bulk = LevelSetProblem { diffusion: 0.01, ..p.bulk };
        let cfg = small_cfg(SchemeKind::Conservative);
        let run = run_coupled(&p, &cfg);
        // constant bulk data has no closed-form gradient-free surface field issue: u_S = 0
        let run = run.unwrap();
        assert!(run.final_solution.coeffs.iter().all(|v| v.abs() < 1e-14));
        assert!(run.report.records.iter().all(|r| r.newton_iters == Some(0)));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = CoupledProblem::surfactant();
        let cfg = small_cfg(SchemeKind::Conservative);
        let mesh = BackgroundMesh::covering(p.bulk.bbox, cfg.h).unwrap();
        let ub0 = |x: [f64; 2]| p.exact_bulk(0.0, x);
        let us0 = |x: [f64; 2]| p.exact_surface(0.0, x);
        let trace = CoupledTrace { bulk: Trace::Analytic(&ub0), surface: Trace::Analytic(&us0) };
        let sys = assemble_coupled(&mesh, &p, &cfg, 1, (0.0, 0.025), &trace).unwrap();
        let n = sys.space.n_dofs();
        let mut s = 7u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let c: Vec<f64> = (0..n).map(|_| 1.0 + rnd()).collect();
        let d: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let jd = sys.jacobian(&c).unwrap().matvec(&d);
        let eps = 1e-6;
        let plus: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
        let (rp, rm) = (sys.residual(&plus), sys.residual(&minus));
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let err = norm2(&fd.iter().zip(&jd).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err <= 1e-5 * norm2(&jd), "{err} vs {}", norm2(&jd));
    }

    #[test]
    fn coupled_mass_balance_per_slab() {
        let p = CoupledProblem::surfactant();
        let run = run_coupled(&p, &small_cfg(SchemeKind::Conservative)).unwrap();
        for r in &run.report.records {
            assert!(r.identity_residual <= 1e-12 * r.mass_scale, "{} vs {}", r.identity_residual, r.mass_scale);
            assert!(r.newton_iters.unwrap() <= 6);
        }
    }
}
