//! Slab-by-slab solution of the bulk convection-diffusion problem.
//!
//! The conservative scheme moves the transport terms onto the test function
//! (Reynolds transport form), so testing with `v ≡ 1` yields a discrete
//! mass balance. The non-conservative scheme keeps the strong-form terms and
//! an upwind mass at `t_{n−1}`.

use crate::diagnostics::{self, ConservationTracker, Domain, RunReport, SlabRecord};
use crate::error::{Error, Result};
use crate::fespace::{build_dof_map, eval_space_basis, SlabSpace, SpatialField};
use crate::implicit_quadrature::LevelSet;
use crate::levelset::{sweep_check, ActiveMeshes, ElementCut, LevelSetProblem, SlabGeometry};
use crate::linalg::{condition_number_2, solve_direct, SparseMatrix};
use crate::mesh::BackgroundMesh;
use crate::par;
use crate::quadrature1d::gauss_lobatto;
use crate::stabilization::{
    assemble_spatial_ghost_penalty, bulk_stabilized_faces, tensor_with_time, time_mass, Field, MacroPartition, StabilizationConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    Conservative,
    NonConservative,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Conservative => "conservative",
            SchemeKind::NonConservative => "nonconservative",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conservative" => Ok(Self::Conservative),
            "nonconservative" | "non-conservative" => Ok(Self::NonConservative),
            _ => Err(Error::Config(format!("unknown scheme `{s}`"))),
        }
    }
}

/// Lobatto points per slab for equal space and time orders.
pub fn default_time_points(m: usize, k: usize) -> usize {
    match m.max(k) {
        0 | 1 => 3,
        2 => 5,
        _ => 9,
    }
}

/// Time step as a multiple of `h` or as a fixed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    RatioToH(f64),
    Fixed(f64),
}

impl DtRule {
    pub fn resolve(self, h: f64) -> f64 {
        match self {
            DtRule::RatioToH(r) => r * h,
            DtRule::Fixed(dt) => dt,
        }
    }
}

/// Slab end times `t_1 < … < t_N = T`; the last slab is shortened when
/// `T/Δt` is not integral.
pub fn time_grid(final_time: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(final_time > 0.0) {
        return Err(Error::Config(format!("need positive T and dt, got T = {final_time}, dt = {dt}")));
    }
    let n = ((final_time / dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((1..=n).map(|i| if i == n { final_time } else { i as f64 * dt }).collect())
}

/// Lobatto rule mapped onto a slab, with reference times `τ_q ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabTimeRule {
    pub slab: (f64, f64),
    pub times: Vec<f64>,
    /// Weights in physical time.
    pub weights: Vec<f64>,
    pub taus: Vec<f64>,
}

impl SlabTimeRule {
    pub fn lobatto(n_t: usize, slab: (f64, f64)) -> Result<Self> {
        let rule = gauss_lobatto(n_t)?.map_to_interval(slab.0, slab.1)?;
        let dt = slab.1 - slab.0;
        let taus = rule.nodes.iter().map(|t| (t - slab.0) / dt).collect();
        Ok(Self { slab, times: rule.nodes, weights: rule.weights, taus })
    }

    pub fn dt(&self) -> f64 {
        self.slab.1 - self.slab.0
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Data tested against `v` at `t_{n−1}`: the initial value or the previous slab's trace.
pub enum Trace<'a> {
    Analytic(&'a (dyn Fn([f64; 2]) -> f64 + Sync)),
    Discrete(SpatialField<'a>),
}

impl Trace<'_> {
    pub fn value(&self, mesh: &BackgroundMesh, e: usize, x: [f64; 2]) -> Result<f64> {
        match self {
            Trace::Analytic(f) => Ok(f(x)),
            Trace::Discrete(field) => field.value(mesh, e, x),
        }
    }
}

/// Coefficients of the bulk equation on one slab.
pub struct BulkTerms<'a> {
    pub problem: &'a LevelSetProblem,
    pub source: &'a (dyn Fn(f64, [f64; 2]) -> f64 + Sync),
}

/// Dense element block over local indices `i * n_local + a`.
pub(crate) struct ElementBlock {
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
    pub prev_mass: f64,
    pub source: f64,
    pub source_abs: f64,
}

/// Element contribution of `A` and `L` for one scheme.
pub(crate) fn bulk_element_block(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    cut: &ElementCut,
    rule: &SlabTimeRule,
    terms: &BulkTerms,
    scheme: SchemeKind,
    trace: &Trace,
) -> Result<ElementBlock> {
    let (m, k) = (space.m, space.k);
    let nl = space.n_local();
    let nd = (k + 1) * nl;
    let rect = mesh.element_rect(cut.element);
    let dt = rule.dt();
    let d = terms.problem.diffusion;
    let last = rule.len() - 1;
    let mut blk = ElementBlock { matrix: vec![0.0; nd * nd], rhs: vec![0.0; nd], prev_mass: 0.0, source: 0.0, source_abs: 0.0 };
    let (mut mass, mut conv, mut stiff, mut load) = (vec![0.0; nl * nl], vec![0.0; nl * nl], vec![0.0; nl * nl], vec![0.0; nl]);
    let mut bg = vec![0.0; nl];
    for q in 0..rule.len() {
        let vol = &cut.volume[q];
        if vol.is_empty() {
            continue;
        }
        let t = rule.times[q];
        mass.fill(0.0);
        conv.fill(0.0);
        stiff.fill(0.0);
        load.fill(0.0);
        let (mut src, mut src_abs) = (0.0, 0.0);
        for (&x, &w) in vol.points.iter().zip(&vol.weights) {
            let b = eval_space_basis(&rect, m, x, 1)?;
            let phi = b.values();
            let beta = terms.problem.beta(t, x);
            let grads: Vec<[f64; 2]> = (0..nl).map(|a| b.gradient(a)).collect();
            for a in 0..nl {
                bg[a] = beta[0] * grads[a][0] + beta[1] * grads[a][1];
            }
            let f = (terms.source)(t, x);
            src += w * f;
            src_abs += w * f.abs();
            for a in 0..nl {
                load[a] += w * f * phi[a];
                for bb in 0..nl {
                    mass[a * nl + bb] += w * phi[a] * phi[bb];
                    // row = test a, column = trial bb
                    conv[a * nl + bb] += w * match scheme {
                        SchemeKind::Conservative => phi[bb] * bg[a],
                        SchemeKind::NonConservative => phi[a] * bg[bb],
                    };
                    stiff[a * nl + bb] += w * d * (grads[a][0] * grads[bb][0] + grads[a][1] * grads[bb][1]);
                }
            }
        }
        let wt = rule.weights[q];
        let tau = rule.taus[q];
        let p: Vec<f64> = (0..=k).map(|i| tau.powi(i as i32)).collect();
        let dp: Vec<f64> = (0..=k).map(|i| if i == 0 { 0.0 } else { i as f64 * tau.powi(i as i32 - 1) / dt }).collect();
        for i in 0..=k {
            for j in 0..=k {
                let pp = wt * p[i] * p[j];
                let (c_mass, c_conv) = match scheme {
                    SchemeKind::Conservative => (-wt * dp[i] * p[j], -pp),
                    SchemeKind::NonConservative => (wt * p[i] * dp[j], pp),
                };
                // end-time mass (conservative) or upwind mass (non-conservative)
                let jump = match scheme {
                    SchemeKind::Conservative if q == last => p[i] * p[j],
                    SchemeKind::NonConservative if q == 0 => p[i] * p[j],
                    _ => 0.0,
                };
                for a in 0..nl {
                    let row = (i * nl + a) * nd + j * nl;
                    for bb in 0..nl {
                        let s = a * nl + bb;
                        blk.matrix[row + bb] += (c_mass + jump) * mass[s] + c_conv * conv[s] + pp * stiff[s];
                    }
                }
            }
            for a in 0..nl {
                blk.rhs[i * nl + a] += wt * p[i] * load[a];
            }
        }
        blk.source += wt * src;
        blk.source_abs += wt * src_abs;
        if q == 0 {
            // τ = 0: only the i = 0 test functions see the trace
            for (&x, &w) in vol.points.iter().zip(&vol.weights) {
                let b = eval_space_basis(&rect, m, x, 0)?;
                let u = trace.value(mesh, cut.element, x)?;
                blk.prev_mass += w * u;
                for a in 0..nl {
                    blk.rhs[a] += w * u * b.values()[a];
                }
            }
        }
    }
    Ok(blk)
}

/// Scatters element blocks into global triplets and a right-hand side.
pub(crate) fn scatter_blocks(
    space: &SlabSpace,
    blocks: &[(usize, ElementBlock)],
    offset: usize,
    triplets: &mut Vec<(usize, usize, f64)>,
    rhs: &mut [f64],
) {
    let nl = space.n_local();
    let n = space.n_space();
    let nd = (space.k + 1) * nl;
    for (e, blk) in blocks {
        let dofs = space.element_dofs(*e).expect("active element");
        let g = |r: usize| offset + (r / nl) * n + dofs[r % nl];
        for r in 0..nd {
            rhs[g(r)] += blk.rhs[r];
            for c in 0..nd {
                let v = blk.matrix[r * nd + c];
                if v != 0.0 {
                    triplets.push((g(r), g(c), v));
                }
            }
        }
    }
}

/// Assembled slab problem `(A + S) u = L`.
#[derive(Clone, Debug)]
pub struct SlabSystem {
    pub slab_index: usize,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub space: SlabSpace,
    pub rule: SlabTimeRule,
    pub n_s: usize,
    pub geometry: SlabGeometry,
    pub active: ActiveMeshes,
    pub partition: Option<MacroPartition>,
    pub stabilized_faces: Vec<usize>,
    /// `∫_{Ω(t_{n−1})} u_h(t_{n−1}⁻)` with the scheme's rule.
    pub prev_mass: f64,
    pub prev_abs_mass: f64,
    /// `Σ_q ω_q ∫_{Ω(t_q)} f`.
    pub source: f64,
    pub source_abs: f64,
}

/// Solution coefficients of one slab.
#[derive(Clone, Debug)]
pub struct SlabSolution {
    pub space: SlabSpace,
    pub coeffs: Vec<f64>,
}

impl SlabSolution {
    /// `u_h(t_n⁻, ·)`.
    pub fn trace(&self) -> Result<SpatialField<'_>> {
        SpatialField::at_time(&self.space, &self.coeffs, self.space.slab.1)
    }
}

/// Discretization parameters of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkConfig {
    pub m: usize,
    pub k: usize,
    pub n_t: usize,
    pub n_s: usize,
    pub h: f64,
    pub dt: DtRule,
    pub final_time: f64,
    pub scheme: SchemeKind,
    pub stab: StabilizationConfig,
    pub compute_cond: bool,
    pub measure_errors: bool,
    /// Also measure the L² error at every slab end.
    pub slab_errors: bool,
}

impl BulkConfig {
    /// Defaults: `N_t` by order, `N_s = m + 2`, `Δt = h/3`, macro patch stabilization.
    pub fn new(m: usize, k: usize, h: f64, final_time: f64) -> Self {
        Self {
            m,
            k,
            n_t: default_time_points(m, k),
            n_s: m + 2,
            h,
            dt: DtRule::RatioToH(1.0 / 3.0),
            final_time,
            scheme: SchemeKind::Conservative,
            stab: StabilizationConfig::default(),
            compute_cond: false,
            measure_errors: true,
            slab_errors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > crate::fespace::MAX_ORDER {
            return Err(Error::Config(format!("m must lie in 1..={}, got {}", crate::fespace::MAX_ORDER, self.m)));
        }
        if self.n_t < 2 {
            return Err(Error::Config(format!("N_t must be at least 2, got {}", self.n_t)));
        }
        if !(self.h > 0.0) || !(self.final_time > 0.0) || !(self.dt.resolve(self.h) > 0.0) {
            return Err(Error::Config("h, T and dt must be positive".into()));
        }
        self.stab.validate()
    }
}

fn tag_slab(e: Error, n: usize) -> Error {
    match e {
        Error::Singular { slab: None, reason } => Error::Singular { slab: Some(n), reason },
        other => other,
    }
}

/// Assembles one slab of the bulk problem.
#[allow(clippy::too_many_arguments)]
pub fn assemble_slab(
    mesh: &BackgroundMesh,
    terms: &BulkTerms,
    cfg: &BulkConfig,
    slab_index: usize,
    slab: (f64, f64),
    trace: &Trace,
) -> Result<SlabSystem> {
    let rule = SlabTimeRule::lobatto(cfg.n_t, slab)?;
    let geometry = SlabGeometry::compute(mesh, terms.problem, &rule.times, cfg.n_s)?;
    let active = ActiveMeshes::from_geometry(&geometry, slab, sweep_check(mesh, terms.problem, slab));
    let space = build_dof_map(mesh, &active.bulk, cfg.m, cfg.k, slab)?;
    let blocks = par::try_map(&geometry.elements, |cut| {
        bulk_element_block(mesh, &space, cut, &rule, terms, cfg.scheme, trace).map(|b| (cut.element, b))
    })?;
    let n = space.n_dofs();
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    scatter_blocks(&space, &blocks, 0, &mut triplets, &mut rhs);
    let (faces, partition) = bulk_stabilized_faces(mesh, &geometry, &active, &cfg.stab)?;
    let spatial = assemble_spatial_ghost_penalty(mesh, &space, &faces, &cfg.stab, Field::Bulk)?;
    triplets.extend(tensor_with_time(&spatial, &time_mass(cfg.k, &rule.taus, &rule.weights), space.n_space()));
    let matrix = SparseMatrix::from_triplets(n, triplets)?;
    let sum = |f: fn(&ElementBlock) -> f64| blocks.iter().map(|(_, b)| f(b)).sum::<f64>();
    let prev_abs_mass = abs_mass_at(&geometry, 0, |e, x| trace.value(mesh, e, x))?;
    Ok(SlabSystem {
        slab_index,
        prev_mass: sum(|b| b.prev_mass),
        prev_abs_mass,
        source: sum(|b| b.source),
        source_abs: sum(|b| b.source_abs),
        matrix,
        rhs,
        space,
        rule,
        n_s: cfg.n_s,
        geometry,
        active,
        partition,
        stabilized_faces: faces,
    })
}

fn abs_mass_at(geometry: &SlabGeometry, q: usize, u: impl Fn(usize, [f64; 2]) -> Result<f64> + Sync) -> Result<f64> {
    let parts = par::try_map(&geometry.elements, |cut| -> Result<f64> {
        let r = &cut.volume[q];
        let mut acc = 0.0;
        for (&x, &w) in r.points.iter().zip(&r.weights) {
            acc += w * u(cut.element, x)?.abs();
        }
        Ok(acc)
    })?;
    Ok(parts.iter().sum())
}

/// `(∫ u_h, ∫ |u_h|)` over `Ω(t_q)` with the slab's own rules.
pub fn mass_at(mesh: &BackgroundMesh, system: &SlabSystem, coeffs: &[f64], q: usize) -> Result<(f64, f64)> {
    let field = SpatialField::at_time(&system.space, coeffs, system.rule.times[q])?;
    let parts = par::try_map(&system.geometry.elements, |cut| -> Result<(f64, f64)> {
        let r = &cut.volume[q];
        let (mut s, mut a) = (0.0, 0.0);
        for (&x, &w) in r.points.iter().zip(&r.weights) {
            let u = field.value(mesh, cut.element, x)?;
            s += w * u;
            a += w * u.abs();
        }
        Ok((s, a))
    })?;
    Ok(parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1)))
}

/// Direct solve of the slab system.
pub fn advance_slab(system: &SlabSystem) -> Result<SlabSolution> {
    if system.rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slab right-hand side"));
    }
    let coeffs = solve_direct(&system.matrix, &system.rhs).map_err(|e| tag_slab(e, system.slab_index))?;
    Ok(SlabSolution { space: system.space.clone(), coeffs })
}

/// Result of a bulk simulation.
#[derive(Clone, Debug)]
pub struct BulkRun {
    pub mesh: BackgroundMesh,
    pub report: RunReport,
    pub final_solution: SlabSolution,
}

/// Runs the bulk problem from `t = 0` to `cfg.final_time`.
pub fn run_simulation(problem: &LevelSetProblem, cfg: &BulkConfig) -> Result<BulkRun> {
    cfg.validate()?;
    let mesh = BackgroundMesh::covering(problem.bbox, cfg.h)?;
    let dt = cfg.dt.resolve(cfg.h);
    let ends = time_grid(cfg.final_time, dt)?;
    let source = |t: f64, x: [f64; 2]| problem.source(t, x);
    let initial = |x: [f64; 2]| problem.initial(x);
    let terms = BulkTerms { problem, source: &source };
    let exact = |t: f64, x: [f64; 2]| problem.exact(t, x);
    let mut report = RunReport { h: cfg.h, dt, ..Default::default() };
    let mut tracker: Option<ConservationTracker> = None;
    let mut prev: Option<SlabSolution> = None;
    let mut t0 = 0.0;
    for (n, &t1) in ends.iter().enumerate() {
        let slab_no = n + 1;
        let system = {
            let trace = match &prev {
                None => Trace::Analytic(&initial),
                Some(s) => Trace::Discrete(s.trace()?),
            };
            assemble_slab(&mesh, &terms, cfg, slab_no, (t0, t1), &trace)?
        };
        let sol = advance_slab(&system)?;
        let (mass, abs_mass) = mass_at(&mesh, &system, &sol.coeffs, system.rule.len() - 1)?;
        let tr = tracker.get_or_insert_with(|| ConservationTracker::new(system.prev_mass, system.prev_abs_mass));
        let e_c = tr.push(mass, abs_mass, system.source, system.source_abs);
        let identity_residual = (mass - system.prev_mass - system.source).abs();
        let cond = if cfg.compute_cond { Some(condition_number_2(&system.matrix).map_err(|e| tag_slab(e, slab_no))?) } else { None };
        let l2l2_increment = if cfg.measure_errors {
            diagnostics::l2l2_increment(&mesh, &sol.space, &sol.coeffs, cfg.n_t, cfg.n_s, Domain::Bulk, |t| problem.frozen(t), &exact)?
        } else {
            0.0
        };
        let l2_error = if cfg.slab_errors {
            let ls = problem.frozen(t1);
            Some(diagnostics::l2_error_final(&mesh, &sol.space, &sol.coeffs, t1, &ls, cfg.n_s, Domain::Bulk, &exact)?)
        } else {
            None
        };
        log::debug!("slab {slab_no} [{t0:.5}, {t1:.5}]: dofs {} nnz {} e_c {e_c:.3e}", system.space.n_dofs(), system.matrix.nnz());
        report.records.push(SlabRecord {
            slab: slab_no,
            t: t1,
            dt: t1 - t0,
            l2l2_increment,
            l2_error,
            e_c,
            identity_residual,
            mass_scale: abs_mass.max(system.prev_abs_mass).max(system.source_abs),
            nnz: system.matrix.nnz(),
            n_dofs: system.space.n_dofs(),
            cond,
            ..Default::default()
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
        let ls = problem.frozen(cfg.final_time);
        report.final_l2_error = diagnostics::l2_error_final(&mesh, &last.space, &last.coeffs, cfg.final_time, &ls, cfg.n_s, Domain::Bulk, &exact)?;
        report.l2l2_error = diagnostics::l2l2_error(report.records.iter().map(|r| r.l2l2_increment));
    }
    Ok(BulkRun { mesh, report, final_solution: last })
}

/// Spatial mass matrix `(φ_b, φ_a)_{Ω}` on the slab's active elements for a frozen geometry.
pub fn spatial_mass_matrix(mesh: &BackgroundMesh, space: &SlabSpace, ls: &dyn LevelSet, n_s: usize) -> Result<SparseMatrix> {
    let nl = space.n_local();
    let locals = par::try_map(&space.elements, |&e| -> Result<Vec<(usize, usize, f64)>> {
        let rect = mesh.element_rect(e);
        let rule = crate::implicit_quadrature::cut_volume_rule(ls, &rect, n_s)?;
        let dofs = space.element_dofs(e).expect("active");
        let mut loc = vec![0.0; nl * nl];
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let b = eval_space_basis(&rect, space.m, x, 0)?;
            for a in 0..nl {
                for c in 0..nl {
                    loc[a * nl + c] += w * b.values()[a] * b.values()[c];
                }
            }
        }
        Ok((0..nl * nl).filter(|&i| loc[i] != 0.0).map(|i| (dofs[i / nl], dofs[i % nl], loc[i])).collect())
    })?;
    SparseMatrix::from_triplets(space.n_space(), locals.into_iter().flatten().collect())
}
