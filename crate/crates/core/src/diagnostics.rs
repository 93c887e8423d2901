//! Error norms, conservation bookkeeping and convergence orders.
//!
//! Errors are measured with cut rules two nodes finer than the assembly
//! rules, and both norms are reported as square roots.

use crate::error::{Error, Result};
use crate::fespace::{SlabSpace, SpatialField};
use crate::implicit_quadrature::{classify_cell, cut_surface_rule, cut_volume_rule, CellSign, CutQuadRule, LevelSet};
use crate::mesh::BackgroundMesh;
use crate::par;
use crate::quadrature1d::gauss_lobatto;

/// Nodes added per axis (and in time) for error measurement.
pub const OVERSAMPLE: usize = 2;

/// Integration domain of an error norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Bulk,
    Surface,
}

/// Per-slab measurements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlabRecord {
    pub slab: usize,
    /// End time `t_n`.
    pub t: f64,
    pub dt: f64,
    /// `∫_{I_n} ‖u − u_h‖²_{L²(Ω(t))} dt`.
    pub l2l2_increment: f64,
    /// `‖u(t_n) − u_h(t_n)‖_{L²(Ω(t_n))}` when tracked per slab.
    pub l2_error: Option<f64>,
    /// Surface counterpart, for coupled runs.
    pub surface_l2l2_increment: Option<f64>,
    /// Running conservation error `e_c(t_n)`.
    pub e_c: f64,
    /// `|M(t_n) − M(t_{n−1}⁻) − Σ_q ω_q ∫ f|` with the scheme's own rules.
    pub identity_residual: f64,
    /// `‖u_h(t_n)‖_{L¹}` plus surface mass where present.
    pub mass_scale: f64,
    pub nnz: usize,
    pub n_dofs: usize,
    pub cond: Option<f64>,
    pub newton_iters: Option<usize>,
    /// Newton residual history of the slab.
    pub newton_residuals: Vec<f64>,
}

/// Outcome of one simulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub h: f64,
    pub dt: f64,
    pub records: Vec<SlabRecord>,
    /// `‖u − u_h‖_{L²(Ω(T))}`.
    pub final_l2_error: f64,
    /// `‖u − u_h‖_{L²(0,T; L²(Ω(t)))}`.
    pub l2l2_error: f64,
    pub surface_final_l2_error: Option<f64>,
    pub surface_l2l2_error: Option<f64>,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// `Σ_n Σ_q ω_q ∫ f` (plus surface sources).
    pub source_total: f64,
    /// Largest magnitude entering the mass balance.
    pub mass_scale: f64,
}

impl RunReport {
    pub fn e_c_final(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.e_c)
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.records.iter().map(|r| r.identity_residual).fold(0.0, f64::max)
    }

    /// Largest per-slab identity residual relative to that slab's mass scale.
    pub fn max_relative_identity_residual(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.identity_residual / r.mass_scale.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Tracks `e_c(t) = M(t) − M(0) − ∫∫ f`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConservationTracker {
    pub initial_mass: f64,
    pub source_total: f64,
    pub source_abs_total: f64,
    pub scale: f64,
}

impl ConservationTracker {
    pub fn new(initial_mass: f64, initial_abs_mass: f64) -> Self {
        Self { initial_mass, source_total: 0.0, source_abs_total: 0.0, scale: initial_abs_mass }
    }

    /// Adds one slab and returns the running `e_c`.
    pub fn push(&mut self, mass: f64, abs_mass: f64, source: f64, abs_source: f64) -> f64 {
        self.source_total += source;
        self.source_abs_total += abs_source;
        self.scale = self.scale.max(abs_mass).max(self.source_abs_total);
        (mass - self.initial_mass - self.source_total).abs()
    }
}

/// Background elements that may meet the domain while the slab's space lives:
/// the active elements and their face neighbours.
pub fn candidate_elements(mesh: &BackgroundMesh, space: &SlabSpace) -> Vec<usize> {
    let mut out: Vec<usize> = space.elements.iter().flat_map(|&e| std::iter::once(e).chain(mesh.neighbors(e).map(|(n, _)| n))).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Cut rules on the candidate elements at one frozen geometry.
pub fn rules_at(
    mesh: &BackgroundMesh,
    elements: &[usize],
    ls: &dyn LevelSet,
    n_s: usize,
    domain: Domain,
) -> Result<Vec<(usize, CutQuadRule)>> {
    let rules = par::try_map(elements, |&e| -> Result<Option<(usize, CutQuadRule)>> {
        let rect = mesh.element_rect(e);
        let sign = classify_cell(ls, &rect);
        let rule = match (domain, sign) {
            (_, CellSign::Outside) | (Domain::Surface, CellSign::Inside) => return Ok(None),
            (Domain::Bulk, _) => cut_volume_rule(ls, &rect, n_s)?,
            (Domain::Surface, _) => cut_surface_rule(ls, &rect, n_s)?,
        };
        Ok((!rule.is_empty()).then_some((e, rule)))
    })?;
    Ok(rules.into_iter().flatten().collect())
}

/// `∫ |u − u_h|²` over the domain (or interface) frozen at `t`.
#[allow(clippy::too_many_arguments)]
pub fn squared_error_at(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    coeffs: &[f64],
    t: f64,
    ls: &dyn LevelSet,
    n_s: usize,
    domain: Domain,
    exact: &(dyn Fn(f64, [f64; 2]) -> f64 + Sync),
) -> Result<f64> {
    let field = SpatialField::at_time(space, coeffs, t)?;
    let rules = rules_at(mesh, &candidate_elements(mesh, space), ls, n_s, domain)?;
    let parts = par::try_map(&rules, |(e, rule)| -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let d = field.value(mesh, *e, x)? - exact(t, x);
            acc += w * d * d;
        }
        Ok(acc)
    })?;
    Ok(parts.iter().sum())
}

/// `‖u − u_h‖_{L²}` at time `t` with oversampled rules (`n_s + 2` nodes).
#[allow(clippy::too_many_arguments)]
pub fn l2_error_final(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    coeffs: &[f64],
    t: f64,
    ls: &dyn LevelSet,
    n_s: usize,
    domain: Domain,
    exact: &(dyn Fn(f64, [f64; 2]) -> f64 + Sync),
) -> Result<f64> {
    Ok(squared_error_at(mesh, space, coeffs, t, ls, n_s + OVERSAMPLE, domain, exact)?.sqrt())
}

/// `∫_{I_n} ‖u − u_h‖²` with the Lobatto rule of `n_t + 2` points and oversampled space rules.
#[allow(clippy::too_many_arguments)]
pub fn l2l2_increment<'a, L: LevelSet + 'a>(
    mesh: &BackgroundMesh,
    space: &SlabSpace,
    coeffs: &[f64],
    n_t: usize,
    n_s: usize,
    domain: Domain,
    geometry_at: impl Fn(f64) -> L,
    exact: &(dyn Fn(f64, [f64; 2]) -> f64 + Sync),
) -> Result<f64> {
    let rule = gauss_lobatto(n_t + OVERSAMPLE)?.map_to_interval(space.slab.0, space.slab.1)?;
    let mut acc = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let ls = geometry_at(t);
        acc += w * squared_error_at(mesh, space, coeffs, t, &ls, n_s + OVERSAMPLE, domain, exact)?;
    }
    Ok(acc)
}

/// `sqrt(Σ_n increments)`.
pub fn l2l2_error(increments: impl IntoIterator<Item = f64>) -> f64 {
    increments.into_iter().sum::<f64>().sqrt()
}

/// Empirical orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::Config(format!("eoc needs two or more paired values, got {} errors and {} sizes", errors.len(), hs.len())));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("mesh sizes must be strictly decreasing".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Config("errors must be positive and finite".into()));
    }
    Ok(errors.windows(2).zip(hs.windows(2)).map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}
