//! Quadrature on cells cut by the zero contour of a level set.
//!
//! On a cell where one partial derivative of `phi` keeps its sign, the
//! interface is the graph of a height function over the other axis. The
//! base axis is split at the points where the interface meets the top and
//! bottom edges, each piece gets a Gauss-Legendre rule, and along every
//! base node the vertical line is split at its (unique) root. Cells where
//! no such axis exists are bisected and handled recursively.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::Rect;
use crate::quadrature1d::{gauss_legendre, QuadRule1D};

/// Maximum number of bisections before giving up on a cell.
pub const MAX_DEPTH: usize = 8;
/// Relative gradient threshold below which an axis is not accepted as height direction.
const HEIGHT_THRESHOLD: f64 = 1e-2;
const SAMPLES_PER_AXIS: usize = 5;
const EDGE_SCAN: usize = 16;
/// Relative agreement required between a base piece and its halves.
const REFINE_TOL: f64 = 1e-13;
const MAX_REFINE: usize = 4;

/// Level set at a frozen time; the domain is `{phi < 0}`.
pub trait LevelSet: Sync {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
}

impl<F, G> LevelSet for (F, G)
where
    F: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    fn value(&self, x: [f64; 2]) -> f64 {
        (self.0)(x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        (self.1)(x)
    }
}

/// Points and positive weights on `K ∩ Ω` or `K ∩ Γ`. Surface rules also
/// carry the outward unit normal `∇φ/|∇φ|` at every point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CutQuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub normals: Vec<[f64; 2]>,
}

impl CutQuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }

    fn push(&mut self, p: [f64; 2], w: f64) {
        self.points.push(p);
        self.weights.push(w);
    }
}

/// Volume and surface rules of one cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CutRules {
    pub volume: CutQuadRule,
    pub surface: CutQuadRule,
}

/// Coarse sign information for a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellSign {
    Inside,
    Outside,
    /// The interface may cross the cell.
    Uncertain,
}

pub(crate) fn gauss_cached(n: usize) -> &'static QuadRule1D {
    static RULES: OnceLock<Vec<QuadRule1D>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=20).map(|k| gauss_legendre(k).expect("1..=20")).collect());
    &rules[n - 1]
}

struct Samples {
    values: [f64; SAMPLES_PER_AXIS * SAMPLES_PER_AXIS],
    grads: [[f64; 2]; SAMPLES_PER_AXIS * SAMPLES_PER_AXIS],
}

fn sample(ls: &dyn LevelSet, rect: &Rect) -> Samples {
    let mut s = Samples {
        values: [0.0; SAMPLES_PER_AXIS * SAMPLES_PER_AXIS],
        grads: [[0.0; 2]; SAMPLES_PER_AXIS * SAMPLES_PER_AXIS],
    };
    let n = SAMPLES_PER_AXIS - 1;
    for j in 0..=n {
        for i in 0..=n {
            let x = [
                rect.lo[0] + rect.side(0) * i as f64 / n as f64,
                rect.lo[1] + rect.side(1) * j as f64 / n as f64,
            ];
            s.values[j * SAMPLES_PER_AXIS + i] = ls.value(x);
            s.grads[j * SAMPLES_PER_AXIS + i] = ls.gradient(x);
        }
    }
    s
}

fn sign_from_samples(s: &Samples, rect: &Rect) -> CellSign {
    let mut gmax = 0.0f64;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for g in &s.grads {
        gmax = gmax.max(g[0].hypot(g[1]));
        for a in 0..2 {
            lo[a] = lo[a].min(g[a]);
            hi[a] = hi[a].max(g[a]);
        }
    }
    // Lipschitz bound: sampled maximum plus the observed variation of the gradient
    let lip = gmax + (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    let n = (SAMPLES_PER_AXIS - 1) as f64;
    let radius = 0.5 * (rect.side(0) / n).hypot(rect.side(1) / n);
    let margin = lip * radius;
    if s.values.iter().all(|&v| v > margin) {
        CellSign::Outside
    } else if s.values.iter().all(|&v| v < -margin) {
        CellSign::Inside
    } else {
        CellSign::Uncertain
    }
}

/// Sampled inside/outside test; `Uncertain` cells need the full rule construction.
pub fn classify_cell(ls: &dyn LevelSet, rect: &Rect) -> CellSign {
    sign_from_samples(&sample(ls, rect), rect)
}

fn tensor_rule(rect: &Rect, ns: usize, out: &mut CutQuadRule) {
    let g = gauss_cached(ns);
    let (hx, hy) = (0.5 * rect.side(0), 0.5 * rect.side(1));
    let c = rect.center();
    for (&yj, &wj) in g.nodes.iter().zip(&g.weights) {
        for (&xi, &wi) in g.nodes.iter().zip(&g.weights) {
            out.push([c[0] + hx * xi, c[1] + hy * yj], wi * wj * hx * hy);
        }
    }
}

fn point(base_axis: usize, b: f64, k: f64) -> [f64; 2] {
    if base_axis == 0 {
        [b, k]
    } else {
        [k, b]
    }
}

/// Root of `g` in `[a, b]` given a sign change, by safeguarded Newton.
fn bracketed_root(g: impl Fn(f64) -> (f64, f64), mut a: f64, mut b: f64) -> f64 {
    let (mut ga, _) = g(a);
    let (gb, _) = g(b);
    if ga == 0.0 {
        return a;
    }
    if gb == 0.0 {
        return b;
    }
    let tol = 1e-15 * (b - a).abs().max(a.abs().max(b.abs()) * 1e-3);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let (gx, dgx) = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (ga < 0.0) {
            a = x;
            ga = gx;
        } else {
            b = x;
        }
        let newton = if dgx != 0.0 { x - gx / dgx } else { f64::NAN };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= tol || (hi - lo) <= tol {
            return next;
        }
        x = next;
    }
    x
}

/// All sign changes of `g` in the open interval `(a, b)`.
fn scan_roots(g: impl Fn(f64) -> (f64, f64), a: f64, b: f64, out: &mut Vec<f64>) {
    let n = EDGE_SCAN;
    let mut prev_s = a;
    let mut prev_v = g(a).0;
    for i in 1..=n {
        let s = a + (b - a) * i as f64 / n as f64;
        let v = g(s).0;
        if (v < 0.0) != (prev_v < 0.0) {
            let r = bracketed_root(&g, prev_s, s);
            if r > a && r < b {
                out.push(r);
            }
        }
        prev_s = s;
        prev_v = v;
    }
}

/// Interface crossing of the height line through base coordinate `xb`:
/// the inside segment and, when cut, the root with its surface density.
struct LineCut {
    segment: Option<(f64, f64)>,
    root: Option<(f64, [f64; 2])>,
}

fn line_cut(ls: &dyn LevelSet, b_axis: usize, k: usize, xb: f64, lo_k: f64, hi_k: f64) -> LineCut {
    let f0 = ls.value(point(b_axis, xb, lo_k));
    let f1 = ls.value(point(b_axis, xb, hi_k));
    let (in0, in1) = (f0 < 0.0, f1 < 0.0);
    if in0 == in1 {
        let segment = in0.then_some((lo_k, hi_k));
        return LineCut { segment, root: None };
    }
    let line = |s: f64| {
        let p = point(b_axis, xb, s);
        (ls.value(p), ls.gradient(p)[k])
    };
    let r = bracketed_root(line, lo_k, hi_k);
    let g = ls.gradient(point(b_axis, xb, r));
    let segment = if in0 { (lo_k, r) } else { (r, hi_k) };
    LineCut { segment: Some(segment), root: Some((r, g)) }
}

/// Gauss approximations of the inside area and the interface length over a base piece.
fn piece_moments(ls: &dyn LevelSet, b_axis: usize, k: usize, (a, c): (f64, f64), ns: usize, (lo_k, hi_k): (f64, f64)) -> [f64; 2] {
    let gauss = gauss_cached(ns);
    let (half, mid) = (0.5 * (c - a), 0.5 * (a + c));
    let mut m = [0.0; 2];
    for (&xi, &wi) in gauss.nodes.iter().zip(&gauss.weights) {
        let cut = line_cut(ls, b_axis, k, mid + half * xi, lo_k, hi_k);
        if let Some((s0, s1)) = cut.segment {
            m[0] += wi * half * (s1 - s0);
        }
        if let Some((_, g)) = cut.root {
            if g[k] != 0.0 {
                m[1] += wi * half * g[0].hypot(g[1]) / g[k].abs();
            }
        }
    }
    m
}

/// Splits a base piece until the rule agrees with the rule on its halves.
/// The interface length density has a square-root singularity where the
/// interface turns parallel to the height axis; pieces close to it converge
/// slowly under a single Gauss rule.
#[allow(clippy::too_many_arguments)]
fn refine_piece(
    ls: &dyn LevelSet,
    b_axis: usize,
    k: usize,
    piece: (f64, f64),
    ns: usize,
    kspan: (f64, f64),
    coarse: [f64; 2],
    level: usize,
    out: &mut Vec<(f64, f64)>,
) {
    let (a, c) = piece;
    let m = 0.5 * (a + c);
    let left = piece_moments(ls, b_axis, k, (a, m), ns, kspan);
    let right = piece_moments(ls, b_axis, k, (m, c), ns, kspan);
    let len = c - a;
    let height = kspan.1 - kspan.0;
    let converged = (left[0] + right[0] - coarse[0]).abs() <= REFINE_TOL * len * height
        && (left[1] + right[1] - coarse[1]).abs() <= REFINE_TOL * len;
    if converged || level >= MAX_REFINE {
        out.push((a, m));
        out.push((m, c));
    } else {
        refine_piece(ls, b_axis, k, (a, m), ns, kspan, left, level + 1, out);
        refine_piece(ls, b_axis, k, (m, c), ns, kspan, right, level + 1, out);
    }
}

fn height_rule(
    ls: &dyn LevelSet,
    rect: &Rect,
    ns: usize,
    k: usize,
    mut vol: Option<&mut CutQuadRule>,
    mut surf: Option<&mut CutQuadRule>,
) {
    let b_axis = 1 - k;
    let (lo_b, hi_b) = (rect.lo[b_axis], rect.hi[b_axis]);
    let kspan = (rect.lo[k], rect.hi[k]);
    let mut breaks = vec![lo_b, hi_b];
    for side in [kspan.0, kspan.1] {
        let g = |s: f64| {
            let p = point(b_axis, s, side);
            (ls.value(p), ls.gradient(p)[b_axis])
        };
        scan_roots(g, lo_b, hi_b, &mut breaks);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_len = 1e-14 * (hi_b - lo_b);
    let mut pieces = Vec::new();
    for w in breaks.windows(2) {
        let piece = (w[0], w[1]);
        if piece.1 - piece.0 <= min_len {
            continue;
        }
        let coarse = piece_moments(ls, b_axis, k, piece, ns, kspan);
        if coarse[1] == 0.0 {
            // no crossing: the segment length is smooth on the piece
            pieces.push(piece);
        } else {
            refine_piece(ls, b_axis, k, piece, ns, kspan, coarse, 0, &mut pieces);
        }
    }
    let gauss = gauss_cached(ns);
    for (a, c) in pieces {
        let (half, mid) = (0.5 * (c - a), 0.5 * (a + c));
        for (&xi, &wi) in gauss.nodes.iter().zip(&gauss.weights) {
            let xb = mid + half * xi;
            let wb = wi * half;
            let cut = line_cut(ls, b_axis, k, xb, kspan.0, kspan.1);
            if let (Some(surf), Some((r, g))) = (surf.as_deref_mut(), cut.root) {
                let norm = g[0].hypot(g[1]);
                if norm > 0.0 && g[k] != 0.0 {
                    surf.push(point(b_axis, xb, r), wb * norm / g[k].abs());
                    surf.normals.push([g[0] / norm, g[1] / norm]);
                }
            }
            if let (Some(vol), Some((s0, s1))) = (vol.as_deref_mut(), cut.segment) {
                if s1 > s0 {
                    let (hk, mk) = (0.5 * (s1 - s0), 0.5 * (s0 + s1));
                    for (&yj, &wj) in gauss.nodes.iter().zip(&gauss.weights) {
                        vol.push(point(b_axis, xb, mk + hk * yj), wb * wj * hk);
                    }
                }
            }
        }
    }
}

fn build(
    ls: &dyn LevelSet,
    rect: &Rect,
    ns: usize,
    depth: usize,
    vol: &mut Option<&mut CutQuadRule>,
    surf: &mut Option<&mut CutQuadRule>,
) -> Result<()> {
    let s = sample(ls, rect);
    match sign_from_samples(&s, rect) {
        CellSign::Outside => return Ok(()),
        CellSign::Inside => {
            if let Some(v) = vol.as_deref_mut() {
                tensor_rule(rect, ns, v);
            }
            return Ok(());
        }
        CellSign::Uncertain => {}
    }
    let gmax = s.grads.iter().map(|g| g[0].hypot(g[1])).fold(0.0, f64::max);
    let mut best = (0.0, 0usize);
    for k in 0..2 {
        let pos = s.grads.iter().all(|g| g[k] > 0.0);
        let neg = s.grads.iter().all(|g| g[k] < 0.0);
        if pos || neg {
            let m = s.grads.iter().map(|g| g[k].abs()).fold(f64::INFINITY, f64::min);
            if m > best.0 {
                best = (m, k);
            }
        }
    }
    if gmax > 0.0 && best.0 >= HEIGHT_THRESHOLD * gmax {
        height_rule(ls, rect, ns, best.1, vol.as_deref_mut(), surf.as_deref_mut());
        return Ok(());
    }
    if depth >= MAX_DEPTH {
        return Err(Error::GeometryResolution { lo: rect.lo, hi: rect.hi, depth });
    }
    let axis = if rect.side(1) > rect.side(0) { 1 } else { 0 };
    let (a, b) = rect.bisect(axis);
    build(ls, &a, ns, depth + 1, vol, surf)?;
    build(ls, &b, ns, depth + 1, vol, surf)
}

fn check_ns(ns: usize) -> Result<()> {
    if (1..=10).contains(&ns) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("nodes per axis must be in 1..=10, got {ns}")))
    }
}

/// Volume and surface rules in one pass.
pub fn cut_rules(ls: &dyn LevelSet, rect: &Rect, ns: usize) -> Result<CutRules> {
    check_ns(ns)?;
    let mut rules = CutRules::default();
    build(ls, rect, ns, 0, &mut Some(&mut rules.volume), &mut Some(&mut rules.surface))?;
    Ok(rules)
}

/// Rule for `∫_{K∩Ω} g`.
pub fn cut_volume_rule(ls: &dyn LevelSet, rect: &Rect, ns: usize) -> Result<CutQuadRule> {
    check_ns(ns)?;
    let mut rule = CutQuadRule::default();
    build(ls, rect, ns, 0, &mut Some(&mut rule), &mut None)?;
    Ok(rule)
}

/// Rule for `∫_{K∩Γ} g`, with outward normals.
pub fn cut_surface_rule(ls: &dyn LevelSet, rect: &Rect, ns: usize) -> Result<CutQuadRule> {
    check_ns(ns)?;
    let mut rule = CutQuadRule::default();
    build(ls, rect, ns, 0, &mut None, &mut Some(&mut rule))?;
    Ok(rule)
}

/// `|K ∩ Ω| / |K|`.
pub fn cut_fraction(ls: &dyn LevelSet, rect: &Rect, ns: usize) -> Result<f64> {
    Ok((cut_volume_rule(ls, rect, ns)?.weight_sum() / rect.area()).clamp(0.0, 1.0))
}
