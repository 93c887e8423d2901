//! Subcommand implementations.

use stcutfem::diagnostics::{eoc, RunReport};
use stcutfem::implicit_quadrature::cut_rules;
use stcutfem::levelset::{ActiveMeshes, CoupledProblem, Shape, SlabGeometry};
use stcutfem::mesh::BackgroundMesh;
use stcutfem::schemes_bulk::{default_time_points, run_simulation, SchemeKind, SlabTimeRule};
use stcutfem::schemes_coupled::run_coupled;
use stcutfem::stabilization::{bulk_stabilized_faces, full_face_set, write_partition_csv, Mode, StabilizationConfig};

use crate::config::{ConfigError, Experiment};
use crate::output::{labelled, report_rows, write_csv, PlotData};

#[derive(Debug)]
pub enum CmdError {
    Config(ConfigError),
    Solver(stcutfem::Error),
    Io(std::io::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) | CmdError::Io(_) => 2,
            CmdError::Solver(stcutfem::Error::Config(_) | stcutfem::Error::OutOfRange(_) | stcutfem::Error::Io(_)) => 2,
            CmdError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(e) => write!(f, "config error: {e}"),
            CmdError::Solver(e) => write!(f, "{e}"),
            CmdError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e)
    }
}

impl From<stcutfem::Error> for CmdError {
    fn from(e: stcutfem::Error) -> Self {
        CmdError::Solver(e)
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

impl From<csv::Error> for CmdError {
    fn from(e: csv::Error) -> Self {
        CmdError::Io(e.into())
    }
}

type CmdResult = Result<(), CmdError>;

/// Per-point tweaks on top of the resolved experiment.
#[derive(Clone, Debug, Default)]
struct Point {
    stab: Option<StabilizationConfig>,
    n_t: Option<usize>,
    measure_errors: bool,
    slab_errors: bool,
    compute_cond: bool,
}

fn run_point(exp: &Experiment, h: f64, scheme: SchemeKind, p: &Point) -> Result<RunReport, CmdError> {
    let report = if exp.coupled {
        let mut c = exp.coupled_config(h, scheme)?;
        if let Some(s) = &p.stab {
            c.stab = s.clone();
        }
        c.n_t = p.n_t.unwrap_or(c.n_t);
        c.measure_errors = p.measure_errors;
        c.compute_cond |= p.compute_cond;
        run_coupled(&CoupledProblem::surfactant(), &c)?.report
    } else {
        let mut c = exp.bulk_config(h, scheme)?;
        if let Some(s) = &p.stab {
            c.stab = s.clone();
        }
        c.n_t = p.n_t.unwrap_or(c.n_t);
        c.measure_errors = p.measure_errors;
        c.slab_errors = p.slab_errors;
        c.compute_cond |= p.compute_cond;
        run_simulation(&exp.bulk_problem(), &c)?.report
    };
    log::info!("{} {} h={h}: {} slabs, final error {:.4e}", exp.problem, scheme.name(), report.records.len(), report.final_l2_error);
    Ok(report)
}

fn max_cond(r: &RunReport) -> f64 {
    r.records.iter().filter_map(|x| x.cond).fold(f64::NAN, f64::max)
}

fn maybe_write_plot(exp: &Experiment, plot: &PlotData) -> CmdResult {
    if let Some(p) = &exp.plot {
        plot.write(p)?;
    }
    Ok(())
}

/// Writes one CSV per label, or the plain path when there is a single label.
fn write_tables(exp: &Experiment, tables: &[(String, Vec<[String; 10]>)]) -> CmdResult {
    if let Some(path) = &exp.csv {
        for (label, rows) in tables {
            let target = if tables.len() == 1 { path.clone() } else { labelled(path, label) };
            write_csv(&target, rows)?;
        }
    }
    Ok(())
}

fn eoc_column(errors: &[f64], hs: &[f64]) -> Vec<String> {
    let rates = if errors.iter().all(|e| *e > 0.0) { eoc(errors, hs).unwrap_or_default() } else { Vec::new() };
    std::iter::once(String::from("-")).chain(rates.iter().map(|r| format!("{r:.3}"))).collect()
}

pub fn convergence(exp: &Experiment) -> CmdResult {
    let point = Point { measure_errors: true, ..Point::default() };
    let mut tables = Vec::new();
    let mut plot = PlotData::default();
    for scheme in exp.scheme.schemes() {
        let reports = exp.h.iter().map(|&h| run_point(exp, h, scheme, &point)).collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<[String; 10]> = reports.iter().flat_map(|r| report_rows(r, true)).collect();
        tables.push((scheme.name().to_string(), rows));
        let fin: Vec<f64> = reports.iter().map(|r| r.final_l2_error).collect();
        let l2l2: Vec<f64> = reports.iter().map(|r| r.l2l2_error).collect();
        let (e1, e2) = (eoc_column(&fin, &exp.h), eoc_column(&l2l2, &exp.h));
        println!("{} {} m={} k={}", exp.problem, scheme.name(), exp.m, exp.k);
        println!("{:>10} {:>12} {:>7} {:>12} {:>7}", "h", "L2(T)", "EOC", "L2(L2)", "EOC");
        for i in 0..exp.h.len() {
            println!("{:>10} {:>12.4e} {:>7} {:>12.4e} {:>7}", exp.h[i], fin[i], e1[i], l2l2[i], e2[i]);
        }
        let mut columns = vec!["h", "err_l2_final", "err_l2l2"];
        let mut data: Vec<Vec<f64>> = (0..exp.h.len()).map(|i| vec![exp.h[i], fin[i], l2l2[i]]).collect();
        if exp.coupled {
            columns.extend(["err_surface_l2_final", "err_surface_l2l2"]);
            let sf: Vec<f64> = reports.iter().map(|r| r.surface_final_l2_error.unwrap_or(f64::NAN)).collect();
            let sl: Vec<f64> = reports.iter().map(|r| r.surface_l2l2_error.unwrap_or(f64::NAN)).collect();
            let (s1, s2) = (eoc_column(&sf, &exp.h), eoc_column(&sl, &exp.h));
            println!("{:>10} {:>12} {:>7} {:>12} {:>7}", "h", "surf L2(T)", "EOC", "surf L2(L2)", "EOC");
            for i in 0..exp.h.len() {
                println!("{:>10} {:>12.4e} {:>7} {:>12.4e} {:>7}", exp.h[i], sf[i], s1[i], sl[i], s2[i]);
                data[i].extend([sf[i], sl[i]]);
            }
        }
        plot.block(&format!("convergence {} {} m={} k={}", exp.problem, scheme.name(), exp.m, exp.k), &columns, &data);
    }
    write_tables(exp, &tables)?;
    maybe_write_plot(exp, &plot)
}

pub fn conservation(exp: &Experiment) -> CmdResult {
    let point = Point::default();
    let mut tables = Vec::new();
    let mut plot = PlotData::default();
    for scheme in exp.scheme.schemes() {
        let mut rows = Vec::new();
        for &h in &exp.h {
            let r = run_point(exp, h, scheme, &point)?;
            println!("{} {} h={h}: e_c(T) = {:.3e}, relative {:.3e}", exp.problem, scheme.name(), r.e_c_final(), r.e_c_final() / r.mass_scale);
            let data: Vec<Vec<f64>> = r.records.iter().map(|x| vec![x.t, x.e_c, x.e_c / r.mass_scale]).collect();
            plot.block(&format!("conservation {} {} h={h}", exp.problem, scheme.name()), &["t", "e_c", "e_c_relative"], &data);
            rows.extend(report_rows(&r, false));
        }
        tables.push((scheme.name().to_string(), rows));
    }
    write_tables(exp, &tables)?;
    maybe_write_plot(exp, &plot)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Macro => "macro",
        Mode::Full => "full",
    }
}

pub fn tau_sweep(exp: &Experiment) -> CmdResult {
    let taus = exp.taus.clone().unwrap_or_else(|| vec![1.0, 10.0, 100.0, 1000.0]);
    let h = exp.h[0];
    let mut tables = Vec::new();
    let mut plot = PlotData::default();
    for scheme in exp.scheme.schemes() {
        let mut data = Vec::new();
        println!("{} {} h={h}", exp.problem, scheme.name());
        println!("{:>8} {:>12} {:>10} {:>12} {:>10}", "tau", "err macro", "cond", "err full", "cond");
        for &tau in &taus {
            let mut row = vec![tau];
            for mode in [Mode::Macro, Mode::Full] {
                let mut stab = exp.stab_config(scheme)?;
                stab.mode = mode;
                stab.tau = tau;
                let p = Point { stab: Some(stab), measure_errors: true, compute_cond: true, ..Point::default() };
                let r = run_point(exp, h, scheme, &p)?;
                row.extend([r.final_l2_error, max_cond(&r)]);
                tables.push((format!("{}.tau{tau}.{}", scheme.name(), mode_name(mode)), report_rows(&r, true)));
            }
            println!("{:>8} {:>12.4e} {:>10.3e} {:>12.4e} {:>10.3e}", tau, row[1], row[2], row[3], row[4]);
            data.push(row);
        }
        plot.block(&format!("tau sweep {} {} h={h}", exp.problem, scheme.name()), &["tau", "err_macro", "cond_macro", "err_full", "cond_full"], &data);
    }
    write_tables(exp, &tables)?;
    maybe_write_plot(exp, &plot)
}

pub fn delta_sweep(exp: &Experiment) -> CmdResult {
    let deltas = exp.deltas.clone().unwrap_or_else(|| (1..=10).map(|i| i as f64 / 10.0).collect());
    let h = exp.h[0];
    let mut tables = Vec::new();
    let mut plot = PlotData::default();
    let summary = |r: &RunReport| {
        let total: usize = r.records.iter().map(|x| x.nnz).sum();
        let max = r.records.iter().map(|x| x.nnz).max().unwrap_or(0);
        (r.final_l2_error, max_cond(r), total as f64, max as f64)
    };
    for scheme in exp.scheme.schemes() {
        let mut stab = exp.stab_config(scheme)?;
        stab.mode = Mode::Full;
        let full = run_point(exp, h, scheme, &Point { stab: Some(stab), measure_errors: true, compute_cond: true, ..Point::default() })?;
        let f = summary(&full);
        tables.push((format!("{}.full", scheme.name()), report_rows(&full, true)));
        println!("{} {} h={h}; full stabilization: err {:.4e}, cond {:.3e}, nnz {}", exp.problem, scheme.name(), f.0, f.1, f.2);
        println!("{:>8} {:>12} {:>10} {:>12} {:>10}", "delta", "err", "cond", "nnz total", "nnz max");
        let mut data = Vec::new();
        for &delta in &deltas {
            let mut stab = exp.stab_config(scheme)?;
            stab.mode = Mode::Macro;
            stab.delta = delta;
            stab.validate()?;
            let r = run_point(exp, h, scheme, &Point { stab: Some(stab), measure_errors: true, compute_cond: true, ..Point::default() })?;
            let s = summary(&r);
            println!("{:>8} {:>12.4e} {:>10.3e} {:>12} {:>10}", delta, s.0, s.1, s.2, s.3);
            data.push(vec![delta, s.0, s.1, s.2, s.3]);
            tables.push((format!("{}.delta{delta}", scheme.name()), report_rows(&r, true)));
        }
        plot.block(&format!("delta sweep {} {} h={h} macro", exp.problem, scheme.name()), &["delta", "err", "cond", "nnz_total", "nnz_max"], &data);
        plot.block(&format!("full stabilization reference {} {}", exp.problem, scheme.name()), &["err", "cond", "nnz_total", "nnz_max"], &[vec![f.0, f.1, f.2, f.3]]);
    }
    write_tables(exp, &tables)?;
    maybe_write_plot(exp, &plot)
}

pub fn stability_scan(exp: &Experiment) -> CmdResult {
    if exp.coupled {
        return Err(ConfigError("problem: stability-scan runs the bulk problems only".into()).into());
    }
    let base = exp.n_t.unwrap_or_else(|| default_time_points(exp.m, exp.k));
    let n_ts = exp.n_ts.clone().unwrap_or_else(|| vec![base, 2 * base]);
    let h = exp.h[0];
    let mut tables = Vec::new();
    let mut plot = PlotData::default();
    for scheme in exp.scheme.schemes() {
        let base_stab = exp.stab_config(scheme)?;
        let taus = exp.taus.clone().unwrap_or_else(|| vec![base_stab.tau]);
        for &n_t in &n_ts {
            for &tau in &taus {
                let stab = StabilizationConfig { tau, ..base_stab.clone() };
                let p = Point { stab: Some(stab), n_t: Some(n_t), measure_errors: true, slab_errors: true, ..Point::default() };
                let r = run_point(exp, h, scheme, &p)?;
                let data: Vec<Vec<f64>> = r.records.iter().map(|x| vec![x.t, x.l2_error.unwrap_or(f64::NAN)]).collect();
                let peak = data.iter().map(|d| d[1]).fold(0.0, f64::max);
                println!("{} {} N_t={n_t} tau={tau}: final {:.4e}, max over t {:.4e}", exp.problem, scheme.name(), r.final_l2_error, peak);
                plot.block(&format!("{} {} N_t={n_t} tau={tau}", exp.problem, scheme.name()), &["t", "err_l2"], &data);
                tables.push((format!("{}.nt{n_t}.tau{tau}", scheme.name()), report_rows(&r, true)));
            }
        }
    }
    write_tables(exp, &tables)?;
    maybe_write_plot(exp, &plot)
}

/// Reference perimeter of the frozen interface by a dense polyline.
fn reference_perimeter(shape: &Shape, t: f64) -> f64 {
    match *shape {
        Shape::OrbitingCircle { r0, .. } | Shape::StaticCircle { r0, .. } => 2.0 * std::f64::consts::PI * r0,
        Shape::Kite { r0 } => {
            let n = 1_000_000;
            let point = |i: usize| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let y = r0 * th.sin();
                [r0 * th.cos() + (1.0 - y * y) * t, y]
            };
            (0..n).map(|i| {
                let (a, b) = (point(i), point(i + 1));
                (b[0] - a[0]).hypot(b[1] - a[1])
            }).sum()
        }
    }
}

pub fn quadrature_test(exp: &Experiment) -> CmdResult {
    let problem = exp.bulk_problem();
    let t = exp.final_time;
    let n_s = exp.n_s.unwrap_or(exp.m + 2);
    let r0 = problem.shape.r0();
    let area_ref = std::f64::consts::PI * r0 * r0;
    let perim_ref = reference_perimeter(&problem.shape, t);
    let ls = problem.frozen(t);
    let mut data = Vec::new();
    println!("{} at t={t}, N_s={n_s}", problem.name);
    println!("{:>10} {:>18} {:>10} {:>18} {:>10}", "h", "area", "error", "perimeter", "error");
    for &h in &exp.h {
        let mesh = BackgroundMesh::covering(problem.bbox, h)?;
        let (mut area, mut perimeter) = (0.0, 0.0);
        for e in 0..mesh.n_elements() {
            let r = cut_rules(&ls, &mesh.element_rect(e), n_s)?;
            area += r.volume.weight_sum();
            perimeter += r.surface.weight_sum();
        }
        let (ea, ep) = ((area - area_ref).abs(), (perimeter - perim_ref).abs());
        println!("{:>10} {:>18.14} {:>10.2e} {:>18.14} {:>10.2e}", h, area, ea, perimeter, ep);
        data.push(vec![h, area, ea, perimeter, ep]);
    }
    let mut plot = PlotData::default();
    plot.block(&format!("quadrature {} t={t} N_s={n_s}", problem.name), &["h", "area", "area_error", "perimeter", "perimeter_error"], &data);
    maybe_write_plot(exp, &plot)
}

/// Partition of the slab `[T, T + Δt]` on the first mesh size.
pub fn partition_dump(exp: &Experiment) -> CmdResult {
    let csv = exp.csv.as_deref().ok_or_else(|| ConfigError("output.csv: partition-dump needs an output path".into()))?;
    let problem = exp.bulk_problem();
    let h = exp.h[0];
    let mesh = BackgroundMesh::covering(problem.bbox, h)?;
    let t0 = exp.final_time;
    let slab = (t0, t0 + exp.dt.resolve(h));
    let n_t = exp.n_t.unwrap_or_else(|| default_time_points(exp.m, exp.k));
    let rule = SlabTimeRule::lobatto(n_t, slab)?;
    let n_s = exp.n_s.unwrap_or(exp.m + 2);
    let geom = SlabGeometry::compute(&mesh, &problem, &rule.times, n_s)?;
    let active = ActiveMeshes::from_geometry(&geom, slab, false);
    let stab = StabilizationConfig { mode: Mode::Macro, ..exp.stab_config(SchemeKind::Conservative)? };
    let (_, partition) = bulk_stabilized_faces(&mesh, &geom, &active, &stab)?;
    let partition = partition.expect("macro mode builds a partition");
    let full = full_face_set(&mesh, &active);
    write_partition_csv(&mesh, &partition, &full, csv, &labelled(csv, "faces"))?;
    println!(
        "slab [{}, {}]: {} active elements, {} large, {} macroelements, {} of {} faces stabilized",
        slab.0,
        slab.1,
        active.bulk.len(),
        partition.large.len(),
        partition.n_macros(),
        partition.faces.len(),
        full.len()
    );
    let mut plot = PlotData::default();
    let data: Vec<Vec<f64>> = partition
        .roots
        .iter()
        .map(|&(e, r)| {
            let c = mesh.element_rect(e).center();
            vec![c[0], c[1], r as f64, f64::from(u8::from(partition.is_large(e)))]
        })
        .collect();
    plot.block(&format!("macro partition h={h} slab [{}, {}]", slab.0, slab.1), &["x", "y", "root", "large"], &data);
    maybe_write_plot(exp, &plot)
}
