//! Slab assembly on the moving circle, rayon pool against the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stcutfem::levelset::LevelSetProblem;
use stcutfem::mesh::BackgroundMesh;
use stcutfem::par;
use stcutfem::schemes_bulk::{assemble_slab, BulkConfig, BulkTerms, Trace};

fn slab_assembly(c: &mut Criterion) {
    let problem = LevelSetProblem::moving_circle();
    let source = |t: f64, x: [f64; 2]| problem.source(t, x);
    let initial = |x: [f64; 2]| problem.initial(x);
    let terms = BulkTerms { problem: &problem, source: &source };
    let mut group = c.benchmark_group("assemble_slab");
    group.sample_size(10);
    for (m, h) in [(1, 0.025), (2, 0.05)] {
        let cfg = BulkConfig::new(m, m, h, 0.1);
        let mesh = BackgroundMesh::covering(problem.bbox, h).unwrap();
        let slab = (0.0, h / 3.0);
        for (label, sequential) in [("parallel", false), ("sequential", true)] {
            group.bench_with_input(BenchmarkId::new(label, format!("m{m}_h{h}")), &sequential, |b, &seq| {
                par::set_sequential(seq);
                b.iter(|| assemble_slab(&mesh, &terms, &cfg, 1, slab, &Trace::Analytic(&initial)).unwrap());
            });
        }
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, slab_assembly);
criterion_main!(benches);
