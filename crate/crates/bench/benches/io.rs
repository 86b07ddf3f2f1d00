use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use geod::io::g2o::{parse_g2o, write_g2o};
use geod_bench::sphere_problem;

fn bench_io(c: &mut Criterion) {
    let (g, init) = sphere_problem(1000, 12_000, 5);
    let mut text = Vec::new();
    write_g2o(&mut text, &init, g.measurements(), None, None).unwrap();

    let mut group = c.benchmark_group("g2o");
    group.throughput(Throughput::Bytes(text.len() as u64));
    group.bench_function("parse 1000 poses / 12000 edges", |b| b.iter(|| parse_g2o(text.as_slice()).unwrap()));
    group.bench_function("write 1000 poses / 12000 edges", |b| {
        b.iter(|| {
            let mut out = Vec::with_capacity(text.len());
            write_g2o(&mut out, &init, g.measurements(), None, None).unwrap();
            out
        })
    });
    group.finish();
}

criterion_group!(benches, bench_io);
criterion_main!(benches);
