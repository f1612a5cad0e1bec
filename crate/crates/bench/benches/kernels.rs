use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use reslab_core::averaged_h::{self, B1Integrand, B1_KERNEL_NODES};
use reslab_core::elliptic::{complete_derivs, complete_ke, jacobi_sn_cn_dn, EllipticModulus};
use reslab_core::oscillator::{from_phase, level_from_h};
use reslab_core::quasipotential::{build_bvp, shoot, Domain, ShotConfig};
use reslab_core::sdesim::{LocalTerms, LOCAL_TABLE_NODES};
use reslab_core::{find_resonance, table1, AveragedCoeffs, Forcing, PendulumSystem, Side};

fn system() -> PendulumSystem {
    let spec = find_resonance(1, 1, 1.2, Side::InsideWell).unwrap();
    let forcing = Forcing { delta: 0.1, eta: 0.3, alpha: 0.2 };
    PendulumSystem::new(spec, forcing, 0.5).unwrap()
}

fn elliptic(c: &mut Criterion) {
    let m = EllipticModulus::new(0.93).unwrap();
    c.bench_function("complete_ke", |b| b.iter(|| complete_ke(black_box(&m))));
    c.bench_function("complete_derivs", |b| b.iter(|| complete_derivs(black_box(&m))));
    c.bench_function("jacobi_sn_cn_dn", |b| b.iter(|| jacobi_sn_cn_dn(black_box(0.7), black_box(&m))));
    c.bench_function("from_phase", |b| b.iter(|| from_phase(black_box(1.2), black_box(0.1))));
    c.bench_function("level_from_h", |b| b.iter(|| level_from_h(black_box(-0.1), Side::InsideWell)));
}

fn averaging(c: &mut Criterion) {
    let ps = system();
    let mid = 0.5 * (ps.h_sd + ps.h_sk);
    c.bench_function("orbit_average", |b| b.iter(|| averaged_h::orbit_average(&ps, black_box(mid), |_, h| h * h)));
    let mut g = c.benchmark_group("tables");
    g.sample_size(10);
    g.bench_function("averaged_coeffs_400", |b| b.iter(|| AveragedCoeffs::new(&ps).unwrap()));
    g.bench_function("b1_kernel", |b| b.iter(|| B1Integrand::new(&ps, B1_KERNEL_NODES)));
    g.finish();
    let ac = AveragedCoeffs::new(&ps).unwrap();
    c.bench_function("mean_exit_time", |b| b.iter(|| averaged_h::mean_exit_time(&ac, ps.h_sk, black_box(0.2), 1.5)));
}

fn localized(c: &mut Criterion) {
    let ps = system();
    let terms = LocalTerms::new(&ps.spec, &ps.forcing(), LOCAL_TABLE_NODES);
    c.bench_function("local_terms_sample", |b| b.iter(|| terms.sample(black_box(0.3), black_box(1.1))));
}

fn quasipotential(c: &mut Criterion) {
    let zs = table1::table1_system(0.4, 2.5).unwrap();
    let bvp = build_bvp(&zs, Domain::K0).unwrap();
    let cfg = ShotConfig::for_bvp(&bvp);
    let mut g = c.benchmark_group("quasipotential");
    g.sample_size(20);
    g.bench_function("shoot", |b| b.iter(|| shoot(&bvp, black_box(0.4), &cfg, false)));
    g.finish();
}

criterion_group!(benches, elliptic, averaging, localized, quasipotential);
criterion_main!(benches);
