//! Parallel vs single-threaded throughput of the data-parallel kernels.
//!
//! With the default `parallel` feature each kernel is measured inside a
//! one-thread rayon pool and inside the global pool. Building with
//! `--no-default-features` measures the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tbss_core::analytics::cluster::quality_curve;
use tbss_core::analytics::dissim::dist_cor_matrix;
use tbss_core::analytics::ComponentRef;
use tbss_core::guidance::{guidance_table, GuidanceRequest};
use tbss_core::series::MultivariateSeries;
use tbss_core::solver::{solve, Parametrization, SolveOptions};

fn ar_mixture(n: usize, p: usize, seed: u64) -> MultivariateSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = DMatrix::zeros(n, p);
    for j in 0..p {
        let phi = 0.1 + 0.8 * j as f64 / p as f64;
        let mut prev = 0.0;
        for t in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e;
            sources[(t, j)] = prev;
        }
    }
    let mixing = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    MultivariateSeries::from_values(sources * mixing.transpose()).expect("valid series")
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<usize>)> {
    vec![("threads=1", Some(1)), ("threads=all", None)]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<usize>)> {
    vec![("sequential", None)]
}

fn run_in<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Some(t) = threads {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().expect("thread pool");
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

fn kernels(c: &mut Criterion) {
    let x = ar_mixture(3000, 12, 1);
    let params = Parametrization::default_gsobi();
    let run = solve(&x, &params, &SolveOptions::default()).expect("solve");
    let comps: Vec<Vec<f64>> = (0..8)
        .flat_map(|s| {
            let r = solve(&ar_mixture(2000, 6, 10 + s), &params, &SolveOptions::default()).expect("solve");
            (0..r.p()).map(move |i| r.component(i).unwrap_or_default()).collect::<Vec<_>>()
        })
        .collect();
    let refs: Vec<ComponentRef> = (0..comps.len()).map(|i| ComponentRef::new(format!("r{}", i / 6), i % 6)).collect();
    let d = dist_cor_matrix(&comps).expect("dist");

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (label, threads) in modes() {
        group.bench_with_input(BenchmarkId::new("solve_p12", label), &threads, |b, &t| {
            b.iter(|| run_in(t, || solve(&x, &params, &SolveOptions::default()).expect("solve")))
        });
        group.bench_with_input(BenchmarkId::new("guidance_200_lags", label), &threads, |b, &t| {
            let request = GuidanceRequest { granule: None, max_lag: Some(200) };
            b.iter(|| run_in(t, || guidance_table(&x, &request, Some(&run)).expect("guidance")))
        });
        group.bench_with_input(BenchmarkId::new("dist_cor_matrix_48", label), &threads, |b, &t| {
            b.iter(|| run_in(t, || dist_cor_matrix(&comps).expect("dist")))
        });
        group.bench_with_input(BenchmarkId::new("quality_curve", label), &threads, |b, &t| {
            b.iter(|| run_in(t, || quality_curve(&refs, &d, &[6, 7, 8, 9, 10, 11, 12]).expect("curve")))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
