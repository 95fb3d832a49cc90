use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tbss_core::series::{whiten_values, WhitenedSeries};
use tbss_core::solver::{criterion, gradient_rows, random_orthogonal};
use tbss_core::{LagSet, Parametrization};

/// Direct evaluation of the weighted objective for any (not necessarily
/// orthogonal) U, written from the definition with plain loops.
fn oracle(u: &DMatrix<f64>, z: &DMatrix<f64>, params: &Parametrization) -> f64 {
    let (n, p) = z.shape();
    let mut second = 0.0;
    for k in params.k1.iter() {
        let m = (n - k) as f64;
        for i in 0..p {
            let y: Vec<f64> = (0..n).map(|t| (0..p).map(|j| u[(i, j)] * z[(t, j)]).sum()).collect();
            let lambda: f64 = (0..n - k).map(|t| y[t] * y[t + k]).sum::<f64>() / m;
            second += lambda * lambda;
        }
    }
    let mut fourth = 0.0;
    for k in params.k2.iter() {
        let m = (n - k) as f64;
        for i in 0..p {
            let y: Vec<f64> = (0..n).map(|t| (0..p).map(|j| u[(i, j)] * z[(t, j)]).sum()).collect();
            let mu = (0..n - k).map(|t| y[t] * y[t] * y[t + k] * y[t + k]).sum::<f64>() / m - 1.0;
            fourth += mu * mu;
        }
    }
    let b = params.b;
    let mut total = 0.0;
    if b > 0.0 {
        total += b * second;
    }
    if b < 1.0 {
        total += (1.0 - b) * fourth;
    }
    total
}

fn random_lags(rng: &mut ChaCha8Rng, max: usize) -> LagSet {
    let count = rng.random_range(1..5);
    LagSet::new((0..count).map(|_| rng.random_range(1..=max)).collect::<Vec<usize>>()).unwrap()
}

fn instance(rng: &mut ChaCha8Rng) -> (WhitenedSeries, Parametrization) {
    let n = rng.random_range(120..300);
    let p = rng.random_range(2..6);
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        let phi = rng.random_range(-0.8..0.9);
        let mut prev = 0.0;
        for t in 0..n {
            let e: f64 = StandardNormal.sample(rng);
            let vol = if j % 2 == 0 { 1.0 } else { (0.5 * (t as f64 / 17.0).sin()).exp() };
            prev = phi * prev + vol * e;
            x[(t, j)] = prev;
        }
    }
    let mix = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let z = whiten_values(&(x * mix.transpose())).unwrap();
    let b = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.05..0.95),
    };
    (z, Parametrization::new(b, random_lags(rng, 10), random_lags(rng, 5)))
}

#[test]
fn criterion_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..30 {
        let (z, params) = instance(&mut rng);
        let u = random_orthogonal(z.p(), case);
        let got = criterion(&u, &z, &params).unwrap();
        let want = oracle(&u, &z.values, &params);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "case {case}: {got} vs {want}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    for case in 0..50 {
        let (z, params) = instance(&mut rng);
        let p = z.p();
        let u = random_orthogonal(p, 100 + case);
        let analytic = gradient_rows(&u, &z, &params).unwrap();
        let mut numeric = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let mut up = u.clone();
                let mut down = u.clone();
                up[(i, j)] += h;
                down[(i, j)] -= h;
                numeric[(i, j)] = (oracle(&up, &z.values, &params) - oracle(&down, &z.values, &params)) / (2.0 * h);
            }
        }
        let rel = (&analytic - &numeric).norm() / numeric.norm().max(1e-12);
        assert!(rel < 1e-4, "case {case} (b = {}): relative error {rel}", params.b);
    }
}

#[test]
fn criterion_rejects_non_orthogonal_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (z, params) = instance(&mut rng);
    let u = DMatrix::from_element(z.p(), z.p(), 0.5);
    assert!(criterion(&u, &z, &params).is_err());
    assert!(gradient_rows(&u, &z, &params).is_err());
}
