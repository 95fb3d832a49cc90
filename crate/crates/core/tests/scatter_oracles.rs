use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tbss_core::scatters::{autocov, diagonality_profile, eigen_gap, fourth_cross};
use tbss_core::solver::{solve, SolveOptions};
use tbss_core::{MultivariateSeries, Parametrization, RunResult};

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    values.sort_by(f64::total_cmp);
    values
}

fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

#[test]
fn eigen_gap_matches_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..40 {
        let p = rng.random_range(2..9);
        let g = gaussian(p, p, case);
        let m = (&g + g.transpose()) * 0.5;
        let values = jacobi_eigenvalues(&m);
        let want = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        assert!((eigen_gap(&m) - want).abs() < 1e-10, "case {case}");
    }
}

#[test]
fn scatters_match_loops() {
    let z = gaussian(150, 3, 8);
    let k = 4;
    let n = 150;
    let mean: Vec<f64> = (0..3).map(|j| z.column(j).sum() / n as f64).collect();
    let c = autocov(&z, k).unwrap().matrix;
    let q = fourth_cross(&z, k).unwrap().matrix;
    for i in 0..3 {
        for j in 0..3 {
            let lagged = |a: usize, b: usize| {
                (0..n - k).map(|t| (z[(t, a)] - mean[a]) * (z[(t + k, b)] - mean[b])).sum::<f64>() / (n - k) as f64
            };
            assert!((c[(i, j)] - 0.5 * (lagged(i, j) + lagged(j, i))).abs() < 1e-12);
            let four = (0..n - k).map(|t| z[(t, i)] * z[(t, j)] * z[(t + k, i)] * z[(t + k, j)]).sum::<f64>() / (n - k) as f64;
            assert!((q[(i, j)] - four).abs() < 1e-12);
        }
    }
}

/// ARMA(1,1) sources with distinct dynamics, mixed.
fn arma_mixture(n: usize, seed: u64) -> (MultivariateSeries, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = [(0.8, 0.3), (-0.5, 0.4), (0.3, -0.6)];
    let mut s = DMatrix::zeros(n, 3);
    for (j, &(phi, theta)) in specs.iter().enumerate() {
        let (mut prev, mut prev_e) = (0.0, 0.0);
        for t in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e + theta * prev_e;
            prev_e = e;
            s[(t, j)] = prev;
        }
    }
    let a = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
    (MultivariateSeries::from_values(&s * a.transpose()).unwrap(), a)
}

#[test]
fn converged_run_has_diagonal_scatters_at_fitted_lags() {
    let (x, _) = arma_mixture(4000, 21);
    let params = Parametrization::new(1.0, tbss_core::LagSet::range(1, 6), tbss_core::LagSet::range(1, 1));
    let run = solve(&x, &params, &SolveOptions::default()).unwrap();
    assert!(run.is_converged());
    let profile = diagonality_profile(&run, &x, None).unwrap();
    assert_eq!(profile.lags, (1..=200).collect::<Vec<_>>());
    assert!(profile.sobi[..3].iter().all(|&v| v < 0.05), "{:?}", &profile.sobi[..6]);
    assert!(profile.sobi.iter().chain(&profile.vsobi).all(|v| (0.0..=1.0).contains(v)));

    // A random unmixing leaves visible off-diagonal mass at the same lags.
    let mut scrambled: RunResult = run.clone();
    let w = run.unmixing.clone().unwrap();
    let rot = tbss_core::solver::random_orthogonal(3, 4);
    scrambled.unmixing = Some(rot * w);
    let other = diagonality_profile(&scrambled, &x, Some(&[1, 2, 3])).unwrap();
    assert!(other.sobi.iter().zip(&profile.sobi).all(|(a, b)| a > b));
}
