#![allow(dead_code)]

use std::time::Duration;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tbss_core::solver::SolveOptions;
use tbss_service::{Config, Workbench};

pub const WAIT: Duration = Duration::from_secs(120);

/// Daily CSV of three mixed sources: two AR(1) series and a stochastic
/// volatility series.
pub fn mixed_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = || -> f64 { StandardNormal.sample(&mut rng) };
    let (mut a, mut b, mut h) = (0.0, 0.0, 0.0);
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut out = String::from("date,x1,x2,x3\n");
    for t in 0..n {
        a = 0.8 * a + e();
        b = -0.5 * b + e();
        h = 0.95 * h + 0.3 * e();
        let s = (h / 2.0_f64).exp() * e();
        let x = [a + 0.4 * b + 0.2 * s, 0.3 * a - b + 0.5 * s, 0.2 * a + 0.1 * b + s];
        let date = start + Days::new(t as u64);
        out.push_str(&format!("{date},{},{},{}\n", x[0], x[1], x[2]));
    }
    out
}

pub fn config(workers: usize) -> Config {
    Config { data_dir: None, workers, seed: 3, solve: SolveOptions::default() }
}

/// A workbench whose solver gives up after one iteration, so every run fails.
pub fn failing_config() -> Config {
    Config { solve: SolveOptions { max_iter: 1, restarts: 0, ..SolveOptions::default() }, ..config(2) }
}

pub fn bench() -> Workbench {
    Workbench::open(config(2)).unwrap()
}
