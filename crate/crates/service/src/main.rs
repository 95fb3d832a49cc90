use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use tbss_service::{api, Config, Workbench};

#[derive(Debug, Parser)]
#[command(name = "tbss-server", version, about = "Temporal blind source separation workbench server")]
struct Args {
    /// TCP port to listen on.
    #[arg(long, env = "TBSS_PORT", default_value_t = 8080)]
    port: u16,
    /// Directory for persisted sessions; state stays in memory when unset.
    #[arg(long, env = "TBSS_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Solver worker threads (default: available cores).
    #[arg(long, env = "TBSS_WORKERS")]
    workers: Option<usize>,
    /// Seed for the random seed parametrizations of new datasets.
    #[arg(long, env = "TBSS_SEED", default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = Config { data_dir: args.data_dir, seed: args.seed, ..Config::default() };
    if let Some(w) = args.workers {
        config.workers = w.max(1);
    }
    let workers = config.workers;
    let bench = tokio::task::spawn_blocking(move || Workbench::open(config)).await??;
    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr} with {workers} workers");
    axum::serve(listener, api::router(bench))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let a = Args::try_parse_from(["tbss-server", "--port", "9000", "--workers", "3", "--seed", "7", "--data-dir", "/tmp/x"]).unwrap();
        assert_eq!((a.port, a.workers, a.seed), (9000, Some(3), 7));
        assert_eq!(a.data_dir, Some(PathBuf::from("/tmp/x")));
    }
}
