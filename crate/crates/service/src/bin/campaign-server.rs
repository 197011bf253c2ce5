use std::path::PathBuf;

use alkgp_service::{AppState, ServiceConfig};
use anyhow::Context;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let path = config_path(std::env::args().skip(1))?;
    let config = ServiceConfig::load(path.as_deref())?;
    let workers = config.worker_threads();
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers)
        .max_blocking_threads(workers)
        .enable_all()
        .build()?
        .block_on(run(config))
}

fn config_path(mut args: impl Iterator<Item = String>) -> anyhow::Result<Option<PathBuf>> {
    let mut path = std::env::var_os("ALKGP_CONFIG").map(PathBuf::from);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--config" | "-c" => path = Some(args.next().context("--config needs a path")?.into()),
            "--help" | "-h" => {
                println!("usage: campaign-server [--config FILE]\n\nEnvironment: ALKGP_CONFIG, ALKGP_BIND, ALKGP_PORT, ALKGP_DATA_DIR, ALKGP_WORKERS, ALKGP_UI_DIR");
                std::process::exit(0);
            }
            other => anyhow::bail!("unexpected argument {other:?}"),
        }
    }
    Ok(path)
}

async fn run(config: ServiceConfig) -> anyhow::Result<()> {
    let addr = format!("{}:{}", config.bind, config.port);
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    alkgp_service::serve(state, listener, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await?;
    Ok(())
}
