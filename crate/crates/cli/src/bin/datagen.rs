//! Writes the Bouc-Wen SDOF benchmark table as CSV.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

#[derive(Parser)]
#[command(about = "Generate the nonlinear SDOF (Bouc-Wen) regression dataset")]
struct Args {
    /// Number of rows.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; `-` writes to stdout.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let ds = alkgp::boucwen::build_dataset(args.n, args.seed)?;
    if args.out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        ds.write_csv(&mut lock)?;
        lock.flush()?;
    } else {
        let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        let mut w = std::io::BufWriter::new(file);
        ds.write_csv(&mut w)?;
        w.flush()?;
        eprintln!("wrote {} rows to {}", ds.len(), args.out.display());
    }
    Ok(())
}
