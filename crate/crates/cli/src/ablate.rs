//! Ablation runner: trains the five module combinations over a seed list
//! from a shared base config and writes the twin reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use segadapt::ablation::{run_ablation, AblationSpec};
use segadapt::config::RunConfig;
use segadapt::error::Error;

#[derive(Parser)]
#[command(
    name = "segadapt-ablate",
    version,
    about = "Train Base / +DDF(CNN) / +DDF(Efficient) / +PRW / +DDF+PRW over a seed list and report target mIoU / mF1"
)]
struct Cli {
    /// Base JSON run configuration; each variant toggles its modules on top
    #[arg(long)]
    config: PathBuf,
    /// Training seeds (at least three)
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Report directory (also holds the per-run artifacts)
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidConfig(_) => 1,
                Error::Numeric(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let base = RunConfig::from_file(&cli.config)?;
    let spec = AblationSpec { base, seeds: cli.seeds, out_dir: cli.out.clone() };
    let report = run_ablation::<f32>(&spec)?;
    print!("{}", report.to_markdown());
    println!("\nreports written under {}", cli.out.display());
    Ok(())
}
