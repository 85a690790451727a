use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use aif_core::agent::run_experiment;
use aif_core::harness::{emit_charts, parse_cli, write_metrics, Command, Config, Manifest};

fn run(config: &Config, charts: bool) -> Result<()> {
    let settings = config.settings()?;
    let start = Instant::now();
    let exp = run_experiment(&settings)?;
    let (dir, _) = write_metrics(&exp, config)?;
    if charts {
        emit_charts(&dir, None)?;
    }
    let rate = exp.success_rate();
    let tail = &rate[rate.len() * 3 / 4..];
    println!(
        "{} {} agents on {}: {} runs x {} episodes in {:.1}s",
        config.exp_name,
        config.agent_kind,
        config.env_layout,
        config.num_runs,
        config.num_episodes,
        start.elapsed().as_secs_f64()
    );
    println!(
        "success rate: overall {:.3}, last quarter {:.3}",
        rate.iter().sum::<f64>() / rate.len() as f64,
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let command = parse_cli(std::env::args_os()).unwrap_or_else(|e| e.exit());
    match command {
        Command::Run { config, charts } => run(&config, charts),
        Command::Rerun {
            manifest,
            out_dir,
            charts,
        } => {
            let mut config = Manifest::read(Path::new(&manifest))
                .with_context(|| format!("reading {}", manifest.display()))?
                .config;
            if let Some(dir) = out_dir {
                config.out_dir = dir;
            }
            run(&config, charts)
        }
        Command::Charts { dir, selection } => {
            for path in emit_charts(&dir, selection.as_deref())? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
