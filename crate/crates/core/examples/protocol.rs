//! Runs the synthetic protocol end to end and prints the comparison table.
//!
//! cargo run --release -p culprit --example protocol -- [signal] [seed]

use culprit::protocol::{run, ProtocolConfig};

fn main() -> culprit::Result<()> {
    let mut args = std::env::args().skip(1);
    let signal: f64 = args.next().map_or(0.8, |s| s.parse().expect("signal"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let mut config = ProtocolConfig::with_seed(seed);
    config.synth.signal_strength = signal;
    let out = run(&config)?;
    println!("untrained test loss {:.4}", out.untrained.mean_loss);
    print!("{}", out.report.to_metrics_text());
    print!("{}", out.comparison.to_text());
    println!("elapsed {:.1}s", out.elapsed.as_secs_f64());
    Ok(())
}
