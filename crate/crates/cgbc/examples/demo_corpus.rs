//! Writes a synthetic labeled Solidity corpus for trying the pipeline:
//!
//! ```sh
//! cargo run -p cgbc --example demo_corpus -- demo/corpus 60 7
//! ```

use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args.next().unwrap_or_else(|| "demo/corpus".into()).into();
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    match cgbc::synth::write_corpus(&dir, count, seed) {
        Ok(contracts) => {
            println!(
                "wrote {} contracts and labels.csv under {}",
                contracts.len(),
                dir.display()
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(3);
        }
    }
}
