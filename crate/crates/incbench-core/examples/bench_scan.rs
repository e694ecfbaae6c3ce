//! Scanner throughput check over one 2^26-bit string.
//!
//! `cargo run --release --example bench_scan [seed] [threads]`

use incbench_core::{csstest, sources};
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let threads: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let t0 = Instant::now();
    let input = sources::hashctr_bits(seed, 1 << 26);
    println!("generate 2^26 hashctr bits (seed {seed}): {:?}", t0.elapsed());

    let t1 = Instant::now();
    let report = csstest::scan(
        &input,
        &csstest::DEFAULT_COMPOSITES,
        1,
        &csstest::ScanOptions {
            threads,
            ..Default::default()
        },
    )
    .unwrap();
    println!(
        "scan all {} composites at step 1 with {threads} thread(s): {:?}",
        csstest::DEFAULT_COMPOSITES.len(),
        t1.elapsed()
    );
    for (n, c) in &report.per_composite {
        if c.zliar_count > 0 {
            println!("  n={n}: {} Z-liar(s) at {:?}", c.zliar_count, c.positions);
        }
    }
    println!("average metric: {}", report.average_metric);
}
