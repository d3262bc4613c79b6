//! Randomized checks of the layer discrepancy bounds, the GCN witness
//! search and the buffer edge-awareness and stability conditions.
//!
//! ```text
//! cargo run --release --example bounds
//! ```

use aggbuf::analysis::{bound_suite, condition_suite, witness_suite, SuiteOptions};

fn main() -> aggbuf::Result<()> {
    let opts = SuiteOptions::default();
    println!("{:<22} {:>7} {:>10} {:>10}", "bound", "trials", "violations", "max ratio");
    for r in bound_suite(&opts)? {
        println!("{:<22} {:>7} {:>10} {:>10.4}", r.arch, r.trials, r.violations, r.max_ratio);
    }

    let w = witness_suite(&opts)?;
    println!("\nwitness: {}/{} instances, at most {} attempts", w.found, w.instances, w.max_attempts_used);

    println!("\n{:<9} {:>9} {:>6} {:>6}", "variant", "qualified", "C1", "C2");
    for c in condition_suite(&opts)? {
        println!("{:<9} {:>9} {:>6} {:>6}", c.variant.name(), c.qualified, c.c1_failures, c.c2_failures);
    }
    Ok(())
}
