use anyhow::Result;
use burstsr::selftest::{run as run_checks, SelftestOptions};

use crate::SelftestArgs;

pub fn run(args: &SelftestArgs) -> Result<i32> {
    let report = run_checks(&SelftestOptions {
        size: args.size,
        trials: args.trials,
        seed: args.seed,
        break_warp_adjoint: args.break_warp_adjoint,
    })?;
    print!("{}", report.table());
    if report.passed() {
        println!("all checks passed");
        Ok(0)
    } else {
        println!("FAILED: {}", report.failures().join(", "));
        Ok(1)
    }
}
