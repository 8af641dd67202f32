//! Finite-difference check of the full joint loss on toy dimensions.
//!
//! cargo run --release --example gradient_check -- [seed] [samples_per_param]

use sgraf::gradcheck::{check_joint_loss, toy_check_config, GradCheckOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let samples = args.next().map(|a| a.parse()).transpose()?;
    let opts = GradCheckOptions {
        seed,
        samples_per_param: samples,
        ..GradCheckOptions::default()
    };
    let report = check_joint_loss(&toy_check_config(), seed, &opts)?;
    println!("{report}");
    println!("{} entries compared, {} on kinks", report.checked(), report.non_comparable());
    Ok(())
}
