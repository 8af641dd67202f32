//! Generates the toy corpus, trains a joint model and reports recall on the
//! training and held-out splits.
//!
//! cargo run --release --example train_synthetic -- [epochs] [seed]

use std::time::Instant;

use sgraf::data::{generate_synthetic_corpus, SyntheticSpec};
use sgraf::train::{evaluate, train, LOG_HEADER};
use sgraf::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(50);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let batch_size = args.next().map(|a| a.parse()).transpose()?.unwrap_or(RunConfig::toy().batch_size);
    let learning_rate = args.next().map(|a| a.parse()).transpose()?.unwrap_or(RunConfig::toy().learning_rate);

    let corpus = generate_synthetic_corpus(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let (train_set, held_out) = corpus.split(150)?;
    let config = RunConfig {
        epochs,
        seed,
        batch_size,
        learning_rate,
        ..RunConfig::toy()
    };

    let start = Instant::now();
    println!("{LOG_HEADER}");
    let out = train(&train_set.corpus, None, &config, &mut |e| println!("{}", e.csv_line()))?;
    let model = &out.models[0];
    println!("trained in {:.1?}", start.elapsed());
    println!("training split\n{}", evaluate(model, &train_set.corpus, 1)?);
    println!("held-out split\n{}", evaluate(model, &held_out.corpus, 1)?);
    Ok(())
}
