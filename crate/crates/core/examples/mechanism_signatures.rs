//! Compares one and three reasoning steps on held-out recall, then reports
//! how the filtration weights split between filler and concept words.
//!
//! cargo run --release --example mechanism_signatures -- [epochs] [seed]

use sgraf::data::{generate_synthetic_corpus, SyntheticSpec};
use sgraf::inspect::mean_beta_by_kind;
use sgraf::train::{evaluate, train};
use sgraf::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(50);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let corpus = generate_synthetic_corpus(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let (train_set, held_out) = corpus.split(150)?;
    for steps in [1, 3] {
        let config = RunConfig {
            epochs,
            seed,
            steps,
            ..RunConfig::toy()
        };
        let model = train(&train_set.corpus, None, &config, &mut |_| {})?.models.remove(0);
        let recall = evaluate(&model, &held_out.corpus, 1)?;
        println!("steps={steps} held-out rsum {:.2}", 100.0 * recall.rsum());
        let (filler, concept) = mean_beta_by_kind(&model, &train_set)?;
        println!("  mean beta: filler {filler:.4}, concept {concept:.4}");
    }
    Ok(())
}
