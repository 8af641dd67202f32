//! Trains separate SGR and SAF models, then compares each against their
//! averaged scores, with a fold-averaged protocol on the held-out images.
//!
//! cargo run --release --example split_fusion -- [epochs] [seed] [folds]

use sgraf::config::Strategy;
use sgraf::data::{generate_synthetic_corpus, SyntheticSpec};
use sgraf::eval::{fold_recall, fuse_scores, DEFAULT_KS};
use sgraf::train::train;
use sgraf::{RunConfig, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(30);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let folds = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5);

    let synth = generate_synthetic_corpus(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let (train_set, held_out) = synth.split(150)?;
    let config = RunConfig {
        epochs,
        seed,
        strategy: Strategy::Split,
        ..RunConfig::toy()
    };
    let out = train(&train_set.corpus, Some(&held_out.corpus), &config, &mut |e| println!("{}", e.csv_line()))?;

    let corpus = &held_out.corpus;
    let images = corpus.images();
    let imgs: Vec<&Tensor> = images.iter().collect();
    let txts: Vec<&[usize]> = corpus.captions.iter().map(Vec::as_slice).collect();
    let mut scores = Vec::new();
    for m in &out.models {
        scores.push((m.name.clone(), m.score_raw(&imgs, &txts, 1)?.combined()?));
    }
    let fused = fuse_scores(&scores[0].1, &scores[1].1)?;
    scores.push(("sgr+saf".into(), fused));
    let truth = corpus.image_of_text();
    for (name, s) in &scores {
        let (mean, _) = fold_recall(s, &truth, folds, &DEFAULT_KS)?;
        println!("{name}, {folds} folds\n{mean}");
    }
    Ok(())
}
