//! Trains a joint model briefly and prints the per-word filtration weights
//! and reasoning influence for a few held-out pairs.
//!
//! cargo run --release --example inspect_alignments -- [epochs] [seed] [pairs]

use sgraf::data::{generate_synthetic_corpus, SyntheticSpec, TokenKind};
use sgraf::inspect::inspect_pair;
use sgraf::train::train;
use sgraf::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(30);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let pairs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(3);

    let synth = generate_synthetic_corpus(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let (train_set, held_out) = synth.split(150)?;
    let config = RunConfig { epochs, seed, ..RunConfig::toy() };
    let model = train(&train_set.corpus, None, &config, &mut |_| {})?.models.remove(0);

    for c in 0..pairs.min(held_out.corpus.captions.len()) {
        let image = held_out.corpus.image_of_text()[c];
        let rec = inspect_pair(&model, &held_out.corpus, image, c)?;
        println!("pair ({image}, {c})  AVE {:.3}  SAF {:.3}  SGR {:.3}", rec.scores.ave.unwrap(), rec.scores.saf.unwrap(), rec.scores.sgr.unwrap());
        println!("  {:<12} {:>7} {:>9}", "token", "beta", "influence");
        let caption = &held_out.corpus.captions[c];
        for (i, n) in rec.nodes.iter().enumerate() {
            let tag = match caption.get(i).map(|&t| held_out.token_kind(t)) {
                Some(TokenKind::Filler) => " filler",
                _ => "",
            };
            println!("  {:<12} {:>7.4} {:>9.4}{tag}", n.token, n.beta.unwrap(), n.influence.unwrap());
        }
        println!("  json: {}", rec.to_json_line());
    }
    Ok(())
}
