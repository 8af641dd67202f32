//! Writes a synthetic corpus to disk, reads it back and checks that the
//! feature bank survives bit for bit.
//!
//! cargo run --example corpus_io -- [out_dir] [seed]

use sgraf::data::{generate_synthetic_corpus, Corpus, SyntheticSpec, TokenKind, FEATURES_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sgraf_corpus"));
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let synth = generate_synthetic_corpus(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let corpus = &synth.corpus;
    corpus.write_dir(&out)?;
    let back = Corpus::read_dir(&out)?;
    let size = std::fs::metadata(out.join(FEATURES_FILE))?.len();

    println!("{} images, K={}, d_raw={}", corpus.image_count(), corpus.bank.k(), corpus.bank.d_raw());
    println!("{} captions over a vocabulary of {}", corpus.captions.len(), corpus.vocab.len());
    println!("{FEATURES_FILE}: {size} bytes, round trip identical: {}", back == *corpus);
    println!("mean concept overlap between non-matching pairs: {:.3}", synth.mean_negative_overlap());
    for c in 0..3 {
        let words: Vec<String> = corpus.captions[c]
            .iter()
            .map(|&t| match synth.token_kind(t) {
                TokenKind::Filler => format!("({})", corpus.vocab.token(t)),
                _ => corpus.vocab.token(t).to_string(),
            })
            .collect();
        println!("caption {c} (concepts {:?}): {}", synth.concepts[c], words.join(" "));
    }
    println!("written to {}", out.display());
    Ok(())
}
