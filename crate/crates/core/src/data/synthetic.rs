//! Seeded toy corpus of concept images and captions.
//!
//! Every concept has a prototype region vector and one or more words. A pair
//! draws a concept subset; its image repeats the concepts' prototypes plus
//! noise, padded with random distractor regions, and its caption cycles the
//! concept words with filler tokens inserted at random positions. Filler
//! tokens are drawn independently of the image.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, FeatureBank, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub concepts_per_pair: usize,
    pub pairs: usize,
    /// Regions per image, K.
    pub regions: usize,
    /// How many of the K regions are pure noise.
    pub distractor_regions: usize,
    pub d_raw: usize,
    /// Caption length L.
    pub caption_len: usize,
    /// Share of the L positions holding filler tokens (rounded).
    pub filler_fraction: f64,
    pub filler_pool: usize,
    pub words_per_concept: usize,
    /// Standard deviation of the noise added to prototype regions.
    pub region_noise: f64,
    /// Probability that a concept slot carries a random filler instead.
    pub word_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            concepts: 20,
            concepts_per_pair: 2,
            pairs: 200,
            regions: 8,
            distractor_regions: 2,
            d_raw: 32,
            caption_len: 7,
            filler_fraction: 0.3,
            filler_pool: 10,
            words_per_concept: 1,
            region_noise: 0.3,
            word_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn filler_count(&self) -> usize {
        (self.filler_fraction * self.caption_len as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Inconsistent(m));
        if self.concepts_per_pair == 0 || self.concepts_per_pair > self.concepts {
            return fail(format!(
                "{} concepts per pair out of {}",
                self.concepts_per_pair, self.concepts
            ));
        }
        if self.pairs == 0 || self.d_raw == 0 || self.words_per_concept == 0 {
            return fail("pairs, d_raw and words_per_concept must be positive".into());
        }
        if self.distractor_regions + self.concepts_per_pair > self.regions {
            return fail(format!(
                "{} regions cannot show {} concepts and {} distractors",
                self.regions, self.concepts_per_pair, self.distractor_regions
            ));
        }
        if !(0.0..=1.0).contains(&self.filler_fraction) || !(0.0..=1.0).contains(&self.word_noise) {
            return fail("filler_fraction and word_noise must lie in [0, 1]".into());
        }
        if self.caption_len < self.filler_count() + self.concepts_per_pair {
            return fail(format!(
                "caption of {} tokens cannot hold {} fillers and {} concepts",
                self.caption_len,
                self.filler_count(),
                self.concepts_per_pair
            ));
        }
        if self.filler_pool == 0 && (self.filler_count() > 0 || self.word_noise > 0.0) {
            return fail("filler tokens requested with an empty filler pool".into());
        }
        if !(self.region_noise >= 0.0 && self.region_noise.is_finite()) {
            return fail(format!("region noise {}", self.region_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Special,
    Concept(usize),
    Filler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Concept subset of each pair.
    pub concepts: Vec<Vec<usize>>,
    /// Word ids of each concept.
    pub concept_words: Vec<Vec<usize>>,
    pub filler_words: Vec<usize>,
    pub spec: SyntheticSpec,
}

impl SyntheticCorpus {
    pub fn token_kind(&self, id: usize) -> TokenKind {
        let first_concept = 2;
        let first_filler = first_concept + self.spec.concepts * self.spec.words_per_concept;
        if id < first_concept {
            TokenKind::Special
        } else if id < first_filler {
            TokenKind::Concept((id - first_concept) / self.spec.words_per_concept)
        } else {
            TokenKind::Filler
        }
    }

    /// Mean fraction of shared concepts over all unmatched pairs.
    pub fn mean_negative_overlap(&self) -> f64 {
        let n = self.concepts.len();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let shared = self.concepts[a].iter().filter(|c| self.concepts[b].contains(c)).count();
                    total += shared as f64 / self.spec.concepts_per_pair as f64;
                }
            }
        }
        total / (n * (n - 1)) as f64
    }

    /// Training and held-out halves split at image `n`, each with its concepts.
    pub fn split(&self, n: usize) -> Result<(SyntheticCorpus, SyntheticCorpus), DataError> {
        let (a, b) = self.corpus.split(n)?;
        let part = |corpus: Corpus, concepts: &[Vec<usize>]| SyntheticCorpus {
            corpus,
            concepts: concepts.to_vec(),
            concept_words: self.concept_words.clone(),
            filler_words: self.filler_words.clone(),
            spec: self.spec.clone(),
        };
        Ok((part(a, &self.concepts[..n]), part(b, &self.concepts[n..])))
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Concept subsets for every pair: all subsets are used once in shuffled
/// order before any repeats (when there are few enough to enumerate).
fn draw_subsets(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let (n, k) = (spec.concepts, spec.concepts_per_pair);
    if binomial(n, k) > 1e5 {
        return (0..spec.pairs)
            .map(|_| {
                let mut s = index::sample(rng, n, k).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
    }
    let all = combinations(n, k);
    let mut out = Vec::with_capacity(spec.pairs);
    while out.len() < spec.pairs {
        let mut pool = all.clone();
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(spec.pairs - out.len()));
    }
    out
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut tokens = vec!["<unk>".to_owned(), "<pad>".to_owned()];
    let mut concept_words = Vec::with_capacity(spec.concepts);
    for c in 0..spec.concepts {
        let mut ids = Vec::new();
        for w in 0..spec.words_per_concept {
            ids.push(tokens.len());
            tokens.push(if spec.words_per_concept == 1 {
                format!("concept{c:02}")
            } else {
                format!("concept{c:02}.{w}")
            });
        }
        concept_words.push(ids);
    }
    let filler_words: Vec<usize> = (0..spec.filler_pool)
        .map(|f| {
            tokens.push(format!("filler{f:02}"));
            tokens.len() - 1
        })
        .collect();
    let vocab = Vocab::new(tokens)?;

    let prototypes: Vec<Vec<f64>> = (0..spec.concepts)
        .map(|_| (0..spec.d_raw).map(|_| gauss(&mut rng)).collect())
        .collect();
    let subsets = draw_subsets(spec, &mut rng);

    let mut bank = FeatureBank::new(spec.regions, spec.d_raw)?;
    let mut captions = Vec::with_capacity(spec.pairs);
    let concept_rows = spec.regions - spec.distractor_regions;
    for subset in &subsets {
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(spec.regions);
        for r in 0..concept_rows {
            let proto = &prototypes[subset[r % subset.len()]];
            rows.push(
                proto
                    .iter()
                    .map(|&p| (p + spec.region_noise * gauss(&mut rng)) as f32)
                    .collect(),
            );
        }
        for _ in 0..spec.distractor_regions {
            rows.push((0..spec.d_raw).map(|_| gauss(&mut rng) as f32).collect());
        }
        rows.shuffle(&mut rng);
        bank.push(&rows.concat())?;

        let fillers = spec.filler_count();
        let filler_at = index::sample(&mut rng, spec.caption_len, fillers).into_vec();
        let mut order = subset.clone();
        order.shuffle(&mut rng);
        let mut slot = 0;
        let caption = (0..spec.caption_len)
            .map(|pos| {
                if filler_at.contains(&pos) {
                    return filler_words[rng.gen_range(0..filler_words.len())];
                }
                let c = order[slot % order.len()];
                slot += 1;
                if spec.word_noise > 0.0 && rng.gen_bool(spec.word_noise) {
                    return filler_words[rng.gen_range(0..filler_words.len())];
                }
                let words = &concept_words[c];
                words[rng.gen_range(0..words.len())]
            })
            .collect();
        captions.push(caption);
    }
    let manifest = (0..spec.pairs).map(|i| vec![i]).collect();
    Ok(SyntheticCorpus {
        corpus: Corpus::new(bank, captions, manifest, vocab)?,
        concepts: subsets,
        concept_words,
        filler_words,
        spec: spec.clone(),
    })
}
