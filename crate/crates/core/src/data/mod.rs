//! Corpus storage: feature bank, captions, manifest and vocabulary.

pub mod featbank;
pub mod synthetic;
pub mod text;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use featbank::{read_feature_bank, write_feature_bank, FeatureBank};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec, TokenKind};
pub use text::Vocab;

use crate::tensor::Tensor;

/// Environment variable naming the default corpus root.
pub const DATA_DIR_ENV: &str = "SGRAF_DATA_DIR";

pub const FEATURES_FILE: &str = "features.bin";
pub const CAPTIONS_FILE: &str = "captions.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated file: need {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl DataError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

/// Images with their captions.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub bank: FeatureBank,
    pub captions: Vec<Vec<usize>>,
    /// `manifest[i]` lists the caption indices of image `i`.
    pub manifest: Vec<Vec<usize>>,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn new(bank: FeatureBank, captions: Vec<Vec<usize>>, manifest: Vec<Vec<usize>>, vocab: Vocab) -> Result<Self, DataError> {
        let c = Self {
            bank,
            captions,
            manifest,
            vocab,
        };
        c.validate()?;
        Ok(c)
    }

    /// Every caption belongs to exactly one existing image and every token
    /// id is in the vocabulary.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.manifest.len() != self.bank.len() {
            return Err(DataError::Inconsistent(format!(
                "manifest lists {} images, feature bank holds {}",
                self.manifest.len(),
                self.bank.len()
            )));
        }
        let mut owner = vec![None; self.captions.len()];
        for (i, caps) in self.manifest.iter().enumerate() {
            for &c in caps {
                match owner.get_mut(c) {
                    None => {
                        return Err(DataError::Inconsistent(format!(
                            "image {i} references caption {c} of {}",
                            self.captions.len()
                        )))
                    }
                    Some(Some(prev)) => {
                        return Err(DataError::Inconsistent(format!("caption {c} listed by images {prev} and {i}")))
                    }
                    Some(slot) => *slot = Some(i),
                }
            }
        }
        if let Some(c) = owner.iter().position(Option::is_none) {
            return Err(DataError::Inconsistent(format!("caption {c} has no image")));
        }
        for (n, cap) in self.captions.iter().enumerate() {
            if let Some(&t) = cap.iter().find(|&&t| t >= self.vocab.len()) {
                return Err(DataError::Inconsistent(format!(
                    "caption {n} uses token {t} outside a vocabulary of {}",
                    self.vocab.len()
                )));
            }
        }
        Ok(())
    }

    pub fn image_count(&self) -> usize {
        self.bank.len()
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.bank.image(i)
    }

    pub fn images(&self) -> Vec<Tensor> {
        (0..self.image_count()).map(|i| self.image(i)).collect()
    }

    /// Ground-truth image of each caption.
    pub fn image_of_text(&self) -> Vec<usize> {
        let mut out = vec![0; self.captions.len()];
        for (i, caps) in self.manifest.iter().enumerate() {
            for &c in caps {
                out[c] = i;
            }
        }
        out
    }

    /// `(image, caption)` training pairs in caption order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.image_of_text().into_iter().enumerate().map(|(c, i)| (i, c)).collect()
    }

    /// Sub-corpus with the given images (and their captions), re-indexed.
    pub fn select(&self, images: &[usize]) -> Corpus {
        let mut captions = Vec::new();
        let mut manifest = Vec::with_capacity(images.len());
        for &i in images {
            let mut ids = Vec::new();
            for &c in &self.manifest[i] {
                ids.push(captions.len());
                captions.push(self.captions[c].clone());
            }
            manifest.push(ids);
        }
        Corpus {
            bank: self.bank.select(images),
            captions,
            manifest,
            vocab: self.vocab.clone(),
        }
    }

    /// First `n` images and the rest.
    pub fn split(&self, n: usize) -> Result<(Corpus, Corpus), DataError> {
        if n > self.image_count() {
            return Err(DataError::Inconsistent(format!("split at {n} of {} images", self.image_count())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.image_count()).collect();
        Ok((self.select(&head), self.select(&tail)))
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_feature_bank(&self.bank, dir.join(FEATURES_FILE))?;
        text::write_text(&dir.join(CAPTIONS_FILE), &text::captions_to_text(&self.captions))?;
        text::write_text(&dir.join(MANIFEST_FILE), &text::manifest_to_text(&self.manifest))?;
        text::write_text(&dir.join(VOCAB_FILE), &self.vocab.to_text())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, DataError> {
        let dir = dir.as_ref();
        let bank = read_feature_bank(dir.join(FEATURES_FILE))?;
        let captions = text::parse_captions(&text::read_text(&dir.join(CAPTIONS_FILE))?)?;
        let manifest = text::parse_manifest(&text::read_text(&dir.join(MANIFEST_FILE))?)?;
        let vocab = Vocab::parse(&text::read_text(&dir.join(VOCAB_FILE))?)?;
        Corpus::new(bank, captions, manifest, vocab)
    }
}

/// Corpus root from the environment, if set.
pub fn default_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}
