//! Line-oriented vocabulary, caption and manifest files.

use std::collections::HashMap;
use std::path::Path;

use super::DataError;

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary; `tokens[0]` serves as the unknown token.
    pub fn new(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.is_empty() {
            return Err(DataError::Inconsistent("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(DataError::Inconsistent(format!("token {i} {t:?} is empty or has whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::Inconsistent(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(self.tokens[UNK].as_str(), String::as_str)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        Self::new(text.lines().map(str::to_owned).collect())
    }
}

fn ids_line(ids: &[usize]) -> String {
    let mut s = ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

fn parse_ids(text: &str, file: &str) -> Result<Vec<Vec<usize>>, DataError> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| DataError::Parse {
                        file: file.to_owned(),
                        line: n + 1,
                        message: format!("{t:?} is not an index"),
                    })
                })
                .collect()
        })
        .collect()
}

/// One caption per line as space-separated token ids.
pub fn captions_to_text(captions: &[Vec<usize>]) -> String {
    captions.iter().map(|c| ids_line(c)).collect()
}

pub fn parse_captions(text: &str) -> Result<Vec<Vec<usize>>, DataError> {
    let caps = parse_ids(text, "captions")?;
    if let Some(n) = caps.iter().position(Vec::is_empty) {
        return Err(DataError::Parse {
            file: "captions".into(),
            line: n + 1,
            message: "empty caption".into(),
        });
    }
    Ok(caps)
}

/// One image per line listing its caption indices.
pub fn manifest_to_text(manifest: &[Vec<usize>]) -> String {
    manifest.iter().map(|c| ids_line(c)).collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<Vec<usize>>, DataError> {
    parse_ids(text, "manifest")
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_round_trip_and_unk() {
        let v = Vocab::new(vec!["<unk>".into(), "a".into(), "dog".into()]).unwrap();
        assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
        assert_eq!(v.encode("a cat dog"), vec![1, 0, 2]);
        assert_eq!(v.token(99), "<unk>");
        assert!(Vocab::new(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn id_files_round_trip() {
        let caps = vec![vec![3, 1, 4], vec![1, 5]];
        assert_eq!(parse_captions(&captions_to_text(&caps)).unwrap(), caps);
        let man = vec![vec![0], vec![1, 2], vec![]];
        assert_eq!(parse_manifest(&manifest_to_text(&man)).unwrap(), man);
        assert!(matches!(parse_captions("1 2\n\n"), Err(DataError::Parse { line: 2, .. })));
        assert!(matches!(parse_manifest("1 x\n"), Err(DataError::Parse { line: 1, .. })));
    }
}
