//! Bidirectional Recall@K, score fusion and the fold protocol.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Recall fractions for each K. `i2t` is sentence retrieval (image
/// queries), `t2i` is image retrieval (text queries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub ks: Vec<usize>,
    pub i2t: Vec<f64>,
    pub t2i: Vec<f64>,
}

impl Recall {
    /// Sum of all recalls in both directions.
    pub fn rsum(&self) -> f64 {
        self.i2t.iter().chain(&self.t2i).sum()
    }

    pub fn at(&self, k: usize) -> Option<(f64, f64)> {
        let p = self.ks.iter().position(|&x| x == k)?;
        Some((self.i2t[p], self.t2i[p]))
    }

    /// Element-wise mean of several recalls over the same K list.
    pub fn mean(all: &[Recall]) -> Result<Recall, Error> {
        let first = all.first().ok_or_else(|| Error::Invalid("no recalls to average".into()))?;
        if all.iter().any(|r| r.ks != first.ks) {
            return Err(Error::Invalid("recalls use different K lists".into()));
        }
        let n = all.len() as f64;
        let avg = |pick: fn(&Recall) -> &Vec<f64>| -> Vec<f64> {
            (0..first.ks.len()).map(|p| all.iter().map(|r| pick(r)[p]).sum::<f64>() / n).collect()
        };
        Ok(Recall {
            ks: first.ks.clone(),
            i2t: avg(|r| &r.i2t),
            t2i: avg(|r| &r.t2i),
        })
    }

    /// Comma-separated values `i2t@K..., t2i@K...`.
    pub fn csv_fields(&self) -> String {
        self.i2t
            .iter()
            .chain(&self.t2i)
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn csv_header(&self) -> String {
        ["i2t", "t2i"]
            .iter()
            .flat_map(|d| self.ks.iter().map(move |k| format!("{d}_r{k}")))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Recall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "direction")?;
        for k in &self.ks {
            write!(f, " {:>7}", format!("R@{k}"))?;
        }
        writeln!(f)?;
        for (name, vals) in [("i2t", &self.i2t), ("t2i", &self.t2i)] {
            write!(f, "{name:<10}")?;
            for v in vals {
                write!(f, " {:>7.2}", 100.0 * v)?;
            }
            writeln!(f)?;
        }
        write!(f, "rsum       {:.2}", 100.0 * self.rsum())
    }
}

/// Position of `target` among candidates sorted by descending score,
/// ties broken by lower index.
fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < target))
        .count()
}

/// Recall@K in both directions.
///
/// `scores` is `[n_img × n_txt]` and `image_of_text[j]` is the ground-truth
/// image of caption `j`. An image query hits when any of its captions ranks
/// within the top K.
pub fn recall_at_k(scores: &Tensor, image_of_text: &[usize], ks: &[usize]) -> Result<Recall, Error> {
    let (ni, nt) = scores.dims2();
    if image_of_text.len() != nt {
        return Err(Error::Invalid(format!(
            "{} ground-truth entries for {nt} captions",
            image_of_text.len()
        )));
    }
    if let Some(&bad) = image_of_text.iter().find(|&&i| i >= ni) {
        return Err(Error::Invalid(format!("caption assigned to image {bad} of {ni}")));
    }
    let mut captions = vec![Vec::new(); ni];
    for (j, &i) in image_of_text.iter().enumerate() {
        captions[i].push(j);
    }
    if let Some(i) = captions.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("image {i} has no ground-truth caption")));
    }
    let i2t_ranks: Vec<usize> = (0..ni)
        .map(|i| {
            let row = scores.row_slice(i);
            captions[i].iter().map(|&j| rank_of(row, j)).min().unwrap()
        })
        .collect();
    let t2i_ranks: Vec<usize> = (0..nt)
        .map(|j| {
            let col: Vec<f64> = (0..ni).map(|i| scores.get(i, j)).collect();
            rank_of(&col, image_of_text[j])
        })
        .collect();
    let frac = |ranks: &[usize], k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64;
    Ok(Recall {
        ks: ks.to_vec(),
        i2t: ks.iter().map(|&k| frac(&i2t_ranks, k)).collect(),
        t2i: ks.iter().map(|&k| frac(&t2i_ranks, k)).collect(),
    })
}

/// Element-wise mean of two score matrices.
pub fn fuse_scores(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_scores",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x + y) / 2.0).collect();
    Ok(Tensor::from_vec(a.shape().to_vec(), data))
}

/// Splits images into `folds` consecutive blocks of equal size (a trailing
/// remainder is dropped) and evaluates each block against its own captions.
/// Returns the mean and the per-fold recalls.
pub fn fold_recall(scores: &Tensor, image_of_text: &[usize], folds: usize, ks: &[usize]) -> Result<(Recall, Vec<Recall>), Error> {
    let ni = scores.rows();
    if folds == 0 || folds > ni {
        return Err(Error::Invalid(format!("{folds} folds for {ni} images")));
    }
    let size = ni / folds;
    let per_fold = (0..folds)
        .map(|f| {
            let images = f * size..(f + 1) * size;
            let texts: Vec<usize> = (0..image_of_text.len()).filter(|&j| images.contains(&image_of_text[j])).collect();
            let mut sub = Vec::with_capacity(size * texts.len());
            for i in images.clone() {
                sub.extend(texts.iter().map(|&j| scores.get(i, j)));
            }
            let gt: Vec<usize> = texts.iter().map(|&j| image_of_text[j] - images.start).collect();
            recall_at_k(&Tensor::matrix(size, texts.len(), sub), &gt, ks)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Recall::mean(&per_fold)?, per_fold))
}
