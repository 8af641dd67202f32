//! Per-pair dumps of filtration weights and reasoning influence.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Direction;
use crate::data::{Corpus, SyntheticCorpus, TokenKind};
use crate::error::Error;
use crate::model::{Model, PairDetails};
use crate::sgr::Readout;
use crate::tensor::Tensor;

pub const GLOBAL_LABEL: &str = "<global>";

/// One alignment node of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    /// Word under t2i, `region k` under i2t, [`GLOBAL_LABEL`] for the global node.
    pub token: String,
    /// Filtration weight; absent without a SAF head.
    pub beta: Option<f64>,
    /// `1 − cos(final readout node, initial node)`, in `[0, 2]`; absent
    /// without a SGR head.
    pub influence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub ave: Option<f64>,
    pub saf: Option<f64>,
    pub sgr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub image: usize,
    pub caption: usize,
    pub nodes: Vec<NodeRecord>,
    pub scores: ScoreBlock,
}

impl InspectionRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("inspection records serialize")
    }
}

/// Node labels in node order: locals first, then the global node.
pub fn node_labels(model: &Model, corpus: &Corpus, caption: usize) -> Vec<String> {
    let cfg = &model.config;
    let mut labels = Vec::new();
    if cfg.use_local {
        match cfg.direction {
            Direction::T2I => labels.extend(corpus.captions[caption].iter().map(|&t| corpus.vocab.token(t).to_string())),
            Direction::I2T => labels.extend((0..corpus.bank.k()).map(|k| format!("region {k}"))),
        }
    }
    if cfg.use_global {
        labels.push(GLOBAL_LABEL.to_string());
    }
    labels
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine distance between the reasoned readout node and every initial node.
pub fn influence(initial: &Tensor, reasoned: &Tensor, readout: Readout) -> Vec<f64> {
    let m = reasoned.cols();
    let target: Vec<f64> = match readout {
        Readout::Global => reasoned.data()[(reasoned.rows() - 1) * m..].to_vec(),
        Readout::Mean => (0..m)
            .map(|j| (0..reasoned.rows()).map(|i| reasoned.data()[i * m + j]).sum::<f64>() / reasoned.rows() as f64)
            .collect(),
    };
    initial.data().chunks(m).map(|row| 1.0 - cosine(&target, row)).collect()
}

/// Mean over nodes of `sigmoid(node · w + b)`.
pub fn mean_node_score(nodes: &Tensor, w: &Tensor, b: f64) -> f64 {
    let m = nodes.cols();
    let total: f64 = nodes
        .data()
        .chunks(m)
        .map(|row| {
            let z = row.iter().zip(w.data()).map(|(x, y)| x * y).sum::<f64>() + b;
            1.0 / (1.0 + (-z).exp())
        })
        .sum();
    total / nodes.rows() as f64
}

/// Builds a record from already computed pair details.
///
/// The AVE score comes from the model's own averaging head when it has one,
/// otherwise from the SAF head applied to every node with uniform weights.
pub fn record_from_details(model: &Model, details: &PairDetails, labels: Vec<String>, image: usize, caption: usize) -> Result<InspectionRecord, Error> {
    let p = details.nodes.rows();
    if labels.len() != p {
        return Err(Error::Invalid(format!("{} labels for {p} nodes", labels.len())));
    }
    let influence = details.sgr_final.as_ref().map(|f| influence(&details.nodes, f, model.readout()));
    let ave = match (&details.ave, &model.saf) {
        (Some(a), _) => Some(*a),
        (None, Some(s)) => Some(mean_node_score(&details.nodes, model.params.get(s.head_w), model.params.get(s.head_b).item())),
        (None, None) => None,
    };
    let nodes = labels
        .into_iter()
        .enumerate()
        .map(|(i, token)| NodeRecord {
            token,
            beta: details.beta.as_ref().map(|b| b[i]),
            influence: influence.as_ref().map(|v| v[i]),
        })
        .collect();
    Ok(InspectionRecord {
        image,
        caption,
        nodes,
        scores: ScoreBlock {
            ave,
            saf: details.saf,
            sgr: details.sgr,
        },
    })
}

/// Inspects the pair `(image, caption)` of `corpus` under a trained model.
pub fn inspect_pair(model: &Model, corpus: &Corpus, image: usize, caption: usize) -> Result<InspectionRecord, Error> {
    if model.updates == 0 {
        return Err(Error::Invalid(format!("model {} has not been trained", model.name)));
    }
    if model.heads().is_empty() {
        return Err(Error::Invalid(format!("model {} has no score head", model.name)));
    }
    if image >= corpus.image_count() || caption >= corpus.captions.len() {
        return Err(Error::Invalid(format!(
            "pair ({image}, {caption}) outside a corpus of {} images and {} captions",
            corpus.image_count(),
            corpus.captions.len()
        )));
    }
    let img = model.encode_image(&corpus.image(image))?;
    let txt = model.encode_text(&corpus.captions[caption])?;
    let details = model.pair_details(&img, &txt)?;
    record_from_details(model, &details, node_labels(model, corpus, caption), image, caption)
}

/// Mean filtration weight of filler and of concept word nodes over every
/// matched pair of a synthetic corpus, as `(filler, concept)`.
pub fn mean_beta_by_kind(model: &Model, synth: &SyntheticCorpus) -> Result<(f64, f64), Error> {
    if model.saf.is_none() {
        return Err(Error::Invalid(format!("model {} has no SAF head", model.name)));
    }
    if !model.config.use_local || model.config.direction != Direction::T2I {
        return Err(Error::Invalid("word-level weights need t2i local alignments".into()));
    }
    let corpus = &synth.corpus;
    let (mut filler, mut concept) = ((0.0, 0usize), (0.0, 0usize));
    for (image, caption) in corpus.pairs() {
        let rec = inspect_pair(model, corpus, image, caption)?;
        for (node, &tok) in rec.nodes.iter().zip(&corpus.captions[caption]) {
            let b = node.beta.unwrap_or(0.0);
            match synth.token_kind(tok) {
                TokenKind::Filler => filler = (filler.0 + b, filler.1 + 1),
                TokenKind::Concept(_) => concept = (concept.0 + b, concept.1 + 1),
                TokenKind::Special => {}
            }
        }
    }
    if filler.1 == 0 || concept.1 == 0 {
        return Err(Error::Invalid("corpus lacks filler or concept tokens".into()));
    }
    Ok((filler.0 / filler.1 as f64, concept.0 / concept.1 as f64))
}

/// Writes one JSON record per line.
pub fn write_records(path: impl AsRef<Path>, records: &[InspectionRecord]) -> Result<(), Error> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<InspectionRecord>, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::ModelFormat(path.to_path_buf(), format!("record {}: {e}", i + 1))))
        .collect()
}
