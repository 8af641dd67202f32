//! The full matching network: encoders, node construction and scoring heads.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batchnorm::{BatchNormState, BnMode};
use crate::config::{BnPooling, Branch, RunConfig, SimilarityMode};
use crate::encoders::{EncoderDims, EncoderParams};
use crate::error::Error;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::saf::{self, SafParams};
use crate::sgr::{self, Readout, SgrParams};
use crate::simrep::{self, NodeOptions, Side, SimilarityParams};
use crate::tensor::{Result, Tensor, TensorError};

/// Mean of per-node sigmoid scores, the plain averaging baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveParams {
    /// `[1 × m]`
    pub head_w: ParamId,
    /// `[1 × 1]`
    pub head_b: ParamId,
}

impl AveParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, m: usize) -> Self {
        Self {
            head_w: store.add("ave.head_w", init.fan_in(&[1, m])),
            head_b: store.add("ave.head_b", init.bias(1, m)),
        }
    }
}

/// Per-node sigmoid head scores averaged over the node set.
pub fn ave_score(tape: &mut Tape, nodes: Var, head_w: Var, head_b: Var) -> Result<Var> {
    let logits = tape.matmul_nt(nodes, head_w)?;
    let logits = tape.add_row(logits, head_b)?;
    let scores = tape.sigmoid(logits);
    Ok(tape.mean(scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Sgr,
    Saf,
    Ave,
}

/// Score matrices on a tape, `[n_images × n_texts]`, one per carried head.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchScores {
    pub sgr: Option<Var>,
    pub saf: Option<Var>,
    pub ave: Option<Var>,
}

/// Concrete score matrices, `[n_images × n_texts]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreMatrices {
    pub sgr: Option<Tensor>,
    pub saf: Option<Tensor>,
    pub ave: Option<Tensor>,
}

impl ScoreMatrices {
    pub fn get(&self, head: Head) -> Option<&Tensor> {
        match head {
            Head::Sgr => self.sgr.as_ref(),
            Head::Saf => self.saf.as_ref(),
            Head::Ave => self.ave.as_ref(),
        }
    }

    /// The retrieval score: SGR and SAF averaged when both are present,
    /// otherwise the single available head.
    pub fn combined(&self) -> Result<Tensor> {
        match (&self.sgr, &self.saf, &self.ave) {
            (Some(a), Some(b), _) => crate::eval::fuse_scores(a, b),
            (Some(a), None, _) | (None, Some(a), _) | (None, None, Some(a)) => Ok(a.clone()),
            (None, None, None) => Err(TensorError::Invalid("no score head".into())),
        }
    }
}

/// Encoder outputs of one image, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub regions: Tensor,
    pub unit: Tensor,
    pub global: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub words: Tensor,
    pub unit: Tensor,
    pub global: Tensor,
}

/// Everything computed for one pair at inference time.
#[derive(Debug, Clone)]
pub struct PairDetails {
    pub nodes: Tensor,
    pub sgr_final: Option<Tensor>,
    pub sgr_edges: Vec<Tensor>,
    pub beta: Option<Vec<f64>>,
    pub sgr: Option<f64>,
    pub saf: Option<f64>,
    pub ave: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub name: String,
    pub config: RunConfig,
    pub branch: Branch,
    pub params: ParamStore,
    pub encoder: EncoderParams,
    pub similarity: SimilarityParams,
    pub sgr: Option<SgrParams>,
    pub saf: Option<SafParams>,
    pub ave: Option<AveParams>,
    pub bn: BatchNormState,
    /// Optimizer steps applied so far.
    #[serde(default)]
    pub updates: u64,
}

impl Model {
    /// Fresh model carrying the heads of `branch`, initialized from `seed`.
    pub fn new(config: &RunConfig, vocab_size: usize, branch: Branch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.hidden_dim;
        let m = config.node_dim();
        let encoder = EncoderParams::init(
            &mut params,
            &mut rng,
            &EncoderDims {
                d_raw: config.d_raw,
                hidden: d,
                embed: config.embed_dim,
                vocab: vocab_size,
                attn_hidden: config.attn_hidden,
            },
        );
        let mut init = Init::new(&mut rng);
        let similarity = SimilarityParams::init(&mut params, &mut init, config.graph_dim, d);
        let sgr = matches!(branch, Branch::Sgr | Branch::Joint).then(|| SgrParams::init(&mut params, &mut init, m, config.steps));
        let saf = matches!(branch, Branch::Saf | Branch::Joint).then(|| SafParams::init(&mut params, &mut init, m));
        let ave = matches!(branch, Branch::Ave).then(|| AveParams::init(&mut params, &mut init, m));
        Self {
            name: format!("{branch}"),
            config: config.clone(),
            branch,
            params,
            encoder,
            similarity,
            sgr,
            saf,
            ave,
            bn: BatchNormState::new(1),
            updates: 0,
        }
    }

    pub fn heads(&self) -> Vec<Head> {
        let mut h = Vec::new();
        if self.sgr.is_some() {
            h.push(Head::Sgr);
        }
        if self.saf.is_some() {
            h.push(Head::Saf);
        }
        if self.ave.is_some() {
            h.push(Head::Ave);
        }
        h
    }

    pub fn node_options(&self) -> NodeOptions {
        NodeOptions {
            lambda: self.config.lambda,
            direction: self.config.direction,
            norm_axis: self.config.norm_axis,
            scalar: self.config.similarity == SimilarityMode::Scalar,
            use_global: self.config.use_global,
            use_local: self.config.use_local,
            normalize: self.config.normalize_features,
        }
    }

    pub fn readout(&self) -> Readout {
        if self.config.use_global {
            Readout::Global
        } else {
            Readout::Mean
        }
    }

    /// Parameters touched after encoding.
    fn head_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.similarity.w_global, self.similarity.w_local];
        if let Some(s) = &self.sgr {
            for st in &s.steps {
                ids.extend([st.w_in, st.w_out, st.w_r]);
            }
            ids.extend([s.head_w, s.head_b]);
        }
        if let Some(s) = &self.saf {
            ids.extend([s.w_filter, s.bn_gamma, s.bn_beta, s.head_w, s.head_b]);
        }
        if let Some(a) = &self.ave {
            ids.extend([a.head_w, a.head_b]);
        }
        ids
    }

    /// Scores every image against every text on `tape`.
    ///
    /// `bn.mode` decides whether the filtration batch norm uses batch or
    /// running statistics; in training mode the running estimates are updated.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        images: &[&Tensor],
        texts: &[&[usize]],
        bn: &mut BatchNormState,
    ) -> Result<BatchScores> {
        if images.is_empty() || texts.is_empty() {
            return Err(TensorError::Invalid("empty batch".into()));
        }
        let image_sides = images
            .iter()
            .map(|raw| {
                let rv = tape.constant((*raw).clone());
                let f = self.encoder.encode_image(tape, bound, rv)?;
                Ok(Side::new(tape, f.regions, f.global))
            })
            .collect::<Result<Vec<_>>>()?;
        let text_sides = texts
            .iter()
            .map(|ids| {
                let f = self.encoder.encode_text(tape, bound, ids)?;
                Ok(Side::new(tape, f.words, f.global))
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = self.node_options();
        let mut node_sets = Vec::with_capacity(images.len() * texts.len());
        for img in &image_sides {
            for txt in &text_sides {
                node_sets.push(simrep::pair_nodes(tape, bound, &self.similarity, img, txt, &opts)?);
            }
        }
        self.score_node_sets(tape, bound, &node_sets, images.len(), texts.len(), bn)
    }

    fn score_node_sets(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        node_sets: &[Var],
        rows: usize,
        cols: usize,
        bn: &mut BatchNormState,
    ) -> Result<BatchScores> {
        let mut out = BatchScores::default();
        let stack = |tape: &mut Tape, scores: Vec<Var>| -> Result<Var> {
            let col = tape.concat_rows(&scores)?;
            tape.reshape(col, &[rows, cols])
        };
        if let Some(p) = &self.sgr {
            let readout = self.readout();
            let scores = node_sets
                .iter()
                .map(|&n| Ok(sgr::sgr_score(tape, bound, p, n, readout)?.score))
                .collect::<Result<Vec<_>>>()?;
            out.sgr = Some(stack(tape, scores)?);
        }
        if let Some(p) = &self.saf {
            let pool = bn.mode == BnMode::Training && self.config.bn_pooling == BnPooling::Batch;
            let res = saf::saf_batch(tape, bound, p, node_sets, bn, pool)?;
            out.saf = Some(stack(tape, res.iter().map(|r| r.score).collect())?);
        }
        if let Some(p) = &self.ave {
            let scores = node_sets
                .iter()
                .map(|&n| ave_score(tape, n, bound.var(p.head_w), bound.var(p.head_b)))
                .collect::<Result<Vec<_>>>()?;
            out.ave = Some(stack(tape, scores)?);
        }
        Ok(out)
    }

    pub fn encode_image(&self, raw: &Tensor) -> Result<EncodedImage> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen_subset(
            &mut tape,
            &[
                self.encoder.region_w,
                self.encoder.region_b,
                self.encoder.image_pool.w_local,
                self.encoder.image_pool.w_query,
                self.encoder.image_pool.score,
            ],
        );
        let rv = tape.constant(raw.clone());
        let f = self.encoder.encode_image(&mut tape, &b, rv)?;
        let s = Side::new(&mut tape, f.regions, f.global);
        Ok(EncodedImage {
            regions: tape.value(s.locals).clone(),
            unit: tape.value(s.unit).clone(),
            global: tape.value(s.global).clone(),
        })
    }

    pub fn encode_text(&self, ids: &[usize]) -> Result<EncodedText> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let f = self.encoder.encode_text(&mut tape, &b, ids)?;
        let s = Side::new(&mut tape, f.words, f.global);
        Ok(EncodedText {
            words: tape.value(s.locals).clone(),
            unit: tape.value(s.unit).clone(),
            global: tape.value(s.global).clone(),
        })
    }

    /// Inference-mode analysis of one encoded pair.
    pub fn pair_details(&self, img: &EncodedImage, txt: &EncodedText) -> Result<PairDetails> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen_subset(&mut tape, &self.head_param_ids());
        let image = Side {
            locals: tape.constant(img.regions.clone()),
            unit: tape.constant(img.unit.clone()),
            global: tape.constant(img.global.clone()),
        };
        let text = Side {
            locals: tape.constant(txt.words.clone()),
            unit: tape.constant(txt.unit.clone()),
            global: tape.constant(txt.global.clone()),
        };
        let nodes = simrep::pair_nodes(&mut tape, &b, &self.similarity, &image, &text, &self.node_options())?;
        let mut details = PairDetails {
            nodes: tape.value(nodes).clone(),
            sgr_final: None,
            sgr_edges: Vec::new(),
            beta: None,
            sgr: None,
            saf: None,
            ave: None,
        };
        if let Some(p) = &self.sgr {
            let tr = sgr::sgr_score(&mut tape, &b, p, nodes, self.readout())?;
            details.sgr = Some(tape.value(tr.score).item());
            details.sgr_final = Some(tape.value(*tr.states.last().unwrap()).clone());
            details.sgr_edges = tr.edges.iter().map(|&e| tape.value(e).clone()).collect();
        }
        if let Some(p) = &self.saf {
            let mut bn = self.bn.clone().with_mode(BnMode::Inference);
            let out = saf::saf_score(&mut tape, &b, p, nodes, &mut bn)?;
            details.saf = Some(tape.value(out.score).item());
            details.beta = Some(tape.value(out.beta).data().to_vec());
        }
        if let Some(p) = &self.ave {
            let s = ave_score(&mut tape, nodes, b.var(p.head_w), b.var(p.head_b))?;
            details.ave = Some(tape.value(s).item());
        }
        Ok(details)
    }

    /// Inference scores of every image against every text. Rows are split
    /// across `threads` workers; each cell is computed independently, so the
    /// result does not depend on the thread count.
    pub fn score_matrices(&self, images: &[EncodedImage], texts: &[EncodedText], threads: usize) -> Result<ScoreMatrices> {
        let (ni, nt) = (images.len(), texts.len());
        if ni == 0 || nt == 0 {
            return Err(TensorError::Invalid("empty retrieval set".into()));
        }
        let heads = self.heads();
        let row_scores = |i: usize| -> Result<Vec<[f64; 3]>> {
            texts
                .iter()
                .map(|t| {
                    let d = self.pair_details(&images[i], t)?;
                    Ok([d.sgr.unwrap_or(0.0), d.saf.unwrap_or(0.0), d.ave.unwrap_or(0.0)])
                })
                .collect()
        };
        let threads = threads.max(1).min(ni);
        let rows: Vec<Result<Vec<[f64; 3]>>> = if threads == 1 {
            (0..ni).map(row_scores).collect()
        } else {
            let chunk = ni.div_ceil(threads);
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|w| {
                        let row_scores = &row_scores;
                        s.spawn(move || (w * chunk..((w + 1) * chunk).min(ni)).map(row_scores).collect::<Vec<_>>())
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("scoring worker panicked")).collect()
            })
        };
        let mut data = [vec![0.0; ni * nt], vec![0.0; ni * nt], vec![0.0; ni * nt]];
        for (i, row) in rows.into_iter().enumerate() {
            for (j, cell) in row?.into_iter().enumerate() {
                for h in 0..3 {
                    data[h][i * nt + j] = cell[h];
                }
            }
        }
        let [sgr, saf, ave] = data;
        Ok(ScoreMatrices {
            sgr: heads.contains(&Head::Sgr).then(|| Tensor::matrix(ni, nt, sgr)),
            saf: heads.contains(&Head::Saf).then(|| Tensor::matrix(ni, nt, saf)),
            ave: heads.contains(&Head::Ave).then(|| Tensor::matrix(ni, nt, ave)),
        })
    }

    /// Encodes raw inputs and scores them all.
    pub fn score_raw(&self, images: &[&Tensor], texts: &[&[usize]], threads: usize) -> Result<ScoreMatrices> {
        let imgs = images.iter().map(|r| self.encode_image(r)).collect::<Result<Vec<_>>>()?;
        let txts = texts.iter().map(|t| self.encode_text(t)).collect::<Result<Vec<_>>>()?;
        self.score_matrices(&imgs, &txts, threads)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::ModelFormat(path.to_path_buf(), e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(path.to_path_buf(), e.to_string()))
    }
}
