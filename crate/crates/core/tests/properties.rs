//! Property tests for the invariants of every module.

mod common;

use common::{rand_mat, to_tensor, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgraf::autodiff::eval;
use sgraf::batchnorm::{BatchNormState, BnMode};
use sgraf::config::{Direction, NormAxis};
use sgraf::data::text::{captions_to_text, manifest_to_text, parse_captions, parse_manifest};
use sgraf::data::{generate_synthetic_corpus, FeatureBank, SyntheticSpec, Vocab};
use sgraf::encoders::{attention_pool, bigru_encode, project_regions, GruVars, PoolVars};
use sgraf::eval::{fold_recall, recall_at_k, Recall};
use sgraf::gradcheck::{finite_diff_check, GradCheckOptions};
use sgraf::loss::ranking_loss_with_grad;
use sgraf::optim::{adam_step, AdamState};
use sgraf::params::{ParamStore, Init};
use sgraf::saf::{saf_batch, significance, SafParams};
use sgraf::sgr::{sgr_score, Readout, SgrParams};
use sgraf::simrep::{cross_attend, similarity_vector};
use sgraf::{Axis, Tape, Tensor};

fn mat(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Mat> {
    (rows, cols).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(-2.0..2.0f64, c), r))
}

fn row_norm(t: &Tensor, r: usize) -> f64 {
    t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn col_sums(t: &Tensor) -> Vec<f64> {
    (0..t.cols()).map(|c| (0..t.rows()).map(|r| t.get(r, c)).sum()).collect()
}

fn row_sums(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect()
}

// tensor core

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in mat(1..6, 1..6), scale in 0.0..50.0f64) {
        for axis in [Axis::Rows, Axis::Cols] {
            let s = eval(|t| { let v = t.constant(to_tensor(&x)); let v = t.scale(v, scale); Ok(t.softmax(v, axis)) }).unwrap();
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
            let sums = if axis == Axis::Rows { col_sums(&s) } else { row_sums(&s) };
            prop_assert!(sums.iter().all(|v| (v - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn l2_normalize_gives_unit_rows(x in mat(1..5, 1..6)) {
        let n = eval(|t| { let v = t.constant(to_tensor(&x)); Ok(t.l2_normalize_rows(v, 1e-8)) }).unwrap();
        for (r, row) in x.iter().enumerate() {
            let input: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if input > 1e-7 {
                prop_assert!((row_norm(&n, r) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_norm_training_standardizes(x in mat(2..8, 1..4)) {
        let t = to_tensor(&x);
        let c = t.cols();
        let mut st = BatchNormState::new(c);
        let y = sgraf::batchnorm::batch_norm(&t, &mut st, &vec![1.0; c], &vec![0.0; c]).unwrap();
        for ch in 0..c {
            let col: Vec<f64> = (0..t.rows()).map(|r| t.get(r, ch)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            prop_assume!(var > 1e-6);
            let out: Vec<f64> = (0..t.rows()).map(|r| y.get(r, ch)).collect();
            let om = out.iter().sum::<f64>() / out.len() as f64;
            let ov = out.iter().map(|v| (v - om) * (v - om)).sum::<f64>() / out.len() as f64;
            prop_assert!(om.abs() < 1e-6);
            prop_assert!((ov - 1.0).abs() < 1e-5);
        }
        prop_assert!(st.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op(x in mat(1..4, 1..4), steps in 1usize..5) {
        let mut p = ParamStore::new();
        p.add("x", to_tensor(&x));
        let before = p.clone();
        let mut st = AdamState::new(&p, 0.1);
        for _ in 0..steps {
            adam_step(&mut p, &[vec![0.0; x.len() * x[0].len()]], &mut st).unwrap();
        }
        prop_assert_eq!(p, before);
    }

    #[test]
    fn composite_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let a = p.add("a", to_tensor(&rand_mat(&mut rng, 3, 4)));
        let b = p.add("b", to_tensor(&rand_mat(&mut rng, 2, 4)));
        let c = to_tensor(&rand_mat(&mut rng, 3, 2));
        let report = finite_diff_check(|ps| {
            let mut t = Tape::new();
            let bd = ps.bind(&mut t);
            let x = t.matmul_nt(bd.var(a), bd.var(b))?;
            let x = t.tanh(x);
            let x = t.l2_normalize_rows(x, 1e-8);
            let x = t.softmax(x, Axis::Rows);
            let s = t.sigmoid(bd.var(a));
            let s = t.mean_rows(s);
            let cv = t.constant(c.clone());
            let y = t.mul(x, cv)?;
            let y = t.sum(y);
            let z = t.sum(s);
            let out = t.add(y, z)?;
            t.backward(out)?;
            Ok((t.value(out).item(), bd.grads(&t)))
        }, &p, &GradCheckOptions::default()).unwrap();
        prop_assert!(report.max_rel_error() < 1e-4, "{}", report);
    }
}

// encoders

fn pool_vars(t: &mut Tape, rng: &mut ChaCha8Rng, d: usize, h: usize) -> PoolVars {
    PoolVars {
        w_local: t.constant(to_tensor(&rand_mat(rng, h, d))),
        w_query: t.constant(to_tensor(&rand_mat(rng, h, d))),
        score: t.constant(to_tensor(&rand_mat(rng, 1, h))),
    }
}

fn gru_vars(t: &mut Tape, rng: &mut ChaCha8Rng, e: usize, d: usize) -> GruVars {
    let mut c = |r, k| t.constant(to_tensor(&rand_mat(rng, r, k)));
    GruVars {
        w_input: [c(d, e), c(d, e), c(d, e)],
        w_hidden: [c(d, d), c(d, d), c(d, d)],
        b_input: [c(1, d), c(1, d), c(1, d)],
        b_hidden: [c(1, d), c(1, d), c(1, d)],
    }
}

proptest! {
    #[test]
    fn attention_pool_weights_are_convex(x in mat(1..7, 1..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let p = pool_vars(&mut t, &mut rng, x[0].len(), 3);
        let xv = t.constant(to_tensor(&x));
        let (_, w) = attention_pool(&mut t, xv, &p).unwrap();
        let w = t.value(w);
        prop_assert!(w.data().iter().all(|&v| v >= 0.0));
        prop_assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bigru_output_is_length_by_hidden(len in 1usize..8, e in 1usize..4, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = rand_mat(&mut rng, len, e);
        let run = |rng: &mut ChaCha8Rng| {
            let mut t = Tape::new();
            let (f, b) = (gru_vars(&mut t, rng, e, d), gru_vars(&mut t, rng, e, d));
            let x = t.constant(to_tensor(&xs));
            let out = bigru_encode(&mut t, x, &f, &b).unwrap();
            t.value(out).clone()
        };
        let a = run(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let b = run(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(a.shape(), &[len, d][..]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn project_regions_is_linear_and_row_equivariant(x in mat(1..6, 1..5), k in -3.0..3.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = x[0].len();
        let w = to_tensor(&rand_mat(&mut rng, 4, d));
        let zero = Tensor::row(vec![0.0; 4]);
        let bias = to_tensor(&rand_mat(&mut rng, 1, 4));
        let proj = |x: &Tensor, b: &Tensor| eval(|t| {
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
            project_regions(t, xv, wv, bv)
        }).unwrap();
        let xt = to_tensor(&x);
        let lhs = proj(&xt.scale(k), &zero);
        let rhs = proj(&xt, &zero).scale(k);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.reverse();
        let permuted: Mat = perm.iter().map(|&i| x[i].clone()).collect();
        let a = proj(&to_tensor(&permuted), &bias);
        let b = proj(&xt, &bias);
        for (r, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.row_slice(r), b.row_slice(i));
        }
    }
}

// similarity representation

proptest! {
    #[test]
    fn similarity_vector_is_symmetric_and_scale_free(
        (x, y, w) in (1usize..6, 1usize..6).prop_flat_map(|(m, d)| (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), m),
        )),
        c in 0.01..100.0f64,
    ) {
        let sv = |a: &[f64], b: &[f64], w: &Tensor| eval(|t| {
            let (av, bv, wv) = (t.constant(Tensor::row(a.to_vec())), t.constant(Tensor::row(b.to_vec())), t.constant(w.clone()));
            similarity_vector(t, av, bv, wv)
        }).unwrap();
        let wt = to_tensor(&w);
        let xy = sv(&x, &y, &wt);
        let yx = sv(&y, &x, &wt);
        prop_assert_eq!(xy.data(), yx.data());
        prop_assert!(xy.max_abs_diff(&sv(&x, &y, &wt.scale(c))) < 1e-10);
        prop_assert!(sv(&x, &x, &wt).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_columns_are_distributions_and_sharpen(
        v in mat(1..6, 3..4), t in mat(1..6, 3..4), l1 in 0.0..20.0f64, dl in 0.0..20.0f64,
    ) {
        let run = |lambda: f64| {
            let mut tape = Tape::new();
            let (r, w) = (tape.constant(to_tensor(&v)), tape.constant(to_tensor(&t)));
            let map = cross_attend(&mut tape, r, w, lambda, Direction::T2I, NormAxis::Queries).unwrap();
            tape.value(map.weights).clone()
        };
        let (a, b) = (run(l1), run(l1 + dl));
        prop_assert!(a.data().iter().all(|&x| x >= 0.0));
        prop_assert!(col_sums(&a).iter().all(|s| (s - 1.0).abs() < 1e-6));
        for j in 0..a.cols() {
            let ma = (0..a.rows()).map(|i| a.get(i, j)).fold(0.0, f64::max);
            let mb = (0..b.rows()).map(|i| b.get(i, j)).fold(0.0, f64::max);
            prop_assert!(mb >= ma - 1e-12);
        }
    }

    #[test]
    fn i2t_is_t2i_with_roles_swapped(v in mat(1..6, 3..4), t in mat(1..6, 3..4), lambda in 0.1..20.0f64) {
        for axis in [NormAxis::Queries, NormAxis::Context] {
            let mut tape = Tape::new();
            let (vv, tv) = (tape.constant(to_tensor(&v)), tape.constant(to_tensor(&t)));
            let a = cross_attend(&mut tape, vv, tv, lambda, Direction::I2T, axis).unwrap();
            let b = cross_attend(&mut tape, tv, vv, lambda, Direction::T2I, axis).unwrap();
            prop_assert_eq!(tape.value(a.weights), tape.value(b.weights));
            prop_assert_eq!(tape.value(a.attended), tape.value(b.attended));
        }
    }
}

// graph reasoning

fn sgr_setup(seed: u64, m: usize, steps: usize) -> (ParamStore, SgrParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut rng);
    let p = SgrParams::init(&mut store, &mut init, m, steps);
    (store, p)
}

proptest! {
    #[test]
    fn reasoning_keeps_shape_and_stochastic_edges(nodes in mat(2..7, 4..5), steps in 1usize..5, seed in any::<u64>()) {
        let (store, p) = sgr_setup(seed, 4, steps);
        let mut t = Tape::new();
        let b = store.bind_frozen(&mut t);
        let n = t.constant(to_tensor(&nodes));
        let tr = sgr_score(&mut t, &b, &p, n, Readout::Global).unwrap();
        prop_assert_eq!(tr.states.len(), steps + 1);
        for s in &tr.states {
            prop_assert_eq!(t.value(*s).shape(), &[nodes.len(), 4][..]);
        }
        for e in &tr.edges {
            let e = t.value(*e);
            prop_assert!(e.data().iter().all(|&v| v >= 0.0));
            prop_assert!(row_sums(e).iter().all(|s| (s - 1.0).abs() < 1e-6));
        }
        let last = t.value(*tr.states.last().unwrap()).row_slice(nodes.len() - 1).to_vec();
        prop_assert_eq!(t.value(tr.reasoned).data(), &last[..]);
    }

    #[test]
    fn permuting_local_nodes_keeps_the_score(nodes in mat(3..7, 4..5), seed in any::<u64>(), rot in 1usize..5) {
        let (store, p) = sgr_setup(seed, 4, 3);
        let locals = nodes.len() - 1;
        let mut permuted: Mat = (0..locals).map(|i| nodes[(i + rot) % locals].clone()).collect();
        permuted.push(nodes[locals].clone());
        let score = |n: &Mat| {
            let mut t = Tape::new();
            let b = store.bind_frozen(&mut t);
            let v = t.constant(to_tensor(n));
            let tr = sgr_score(&mut t, &b, &p, v, Readout::Global).unwrap();
            t.value(tr.score).item()
        };
        prop_assert!((score(&nodes) - score(&permuted)).abs() < 1e-10);
    }
}

// attention filtration

fn saf_setup(seed: u64, m: usize) -> (ParamStore, SafParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut rng);
    let p = SafParams::init(&mut store, &mut init, m);
    (store, p)
}

fn saf_run(store: &ParamStore, p: &SafParams, nodes: &Mat, mode: BnMode) -> (Vec<f64>, Vec<f64>) {
    let mut t = Tape::new();
    let b = store.bind_frozen(&mut t);
    let n = t.constant(to_tensor(nodes));
    let mut bn = BatchNormState::new(1).with_mode(mode);
    let out = saf_batch(&mut t, &b, p, &[n], &mut bn, true).unwrap().remove(0);
    (t.value(out.beta).data().to_vec(), t.value(out.aggregated).data().to_vec())
}

proptest! {
    #[test]
    fn filtration_is_permutation_equivariant(nodes in mat(2..7, 3..4), seed in any::<u64>(), rot in 1usize..6) {
        let (store, p) = saf_setup(seed, 3);
        let n = nodes.len();
        let permuted: Mat = (0..n).map(|i| nodes[(i + rot) % n].clone()).collect();
        for mode in [BnMode::Training, BnMode::Inference] {
            let (b0, s0) = saf_run(&store, &p, &nodes, mode);
            let (b1, s1) = saf_run(&store, &p, &permuted, mode);
            for i in 0..n {
                prop_assert!((b1[i] - b0[(i + rot) % n]).abs() < 1e-10);
            }
            for (a, b) in s0.iter().zip(&s1) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!(b0.iter().all(|&v| v >= 0.0));
            prop_assert!((b0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn significance_is_monotone(pre in prop::collection::vec(-30.0..30.0f64, 2..8), idx in 0usize..8, bump in 0.01..5.0f64) {
        let idx = idx % pre.len();
        let beta = |x: &[f64]| eval(|t| {
            let v = t.constant(Tensor::matrix(x.len(), 1, x.to_vec()));
            significance(t, v)
        }).unwrap().into_data();
        let b0 = beta(&pre);
        prop_assert!(b0.iter().all(|&v| v > 0.0));
        prop_assert!((b0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let mut up = pre.clone();
        up[idx] += bump;
        let b1 = beta(&up);
        // a saturated sigmoid cannot move; skip inputs where it does not
        prop_assume!(b1[idx] != b0[idx]);
        prop_assert!(b1[idx] > b0[idx]);
        for j in (0..pre.len()).filter(|&j| j != idx) {
            prop_assert!(b1[j] < b0[j]);
        }
    }
}

// ranking loss

fn square(b: std::ops::Range<usize>) -> impl Strategy<Value = Mat> {
    b.prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), n))
}

proptest! {
    #[test]
    fn loss_matches_reference_and_is_non_negative(s in square(2..7), margin in 0.01..0.5f64) {
        let (l, _) = ranking_loss_with_grad(&to_tensor(&s), margin, None).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - common::ranking_loss(&s, margin)).abs() < 1e-12);
        let b = s.len();
        let satisfied = (0..b).all(|i| (0..b).filter(|&j| j != i).all(|j| s[i][i] >= s[i][j] + margin && s[i][i] >= s[j][i] + margin));
        prop_assert_eq!(l == 0.0, satisfied);
    }

    #[test]
    fn loss_ignores_a_common_shift(s in square(2..7), c in -5.0..5.0f64) {
        let shifted: Mat = s.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        let a = ranking_loss_with_grad(&to_tensor(&s), 0.2, None).unwrap().0;
        let b = ranking_loss_with_grad(&to_tensor(&shifted), 0.2, None).unwrap().0;
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_off_selected_entries(s in square(2..7)) {
        let b = s.len();
        let (_, g) = ranking_loss_with_grad(&to_tensor(&s), 0.2, None).unwrap();
        let t = to_tensor(&s);
        let mut selected = vec![vec![false; b]; b];
        for i in 0..b {
            selected[i][i] = true;
            let (tn, im) = sgraf::loss::hardest_negatives(&t, &(0..b).collect::<Vec<_>>(), i);
            if let Some(j) = tn { selected[i][j] = true; }
            if let Some(j) = im { selected[j][i] = true; }
        }
        for i in 0..b {
            for j in 0..b {
                if !selected[i][j] {
                    prop_assert_eq!(g.get(i, j), 0.0);
                }
            }
        }
    }
}

// retrieval metrics

proptest! {
    #[test]
    fn recall_is_monotone_in_k_and_order_only(s in square(2..9)) {
        let truth: Vec<usize> = (0..s.len()).collect();
        let ks: Vec<usize> = (1..=s.len()).collect();
        let r = recall_at_k(&to_tensor(&s), &truth, &ks).unwrap();
        for w in r.i2t.windows(2).chain(r.t2i.windows(2)) {
            prop_assert!(w[0] <= w[1]);
        }
        let cubed: Mat = s.iter().map(|row| row.iter().map(|v| v * v * v).collect()).collect();
        prop_assert_eq!(r, recall_at_k(&to_tensor(&cubed), &truth, &ks).unwrap());
    }

    #[test]
    fn fold_average_is_mean_of_folds(folds in 1usize..4, per in 2usize..5, seed in any::<u64>()) {
        let n = folds * per;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = to_tensor(&rand_mat(&mut rng, n, n));
        let truth: Vec<usize> = (0..n).collect();
        let (mean, each) = fold_recall(&s, &truth, folds, &[1, 5, 10]).unwrap();
        prop_assert_eq!(&mean, &Recall::mean(&each).unwrap());
        for (f, r) in each.iter().enumerate() {
            let block: Mat = (0..per).map(|i| (0..per).map(|j| s.get(f * per + i, f * per + j)).collect()).collect();
            let local: Vec<usize> = (0..per).collect();
            prop_assert_eq!(r, &recall_at_k(&to_tensor(&block), &local, &[1, 5, 10]).unwrap());
        }
    }
}

// data formats

proptest! {
    #[test]
    fn feature_bank_round_trips_bitwise(k in 1usize..4, d in 1usize..5, images in prop::collection::vec(prop::collection::vec(any::<f32>(), 20), 0..4)) {
        let mut bank = FeatureBank::new(k, d).unwrap();
        for img in &images {
            bank.push(&img[..k * d]).unwrap();
        }
        let bytes = bank.to_bytes();
        prop_assert_eq!(bytes.len(), 20 + 4 * k * d * images.len());
        let back = FeatureBank::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn caption_and_manifest_text_round_trip(caps in prop::collection::vec(prop::collection::vec(0usize..50, 1..6), 1..6)) {
        prop_assert_eq!(parse_captions(&captions_to_text(&caps)).unwrap(), caps.clone());
        let manifest: Vec<Vec<usize>> = (0..caps.len()).map(|i| vec![i]).collect();
        prop_assert_eq!(parse_manifest(&manifest_to_text(&manifest)).unwrap(), manifest);
    }

    #[test]
    fn vocab_round_trips(words in prop::collection::btree_set("[a-z]{1,6}", 1..10)) {
        let v = Vocab::new(words.into_iter().collect()).unwrap();
        prop_assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_corpus_is_seed_determined_and_total(seed in any::<u64>()) {
        let spec = SyntheticSpec { pairs: 12, concepts: 6, regions: 4, d_raw: 5, seed, ..SyntheticSpec::default() };
        let a = generate_synthetic_corpus(&spec).unwrap();
        let b = generate_synthetic_corpus(&spec).unwrap();
        prop_assert_eq!(&a.corpus, &b.corpus);
        a.corpus.validate().unwrap();
        prop_assert!(a.concepts.iter().all(|c| c.len() == spec.concepts_per_pair));
    }
}
