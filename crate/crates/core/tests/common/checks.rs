//! Worst-case deviation of each library kernel from its brute-force
//! reference over `instances` random small instances.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgraf::autodiff::eval;
use sgraf::batchnorm::{BatchNormState, BnMode};
use sgraf::config::{Direction, NormAxis};
use sgraf::encoders::{attention_pool, bigru_encode, GruVars, PoolVars};
use sgraf::params::ParamStore;
use sgraf::saf::{saf_batch, SafParams};
use sgraf::sgr::{edge_weights, graph_step};
use sgraf::simrep::{cross_attend, similarity_vector};
use sgraf::{Tape, Tensor, Var};

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..7), rng.gen_range(1..6))
}

pub fn edge_weights_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, m) = dims(&mut rng);
        let (s, wi, wo) = (rand_mat(&mut rng, p, m), rand_mat(&mut rng, m, m), rand_mat(&mut rng, m, m));
        let got = eval(|t| {
            let (a, b, c) = (t.constant(to_tensor(&s)), t.constant(to_tensor(&wi)), t.constant(to_tensor(&wo)));
            edge_weights(t, a, b, c)
        })
        .unwrap();
        worst = worst.max(max_diff(&super::edge_weights(&s, &wi, &wo), &got));
    }
    worst
}

pub fn graph_step_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (p, m) = dims(&mut rng);
        let s = rand_mat(&mut rng, p, m);
        let w: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, m, m)).collect();
        let got = eval(|t| {
            let v: Vec<Var> = std::iter::once(&s).chain(&w).map(|x| t.constant(to_tensor(x))).collect();
            Ok(graph_step(t, v[0], v[1], v[2], v[3])?.0)
        })
        .unwrap();
        worst = worst.max(max_diff(&super::graph_step(&s, &w[0], &w[1], &w[2]), &got));
    }
    worst
}

pub fn cross_attend_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let (k, l, d) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..5));
        let regions = rand_mat(&mut rng, k, d);
        let words = rand_mat(&mut rng, l, d);
        let lambda = rng.gen_range(0.0..20.0);
        for direction in [Direction::T2I, Direction::I2T] {
            for axis in [NormAxis::Queries, NormAxis::Context] {
                let mut tape = Tape::new();
                let (r, w) = (tape.constant(to_tensor(&regions)), tape.constant(to_tensor(&words)));
                let map = cross_attend(&mut tape, r, w, lambda, direction, axis).unwrap();
                let (ctx, qry) = match direction {
                    Direction::T2I => (&regions, &words),
                    Direction::I2T => (&words, &regions),
                };
                let (weights, attended) = super::cross_attend(ctx, qry, lambda, axis == NormAxis::Queries);
                worst = worst.max(max_diff(&weights, tape.value(map.weights)));
                worst = worst.max(max_diff(&attended, tape.value(map.attended)));
            }
        }
    }
    worst
}

pub fn saf_weights_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let m = rng.gen_range(1..5);
        let pairs = rng.gen_range(1..4);
        let sets: Vec<Mat> = (0..pairs).map(|_| {
            let p = rng.gen_range(1..5);
            rand_mat(&mut rng, p, m)
        }).collect();
        if sets.iter().map(Vec::len).sum::<usize>() < 2 {
            continue;
        }
        let w_f = rand_mat(&mut rng, 1, m).remove(0);
        let (gamma, beta) = (rng.gen_range(0.2..2.0), rng.gen_range(-1.0..1.0));

        let mut store = ParamStore::new();
        let params = SafParams {
            w_filter: store.add("w_f", Tensor::row(w_f.clone())),
            bn_gamma: store.add("g", Tensor::matrix(1, 1, vec![gamma])),
            bn_beta: store.add("b", Tensor::matrix(1, 1, vec![beta])),
            head_w: store.add("hw", Tensor::row(vec![0.0; m])),
            head_b: store.add("hb", Tensor::matrix(1, 1, vec![0.0])),
        };
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let vars: Vec<Var> = sets.iter().map(|s| tape.constant(to_tensor(s))).collect();
        let mut bn = BatchNormState::new(1).with_mode(BnMode::Training);
        let out = saf_batch(&mut tape, &bound, &params, &vars, &mut bn, true).unwrap();
        let want = super::saf_weights(&sets, &w_f, gamma, beta);
        for (o, w) in out.iter().zip(&want) {
            let got = tape.value(o.beta);
            let col: Mat = w.iter().map(|&x| vec![x]).collect();
            worst = worst.max(max_diff(&col, got));
        }
    }
    worst
}

pub fn attention_pool_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let (n, d) = dims(&mut rng);
        let h = rng.gen_range(1..5);
        let x = rand_mat(&mut rng, n, d);
        let (wl, wq, sc) = (rand_mat(&mut rng, h, d), rand_mat(&mut rng, h, d), rand_mat(&mut rng, 1, h));
        let mut tape = Tape::new();
        let xv = tape.constant(to_tensor(&x));
        let p = PoolVars {
            w_local: tape.constant(to_tensor(&wl)),
            w_query: tape.constant(to_tensor(&wq)),
            score: tape.constant(to_tensor(&sc)),
        };
        let (pooled, weights) = attention_pool(&mut tape, xv, &p).unwrap();
        let (want_p, want_w) = super::attention_pool(&x, &wl, &wq, &sc[0]);
        worst = worst.max(max_diff(&vec![want_p], tape.value(pooled)));
        let col: Mat = want_w.iter().map(|&v| vec![v]).collect();
        worst = worst.max(max_diff(&col, tape.value(weights)));
    }
    worst
}

fn gru_vars(tape: &mut Tape, g: &Gru) -> GruVars {
    let mut c = |m: &Mat| tape.constant(to_tensor(m));
    GruVars {
        w_input: [c(&g.w_input[0]), c(&g.w_input[1]), c(&g.w_input[2])],
        w_hidden: [c(&g.w_hidden[0]), c(&g.w_hidden[1]), c(&g.w_hidden[2])],
        b_input: [c(&vec![g.b_input[0].clone()]), c(&vec![g.b_input[1].clone()]), c(&vec![g.b_input[2].clone()])],
        b_hidden: [c(&vec![g.b_hidden[0].clone()]), c(&vec![g.b_hidden[1].clone()]), c(&vec![g.b_hidden[2].clone()])],
    }
}

pub fn bigru_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let (len, e) = dims(&mut rng);
        let d = rng.gen_range(1..5);
        let xs = rand_mat(&mut rng, len, e);
        let (fwd, bwd) = (Gru::random(&mut rng, e, d), Gru::random(&mut rng, e, d));
        let mut tape = Tape::new();
        let x = tape.constant(to_tensor(&xs));
        let (fv, bv) = (gru_vars(&mut tape, &fwd), gru_vars(&mut tape, &bwd));
        let out = bigru_encode(&mut tape, x, &fv, &bv).unwrap();
        worst = worst.max(max_diff(&bigru(&xs, &fwd, &bwd), tape.value(out)));
    }
    worst
}

pub fn similarity_vector_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let (m, d) = dims(&mut rng);
        let (x, y, w) = (rand_mat(&mut rng, 1, d), rand_mat(&mut rng, 1, d), rand_mat(&mut rng, m, d));
        let got = eval(|t| {
            let (a, b, c) = (t.constant(to_tensor(&x)), t.constant(to_tensor(&y)), t.constant(to_tensor(&w)));
            similarity_vector(t, a, b, c)
        })
        .unwrap();
        worst = worst.max(max_diff(&vec![super::similarity_vector(&x[0], &y[0], &w)], &got));
    }
    worst
}
