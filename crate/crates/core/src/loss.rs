//! Bidirectional hardest-negative ranking loss.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Index of the hardest negative in each direction for positive `i`.
///
/// `groups[k]` identifies the image behind row/column `k`; entries sharing
/// the positive's group are never negatives. Ties go to the lower index.
/// Returns `(hardest text j for image i, hardest image j for text i)`.
pub fn hardest_negatives(s: &Tensor, groups: &[usize], i: usize) -> (Option<usize>, Option<usize>) {
    let b = s.rows();
    let pick = |value: &dyn Fn(usize) -> f64| {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..b {
            if j == i || groups[j] == groups[i] {
                continue;
            }
            let v = value(j);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        best.map(|(j, _)| j)
    };
    (pick(&|j| s.get(i, j)), pick(&|j| s.get(j, i)))
}

fn check(s: &Tensor, groups: Option<&[usize]>) -> Result<Vec<usize>> {
    let (r, c) = s.dims2();
    if r != c || s.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "ranking_loss",
            left: s.shape().to_vec(),
            right: vec![r, r],
        });
    }
    if r < 2 {
        return Err(TensorError::BatchTooSmall(r));
    }
    match groups {
        Some(g) if g.len() != r => Err(TensorError::Invalid(format!(
            "{} group ids for a batch of {r}",
            g.len()
        ))),
        Some(g) => Ok(g.to_vec()),
        None => Ok((0..r).collect()),
    }
}

/// Mean over positives of `[γ − S_ii + S_ij⁻]₊ + [γ − S_ii + S_j⁻i]₊` on `tape`.
///
/// `s` is `[B × B]` with `s[i][j] = score(image_i, text_j)`. Negative selection
/// happens on the current values and is not differentiated.
pub fn ranking_loss(tape: &mut Tape, s: Var, margin: f64, groups: Option<&[usize]>) -> Result<Var> {
    let value = tape.value(s).clone();
    let groups = check(&value, groups)?;
    let b = value.rows();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..b {
        let (t, im) = hardest_negatives(&value, &groups, i);
        for j in [t.map(|j| i * b + j), im.map(|j| j * b + i)].into_iter().flatten() {
            pos.push(i * b + i);
            neg.push(j);
        }
    }
    if pos.is_empty() {
        let zero = tape.scale(s, 0.0);
        return Ok(tape.sum(zero));
    }
    let p = tape.gather(s, &pos)?;
    let n = tape.gather(s, &neg)?;
    let gap = tape.sub(n, p)?;
    let hinge = tape.add_scalar(gap, margin);
    let hinge = tape.relu(hinge);
    let total = tape.sum(hinge);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Loss value and gradient with respect to every entry of `s`.
pub fn ranking_loss_with_grad(s: &Tensor, margin: f64, groups: Option<&[usize]>) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let v = tape.leaf(s.clone());
    let l = ranking_loss(&mut tape, v, margin, groups)?;
    tape.backward(l)?;
    let g = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; s.numel()]);
    Ok((tape.value(l).item(), Tensor::from_vec(s.shape().to_vec(), g)))
}
