//! Pure dense kernels. All reductions run in a fixed index order so the same
//! inputs always give bit-identical outputs.

use crate::error::{FivesError, Result};
use crate::tensor::Tensor;

/// Clipping bound used by [`logit`].
pub const LOGIT_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit_scalar(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Inverse of [`sigmoid`]; inputs are clipped to `[LOGIT_EPS, 1 - LOGIT_EPS]`.
pub fn logit(p: &Tensor) -> Tensor {
    p.map(logit_scalar)
}

/// `W x + b`. `x` is either a vector `[in]` or a row batch `[n, in]`;
/// `W` is `[out, in]` and `b` is `[out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.ndim() != 2 {
        return Err(FivesError::Dimension {
            left: w.shape().to_vec(),
            right: vec![],
            context: "linear weight must be rank 2",
        });
    }
    let (out, inner) = (w.shape()[0], w.shape()[1]);
    let (rows, batched) = match x.shape() {
        [n] if *n == inner => (1, false),
        [r, n] if *n == inner => (*r, true),
        _ => {
            return Err(FivesError::Dimension {
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
                context: "linear input vs weight",
            })
        }
    };
    if b.shape() != [out] {
        return Err(FivesError::Dimension {
            left: b.shape().to_vec(),
            right: w.shape().to_vec(),
            context: "linear bias vs weight",
        });
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &xd[r * inner..(r + 1) * inner];
        for o in 0..out {
            let wr = &wd[o * inner..(o + 1) * inner];
            let mut acc = bd[o];
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            y[r * out + o] = acc;
        }
    }
    let shape = if batched { vec![rows, out] } else { vec![out] };
    Tensor::new(shape, y)
}

/// Weighted mean of message rows: `sum_j w_j * messages_j / max(sum_j w_j, eps)`.
pub fn weighted_mean_aggregate(messages: &Tensor, weights: &[f64], eps: f64) -> Result<Tensor> {
    let [m, d] = messages.shape() else {
        return Err(FivesError::Dimension {
            left: messages.shape().to_vec(),
            right: vec![weights.len()],
            context: "aggregate messages must be rank 2",
        });
    };
    let (m, d) = (*m, *d);
    if weights.len() != m {
        return Err(FivesError::Dimension {
            left: vec![m, d],
            right: vec![weights.len()],
            context: "aggregate weights vs message rows",
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(FivesError::NumericDomain(format!(
            "aggregation weight {w} is negative or NaN"
        )));
    }
    let total: f64 = weights.iter().sum();
    let denom = total.max(eps);
    let mut out = vec![0.0; d];
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&messages.data()[j * d..(j + 1) * d]) {
            *o += w * v;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    Ok(Tensor::vector(out))
}
