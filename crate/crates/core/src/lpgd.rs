//! Loss-prioritized gradient decorrelation.
//!
//! Per-view gradients of a minibatch are sorted by descending loss and then
//! orthogonalized with classical Gram-Schmidt in that order: the hardest
//! view's gradient passes through untouched, every later one loses its
//! components along the already-accepted directions. The update is the mean
//! of the orthogonalized fields.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::renderer::GradField;

/// Loss and (calibrated) gradient of one view in a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGrad {
    pub loss: f64,
    pub grad: GradField,
    /// Position of the view in its minibatch; breaks loss ties.
    pub view_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpgdConfig {
    /// Projections onto fields with squared norm below
    /// `rel_eps × mean squared input norm` are skipped.
    pub rel_eps: f64,
}

impl Default for LpgdConfig {
    fn default() -> Self {
        Self { rel_eps: 1e-12 }
    }
}

impl LpgdConfig {
    pub fn new(rel_eps: f64) -> Result<Self> {
        if !(rel_eps > 0.0 && rel_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("lpgd eps {rel_eps} must be positive")));
        }
        Ok(Self { rel_eps })
    }

    /// Absolute threshold for a batch.
    pub fn threshold(&self, batch: &[ViewGrad]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mean_sq = batch.iter().map(|v| v.grad.norm_sq()).sum::<f64>() / batch.len() as f64;
        self.rel_eps * mean_sq
    }
}

/// Stable sort, highest loss first; equal losses keep ascending view index.
pub fn sort_by_loss(mut batch: Vec<ViewGrad>) -> Result<Vec<ViewGrad>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(v) = batch.iter().find(|v| !v.loss.is_finite()) {
        return Err(Error::InvalidConfig(format!("view {} has non-finite loss {}", v.view_index, v.loss)));
    }
    batch.sort_by(|a, b| {
        b.loss
            .partial_cmp(&a.loss)
            .unwrap_or(Ordering::Equal)
            .then(a.view_index.cmp(&b.view_index))
    });
    Ok(batch)
}

/// Output of [`orthogonalize`]: one field per input plus which were dropped
/// as degenerate.
#[derive(Clone, Debug)]
pub struct Orthogonalized {
    pub fields: Vec<GradField>,
    /// `skipped[i]` is true when field `i` fell under the threshold and was
    /// replaced by zero.
    pub skipped: Vec<bool>,
}

/// Classical Gram-Schmidt over already-sorted views.
///
/// `out[0] = g[0]`; for `i ≥ 1`, `out[i] = g[i] − Σ_{j<i} α_ij out[j]` with
/// `α_ij = ⟨g[i], out[j]⟩ / ‖out[j]‖²`, always using the raw `g[i]`. A result
/// whose squared norm is below `eps` becomes the zero field and is never
/// projected against.
pub fn orthogonalize(ordered: &[ViewGrad], eps: f64) -> Orthogonalized {
    let mut fields: Vec<GradField> = Vec::with_capacity(ordered.len());
    let mut norms_sq: Vec<f64> = Vec::with_capacity(ordered.len());
    let mut skipped = Vec::with_capacity(ordered.len());

    for (i, view) in ordered.iter().enumerate() {
        let g = view.grad.as_slice();
        if i == 0 {
            let n = view.grad.norm_sq();
            let degenerate = n < eps || n == 0.0;
            fields.push(view.grad.clone());
            norms_sq.push(n);
            skipped.push(degenerate);
            continue;
        }
        let alphas: Vec<(usize, f64)> = (0..i)
            .filter(|&j| !skipped[j])
            .map(|j| (j, view.grad.dot(&fields[j]) / norms_sq[j]))
            .collect();
        let mut residual = g.to_vec();
        for (j, alpha) in alphas {
            for (r, b) in residual.iter_mut().zip(fields[j].as_slice()) {
                *r -= alpha * b;
            }
        }
        let n: f64 = residual.iter().map(|v| v * v).sum();
        let degenerate = n < eps || n == 0.0;
        if degenerate {
            residual.iter_mut().for_each(|v| *v = 0.0);
        }
        let field = GradField::from_dense(view.grad.dims(), residual).expect("same dims as input");
        fields.push(field);
        norms_sq.push(if degenerate { 0.0 } else { n });
        skipped.push(degenerate);
    }
    Orthogonalized { fields, skipped }
}

/// Texelwise mean `(1/k) Σ fields`.
pub fn aggregate(fields: &[GradField], k: usize) -> Result<GradField> {
    if fields.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: fields.len(),
        });
    }
    let first = fields.first().ok_or(Error::EmptyBatch)?;
    let dims = first.dims();
    let mut sum = vec![0.0; first.as_slice().len()];
    for f in fields {
        if f.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: (dims.width, dims.height),
                actual: (f.dims().width, f.dims().height),
            });
        }
        for (s, v) in sum.iter_mut().zip(f.as_slice()) {
            *s += v;
        }
    }
    let inv = 1.0 / k as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    GradField::from_dense(dims, sum)
}

/// Full pipeline: sort, orthogonalize, average.
pub fn decorrelate(batch: Vec<ViewGrad>, config: &LpgdConfig) -> Result<GradField> {
    decorrelate_detailed(batch, config).map(|d| d.update)
}

/// [`decorrelate`] keeping the intermediate results for diagnostics.
#[derive(Clone, Debug)]
pub struct Decorrelation {
    pub ordered: Vec<ViewGrad>,
    pub orthogonal: Orthogonalized,
    pub update: GradField,
}

pub fn decorrelate_detailed(batch: Vec<ViewGrad>, config: &LpgdConfig) -> Result<Decorrelation> {
    let k = batch.len();
    let eps = config.threshold(&batch);
    let ordered = sort_by_loss(batch)?;
    let orthogonal = orthogonalize(&ordered, eps);
    let update = aggregate(&orthogonal.fields, k)?;
    Ok(Decorrelation {
        ordered,
        orthogonal,
        update,
    })
}

/// Plain texelwise mean of the view gradients, the update without LPGD.
pub fn mean_gradient(batch: &[ViewGrad]) -> Result<GradField> {
    let fields: Vec<GradField> = batch.iter().map(|v| v.grad.clone()).collect();
    aggregate(&fields, batch.len())
}

/// Upper triangle (row-major, i < j) of the pairwise cosine-similarity
/// matrix. Pairs involving a zero field report 0.
pub fn pairwise_cosines(fields: &[GradField]) -> Vec<f64> {
    let norms: Vec<f64> = fields.iter().map(GradField::norm).collect();
    let mut out = Vec::new();
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let d = norms[i] * norms[j];
            out.push(if d > 0.0 { fields[i].dot(&fields[j]) / d } else { 0.0 });
        }
    }
    out
}
