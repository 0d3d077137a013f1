//! Saturated straight-through estimator.
//!
//! The forward pass is `sign(x)` with `sign(0) = +1`. The backward pass lets the
//! upstream gradient through where `|x| < 1` and blocks it elsewhere, including at
//! `|x| = 1` exactly.

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Tensor;

/// Saved forward input for the gradient mask.
#[derive(Clone, Debug)]
pub struct SteContext {
    saved_input: Tensor,
}

impl SteContext {
    pub fn new(input: &Tensor) -> Self {
        Self {
            saved_input: input.clone(),
        }
    }

    pub fn saved_input(&self) -> &Tensor {
        &self.saved_input
    }

    pub fn backward(&self, upstream: &Tensor) -> Result<Tensor> {
        binarize_backward(&self.saved_input, upstream)
    }
}

#[inline]
fn sign(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Entries in {−1, +1}.
pub fn binarize_forward(x: &Tensor) -> Tensor {
    x.map(sign)
}

/// `upstream ⊙ 1[|x| < 1]`.
pub fn binarize_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.zip_map(x, |g, x| if x.abs() < 1.0 { g } else { 0.0 })
}

/// Graph op: binarize with the saturated surrogate gradient.
pub fn binarize(x: &Var) -> Var {
    Var::from_op(
        binarize_forward(x.value()),
        vec![x.clone()],
        Box::new(|g, p| vec![binarize_backward(p[0].value(), g).ok()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::mul;

    fn t(values: &[f32]) -> Tensor {
        Tensor::from_vec([1, values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(binarize_forward(&t(&[0.3, -2.0])), t(&[1.0, -1.0]));
        assert_eq!(binarize_forward(&t(&[0.0])), t(&[1.0]));
        let once = binarize_forward(&t(&[0.2, -0.7, 5.0]));
        assert_eq!(binarize_forward(&once), once);
    }

    #[test]
    fn backward_mask_examples() {
        let g = binarize_backward(&t(&[0.5, 1.5]), &t(&[1.0, 1.0])).unwrap();
        assert_eq!(g, t(&[1.0, 0.0]));
        assert_eq!(binarize_backward(&t(&[1.0]), &t(&[3.5])).unwrap(), t(&[0.0]));
        assert_eq!(binarize_backward(&t(&[-1.0]), &t(&[3.5])).unwrap(), t(&[0.0]));
        assert_eq!(
            binarize_backward(&t(&[0.1, -0.2]), &t(&[0.0, 0.0])).unwrap(),
            t(&[0.0, 0.0])
        );
        assert!(binarize_backward(&t(&[0.1]), &t(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn context_matches_free_function() {
        let x = t(&[0.9, -1.2, 0.0]);
        let ctx = SteContext::new(&x);
        assert_eq!(ctx.saved_input(), &x);
        let up = t(&[2.0, 2.0, 2.0]);
        assert_eq!(ctx.backward(&up).unwrap(), t(&[2.0, 0.0, 2.0]));
    }

    #[test]
    fn graph_gradient_is_masked_weight() {
        let x = t(&[0.5, -0.99, 1.0, -3.0, 0.0]);
        let w = t(&[1.5, -2.0, 4.0, 0.5, 7.0]);
        let p = Var::parameter(x);
        let loss = mul(&binarize(&p), &Var::constant(w)).unwrap();
        let g = loss.backward().get_or_zeros(&p);
        assert_eq!(g, t(&[1.5, -2.0, 0.0, 0.0, 7.0]));
    }
}
