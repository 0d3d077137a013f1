//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Var`] owns its value and, when any of its inputs requires a gradient, a
//! reference to those inputs plus a closure mapping the upstream gradient to input
//! gradients. Graphs built entirely from non-trainable leaves keep no history, so
//! inference through the same code path frees intermediate values as it goes.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps the upstream gradient and the op inputs to one optional gradient per input.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[Var]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("dims", &self.0.value.dims())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// A leaf that collects a gradient.
    pub fn parameter(value: Tensor) -> Self {
        Self::leaf(value, true)
    }

    /// A leaf without gradient (data, frozen weights).
    pub fn constant(value: Tensor) -> Self {
        Self::leaf(value, false)
    }

    pub fn leaf(value: Tensor, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Records the result of an op. History is kept only if some input needs a gradient.
    pub fn from_op(value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Self {
        if parents.iter().any(Var::requires_grad) {
            Var(Rc::new(Node {
                value,
                requires_grad: true,
                parents,
                backward: Some(backward),
            }))
        } else {
            Self::constant(value)
        }
    }

    #[inline]
    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.0.value.dims()
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Detached copy of the value.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from this (scalar) node and returns gradients of all leaves
    /// that require them.
    pub fn backward(&self) -> Gradients {
        let mut grads: HashMap<usize, Tensor> = HashMap::new();
        if !self.requires_grad() {
            return Gradients(grads);
        }
        let order = self.topological_order();
        grads.insert(self.key(), Tensor::full(self.dims(), 1.0));
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads.remove(&node.key()) else {
                continue;
            };
            let parent_grads = backward(&upstream, &node.0.parents);
            for (parent, grad) in node.0.parents.iter().zip(parent_grads) {
                let Some(grad) = grad else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.dims(), parent.dims());
                match grads.get_mut(&parent.key()) {
                    Some(acc) => acc.add_assign(&grad),
                    None => {
                        grads.insert(parent.key(), grad);
                    }
                }
            }
        }
        Gradients(grads)
    }

    /// Reverse post-order of the subgraph of nodes that require gradients.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, next_child)) = stack.pop() {
            if next_child < node.0.parents.len() {
                let child = node.0.parents[next_child].clone();
                stack.push((node, next_child + 1));
                if child.requires_grad() && visited.insert(child.key()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

/// Leaf gradients produced by [`Var::backward`].
pub struct Gradients(HashMap<usize, Tensor>);

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.0.get(&var.key())
    }

    /// Gradient of `var`, or zeros when it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.dims()))
    }
}

fn same_dims(a: &Var, b: &Var, op: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    same_dims(a, b, "add")?;
    let value = a.value().zip_map(b.value(), |x, y| x + y)?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
    ))
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    same_dims(a, b, "sub")?;
    let value = a.value().zip_map(b.value(), |x, y| x - y)?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
    ))
}

pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    same_dims(a, b, "mul")?;
    let value = a.value().zip_map(b.value(), |x, y| x * y)?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p| {
            let ga = g.zip_map(p[1].value(), |g, y| g * y).ok();
            let gb = g.zip_map(p[0].value(), |g, x| g * x).ok();
            vec![ga, gb]
        }),
    ))
}

pub fn scale(a: &Var, factor: f32) -> Var {
    Var::from_op(
        a.value().map(|v| v * factor),
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.map(|v| v * factor))]),
    )
}

pub fn elu(a: &Var) -> Var {
    let value = a.value().map(|v| if v > 0.0 { v } else { v.exp_m1() });
    Var::from_op(
        value,
        vec![a.clone()],
        Box::new(|g, p| {
            let dx = g
                .zip_map(p[0].value(), |g, x| if x > 0.0 { g } else { g * x.exp() })
                .ok();
            vec![dx]
        }),
    )
}

pub fn tanh(a: &Var) -> Var {
    let value = a.value().map(f32::tanh);
    Var::from_op(
        value.clone(),
        vec![a.clone()],
        Box::new(move |g, _| vec![g.zip_map(&value, |g, y| g * (1.0 - y * y)).ok()]),
    )
}

pub fn concat_features(parts: &[&Var]) -> Result<Var> {
    let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
    let value = Tensor::concat_features(&values)?;
    let widths: Vec<usize> = parts.iter().map(|p| p.dims()[2]).collect();
    Ok(Var::from_op(
        value,
        parts.iter().map(|&p| p.clone()).collect(),
        Box::new(move |g, p| {
            let mut start = 0;
            widths
                .iter()
                .zip(p)
                .map(|(&w, parent)| {
                    let part = parent
                        .requires_grad()
                        .then(|| g.slice_features(start, w).ok())
                        .flatten();
                    start += w;
                    part
                })
                .collect()
        }),
    ))
}

pub fn slice_features(a: &Var, start: usize, width: usize) -> Result<Var> {
    let value = a.value().slice_features(start, width)?;
    let total = a.dims()[2];
    Ok(Var::from_op(
        value,
        vec![a.clone()],
        Box::new(move |g, _| {
            let mut parts = Vec::with_capacity(3);
            let [b, l, _] = g.dims();
            let before = (start > 0).then(|| Tensor::zeros([b, l, start]));
            let after = (start + width < total).then(|| Tensor::zeros([b, l, total - start - width]));
            if let Some(t) = before.as_ref() {
                parts.push(t);
            }
            parts.push(g);
            if let Some(t) = after.as_ref() {
                parts.push(t);
            }
            vec![Tensor::concat_features(&parts).ok()]
        }),
    ))
}

/// `out[b, i, :] = a[b, index[i], :]`; `inverse` must be the inverse permutation.
pub fn gather_length(a: &Var, index: Rc<[usize]>, inverse: Rc<[usize]>) -> Result<Var> {
    let value = a.value().gather_length(&index)?;
    Ok(Var::from_op(
        value,
        vec![a.clone()],
        Box::new(move |g, _| vec![g.gather_length(&inverse).ok()]),
    ))
}

/// Permutation of each block's flattened entries; `inverse` must be the inverse permutation.
pub fn gather_flat(a: &Var, index: Rc<[usize]>, inverse: Rc<[usize]>) -> Result<Var> {
    let value = a.value().gather_flat(&index)?;
    Ok(Var::from_op(
        value,
        vec![a.clone()],
        Box::new(move |g, _| vec![g.gather_flat(&inverse).ok()]),
    ))
}

/// Mean and standard deviation over every entry of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub mean: f64,
    pub std: f64,
}

impl PowerStats {
    pub fn of(t: &Tensor) -> Result<Self> {
        let n = t.numel() as f64;
        if t.numel() == 0 {
            return Err(Error::Empty("power statistics of an empty batch".into()));
        }
        let mean = t.sum() / n;
        let var = t
            .data()
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        if !(var > 0.0) {
            return Err(Error::Degenerate(
                "batch is constant; power normalization undefined".into(),
            ));
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Zero-mean, unit-second-moment normalization with batch statistics; gradients flow
/// through the statistics.
pub fn normalize_batch(a: &Var) -> Result<(Var, PowerStats)> {
    let stats = PowerStats::of(a.value())?;
    let value = normalize_with(a.value(), stats);
    let inv_std = (1.0 / stats.std) as f32;
    let out = Var::from_op(
        value.clone(),
        vec![a.clone()],
        Box::new(move |g, _| {
            let n = g.numel() as f64;
            let mean_g = g.sum() / n;
            let mean_gy = g
                .data()
                .iter()
                .zip(value.data())
                .map(|(&g, &y)| g as f64 * y as f64)
                .sum::<f64>()
                / n;
            let (mean_g, mean_gy) = (mean_g as f32, mean_gy as f32);
            vec![g
                .zip_map(&value, |g, y| inv_std * (g - mean_g - y * mean_gy))
                .ok()]
        }),
    );
    Ok((out, stats))
}

/// Normalization with frozen statistics (an affine map).
pub fn normalize_frozen(a: &Var, stats: PowerStats) -> Var {
    let inv_std = (1.0 / stats.std) as f32;
    Var::from_op(
        normalize_with(a.value(), stats),
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.map(|v| v * inv_std))]),
    )
}

fn normalize_with(t: &Tensor, stats: PowerStats) -> Tensor {
    t.map(|v| ((v as f64 - stats.mean) / stats.std) as f32)
}

/// Mean binary cross-entropy between `sigmoid(logits)` and `targets` ∈ {0, 1}.
pub fn bce_with_logits(logits: &Var, targets: &Tensor) -> Result<Var> {
    logits.value().check_same_dims(targets)?;
    let n = targets.numel() as f64;
    let loss = logits
        .value()
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let z = z as f64;
            z.max(0.0) - z * t as f64 + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / n;
    let targets = targets.clone();
    Ok(Var::from_op(
        Tensor::scalar(loss as f32),
        vec![logits.clone()],
        Box::new(move |g, p| {
            let up = g.data()[0] / n as f32;
            vec![p[0]
                .value()
                .zip_map(&targets, |z, t| up * (sigmoid(z) - t))
                .ok()]
        }),
    ))
}

#[inline]
pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Shape of a 1-D convolution kernel: `(kernel, in_features, out_features)`.
fn conv_geometry(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let [kernel, cin, cout] = w.dims();
    if kernel % 2 == 0 {
        return Err(Error::Shape(format!("kernel size {kernel} must be odd")));
    }
    if x.features() != cin {
        return Err(Error::Shape(format!(
            "conv1d expects {cin} input features, got {}",
            x.features()
        )));
    }
    if b.dims() != [1, 1, cout] {
        return Err(Error::Shape(format!(
            "conv1d bias dims {:?}, expected [1, 1, {cout}]",
            b.dims()
        )));
    }
    Ok((kernel, cin, cout))
}

/// Unfolds `x` into rows of `kernel * cin` entries with zero padding at both ends.
fn im2col(x: &Tensor, kernel: usize) -> Vec<f32> {
    let [batch, len, cin] = x.dims();
    let pad = kernel / 2;
    let width = kernel * cin;
    let mut cols = vec![0.0f32; batch * len * width];
    let xs = x.data();
    for b in 0..batch {
        for i in 0..len {
            let row = &mut cols[(b * len + i) * width..(b * len + i + 1) * width];
            for t in 0..kernel {
                let src = i as isize + t as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (b * len + src as usize) * cin;
                row[t * cin..(t + 1) * cin].copy_from_slice(&xs[s..s + cin]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f32], dims: [usize; 3], kernel: usize) -> Tensor {
    let [batch, len, cin] = dims;
    let pad = kernel / 2;
    let width = kernel * cin;
    let mut dx = Tensor::zeros(dims);
    let out = dx.data_mut();
    for b in 0..batch {
        for i in 0..len {
            let row = &dcols[(b * len + i) * width..(b * len + i + 1) * width];
            for t in 0..kernel {
                let src = i as isize + t as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (b * len + src as usize) * cin;
                for (o, &v) in out[s..s + cin].iter_mut().zip(&row[t * cin..(t + 1) * cin]) {
                    *o += v;
                }
            }
        }
    }
    dx
}

/// Row-major `c = a · b` (+ `c` if `accumulate`), with `a` given by explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of the slices for the given m, k, n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-length 1-D convolution along the block axis.
///
/// `x`: `(batch, length, cin)`, `w`: `(kernel, cin, cout)`, `b`: `(1, 1, cout)`.
pub fn conv1d(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let (kernel, cin, cout) = conv_geometry(x.value(), w.value(), b.value())?;
    let [batch, len, _] = x.dims();
    let rows = batch * len;
    let width = kernel * cin;

    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(b.value().data());
    }
    let owned_cols;
    let cols: &[f32] = if kernel == 1 {
        x.value().data()
    } else {
        owned_cols = im2col(x.value(), kernel);
        &owned_cols
    };
    gemm(
        rows,
        width,
        cout,
        cols,
        (width as isize, 1),
        w.value().data(),
        (cout as isize, 1),
        &mut out,
        true,
    );
    let value = Tensor::from_vec([batch, len, cout], out)?;

    Ok(Var::from_op(
        value,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, p| {
            let (x, w, b) = (&p[0], &p[1], &p[2]);
            let gd = g.data();
            let dw = w.requires_grad().then(|| {
                let owned;
                let cols: &[f32] = if kernel == 1 {
                    x.value().data()
                } else {
                    owned = im2col(x.value(), kernel);
                    &owned
                };
                let mut dw = vec![0.0f32; width * cout];
                gemm(
                    width,
                    rows,
                    cout,
                    cols,
                    (1, width as isize),
                    gd,
                    (cout as isize, 1),
                    &mut dw,
                    false,
                );
                Tensor::from_vec([kernel, cin, cout], dw).expect("kernel dims")
            });
            let db = b.requires_grad().then(|| {
                let mut db = vec![0.0f32; cout];
                for row in gd.chunks_exact(cout) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                Tensor::from_vec([1, 1, cout], db).expect("bias dims")
            });
            let dx = x.requires_grad().then(|| {
                let mut dcols = vec![0.0f32; rows * width];
                gemm(
                    rows,
                    cout,
                    width,
                    gd,
                    (cout as isize, 1),
                    w.value().data(),
                    (1, cout as isize),
                    &mut dcols,
                    false,
                );
                if kernel == 1 {
                    Tensor::from_vec([batch, len, cin], dcols).expect("input dims")
                } else {
                    col2im(&dcols, [batch, len, cin], kernel)
                }
            });
            vec![dx, dw, db]
        }),
    ))
}
