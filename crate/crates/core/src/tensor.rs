//! Dense rank-3 `f32` tensors laid out as `(batch, length, features)`.
//!
//! Every signal in the autoencoders is a sequence of feature vectors per block, so a
//! single fixed-rank layout is enough. Convolution kernels reuse the same type with the
//! dims `(kernel, in_features, out_features)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn full(dims: [usize; 3], value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values cannot fill dims {:?} ({} entries)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            dims: [1, 1, 1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn length(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn features(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, i: usize, f: usize) -> f32 {
        self.data[(b * self.dims[1] + i) * self.dims[2] + f]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, i: usize, f: usize) -> &mut f32 {
        let idx = (b * self.dims[1] + i) * self.dims[2] + f;
        &mut self.data[idx]
    }

    pub fn reshape(self, dims: [usize; 3]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates tensors along the feature axis.
    pub fn concat_features(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("feature concatenation of zero tensors".into()))?;
        let (batch, length) = (first.batch(), first.length());
        if let Some(bad) = parts
            .iter()
            .find(|p| p.batch() != batch || p.length() != length)
        {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?} along features",
                first.dims, bad.dims
            )));
        }
        let width: usize = parts.iter().map(|p| p.features()).sum();
        let mut data = Vec::with_capacity(batch * length * width);
        for row in 0..batch * length {
            for p in parts {
                let f = p.features();
                data.extend_from_slice(&p.data[row * f..(row + 1) * f]);
            }
        }
        Ok(Self {
            dims: [batch, length, width],
            data,
        })
    }

    /// Copies the feature columns `start..start + width`.
    pub fn slice_features(&self, start: usize, width: usize) -> Result<Self> {
        let f = self.features();
        if start + width > f || width == 0 {
            return Err(Error::Shape(format!(
                "feature slice {}..{} out of {} features",
                start,
                start + width,
                f
            )));
        }
        let rows = self.batch() * self.length();
        let mut data = Vec::with_capacity(rows * width);
        for row in 0..rows {
            data.extend_from_slice(&self.data[row * f + start..row * f + start + width]);
        }
        Ok(Self {
            dims: [self.batch(), self.length(), width],
            data,
        })
    }

    /// Gathers positions along the length axis: `out[b, i, :] = self[b, index[i], :]`.
    pub fn gather_length(&self, index: &[usize]) -> Result<Self> {
        if index.len() != self.length() {
            return Err(Error::Shape(format!(
                "permutation of length {} applied to sequence of length {}",
                index.len(),
                self.length()
            )));
        }
        let (len, f) = (self.length(), self.features());
        let mut data = Vec::with_capacity(self.numel());
        for b in 0..self.batch() {
            let base = b * len * f;
            for &src in index {
                data.extend_from_slice(&self.data[base + src * f..base + (src + 1) * f]);
            }
        }
        Ok(Self {
            dims: self.dims,
            data,
        })
    }

    /// Gathers entries of each block's flattened `length * features` vector.
    pub fn gather_flat(&self, index: &[usize]) -> Result<Self> {
        let per_block = self.length() * self.features();
        if index.len() != per_block {
            return Err(Error::Shape(format!(
                "permutation of length {} applied to blocks of {} entries",
                index.len(),
                per_block
            )));
        }
        let mut data = Vec::with_capacity(self.numel());
        for block in self.data.chunks_exact(per_block) {
            data.extend(index.iter().map(|&src| block[src]));
        }
        Ok(Self {
            dims: self.dims,
            data,
        })
    }

    /// Scales each block `b` by `scale[b]`.
    pub fn scale_blocks(&self, scale: &[f32]) -> Result<Self> {
        if scale.len() != self.batch() {
            return Err(Error::Shape(format!(
                "{} block scales for batch of {}",
                scale.len(),
                self.batch()
            )));
        }
        let per_block = self.length() * self.features();
        let mut out = self.clone();
        for (block, &s) in out.data.chunks_exact_mut(per_block).zip(scale) {
            block.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }
}
