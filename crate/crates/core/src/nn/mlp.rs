//! Shallow MLP: `w1 GeLU(w0 LN(x))` plus a residual path.
//!
//! The residual is the identity when input and output widths agree, otherwise the
//! optional `prefix.skip` projection of dims `[out, in]`.

use super::ops::{gelu_in_place, layer_norm, linear, TokenMatrix};
use crate::error::{Error, Result};
use crate::io::{Tensor, TensorStore};

pub struct MlpWeights<'a> {
    pub ln: &'a [f32],
    pub w0: &'a Tensor,
    pub w1: &'a Tensor,
    pub skip: Option<&'a Tensor>,
}

impl<'a> MlpWeights<'a> {
    /// Loads `prefix.*`, checking widths against `input` and `output`.
    pub fn load(store: &'a TensorStore, prefix: &str, input: usize, output: usize) -> Result<Self> {
        let get = |n: &str| {
            let name = format!("{prefix}.{n}");
            store
                .get(&name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))
        };
        let w0 = get("w0")?;
        if w0.dims.len() != 2 || w0.dims[1] != input {
            return Err(Error::Shape(format!(
                "tensor {prefix}.w0 has dims {:?}, expected [*, {input}]",
                w0.dims
            )));
        }
        let mid = w0.dims[0];
        let w1 = store.expect(&format!("{prefix}.w1"), &[output, mid])?;
        let ln = &store.expect(&format!("{prefix}.ln"), &[input])?.data;
        let skip = match store.get(&format!("{prefix}.skip")) {
            Some(_) => Some(store.expect(&format!("{prefix}.skip"), &[output, input])?),
            None => None,
        };
        Ok(MlpWeights { ln, w0, w1, skip })
    }

    pub fn output_dim(&self) -> usize {
        self.w1.dims[0]
    }

    pub fn forward(&self, x: &TokenMatrix) -> Result<TokenMatrix> {
        let mut h = linear(&layer_norm(x, self.ln), self.w0)?;
        gelu_in_place(&mut h.data);
        let mut y = linear(&h, self.w1)?;
        if x.cols == y.cols {
            y.add_assign(x);
        } else if let Some(s) = self.skip {
            y.add_assign(&linear(x, s)?);
        }
        Ok(y)
    }
}
