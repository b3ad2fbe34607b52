use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamStore};
use crate::autodiff::{Tensor, Var};
use crate::cells::{GruOdeCell, LstmOdeCell};
use crate::rng::uniform_tensor;
use crate::Result;

/// `x · W + b` with `W` `[in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in `±gain/sqrt(in)`, bias zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform_tensor(&[in_dim, out_dim], bound, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(&p.get(self.w))?.add_row(&p.get(self.b))?)
    }
}

/// 2-D convolution layer over `[B, C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            uniform_tensor(&[out_channels, in_channels, kernel.0, kernel.1], bound, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_channels]));
        Self {
            w,
            b,
            stride,
            padding,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.conv2d(&p.get(self.w), Some(&p.get(self.b)), self.stride, self.padding)?)
    }

    /// Output extent along one axis.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
        (input + 2 * padding - kernel) / stride + 1
    }
}

/// Parameter ids of a continuous GRU registered in a store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruIds(pub [ParamId; 9]);

impl GruIds {
    pub fn register(store: &mut ParamStore, name: &str, params: crate::cells::GruOdeParams) -> Self {
        const NAMES: [&str; 9] = ["w_r", "u_r", "b_r", "w_u", "u_u", "b_u", "w_g", "u_g", "b_g"];
        let tensors = [
            params.w_r, params.u_r, params.b_r, params.w_u, params.u_u, params.b_u, params.w_g,
            params.u_g, params.b_g,
        ];
        let mut ids = Vec::with_capacity(9);
        for (n, t) in NAMES.iter().zip(tensors) {
            ids.push(store.add(format!("{name}.{n}"), t));
        }
        Self(ids.try_into().expect("nine ids"))
    }

    pub fn bind<'t>(&self, p: &Bound<'t>) -> Result<GruOdeCell<'t>> {
        GruOdeCell::new(self.0.map(|id| p.get(id)))
    }
}

/// Parameter ids of a continuous LSTM registered in a store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmIds(pub [ParamId; 3]);

impl LstmIds {
    pub fn register(store: &mut ParamStore, name: &str, params: crate::cells::LstmOdeParams) -> Self {
        Self([
            store.add(format!("{name}.w"), params.w),
            store.add(format!("{name}.u"), params.u),
            store.add(format!("{name}.b"), params.b),
        ])
    }

    pub fn bind<'t>(&self, p: &Bound<'t>) -> Result<LstmOdeCell<'t>> {
        LstmOdeCell::new(p.get(self.0[0]), p.get(self.0[1]), p.get(self.0[2]))
    }
}

/// One discrete LSTM layer, gates packed `[i f o g]` along columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            w: store.add(format!("{name}.w"), uniform_tensor(&[in_dim, 4 * hidden], k, rng)),
            u: store.add(format!("{name}.u"), uniform_tensor(&[hidden, 4 * hidden], k, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[4 * hidden])),
            hidden,
        }
    }

    /// One step; returns `(h, c)`.
    pub fn step<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        h: &Var<'t>,
        c: &Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let hd = self.hidden;
        let a = x
            .matmul(&p.get(self.w))?
            .add(&h.matmul(&p.get(self.u))?)?
            .add_row(&p.get(self.b))?;
        let i = a.slice_cols(0, hd)?.sigmoid();
        let f = a.slice_cols(hd, hd)?.sigmoid();
        let o = a.slice_cols(2 * hd, hd)?.sigmoid();
        let g = a.slice_cols(3 * hd, hd)?.tanh();
        let c = f.mul(c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        Ok((h, c))
    }
}
