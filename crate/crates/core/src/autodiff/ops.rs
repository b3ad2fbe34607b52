//! Differentiable primitives. Each forward constructor records one [`Op`];
//! `Op::backward` holds the matching vector-Jacobian product.

use super::kernels::{col2im_add, gemm, im2col, ConvGeometry};
use super::tape::{Node, Var};
use super::{AutodiffError, Tensor};

/// Probability clamp applied before logarithms in [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Pointwise kinds exposed through [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Tanh,
    Sigmoid,
    Add,
    Mul,
    Sub,
}

pub(crate) enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddRow {
        a: usize,
        row: usize,
    },
    Affine {
        a: usize,
        scale: f64,
    },
    Tanh {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    LeakyRelu {
        a: usize,
        slope: f64,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    ConcatCols {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
        cols: usize,
    },
    LinComb {
        terms: Vec<(usize, f64)>,
    },
    Rk4Combine {
        y: usize,
        k: [usize; 4],
        h: f64,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        batch: usize,
        out_channels: usize,
        geom: ConvGeometry,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<usize>,
    },
    MinibatchSimilarity {
        m: usize,
        batch: usize,
        p: usize,
        q: usize,
    },
    Bce {
        p: usize,
        target: usize,
    },
    Mse {
        a: usize,
        b: usize,
    },
    GruOde(Box<GruOdeSaved>),
    ChannelContract {
        f: usize,
        v: usize,
        batch: usize,
        hidden: usize,
        channels: usize,
    },
}

pub(crate) struct GruOdeSaved {
    h: usize,
    xr: usize,
    xu: usize,
    xg: usize,
    ur: usize,
    uu: usize,
    ug: usize,
    batch: usize,
    hidden: usize,
    r: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Mse { a, b } => vec![*a, *b],
            Op::AddRow { a, row } => vec![*a, *row],
            Op::Affine { a, .. }
            | Op::Tanh { a }
            | Op::Sigmoid { a }
            | Op::LeakyRelu { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::Reshape { a }
            | Op::SliceCols { a, .. } => vec![*a],
            Op::ConcatCols { parts, .. } => parts.iter().map(|p| p.0).collect(),
            Op::LinComb { terms } => terms.iter().map(|t| t.0).collect(),
            Op::Rk4Combine { y, k, .. } => vec![*y, k[0], k[1], k[2], k[3]],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::MaxPool2d { x, .. } => vec![*x],
            Op::MinibatchSimilarity { m, .. } => vec![*m],
            Op::Bce { p, target } => vec![*p, *target],
            Op::GruOde(s) => vec![s.h, s.xr, s.xu, s.xg, s.ur, s.uu, s.ug],
            Op::ChannelContract { f, v, .. } => vec![*f, *v],
        }
    }

    /// Emits `(input id, gradient)` pairs for the inputs that need them.
    pub(crate) fn backward(
        &self,
        out: &Tensor,
        g: &[f64],
        nodes: &[Node],
        emit: &mut dyn FnMut(usize, Vec<f64>),
    ) {
        let val = |id: usize| -> &Tensor { &nodes[id].value };
        let needs = |id: usize| nodes[id].requires_grad;
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(*m, *n, *k, g, false, val(*b).data(), true, &mut ga, false);
                    emit(*a, ga);
                }
                if needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(*k, *m, *n, val(*a).data(), true, g, false, &mut gb, false);
                    emit(*b, gb);
                }
            }
            Op::Add { a, b } => {
                emit(*a, g.to_vec());
                emit(*b, g.to_vec());
            }
            Op::Sub { a, b } => {
                emit(*a, g.to_vec());
                if needs(*b) {
                    emit(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if needs(*a) {
                    emit(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if needs(*b) {
                    emit(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::AddRow { a, row } => {
                emit(*a, g.to_vec());
                if needs(*row) {
                    let n = val(*row).numel();
                    let mut gr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(r, c)| *r += c);
                    }
                    emit(*row, gr);
                }
            }
            Op::Affine { a, scale } => emit(*a, g.iter().map(|v| v * scale).collect()),
            Op::Tanh { a } => emit(
                *a,
                g.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            ),
            Op::Sigmoid { a } => emit(
                *a,
                g.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            ),
            Op::LeakyRelu { a, slope } => emit(
                *a,
                g.iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                    .collect(),
            ),
            Op::Sum { a } => emit(*a, vec![g[0]; val(*a).numel()]),
            Op::Mean { a } => {
                let n = val(*a).numel();
                emit(*a, vec![g[0] / n as f64; n]);
            }
            Op::Reshape { a } => emit(*a, g.to_vec()),
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(id, cols) in parts {
                    if needs(id) {
                        let mut gp = Vec::with_capacity(rows * cols);
                        for r in 0..*rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + cols]);
                        }
                        emit(id, gp);
                    }
                    offset += cols;
                }
            }
            Op::SliceCols { a, start, cols } => {
                let av = val(*a);
                let (rows, total) = av.rows_cols();
                let mut ga = vec![0.0; av.numel()];
                for r in 0..rows {
                    ga[r * total + start..r * total + start + cols]
                        .copy_from_slice(&g[r * cols..(r + 1) * cols]);
                }
                emit(*a, ga);
            }
            Op::LinComb { terms } => {
                for &(id, c) in terms {
                    if needs(id) {
                        emit(id, g.iter().map(|v| v * c).collect());
                    }
                }
            }
            Op::Rk4Combine { y, k, h } => {
                emit(*y, g.to_vec());
                for (i, &ki) in k.iter().enumerate() {
                    if needs(ki) {
                        let w = if i == 0 || i == 3 { 1.0 } else { 2.0 };
                        emit(ki, g.iter().map(|v| h * (w * v) / 6.0).collect());
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                batch,
                out_channels,
                geom,
            } => {
                let (gx, gw, gb) = conv2d_backward(
                    g,
                    val(*x),
                    val(*w),
                    *batch,
                    *out_channels,
                    geom,
                    (needs(*x), needs(*w), b.is_some_and(needs)),
                );
                if let Some(gx) = gx {
                    emit(*x, gx);
                }
                if let Some(gw) = gw {
                    emit(*w, gw);
                }
                if let (Some(bi), Some(gb)) = (b, gb) {
                    emit(*bi, gb);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![0.0; val(*x).numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                emit(*x, gx);
            }
            Op::MinibatchSimilarity { m, batch, p, q } => {
                emit(*m, minibatch_similarity_backward(val(*m).data(), g, *batch, *p, *q));
            }
            Op::Bce { p, target } => {
                let (pv, tv) = (val(*p).data(), val(*target).data());
                let n = pv.len() as f64;
                if needs(*p) {
                    let gp = pv
                        .iter()
                        .zip(tv)
                        .map(|(&p, &t)| {
                            if p <= BCE_EPSILON || p >= 1.0 - BCE_EPSILON {
                                0.0
                            } else {
                                g[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n
                            }
                        })
                        .collect();
                    emit(*p, gp);
                }
            }
            Op::Mse { a, b } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let n = av.len() as f64;
                let ga: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(a, b)| 2.0 * (a - b) / n * g[0])
                    .collect();
                if needs(*b) {
                    emit(*b, ga.iter().map(|v| -v).collect());
                }
                emit(*a, ga);
            }
            Op::GruOde(s) => gru_ode_backward(s, g, nodes, emit),
            Op::ChannelContract {
                f,
                v,
                batch,
                hidden,
                channels,
            } => {
                let (fv, vv) = (val(*f).data(), val(*v).data());
                let (bsz, hd, c) = (*batch, *hidden, *channels);
                if needs(*f) {
                    let mut gf = vec![0.0; bsz * hd * c];
                    for b in 0..bsz {
                        for i in 0..hd {
                            let gi = g[b * hd + i];
                            for ch in 0..c {
                                gf[(b * hd + i) * c + ch] = gi * vv[b * c + ch];
                            }
                        }
                    }
                    emit(*f, gf);
                }
                if needs(*v) {
                    let mut gv = vec![0.0; bsz * c];
                    for b in 0..bsz {
                        for i in 0..hd {
                            let gi = g[b * hd + i];
                            for ch in 0..c {
                                gv[b * c + ch] += gi * fv[(b * hd + i) * c + ch];
                            }
                        }
                    }
                    emit(*v, gv);
                }
            }
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<(), AutodiffError> {
    a.same_tape(b)?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

fn map_unary(v: &Var<'_>, f: impl Fn(f64) -> f64) -> Tensor {
    let x = v.value();
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&a| f(a)).collect())
}

fn zip_binary(a: &Var<'_>, b: &Var<'_>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (x, y) = (a.value(), b.value());
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
    )
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], c),
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        ))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        same_shape("add", self, other)?;
        let v = zip_binary(self, other, |a, b| a + b);
        Ok(self.tape.push(v, Op::Add { a: self.id, b: other.id }))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        same_shape("sub", self, other)?;
        let v = zip_binary(self, other, |a, b| a - b);
        Ok(self.tape.push(v, Op::Sub { a: self.id, b: other.id }))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        same_shape("mul", self, other)?;
        let v = zip_binary(self, other, |a, b| a * b);
        Ok(self.tape.push(v, Op::Mul { a: self.id, b: other.id }))
    }

    /// Adds a bias row to every row (last axis must match the row length).
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(row)?;
        let (x, r) = (self.value(), row.value());
        let n = *x.shape().last().unwrap();
        if r.numel() != n {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), r.shape()),
            ));
        }
        let data = x
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r.data()).map(|(a, b)| a + b))
            .collect();
        Ok(self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::AddRow {
                a: self.id,
                row: row.id,
            },
        ))
    }

    /// `scale * self + shift`, pointwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        let v = map_unary(self, |a| scale * a + shift);
        self.tape.push(v, Op::Affine { a: self.id, scale })
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.affine(c, 0.0)
    }

    pub fn neg(&self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }

    /// `1 - self`.
    pub fn one_minus(&self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = map_unary(self, f64::tanh);
        self.tape.push(v, Op::Tanh { a: self.id })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = map_unary(self, stable_sigmoid);
        self.tape.push(v, Op::Sigmoid { a: self.id })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let v = map_unary(self, |a| if a > 0.0 { a } else { slope * a });
        self.tape.push(v, Op::LeakyRelu { a: self.id, slope })
    }

    /// Dispatches one of the pointwise kinds; binary kinds need `other`.
    pub fn elementwise(
        &self,
        kind: Elementwise,
        other: Option<&Var<'t>>,
    ) -> Result<Var<'t>, AutodiffError> {
        let rhs = || other.ok_or_else(|| shape_err("elementwise", "missing operand".into()));
        match kind {
            Elementwise::Tanh => Ok(self.tanh()),
            Elementwise::Sigmoid => Ok(self.sigmoid()),
            Elementwise::Add => self.add(rhs()?),
            Elementwise::Mul => self.mul(rhs()?),
            Elementwise::Sub => self.sub(rhs()?),
        }
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum { a: self.id })
    }

    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.tape.push(Tensor::scalar(s), Op::Mean { a: self.id })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let v = (*self.value()).clone().reshaped(shape.to_vec())?;
        Ok(self.tape.push(v, Op::Reshape { a: self.id }))
    }

    /// Columns `start..start + len` of a tensor viewed as `[rows, cols]`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let (rows, cols) = x.rows_cols();
        if len == 0 || start + len > cols {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{} of {cols} columns", start + len),
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.tape.push(
            Tensor::from_parts(shape, data),
            Op::SliceCols {
                a: self.id,
                start,
                cols: len,
            },
        ))
    }

    /// 2-D cross-correlation of `[B, C, H, W]` with `[O, C, kh, kw]`.
    ///
    /// Output extent per spatial axis is `floor((H + 2p - k) / s) + 1`.
    pub fn conv2d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(weight)?;
        let (x, w) = (self.value(), weight.value());
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(shape_err("conv2d", format!("input {sx:?}, kernel {sw:?}")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err("conv2d", "stride must be >= 1".into()));
        }
        let (batch, channels, height, width) = (sx[0], sx[1], sx[2], sx[3]);
        let (out_channels, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh > height + 2 * padding.0 || kw > width + 2 * padding.1 {
            return Err(AutodiffError::KernelTooLarge {
                op: "conv2d",
                kernel: (kh, kw),
                input: (height + 2 * padding.0, width + 2 * padding.1),
            });
        }
        if let Some(b) = bias {
            self.same_tape(b)?;
            if b.value().numel() != out_channels {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {out_channels} channels", b.shape()),
                ));
            }
        }
        let geom = ConvGeometry {
            channels,
            height,
            width,
            kernel: (kh, kw),
            stride,
            padding,
            out_height: (height + 2 * padding.0 - kh) / stride.0 + 1,
            out_width: (width + 2 * padding.1 - kw) / stride.1 + 1,
        };
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let in_size = channels * height * width;
        let out_size = out_channels * ncols;
        let mut out = vec![0.0; batch * out_size];
        let mut cols = vec![0.0; rows * ncols];
        let bias_val = bias.map(|b| b.value());
        for s in 0..batch {
            im2col(&x.data()[s * in_size..(s + 1) * in_size], &geom, &mut cols);
            let dst = &mut out[s * out_size..(s + 1) * out_size];
            gemm(out_channels, rows, ncols, w.data(), false, &cols, false, dst, false);
            if let Some(bv) = &bias_val {
                for (o, chunk) in dst.chunks_mut(ncols).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv.data()[o]);
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![batch, out_channels, geom.out_height, geom.out_width], out),
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                batch,
                out_channels,
                geom,
            },
        ))
    }

    /// Max pooling over `[B, C, H, W]` without padding. Ties route the
    /// gradient to the lowest linear index in the window.
    pub fn maxpool2d(
        &self,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let sx = x.shape();
        if sx.len() != 4 {
            return Err(shape_err("maxpool2d", format!("input {sx:?}")));
        }
        if stride.0 == 0 || stride.1 == 0 || window.0 == 0 || window.1 == 0 {
            return Err(shape_err("maxpool2d", "window and stride must be >= 1".into()));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if window.0 > h || window.1 > w {
            return Err(AutodiffError::KernelTooLarge {
                op: "maxpool2d",
                kernel: window,
                input: (h, w),
            });
        }
        let oh = (h - window.0) / stride.0 + 1;
        let ow = (w - window.1) / stride.1 + 1;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        let xd = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride.0 * w + j * stride.1;
                    for di in 0..window.0 {
                        for dj in 0..window.1 {
                            let idx = base + (i * stride.0 + di) * w + j * stride.1 + dj;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![b, c, oh, ow], out),
            Op::MaxPool2d { x: self.id, argmax },
        ))
    }
}

/// Concatenates rank-2 tensors (or tensors viewed as `[rows, cols]`) along
/// the last axis.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rows = values[0].rows_cols().0;
    let mut meta = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        if v.shape().len() != 2 || v.shape()[0] != rows {
            return Err(shape_err(
                "concat_cols",
                format!("{:?} with {rows} rows", v.shape()),
            ));
        }
        meta.push((p.id, v.shape()[1]));
    }
    let total: usize = meta.iter().map(|m| m.1).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (v, &(_, cols)) in values.iter().zip(&meta) {
            data.extend_from_slice(&v.data()[r * cols..(r + 1) * cols]);
        }
    }
    Ok(first.tape.push(
        Tensor::from_parts(vec![rows, total], data),
        Op::ConcatCols { parts: meta, rows },
    ))
}

/// `Σ c_i · x_i` over same-shaped inputs.
pub fn lincomb<'t>(terms: &[(Var<'t>, f64)]) -> Result<Var<'t>, AutodiffError> {
    let (first, _) = terms
        .first()
        .ok_or_else(|| shape_err("lincomb", "no terms".into()))?;
    for (v, _) in &terms[1..] {
        same_shape("lincomb", first, v)?;
    }
    let mut acc = vec![0.0; first.value().numel()];
    for (v, c) in terms {
        acc.iter_mut()
            .zip(v.value().data())
            .for_each(|(a, x)| *a += c * x);
    }
    Ok(first.tape.push(
        Tensor::from_parts(first.shape(), acc),
        Op::LinComb {
            terms: terms.iter().map(|(v, c)| (v.id, *c)).collect(),
        },
    ))
}

/// `y + h·(k1 + 2k2 + 2k3 + k4)/6`.
pub(crate) fn rk4_combine<'t>(
    y: &Var<'t>,
    k: [&Var<'t>; 4],
    h: f64,
) -> Result<Var<'t>, AutodiffError> {
    for ki in k {
        same_shape("rk4_combine", y, ki)?;
    }
    let yv = y.value();
    let kv: Vec<_> = k.iter().map(|v| v.value()).collect();
    let data = (0..yv.numel())
        .map(|i| {
            let s = kv[0].data()[i] + 2.0 * kv[1].data()[i] + 2.0 * kv[2].data()[i] + kv[3].data()[i];
            yv.data()[i] + h * s / 6.0
        })
        .collect();
    Ok(y.tape.push(
        Tensor::from_parts(yv.shape().to_vec(), data),
        Op::Rk4Combine {
            y: y.id,
            k: [k[0].id, k[1].id, k[2].id, k[3].id],
            h,
        },
    ))
}

/// Minibatch discrimination: appends, for each sample `i` and kernel `p`,
/// `Σ_{j≠i} exp(-‖M_{i,p} - M_{j,p}‖₁)` where `M = features · proj`
/// reshaped to `[B, P, Q]`.
pub fn minibatch_discrimination<'t>(
    features: &Var<'t>,
    proj: &Var<'t>,
    kernels: usize,
    kernel_dim: usize,
) -> Result<Var<'t>, AutodiffError> {
    let fs = features.shape();
    let ps = proj.shape();
    if fs.len() != 2 || ps.len() != 2 || ps[0] != fs[1] || ps[1] != kernels * kernel_dim {
        return Err(shape_err(
            "minibatch_discrimination",
            format!("features {fs:?}, projection {ps:?}, P={kernels}, Q={kernel_dim}"),
        ));
    }
    let m = features.matmul(proj)?;
    let o = minibatch_similarity(&m, kernels, kernel_dim)?;
    concat_cols(&[*features, o])
}

pub(crate) fn minibatch_similarity<'t>(
    m: &Var<'t>,
    p: usize,
    q: usize,
) -> Result<Var<'t>, AutodiffError> {
    let mv = m.value();
    let (batch, cols) = mv.rows_cols();
    if cols != p * q {
        return Err(shape_err("minibatch_similarity", format!("{cols} != {p}*{q}")));
    }
    let md = mv.data();
    let mut out = vec![0.0; batch * p];
    for i in 0..batch {
        for j in (i + 1)..batch {
            for k in 0..p {
                let l1: f64 = (0..q)
                    .map(|c| (md[i * cols + k * q + c] - md[j * cols + k * q + c]).abs())
                    .sum();
                let e = (-l1).exp();
                out[i * p + k] += e;
                out[j * p + k] += e;
            }
        }
    }
    Ok(m.tape.push(
        Tensor::from_parts(vec![batch, p], out),
        Op::MinibatchSimilarity {
            m: m.id,
            batch,
            p,
            q,
        },
    ))
}

fn minibatch_similarity_backward(md: &[f64], g: &[f64], batch: usize, p: usize, q: usize) -> Vec<f64> {
    let cols = p * q;
    let mut gm = vec![0.0; md.len()];
    for i in 0..batch {
        for j in (i + 1)..batch {
            for k in 0..p {
                let l1: f64 = (0..q)
                    .map(|c| (md[i * cols + k * q + c] - md[j * cols + k * q + c]).abs())
                    .sum();
                let e = (-l1).exp();
                let up = (g[i * p + k] + g[j * p + k]) * e;
                for c in 0..q {
                    let d = md[i * cols + k * q + c] - md[j * cols + k * q + c];
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    gm[i * cols + k * q + c] -= up * s;
                    gm[j * cols + k * q + c] += up * s;
                }
            }
        }
    }
    gm
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[BCE_EPSILON, 1 - BCE_EPSILON]`.
pub fn bce_loss<'t>(p: &Var<'t>, target: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
    same_shape("bce_loss", p, target)?;
    let (pv, tv) = (p.value(), target.value());
    let n = pv.numel() as f64;
    let loss = pv
        .data()
        .iter()
        .zip(tv.data())
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / n;
    Ok(p.tape.push(
        Tensor::scalar(loss),
        Op::Bce {
            p: p.id,
            target: target.id,
        },
    ))
}

/// Mean squared error.
pub fn mse_loss<'t>(a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
    same_shape("mse_loss", a, b)?;
    let (av, bv) = (a.value(), b.value());
    let loss = av
        .data()
        .iter()
        .zip(bv.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / av.numel() as f64;
    Ok(a.tape.push(Tensor::scalar(loss), Op::Mse { a: a.id, b: b.id }))
}

/// Batched contraction `out[b, i] = Σ_c f[b, i·C + c] · v[b, c]`.
pub fn channel_contract<'t>(
    f: &Var<'t>,
    v: &Var<'t>,
    channels: usize,
) -> Result<Var<'t>, AutodiffError> {
    f.same_tape(v)?;
    let (fv, vv) = (f.value(), v.value());
    let (batch, fcols) = fv.rows_cols();
    let (vb, vc) = vv.rows_cols();
    if vb != batch || vc != channels || fcols % channels != 0 {
        return Err(shape_err(
            "channel_contract",
            format!("field {:?}, control {:?}, C={channels}", fv.shape(), vv.shape()),
        ));
    }
    let hidden = fcols / channels;
    let mut out = vec![0.0; batch * hidden];
    for b in 0..batch {
        for i in 0..hidden {
            out[b * hidden + i] = (0..channels)
                .map(|c| fv.data()[(b * hidden + i) * channels + c] * vv.data()[b * channels + c])
                .sum();
        }
    }
    Ok(f.tape.push(
        Tensor::from_parts(vec![batch, hidden], out),
        Op::ChannelContract {
            f: f.id,
            v: v.id,
            batch,
            hidden,
            channels,
        },
    ))
}

/// Fused continuous GRU vector field on row-major batches:
///
/// ```text
/// r = σ(xr + h·Ur)   u = σ(xu + h·Uu)   g = tanh(xg + (r⊙h)·Ug)
/// dh/dt = (1 - u) ⊙ (g - h)
/// ```
///
/// `xr`, `xu`, `xg` carry the already-projected input plus bias, `[B, H]`;
/// the recurrent matrices are `[H, H]`.
#[allow(clippy::too_many_arguments)]
pub fn gru_ode_fused<'t>(
    h: &Var<'t>,
    xr: &Var<'t>,
    xu: &Var<'t>,
    xg: &Var<'t>,
    ur: &Var<'t>,
    uu: &Var<'t>,
    ug: &Var<'t>,
) -> Result<Var<'t>, AutodiffError> {
    let hs = h.shape();
    if hs.len() != 2 {
        return Err(shape_err("gru_ode", format!("state {hs:?}")));
    }
    let (batch, hidden) = (hs[0], hs[1]);
    for x in [xr, xu, xg] {
        same_shape("gru_ode", h, x)?;
    }
    for u in [ur, uu, ug] {
        h.same_tape(u)?;
        if u.shape() != [hidden, hidden] {
            return Err(shape_err(
                "gru_ode",
                format!("recurrent {:?} for hidden {hidden}", u.shape()),
            ));
        }
    }
    let hv = h.value();
    let n = batch * hidden;
    let mut ar = (*xr.value()).clone().into_data();
    gemm(batch, hidden, hidden, hv.data(), false, ur.value().data(), false, &mut ar, true);
    let r: Vec<f64> = ar.iter().map(|&a| stable_sigmoid(a)).collect();
    let mut au = (*xu.value()).clone().into_data();
    gemm(batch, hidden, hidden, hv.data(), false, uu.value().data(), false, &mut au, true);
    let u: Vec<f64> = au.iter().map(|&a| stable_sigmoid(a)).collect();
    let rh: Vec<f64> = r.iter().zip(hv.data()).map(|(r, h)| r * h).collect();
    let mut ag = (*xg.value()).clone().into_data();
    gemm(batch, hidden, hidden, &rh, false, ug.value().data(), false, &mut ag, true);
    let g: Vec<f64> = ag.iter().map(|a| a.tanh()).collect();
    let out: Vec<f64> = (0..n).map(|i| (1.0 - u[i]) * (g[i] - hv.data()[i])).collect();
    Ok(h.tape.push(
        Tensor::from_parts(vec![batch, hidden], out),
        Op::GruOde(Box::new(GruOdeSaved {
            h: h.id,
            xr: xr.id,
            xu: xu.id,
            xg: xg.id,
            ur: ur.id,
            uu: uu.id,
            ug: ug.id,
            batch,
            hidden,
            r,
            u,
            g,
        })),
    ))
}

fn gru_ode_backward(
    s: &GruOdeSaved,
    dout: &[f64],
    nodes: &[Node],
    emit: &mut dyn FnMut(usize, Vec<f64>),
) {
    let (b, hd) = (s.batch, s.hidden);
    let n = b * hd;
    let hv = nodes[s.h].value.data();
    let needs = |id: usize| nodes[id].requires_grad;

    let mut dh: Vec<f64> = (0..n).map(|i| -dout[i] * (1.0 - s.u[i])).collect();
    let da_g: Vec<f64> = (0..n)
        .map(|i| dout[i] * (1.0 - s.u[i]) * (1.0 - s.g[i] * s.g[i]))
        .collect();
    let da_u: Vec<f64> = (0..n)
        .map(|i| -dout[i] * (s.g[i] - hv[i]) * s.u[i] * (1.0 - s.u[i]))
        .collect();

    // d(r⊙h) = da_g · Ugᵀ
    let mut drh = vec![0.0; n];
    gemm(b, hd, hd, &da_g, false, nodes[s.ug].value.data(), true, &mut drh, false);
    let da_r: Vec<f64> = (0..n)
        .map(|i| drh[i] * hv[i] * s.r[i] * (1.0 - s.r[i]))
        .collect();
    for i in 0..n {
        dh[i] += drh[i] * s.r[i];
    }
    gemm(b, hd, hd, &da_u, false, nodes[s.uu].value.data(), true, &mut dh, true);
    gemm(b, hd, hd, &da_r, false, nodes[s.ur].value.data(), true, &mut dh, true);

    if needs(s.ug) {
        let rh: Vec<f64> = (0..n).map(|i| s.r[i] * hv[i]).collect();
        let mut g_ug = vec![0.0; hd * hd];
        gemm(hd, b, hd, &rh, true, &da_g, false, &mut g_ug, false);
        emit(s.ug, g_ug);
    }
    if needs(s.uu) {
        let mut g_uu = vec![0.0; hd * hd];
        gemm(hd, b, hd, hv, true, &da_u, false, &mut g_uu, false);
        emit(s.uu, g_uu);
    }
    if needs(s.ur) {
        let mut g_ur = vec![0.0; hd * hd];
        gemm(hd, b, hd, hv, true, &da_r, false, &mut g_ur, false);
        emit(s.ur, g_ur);
    }
    emit(s.xg, da_g);
    emit(s.xu, da_u);
    emit(s.xr, da_r);
    emit(s.h, dh);
}

type ConvGrads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

fn conv2d_backward(
    g: &[f64],
    x: &Tensor,
    w: &Tensor,
    batch: usize,
    out_channels: usize,
    geom: &ConvGeometry,
    (need_x, need_w, need_b): (bool, bool, bool),
) -> ConvGrads {
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let in_size = geom.channels * geom.height * geom.width;
    let out_size = out_channels * ncols;
    let mut gx = need_x.then(|| vec![0.0; x.numel()]);
    let mut gw = need_w.then(|| vec![0.0; w.numel()]);
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    for s in 0..batch {
        let gs = &g[s * out_size..(s + 1) * out_size];
        if let Some(gw) = gw.as_mut() {
            im2col(&x.data()[s * in_size..(s + 1) * in_size], geom, &mut cols);
            gemm(out_channels, ncols, rows, gs, false, &cols, true, gw, true);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(rows, out_channels, ncols, w.data(), true, gs, false, &mut dcols, false);
            col2im_add(&dcols, geom, &mut gx[s * in_size..(s + 1) * in_size]);
        }
    }
    let gb = need_b.then(|| {
        let mut gb = vec![0.0; out_channels];
        for s in 0..batch {
            for (o, chunk) in g[s * out_size..(s + 1) * out_size].chunks(ncols).enumerate() {
                gb[o] += chunk.iter().sum::<f64>();
            }
        }
        gb
    });
    (gx, gw, gb)
}
