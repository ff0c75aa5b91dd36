//! Primitive operations: forward evaluation and vector-Jacobian products.

use std::sync::Arc;

use crate::autodiff::kernels::{
    col2im_slab, for_each_slab, gemm, gemm_strided, im2col_slab, upsample2x, upsample2x_adjoint, ConvGeom, MatRef,
};
use crate::autodiff::plans::{CompositePlan, LabelConvPlan, TrilerpPlan};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Leaf {
    Input,
    Param(String),
    Const,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf(Leaf),
    /// `[N, K] x [K, M]`.
    MatMul,
    /// `[N, M] + [M]`.
    AddRowBias,
    /// `[C, ...] + [C]`.
    AddChannelBias,
    /// `x: [C, (D,) H, W]`, `w: [O, C, (kd,) kh, kw]`, optional bias `[O]`.
    Conv { stride: usize, pad: usize },
    /// Inputs `w_label [O, L, k³]`, `b [O]`, optionally `w_code [O, P, k³]`, `code [P]`.
    LabelConv(Arc<LabelConvPlan>),
    /// Modulate `w: [O, I, kh, kw]` by `s: [I]` and demodulate per output channel.
    ModDemod { eps: f64 },
    Upsample2x,
    InstanceNorm { eps: f64 },
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
    Exp,
    Square,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Sum,
    Mean,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Reshape(Vec<usize>),
    Transpose,
    /// `[P] -> [P, spatial...]`.
    Broadcast(Vec<usize>),
    GatherRows(Arc<Vec<usize>>),
    Trilerp(Arc<TrilerpPlan>),
    /// Inputs `f [S, M]`, `sigma [S]`, `sky [R, M]`; output `[R, M]`.
    Composite(Arc<CompositePlan>),
    /// Input `sigma [S]`; output `[R]`, the accumulated weight of samples tagged `k`.
    ObjectAlpha(Arc<CompositePlan>, i64),
    /// `[C, H, W] -> [C, oh, ow]`, half-pixel-centre bilinear.
    ResizeBilinear { out_h: usize, out_w: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul => "matmul",
            Op::AddRowBias => "add_row_bias",
            Op::AddChannelBias => "add_channel_bias",
            Op::Conv { .. } => "conv",
            Op::LabelConv(_) => "label_conv",
            Op::ModDemod { .. } => "mod_demod",
            Op::Upsample2x => "upsample2x",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Softplus => "softplus",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Square => "square",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Transpose => "transpose",
            Op::Broadcast(_) => "broadcast",
            Op::GatherRows(_) => "gather_rows",
            Op::Trilerp(_) => "trilerp",
            Op::Composite(_) => "composite",
            Op::ObjectAlpha(..) => "object_alpha",
            Op::ResizeBilinear { .. } => "resize_bilinear",
        }
    }

    pub fn forward(&self, ins: &[&Tensor]) -> Result<Tensor> {
        let name = self.name();
        let arity = |n: usize| -> Result<()> {
            if ins.len() != n {
                return Err(Error::shape(name, format!("expected {n} inputs, got {}", ins.len())));
            }
            Ok(())
        };
        match self {
            Op::Leaf(_) => Err(Error::shape(name, "leaves are not evaluated")),
            Op::MatMul => {
                arity(2)?;
                let (a, b) = (ins[0], ins[1]);
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::shape(name, format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![0.0; n * m];
                gemm(false, false, n, m, k, a.data(), b.data(), 0.0, &mut out);
                Ok(Tensor::from_parts(vec![n, m], out))
            }
            Op::AddRowBias => {
                arity(2)?;
                let (x, b) = (ins[0], ins[1]);
                if x.rank() != 2 || b.shape() != [x.shape()[1]] {
                    return Err(Error::shape(name, format!("{:?} + {:?}", x.shape(), b.shape())));
                }
                let m = b.len();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(m) {
                    for (v, bb) in row.iter_mut().zip(b.data()) {
                        *v += bb;
                    }
                }
                Ok(out)
            }
            Op::AddChannelBias => {
                arity(2)?;
                let (x, b) = (ins[0], ins[1]);
                if x.rank() < 1 || b.shape() != [x.shape()[0]] {
                    return Err(Error::shape(name, format!("{:?} + {:?}", x.shape(), b.shape())));
                }
                let s = x.spatial_len();
                let mut out = x.clone();
                for (c, chunk) in out.data_mut().chunks_mut(s).enumerate() {
                    let bb = b.data()[c];
                    chunk.iter_mut().for_each(|v| *v += bb);
                }
                Ok(out)
            }
            Op::Conv { stride, pad } => {
                if ins.len() != 2 && ins.len() != 3 {
                    return Err(Error::shape(name, "expected x, w and optional bias"));
                }
                let (geom, o) = conv_geom(ins[0], ins[1], *stride, *pad)?;
                let n = geom.out_len();
                let mut out = vec![0.0; o * n];
                for_each_slab(&geom, |planes, off, cols| {
                    im2col_slab(ins[0].data(), &geom, planes, cols);
                    let (ck, nc) = (geom.col_rows(), cols.len() / geom.col_rows());
                    let w = MatRef::row_major(ins[1].data(), ck);
                    gemm_strided(o, nc, ck, w, MatRef::row_major(cols, nc), 0.0, &mut out, off, n);
                });
                if let Some(b) = ins.get(2) {
                    if b.shape() != [o] {
                        return Err(Error::shape(name, format!("bias {:?} for {o} outputs", b.shape())));
                    }
                    for (c, chunk) in out.chunks_mut(n).enumerate() {
                        let bb = b.data()[c];
                        chunk.iter_mut().for_each(|v| *v += bb);
                    }
                }
                Ok(Tensor::from_parts(conv_out_shape(ins[0], o, &geom), out))
            }
            Op::LabelConv(plan) => label_conv_forward(plan, ins),
            Op::ModDemod { eps } => {
                arity(2)?;
                let (w, s) = (ins[0], ins[1]);
                if w.rank() < 2 || s.shape() != [w.shape()[1]] {
                    return Err(Error::shape(name, format!("w {:?} s {:?}", w.shape(), s.shape())));
                }
                let (o, i) = (w.shape()[0], w.shape()[1]);
                let k = w.len() / (o * i);
                let mut out = w.clone();
                for oo in 0..o {
                    let row = &mut out.data_mut()[oo * i * k..(oo + 1) * i * k];
                    for ii in 0..i {
                        row[ii * k..(ii + 1) * k].iter_mut().for_each(|v| *v *= s.data()[ii]);
                    }
                    let d = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
                    row.iter_mut().for_each(|v| *v *= d);
                }
                Ok(out)
            }
            Op::Upsample2x => {
                arity(1)?;
                let x = ins[0];
                if x.rank() != 3 && x.rank() != 4 {
                    return Err(Error::shape(name, format!("{:?}", x.shape())));
                }
                let spatial = &x.shape()[1..];
                let out = upsample2x(x.data(), x.shape()[0], spatial);
                let mut shape = vec![x.shape()[0]];
                shape.extend(spatial.iter().map(|d| d * 2));
                Ok(Tensor::from_parts(shape, out))
            }
            Op::InstanceNorm { eps } => {
                arity(1)?;
                let x = ins[0];
                let s = x.spatial_len();
                let mut out = x.clone();
                for chunk in out.data_mut().chunks_mut(s) {
                    let (mean, inv) = moments(chunk, *eps);
                    chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                }
                Ok(out)
            }
            Op::Relu => unary(ins, name, |v| if v > 0.0 { v } else { 0.0 }),
            Op::LeakyRelu(a) => unary(ins, name, |v| if v > 0.0 { v } else { a * v }),
            Op::Softplus => unary(ins, name, softplus),
            Op::Sigmoid => unary(ins, name, sigmoid),
            Op::Exp => unary(ins, name, f64::exp),
            Op::Square => unary(ins, name, |v| v * v),
            Op::Scale(s) => unary(ins, name, |v| v * s),
            Op::AddScalar(s) => unary(ins, name, |v| v + s),
            Op::Add => binary(ins, name, |a, b| a + b),
            Op::Sub => binary(ins, name, |a, b| a - b),
            Op::Mul => binary(ins, name, |a, b| a * b),
            Op::Sum => {
                arity(1)?;
                Ok(Tensor::scalar(ins[0].sum()))
            }
            Op::Mean => {
                arity(1)?;
                let n = ins[0].len().max(1) as f64;
                Ok(Tensor::scalar(ins[0].sum() / n))
            }
            Op::Concat { axis } => concat(ins, *axis),
            Op::Slice { axis, start, end } => {
                arity(1)?;
                slice(ins[0], *axis, *start, *end)
            }
            Op::Reshape(shape) => {
                arity(1)?;
                ins[0].clone().reshaped(shape)
            }
            Op::Transpose => {
                arity(1)?;
                let x = ins[0];
                if x.rank() != 2 {
                    return Err(Error::shape(name, format!("{:?}", x.shape())));
                }
                let (r, c) = (x.shape()[0], x.shape()[1]);
                Ok(Tensor::from_parts(vec![c, r], transpose(x.data(), r, c)))
            }
            Op::Broadcast(spatial) => {
                arity(1)?;
                let p = ins[0];
                if p.rank() != 1 {
                    return Err(Error::shape(name, format!("{:?}", p.shape())));
                }
                let s: usize = spatial.iter().product();
                let mut data = Vec::with_capacity(p.len() * s);
                for &v in p.data() {
                    data.extend(std::iter::repeat_n(v, s));
                }
                let mut shape = vec![p.len()];
                shape.extend_from_slice(spatial);
                Ok(Tensor::from_parts(shape, data))
            }
            Op::GatherRows(idx) => {
                arity(1)?;
                let x = ins[0];
                if x.rank() != 2 || idx.iter().any(|&i| i >= x.shape()[0]) {
                    return Err(Error::shape(name, format!("{:?} rows out of range", x.shape())));
                }
                let m = x.shape()[1];
                let mut data = Vec::with_capacity(idx.len() * m);
                for &i in idx.iter() {
                    data.extend_from_slice(&x.data()[i * m..(i + 1) * m]);
                }
                Ok(Tensor::from_parts(vec![idx.len(), m], data))
            }
            Op::Trilerp(plan) => {
                arity(1)?;
                let psi = ins[0];
                if psi.rank() < 2 || psi.spatial_len() != plan.spatial_len {
                    return Err(Error::shape(name, format!("grid {:?}", psi.shape())));
                }
                let c = psi.shape()[0];
                let s = plan.spatial_len;
                let mut out = vec![0.0; plan.stencils.len() * c];
                for (row, st) in out.chunks_mut(c).zip(&plan.stencils) {
                    for &(idx, w) in st {
                        if w != 0.0 {
                            for (ch, o) in row.iter_mut().enumerate() {
                                *o += w * psi.data()[ch * s + idx as usize];
                            }
                        }
                    }
                }
                Ok(Tensor::from_parts(vec![plan.stencils.len(), c], out))
            }
            Op::Composite(plan) => {
                arity(3)?;
                let (f, sigma, sky) = (ins[0], ins[1], ins[2]);
                check_composite_shapes(plan, f, sigma, Some(sky))?;
                let m = f.shape()[1];
                let mut out = vec![0.0; plan.num_rays() * m];
                for (r, acc) in out.chunks_mut(m).enumerate() {
                    let mut trans = 1.0;
                    let mut wsum = 0.0;
                    for i in plan.span(r) {
                        let s = plan.order[i];
                        let alpha = 1.0 - (-sigma.data()[s] * plan.delta[i]).exp();
                        let w = trans * alpha;
                        for (a, fv) in acc.iter_mut().zip(&f.data()[s * m..(s + 1) * m]) {
                            *a += w * fv;
                        }
                        wsum += w;
                        trans *= 1.0 - alpha;
                    }
                    let sky_w = 1.0 - wsum;
                    for (a, fv) in acc.iter_mut().zip(&sky.data()[r * m..(r + 1) * m]) {
                        *a += sky_w * fv;
                    }
                }
                Ok(Tensor::from_parts(vec![plan.num_rays(), m], out))
            }
            Op::ObjectAlpha(plan, k) => {
                arity(1)?;
                let sigma = ins[0];
                check_composite_shapes(plan, &Tensor::zeros(&[plan.num_samples, 0]), sigma, None)?;
                let mut out = vec![0.0; plan.num_rays()];
                for (r, o) in out.iter_mut().enumerate() {
                    let mut trans = 1.0;
                    for i in plan.span(r) {
                        let alpha = 1.0 - (-sigma.data()[plan.order[i]] * plan.delta[i]).exp();
                        if plan.tag[i] == *k {
                            *o += trans * alpha;
                        }
                        trans *= 1.0 - alpha;
                    }
                }
                Ok(Tensor::vector(out))
            }
            Op::ResizeBilinear { out_h, out_w } => {
                arity(1)?;
                let x = ins[0];
                if x.rank() != 3 {
                    return Err(Error::shape(name, format!("{:?}", x.shape())));
                }
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let ys = bilinear_taps(h, *out_h);
                let xs = bilinear_taps(w, *out_w);
                let mut out = vec![0.0; c * out_h * out_w];
                for ch in 0..c {
                    let src = &x.data()[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                            out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
                        }
                    }
                }
                Ok(Tensor::from_parts(vec![c, *out_h, *out_w], out))
            }
        }
    }

    /// Vector-Jacobian products for each input; `needs[i] == false` may skip input `i`.
    pub fn vjp(&self, ins: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; ins.len()];
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Op::Leaf(_) => {}
            Op::MatMul => {
                let (a, b) = (ins[0], ins[1]);
                let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if want(0) {
                    let mut da = vec![0.0; n * k];
                    gemm(false, true, n, k, m, g.data(), b.data(), 0.0, &mut da);
                    grads[0] = Some(Tensor::from_parts(vec![n, k], da));
                }
                if want(1) {
                    let mut db = vec![0.0; k * m];
                    gemm(true, false, k, m, n, a.data(), g.data(), 0.0, &mut db);
                    grads[1] = Some(Tensor::from_parts(vec![k, m], db));
                }
            }
            Op::AddRowBias => {
                grads[0] = Some(g.clone());
                if want(1) {
                    let m = ins[1].len();
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    grads[1] = Some(Tensor::vector(db));
                }
            }
            Op::AddChannelBias => {
                grads[0] = Some(g.clone());
                if want(1) {
                    let s = g.spatial_len();
                    grads[1] = Some(Tensor::vector(g.data().chunks(s).map(|c| c.iter().sum()).collect()));
                }
            }
            Op::Conv { stride, pad } => {
                let (geom, o) = conv_geom(ins[0], ins[1], *stride, *pad).expect("validated in forward");
                let n = geom.out_len();
                let ck = geom.col_rows();
                if want(1) {
                    let mut dw = vec![0.0; o * ck];
                    for_each_slab(&geom, |planes, off, cols| {
                        im2col_slab(ins[0].data(), &geom, planes, cols);
                        let nc = cols.len() / ck;
                        let gb = MatRef::cols_of(g.data(), n, off);
                        gemm_strided(o, ck, nc, gb, MatRef::row_major(cols, nc).t(), 1.0, &mut dw, 0, ck);
                    });
                    grads[1] = Some(Tensor::from_parts(ins[1].shape().to_vec(), dw));
                }
                if want(0) {
                    let mut dx = vec![0.0; ins[0].len()];
                    for_each_slab(&geom, |planes, off, dcols| {
                        let nc = dcols.len() / ck;
                        let wt = MatRef::row_major(ins[1].data(), ck).t();
                        gemm_strided(ck, nc, o, wt, MatRef::cols_of(g.data(), n, off), 0.0, dcols, 0, nc);
                        col2im_slab(dcols, &geom, planes, &mut dx);
                    });
                    grads[0] = Some(Tensor::from_parts(ins[0].shape().to_vec(), dx));
                }
                if ins.len() == 3 && want(2) {
                    grads[2] = Some(Tensor::vector(g.data().chunks(n).map(|c| c.iter().sum()).collect()));
                }
            }
            Op::LabelConv(plan) => label_conv_vjp(plan, ins, g, needs, &mut grads),
            Op::ModDemod { eps } => {
                let (w, s) = (ins[0], ins[1]);
                let (o, i) = (w.shape()[0], w.shape()[1]);
                let k = w.len() / (o * i);
                let mut dw = vec![0.0; w.len()];
                let mut ds = vec![0.0; i];
                for oo in 0..o {
                    let base = oo * i * k;
                    let u: Vec<f64> = (0..i * k).map(|j| w.data()[base + j] * s.data()[j / k]).collect();
                    let norm = u.iter().map(|v| v * v).sum::<f64>() + eps;
                    let d = 1.0 / norm.sqrt();
                    let gu: f64 = (0..i * k).map(|j| g.data()[base + j] * u[j]).sum();
                    for j in 0..i * k {
                        let du = d * g.data()[base + j] - d * d * d * gu * u[j];
                        dw[base + j] = du * s.data()[j / k];
                        ds[j / k] += du * w.data()[base + j];
                    }
                }
                grads[0] = Some(Tensor::from_parts(w.shape().to_vec(), dw));
                grads[1] = Some(Tensor::vector(ds));
            }
            Op::Upsample2x => {
                let x = ins[0];
                let d = upsample2x_adjoint(g.data(), x.shape()[0], &x.shape()[1..]);
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), d));
            }
            Op::InstanceNorm { eps } => {
                let x = ins[0];
                let s = x.spatial_len();
                let mut dx = vec![0.0; x.len()];
                for ((xc, gc), dc) in x.data().chunks(s).zip(g.data().chunks(s)).zip(dx.chunks_mut(s)) {
                    let (mean, inv) = moments(xc, *eps);
                    let n = s as f64;
                    let gmean = gc.iter().sum::<f64>() / n;
                    let gy = xc.iter().zip(gc).map(|(&xv, &gv)| gv * (xv - mean) * inv).sum::<f64>() / n;
                    for ((d, &xv), &gv) in dc.iter_mut().zip(xc).zip(gc) {
                        *d = inv * (gv - gmean - (xv - mean) * inv * gy);
                    }
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
            Op::Relu => grads[0] = Some(ins[0].zip_map(g, |x, gv| if x > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(a) => grads[0] = Some(ins[0].zip_map(g, |x, gv| if x > 0.0 { gv } else { a * gv })),
            Op::Softplus => grads[0] = Some(ins[0].zip_map(g, |x, gv| sigmoid(x) * gv)),
            Op::Sigmoid => grads[0] = Some(out.zip_map(g, |y, gv| y * (1.0 - y) * gv)),
            Op::Exp => grads[0] = Some(out.zip_map(g, |y, gv| y * gv)),
            Op::Square => grads[0] = Some(ins[0].zip_map(g, |x, gv| 2.0 * x * gv)),
            Op::Scale(s) => grads[0] = Some(g.map(|v| v * s)),
            Op::AddScalar(_) => grads[0] = Some(g.clone()),
            Op::Add => {
                grads[0] = Some(g.clone());
                grads[1] = Some(g.clone());
            }
            Op::Sub => {
                grads[0] = Some(g.clone());
                grads[1] = Some(g.map(|v| -v));
            }
            Op::Mul => {
                if want(0) {
                    grads[0] = Some(ins[1].zip_map(g, |b, gv| b * gv));
                }
                if want(1) {
                    grads[1] = Some(ins[0].zip_map(g, |a, gv| a * gv));
                }
            }
            Op::Sum => grads[0] = Some(Tensor::full(ins[0].shape(), g.item())),
            Op::Mean => {
                let n = ins[0].len().max(1) as f64;
                grads[0] = Some(Tensor::full(ins[0].shape(), g.item() / n));
            }
            Op::Concat { axis } => {
                let mut start = 0;
                for (i, x) in ins.iter().enumerate() {
                    let len = x.shape()[*axis];
                    if want(i) {
                        grads[i] = Some(slice(g, *axis, start, start + len).expect("concat slice"));
                    }
                    start += len;
                }
            }
            Op::Slice { axis, start, end } => {
                let x = ins[0];
                let outer: usize = x.shape()[..*axis].iter().product();
                let inner: usize = x.shape()[axis + 1..].iter().product();
                let len = x.shape()[*axis];
                let w = end - start;
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    let src = &g.data()[o * w * inner..(o + 1) * w * inner];
                    dx[(o * len + start) * inner..(o * len + end) * inner].copy_from_slice(src);
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
            Op::Reshape(_) => grads[0] = Some(g.clone().reshaped(ins[0].shape()).expect("same size")),
            Op::Transpose => {
                let (r, c) = (ins[0].shape()[0], ins[0].shape()[1]);
                grads[0] = Some(Tensor::from_parts(vec![r, c], transpose(g.data(), c, r)));
            }
            Op::Broadcast(_) => {
                let s = g.spatial_len();
                grads[0] = Some(Tensor::vector(g.data().chunks(s).map(|c| c.iter().sum()).collect()));
            }
            Op::GatherRows(idx) => {
                let x = ins[0];
                let m = x.shape()[1];
                let mut dx = vec![0.0; x.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, v) in dx[i * m..(i + 1) * m].iter_mut().zip(&g.data()[r * m..(r + 1) * m]) {
                        *d += v;
                    }
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
            Op::Trilerp(plan) => {
                let psi = ins[0];
                let c = psi.shape()[0];
                let s = plan.spatial_len;
                let mut d = vec![0.0; psi.len()];
                for (row, st) in g.data().chunks(c).zip(&plan.stencils) {
                    for &(idx, w) in st {
                        if w != 0.0 {
                            for (ch, gv) in row.iter().enumerate() {
                                d[ch * s + idx as usize] += w * gv;
                            }
                        }
                    }
                }
                grads[0] = Some(Tensor::from_parts(psi.shape().to_vec(), d));
            }
            Op::Composite(plan) => {
                let (f, sigma, sky) = (ins[0], ins[1], ins[2]);
                let m = f.shape()[1];
                let mut df = vec![0.0; f.len()];
                let mut dsigma = vec![0.0; sigma.len()];
                let mut dsky = vec![0.0; sky.len()];
                let mut coef = Vec::new();
                for r in 0..plan.num_rays() {
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let span = plan.span(r);
                    coef.clear();
                    coef.extend(span.clone().map(|i| {
                        let s = plan.order[i];
                        f.data()[s * m..(s + 1) * m].iter().zip(gr).map(|(a, b)| a * b).sum::<f64>()
                    }));
                    let c_sky = sky.data()[r * m..(r + 1) * m].iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    let (weights, t_end) =
                        weight_vjp(plan, span.clone(), sigma.data(), &coef, c_sky, &mut dsigma);
                    for (j, i) in span.enumerate() {
                        let s = plan.order[i];
                        for (d, gv) in df[s * m..(s + 1) * m].iter_mut().zip(gr) {
                            *d += weights[j] * gv;
                        }
                    }
                    for (d, gv) in dsky[r * m..(r + 1) * m].iter_mut().zip(gr) {
                        *d += t_end * gv;
                    }
                }
                grads[0] = Some(Tensor::from_parts(f.shape().to_vec(), df));
                grads[1] = Some(Tensor::from_parts(sigma.shape().to_vec(), dsigma));
                grads[2] = Some(Tensor::from_parts(sky.shape().to_vec(), dsky));
            }
            Op::ObjectAlpha(plan, k) => {
                let sigma = ins[0];
                let mut dsigma = vec![0.0; sigma.len()];
                let mut coef = Vec::new();
                for r in 0..plan.num_rays() {
                    let span = plan.span(r);
                    coef.clear();
                    coef.extend(span.clone().map(|i| if plan.tag[i] == *k { g.data()[r] } else { 0.0 }));
                    weight_vjp(plan, span, sigma.data(), &coef, 0.0, &mut dsigma);
                }
                grads[0] = Some(Tensor::from_parts(sigma.shape().to_vec(), dsigma));
            }
            Op::ResizeBilinear { out_h, out_w } => {
                let x = ins[0];
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let ys = bilinear_taps(h, *out_h);
                let xs = bilinear_taps(w, *out_w);
                let mut dx = vec![0.0; x.len()];
                for ch in 0..c {
                    let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let gv = g.data()[(ch * out_h + oy) * out_w + ox];
                            dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                            dst[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        grads
    }
}

/// Reverse pass through the compositing weights of one ray.
///
/// Given `L = Σ_i coef_i w_i + c_sky T_end`, accumulates `∂L/∂σ` into `dsigma`
/// and returns the forward weights and the residual transmittance `T_end`.
fn weight_vjp(
    plan: &CompositePlan,
    span: std::ops::Range<usize>,
    sigma: &[f64],
    coef: &[f64],
    c_sky: f64,
    dsigma: &mut [f64],
) -> (Vec<f64>, f64) {
    let n = span.len();
    let mut weights = Vec::with_capacity(n);
    let mut t_after = Vec::with_capacity(n);
    let mut trans = 1.0;
    let mut wsum = 0.0;
    for i in span.clone() {
        let alpha = 1.0 - (-sigma[plan.order[i]] * plan.delta[i]).exp();
        let w = trans * alpha;
        weights.push(w);
        wsum += w;
        trans *= 1.0 - alpha;
        t_after.push(trans);
    }
    let t_end = 1.0 - wsum;
    // dL/da_j = c_j T_{j+1} - Σ_{i>j} c_i w_i - c_sky T_end, with a_j = σ_j δ_j
    let mut tail = c_sky * t_end;
    for j in (0..n).rev() {
        let i = span.start + j;
        let da = coef[j] * t_after[j] - tail;
        dsigma[plan.order[i]] += da * plan.delta[i];
        tail += coef[j] * weights[j];
    }
    (weights, t_end)
}

fn check_composite_shapes(plan: &CompositePlan, f: &Tensor, sigma: &Tensor, sky: Option<&Tensor>) -> Result<()> {
    let ok_f = f.rank() == 2 && f.shape()[0] == plan.num_samples;
    let ok_s = sigma.len() == plan.num_samples;
    let ok_sky = sky.is_none_or(|s| s.rank() == 2 && s.shape()[0] == plan.num_rays() && s.shape()[1] == f.shape()[1]);
    if !(ok_f && ok_s && ok_sky) {
        return Err(Error::shape(
            "composite",
            format!(
                "features {:?}, sigma {:?}, sky {:?} for {} samples / {} rays",
                f.shape(),
                sigma.shape(),
                sky.map(|s| s.shape().to_vec()),
                plan.num_samples,
                plan.num_rays()
            ),
        ));
    }
    Ok(())
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<(ConvGeom, usize)> {
    let bad = || Error::shape("conv", format!("x {:?} w {:?}", x.shape(), w.shape()));
    let (in_dims, kernel, pads) = match (x.rank(), w.rank()) {
        (3, 4) => (
            [1, x.shape()[1], x.shape()[2]],
            [1, w.shape()[2], w.shape()[3]],
            [0, pad, pad],
        ),
        (4, 5) => (
            [x.shape()[1], x.shape()[2], x.shape()[3]],
            [w.shape()[2], w.shape()[3], w.shape()[4]],
            [pad; 3],
        ),
        _ => return Err(bad()),
    };
    if w.shape()[1] != x.shape()[0] || stride == 0 {
        return Err(bad());
    }
    if (0..3).any(|a| in_dims[a] + 2 * pads[a] < kernel[a]) {
        return Err(bad());
    }
    Ok((ConvGeom { channels: x.shape()[0], in_dims, kernel, stride, pad: pads }, w.shape()[0]))
}

fn conv_out_shape(x: &Tensor, o: usize, g: &ConvGeom) -> Vec<usize> {
    let od = g.out_dims();
    if x.rank() == 3 {
        vec![o, od[1], od[2]]
    } else {
        vec![o, od[0], od[1], od[2]]
    }
}

fn label_conv_forward(plan: &LabelConvPlan, ins: &[&Tensor]) -> Result<Tensor> {
    let (wl, b) = (ins[0], ins[1]);
    let kv = plan.kernel_volume();
    let l = plan.num_labels;
    if wl.rank() != 3 || wl.shape()[1] != l || wl.shape()[2] != kv {
        return Err(Error::shape("label_conv", format!("label weights {:?}", wl.shape())));
    }
    let o = wl.shape()[0];
    if b.shape() != [o] {
        return Err(Error::shape("label_conv", format!("bias {:?}", b.shape())));
    }
    let code = match ins.len() {
        2 => None,
        4 => {
            let (wc, p) = (ins[2], ins[3]);
            if wc.rank() != 3 || wc.shape()[0] != o || wc.shape()[2] != kv || p.shape() != [wc.shape()[1]] {
                return Err(Error::shape("label_conv", format!("code weights {:?} code {:?}", wc.shape(), p.shape())));
            }
            Some((wc, p))
        }
        _ => return Err(Error::shape("label_conv", "expected 2 or 4 inputs")),
    };
    // tap table [off][label][o]
    let mut taps = vec![0.0; kv * l * o];
    for oo in 0..o {
        for ll in 0..l {
            for off in 0..kv {
                taps[(off * l + ll) * o + oo] = wl.data()[(oo * l + ll) * kv + off];
            }
        }
    }
    if let Some((wc, p)) = code {
        let pn = p.len();
        for oo in 0..o {
            for off in 0..kv {
                let c: f64 = (0..pn).map(|pp| wc.data()[(oo * pn + pp) * kv + off] * p.data()[pp]).sum();
                for ll in 0..l {
                    taps[(off * l + ll) * o + oo] += c;
                }
            }
        }
    }
    let n = plan.spatial_len();
    let mut acc = vec![0.0; n * o];
    plan.for_each_tap(|v, off, src| {
        let lab = plan.labels[src] as usize;
        let t = &taps[(off * l + lab) * o..(off * l + lab + 1) * o];
        for (a, tv) in acc[v * o..(v + 1) * o].iter_mut().zip(t) {
            *a += tv;
        }
    });
    let mut out = vec![0.0; o * n];
    for v in 0..n {
        for oo in 0..o {
            out[oo * n + v] = acc[v * o + oo] + b.data()[oo];
        }
    }
    let [nz, ny, nx] = plan.dims();
    Ok(Tensor::from_parts(vec![o, nz, ny, nx], out))
}

fn label_conv_vjp(plan: &LabelConvPlan, ins: &[&Tensor], g: &Tensor, needs: &[bool], grads: &mut [Option<Tensor>]) {
    let o = ins[0].shape()[0];
    let l = plan.num_labels;
    let kv = plan.kernel_volume();
    let n = plan.spatial_len();
    let gt = transpose(g.data(), o, n);
    // d taps [off][label][o]
    let mut dtaps = vec![0.0; kv * l * o];
    plan.for_each_tap(|v, off, src| {
        let lab = plan.labels[src] as usize;
        let d = &mut dtaps[(off * l + lab) * o..(off * l + lab + 1) * o];
        for (dv, gv) in d.iter_mut().zip(&gt[v * o..(v + 1) * o]) {
            *dv += gv;
        }
    });
    let mut dwl = vec![0.0; o * l * kv];
    for oo in 0..o {
        for ll in 0..l {
            for off in 0..kv {
                dwl[(oo * l + ll) * kv + off] = dtaps[(off * l + ll) * o + oo];
            }
        }
    }
    grads[0] = Some(Tensor::from_parts(ins[0].shape().to_vec(), dwl));
    grads[1] = Some(Tensor::vector(g.data().chunks(n).map(|c| c.iter().sum()).collect()));
    if ins.len() == 4 && (needs.get(2).copied().unwrap_or(false) || needs.get(3).copied().unwrap_or(false)) {
        let (wc, p) = (ins[2], ins[3]);
        let pn = p.len();
        // the code contribution of tap (off) sees every label, so sum over labels
        let mut dc = vec![0.0; o * kv];
        for oo in 0..o {
            for off in 0..kv {
                dc[oo * kv + off] = (0..l).map(|ll| dtaps[(off * l + ll) * o + oo]).sum();
            }
        }
        let mut dwc = vec![0.0; wc.len()];
        let mut dp = vec![0.0; pn];
        for oo in 0..o {
            for (pp, dpp) in dp.iter_mut().enumerate() {
                for off in 0..kv {
                    let idx = (oo * pn + pp) * kv + off;
                    dwc[idx] = dc[oo * kv + off] * p.data()[pp];
                    *dpp += wc.data()[idx] * dc[oo * kv + off];
                }
            }
        }
        grads[2] = Some(Tensor::from_parts(wc.shape().to_vec(), dwc));
        grads[3] = Some(Tensor::vector(dp));
    }
}

fn moments(x: &[f64], eps: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary(ins: &[&Tensor], name: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    if ins.len() != 1 {
        return Err(Error::shape(name, "expected 1 input"));
    }
    Ok(ins[0].map(f))
}

fn binary(ins: &[&Tensor], name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if ins.len() != 2 || ins[0].shape() != ins[1].shape() {
        return Err(Error::shape(
            name,
            format!("{:?}", ins.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()),
        ));
    }
    Ok(ins[0].zip_map(ins[1], f))
}

pub(crate) fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

fn concat(ins: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = ins.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", format!("axis {axis} for {:?}", first.shape())));
    }
    for t in ins {
        let same = t.rank() == first.rank()
            && t.shape().iter().zip(first.shape()).enumerate().all(|(a, (x, y))| a == axis || x == y);
        if !same {
            return Err(Error::shape("concat", format!("{:?} vs {:?}", t.shape(), first.shape())));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = ins.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in ins {
            let len = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, data))
}

fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    if axis >= x.rank() || start > end || end > x.shape()[axis] {
        return Err(Error::shape("slice", format!("{start}..{end} on axis {axis} of {:?}", x.shape())));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let len = x.shape()[axis];
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        data.extend_from_slice(&x.data()[(o * len + start) * inner..(o * len + end) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = end - start;
    Ok(Tensor::from_parts(shape, data))
}

/// Source taps `(i0, i1, frac)` for half-pixel-centre linear resampling.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
