//! Convolution, fully-connected, and group normalization nodes.
//!
//! Convolutions lower to GEMM through an im2col buffer that is rebuilt in
//! backward rather than cached, trading a little compute for a much smaller
//! live graph. All GEMMs run single threaded; weight-gradient accumulation
//! iterates the batch in index order, so gradients are bit-reproducible.

use std::collections::HashMap;

use super::{accumulate, DiffTensor, GnSaved, Op, Result, TensorError};

/// Row-major GEMM wrapper: C = alpha * A(m,k) * B(k,n) + beta * C(m,n),
/// with explicit (row, col) strides per operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: (isize, isize),
    b: &[f64],
    sb: (isize, isize),
    beta: f64,
    c: &mut [f64],
    sc: (isize, isize),
) {
    debug_assert!(m * k <= a.len().max(m * k));
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, beta,
            c.as_mut_ptr(), sc.0, sc.1,
        );
    }
}

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Gather one sample's receptive fields into `col` of shape
/// (Cin*K*K, Ho*Wo), row-major. Out-of-range taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let mut row = 0usize;
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                let mut o = 0usize;
                for oh in 0..ho {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        dst[o..o + wo].fill(0.0);
                        o += wo;
                        continue;
                    }
                    let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        dst[o] = if iw < 0 || iw >= w as isize {
                            0.0
                        } else {
                            src_row[iw as usize]
                        };
                        o += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

impl DiffTensor {
    /// 2D convolution, NCHW input, (Cout,Cin,K,K) kernel, per-channel bias.
    /// Supports 3x3 and 1x1 kernels with stride 1 or 2.
    pub fn conv2d(
        &self,
        kernel: &DiffTensor,
        bias: &DiffTensor,
        stride: usize,
        padding: usize,
    ) -> Result<DiffTensor> {
        let [b, c_in, h, w] = *self.shape() else {
            return Err(TensorError::RankMismatch {
                want: 4,
                shape: self.shape().to_vec(),
            });
        };
        let [c_out, kc_in, kh, kw] = *kernel.shape() else {
            return Err(TensorError::RankMismatch {
                want: 4,
                shape: kernel.shape().to_vec(),
            });
        };
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel must be 1x1 or 3x3, got {kh}x{kw}"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("stride must be 1 or 2, got {stride}"),
            });
        }
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                axis: 1,
                left: self.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        if bias.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                axis: 0,
                left: vec![c_out],
                right: bias.shape().to_vec(),
            });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("spatial extent {h}x{w} too small for kernel {kh} with padding {padding}"),
            });
        }
        let ho = conv_out_extent(h, kh, stride, padding);
        let wo = conv_out_extent(w, kw, stride, padding);
        let k = kh;
        let ckk = c_in * k * k;
        let mut out = vec![0.0; b * c_out * ho * wo];
        let mut col = vec![0.0; ckk * ho * wo];
        let x = self.values();
        let ker = kernel.values();
        let bv = bias.values();
        for bi in 0..b {
            im2col(
                &x[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                c_in, h, w, k, stride, padding, ho, wo, &mut col,
            );
            let slice = &mut out[bi * c_out * ho * wo..(bi + 1) * c_out * ho * wo];
            gemm(
                c_out, ckk, ho * wo, 1.0,
                ker, (ckk as isize, 1),
                &col, ((ho * wo) as isize, 1),
                0.0, slice, ((ho * wo) as isize, 1),
            );
            for co in 0..c_out {
                let bias_v = bv[co];
                for v in &mut slice[co * ho * wo..(co + 1) * ho * wo] {
                    *v += bias_v;
                }
            }
        }
        Ok(DiffTensor::from_op(
            vec![b, c_out, ho, wo],
            out,
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                bias: bias.clone(),
                stride,
                padding,
            },
        ))
    }

    /// Fully-connected layer: (B,N) x (M,N)^T + bias(M) -> (B,M).
    pub fn linear(&self, weight: &DiffTensor, bias: &DiffTensor) -> Result<DiffTensor> {
        let [b, n] = *self.shape() else {
            return Err(TensorError::RankMismatch {
                want: 2,
                shape: self.shape().to_vec(),
            });
        };
        let [m, wn] = *weight.shape() else {
            return Err(TensorError::RankMismatch {
                want: 2,
                shape: weight.shape().to_vec(),
            });
        };
        if wn != n {
            return Err(TensorError::ShapeMismatch {
                axis: 1,
                left: self.shape().to_vec(),
                right: weight.shape().to_vec(),
            });
        }
        if bias.shape() != [m] {
            return Err(TensorError::ShapeMismatch {
                axis: 0,
                left: vec![m],
                right: bias.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; b * m];
        gemm(
            b, n, m, 1.0,
            self.values(), (n as isize, 1),
            weight.values(), (1, n as isize),
            0.0, &mut out, (m as isize, 1),
        );
        let bv = bias.values();
        for row in out.chunks_exact_mut(m) {
            for (o, add) in row.iter_mut().zip(bv) {
                *o += add;
            }
        }
        Ok(DiffTensor::from_op(
            vec![b, m],
            out,
            Op::Linear {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Group normalization over (B,C,H,W) with per-channel affine.
    pub fn group_norm(
        &self,
        gamma: &DiffTensor,
        beta: &DiffTensor,
        groups: usize,
        eps: f64,
    ) -> Result<DiffTensor> {
        let [b, c, h, w] = *self.shape() else {
            return Err(TensorError::RankMismatch {
                want: 4,
                shape: self.shape().to_vec(),
            });
        };
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::Invalid {
                op: "group_norm",
                msg: format!("channel count {c} not divisible by group count {groups}"),
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                axis: 0,
                left: vec![c],
                right: if gamma.shape() != [c] {
                    gamma.shape().to_vec()
                } else {
                    beta.shape().to_vec()
                },
            });
        }
        let cs = c / groups;
        let gn = cs * h * w;
        let x = self.values();
        let gv = gamma.values();
        let bv = beta.values();
        let mut out = vec![0.0; x.len()];
        let mut mean = vec![0.0; b * groups];
        let mut inv_std = vec![0.0; b * groups];
        for bi in 0..b {
            for g in 0..groups {
                let base = (bi * c + g * cs) * h * w;
                let seg = &x[base..base + gn];
                let mu = seg.iter().sum::<f64>() / gn as f64;
                let var = seg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / gn as f64;
                let is = 1.0 / (var + eps).sqrt();
                mean[bi * groups + g] = mu;
                inv_std[bi * groups + g] = is;
                for ci in 0..cs {
                    let ch = g * cs + ci;
                    let (ga, be) = (gv[ch], bv[ch]);
                    let off = (bi * c + ch) * h * w;
                    for i in 0..h * w {
                        out[off + i] = ga * (x[off + i] - mu) * is + be;
                    }
                }
            }
        }
        Ok(DiffTensor::from_op(
            self.shape().to_vec(),
            out,
            Op::GroupNorm {
                input: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                groups,
                saved: GnSaved { mean, inv_std },
            },
        ))
    }
}

pub(crate) fn backward_nn(
    node: &DiffTensor,
    op: &Op,
    adj: &[f64],
    adjoint: &mut HashMap<u64, Vec<f64>>,
) {
    match op {
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let [b, n] = *input.shape() else { unreachable!() };
            let m = weight.shape()[0];
            if input.needs_grad() {
                let mut dx = vec![0.0; b * n];
                gemm(
                    b, m, n, 1.0,
                    adj, (m as isize, 1),
                    weight.values(), (n as isize, 1),
                    0.0, &mut dx, (n as isize, 1),
                );
                accumulate(adjoint, input, dx);
            }
            if weight.needs_grad() {
                let mut dw = vec![0.0; m * n];
                gemm(
                    m, b, n, 1.0,
                    adj, (1, m as isize),
                    input.values(), (n as isize, 1),
                    0.0, &mut dw, (n as isize, 1),
                );
                accumulate(adjoint, weight, dw);
            }
            if bias.needs_grad() {
                let mut db = vec![0.0; m];
                for row in adj.chunks_exact(m) {
                    for (d, a) in db.iter_mut().zip(row) {
                        *d += a;
                    }
                }
                accumulate(adjoint, bias, db);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        } => {
            let [b, c_in, h, w] = *input.shape() else { unreachable!() };
            let [c_out, _, k, _] = *kernel.shape() else { unreachable!() };
            let [_, _, ho, wo] = *node.shape() else { unreachable!() };
            let ckk = c_in * k * k;
            let howo = ho * wo;
            if bias.needs_grad() {
                let mut db = vec![0.0; c_out];
                for bi in 0..b {
                    for co in 0..c_out {
                        let seg = &adj[(bi * c_out + co) * howo..(bi * c_out + co + 1) * howo];
                        db[co] += seg.iter().sum::<f64>();
                    }
                }
                accumulate(adjoint, bias, db);
            }
            let x = input.values();
            let mut col = vec![0.0; ckk * howo];
            if kernel.needs_grad() {
                let mut dk = vec![0.0; c_out * ckk];
                for bi in 0..b {
                    im2col(
                        &x[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                        c_in, h, w, k, *stride, *padding, ho, wo, &mut col,
                    );
                    let a = &adj[bi * c_out * howo..(bi + 1) * c_out * howo];
                    // dK += adj_b (Cout,HoWo) * col^T (HoWo,CinKK)
                    gemm(
                        c_out, howo, ckk, 1.0,
                        a, (howo as isize, 1),
                        &col, (1, howo as isize),
                        1.0, &mut dk, (ckk as isize, 1),
                    );
                }
                accumulate(adjoint, kernel, dk);
            }
            if input.needs_grad() {
                let mut dx = vec![0.0; input.numel()];
                if *stride == 1 && 2 * *padding + 1 == k {
                    // Same-padding stride-1 case: dX is the correlation of the
                    // adjoint with the kernel rotated 180 degrees and its
                    // channel axes swapped, so it lowers to im2col plus GEMM
                    // instead of a scatter.
                    let kv = kernel.values();
                    let cok2 = c_out * k * k;
                    let mut krot = vec![0.0; c_in * cok2];
                    for co in 0..c_out {
                        for ci in 0..c_in {
                            for a in 0..k {
                                for bt in 0..k {
                                    krot[ci * cok2 + (co * k + a) * k + bt] =
                                        kv[((co * c_in + ci) * k + (k - 1 - a)) * k
                                            + (k - 1 - bt)];
                                }
                            }
                        }
                    }
                    let mut acol = vec![0.0; cok2 * h * w];
                    for bi in 0..b {
                        im2col(
                            &adj[bi * c_out * h * w..(bi + 1) * c_out * h * w],
                            c_out, h, w, k, 1, *padding, h, w, &mut acol,
                        );
                        gemm(
                            c_in, cok2, h * w, 1.0,
                            &krot, (cok2 as isize, 1),
                            &acol, ((h * w) as isize, 1),
                            0.0, &mut dx[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                            ((h * w) as isize, 1),
                        );
                    }
                } else {
                    let mut dcol = vec![0.0; ckk * howo];
                    for bi in 0..b {
                        let a = &adj[bi * c_out * howo..(bi + 1) * c_out * howo];
                        // dcol = K^T (CinKK,Cout) * adj_b (Cout,HoWo)
                        gemm(
                            ckk, c_out, howo, 1.0,
                            kernel.values(), (1, ckk as isize),
                            a, (howo as isize, 1),
                            0.0, &mut dcol, (howo as isize, 1),
                        );
                        // col2im scatter-add
                        let dxs = &mut dx[bi * c_in * h * w..(bi + 1) * c_in * h * w];
                        let mut row = 0usize;
                        for ci in 0..c_in {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let src = &dcol[row * howo..(row + 1) * howo];
                                    let mut o = 0usize;
                                    for oh in 0..ho {
                                        let ih = (oh * stride + kh) as isize - *padding as isize;
                                        if ih < 0 || ih >= h as isize {
                                            o += wo;
                                            continue;
                                        }
                                        for ow in 0..wo {
                                            let iw =
                                                (ow * stride + kw) as isize - *padding as isize;
                                            if iw >= 0 && iw < w as isize {
                                                dxs[(ci * h + ih as usize) * w + iw as usize] +=
                                                    src[o];
                                            }
                                            o += 1;
                                        }
                                    }
                                    row += 1;
                                }
                            }
                        }
                    }
                }
                accumulate(adjoint, input, dx);
            }
        }
        Op::GroupNorm {
            input,
            gamma,
            beta,
            groups,
            saved,
            ..
        } => {
            let [b, c, h, w] = *input.shape() else { unreachable!() };
            let cs = c / groups;
            let gn = cs * h * w;
            let x = input.values();
            let gv = gamma.values();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dx = if input.needs_grad() {
                vec![0.0; x.len()]
            } else {
                Vec::new()
            };
            for bi in 0..b {
                for g in 0..*groups {
                    let mu = saved.mean[bi * groups + g];
                    let is = saved.inv_std[bi * groups + g];
                    let base = (bi * c + g * cs) * h * w;
                    // Two reductions over the group feed the input gradient.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for ci in 0..cs {
                        let ch = g * cs + ci;
                        let off = (bi * c + ch) * h * w;
                        let ga = gv[ch];
                        for i in 0..h * w {
                            let a = adj[off + i];
                            let xhat = (x[off + i] - mu) * is;
                            dgamma[ch] += a * xhat;
                            dbeta[ch] += a;
                            let dxhat = a * ga;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    if input.needs_grad() {
                        let inv_n = 1.0 / gn as f64;
                        let m1 = sum_dxhat * inv_n;
                        let m2 = sum_dxhat_xhat * inv_n;
                        for ci in 0..cs {
                            let ch = g * cs + ci;
                            let off = (bi * c + ch) * h * w;
                            let ga = gv[ch];
                            for i in 0..h * w {
                                let xhat = (x[off + i] - mu) * is;
                                let dxhat = adj[off + i] * ga;
                                dx[off + i] = is * (dxhat - m1 - xhat * m2);
                            }
                        }
                    }
                    let _ = base;
                }
            }
            if gamma.needs_grad() {
                accumulate(adjoint, gamma, dgamma);
            }
            if beta.needs_grad() {
                accumulate(adjoint, beta, dbeta);
            }
            if input.needs_grad() {
                accumulate(adjoint, input, dx);
            }
        }
        _ => unreachable!("backward_nn only handles nn ops"),
    }
}
