// Raw slice kernels shared by eager tensors and the tape.

use super::Elem;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<F: Elem>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|x| *x = F::zero());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub fn matmul_tn_acc<F: Elem>(a: &[F], g: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

/// `out[m×k] += g · bᵀ` where `g` is `m×n` and `b` is `k×n`.
pub fn matmul_nt_acc<F: Elem>(g: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = F::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s = s + gv * bv;
            }
            out[i * k + p] = out[i * k + p] + s;
        }
    }
}

/// Output size and leading pad of a "same" convolution along one axis.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, k: usize, stride: usize) -> Self {
        let (oh, pad_top) = same_padding(h, k, stride);
        let (ow, pad_left) = same_padding(w, k, stride);
        ConvGeom {
            h,
            w,
            k,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        }
    }

    /// Input coordinate hit by output `(oy, ox)` and tap `(ky, kx)`, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// im2col for an HWC image: rows are output pixels, columns are `(ky, kx, ci)`.
pub fn im2col<F: Elem>(x: &[F], cin: usize, g: &ConvGeom) -> Vec<F> {
    let cols = g.k * g.k * cin;
    let mut out = vec![F::zero(); g.oh * g.ow * cols];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * cols;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                        let dst = row + (ky * g.k + kx) * cin;
                        let src = (y * g.w + xx) * cin;
                        out[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
    }
    out
}

/// Scatter-add the adjoint of [`im2col`].
pub fn col2im_acc<F: Elem>(cols: &[F], cin: usize, g: &ConvGeom, dx: &mut [F]) {
    let ncol = g.k * g.k * cin;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = (oy * g.ow + ox) * ncol;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                        let s = row + (ky * g.k + kx) * cin;
                        let d = (y * g.w + xx) * cin;
                        for c in 0..cin {
                            dx[d + c] = dx[d + c] + cols[s + c];
                        }
                    }
                }
            }
        }
    }
}

/// Depthwise convolution, HWC input, `[k, k, c]` kernel.
pub fn depthwise<F: Elem>(x: &[F], w: &[F], c: usize, g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.oh * g.ow * c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = (oy * g.ow + ox) * c;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                        let i = (y * g.w + xx) * c;
                        let wk = (ky * g.k + kx) * c;
                        for ch in 0..c {
                            out[o + ch] = out[o + ch] + x[i + ch] * w[wk + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise`] w.r.t. input and kernel, accumulated.
pub fn depthwise_backward<F: Elem>(
    x: &[F],
    w: &[F],
    gout: &[F],
    c: usize,
    g: &ConvGeom,
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
) {
    let mut dx = dx;
    let mut dw = dw;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = (oy * g.ow + ox) * c;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                        let i = (y * g.w + xx) * c;
                        let wk = (ky * g.k + kx) * c;
                        for ch in 0..c {
                            let go = gout[o + ch];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[i + ch] = dx[i + ch] + go * w[wk + ch];
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[wk + ch] = dw[wk + ch] + go * x[i + ch];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_tf_rule() {
        assert_eq!(same_padding(96, 3, 2), (48, 0));
        assert_eq!(same_padding(96, 3, 1), (96, 1));
        assert_eq!(same_padding(3, 3, 2), (2, 1));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
    }

    #[test]
    fn matmul_identity() {
        let a = [1.0f64, 0.0, 0.0, 1.0];
        let b = [1.0f64, 2.0, 3.0, 4.0];
        let mut o = [0.0; 4];
        matmul(&a, &b, &mut o, 2, 2, 2);
        assert_eq!(o, b);
    }

    #[test]
    fn depthwise_center_tap_is_identity() {
        let g = ConvGeom::new(4, 3, 3, 1);
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let mut w = vec![0.0; 9 * 2];
        w[4 * 2] = 1.0;
        w[4 * 2 + 1] = 1.0;
        assert_eq!(depthwise(&x, &w, 2, &g), x);
    }
}
