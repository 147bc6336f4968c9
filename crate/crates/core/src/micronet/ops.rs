//! Forward/backward kernels for the fixed operator set.

use super::tensor::{gemm, Real, Tensor};
use super::NetError;

/// Valid-padding, stride-1 convolution. Returns the output and the im2col
/// matrix needed by [`conv2d_backward`].
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>), NetError> {
    let [c, h, w] = input.dims3()?;
    let (k, kc, kh, kw) = match kernels.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(NetError::ShapeMismatch(format!(
                "kernels must be 4-d, got {:?}",
                kernels.shape()
            )))
        }
    };
    if kc != c || bias.len() != k {
        return Err(NetError::ShapeMismatch(format!(
            "input {:?}, kernels {:?}, bias {:?}",
            input.shape(),
            kernels.shape(),
            bias.shape()
        )));
    }
    if h < kh || w < kw {
        return Err(NetError::ShapeMismatch(format!(
            "input {h}×{w} smaller than kernel {kh}×{kw}"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let p = oh * ow;
    let rows = c * kh * kw;
    let cols = im2col(input.data(), c, h, w, kh, kw);
    let mut out = vec![T::zero(); k * p];
    for (row, &b) in out.chunks_exact_mut(p).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v = b);
    }
    gemm(k, rows, p, kernels.data(), false, &cols, false, T::one(), &mut out);
    Ok((Tensor::from_vec(&[k, oh, ow], out)?, cols))
}

fn im2col<T: Real>(inp: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<T> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let p = oh * ow;
    let mut cols = vec![T::zero(); c * kh * kw * p];
    let mut r = 0;
    for ch in 0..c {
        for di in 0..kh {
            for dj in 0..kw {
                let dst = &mut cols[r * p..(r + 1) * p];
                for i in 0..oh {
                    let src = (ch * h + i + di) * w + dj;
                    dst[i * ow..(i + 1) * ow].copy_from_slice(&inp[src..src + ow]);
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(
    dcols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let p = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    let mut r = 0;
    for ch in 0..c {
        for di in 0..kh {
            for dj in 0..kw {
                let src = &dcols[r * p..(r + 1) * p];
                for i in 0..oh {
                    let dst = (ch * h + i + di) * w + dj;
                    for (o, &g) in out[dst..dst + ow].iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                        *o += g;
                    }
                }
                r += 1;
            }
        }
    }
    out
}

/// Accumulates kernel and bias gradients; returns the input gradient when
/// requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cols: &[T],
    kernels: &Tensor<T>,
    in_shape: [usize; 3],
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let [c, h, w] = in_shape;
    let sh = kernels.shape();
    let (k, kh, kw) = (sh[0], sh[2], sh[3]);
    let rows = c * kh * kw;
    let p = grad_out.len() / k;
    let g = grad_out.data();
    for (gb, row) in grad_bias.iter_mut().zip(g.chunks_exact(p)) {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        *gb += T::of(s);
    }
    gemm(k, p, rows, g, false, cols, true, T::one(), grad_kernels);
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![T::zero(); rows * p];
    gemm(rows, k, p, kernels.data(), true, g, false, T::zero(), &mut dcols);
    let dx = col2im(&dcols, c, h, w, kh, kw);
    Some(Tensor::from_vec(&in_shape, dx).expect("shape preserved"))
}

/// 2×2 / stride-2 max pool; odd trailing rows and columns are dropped.
/// The argmax vector stores flat input indices (first maximum wins).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NetError> {
    let [c, h, w] = input.dims3()?;
    if h < 2 || w < 2 {
        return Err(NetError::ShapeMismatch(format!(
            "max-pool needs at least 2×2, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            let r0 = (ch * h + 2 * i) * w;
            let r1 = r0 + w;
            for j in 0..ow {
                let cand = [r0 + 2 * j, r0 + 2 * j + 1, r1 + 2 * j, r1 + 2 * j + 1];
                let mut best = cand[0];
                for &idx in &cand[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(
    grad_out: &[T],
    argmax: &[u32],
    in_shape: [usize; 3],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(&in_shape);
    let d = dx.data_mut();
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        d[idx as usize] += g;
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose activation output was not positive.
pub fn relu_backward<T: Real>(grad: &mut [T], out: &[T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorises.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `Y = X Wᵀ + b` for `W` of shape out × in and `X` holding one input per
/// row; returns the rows of `Y`.
pub fn dense_forward<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &[T]) -> Result<Vec<T>, NetError> {
    let (o, i) = match w.shape()[..] {
        [o, i] => (o, i),
        _ => return Err(NetError::ShapeMismatch("dense weight must be 2-d".into())),
    };
    if x.is_empty() || x.len() % i != 0 || b.len() != o {
        return Err(NetError::ShapeMismatch(format!(
            "dense {o}×{i} applied to input of length {}",
            x.len()
        )));
    }
    let n = x.len() / i;
    let mut y = b.data().repeat(n);
    gemm(n, i, o, x, false, w.data(), true, T::one(), &mut y);
    Ok(y)
}

/// Batched counterpart of [`dense_forward`]: accumulates weight/bias
/// gradients summed over the rows and returns the per-row input gradients.
pub fn dense_backward<T: Real>(
    w: &Tensor<T>,
    x: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (o, i) = (grad_b.len(), w.len() / grad_b.len());
    let n = x.len() / i;
    debug_assert_eq!(grad_out.len(), n * o);
    gemm(o, n, i, grad_out, true, x, false, T::one(), grad_w);
    for row in grad_out.chunks_exact(o) {
        for (gb, &g) in grad_b.iter_mut().zip(row) {
            *gb += g;
        }
    }
    if !need_input_grad {
        return None;
    }
    let mut dx = vec![T::zero(); n * i];
    gemm(n, o, i, grad_out, false, w.data(), false, T::zero(), &mut dx);
    Some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Quadruple-loop reference convolution.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let [c, h, w] = x.dims3().unwrap();
        let nk = k.shape()[0];
        let (oh, ow) = (h - 2, w - 2);
        let mut out = vec![0.0; nk * oh * ow];
        for f in 0..nk {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b.data()[f];
                    for ch in 0..c {
                        for di in 0..3 {
                            for dj in 0..3 {
                                s += x.data()[(ch * h + i + di) * w + j + dj]
                                    * k.data()[((f * c + ch) * 3 + di) * 3 + dj];
                            }
                        }
                    }
                    out[(f * oh + i) * ow + j] = s;
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_crops_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 6, 7], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let (y, _) = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 4, 5]);
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(y.data()[i * 5 + j], x.data()[(i + 1) * 7 + j + 1]);
            }
        }
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 5, 5], &mut rng);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let (y, _) = conv2d_forward(&x, &k, &b).unwrap();
        for (f, plane) in y.data().chunks(9).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[f]));
        }
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 5, 5], &mut rng);
        let k = random(&[2, 1, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let (y, _) = conv2d_forward(&x, &k, &b).unwrap();
        for (a, o) in y.data().iter().zip(naive_conv(&x, &k, &b)) {
            assert!((a - o).abs() < 1e-12);
        }
        let x = random(&[3, 9, 11], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let (y, _) = conv2d_forward(&x, &k, &b).unwrap();
        for (a, o) in y.data().iter().zip(naive_conv(&x, &k, &b)) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f64>::zeros(&[2, 2, 5]);
        let k = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
        let x = Tensor::<f64>::zeros(&[3, 5, 5]);
        assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 5, 6], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let g = random(&[3, 3, 4], &mut rng);
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let (y, _) = conv2d_forward(x, k, b).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cols) = conv2d_forward(&x, &k, &b).unwrap();
        let mut gk = vec![0.0; k.len()];
        let mut gb = vec![0.0; 3];
        let dx = conv2d_backward(&g, &cols, &k, [2, 5, 6], &mut gk, &mut gb, true).unwrap();
        let h = 1e-6;
        for idx in [0, 7, 20, 41, 53] {
            let mut kp = k.clone();
            kp.data_mut()[idx] += h;
            let mut km = k.clone();
            km.data_mut()[idx] -= h;
            let num = (loss(&x, &kp, &b) - loss(&x, &km, &b)) / (2.0 * h);
            assert!((num - gk[idx]).abs() < 1e-6);
        }
        for idx in [0, 13, 31, 59] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let num = (loss(&xp, &k, &b) - loss(&xm, &k, &b)) / (2.0 * h);
            assert!((num - dx.data()[idx]).abs() < 1e-6);
        }
        let total: f64 = g.data()[..12].iter().sum();
        assert!((gb[0] - total).abs() < 1e-12);
    }

    #[test]
    fn pool_basics() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::from_vec(&[2, 4, 5], vec![7.0f64; 40]).unwrap();
        let (y, _) = maxpool2d(&c).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(maxpool2d(&Tensor::<f64>::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn pool_matches_block_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 6, 6], &mut rng);
        let (y, arg) = maxpool2d(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for di in 0..2 {
                    for dj in 0..2 {
                        m = m.max(x.data()[(2 * i + di) * 6 + 2 * j + dj]);
                    }
                }
                assert_eq!(y.data()[i * 3 + j], m);
            }
        }
        let g = vec![1.0; 9];
        let dx = maxpool2d_backward(&g, &arg, [1, 6, 6]);
        assert_eq!(dx.data().iter().sum::<f64>(), 9.0);
    }

    #[test]
    fn dense_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random(&[3, 19], &mut rng);
        let b = random(&[3], &mut rng);
        let x: Vec<f64> = (0..19).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = dense_forward(&w, &b, &x).unwrap();
        for o in 0..3 {
            let naive: f64 =
                b.data()[o] + (0..19).map(|i| w.data()[o * 19 + i] * x[i]).sum::<f64>();
            assert!((y[o] - naive).abs() < 1e-12);
        }
        let g = vec![1.0, -2.0, 0.5];
        let mut gw = vec![0.0; 57];
        let mut gb = vec![0.0; 3];
        let dx = dense_backward(&w, &x, &g, &mut gw, &mut gb, true).unwrap();
        assert!((gw[19 + 4] - (-2.0 * x[4])).abs() < 1e-12);
        let naive_dx: f64 = (0..3).map(|o| g[o] * w.data()[o * 19 + 7]).sum();
        assert!((dx[7] - naive_dx).abs() < 1e-12);
        assert_eq!(gb, g);
    }

    #[test]
    fn dense_batch_matches_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, o, i) = (5, 4, 11);
        let w = random(&[o, i], &mut rng);
        let b = random(&[o], &mut rng);
        let x: Vec<f64> = (0..n * i).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n * o).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = dense_forward(&w, &b, &x).unwrap();
        let (mut gw, mut gb) = (vec![0.0; o * i], vec![0.0; o]);
        let dx = dense_backward(&w, &x, &g, &mut gw, &mut gb, true).unwrap();
        let (mut gw_ref, mut gb_ref) = (vec![0.0; o * i], vec![0.0; o]);
        for r in 0..n {
            let xr = &x[r * i..(r + 1) * i];
            let gr = &g[r * o..(r + 1) * o];
            let yr = dense_forward(&w, &b, xr).unwrap();
            for k in 0..o {
                assert!((yr[k] - y[r * o + k]).abs() < 1e-12);
            }
            let dxr = dense_backward(&w, xr, gr, &mut gw_ref, &mut gb_ref, true).unwrap();
            for k in 0..i {
                assert!((dxr[k] - dx[r * i + k]).abs() < 1e-12);
            }
        }
        for (a, b) in gw.iter().zip(&gw_ref).chain(gb.iter().zip(&gb_ref)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
