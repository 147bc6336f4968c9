//! Unidirectional LSTM pass with back-propagation through time, and the
//! bidirectional layer built from two of them.
//!
//! Gate layout in every 4H-sized block is `[i, f, g, o]`.

use super::ops::dot;
use super::tensor::{gemm, Real, Tensor};

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Per-step activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    steps: usize,
    input_dim: usize,
    hidden: usize,
    reverse: bool,
    xs: Vec<T>,
    /// Activated gates, steps × 4H.
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hs: Vec<T>,
}

/// Weight references for one direction.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a, T> {
    /// 4H × I
    pub w_ih: &'a Tensor<T>,
    /// 4H × H
    pub w_hh: &'a Tensor<T>,
    /// 4H
    pub bias: &'a Tensor<T>,
}

impl<T: Real> LstmWeights<'_, T> {
    fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }
}

/// Gradient accumulators for one direction.
pub struct LstmGrads<'a, T> {
    pub w_ih: &'a mut [T],
    pub w_hh: &'a mut [T],
    pub bias: &'a mut [T],
}

fn step_order(steps: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    }
}

/// Runs one direction over `xs` (steps × input_dim, time order). Hidden
/// states come back in time order regardless of direction; the initial
/// state is zero.
pub fn lstm_forward<T: Real>(
    xs: &[T],
    steps: usize,
    w: LstmWeights<'_, T>,
    reverse: bool,
) -> (Vec<T>, LstmCache<T>) {
    let h = w.hidden();
    let input_dim = w.w_ih.shape()[1];
    let g4 = 4 * h;
    assert_eq!(xs.len(), steps * input_dim);
    let mut z = vec![T::zero(); steps * g4];
    for row in z.chunks_exact_mut(g4) {
        row.copy_from_slice(w.bias.data());
    }
    gemm(steps, input_dim, g4, xs, false, w.w_ih.data(), true, T::one(), &mut z);

    let mut gates = vec![T::zero(); steps * g4];
    let mut cells = vec![T::zero(); steps * h];
    let mut tanh_cells = vec![T::zero(); steps * h];
    let mut hs = vec![T::zero(); steps * h];
    let zero_h = vec![T::zero(); h];
    let mut prev: Option<usize> = None;
    for t in step_order(steps, reverse) {
        let (h_prev, c_prev) = match prev {
            Some(p) => (hs[p * h..(p + 1) * h].to_vec(), cells[p * h..(p + 1) * h].to_vec()),
            None => (zero_h.clone(), zero_h.clone()),
        };
        let zt = &mut z[t * g4..(t + 1) * g4];
        for (r, zr) in zt.iter_mut().enumerate() {
            *zr += dot(&w.w_hh.data()[r * h..(r + 1) * h], &h_prev);
        }
        let gt = &mut gates[t * g4..(t + 1) * g4];
        for j in 0..h {
            let i = sigmoid(zt[j]);
            let f = sigmoid(zt[h + j]);
            let g = zt[2 * h + j].tanh();
            let o = sigmoid(zt[3 * h + j]);
            gt[j] = i;
            gt[h + j] = f;
            gt[2 * h + j] = g;
            gt[3 * h + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            cells[t * h + j] = c;
            tanh_cells[t * h + j] = tc;
            hs[t * h + j] = o * tc;
        }
        prev = Some(t);
    }
    let cache = LstmCache {
        steps,
        input_dim,
        hidden: h,
        reverse,
        xs: xs.to_vec(),
        gates,
        cells,
        tanh_cells,
        hs: hs.clone(),
    };
    (hs, cache)
}

/// Back-propagation through time. `d_hs` is steps × H in time order.
/// Accumulates weight gradients and returns the input gradient.
pub fn lstm_backward<T: Real>(
    cache: &LstmCache<T>,
    d_hs: &[T],
    w: LstmWeights<'_, T>,
    grads: LstmGrads<'_, T>,
) -> Vec<T> {
    let (steps, h, input_dim) = (cache.steps, cache.hidden, cache.input_dim);
    let g4 = 4 * h;
    let order = step_order(steps, cache.reverse);
    let mut dz = vec![T::zero(); steps * g4];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    for s in (0..steps).rev() {
        let t = order[s];
        let prev = if s > 0 { Some(order[s - 1]) } else { None };
        let gt = &cache.gates[t * g4..(t + 1) * g4];
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        for j in 0..h {
            let (i, f, g, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let tc = cache.tanh_cells[t * h + j];
            let c_prev = prev.map_or(T::zero(), |p| cache.cells[p * h + j]);
            let dh = d_hs[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (T::one() - tc * tc) + dc_next[j];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev;
            dzt[j] = di * i * (T::one() - i);
            dzt[h + j] = df * f * (T::one() - f);
            dzt[2 * h + j] = dg * (T::one() - g * g);
            dzt[3 * h + j] = d_o * o * (T::one() - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        for (r, &d) in dzt.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            let row = &w.w_hh.data()[r * h..(r + 1) * h];
            for (acc, &wv) in dh_next.iter_mut().zip(row) {
                *acc += d * wv;
            }
            if let Some(p) = prev {
                let hp = &cache.hs[p * h..(p + 1) * h];
                for (gw, &hv) in grads.w_hh[r * h..(r + 1) * h].iter_mut().zip(hp) {
                    *gw += d * hv;
                }
            }
        }
    }
    for r in 0..g4 {
        let s: f64 = (0..steps).map(|t| dz[t * g4 + r].as_f64()).sum();
        grads.bias[r] += T::of(s);
    }
    gemm(g4, steps, input_dim, &dz, true, &cache.xs, false, T::one(), grads.w_ih);
    let mut dx = vec![T::zero(); steps * input_dim];
    gemm(steps, g4, input_dim, &dz, false, w.w_ih.data(), false, T::zero(), &mut dx);
    dx
}

/// Cache for one bidirectional layer.
#[derive(Debug, Clone)]
pub struct BiCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
}

/// Output rows are `[h_forward(t) ‖ h_backward(t)]`, steps × 2H.
pub fn bilstm_forward<T: Real>(
    xs: &[T],
    steps: usize,
    fwd: LstmWeights<'_, T>,
    bwd: LstmWeights<'_, T>,
) -> (Vec<T>, BiCache<T>) {
    let h = fwd.hidden();
    let (hf, cf) = lstm_forward(xs, steps, fwd, false);
    let (hb, cb) = lstm_forward(xs, steps, bwd, true);
    let mut out = Vec::with_capacity(steps * 2 * h);
    for t in 0..steps {
        out.extend_from_slice(&hf[t * h..(t + 1) * h]);
        out.extend_from_slice(&hb[t * h..(t + 1) * h]);
    }
    (out, BiCache { fwd: cf, bwd: cb })
}

pub fn bilstm_backward<T: Real>(
    cache: &BiCache<T>,
    d_out: &[T],
    fwd: LstmWeights<'_, T>,
    bwd: LstmWeights<'_, T>,
    g_fwd: LstmGrads<'_, T>,
    g_bwd: LstmGrads<'_, T>,
) -> Vec<T> {
    let steps = cache.fwd.steps;
    let h = cache.fwd.hidden;
    let mut dhf = Vec::with_capacity(steps * h);
    let mut dhb = Vec::with_capacity(steps * h);
    for t in 0..steps {
        let row = &d_out[t * 2 * h..(t + 1) * 2 * h];
        dhf.extend_from_slice(&row[..h]);
        dhb.extend_from_slice(&row[h..]);
    }
    let mut dx = lstm_backward(&cache.fwd, &dhf, fwd, g_fwd);
    let dxb = lstm_backward(&cache.bwd, &dhb, bwd, g_bwd);
    for (a, b) in dx.iter_mut().zip(dxb) {
        *a += b;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap()
    }

    /// Scalar-loop LSTM written straight from the cell equations.
    fn oracle(xs: &[Vec<f64>], w_ih: &Tensor<f64>, w_hh: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
        let hid = w_hh.shape()[1];
        let inp = w_ih.shape()[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; hid];
        let mut c = vec![0.0; hid];
        let mut out = Vec::new();
        for x in xs {
            let mut pre = vec![0.0; 4 * hid];
            for r in 0..4 * hid {
                let mut s = b.data()[r];
                for k in 0..inp {
                    s += w_ih.data()[r * inp + k] * x[k];
                }
                for k in 0..hid {
                    s += w_hh.data()[r * hid + k] * h[k];
                }
                pre[r] = s;
            }
            let mut nh = vec![0.0; hid];
            for j in 0..hid {
                let i = sig(pre[j]);
                let f = sig(pre[hid + j]);
                let g = pre[2 * hid + j].tanh();
                let o = sig(pre[3 * hid + j]);
                c[j] = f * c[j] + i * g;
                nh[j] = o * c[j].tanh();
            }
            h = nh;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (inp, hid, steps) = (5, 4, 3);
        let w_ih = random(&[4 * hid, inp], &mut rng);
        let w_hh = random(&[4 * hid, hid], &mut rng);
        let b = random(&[4 * hid], &mut rng);
        let xs: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..inp).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let flat: Vec<f64> = xs.concat();
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, bias: &b };
        let (hs, _) = lstm_forward(&flat, steps, w, false);
        let want = oracle(&xs, &w_ih, &w_hh, &b);
        for t in 0..steps {
            for j in 0..hid {
                let (a, o) = (hs[t * hid + j], want[t][j]);
                assert!((a - o).abs() <= 1e-5 * o.abs().max(1e-12), "{a} vs {o}");
            }
        }
        // reverse direction equals the oracle on the reversed sequence
        let (hr, _) = lstm_forward(&flat, steps, w, true);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let want_r = oracle(&rev, &w_ih, &w_hh, &b);
        for t in 0..steps {
            for j in 0..hid {
                assert!((hr[t * hid + j] - want_r[steps - 1 - t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (inp, hid, steps) = (3, 2, 4);
        let w_ih = random(&[4 * hid, inp], &mut rng);
        let w_hh = random(&[4 * hid, hid], &mut rng);
        let b = random(&[4 * hid], &mut rng);
        let xs: Vec<f64> = (0..steps * inp).map(|_| rng.random_range(-1.0..1.0)).collect();
        let proj: Vec<f64> = (0..steps * hid).map(|_| rng.random_range(-1.0..1.0)).collect();
        for reverse in [false, true] {
            let loss = |w_ih: &Tensor<f64>, w_hh: &Tensor<f64>, xs: &[f64]| -> f64 {
                let w = LstmWeights { w_ih, w_hh, bias: &b };
                let (hs, _) = lstm_forward(xs, steps, w, reverse);
                hs.iter().zip(&proj).map(|(a, b)| a * b).sum()
            };
            let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, bias: &b };
            let (_, cache) = lstm_forward(&xs, steps, w, reverse);
            let mut g_ih = vec![0.0; w_ih.len()];
            let mut g_hh = vec![0.0; w_hh.len()];
            let mut g_b = vec![0.0; b.len()];
            let dx = lstm_backward(
                &cache,
                &proj,
                w,
                LstmGrads { w_ih: &mut g_ih, w_hh: &mut g_hh, bias: &mut g_b },
            );
            let eps = 1e-6;
            for idx in 0..w_hh.len() {
                let mut p = w_hh.clone();
                p.data_mut()[idx] += eps;
                let mut m = w_hh.clone();
                m.data_mut()[idx] -= eps;
                let num = (loss(&w_ih, &p, &xs) - loss(&w_ih, &m, &xs)) / (2.0 * eps);
                assert!((num - g_hh[idx]).abs() < 1e-7, "w_hh[{idx}]");
            }
            for idx in 0..w_ih.len() {
                let mut p = w_ih.clone();
                p.data_mut()[idx] += eps;
                let mut m = w_ih.clone();
                m.data_mut()[idx] -= eps;
                let num = (loss(&p, &w_hh, &xs) - loss(&m, &w_hh, &xs)) / (2.0 * eps);
                assert!((num - g_ih[idx]).abs() < 1e-7, "w_ih[{idx}]");
            }
            for idx in 0..xs.len() {
                let mut p = xs.clone();
                p[idx] += eps;
                let mut m = xs.clone();
                m[idx] -= eps;
                let num = (loss(&w_ih, &w_hh, &p) - loss(&w_ih, &w_hh, &m)) / (2.0 * eps);
                assert!((num - dx[idx]).abs() < 1e-7, "x[{idx}]");
            }
        }
    }

    #[test]
    fn zero_everything_gives_zero_states() {
        let w_ih = Tensor::<f64>::zeros(&[8, 3]);
        let w_hh = Tensor::zeros(&[8, 2]);
        let b = Tensor::zeros(&[8]);
        let w = LstmWeights { w_ih: &w_ih, w_hh: &w_hh, bias: &b };
        let (out, _) = bilstm_forward(&[0.0; 9], 3, w, w);
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
