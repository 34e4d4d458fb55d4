//! A single-layer LSTM cell with an output projection.
//!
//! Gates act on `z = [x; h]`:
//!
//! ```text
//! i = σ(W_i z + b_i)    f = σ(W_f z + b_f)    o = σ(W_o z + b_o)
//! g = tanh(W_g z)
//! c' = f ⊙ c + i ⊙ g    h' = o ⊙ tanh(c')    y = W_y h'
//! ```
//!
//! The candidate has no bias, which gives exactly
//! `4·n_c·(n_i + n_c) + n_o·n_c + 3·n_c` parameters.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{sigmoid, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub n_i: usize,
    pub n_c: usize,
    pub n_o: usize,
}

impl LstmShape {
    pub fn new(n_i: usize, n_c: usize, n_o: usize) -> Self {
        Self { n_i, n_c, n_o }
    }
}

/// `n_c·n_c·4 + n_i·n_c·4 + n_c·n_o + n_c·3`.
pub fn param_count(shape: LstmShape) -> usize {
    let LstmShape { n_i, n_c, n_o } = shape;
    n_c * n_c * 4 + n_i * n_c * 4 + n_c * n_o + n_c * 3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub shape: LstmShape,
    pub w_i: Mat,
    pub w_f: Mat,
    pub w_o: Mat,
    pub w_g: Mat,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub w_y: Mat,
}

/// Values kept from a forward step for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Number of stacked recurrent layers; the architecture uses one.
pub const LAYERS: usize = 1;

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        let LstmShape { n_i, n_c, n_o } = shape;
        let gate = || Mat::zeros(n_c, n_i + n_c);
        Self {
            shape,
            w_i: gate(),
            w_f: gate(),
            w_o: gate(),
            w_g: gate(),
            b_i: vec![0.0; n_c],
            b_f: vec![0.0; n_c],
            b_o: vec![0.0; n_c],
            w_y: Mat::zeros(n_o, n_c),
        }
    }

    /// Every entry uniform on `[-scale, scale]`.
    pub fn random<R: Rng>(shape: LstmShape, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let u = Uniform::new_inclusive(-scale, scale).expect("finite scale");
        for (_, block) in p.blocks_mut() {
            for v in block.iter_mut() {
                *v = u.sample(rng);
            }
        }
        p
    }

    pub fn layers(&self) -> usize {
        LAYERS
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("w_i", &self.w_i.data),
            ("w_f", &self.w_f.data),
            ("w_o", &self.w_o.data),
            ("w_g", &self.w_g.data),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("w_y", &self.w_y.data),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 8] {
        [
            ("w_i", &mut self.w_i.data),
            ("w_f", &mut self.w_f.data),
            ("w_o", &mut self.w_o.data),
            ("w_g", &mut self.w_g.data),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("w_y", &mut self.w_y.data),
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One recurrence step; returns `(h', c', cache)`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, StepCache), String> {
        let LstmShape { n_i, n_c, .. } = self.shape;
        if x.len() != n_i || h.len() != n_c || c.len() != n_c {
            return Err(format!(
                "LSTM step expects input {n_i} and state {n_c}, got {} / {} / {}",
                x.len(),
                h.len(),
                c.len()
            ));
        }
        let mut z = Vec::with_capacity(n_i + n_c);
        z.extend_from_slice(x);
        z.extend_from_slice(h);
        let gate = |w: &Mat, b: Option<&[f64]>, act: fn(f64) -> f64| -> Vec<f64> {
            let mut v = w.matvec(&z);
            if let Some(b) = b {
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi += bi;
                }
            }
            v.into_iter().map(act).collect()
        };
        let i = gate(&self.w_i, Some(&self.b_i), sigmoid);
        let f = gate(&self.w_f, Some(&self.b_f), sigmoid);
        let o = gate(&self.w_o, Some(&self.b_o), sigmoid);
        let g = gate(&self.w_g, None, f64::tanh);
        let c_new: Vec<f64> = (0..n_c).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..n_c).map(|k| o[k] * tanh_c[k]).collect();
        Ok((
            h_new,
            c_new,
            StepCache {
                z,
                i,
                f,
                o,
                g,
                c_prev: c.to_vec(),
                tanh_c,
            },
        ))
    }

    pub fn output(&self, h: &[f64]) -> Vec<f64> {
        self.w_y.matvec(h)
    }

    /// Accumulates `∂/∂W_y` for output gradient `dy` and returns `∂/∂h`.
    pub fn output_backward(&self, h: &[f64], dy: &[f64], grads: &mut LstmParams) -> Vec<f64> {
        grads.w_y.add_outer(dy, h);
        let mut dh = vec![0.0; self.shape.n_c];
        self.w_y.matvec_t_add(dy, &mut dh);
        dh
    }

    /// Backpropagates through one step given `∂/∂h'` and `∂/∂c'`.
    /// Accumulates parameter gradients and returns `(∂/∂x, ∂/∂h, ∂/∂c)`.
    pub fn step_backward(&self, cache: &StepCache, dh: &[f64], dc_next: &[f64], grads: &mut LstmParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let LstmShape { n_i, n_c, .. } = self.shape;
        let mut dzi = vec![0.0; n_c];
        let mut dzf = vec![0.0; n_c];
        let mut dzo = vec![0.0; n_c];
        let mut dzg = vec![0.0; n_c];
        let mut dc_prev = vec![0.0; n_c];
        for k in 0..n_c {
            let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            dzo[k] = dh[k] * tc * o * (1.0 - o);
            dzi[k] = dc * g * i * (1.0 - i);
            dzf[k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dzg[k] = dc * i * (1.0 - g * g);
            dc_prev[k] = dc * f;
        }
        grads.w_i.add_outer(&dzi, &cache.z);
        grads.w_f.add_outer(&dzf, &cache.z);
        grads.w_o.add_outer(&dzo, &cache.z);
        grads.w_g.add_outer(&dzg, &cache.z);
        for k in 0..n_c {
            grads.b_i[k] += dzi[k];
            grads.b_f[k] += dzf[k];
            grads.b_o[k] += dzo[k];
        }
        let mut dz = vec![0.0; n_i + n_c];
        self.w_i.matvec_t_add(&dzi, &mut dz);
        self.w_f.matvec_t_add(&dzf, &mut dz);
        self.w_o.matvec_t_add(&dzo, &mut dz);
        self.w_g.matvec_t_add(&dzg, &mut dz);
        let dh_prev = dz.split_off(n_i);
        (dz, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn count_formula() {
        assert_eq!(param_count(LstmShape::new(1, 1, 1)), 12);
        assert_eq!(param_count(LstmShape::new(1, 70, 1)), 20160);
    }

    #[test]
    fn count_matches_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let s = LstmShape::new(rng.random_range(1..20), rng.random_range(1..40), rng.random_range(1..20));
            assert_eq!(LstmParams::zeros(s).len(), param_count(s), "{s:?}");
        }
        assert_eq!(LstmParams::zeros(LstmShape::new(1, 70, 1)).len(), 20160);
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(LstmShape::new(2, 3, 1));
        let (h, c, cache) = p.step(&[1.0, -2.0], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
        assert!(cache.i.iter().all(|v| *v == 0.5));
        let (_, c2, _) = p.step(&[1.0, -2.0], &[0.0; 3], &[0.8; 3]).unwrap();
        assert!(c2.iter().all(|v| (*v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn single_cell_by_hand() {
        // n_i = n_c = 1; every weight 0.5, biases 0.1, state h = 0.2, c = 0.3, x = 1.
        // z = [1, 0.2]; pre-activation 0.5 + 0.1 + 0.1 = 0.7 for i, f, o; 0.6 for g.
        // σ(0.7) = 0.668187772, tanh(0.6) = 0.537049567.
        // c' = 0.668187772·0.3 + 0.668187772·0.537049567 = 0.559306
        // h' = 0.668187772·tanh(0.559306) = 0.668187772·0.507463 = 0.339080
        let mut p = LstmParams::zeros(LstmShape::new(1, 1, 1));
        for (name, b) in p.blocks_mut() {
            let v = if name.starts_with('b') { 0.1 } else { 0.5 };
            b.iter_mut().for_each(|x| *x = v);
        }
        let (h, c, _) = p.step(&[1.0], &[0.2], &[0.3]).unwrap();
        assert!((c[0] - 0.559306).abs() < 1e-6, "{}", c[0]);
        assert!((h[0] - 0.339080).abs() < 1e-6, "{}", h[0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LstmParams::zeros(LstmShape::new(2, 3, 1));
        assert!(p.step(&[1.0], &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = LstmShape::new(2, 3, 2);
        let p = LstmParams::random(shape, 0.8, &mut rng);
        let x = [0.3, -0.7];
        let h0 = [0.1, -0.2, 0.4];
        let c0 = [0.5, 0.0, -0.3];
        let dy = [0.7, -1.3];
        let loss = |p: &LstmParams| {
            let (h, _, _) = p.step(&x, &h0, &c0).unwrap();
            super::super::linalg::dot(&p.output(&h), &dy)
        };
        let (h, _, cache) = p.step(&x, &h0, &c0).unwrap();
        let mut grads = LstmParams::zeros(shape);
        let dh = p.output_backward(&h, &dy, &mut grads);
        p.step_backward(&cache, &dh, &[0.0; 3], &mut grads);
        let eps = 1e-6;
        for (b, (name, g)) in grads.blocks().iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = p.clone();
                plus.blocks_mut()[b].1[k] += eps;
                let mut minus = p.clone();
                minus.blocks_mut()[b].1[k] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert!((fd - g[k]).abs() < 1e-7, "{name}[{k}]: {fd} vs {}", g[k]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..500, xs in proptest::collection::vec(-50.0f64..50.0, 2)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = LstmParams::random(LstmShape::new(2, 4, 1), 3.0, &mut rng);
            let (h, _, _) = p.step(&xs, &[0.9, -0.9, 0.1, 0.0], &[2.0, -5.0, 0.0, 1.0]).unwrap();
            proptest::prop_assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }
}
