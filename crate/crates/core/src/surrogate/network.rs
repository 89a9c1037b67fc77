//! Residual MLP with a linear objective head and a logit constraint head,
//! plus hand-written reverse mode for parameters and inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Activation::Relu => u.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(u),
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub inputs: usize,
    pub block_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub objectives: usize,
    pub constraints: usize,
}

/// Parameters live in one flat list so the optimizer can treat them uniformly:
/// `[W_in, b_in, (γ, β, W1, b1, W2, b2) × B, γ_f, β_f, W_o, b_o?, W_c, b_c?]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub shape: Shape,
    pub activation: Activation,
    pub params: Vec<Matrix>,
}

struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

struct BlockCache {
    ln: LayerNormCache,
    z: Matrix,
    u: Matrix,
    a: Matrix,
    mask1: Option<Matrix>,
    mask2: Option<Matrix>,
}

pub struct ForwardCache {
    x: Matrix,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    z_final: Matrix,
}

pub struct Output {
    /// Objective head in normalized target space (`rows × q`).
    pub objectives: Matrix,
    /// Constraint logits (`rows × k`).
    pub logits: Matrix,
    pub cache: ForwardCache,
}

/// Dropout settings for a training pass.
pub struct Dropout<'a, R: Rng> {
    pub p1: f64,
    pub p2: f64,
    pub rng: &'a mut R,
}

fn layer_norm(h: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, LayerNormCache) {
    let d = h.cols();
    let mut xhat = Matrix::zeros(h.rows(), d);
    let mut out = Matrix::zeros(h.rows(), d);
    let mut inv_std = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let row = h.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(s);
        let xr = xhat.row_mut(i);
        for (x, v) in xr.iter_mut().zip(row) {
            *x = (v - mean) * s;
        }
        let xr = xhat.row(i).to_vec();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = xr[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns (dx, dγ, dβ).
fn layer_norm_backward(dy: &Matrix, cache: &LayerNormCache, gamma: &Matrix) -> (Matrix, Matrix, Matrix) {
    let d = dy.cols();
    let mut dgamma = Matrix::zeros(1, d);
    let mut dbeta = Matrix::zeros(1, d);
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxhat = vec![0.0; d];
    for i in 0..dy.rows() {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut sum = 0.0;
        let mut sum_x = 0.0;
        for j in 0..d {
            dgamma.data_mut()[j] += g[j] * xh[j];
            dbeta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xh[j];
        }
        let s = cache.inv_std[i] / d as f64;
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = s * (d as f64 * dxhat[j] - sum - xh[j] * sum_x);
        }
    }
    (dx, dgamma, dbeta)
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Option<Matrix> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 - p;
    Some(Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

fn apply_mask(m: &mut Matrix, mask: &Option<Matrix>) {
    if let Some(mask) = mask {
        for (v, k) in m.data_mut().iter_mut().zip(mask.data()) {
            *v *= k;
        }
    }
}

fn add_into(acc: &mut Matrix, other: &Matrix) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

impl Network {
    pub fn new<R: Rng>(shape: Shape, activation: Activation, rng: &mut R) -> Self {
        let mut params = Vec::new();
        let mut dense = |fan_in: usize, fan_out: usize, params: &mut Vec<Matrix>| {
            let r = 1.0 / (fan_in as f64).sqrt();
            params.push(Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-r..r)));
            params.push(Matrix::from_fn(1, fan_out, |_, _| rng.random_range(-r..r)));
        };
        dense(shape.inputs, shape.block_dim, &mut params);
        for _ in 0..shape.blocks {
            params.push(Matrix::from_fn(1, shape.block_dim, |_, _| 1.0));
            params.push(Matrix::zeros(1, shape.block_dim));
            dense(shape.block_dim, shape.hidden, &mut params);
            dense(shape.hidden, shape.block_dim, &mut params);
        }
        params.push(Matrix::from_fn(1, shape.block_dim, |_, _| 1.0));
        params.push(Matrix::zeros(1, shape.block_dim));
        if shape.objectives > 0 {
            dense(shape.block_dim, shape.objectives, &mut params);
        }
        if shape.constraints > 0 {
            dense(shape.block_dim, shape.constraints, &mut params);
        }
        Self {
            shape,
            activation,
            params,
        }
    }

    fn block_base(b: usize) -> usize {
        2 + 6 * b
    }

    fn final_base(&self) -> usize {
        2 + 6 * self.shape.blocks
    }

    fn obj_base(&self) -> Option<usize> {
        (self.shape.objectives > 0).then(|| self.final_base() + 2)
    }

    fn con_base(&self) -> Option<usize> {
        (self.shape.constraints > 0).then(|| self.final_base() + 2 + if self.shape.objectives > 0 { 2 } else { 0 })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    /// Forward pass on normalized inputs. Dropout is active only when given.
    pub fn forward<R: Rng>(&self, x: &Matrix, mut dropout: Option<Dropout<'_, R>>) -> Output {
        let p = &self.params;
        let rows = x.rows();
        let mut h = x.matmul_bias(&p[0], &p[1]);
        let mut blocks = Vec::with_capacity(self.shape.blocks);
        for b in 0..self.shape.blocks {
            let base = Self::block_base(b);
            let (z, ln) = layer_norm(&h, &p[base], &p[base + 1]);
            let u = z.matmul_bias(&p[base + 2], &p[base + 3]);
            let mut a = u.map(|v| self.activation.apply(v));
            let (mask1, mask2) = match dropout.as_mut() {
                Some(d) => (
                    dropout_mask(rows, self.shape.hidden, d.p1, d.rng),
                    dropout_mask(rows, self.shape.block_dim, d.p2, d.rng),
                ),
                None => (None, None),
            };
            apply_mask(&mut a, &mask1);
            let mut v = a.matmul_bias(&p[base + 4], &p[base + 5]);
            apply_mask(&mut v, &mask2);
            add_into(&mut h, &v);
            blocks.push(BlockCache {
                ln,
                z,
                u,
                a,
                mask1,
                mask2,
            });
        }
        let fb = self.final_base();
        let (z_final, final_ln) = layer_norm(&h, &p[fb], &p[fb + 1]);
        let objectives = match self.obj_base() {
            Some(o) => z_final.matmul_bias(&p[o], &p[o + 1]),
            None => Matrix::zeros(rows, 0),
        };
        let logits = match self.con_base() {
            Some(c) => z_final.matmul_bias(&p[c], &p[c + 1]),
            None => Matrix::zeros(rows, 0),
        };
        Output {
            objectives,
            logits,
            cache: ForwardCache {
                x: x.clone(),
                blocks,
                final_ln,
                z_final,
            },
        }
    }

    /// Backpropagates output gradients. Returns the gradient with respect to
    /// the normalized input and, if requested, the parameter gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_obj: &Matrix,
        d_logits: &Matrix,
        want_params: bool,
    ) -> (Matrix, Option<Vec<Matrix>>) {
        let p = &self.params;
        let mut grads: Vec<Matrix> = if want_params {
            p.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()
        } else {
            Vec::new()
        };
        let rows = cache.x.rows();
        let mut dz = Matrix::zeros(rows, self.shape.block_dim);
        if let Some(o) = self.obj_base() {
            add_into(&mut dz, &d_obj.matmul_t(&p[o]));
            if want_params {
                grads[o] = cache.z_final.t_matmul(d_obj);
                grads[o + 1] = d_obj.sum_rows();
            }
        }
        if let Some(c) = self.con_base() {
            add_into(&mut dz, &d_logits.matmul_t(&p[c]));
            if want_params {
                grads[c] = cache.z_final.t_matmul(d_logits);
                grads[c + 1] = d_logits.sum_rows();
            }
        }
        let fb = self.final_base();
        let (mut dh, dg, db) = layer_norm_backward(&dz, &cache.final_ln, &p[fb]);
        if want_params {
            grads[fb] = dg;
            grads[fb + 1] = db;
        }
        for b in (0..self.shape.blocks).rev() {
            let base = Self::block_base(b);
            let bc = &cache.blocks[b];
            let mut dv = dh.clone();
            apply_mask(&mut dv, &bc.mask2);
            let mut da = dv.matmul_t(&p[base + 4]);
            apply_mask(&mut da, &bc.mask1);
            for (g, &u) in da.data_mut().iter_mut().zip(bc.u.data()) {
                *g *= self.activation.derivative(u);
            }
            let du = da;
            let dzb = du.matmul_t(&p[base + 2]);
            let (dh_ln, dg, db) = layer_norm_backward(&dzb, &bc.ln, &p[base]);
            if want_params {
                grads[base + 4] = bc.a.t_matmul(&dv);
                grads[base + 5] = dv.sum_rows();
                grads[base + 2] = bc.z.t_matmul(&du);
                grads[base + 3] = du.sum_rows();
                grads[base] = dg;
                grads[base + 1] = db;
            }
            add_into(&mut dh, &dh_ln);
        }
        if want_params {
            grads[0] = cache.x.t_matmul(&dh);
            grads[1] = dh.sum_rows();
        }
        let dx = dh.matmul_t(&p[0]);
        (dx, want_params.then_some(grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(activation: Activation) -> Network {
        let shape = Shape {
            inputs: 3,
            block_dim: 5,
            hidden: 7,
            blocks: 2,
            objectives: 2,
            constraints: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = Network::new(shape, activation, &mut rng);
        // perturb LN parameters so their gradients are exercised
        for p in n.params.iter_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        n
    }

    fn scalar(n: &Network, x: &Matrix) -> f64 {
        let out = n.forward::<ChaCha8Rng>(x, None);
        let a: f64 = out.objectives.data().iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum();
        let b: f64 = out.logits.data().iter().map(|v| sigmoid(*v)).sum();
        a + b
    }

    fn upstream(n: &Network, x: &Matrix) -> (Matrix, Matrix, ForwardCache) {
        let out = n.forward::<ChaCha8Rng>(x, None);
        let d_obj = Matrix::from_fn(out.objectives.rows(), out.objectives.cols(), |i, j| {
            (i * out.objectives.cols() + j) as f64 + 1.0
        });
        let d_log = out.logits.map(|v| sigmoid(v) * (1.0 - sigmoid(v)));
        (d_obj, d_log, out.cache)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let n = net(Activation::Softplus);
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7]);
        let (d_obj, d_log, cache) = upstream(&n, &x);
        let (dx, grads) = n.backward(&cache, &d_obj, &d_log, true);
        let grads = grads.unwrap();
        let h = 1e-5;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (scalar(&n, &xp) - scalar(&n, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "x[{i}] {fd} vs {}", dx.data()[i]);
        }
        for (pi, g) in grads.iter().enumerate() {
            for e in 0..g.data().len() {
                let mut np = n.clone();
                np.params[pi].data_mut()[e] += h;
                let mut nm = n.clone();
                nm.params[pi].data_mut()[e] -= h;
                let fd = (scalar(&np, &x) - scalar(&nm, &x)) / (2.0 * h);
                assert!(
                    (fd - g.data()[e]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{e}] {fd} vs {}",
                    g.data()[e]
                );
            }
        }
    }

    #[test]
    fn relu_gradients_match_away_from_kinks() {
        let n = net(Activation::Relu);
        let x = Matrix::from_vec(1, 3, vec![0.21, 0.63, 0.44]);
        let (d_obj, d_log, cache) = upstream(&n, &x);
        let (dx, _) = n.backward(&cache, &d_obj, &d_log, false);
        let h = 1e-7;
        for i in 0..3 {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (scalar(&n, &xp) - scalar(&n, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() <= 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn heads_are_optional() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = Shape {
            inputs: 2,
            block_dim: 4,
            hidden: 8,
            blocks: 1,
            objectives: 2,
            constraints: 0,
        };
        let n = Network::new(shape, Activation::Softplus, &mut rng);
        assert_eq!(n.params.len(), 2 + 6 + 2 + 2);
        let out = n.forward::<ChaCha8Rng>(&Matrix::zeros(3, 2), None);
        assert_eq!((out.objectives.cols(), out.logits.cols()), (2, 0));
        let c_only = Network::new(
            Shape {
                objectives: 0,
                constraints: 3,
                ..shape
            },
            Activation::Softplus,
            &mut rng,
        );
        let out = c_only.forward::<ChaCha8Rng>(&Matrix::zeros(1, 2), None);
        assert_eq!((out.objectives.cols(), out.logits.cols()), (0, 3));
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let n = net(Activation::Softplus);
        let x = Matrix::from_vec(1, 3, vec![0.2, 0.4, 0.6]);
        let a = n.forward::<ChaCha8Rng>(&x, None).objectives;
        let b = n.forward::<ChaCha8Rng>(&x, None).objectives;
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = n
            .forward(
                &x,
                Some(Dropout {
                    p1: 0.5,
                    p2: 0.0,
                    rng: &mut rng,
                }),
            )
            .objectives;
        assert_ne!(a, c);
    }
}
