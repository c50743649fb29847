//! Orthogonal basis parameterized as a product of Householder reflectors.
//!
//! E = H(v_1) H(v_2) ... H(v_n) with H(v) = I - 2 v vᵀ / (vᵀv). The product
//! is orthogonal for any non-zero reflector vectors, so gradient steps on the
//! raw vectors can never break orthogonality.

use crate::linalg::{dot, Mat};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Householder {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Inputs seen by each reflector during an application, in application order.
pub struct ReflectCache {
    transpose: bool,
    stages: Vec<Vec<f64>>,
}

fn reflect(v: &[f64], x: &[f64]) -> Vec<f64> {
    let c = 2.0 * dot(v, x) / dot(v, v);
    x.iter().zip(v).map(|(xi, vi)| xi - c * vi).collect()
}

impl Householder {
    pub fn random(dim: usize, rng: &mut Rng) -> Self {
        let vectors = (0..dim)
            .map(|_| {
                loop {
                    let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
                    if dot(&v, &v) > 1e-6 {
                        break v;
                    }
                }
            })
            .collect();
        Householder { dim, vectors }
    }

    /// Reflector application order: E x applies v_n first, Eᵀ x applies v_1
    /// first (each H(v) is symmetric).
    fn order(&self, transpose: bool) -> Box<dyn Iterator<Item = usize>> {
        if transpose {
            Box::new(0..self.dim)
        } else {
            Box::new((0..self.dim).rev())
        }
    }

    pub fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let mut cur = x.to_vec();
        for i in self.order(transpose) {
            cur = reflect(&self.vectors[i], &cur);
        }
        cur
    }

    pub fn apply_cached(&self, x: &[f64], transpose: bool) -> (Vec<f64>, ReflectCache) {
        let mut cache = ReflectCache { transpose, stages: Vec::with_capacity(self.dim) };
        let mut cur = x.to_vec();
        for i in self.order(transpose) {
            cache.stages.push(cur.clone());
            cur = reflect(&self.vectors[i], &cur);
        }
        (cur, cache)
    }

    /// Backward through an application. Accumulates reflector-vector
    /// gradients into `v_grads` and returns the input gradient.
    pub fn backward(
        &self,
        cache: &ReflectCache,
        upstream: &[f64],
        v_grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let order: Vec<usize> = self.order(cache.transpose).collect();
        let mut delta = upstream.to_vec();
        for (stage, &vi) in order.iter().enumerate().rev() {
            let v = &self.vectors[vi];
            let x = &cache.stages[stage];
            let vv = dot(v, v);
            let vx = dot(v, x);
            let vg = dot(v, &delta);
            // y = x - 2 (v·x)/(v·v) v
            for (k, gv) in v_grads[vi].iter_mut().enumerate() {
                *gv += -2.0 / vv * (vg * x[k] + vx * delta[k] - 2.0 * vx * vg / vv * v[k]);
            }
            // input gradient is H(v) applied to delta
            delta = reflect(v, &delta);
        }
        delta
    }

    pub fn to_matrix(&self) -> Mat {
        let mut m = Mat::identity(self.dim);
        // columns are E e_j
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let mut e = vec![0.0; self.dim];
            e[j] = 1.0;
            cols.push(self.apply(&e, false));
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.set(i, j, cols[j][i]);
            }
        }
        m
    }

    pub fn param_count(&self) -> usize {
        self.dim * self.dim
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        for v in &self.vectors {
            out.extend_from_slice(v);
        }
    }

    pub fn load_params(&mut self, src: &[f64], offset: &mut usize) {
        for v in &mut self.vectors {
            v.copy_from_slice(&src[*offset..*offset + self.dim]);
            *offset += self.dim;
        }
    }

    pub fn apply_grads(&mut self, v_grads: &[Vec<f64>], lr: f64) {
        for (v, g) in self.vectors.iter_mut().zip(v_grads) {
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi -= lr * gi;
            }
        }
    }
}
