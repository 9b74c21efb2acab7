use crate::tensor::{Grads, ParamSet};

/// Adam with bias correction; one instance per network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        assert_eq!(params.params.len(), grads.0.len(), "gradient/parameter mismatch");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for ((p, g), (m, v)) in params
            .params
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        ps.add("w", vec![3], vec![1.0, -2.0, 0.5]);
        let mut opt = Adam::new(&ps, 0.01, 0.9, 0.999, 1e-8);
        let g = Grads(vec![vec![4.0, -0.5, 0.0]]);
        opt.step(&mut ps, &g);
        let d = &ps.params[0].data;
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 1.99).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn minimises_quadratic() {
        let mut ps = ParamSet::new();
        ps.add("w", vec![2], vec![3.0, -4.0]);
        let mut opt = Adam::new(&ps, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g = Grads(vec![ps.params[0].data.iter().map(|w| 2.0 * w).collect()]);
            opt.step(&mut ps, &g);
        }
        assert!(ps.params[0].data.iter().all(|w| w.abs() < 0.05));
    }
}
