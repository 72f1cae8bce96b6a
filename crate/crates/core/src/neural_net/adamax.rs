use ndarray::Zip;

use super::{Layer, MlpGradients, MlpParams};

/// Adamax hyperparameters. Defaults are the optimizer's canonical values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamaxConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First moments `m`, infinity-norm accumulators `u` and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamaxState {
    pub config: AdamaxConfig,
    m: MlpGradients,
    u: MlpGradients,
    t: u64,
}

impl AdamaxState {
    pub fn new(params: &MlpParams, config: AdamaxConfig) -> Self {
        AdamaxState {
            config,
            m: params.zero_gradients(),
            u: params.zero_gradients(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update:
    /// `m ← β1 m + (1−β1) g`, `u ← max(β2 u, |g|)`,
    /// `θ ← θ − α/(1−β1ᵗ) · m/(u+ε)`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &[Layer]) {
        self.t += 1;
        let AdamaxConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let step = learning_rate / (1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32));
        let update = |p: &mut f64, m: &mut f64, u: &mut f64, g: &f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *u = (beta2 * *u).max(g.abs());
            *p -= step * *m / (*u + eps);
        };
        for (((layer, m), u), g) in params
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.u)
            .zip(grads)
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut u.weight)
                .and(&g.weight)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut u.bias)
                .and(&g.bias)
                .for_each(update);
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    use super::*;
    use crate::neural_net::{flatten, MlpSpec};
    use crate::rng::stream_rng;

    fn scalar_net(w: f64) -> MlpParams {
        let spec = MlpSpec::new(1, 1, 1, 1).unwrap();
        let layers = vec![
            Layer {
                weight: array![[w]],
                bias: array![0.0],
            },
            Layer {
                weight: array![[0.0]],
                bias: array![0.0],
            },
        ];
        MlpParams::from_layers(spec, layers).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_net(0.4);
        let before = p.clone();
        let mut s = AdamaxState::new(&p, AdamaxConfig::default());
        let g = p.zero_gradients();
        s.step(&mut p, &g);
        assert_eq!(p, before);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_net(0.4);
        let mut s = AdamaxState::new(&p, AdamaxConfig::default());
        let mut g = p.zero_gradients();
        g[0].weight[[0, 0]] = 1.0;
        s.step(&mut p, &g);
        // m = 0.1, u = 1, step = 1e-3 / 0.1 * 0.1 / (1 + 1e-8)
        let want = 0.4 - 1e-3 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p.layers[0].weight[[0, 0]], want, epsilon = 1e-15);
    }

    #[test]
    fn equal_magnitude_gradients_equal_updates() {
        let mut p = scalar_net(0.0);
        let mut s = AdamaxState::new(&p, AdamaxConfig::default());
        let mut g = p.zero_gradients();
        g[0].weight[[0, 0]] = 0.7;
        g[1].weight[[0, 0]] = -0.7;
        s.step(&mut p, &g);
        assert_abs_diff_eq!(
            p.layers[0].weight[[0, 0]],
            -p.layers[1].weight[[0, 0]],
            epsilon = 1e-18
        );
    }

    #[test]
    fn step_magnitude_is_bounded() {
        let mut rng = stream_rng(8, 0);
        let spec = MlpSpec::new(2, 2, 4, 2).unwrap();
        let mut p = MlpParams::glorot(spec, &mut rng);
        let cfg = AdamaxConfig::default();
        let mut s = AdamaxState::new(&p, cfg);
        for t in 1..=200 {
            let mut g = p.zero_gradients();
            for l in &mut g {
                l.weight.mapv_inplace(|_| rng.random_range(-3.0..3.0));
                l.bias.mapv_inplace(|_| rng.random_range(-3.0..3.0));
            }
            let before = p.flatten();
            s.step(&mut p, &g);
            let bound = cfg.learning_rate / (1.0 - cfg.beta1.powi(t));
            for (a, b) in before.iter().zip(flatten(&p.layers)) {
                assert!((a - b).abs() <= bound * (1.0 + 1e-12));
            }
        }
    }
}
