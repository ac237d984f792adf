use ndarray::{Array1, Array2, Zip};

use super::{lit, Gradients, Layer, Scalar};

/// Nadam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nadam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Nadam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers per layer plus the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState<T: Scalar> {
    pub step: u64,
    pub m_weights: Vec<Array2<T>>,
    pub v_weights: Vec<Array2<T>>,
    pub m_bias: Vec<Array1<T>>,
    pub v_bias: Vec<Array1<T>>,
}

impl<T: Scalar> NadamState<T> {
    pub fn for_layers(layers: &[Layer<T>]) -> Self {
        Self {
            step: 0,
            m_weights: layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            v_weights: layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            m_bias: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            v_bias: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// One update of every unfrozen layer.
    pub fn apply(&mut self, opt: &Nadam, layers: &mut [Layer<T>], grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = lit::<T>(opt.beta1);
        let b2 = lit::<T>(opt.beta2);
        let one = T::one();
        let c1 = lit::<T>(1.0 - opt.beta1.powi(t));
        let c2 = lit::<T>(1.0 - opt.beta2.powi(t));
        let lr = lit::<T>(opt.learning_rate);
        let eps = lit::<T>(opt.epsilon);
        let update = |p: &mut T, m: &mut T, v: &mut T, g: &T| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let nesterov = b1 * m_hat + (one - b1) * *g / c1;
            *p = *p - lr * nesterov / (v_hat.sqrt() + eps);
        };
        for (k, layer) in layers.iter_mut().enumerate() {
            if layer.frozen {
                continue;
            }
            if let Some(g) = &grads.weights[k] {
                Zip::from(&mut layer.weights)
                    .and(&mut self.m_weights[k])
                    .and(&mut self.v_weights[k])
                    .and(g)
                    .for_each(|p, m, v, g| update(p, m, v, g));
            }
            if let Some(g) = &grads.bias[k] {
                Zip::from(&mut layer.bias)
                    .and(&mut self.m_bias[k])
                    .and(&mut self.v_bias[k])
                    .and(g)
                    .for_each(|p, m, v, g| update(p, m, v, g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    fn single(w: f64) -> Vec<Layer<f64>> {
        vec![Layer {
            weights: array![[w]],
            bias: array![0.0],
            activation: Activation::Identity,
            frozen: false,
            dropout: false,
            offset: None,
        }]
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut layers = single(1.0);
        let mut state = NadamState::for_layers(&layers);
        let grads = Gradients {
            weights: vec![Some(array![[0.5]])],
            bias: vec![Some(array![0.0])],
        };
        let opt = Nadam::new(0.1);
        state.apply(&opt, &mut layers, &grads);
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25,
        // nesterov = 0.9 * 0.5 + 0.1 * 0.5 / 0.1 = 0.95, step = 0.1 * 0.95 / 0.5.
        let expected = 1.0 - 0.1 * 0.95 / (0.5 + 1e-8);
        assert!((layers[0].weights[[0, 0]] - expected).abs() < 1e-12);
        assert_eq!(layers[0].bias[0], 0.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn frozen_layers_stay_put() {
        let mut layers = single(1.0);
        layers[0].frozen = true;
        let mut state = NadamState::for_layers(&layers);
        let grads = Gradients {
            weights: vec![Some(array![[0.5]])],
            bias: vec![Some(array![1.0])],
        };
        state.apply(&Nadam::new(0.1), &mut layers, &grads);
        assert_eq!(layers[0].weights[[0, 0]], 1.0);
        assert_eq!(layers[0].bias[0], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut layers = single(3.0);
        let mut state = NadamState::for_layers(&layers);
        let opt = Nadam::new(0.05);
        for _ in 0..2000 {
            let w = layers[0].weights[[0, 0]];
            let grads = Gradients {
                weights: vec![Some(array![[2.0 * (w - 1.0)]])],
                bias: vec![Some(array![0.0])],
            };
            state.apply(&opt, &mut layers, &grads);
        }
        assert!((layers[0].weights[[0, 0]] - 1.0).abs() < 1e-3);
    }
}
