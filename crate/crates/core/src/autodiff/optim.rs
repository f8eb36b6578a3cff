use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// RMSProp without momentum:
/// `v <- decay*v + (1-decay)*g^2`, `p <- p - lr*g/(sqrt(v)+eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            decay: 0.99,
            eps: 1e-5,
        }
    }
}

impl RmsProp {
    /// Apply one update from the accumulated gradients, then zero them.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<T: Scalar>(&self, store: &mut ParameterStore<T>) -> Result<()> {
        for (name, p) in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let lr = T::from_f64_lossy(self.lr);
        let decay = T::from_f64_lossy(self.decay);
        let eps = T::from_f64_lossy(self.eps);
        let one_minus = T::one() - decay;
        for (_, p) in store.iter_mut() {
            let values = p.value.data_mut();
            for ((w, g), v) in values.iter_mut().zip(&mut p.grad).zip(&mut p.sq_avg) {
                *v = decay * *v + one_minus * *g * *g;
                *w -= lr * *g / (v.sqrt() + eps);
                *g = T::zero();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(p: f64, g: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::from_vec(vec![p])).unwrap();
        s.add_grad("p", &[g]).unwrap();
        s
    }

    #[test]
    fn hand_evaluated_update() {
        let mut s = single(1.0, 2.0);
        let opt = RmsProp {
            lr: 0.1,
            decay: 0.99,
            eps: 1e-8,
        };
        opt.step(&mut s).unwrap();
        let p = s.get("p").unwrap();
        assert!((p.sq_avg[0] - 0.04).abs() < 1e-15);
        let expected = 1.0 - 0.1 * 2.0 / (0.2 + 1e-8);
        assert!((p.value.item() - expected).abs() < 1e-15);
        assert!(p.value.item().abs() < 1e-6);
        assert_eq!(p.grad[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(3.5, 0.0);
        RmsProp::default().step(&mut s).unwrap();
        assert_eq!(s.value("p").unwrap().item(), 3.5);
    }

    #[test]
    fn repeated_identical_grads_shrink_update() {
        let mut s = single(0.0, 1.0);
        let opt = RmsProp::default();
        opt.step(&mut s).unwrap();
        let first = -s.value("p").unwrap().item();
        s.add_grad("p", &[1.0]).unwrap();
        opt.step(&mut s).unwrap();
        let second = -s.value("p").unwrap().item() - first;
        assert!(second < first, "{second} !< {first}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(0.0, f64::NAN);
        let err = RmsProp::default().step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(s.value("p").unwrap().item(), 0.0);
    }
}
