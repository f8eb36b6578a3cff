//! Central finite-difference oracle for autodiff gradients.

use super::graph::{Graph, Var};
use super::layers::Params;
use super::params::ParameterStore;
use crate::error::Result;
use crate::scalar::Scalar;

/// Denominator floor for the relative error. Below it the comparison is
/// effectively absolute, which keeps round-off in near-zero gradients
/// (about `1e-16 * |f| / step`) from reading as a large relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare the autodiff gradient of the scalar `f` with central differences
/// for every element of every parameter in `store`. Returns the worst
/// relative error, or infinity when `f` is non-finite anywhere along the way.
pub fn finite_difference_check<T, F>(store: &ParameterStore<T>, step: f64, f: F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Params<'_, T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, Params::live(store))?;
    if !g.value(root).is_finite() {
        return Ok(f64::INFINITY);
    }
    g.backward(root)?;
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, p) in store.iter() {
        let mut gvec = vec![0.0; p.value.numel()];
        if let Some((_, v)) = g.trainable_params().find(|(n, _)| *n == name) {
            if let Some(gr) = g.grad(v) {
                gvec = gr.iter().map(|x| x.to_f64_lossy()).collect();
            }
        }
        grads.push((name.to_string(), gvec));
    }

    let eval = |s: &ParameterStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let root = f(&mut g, Params::frozen(s))?;
        Ok(g.value(root).item().to_f64_lossy())
    };

    let mut probe = ParameterStore::<T>::clone(store);
    let mut worst = 0.0f64;
    for (name, gvec) in &grads {
        for (i, &a) in gvec.iter().enumerate() {
            let orig = probe.value(name)?.data()[i];
            let h = T::from_f64_lossy(step);
            probe.value_mut(name)?.data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Mlp, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_polynomial() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("p", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let y = g.square(p);
        g.backward(y).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[6.0]);
        let err = finite_difference_check(&store, 1e-5, |g, params| {
            let p = params.bind(g, "p")?;
            Ok(g.square(p))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("p", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let err = finite_difference_check(&store, 1e-5, |g, params| {
            let p = params.bind(g, "p")?;
            let z = g.scale(p, 0.0);
            let c = g.add_scalar(z, 4.0);
            Ok(g.sum(c))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn two_layer_elu_mlp() {
        // 2 -> 2 -> 1 with biases: 6 + 3 = 9 parameters, plus a scale param.
        let mlp = Mlp::new("m", &[2, 2, 1], Activation::Elu);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::<f64>::new();
        mlp.init(&mut store, &mut rng).unwrap();
        store.insert_uniform("scale", &[1], 1.0, &mut rng).unwrap();
        let x = Tensor::from_f64(vec![3, 2], &[0.4, -1.2, 2.0, 0.3, -0.5, -0.9]).unwrap();
        let err = finite_difference_check(&store, 1e-5, |g, params| {
            let xin = g.constant(x.clone());
            let y = mlp.forward(g, params, xin)?;
            let s = params.bind(g, "scale")?;
            let y = g.mul(y, s)?;
            let y = g.square(y);
            Ok(g.mean(y))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn non_finite_function_reports_infinity() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("p", Tensor::scalar(f64::NAN)).unwrap();
        let err = finite_difference_check(&store, 1e-5, |g, params| {
            let p = params.bind(g, "p")?;
            Ok(g.square(p))
        })
        .unwrap();
        assert!(err.is_infinite());
    }
}
