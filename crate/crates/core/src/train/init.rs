use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

/// `(fan_in, fan_out)` of a `[out, in, k...]` weight.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::shape("xavier_init", format!("no fan-in/fan-out for {shape:?}")));
    }
    let receptive: usize = shape[2..].iter().product();
    Ok((shape[1] * receptive, shape[0] * receptive))
}

/// Xavier/Glorot uniform: `U(-b, b)` with `b = √(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    let (fin, fout) = fans(shape)?;
    let bound = (6.0 / (fin + fout) as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound))))
}

/// Xavier weights (rank ≥ 2) and zero biases, in registration order.
pub fn xavier_params<T: Element, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) {
    for t in store.values_mut() {
        *t = if t.rank() >= 2 {
            xavier_init(t.shape(), rng).expect("registered weights have fans")
        } else {
            Tensor::zeros(t.shape())
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_for_three_by_three() {
        // fan_in = fan_out = 3 → bound 1
        let t: Tensor<f64> = xavier_init(&[3, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert!(t.data().iter().any(|v| v.abs() > 0.5));
        assert_eq!(fans(&[8, 4, 3, 3]).unwrap(), (36, 72));
        assert!(fans(&[5]).is_err());
    }

    #[test]
    fn empirical_variance() {
        let (fin, fout) = (40usize, 60usize);
        let t: Tensor<f64> = xavier_init(&[fout, fin, 1, 1000], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / ((fin + fout) as f64 * 1000.0);
        assert!(t.len() >= 100_000);
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = xavier_init(&[4, 2, 3, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: Tensor<f32> = xavier_init(&[4, 2, 3, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
