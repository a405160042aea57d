use super::rng::SeededRng;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
    UniformXavier,
    Zeros,
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fresh parameter tensor. For a matrix `[out, in]`, `fan_in = in` and
/// `fan_out = out`; a vector is treated as `[len, 1]`.
pub fn init_params(shape: &[usize], scheme: Init, rng: &mut SeededRng) -> Tensor {
    match scheme {
        Init::Zeros => Tensor::zeros(shape),
        Init::UniformXavier => {
            let (fan_out, fan_in) = match shape {
                [n] => (*n, 1),
                [o, i, ..] => (*o, shape[1..].iter().product::<usize>().max(*i)),
                [] => (1, 1),
            };
            let b = xavier_bound(fan_in, fan_out);
            let mut t = Tensor::zeros(shape);
            for x in t.data_mut() {
                *x = rng.uniform_range(-b, b);
            }
            t
        }
    }
}
