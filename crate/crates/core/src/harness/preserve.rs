use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::FfnnParams;

/// `max |u_a(x) − u_b(x)|` over the rows of `grid`.
pub fn check_function_preservation(a: &FfnnParams, b: &FfnnParams, grid: &Tensor) -> Result<f64> {
    if a.layer_dims() != b.layer_dims() {
        return Err(Error::InvalidNetwork(format!(
            "architectures differ: {:?} vs {:?}",
            a.layer_dims(),
            b.layer_dims()
        )));
    }
    let ya = a.forward(grid)?;
    let yb = b.forward(grid)?;
    Ok(ya
        .data()
        .iter()
        .zip(yb.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}
