use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::zoo::{canonicalize_phases, FfnnParams, GroupKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanonicalForm {
    /// Sine phases only.
    Phase,
    /// Phases, then one representative per hidden-neuron scaling orbit:
    /// unit `‖(w_i, b_i)‖` for positive scaling, `b_i > 0` (or the first
    /// nonzero incoming weight positive) for sign flips.
    Scale,
}

/// Row norms this close to 1 count as already normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Canonical representative of `net`. Applying it twice gives the same
/// network as applying it once; the computed function is unchanged.
pub fn canonicalize(net: &FfnnParams, form: CanonicalForm) -> Result<FfnnParams> {
    let mut out = canonicalize_phases(net);
    if form == CanonicalForm::Phase {
        return Ok(out);
    }
    let n_layers = out.layers.len();
    for l in 0..n_layers.saturating_sub(1) {
        let group = out.layers[l].activation.group();
        let rows = out.layers[l].weight.rows();
        let cols = out.layers[l].weight.cols();
        for i in 0..rows {
            let layer = &out.layers[l];
            let w = layer.weight.row_slice(i);
            let q = match group {
                GroupKind::Positive => {
                    let n = (w.iter().map(|v| v * v).sum::<f64>() + layer.bias[i] * layer.bias[i]).sqrt();
                    // rows within storage rounding of unit norm are left
                    // alone so a second pass, also on reloaded f32 weights,
                    // is exact
                    if n == 0.0 || (n - 1.0).abs() <= UNIT_NORM_TOL {
                        1.0
                    } else {
                        1.0 / n
                    }
                }
                GroupKind::Sign => {
                    let lead = if layer.bias[i] != 0.0 {
                        layer.bias[i]
                    } else {
                        w.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0)
                    };
                    if lead < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                GroupKind::Trivial => 1.0,
            };
            if q == 1.0 {
                continue;
            }
            let layer = &mut out.layers[l];
            layer.weight.data_mut()[i * cols..(i + 1) * cols]
                .iter_mut()
                .for_each(|v| *v *= q);
            layer.bias[i] *= q;
            let next = &mut out.layers[l + 1].weight;
            let nc = next.cols();
            for r in 0..next.rows() {
                next.data_mut()[r * nc + i] /= q;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::harness::check_function_preservation;
    use crate::zoo::{apply_orbit, grid_coords, ActivationDescriptor, OrbitElement, ScaleSampler};

    fn net(act: ActivationDescriptor, seed: u64) -> FfnnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = [act, act, ActivationDescriptor::identity()];
        FfnnParams::random(&[2, 6, 5, 1], &acts, 1.0, &mut rng).unwrap()
    }

    fn acts() -> [(ActivationDescriptor, ScaleSampler); 3] {
        [
            (ActivationDescriptor::relu(), ScaleSampler::Positive { lambda: 1.0 }),
            (ActivationDescriptor::tanh(), ScaleSampler::Sign),
            (ActivationDescriptor::sine(3.0).unwrap(), ScaleSampler::Sign),
        ]
    }

    #[test]
    fn preserves_function_and_is_idempotent() {
        let grid = grid_coords(9, 9);
        for (act, _) in acts() {
            for seed in 0..5 {
                let n = net(act, seed);
                for form in [CanonicalForm::Phase, CanonicalForm::Scale] {
                    let c = canonicalize(&n, form).unwrap();
                    assert!(check_function_preservation(&n, &c, &grid).unwrap() < 1e-10);
                    assert_eq!(canonicalize(&c, form).unwrap(), c);
                }
            }
        }
    }

    #[test]
    fn scale_form_collapses_orbits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (act, sampler) in acts() {
            let n = net(act, 1);
            let c = canonicalize(&n, CanonicalForm::Scale).unwrap();
            for _ in 0..10 {
                let g = OrbitElement::sample(sampler, false, &n.layer_dims(), &mut rng).unwrap();
                let moved = canonicalize(&apply_orbit(&n, &g).unwrap(), CanonicalForm::Scale).unwrap();
                let d: f64 = c
                    .to_flat()
                    .iter()
                    .zip(moved.to_flat())
                    .fold(0.0, |m, (a, b)| m.max((a - b).abs()));
                assert!(d < 1e-9, "{act:?}: {d}");
            }
        }
    }

    #[test]
    fn sine_biases_end_up_in_half_open_interval() {
        let act = ActivationDescriptor::sine(3.0).unwrap();
        let c = canonicalize(&net(act, 4), CanonicalForm::Scale).unwrap();
        for l in &c.layers[..2] {
            for &b in &l.bias {
                assert!((0.0..=FRAC_PI_2).contains(&(3.0 * b)));
            }
        }
    }
}
