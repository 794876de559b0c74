use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Worst coordinate of a central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

/// Relative errors use `max(|analytic|, |numeric|, 1e-6)` as denominator so
/// that coordinates with vanishing gradient compare absolutely.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v, &tape)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.numel() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.coords += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const STEP: f64 = 1e-6;
    const TOL: f64 = 1e-4;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.5..1.5))
    }

    /// Away from zero, for ops with kinks or poles there.
    fn rand_away(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| {
            let m = rng.random_range(0.3..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    /// Contracts an arbitrary-shaped output with fixed random weights.
    fn contract(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = tape.value(y);
        let w = Tensor::new(
            t.shape().to_vec(),
            (0..t.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let w = tape.constant(w);
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    fn check<F>(name: &str, params: Vec<Tensor>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let r = finite_diff_check(
            |t, v| {
                let y = f(t, v)?;
                contract(t, y, 99)
            },
            &params,
            STEP,
        )
        .unwrap();
        assert!(r.max_rel_err < TOL, "{name}: {r:?}");
    }

    #[test]
    fn cube_at_two() {
        let r = finite_diff_check(
            |t, v| {
                let sq = t.square(v[0]);
                t.mul(sq, v[0])
            },
            &[Tensor::scalar(2.0)],
            1e-5,
        )
        .unwrap();
        assert!((r.analytic - 12.0).abs() < 1e-12);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let r = finite_diff_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &[Tensor::row(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert_eq!((r.analytic, r.numeric), (0.0, 0.0));
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_t(&mut rng, 3, 4);
        let b = rand_t(&mut rng, 4, 2);
        let c = rand_t(&mut rng, 3, 4);
        let nz = rand_away(&mut rng, 3, 4);
        let row = rand_t(&mut rng, 1, 4);
        let s = Tensor::scalar(0.7);

        check("matmul", vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
        check("matmul_nt", vec![a.clone(), c.clone()], |t, v| t.matmul_nt(v[0], v[1]));
        check("transpose", vec![a.clone()], |t, v| Ok(t.transpose(v[0])));
        check("add", vec![a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
        check("sub", vec![a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]));
        check("mul", vec![a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
        check("div", vec![a.clone(), nz.clone()], |t, v| t.div(v[0], v[1]));
        check("add_row", vec![a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]));
        check("mul_scalar_var", vec![a.clone(), s.clone()], |t, v| {
            t.mul_scalar_var(v[0], v[1])
        });
        check("scale", vec![a.clone()], |t, v| Ok(t.scale(v[0], -1.3)));
        check("add_const", vec![a.clone()], |t, v| Ok(t.add_const(v[0], 2.0)));
        check("neg", vec![a.clone()], |t, v| Ok(t.neg(v[0])));
        check("abs", vec![nz.clone()], |t, v| Ok(t.abs(v[0])));
        check("relu", vec![nz.clone()], |t, v| Ok(t.relu(v[0])));
        check("tanh", vec![a.clone()], |t, v| Ok(t.tanh(v[0])));
        check("sin", vec![a.clone()], |t, v| Ok(t.sin(v[0], 3.0)));
        check("silu", vec![a.clone()], |t, v| Ok(t.silu(v[0])));
        check("square", vec![a.clone()], |t, v| Ok(t.square(v[0])));
        check("recip", vec![nz.clone()], |t, v| t.recip(v[0]));
        check("sum", vec![a.clone()], |t, v| Ok(t.sum(v[0])));
        check("mean", vec![a.clone()], |t, v| Ok(t.mean(v[0])));
        check("concat_cols", vec![a.clone(), b.transpose(), c.clone()], |t, v| {
            let bt = t.slice_rows(v[1], 0, 2)?;
            let bt = t.transpose(bt);
            let bt = t.slice_rows(bt, 0, 3)?;
            t.concat_cols(&[v[0], bt, v[2]])
        });
        check("slice_cols", vec![a.clone()], |t, v| t.slice_cols(v[0], 1, 2));
        check("slice_rows", vec![a.clone()], |t, v| t.slice_rows(v[0], 1, 2));
        check("reshape", vec![a.clone()], |t, v| t.reshape(v[0], 6, 2));
        check("gather_rows", vec![a.clone()], |t, v| {
            t.gather_rows(v[0], Rc::new(vec![2, 0, 2, 1]))
        });
        check("scatter_add_rows", vec![a.clone()], |t, v| {
            t.scatter_add_rows(v[0], Rc::new(vec![1, 1, 0]), 3)
        });
        check("row_outer", vec![a.clone(), c.clone()], |t, v| t.row_outer(v[0], v[1]));
        check("row_normalize", vec![a.clone()], |t, v| Ok(t.row_normalize(v[0])));
        check("layer_norm_rows", vec![a.clone()], |t, v| Ok(t.layer_norm_rows(v[0], 1e-5)));
        check("gather_patches", vec![a.clone()], |t, v| {
            let table = Rc::new(vec![Some(0), None, Some(2), Some(1), Some(1), None]);
            t.gather_patches(v[0], table, 3)
        });
        check("softmax_cross_entropy", vec![a.clone()], |t, v| {
            t.softmax_cross_entropy(v[0], Rc::new(vec![0, 3, 1]))
        });
    }
}
