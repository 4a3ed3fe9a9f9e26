//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below `REL_FLOOR · max(1, |f|)` are compared as if they
/// were that large. Central differences carry rounding noise proportional to
/// `|f| · ε / h`, so coordinates whose true gradient is zero are judged by an
/// absolute error at that resolution.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64, value: f64) -> f64 {
    let floor = REL_FLOOR * value.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares the tape gradient of a scalar function of several tensors with
/// central differences, coordinate by coordinate.
pub fn grad_check_many<F>(f: F, points: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = pts
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let value = scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut work = points.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(points[ti].shape()));
        for ci in 0..points[ti].len() {
            let x = points[ti].data()[ci];
            work[ti].data_mut()[ci] = x + FD_STEP;
            let up = eval(&work)?;
            work[ti].data_mut()[ci] = x - FD_STEP;
            let down = eval(&work)?;
            work[ti].data_mut()[ci] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[ci], numeric, value);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ci);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Single-input convenience wrapper; returns the maximum relative error.
pub fn grad_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(point)).map(|r| r.max_rel_error)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::shape("grad_check", "function must return a scalar"));
    }
    Ok(t.data()[0])
}
