use crate::error::Result;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, flat coordinate) where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tol
    }

    fn absorb(&mut self, err: f64, at: (usize, usize)) {
        self.coordinates += 1;
        if err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst = at;
        }
    }
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h` at every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pt: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = pt
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = point
        .iter()
        .map(|t| tape.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        tol,
    };
    let mut work = point.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; point[i].len()]);
        for j in 0..point[i].len() {
            let orig = point[i].values()[j];
            work[i].values_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].values_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].values_mut()[j] = orig;
            report.absorb(relative_error(analytic[j], (plus - minus) / (2.0 * h)), (i, j));
        }
    }
    Ok(report)
}

/// Gradient check over every entry of every parameter in `params`.
///
/// `loss` records a scalar on a fresh tape using the supplied parameters.
pub fn grad_check_params<F>(params: &mut ParamSet, loss: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss(&mut tape, params)?;
    let analytic = tape.backward(root)?.into_param_grads(params.len());

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let r = loss(&mut t, p)?;
        Ok(t.value(r).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        tol,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let zeros = vec![0.0; n];
        let a = analytic.0[id.index()].as_deref().unwrap_or(&zeros).to_vec();
        for j in 0..n {
            let orig = params.get(id).values()[j];
            params.get_mut(id).values_mut()[j] = orig + h;
            let plus = eval(params)?;
            params.get_mut(id).values_mut()[j] = orig - h;
            let minus = eval(params)?;
            params.get_mut(id).values_mut()[j] = orig;
            report.absorb(relative_error(a[j], (plus - minus) / (2.0 * h)), (id.index(), j));
        }
    }
    Ok(report)
}
