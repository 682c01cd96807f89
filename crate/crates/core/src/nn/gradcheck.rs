//! Central finite-difference checks of reverse-mode gradients in f64.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::NetworkParams;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare parameter and input gradients of a scalar loss against central
/// differences. `build` constructs the loss from the given inputs; at most
/// `per_tensor` randomly chosen entries of each tensor are probed.
pub fn check<R: Rng>(
    params: &NetworkParams<f64>,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, NnError>,
    h: f64,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheck, NnError> {
    let eval = |p: &NetworkParams<f64>, xs: &[Tensor<f64>]| -> Result<f64, NnError> {
        let mut g = Graph::new(p);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input_with_grad(x.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let back = g.backward(loss)?;
    let pgrads = back.param_grads(&g);

    let mut out = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut record = |name: String, a: f64, n: f64| {
        let e = rel_err(a, n, 1e-6);
        out.checked += 1;
        if e > out.max_rel_err {
            out.max_rel_err = e;
            out.worst = format!("{name}: analytic {a:e} numeric {n:e}");
        }
    };
    let pick = |len: usize, rng: &mut R| -> Vec<usize> {
        if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
        }
    };

    let mut p = params.clone();
    for i in 0..params.len() {
        for j in pick(params.values[i].len(), rng) {
            let orig = p.values[i].data[j];
            p.values[i].data[j] = orig + h;
            let up = eval(&p, inputs)?;
            p.values[i].data[j] = orig - h;
            let down = eval(&p, inputs)?;
            p.values[i].data[j] = orig;
            let a = pgrads.0[i].as_ref().map(|t| t.data[j]).unwrap_or(0.0);
            record(format!("{}[{j}]", params.names[i]), a, (up - down) / (2.0 * h));
        }
    }
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        for j in pick(inputs[k].len(), rng) {
            let orig = xs[k].data[j];
            xs[k].data[j] = orig + h;
            let up = eval(params, &xs)?;
            xs[k].data[j] = orig - h;
            let down = eval(params, &xs)?;
            xs[k].data[j] = orig;
            let a = back.wrt(*v).map(|t| t.data[j]).unwrap_or(0.0);
            record(format!("input{k}[{j}]"), a, (up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Fixed random projection `Σ y ⊙ r`, turning any output into a scalar loss.
pub fn project(g: &mut Graph<'_, f64>, y: Var, r: &Tensor<f64>) -> Result<Var, NnError> {
    let rv = g.input(r.clone());
    let m = g.mul(y, rv)?;
    Ok(g.sum(m))
}
