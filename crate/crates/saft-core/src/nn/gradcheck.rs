//! Central finite-difference gradient checking for tape-built models.

use super::{ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;

/// Compare analytic adjoints against central differences for every element
/// of every parameter in the store. `build` must construct the forward pass
/// on the given tape and return the scalar loss node.
pub fn grad_check<F>(store: &mut ParamStore, mut build: F, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore, &mut Tape) -> Var,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(store, &mut tape);
    tape.backward(loss);
    tape.write_grads(store);

    let names = store.names();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut max_rel_err: f64 = 0.0;
    for name in names {
        let analytic = store.grad(&name).to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let orig = store.get(&name).data[i];

            store.get_mut(&name).data[i] = orig + FD_STEP;
            let mut t = Tape::new();
            let l = build(store, &mut t);
            let plus = t.scalar_value(l);

            store.get_mut(&name).data[i] = orig - FD_STEP;
            let mut t = Tape::new();
            let l = build(store, &mut t);
            let minus = t.scalar_value(l);

            store.get_mut(&name).data[i] = orig;

            let fd = (plus - minus) / (2.0 * FD_STEP);
            let denom = analytic[i].abs().max(fd.abs()).max(REL_FLOOR);
            let rel = (analytic[i] - fd).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
        if worst > max_rel_err {
            max_rel_err = worst;
        }
        per_tensor.push((name, worst));
    }
    GradCheckReport {
        per_tensor,
        max_rel_err,
        tolerance,
    }
}
