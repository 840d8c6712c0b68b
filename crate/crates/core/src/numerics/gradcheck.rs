//! Central-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this in both routes are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Forward function under test. Inputs are bound from the store with
/// [`Tape::param`]; the output may have any shape.
pub type Forward = dyn Fn(&mut Tape, &ParamStore) -> Result<Var> + Send + Sync;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`, maximised over coordinates.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::uniform(&[len], 1.0, &mut rng).into_data()
}

/// Reduces a non-scalar output to a scalar by a fixed random projection so
/// that every output coordinate contributes to the checked gradient.
fn reduce(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let n = tape.value(out).len();
    if tape.shape(out).is_empty() {
        return Ok(out);
    }
    let w = projection(n, seed);
    let weighted = tape.mul_const(out, w)?;
    Ok(tape.sum(weighted))
}

fn loss_value(f: &Forward, store: &ParamStore, seed: u64) -> Result<f64> {
    let mut tape = Tape::inference();
    let out = f(&mut tape, store)?;
    let loss = reduce(&mut tape, out, seed)?;
    Ok(tape.item(loss))
}

/// Compares analytic gradients for every scalar of every tensor in `store`
/// against central differences, returning the worst relative error.
pub fn grad_check_store(f: &Forward, store: &ParamStore, eps: f64, seed: u64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid("grad_check", format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let loss = reduce(&mut tape, out, seed)?;
    let grads = tape.backward(loss)?;
    let analytic = tape.param_grads(&grads);

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.tensor(id).len();
        let a = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.tensor(id).data()[j];
            probe.tensor_mut(id).data_mut()[j] = orig + eps;
            let plus = loss_value(f, &probe, seed)?;
            probe.tensor_mut(id).data_mut()[j] = orig - eps;
            let minus = loss_value(f, &probe, seed)?;
            probe.tensor_mut(id).data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        worst = worst.max(max_rel_error(&a, &numeric));
    }
    Ok(worst)
}

/// Seeded random inputs `U(-1, 1)` registered as `in0, in1, ...`.
pub fn random_inputs(shapes: &[Vec<usize>], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        store
            .register(format!("in{i}"), Tensor::uniform(s, 1.0, &mut rng))
            .expect("unique names");
    }
    store
}

/// Checks an op on seeded random inputs of the given shapes.
pub fn grad_check<F>(op: F, shapes: &[Vec<usize>], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    let store = random_inputs(shapes, seed);
    let forward = move |tape: &mut Tape, store: &ParamStore| {
        let vars: Vec<Var> = store.ids().map(|id| tape.param(store, id)).collect();
        op(tape, &vars)
    };
    grad_check_store(&forward, &store, eps, seed)
}

/// One named entry of a gradient-check suite.
pub struct GradCheckCase {
    pub name: String,
    pub store: ParamStore,
    pub forward: Box<Forward>,
}

impl GradCheckCase {
    pub fn op<F>(name: &str, shapes: &[Vec<usize>], seed: u64, op: F) -> Self
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static,
    {
        GradCheckCase {
            name: name.to_string(),
            store: random_inputs(shapes, seed),
            forward: Box::new(move |tape: &mut Tape, store: &ParamStore| {
                let vars: Vec<Var> = store.ids().map(|id| tape.param(store, id)).collect();
                op(tape, &vars)
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn run_case(case: &GradCheckCase, eps: f64, seed: u64, tolerance: f64) -> Result<CaseReport> {
    let err = grad_check_store(case.forward.as_ref(), &case.store, eps, seed)?;
    Ok(CaseReport {
        name: case.name.clone(),
        max_rel_error: err,
        passed: err < tolerance,
    })
}

/// Checks every primitive differentiable op on small seeded inputs.
pub fn op_cases(seed: u64) -> Vec<GradCheckCase> {
    let s = seed;
    vec![
        GradCheckCase::op("matmul", &[vec![3, 4], vec![4, 2]], s, |t, v| t.matmul(v[0], v[1])),
        GradCheckCase::op("matmul_bt", &[vec![3, 4], vec![5, 4]], s, |t, v| {
            t.matmul_bt(v[0], v[1])
        }),
        GradCheckCase::op("add", &[vec![2, 3], vec![2, 3]], s, |t, v| t.add(v[0], v[1])),
        GradCheckCase::op("sub", &[vec![2, 3], vec![2, 3]], s, |t, v| t.sub(v[0], v[1])),
        GradCheckCase::op("mul", &[vec![2, 3], vec![2, 3]], s, |t, v| t.mul(v[0], v[1])),
        GradCheckCase::op("add_bias", &[vec![3, 4], vec![4]], s, |t, v| t.add_bias(v[0], v[1])),
        GradCheckCase::op("scale", &[vec![2, 2]], s, |t, v| Ok(t.scale(v[0], -1.7))),
        GradCheckCase::op("dropout_train_mask", &[vec![2, 5]], s, |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            t.dropout(v[0], 0.4, Some(&mut rng))
        }),
        GradCheckCase::op("dropout_eval", &[vec![2, 5]], s, |t, v| {
            t.dropout::<ChaCha8Rng>(v[0], 0.4, None)
        }),
        GradCheckCase::op("relu", &[vec![3, 4]], s, |t, v| Ok(t.relu(v[0]))),
        GradCheckCase::op("transpose", &[vec![2, 3]], s, |t, v| t.transpose(v[0])),
        GradCheckCase::op("slice_cols", &[vec![3, 6]], s, |t, v| t.slice_cols(v[0], 2, 3)),
        GradCheckCase::op("concat_cols", &[vec![2, 3], vec![2, 1]], s, |t, v| {
            t.concat_cols(&[v[0], v[1]])
        }),
        GradCheckCase::op("concat_rows", &[vec![1, 3], vec![2, 3]], s, |t, v| {
            t.concat_rows(&[v[0], v[1]])
        }),
        GradCheckCase::op("gather", &[vec![5, 3]], s, |t, v| t.gather(v[0], &[4, 0, 4, 2])),
        GradCheckCase::op("softmax_axis0", &[vec![3, 4]], s, |t, v| t.softmax(v[0], 0)),
        GradCheckCase::op("softmax_axis1", &[vec![3, 4]], s, |t, v| t.softmax(v[0], 1)),
        GradCheckCase::op("softmax_masked", &[vec![3, 3]], s, |t, v| {
            let mask = [true, false, false, true, true, false, true, true, true];
            t.softmax_masked(v[0], 1, Some(&mask))
        }),
        GradCheckCase::op("layer_norm", &[vec![3, 5], vec![5], vec![5]], s, |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5)
        }),
        GradCheckCase::op("masked_mean_rows", &[vec![4, 3]], s, |t, v| {
            t.masked_mean_rows(v[0], &[true, false, true, true])
        }),
        GradCheckCase::op("sum", &[vec![2, 3]], s, |t, v| Ok(t.sum(v[0]))),
        GradCheckCase::op("mse_loss", &[vec![2, 3], vec![2, 3]], s, |t, v| t.mse(v[0], v[1])),
        GradCheckCase::op("cross_entropy", &[vec![4, 6]], s, |t, v| {
            t.cross_entropy(v[0], &[3, 0, 5, 0], 0)
        }),
        GradCheckCase::op("linear_layer", &[vec![3, 4], vec![4, 5], vec![5]], s, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            t.add_bias(h, v[2])
        }),
        GradCheckCase::op("matmul_softmax_cross_entropy", &[vec![4, 3], vec![3, 5]], s, |t, v| {
            let logits = t.matmul(v[0], v[1])?;
            let p = t.softmax(logits, 1)?;
            t.cross_entropy(p, &[1, 4, 0, 2], 99)
        }),
    ]
}
