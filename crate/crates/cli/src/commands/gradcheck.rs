use dictnet_core::model::model_cases;
use dictnet_core::numerics::gradcheck::{op_cases, run_case, DEFAULT_TOLERANCE};
use dictnet_core::numerics::GradCheckCase;

use crate::error::CliError;

pub struct GradCheckArgs {
    pub seed: u64,
    /// Case whose analytic gradient is deliberately broken.
    pub corrupt: Option<String>,
}

/// Adds a detached copy of half the output: the value changes with the
/// inputs but the tape sees a constant, so the analytic gradient is short.
fn corrupt(case: GradCheckCase) -> GradCheckCase {
    let GradCheckCase { name, store, forward } = case;
    GradCheckCase {
        name,
        store,
        forward: Box::new(move |tape, store| {
            let out = forward(tape, store)?;
            let shape = tape.shape(out).to_vec();
            let half: Vec<f64> = tape.value(out).iter().map(|v| 0.5 * v).collect();
            let c = tape.constant(shape, half);
            tape.add(out, c)
        }),
    }
}

pub fn run(args: &GradCheckArgs) -> Result<(), CliError> {
    let cases: Vec<(GradCheckCase, f64)> = op_cases(args.seed)
        .into_iter()
        .map(|c| (c, 1e-6))
        .chain(model_cases(args.seed).into_iter().map(|c| (c, 1e-5)))
        .collect();
    if let Some(name) = &args.corrupt {
        if !cases.iter().any(|(c, _)| &c.name == name) {
            return Err(CliError::Usage(format!("no gradient-check case named `{name}`")));
        }
    }
    let mut failed = Vec::new();
    let total = cases.len();
    for (case, eps) in cases {
        let case = if args.corrupt.as_deref() == Some(case.name.as_str()) {
            corrupt(case)
        } else {
            case
        };
        let r = run_case(&case, eps, args.seed, DEFAULT_TOLERANCE)?;
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} max rel err {:.3e}", r.name, r.max_rel_error);
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("{total} cases passed (tolerance {DEFAULT_TOLERANCE:e})");
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}
