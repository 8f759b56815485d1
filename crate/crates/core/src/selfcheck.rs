//! Finite-difference verification of every tape primitive and of the full
//! total loss on a small fixed graph.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{CsrMatrix, FaultInjection, GradCheck, GradCheckReport, Matrix, ParameterSet, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, ModelParams, ModelVars};
use crate::pooling::SPREAD_CLAMP;
use crate::training::TrainingConfig;

/// Default tolerance on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Minimum distance of every edge score from the threshold, every relu
/// input from zero, and every clamped distance from the cap in
/// [`total_loss_fixture`].
const KINK_MARGIN: f64 = 5e-3;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub target: String,
    pub report: GradCheckReport,
}

/// Inputs in `[-2, 2]`, redrawn while closer than `margin` to any of `avoid`.
fn inputs<R: Rng>(rows: usize, cols: usize, avoid: &[f64], margin: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| loop {
            let v = rng.gen_range(-2.0..=2.0);
            if avoid.iter().all(|a| (v - a).abs() >= margin) {
                break v;
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized data")
}

/// `Σ out ⊙ R` with a fixed random `R`, so every output coordinate gets a
/// distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(Matrix::random_uniform(r, c, -1.0, 1.0, &mut rng));
    let prod = tape.hadamard(out, w)?;
    tape.sum(prod)
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn primitive_cases(seed: u64) -> Vec<(&'static str, ParameterSet, Builder)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = |items: Vec<(&str, Matrix)>| items.into_iter().map(|(n, m)| (n.to_string(), m)).collect::<ParameterSet>();
    let mut cases: Vec<(&'static str, ParameterSet, Builder)> = Vec::new();

    let a = inputs(4, 3, &[], 0.0, &mut rng);
    let b = inputs(3, 5, &[], 0.0, &mut rng);
    cases.push((
        "matmul",
        set(vec![("a", a), ("b", b)]),
        Box::new(move |t, v| {
            let o = t.matmul(v[0], v[1])?;
            weighted_sum(t, o, seed)
        }),
    ));

    let sparse = Arc::new(
        CsrMatrix::from_triplets(5, 4, &[(0, 0, 0.5), (0, 3, -1.0), (1, 1, 2.0), (3, 2, 0.25), (4, 0, 1.5), (4, 3, 0.75)])
            .expect("valid triplets"),
    );
    cases.push((
        "spmm",
        set(vec![("b", inputs(4, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.spmm(&sparse, v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    for name in ["add", "sub", "hadamard"] {
        let x = inputs(3, 4, &[], 0.0, &mut rng);
        let y = inputs(3, 4, &[], 0.0, &mut rng);
        cases.push((
            name,
            set(vec![("x", x), ("y", y)]),
            Box::new(move |t, v| {
                let o = match name {
                    "add" => t.add(v[0], v[1])?,
                    "sub" => t.sub(v[0], v[1])?,
                    _ => t.hadamard(v[0], v[1])?,
                };
                weighted_sum(t, o, seed)
            }),
        ));
    }

    cases.push((
        "add_row",
        set(vec![("x", inputs(4, 3, &[], 0.0, &mut rng)), ("bias", inputs(1, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.add_row(v[0], v[1])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "scale",
        set(vec![("x", inputs(3, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.scale(v[0], -0.7)?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "scale_rows",
        set(vec![("x", inputs(4, 3, &[], 0.0, &mut rng)), ("w", inputs(4, 1, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.scale_rows(v[0], v[1])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "concat_cols",
        set(vec![("x", inputs(3, 2, &[], 0.0, &mut rng)), ("y", inputs(3, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.concat_cols(v[0], v[1])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "sigmoid",
        set(vec![("x", inputs(4, 4, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.sigmoid(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "relu",
        set(vec![("x", inputs(4, 4, &[0.0], 0.1, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.relu(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "softmax_rows",
        set(vec![("x", inputs(4, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.softmax_rows(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "mean_rows",
        set(vec![("x", inputs(5, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.mean_rows(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "sum",
        set(vec![("x", inputs(3, 4, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.sum(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "sum_sq_rows",
        set(vec![("x", inputs(4, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.sum_sq_rows(v[0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "gather_rows",
        set(vec![("x", inputs(4, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.gather_rows(v[0], &[3, 0, 3, 1, 1])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "scatter_add_rows",
        set(vec![("x", inputs(5, 3, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.scatter_add_rows(v[0], &[2, 0, 2, 1, 0], 3)?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "cross_entropy_rows",
        set(vec![("logits", inputs(3, 4, &[], 0.0, &mut rng))]),
        Box::new(move |t, v| {
            let p = t.softmax_rows(v[0])?;
            let o = t.cross_entropy_rows(p, &[1, 3, 0])?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases.push((
        "clamp_max",
        set(vec![("x", inputs(4, 3, &[0.5], 0.1, &mut rng))]),
        Box::new(move |t, v| {
            let o = t.clamp_max(v[0], 0.5)?;
            weighted_sum(t, o, seed)
        }),
    ));

    cases
}

/// Names of the primitives covered by [`gradient_suite`].
pub fn primitive_names() -> Vec<&'static str> {
    primitive_cases(0).into_iter().map(|(n, _, _)| n).collect()
}

/// A 6-node graph, model parameters and config for which two pooling layers
/// apply and no edge score, relu input or clamped distance sits within a
/// small margin of its kink.
#[derive(Clone, Debug)]
pub struct TotalLossFixture {
    pub graph: Graph,
    pub params: ModelParams,
    pub config: TrainingConfig,
}

fn fixture_graph() -> Graph {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)];
    let mut features = Matrix::zeros(6, 3);
    for i in 0..6 {
        features[(i, i % 3)] = 1.0;
    }
    Graph::new(6, edges, features, 1).expect("valid fixture graph")
}

fn kink_distance(graph: &Graph, params: &ModelParams, config: &TrainingConfig) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let vars = ModelVars::from_slice(&params.to_set().bind(&mut tape));
    let pass = forward(&mut tape, graph, &vars, config)?;
    if pass.trace.depth() != config.num_pooling_layers {
        return Ok(None);
    }
    let mut margin = f64::INFINITY;
    for layer in &pass.trace.layers {
        for s in &layer.scores {
            margin = margin.min((s - config.s_thre).abs());
        }
    }
    let pre = graph.features().matmul(&params.propagation.w1)?;
    for v in pre.as_slice() {
        margin = margin.min(v.abs());
    }
    let z = tape.value(pass.trace.z_cor);
    for &(u, v) in &pass.trace.coarse_edges {
        let d: f64 = z.row(u).iter().zip(z.row(v)).map(|(a, b)| (a - b).powi(2)).sum();
        margin = margin.min((d - SPREAD_CLAMP).abs());
    }
    Ok(Some(margin))
}

/// Searches seeds and thresholds for a non-degenerate depth-2 setup.
pub fn total_loss_fixture() -> Result<TotalLossFixture> {
    let graph = fixture_graph();
    for seed in 0..200 {
        for step in 0..=40 {
            let config = TrainingConfig {
                hidden: 4,
                num_pooling_layers: 2,
                k: 10,
                alpha: 0.3,
                gamma: 0.2,
                s_thre: 0.3 + 0.01 * step as f64,
                seed,
                ..TrainingConfig::desk()
            };
            let params = ModelParams::init(graph.features().cols(), 2, &config);
            if let Some(m) = kink_distance(&graph, &params, &config)? {
                if m >= KINK_MARGIN {
                    return Ok(TotalLossFixture { graph, params, config });
                }
            }
        }
    }
    Err(Error::InvalidArgument("no non-degenerate pooling fixture found".into()))
}

/// Checks every primitive and the full total loss, all coordinates.
pub fn gradient_suite(eps: f64, fault: FaultInjection, seed: u64) -> Result<Vec<SuiteEntry>> {
    let check = GradCheck {
        sample_fraction: 1.0,
        ..GradCheck::new(eps).with_fault(fault).with_seed(seed)
    };
    let mut out = Vec::new();
    for (name, params, builder) in primitive_cases(seed) {
        let report = check.run(builder, &params)?;
        out.push(SuiteEntry {
            target: name.to_string(),
            report,
        });
    }
    let fx = total_loss_fixture()?;
    let report = check.run(
        |t, v| {
            let vars = ModelVars::from_slice(v);
            Ok(forward(t, &fx.graph, &vars, &fx.config)?.l_tot)
        },
        &fx.params.to_set(),
    )?;
    out.push(SuiteEntry {
        target: "total_loss".into(),
        report,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_reaches_depth_two() {
        let fx = total_loss_fixture().unwrap();
        assert_eq!(fx.graph.num_nodes(), 6);
        let m = kink_distance(&fx.graph, &fx.params, &fx.config).unwrap().unwrap();
        assert!(m >= KINK_MARGIN);
    }

    #[test]
    fn suite_passes_and_catches_fault() {
        let clean = gradient_suite(1e-6, FaultInjection::None, 0).unwrap();
        assert_eq!(clean.len(), primitive_names().len() + 1);
        for e in &clean {
            assert!(e.report.max_relative_error <= GRADCHECK_TOLERANCE, "{}: {:e}", e.target, e.report.max_relative_error);
        }
        let faulty = gradient_suite(1e-6, FaultInjection::SigmoidDerivative, 0).unwrap();
        let bad: Vec<_> = faulty
            .iter()
            .filter(|e| e.report.max_relative_error > GRADCHECK_TOLERANCE)
            .map(|e| e.target.as_str())
            .collect();
        assert!(bad.contains(&"sigmoid") && bad.contains(&"total_loss"), "{bad:?}");
    }
}
