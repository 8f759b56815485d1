//! The full model: propagation parameters, pooling parameters, and the
//! combined forward pass producing every loss term for one graph.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{ParameterSet, Tape, Var};
use crate::error::Result;
use crate::graph::Graph;
use crate::pooling::{hierarchical_pool, prediction_correction_loss, total_loss, PoolLayerVars, PoolingParams, PoolingTrace};
use crate::propagation::{expectation_loss, propagate_graph, PropagationOutput, PropagationParams, PropagationVars};
use crate::training::TrainingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub propagation: PropagationParams,
    pub pooling: PoolingParams,
}

impl ModelParams {
    /// Seeded initialization; the seed is `config.seed`.
    pub fn init(feature_dim: usize, num_classes: usize, config: &TrainingConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let propagation = PropagationParams::init(feature_dim, config.hidden, num_classes, &mut rng);
        let pooling = PoolingParams::init(config.hidden, config.num_pooling_layers, &mut rng);
        ModelParams { propagation, pooling }
    }

    /// Propagation arrays first, then pooling arrays layer by layer.
    pub fn to_set(&self) -> ParameterSet {
        let mut set = self.propagation.to_set();
        for (name, m) in self.pooling.to_set().iter() {
            set.push(name, m.clone());
        }
        set
    }

    pub fn from_set(set: &ParameterSet) -> Result<Self> {
        let layers = (0..).take_while(|l| set.get(&format!("pool.{l}.w")).is_some()).count();
        Ok(ModelParams {
            propagation: PropagationParams::from_set(set)?,
            pooling: PoolingParams::from_set(set, layers)?,
        })
    }
}

/// [`ModelParams`] registered on a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub propagation: PropagationVars,
    pub pooling: Vec<PoolLayerVars>,
}

impl ModelVars {
    /// Splits vars bound from [`ModelParams::to_set`].
    pub fn from_slice(vars: &[Var]) -> Self {
        ModelVars {
            propagation: PropagationVars::from_slice(&vars[..6]),
            pooling: vars[6..]
                .chunks(2)
                .map(|c| PoolLayerVars { w: c[0], a: c[1] })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub propagation: PropagationOutput,
    pub trace: PoolingTrace,
    pub l_exp: Var,
    pub l_precor: Var,
    pub l_tot: Var,
}

/// Propagation, pooling of the propagated features, and all loss terms.
pub fn forward(tape: &mut Tape, graph: &Graph, vars: &ModelVars, config: &TrainingConfig) -> Result<ForwardPass> {
    let propagation = propagate_graph(tape, graph, &vars.propagation, config.alpha, config.k)?;
    let l_exp = expectation_loss(tape, propagation.y_pred, graph.label())?;
    let trace = hierarchical_pool(tape, graph, propagation.z_pre, &vars.pooling, config.s_thre)?;
    let l_precor = prediction_correction_loss(tape, trace.z_cor, propagation.z_pre, &trace.composed_map, &trace.coarse_edges)?;
    let l_tot = total_loss(tape, l_exp, l_precor, config.gamma)?;
    Ok(ForwardPass {
        propagation,
        trace,
        l_exp,
        l_precor,
        l_tot,
    })
}
