use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{HomogeneousNet, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePoint {
    pub fraction: f64,
    pub train_accuracy: f64,
}

/// Zeros the ⌊fraction·n⌋ smallest-magnitude weights in every layer.
pub fn prune_layerwise(theta: &Params, fraction: f64) -> Result<Params> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("prune fraction {fraction} outside [0, 1)")));
    }
    let mut out = theta.clone();
    for layer in &mut out.layers {
        let n = layer.data.len();
        let cut = (fraction * n as f64).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| layer.data[a].abs().total_cmp(&layer.data[b].abs()));
        for &i in &order[..cut] {
            layer.data[i] = 0.0;
        }
    }
    Ok(out)
}

/// Sign accuracy after layerwise magnitude pruning at each fraction.
pub fn prune_eval(
    net: &HomogeneousNet,
    theta: &Params,
    data: &Dataset,
    fractions: &[f64],
) -> Result<Vec<PrunePoint>> {
    fractions
        .iter()
        .map(|&fraction| {
            let pruned = prune_layerwise(theta, fraction)?;
            Ok(PrunePoint {
                fraction,
                train_accuracy: net.accuracy(&pruned, data)?,
            })
        })
        .collect()
}
