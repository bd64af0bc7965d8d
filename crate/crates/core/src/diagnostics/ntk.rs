use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::Result;
use crate::network::{HomogeneousNet, Params};

/// Gram matrix of the selected subgradients, K[i][j] = ⟨∂°f(θ,x_i), ∂°f(θ,x_j)⟩.
pub fn ntk_gram(net: &HomogeneousNet, theta: &Params, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let grads: Vec<Vec<f64>> = data
        .inputs()
        .par_iter()
        .map(|x| net.subgradient(theta, x).map(|g| g.flat()))
        .collect::<Result<_>>()?;
    let n = grads.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    Ok(k)
}
