//! Graph-recorded forward pass of a ReLU multilayer perceptron.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::AutodiffError;
use crate::params::MlpArch;

/// Runs `inputs` (`[batch, input_dim]`) through the MLP whose parameters are
/// the flat vector node `params`, starting `offset` entries into it.
pub fn forward_mlp(
    g: &mut Graph,
    params: Var,
    offset: usize,
    arch: &MlpArch,
    inputs: Var,
) -> Result<Var, AutodiffError> {
    let plen = g.value(params).len();
    if g.shape(params).len() != 1 || plen < offset + arch.param_count() {
        return Err(AutodiffError::Shape(format!(
            "parameter node {:?} too short for an architecture of {} values at offset {offset}",
            g.shape(params),
            arch.param_count()
        )));
    }
    let mut h = inputs;
    let layers = arch.layout();
    let last = layers.len() - 1;
    for (idx, (w_off, b_off, fan_in, fan_out)) in layers.into_iter().enumerate() {
        match g.value(h).dims2() {
            Some((_, c)) if c == fan_in => {}
            _ => {
                return Err(AutodiffError::Layer {
                    layer: idx,
                    detail: format!(
                        "expects [batch, {fan_in}] input, got {:?}",
                        g.shape(h)
                    ),
                })
            }
        }
        let w = g.slice(params, offset + w_off, &[fan_in, fan_out])?;
        h = g.matmul(h, w)?;
        if let Some(b) = b_off {
            let b = g.slice(params, offset + b, &[fan_out])?;
            h = g.add_row(h, b)?;
        }
        if idx != last {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Convenience wrapper: evaluate the MLP on plain values without keeping a
/// graph around.
pub fn forward_mlp_values(
    arch: &MlpArch,
    params: &[f64],
    inputs: &Tensor,
) -> Result<Tensor, AutodiffError> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::vector(params.to_vec()));
    let x = g.constant(inputs.clone());
    let y = forward_mlp(&mut g, p, 0, arch, x)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent straight-line forward pass.
    fn reference_forward(sizes: &[usize], p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let mut off = 0;
        for (li, w) in sizes.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            let mut next = vec![0.0; o];
            for (j, n) in next.iter_mut().enumerate() {
                let mut s = 0.0;
                for (k, a) in act.iter().enumerate() {
                    s += a * p[off + k * o + j];
                }
                *n = s + p[off + i * o + j];
            }
            off += i * o + o;
            if li + 2 < sizes.len() {
                for n in &mut next {
                    if *n < 0.0 {
                        *n = 0.0;
                    }
                }
            }
            act = next;
        }
        act
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let arch = MlpArch::relu_mlp(1, 40, 2, 1);
        let x = Tensor::matrix(3, 1, vec![-1.0, 0.5, 4.0]).unwrap();
        let y = forward_mlp_values(&arch, &vec![0.0; arch.param_count()], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn scalar_linear_model() {
        let arch = MlpArch::new(vec![1, 1], false).unwrap();
        let x = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let y = forward_mlp_values(&arch, &[0.5], &x).unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn matches_straight_line_oracle() {
        let arch = MlpArch::relu_mlp(1, 40, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let xs = [-4.2, -0.3, 0.0, 1.7, 4.9];
        let x = Tensor::matrix(5, 1, xs.to_vec()).unwrap();
        let y = forward_mlp_values(&arch, &p, &x).unwrap();
        for (row, &xi) in xs.iter().enumerate() {
            let want = reference_forward(&arch.sizes, &p, &[xi])[0];
            assert!((y.data()[row] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let arch = MlpArch::relu_mlp(4, 16, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Tensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = forward_mlp_values(&arch, &p, &x).unwrap();
        let b = forward_mlp_values(&arch, &p, &x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn wrong_input_width_names_the_layer() {
        let arch = MlpArch::relu_mlp(2, 4, 1, 1);
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let err = forward_mlp_values(&arch, &vec![0.0; arch.param_count()], &x).unwrap_err();
        assert!(matches!(err, AutodiffError::Layer { layer: 0, .. }));
    }
}
