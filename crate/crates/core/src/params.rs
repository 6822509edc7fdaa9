//! Flat parameter vectors and the architectures that interpret them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter vector has {got} values, architecture needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Arch(String),
}

/// Fully connected network `x W + b` per layer with ReLU between layers and
/// a linear output. Weights of a layer are stored row-major `[in, out]`
/// followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub sizes: Vec<usize>,
    pub bias: bool,
}

impl MlpArch {
    pub fn new(sizes: Vec<usize>, bias: bool) -> Result<Self, ParamError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(ParamError::Arch(format!("layer sizes {sizes:?}")));
        }
        Ok(Self { sizes, bias })
    }

    /// `input -> hidden x depth -> output` with biases.
    pub fn relu_mlp(input: usize, hidden: usize, depth: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self { sizes, bias: true }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` per layer.
    pub fn layout(&self) -> Vec<(usize, Option<usize>, usize, usize)> {
        let mut off = 0;
        let mut out = Vec::with_capacity(self.num_layers());
        for w in self.sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let w_off = off;
            off += i * o;
            let b_off = if self.bias {
                let b = off;
                off += o;
                Some(b)
            } else {
                None
            };
            out.push((w_off, b_off, i, o));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

/// Conditional neural process: an encoder over `(x, y)` pairs whose outputs
/// are mean-pooled into a representation `z`, and a decoder over `(z, x)`
/// emitting a predictive mean and log-variance per target dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnpArch {
    pub x_dim: usize,
    pub y_dim: usize,
    pub hidden: usize,
    pub repr: usize,
}

impl CnpArch {
    pub fn new(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x_dim,
            y_dim,
            hidden: 64,
            repr: 64,
        }
    }

    pub fn encoder(&self) -> MlpArch {
        MlpArch {
            sizes: vec![self.x_dim + self.y_dim, self.hidden, self.hidden, self.repr],
            bias: true,
        }
    }

    pub fn decoder(&self) -> MlpArch {
        MlpArch {
            sizes: vec![self.repr + self.x_dim, self.hidden, self.hidden, 2 * self.y_dim],
            bias: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder().param_count() + self.decoder().param_count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Mlp(MlpArch),
    Cnp(CnpArch),
}

impl Arch {
    pub fn param_count(&self) -> usize {
        match self {
            Arch::Mlp(a) => a.param_count(),
            Arch::Cnp(a) => a.param_count(),
        }
    }

    fn layers(&self) -> Vec<(usize, Option<usize>, usize, usize)> {
        match self {
            Arch::Mlp(a) => a.layout(),
            Arch::Cnp(a) => {
                let enc = a.encoder();
                let shift = enc.param_count();
                let mut l = enc.layout();
                l.extend(
                    a.decoder()
                        .layout()
                        .into_iter()
                        .map(|(w, b, i, o)| (w + shift, b.map(|b| b + shift), i, o)),
                );
                l
            }
        }
    }
}

/// Meta-parameters θ: a flat value array tied to its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    arch: Arch,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, arch: Arch) -> Result<Self, ParamError> {
        let expected = arch.param_count();
        if values.len() != expected {
            return Err(ParamError::Length {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { values, arch })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// Seeded initialization: every weight and bias of a layer is drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; arch.param_count()];
        for (w_off, b_off, fan_in, fan_out) in arch.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[w_off..w_off + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
            if let Some(b) = b_off {
                for v in &mut values[b..b + fan_out] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Self { values, arch }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ParamError> {
        Self::new(values, self.arch.clone())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
