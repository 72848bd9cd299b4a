//! Residual MLP construction: the desk-scale stand-in for deep speech
//! encoders. Every linear weight matrix is prunable; biases, normalization
//! parameters and LayerScale diagonals are not.

use crate::error::{LabError, Result};
use crate::rng::Rng;
use crate::tape::{residual_block_forward, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Gelu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(LabError::Config(format!(
                "unknown activation '{other}' (expected tanh|relu|gelu)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    UniformScaled,
    NormalScaled,
}

impl InitScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform-scaled" => Ok(InitScheme::UniformScaled),
            "normal-scaled" => Ok(InitScheme::NormalScaled),
            other => Err(LabError::Config(format!(
                "unknown init scheme '{other}' (expected uniform-scaled|normal-scaled)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::UniformScaled => "uniform-scaled",
            InitScheme::NormalScaled => "normal-scaled",
        }
    }
}

/// Architecture description for [`Model::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub residual: bool,
    /// LayerScale diagonal init value; `None` disables LayerScale.
    pub layerscale: Option<f64>,
    pub normalization: bool,
    pub d_in: usize,
    pub d_out: usize,
    pub init: InitScheme,
    /// Weight init scale: bound (or std) is `init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    /// Bias init bound: biases start uniform in [-bias_init, bias_init].
    /// Zero keeps the conventional all-zero biases; the pathological fixture
    /// uses an offset so tanh units start partially saturated.
    pub bias_init: f64,
    /// Multiplier on `init_gain` for the output head only. A small head
    /// keeps the untrained model's output near zero, so the initial loss
    /// equals the constant-predictor baseline instead of being inflated by
    /// random-feature noise.
    pub head_gain: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(LabError::InvalidArgument(format!(
                "model dims must be positive: depth={} width={} d_in={} d_out={}",
                self.depth, self.width, self.d_in, self.d_out
            )));
        }
        if self.layerscale.is_some() && !self.residual {
            return Err(LabError::InvalidArgument(
                "layerscale requires residual blocks".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            depth: 4,
            width: 32,
            activation: Activation::Tanh,
            residual: true,
            layerscale: None,
            normalization: false,
            d_in: 16,
            d_out: 4,
            init: InitScheme::UniformScaled,
            init_gain: 1.0,
            bias_init: 0.0,
            head_gain: 1.0,
        }
    }
}

/// The canonical vanishing-gradient fixture: a deep, narrow, non-residual
/// tanh stack whose small uniform init shrinks the signal at every layer.
pub fn pathological_model_spec() -> ModelSpec {
    ModelSpec {
        depth: 16,
        width: 32,
        activation: Activation::Tanh,
        residual: false,
        layerscale: None,
        normalization: false,
        d_in: 16,
        d_out: 4,
        init: InitScheme::UniformScaled,
        init_gain: 1.0,
        bias_init: 0.0,
        head_gain: 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Linear weight matrix; the only role that ever carries a mask.
    PrunableWeight,
    Bias,
    NormGain,
    NormBias,
    LayerScale,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Param>,
}

const NORM_EPS: f64 = 1e-5;

impl Model {
    /// Build and initialize a model. All randomness comes from per-parameter
    /// streams derived from `seed`, so the init is independent of parameter
    /// iteration order.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let root = Rng::new(seed);
        let mut params = Vec::new();

        let weight = |params: &mut Vec<Param>, name: String, fan_in: usize, fan_out: usize| {
            let mut rng = root.derive(&name, 0);
            let gain = if name == "head.w" {
                spec.init_gain * spec.head_gain
            } else {
                spec.init_gain
            };
            let scale = gain / (fan_in as f64).sqrt();
            let value = match spec.init {
                InitScheme::UniformScaled => {
                    Tensor::uniform(&[fan_in, fan_out], -scale, scale, &mut rng)
                }
                InitScheme::NormalScaled => Tensor::normal(&[fan_in, fan_out], scale, &mut rng),
            };
            params.push(Param {
                name,
                role: ParamRole::PrunableWeight,
                value,
            });
        };

        let bias = |name: String, len: usize| -> Param {
            let value = if spec.bias_init == 0.0 {
                Tensor::zeros(&[len])
            } else {
                let mut rng = root.derive(&name, 0);
                Tensor::uniform(&[len], -spec.bias_init, spec.bias_init, &mut rng)
            };
            Param {
                name,
                role: ParamRole::Bias,
                value,
            }
        };

        weight(&mut params, "in_proj.w".into(), spec.d_in, spec.width);
        params.push(bias("in_proj.b".into(), spec.width));

        for b in 1..=spec.depth {
            let prefix = format!("block{b:02}");
            if spec.normalization {
                params.push(Param {
                    name: format!("{prefix}.norm.gain"),
                    role: ParamRole::NormGain,
                    value: Tensor::full(&[spec.width], 1.0),
                });
                params.push(Param {
                    name: format!("{prefix}.norm.bias"),
                    role: ParamRole::NormBias,
                    value: Tensor::zeros(&[spec.width]),
                });
            }
            weight(&mut params, format!("{prefix}.w1"), spec.width, spec.width);
            params.push(bias(format!("{prefix}.b1"), spec.width));
            weight(&mut params, format!("{prefix}.w2"), spec.width, spec.width);
            params.push(bias(format!("{prefix}.b2"), spec.width));
            if let Some(init) = spec.layerscale {
                params.push(Param {
                    name: format!("{prefix}.ls"),
                    role: ParamRole::LayerScale,
                    value: Tensor::full(&[spec.width], init),
                });
            }
        }

        weight(&mut params, "head.w".into(), spec.width, spec.d_out);
        params.push(bias("head.b".into(), spec.d_out));

        Ok(Model {
            spec: spec.clone(),
            params,
        })
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Indices of the prunable weight matrices, in layer order.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.role == ParamRole::PrunableWeight)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn prunable_param_count(&self) -> usize {
        self.prunable_indices()
            .iter()
            .map(|&i| self.params[i].value.len())
            .sum()
    }

    /// Current parameter values, cloned in order, as forward-pass leaves.
    pub fn leaf_values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Record the forward pass on `tape` using the supplied per-parameter
    /// leaf tensors (the trainer substitutes masked effective weights here).
    /// Returns the output node and the leaf node id of every parameter.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        leaf_values: &[Tensor],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        if leaf_values.len() != self.params.len() {
            return Err(LabError::InvalidArgument(format!(
                "expected {} leaf tensors, got {}",
                self.params.len(),
                leaf_values.len()
            )));
        }
        if x.shape().len() != 2 || x.cols() != self.spec.d_in {
            return Err(LabError::shape(
                "model_forward",
                format!("input {:?} vs d_in {}", x.shape(), self.spec.d_in),
            ));
        }
        let leaf_ids: Vec<NodeId> = leaf_values
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let id = |name: &str| -> NodeId {
            leaf_ids[self
                .param_index(name)
                .expect("parameter names fixed at build time")]
        };

        let x_id = tape.leaf(x.clone());
        let h = tape.matmul(x_id, id("in_proj.w"))?;
        let mut h = tape.add_bias(h, id("in_proj.b"))?;

        for b in 1..=self.spec.depth {
            let prefix = format!("block{b:02}");
            let branch_in = if self.spec.normalization {
                tape.layer_norm(
                    h,
                    id(&format!("{prefix}.norm.gain")),
                    id(&format!("{prefix}.norm.bias")),
                    NORM_EPS,
                )?
            } else {
                h
            };
            let branch = residual_block_forward(
                tape,
                branch_in,
                id(&format!("{prefix}.w1")),
                id(&format!("{prefix}.b1")),
                id(&format!("{prefix}.w2")),
                id(&format!("{prefix}.b2")),
                match self.spec.activation {
                    Activation::Tanh => |t: &mut Tape, n| t.tanh(n),
                    Activation::Relu => |t: &mut Tape, n| t.relu(n),
                    Activation::Gelu => |t: &mut Tape, n| t.gelu(n),
                },
                self.spec
                    .layerscale
                    .map(|_| id(&format!("{prefix}.ls"))),
                false,
            )?;
            // The residual add skips over the normalization, matching the
            // pre-norm layout.
            h = if self.spec.residual {
                tape.add(h, branch)?
            } else {
                branch
            };
        }

        let out = tape.matmul(h, id("head.w"))?;
        let out = tape.add_bias(out, id("head.b"))?;
        Ok((out, leaf_ids))
    }

    /// Plain inference with the model's own weights.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.leaf_values();
        let (out, _) = self.forward(&mut tape, x, &leaves)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathological_spec_is_fixed() {
        let a = pathological_model_spec();
        let b = pathological_model_spec();
        assert_eq!(a, b);
        assert_eq!(a.depth, 16);
        assert_eq!(a.width, 32);
        assert_eq!(a.activation, Activation::Tanh);
        assert!(!a.residual);
        assert!(!a.normalization);
        assert_eq!(a.init_gain, 1.0);
        assert_eq!(a.init, InitScheme::UniformScaled);
    }

    #[test]
    fn build_masks_only_linear_weights() {
        let spec = ModelSpec {
            depth: 3,
            width: 8,
            normalization: true,
            layerscale: Some(1e-4),
            residual: true,
            ..ModelSpec::default()
        };
        let model = Model::build(&spec, 1).unwrap();
        for p in &model.params {
            let is_weight = p.value.shape().len() == 2;
            assert_eq!(
                p.role == ParamRole::PrunableWeight,
                is_weight,
                "role mismatch for {}",
                p.name
            );
        }
        // in_proj + 2 per block + head
        assert_eq!(model.prunable_indices().len(), 2 + 2 * 3);
        let expected: usize = spec.d_in * spec.width
            + 3 * 2 * spec.width * spec.width
            + spec.width * spec.d_out;
        assert_eq!(model.prunable_param_count(), expected);
    }

    #[test]
    fn layerscale_params_present_and_unmasked() {
        let spec = ModelSpec {
            depth: 2,
            layerscale: Some(1e-4),
            residual: true,
            ..ModelSpec::default()
        };
        let model = Model::build(&spec, 3).unwrap();
        let ls: Vec<&Param> = model
            .params
            .iter()
            .filter(|p| p.role == ParamRole::LayerScale)
            .collect();
        assert_eq!(ls.len(), 2);
        for p in ls {
            assert_eq!(p.value.len(), spec.width);
            assert!(p.value.data().iter().all(|&v| v == 1e-4));
        }
    }

    #[test]
    fn layerscale_without_residual_rejected() {
        let spec = ModelSpec {
            residual: false,
            layerscale: Some(1e-4),
            ..ModelSpec::default()
        };
        assert!(Model::build(&spec, 0).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ModelSpec::default();
        let a = Model::build(&spec, 77).unwrap();
        let b = Model::build(&spec, 77).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value, pb.value, "{} differs", pa.name);
        }
        let c = Model::build(&spec, 78).unwrap();
        assert_ne!(a.params[0].value, c.params[0].value);
    }

    #[test]
    fn zero_layerscale_makes_blocks_identity() {
        let spec = ModelSpec {
            depth: 3,
            width: 6,
            d_in: 6,
            d_out: 6,
            residual: true,
            layerscale: Some(0.0),
            ..ModelSpec::default()
        };
        let mut model = Model::build(&spec, 5).unwrap();
        // Make the projections identity so the trunk passes x through.
        let w = model.param_index("in_proj.w").unwrap();
        let mut eye = Tensor::zeros(&[6, 6]);
        for i in 0..6 {
            eye.data_mut()[i * 6 + i] = 1.0;
        }
        model.params[w].value = eye.clone();
        let h = model.param_index("head.w").unwrap();
        model.params[h].value = eye;

        let mut rng = Rng::new(2);
        let x = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let y = model.eval(&x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(a, b, "zero layerscale must annihilate the branch");
        }
    }

    #[test]
    fn eval_finite_on_pathological_model() {
        let model = Model::build(&pathological_model_spec(), 9).unwrap();
        let mut rng = Rng::new(4);
        let x = Tensor::normal(&[8, 16], 1.0, &mut rng);
        let y = model.eval(&x).unwrap();
        assert!(y.is_finite());
        assert_eq!(y.shape(), &[8, 4]);
    }
}
