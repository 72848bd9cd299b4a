//! Run configuration files: flat `dotted.key = value` lines, UTF-8, `#`
//! comments. Every key has a documented default; unknown keys are rejected
//! by name so typos never pass silently. The resolved config (defaults plus
//! overrides plus the effective seed) serializes back to the same format and
//! reproduces the run exactly when fed back in.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{LabError, Result};
use crate::mask::MsrsHyper;
use crate::model::{Activation, InitScheme, ModelSpec};
use crate::optim::{OptKind, OptimizerConfig};
use crate::sparse::{Method, PruneScope, SparseMethodConfig};
use crate::tasks::{TargetKind, TeacherSpec};
use crate::train::{ExperimentConfig, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunFileConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub layerscale_on: bool,
    pub layerscale_init: f64,
    pub task_kind: String,
    pub task_seed: u64,
    pub task_n: usize,
    pub task_noise: f64,
    pub teacher_depth: usize,
    pub teacher_width: usize,
    pub teacher_gain: f64,
    pub task_path: String,
    pub task_target: TargetKind,
    pub task_skip_header: bool,
    pub method: SparseMethodConfig,
    pub msrs: MsrsHyper,
    pub optim: OptimizerConfig,
    pub log_interval: usize,
}

impl Default for RunFileConfig {
    fn default() -> Self {
        RunFileConfig {
            seed: 0,
            model: ModelSpec::default(),
            layerscale_on: false,
            layerscale_init: 1e-4,
            task_kind: "teacher".into(),
            task_seed: 7,
            task_n: 256,
            task_noise: 0.0,
            teacher_depth: 2,
            teacher_width: 16,
            teacher_gain: TeacherSpec::default().gain,
            task_path: String::new(),
            task_target: TargetKind::Regression,
            task_skip_header: false,
            method: SparseMethodConfig::default(),
            msrs: MsrsHyper::default(),
            optim: OptimizerConfig::default(),
            log_interval: 10,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(LabError::Config(format!(
            "key '{key}': expected true|false, got '{other}'"
        ))),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| LabError::Config(format!("key '{key}': expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| LabError::Config(format!("key '{key}': expected an integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| LabError::Config(format!("key '{key}': expected an integer, got '{v}'")))
}

impl RunFileConfig {
    /// Parse config text over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<RunFileConfig> {
        let mut cfg = RunFileConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(LabError::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply one key. Used by the parser and by CLI overrides.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_u64(key, v)?,
            "model.depth" => self.model.depth = parse_usize(key, v)?,
            "model.width" => self.model.width = parse_usize(key, v)?,
            "model.activation" => self.model.activation = Activation::parse(v)?,
            "model.residual" => self.model.residual = parse_bool(key, v)?,
            "model.layerscale" => self.layerscale_on = parse_bool(key, v)?,
            "model.layerscale_init" => self.layerscale_init = parse_f64(key, v)?,
            "model.normalization" => self.model.normalization = parse_bool(key, v)?,
            "model.d_in" => self.model.d_in = parse_usize(key, v)?,
            "model.d_out" => self.model.d_out = parse_usize(key, v)?,
            "model.init" => self.model.init = InitScheme::parse(v)?,
            "model.init_gain" => self.model.init_gain = parse_f64(key, v)?,
            "model.bias_init" => self.model.bias_init = parse_f64(key, v)?,
            "model.head_gain" => self.model.head_gain = parse_f64(key, v)?,
            "task.kind" => match v {
                "teacher" | "spirals" | "csv" => self.task_kind = v.to_string(),
                other => {
                    return Err(LabError::Config(format!(
                        "key 'task.kind': expected teacher|spirals|csv, got '{other}'"
                    )))
                }
            },
            "task.seed" => self.task_seed = parse_u64(key, v)?,
            "task.n" => self.task_n = parse_usize(key, v)?,
            "task.noise" => self.task_noise = parse_f64(key, v)?,
            "task.teacher_depth" => self.teacher_depth = parse_usize(key, v)?,
            "task.teacher_width" => self.teacher_width = parse_usize(key, v)?,
            "task.teacher_gain" => self.teacher_gain = parse_f64(key, v)?,
            "task.path" => self.task_path = v.to_string(),
            "task.target" => {
                self.task_target = match v {
                    "regression" => TargetKind::Regression,
                    "classification" => TargetKind::Classification,
                    other => {
                        return Err(LabError::Config(format!(
                            "key 'task.target': expected regression|classification, got '{other}'"
                        )))
                    }
                }
            }
            "task.skip_header" => self.task_skip_header = parse_bool(key, v)?,
            "method.name" => self.method.method = Method::parse(v)?,
            "method.target_sparsity" => self.method.target_sparsity = parse_f64(key, v)?,
            "method.prune_grow_fraction" => {
                self.method.prune_grow_fraction = parse_f64(key, v)?
            }
            "method.update_interval" => self.method.update_interval = parse_usize(key, v)?,
            "method.zeta_decay" => self.method.zeta_decay = parse_bool(key, v)?,
            "method.scope" => self.method.scope = PruneScope::parse(v)?,
            "method.dense_after" => self.method.dense_after = parse_bool(key, v)?,
            "msrs.mu" => self.msrs.mu = parse_f64(key, v)?,
            "msrs.rho" => self.msrs.rho = parse_f64(key, v)?,
            "msrs.varsigma" => self.msrs.varsigma = parse_f64(key, v)?,
            "msrs.lambda" => self.msrs.lambda = parse_f64(key, v)?,
            "msrs.epsilon" => self.msrs.epsilon = parse_f64(key, v)?,
            "msrs.l_fwd" => self.msrs.l_fwd = parse_f64(key, v)?,
            "msrs.l_bwd" => self.msrs.l_bwd = parse_f64(key, v)?,
            "msrs.max_joint_epochs" => self.msrs.max_joint_epochs = parse_usize(key, v)?,
            "optim.optimizer" => self.optim.optimizer = OptKind::parse(v)?,
            "optim.beta1" => self.optim.beta1 = parse_f64(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse_f64(key, v)?,
            "optim.eps" => self.optim.eps = parse_f64(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_f64(key, v)?,
            "optim.peak_lr_theta" => self.optim.peak_lr_theta = parse_f64(key, v)?,
            "optim.peak_lr_phi" => self.optim.peak_lr_phi = parse_f64(key, v)?,
            "optim.clip_norm" => self.optim.clip_norm = parse_f64(key, v)?,
            "optim.warmup_epochs" => self.optim.warmup_epochs = parse_usize(key, v)?,
            "optim.total_epochs" => self.optim.total_epochs = parse_usize(key, v)?,
            "optim.batch_size" => self.optim.batch_size = parse_usize(key, v)?,
            "log.interval" => self.log_interval = parse_usize(key, v)?,
            other => {
                return Err(LabError::Config(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// The full key -> value map of this config (for snapshots and the
    /// defaults listing). Keys are sorted.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("model.depth", self.model.depth.to_string());
        put("model.width", self.model.width.to_string());
        put("model.activation", self.model.activation.name().into());
        put("model.residual", self.model.residual.to_string());
        put("model.layerscale", self.layerscale_on.to_string());
        put("model.layerscale_init", self.layerscale_init.to_string());
        put("model.normalization", self.model.normalization.to_string());
        put("model.d_in", self.model.d_in.to_string());
        put("model.d_out", self.model.d_out.to_string());
        put("model.init", self.model.init.name().into());
        put("model.init_gain", self.model.init_gain.to_string());
        put("model.bias_init", self.model.bias_init.to_string());
        put("model.head_gain", self.model.head_gain.to_string());
        put("task.kind", self.task_kind.clone());
        put("task.seed", self.task_seed.to_string());
        put("task.n", self.task_n.to_string());
        put("task.noise", self.task_noise.to_string());
        put("task.teacher_depth", self.teacher_depth.to_string());
        put("task.teacher_width", self.teacher_width.to_string());
        put("task.teacher_gain", self.teacher_gain.to_string());
        put("task.path", self.task_path.clone());
        put(
            "task.target",
            match self.task_target {
                TargetKind::Regression => "regression".into(),
                TargetKind::Classification => "classification".into(),
            },
        );
        put("task.skip_header", self.task_skip_header.to_string());
        put("method.name", self.method.method.name().into());
        put(
            "method.target_sparsity",
            self.method.target_sparsity.to_string(),
        );
        put(
            "method.prune_grow_fraction",
            self.method.prune_grow_fraction.to_string(),
        );
        put(
            "method.update_interval",
            self.method.update_interval.to_string(),
        );
        put("method.zeta_decay", self.method.zeta_decay.to_string());
        put("method.scope", self.method.scope.name().into());
        put("method.dense_after", self.method.dense_after.to_string());
        put("msrs.mu", self.msrs.mu.to_string());
        put("msrs.rho", self.msrs.rho.to_string());
        put("msrs.varsigma", self.msrs.varsigma.to_string());
        put("msrs.lambda", self.msrs.lambda.to_string());
        put("msrs.epsilon", self.msrs.epsilon.to_string());
        put("msrs.l_fwd", self.msrs.l_fwd.to_string());
        put("msrs.l_bwd", self.msrs.l_bwd.to_string());
        put(
            "msrs.max_joint_epochs",
            self.msrs.max_joint_epochs.to_string(),
        );
        put("optim.optimizer", self.optim.optimizer.name().into());
        put("optim.beta1", self.optim.beta1.to_string());
        put("optim.beta2", self.optim.beta2.to_string());
        put("optim.eps", self.optim.eps.to_string());
        put("optim.weight_decay", self.optim.weight_decay.to_string());
        put("optim.peak_lr_theta", self.optim.peak_lr_theta.to_string());
        put("optim.peak_lr_phi", self.optim.peak_lr_phi.to_string());
        put("optim.clip_norm", self.optim.clip_norm.to_string());
        put("optim.warmup_epochs", self.optim.warmup_epochs.to_string());
        put("optim.total_epochs", self.optim.total_epochs.to_string());
        put("optim.batch_size", self.optim.batch_size.to_string());
        put("log.interval", self.log_interval.to_string());
        m
    }

    /// Serialize the resolved config; feeding this text back reproduces the
    /// run.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        match self.task_kind.as_str() {
            "teacher" => Ok(TaskSpec::Teacher {
                seed: self.task_seed,
                n: self.task_n,
                d_in: self.model.d_in,
                teacher: TeacherSpec {
                    depth: self.teacher_depth,
                    width: self.teacher_width,
                    d_out: self.model.d_out,
                    gain: self.teacher_gain,
                },
            }),
            "spirals" => {
                if self.model.d_in != 2 {
                    return Err(LabError::Config(format!(
                        "task.kind = spirals needs model.d_in = 2, got {}",
                        self.model.d_in
                    )));
                }
                Ok(TaskSpec::Spirals {
                    seed: self.task_seed,
                    n: self.task_n,
                    noise: self.task_noise,
                })
            }
            "csv" => {
                if self.task_path.is_empty() {
                    return Err(LabError::Config(
                        "task.kind = csv needs task.path".into(),
                    ));
                }
                Ok(TaskSpec::Csv {
                    path: PathBuf::from(&self.task_path),
                    d_in: self.model.d_in,
                    kind: self.task_target,
                    skip_header: self.task_skip_header,
                })
            }
            other => Err(LabError::Config(format!("unknown task kind '{other}'"))),
        }
    }

    /// The model spec with the layerscale toggle folded in.
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = self.model.clone();
        spec.layerscale = self.layerscale_on.then_some(self.layerscale_init);
        spec
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig {
            model: self.model_spec(),
            task: self.task_spec()?,
            method: self.method.clone(),
            msrs: self.msrs.clone(),
            optim: self.optim.clone(),
            log_interval: self.log_interval,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunFileConfig::default();
        let text = d.to_text();
        let back = RunFileConfig::parse(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = RunFileConfig::parse("msrs.lamda = 1e-3\n").unwrap_err();
        assert!(err.to_string().contains("msrs.lamda"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = RunFileConfig::parse(
            "# a comment\n\nmethod.name = msrs   # trailing comment\nmsrs.lambda = 1e-3\n",
        )
        .unwrap();
        assert_eq!(cfg.method.method, Method::Msrs);
        assert_eq!(cfg.msrs.lambda, 1e-3);
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = RunFileConfig::parse("optim.batch_size = many\n").unwrap_err();
        assert!(err.to_string().contains("optim.batch_size"), "{err}");
    }

    #[test]
    fn snapshot_reproduces_overrides() {
        let cfg =
            RunFileConfig::parse("method.name = rigl\nmethod.target_sparsity = 0.7\nseed = 9\n")
                .unwrap();
        let back = RunFileConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.seed, 9);
        assert_eq!(back.method.method, Method::Rigl);
    }

    #[test]
    fn spirals_require_two_inputs() {
        let cfg = RunFileConfig::parse("task.kind = spirals\n").unwrap();
        assert!(cfg.to_experiment().is_err());
        let cfg = RunFileConfig::parse("task.kind = spirals\nmodel.d_in = 2\nmodel.d_out = 2\n")
            .unwrap();
        assert!(cfg.to_experiment().is_ok());
    }
}
