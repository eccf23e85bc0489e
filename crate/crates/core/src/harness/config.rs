use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, TrainConfig};
use crate::error::{Error, Result};
use crate::tasks::{
    make_clustered_quadratics, make_label_permuted_classification, ClassificationSpec, QuadraticSpec, TaskSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticTaskConfig {
    #[serde(rename = "K")]
    pub clusters: usize,
    pub c: usize,
    pub d: usize,
    pub a_range: (f64, f64),
    pub separation: f64,
    pub sigma: f64,
}

impl Default for QuadraticTaskConfig {
    fn default() -> Self {
        QuadraticTaskConfig {
            clusters: 4,
            c: 2,
            d: 20,
            a_range: (0.9, 1.1),
            separation: 10.0,
            sigma: 0.1,
        }
    }
}

impl QuadraticTaskConfig {
    pub fn spec(&self) -> QuadraticSpec {
        QuadraticSpec {
            clusters: self.clusters,
            per_cluster: self.c,
            dim: self.d,
            a_range: self.a_range,
            separation: self.separation,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationTaskConfig {
    #[serde(rename = "K")]
    pub clusters: usize,
    pub c: usize,
    pub d: usize,
    pub n_classes: usize,
    pub n_per_client: usize,
    pub n_holdout: usize,
    pub class_sep: f64,
}

impl Default for ClassificationTaskConfig {
    fn default() -> Self {
        ClassificationTaskConfig {
            clusters: 2,
            c: 2,
            d: 20,
            n_classes: 10,
            n_per_client: 500,
            n_holdout: 500,
            class_sep: 3.0,
        }
    }
}

impl ClassificationTaskConfig {
    pub fn spec(&self) -> ClassificationSpec {
        ClassificationSpec {
            clusters: self.clusters,
            per_cluster: self.c,
            dim: self.d,
            n_classes: self.n_classes,
            n_per_client: self.n_per_client,
            n_holdout: self.n_holdout,
            class_sep: self.class_sep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    ClusteredQuadratics(QuadraticTaskConfig),
    LabelPermuted(ClassificationTaskConfig),
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::ClusteredQuadratics(QuadraticTaskConfig::default())
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::ClusteredQuadratics(q) => q.spec().validate(),
            TaskConfig::LabelPermuted(c) => c.spec().validate(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<TaskSet> {
        Ok(match self {
            TaskConfig::ClusteredQuadratics(q) => {
                let (tasks, layout) = make_clustered_quadratics(&q.spec(), seed)?;
                TaskSet::quadratics(tasks, layout)
            }
            TaskConfig::LabelPermuted(c) => {
                let (tasks, layout) = make_label_permuted_classification(&c.spec(), seed)?;
                TaskSet::classification(tasks, layout)
            }
        })
    }
}

fn default_algorithms() -> Vec<AlgorithmKind> {
    vec![AlgorithmKind::Cobo]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

/// A full experiment description. Tasks and training share `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default = "default_algorithms", alias = "algorithm")]
    pub algorithms: Vec<AlgorithmKind>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub emit_snapshots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskConfig::default(),
            algorithms: default_algorithms(),
            train: TrainConfig::default(),
            output_dir: default_output_dir(),
            emit_snapshots: true,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON document. Errors name the offending key.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            let inner = err.into_inner();
            if inner.is_syntax() || inner.is_eof() || path == "." {
                Error::Parse(inner.to_string())
            } else {
                Error::config(path, inner.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "list at least one algorithm"));
        }
        Ok(())
    }

    pub fn build_tasks(&self) -> Result<TaskSet> {
        self.task.build(self.train.seed)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json_str(&std::fs::read_to_string(path)?)
}
