use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::TrainError;
use crate::corpus::{BatchSpec, SEGMENT_FRAMES};
use crate::losses::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(TrainError::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Training hyper-parameters. Desk-scale defaults: `m = 16`, `Q = 8`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub clones: usize,
    pub frames: usize,
    pub sources: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub eval_every: usize,
    pub grad_clip: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Consecutive non-finite steps tolerated before aborting.
    pub max_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            clones: 8,
            frames: SEGMENT_FRAMES,
            sources: 1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            eval_every: 50,
            grad_clip: None,
            checkpoint_dir: None,
            max_retries: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.clones < 2 {
            return bad("clones must be at least 2");
        }
        if self.frames == 0 || self.sources == 0 || self.eval_every == 0 {
            return bad("frames, sources and eval_every must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        self.weights.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            batch_size: self.batch_size,
            clones: self.clones,
            steps: self.frames,
            sources: self.sources,
        }
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = || TrainError::InvalidConfig(format!("bad value {value:?} for {key}"));
        fn p<V: FromStr>(v: &str, bad: impl Fn() -> TrainError) -> Result<V, TrainError> {
            v.trim().parse().map_err(|_| bad())
        }
        match key.trim() {
            "steps" => self.steps = p(value, bad)?,
            "batch_size" => self.batch_size = p(value, bad)?,
            "clones" => self.clones = p(value, bad)?,
            "frames" => self.frames = p(value, bad)?,
            "sources" => self.sources = p(value, bad)?,
            "optimizer" => self.optimizer = value.trim().parse()?,
            "learning_rate" => self.learning_rate = p(value, bad)?,
            "beta1" => self.beta1 = p(value, bad)?,
            "beta2" => self.beta2 = p(value, bad)?,
            "eps" => self.eps = p(value, bad)?,
            "lambda_mmd" => self.weights.lambda_mmd = p(value, bad)?,
            "lambda_d" => self.weights.lambda_d = p(value, bad)?,
            "kernel_scale" => self.weights.kernel_scale = p(value, bad)?,
            "seed" => self.seed = p(value, bad)?,
            "eval_every" => self.eval_every = p(value, bad)?,
            "grad_clip" => {
                self.grad_clip = match value.trim() {
                    "" | "none" => None,
                    v => Some(p(v, bad)?),
                }
            }
            "checkpoint_dir" => {
                self.checkpoint_dir = match value.trim() {
                    "" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            "max_retries" => self.max_retries = p(value, bad)?,
            other => return Err(TrainError::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }

    /// Every field as `key=value` lines; parses back to the same config.
    pub fn to_kv(&self) -> String {
        let clip = self.grad_clip.map_or("none".to_string(), |c| format!("{c:?}"));
        let dir = self
            .checkpoint_dir
            .as_ref()
            .map_or(String::new(), |d| d.display().to_string());
        format!(
            "steps={}\nbatch_size={}\nclones={}\nframes={}\nsources={}\noptimizer={}\n\
             learning_rate={:?}\nbeta1={:?}\nbeta2={:?}\neps={:?}\nlambda_mmd={:?}\nlambda_d={:?}\n\
             kernel_scale={:?}\nseed={}\neval_every={}\ngrad_clip={}\ncheckpoint_dir={}\nmax_retries={}\n",
            self.steps,
            self.batch_size,
            self.clones,
            self.frames,
            self.sources,
            self.optimizer,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.eps,
            self.weights.lambda_mmd,
            self.weights.lambda_d,
            self.weights.kernel_scale,
            self.seed,
            self.eval_every,
            clip,
            dir,
            self.max_retries
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut c = TrainConfig::default();
        c.grad_clip = Some(5.0);
        c.learning_rate = 3e-4;
        c.optimizer = OptimizerKind::Sgd;
        c.checkpoint_dir = Some("out/ck".into());
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert_eq!(TrainConfig::from_kv(&TrainConfig::default().to_kv()).unwrap(), TrainConfig::default());
    }

    #[test]
    fn comments_and_later_values_win() {
        let c = TrainConfig::from_kv("# desk run\nsteps = 10 # short\n\nsteps=20\nlambda_d=2.5\n").unwrap();
        assert_eq!(c.steps, 20);
        assert_eq!(c.weights.lambda_d, 2.5);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainConfig::from_kv("stepz=3").is_err());
        assert!(TrainConfig::from_kv("steps=abc").is_err());
        assert!(TrainConfig::from_kv("no equals sign").is_err());
        let mut c = TrainConfig::default();
        c.clones = 1;
        assert!(c.validate().is_err());
        c.clones = 2;
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 2;
        c.steps = 0;
        assert!(c.validate().is_err());
        c.steps = 1;
        c.validate().unwrap();
    }
}
