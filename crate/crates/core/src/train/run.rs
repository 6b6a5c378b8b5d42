use std::fs;
use std::time::Instant;

use super::{write_log_csv, TrainConfig, TrainError, TrainLogRecord, Trainer};
use crate::audio::{FrontEnd, FrontEndConfig, FRAME_DIM};
use crate::corpus::{build_clone_batch, LoadedCorpus};
use crate::exec::Exec;
use crate::losses::laplace_prior_sample;
use crate::model::{init_params, save_checkpoint, Checkpoint, EncoderConfig, ModelError, ModelParams};
use crate::rng;

/// A skipped step attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct Incident {
    pub step: usize,
    pub attempt: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the smallest smoothed `d_global`.
    pub best: Checkpoint,
    pub best_step: usize,
    pub best_smoothed: f64,
    /// Parameters after the last step.
    pub last: Checkpoint,
    pub log: Vec<TrainLogRecord>,
    /// `(step, smoothed d_global)` at every evaluation point.
    pub smoothed: Vec<(usize, f64)>,
    pub incidents: Vec<Incident>,
}

/// Trains from scratch. Normalization statistics come from the clean
/// utterances of `corpus`; every random draw derives from `config.seed`.
///
/// When `config.checkpoint_dir` is set, `best.slnt`, `final.slnt` and
/// `train_log.csv` are written there at the end.
pub fn train(
    corpus: &LoadedCorpus,
    frontend_config: &FrontEndConfig,
    model: &EncoderConfig,
    config: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(&TrainLogRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    if model.input_dim != FRAME_DIM {
        return Err(ModelError::InvalidConfig(format!("input_dim must be {FRAME_DIM}")).into());
    }
    let frontend = FrontEnd::new(frontend_config).map_err(crate::corpus::CorpusError::from)?;
    let mut params = init_params(model, config.seed)?;
    params.norm = corpus.norm_stats(&frontend, exec)?;
    let mut trainer = Trainer::<f32>::new(params, *model, config, exec);
    let spec = config.batch_spec();
    let snapshot = |p: &ModelParams<f32>| Checkpoint {
        encoder: *model,
        frontend: frontend_config.clone(),
        params: p.clone(),
    };

    let started = Instant::now();
    let mut log: Vec<TrainLogRecord> = Vec::with_capacity(config.steps);
    let mut smoothed = Vec::new();
    let mut incidents = Vec::new();
    let mut best: Option<(Checkpoint, usize, f64)> = None;
    let mut draw: u64 = 0;

    for step in 1..=config.steps {
        let mut failures = 0;
        let loss = loop {
            let batch = build_clone_batch(corpus, &spec, &frontend, config.seed, draw, exec)?;
            let prior = laplace_prior_sample(
                spec.batch_size * spec.steps,
                model.feature_dim,
                &mut rng::stream(config.seed, "prior", draw),
            )
            .cast::<f32>();
            draw += 1;
            match trainer.step(&batch, &prior, step) {
                Ok(loss) => break loss,
                Err(TrainError::NonFiniteLoss { .. }) => {
                    failures += 1;
                    incidents.push(Incident {
                        step,
                        attempt: failures,
                        message: format!("non-finite loss on batch draw {}; batch skipped", draw - 1),
                    });
                    if failures >= config.max_retries {
                        return Err(TrainError::Aborted { step, attempts: failures });
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let record = TrainLogRecord {
            step,
            d_e: loss.d_e,
            d_mmd: loss.d_mmd,
            d_d: loss.d_d,
            d_global: loss.d_global,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_step(&record);
        log.push(record);

        if step % config.eval_every == 0 || step == config.steps {
            let window = &log[log.len().saturating_sub(config.eval_every)..];
            let value = window.iter().map(|r| r.d_global).sum::<f64>() / window.len() as f64;
            smoothed.push((step, value));
            if best.as_ref().is_none_or(|b| value < b.2) {
                best = Some((snapshot(&trainer.params), step, value));
            }
        }
    }

    let (best, best_step, best_smoothed) = best.expect("at least one evaluation");
    let outcome = TrainOutcome {
        best,
        best_step,
        best_smoothed,
        last: snapshot(&trainer.params),
        log,
        smoothed,
        incidents,
    };
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir)?;
        save_checkpoint(&outcome.best, &dir.join("best.slnt")).map_err(checkpoint_io)?;
        save_checkpoint(&outcome.last, &dir.join("final.slnt")).map_err(checkpoint_io)?;
        write_log_csv(&outcome.log, &dir.join("train_log.csv"))?;
    }
    Ok(outcome)
}

fn checkpoint_io(e: crate::model::CheckpointError) -> TrainError {
    match e {
        crate::model::CheckpointError::Io(io) => TrainError::Io(io),
        other => TrainError::Io(std::io::Error::other(other.to_string())),
    }
}
