use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use salient::audio::{load_wav, save_wav, FrontEndConfig};
use salient::corpus::{load_manifest, save_manifest, synth_corpus_with, LoadedCorpus, SynthConfig};
use salient::inference::{
    evaluate, export_features, export_features_csv, griffin_lim, import_features, Inference,
};
use salient::model::load_checkpoint;
use salient::selfcheck::{run_selfcheck, SelfCheckOptions};
use salient::train::TrainConfig;
use salient::Exec;

use crate::{CorpusArgs, EvalArgs, ExtractArgs, ReconstructArgs, SelfcheckArgs, TrainArgs};

fn print_config(command: &str, entries: &[(&str, String)]) {
    println!("# resolved configuration: {command}");
    for (k, v) in entries {
        println!("{k} = {v}");
    }
}

fn parse_snr_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let v: f64 = s.trim().parse().with_context(|| format!("bad SNR value {s:?}"))?;
            if !v.is_finite() {
                bail!("SNR value {s:?} is not finite");
            }
            Ok(v)
        })
        .collect()
}

fn open_checkpoint(path: &Path) -> Result<Inference> {
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Inference::new(ck)?)
}

pub fn corpus(a: CorpusArgs, seed: Option<u64>) -> Result<ExitCode> {
    let seed = seed.unwrap_or(0);
    let cfg = SynthConfig {
        snr_db_list: parse_snr_list(&a.snr_list)?,
        ..SynthConfig::default()
    };
    print_config(
        "corpus",
        &[
            ("out", a.out.display().to_string()),
            ("utterances", a.utterances.to_string()),
            ("seed", seed.to_string()),
            ("snr_list", format!("{:?}", cfg.snr_db_list)),
            ("min_seconds", cfg.min_seconds.to_string()),
            ("max_seconds", cfg.max_seconds.to_string()),
            ("noise_seconds", cfg.noise_seconds.to_string()),
            ("noise_files_per_kind", cfg.noise_files_per_kind.to_string()),
        ],
    );
    let manifest = synth_corpus_with(&a.out, a.utterances, seed, &cfg, Exec::Parallel)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = a.out.join("manifest.jsonl");
    save_manifest(&manifest, &path)?;
    println!("wrote {} entries to {}", manifest.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_kv(&text)?;
    }
    let overrides: [(&str, Option<String>); 14] = [
        ("steps", a.steps.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("clones", a.clones.map(|v| v.to_string())),
        ("frames", a.frames.map(|v| v.to_string())),
        ("sources", a.sources.map(|v| v.to_string())),
        ("optimizer", a.optimizer.clone()),
        ("learning_rate", a.learning_rate.map(|v| format!("{v:?}"))),
        ("lambda_mmd", a.lambda_mmd.map(|v| format!("{v:?}"))),
        ("lambda_d", a.lambda_d.map(|v| format!("{v:?}"))),
        ("kernel_scale", a.kernel_scale.map(|v| format!("{v:?}"))),
        ("eval_every", a.eval_every.map(|v| v.to_string())),
        ("grad_clip", a.grad_clip.map(|v| format!("{v:?}"))),
        ("max_retries", a.max_retries.map(|v| v.to_string())),
        ("seed", seed.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.checkpoint_dir = Some(a.out.clone());
    cfg.validate()?;
    let model = a.preset.config();

    println!("# resolved configuration: train");
    println!("manifest = {}", a.manifest.display());
    println!("preset = {}", a.preset);
    println!(
        "lstm_layers = {}\nfc_layers = {}\nhidden = {}\nfeature_dim = {}",
        model.lstm_layers, model.fc_layers, model.hidden, model.feature_dim
    );
    print!("{}", cfg.to_kv());

    let manifest = load_manifest(&a.manifest)?;
    let corpus = LoadedCorpus::load(&manifest, Exec::Parallel)?;
    let every = cfg.eval_every;
    let outcome = salient::train::train(&corpus, &FrontEndConfig::default(), &model, &cfg, Exec::Parallel, |r| {
        if r.step % every == 0 || r.step == 1 {
            println!(
                "step {} d_e {:.4} d_mmd {:.5} d_d {:.2} d_global {:.2}",
                r.step, r.d_e, r.d_mmd, r.d_d, r.d_global
            );
        }
    })?;
    for inc in &outcome.incidents {
        eprintln!("warning: step {} attempt {}: {}", inc.step, inc.attempt, inc.message);
    }
    println!(
        "best smoothed d_global {:.3} at step {}; checkpoints in {}",
        outcome.best_smoothed,
        outcome.best_step,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn extract(a: ExtractArgs) -> Result<ExitCode> {
    print_config(
        "extract",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("wav", a.wav.display().to_string()),
            ("out", a.out.display().to_string()),
            ("csv", a.csv.to_string()),
        ],
    );
    let inf = open_checkpoint(&a.checkpoint)?;
    let audio = load_wav(&a.wav).with_context(|| format!("reading {}", a.wav.display()))?;
    let id = a.wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let track = inf.extract(&audio, &id)?;
    export_features(&track, &a.out)?;
    if a.csv {
        export_features_csv(&track, &a.out.with_extension("csv"))?;
    }
    println!("{} frames x {} features -> {}", track.frames, track.dim, a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn reconstruct(a: ReconstructArgs) -> Result<ExitCode> {
    print_config(
        "reconstruct",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("features", a.features.display().to_string()),
            ("out", a.out.display().to_string()),
            ("gl_iters", a.gl_iters.to_string()),
        ],
    );
    if a.gl_iters == 1 {
        eprintln!("warning: a single Griffin-Lim iteration leaves the phase essentially random");
    }
    let inf = open_checkpoint(&a.checkpoint)?;
    let track = import_features(&a.features)?;
    let mel = inf.reconstruct(&track)?;
    let n_mels = inf.frontend().filterbank().n_mels();
    let long: Vec<Vec<f32>> = mel.iter().map(|r| r[..n_mels].to_vec()).collect();
    let out = griffin_lim(&long, inf.frontend().filterbank(), inf.frontend().floor(), a.gl_iters)?;
    save_wav(&out.audio, &a.out)?;
    println!(
        "{} samples -> {} (final inconsistency {:.4})",
        out.audio.len(),
        a.out.display(),
        out.residuals.last().copied().unwrap_or(0.0)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs, seed: Option<u64>) -> Result<ExitCode> {
    let snrs = parse_snr_list(&a.snr_list)?;
    let manifest = load_manifest(&a.manifest)?;
    let seed = seed.unwrap_or(manifest.seed);
    print_config(
        "eval",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("manifest", a.manifest.display().to_string()),
            ("snr_list", format!("{snrs:?}")),
            ("seed", seed.to_string()),
            ("report", a.report.display().to_string()),
        ],
    );
    let inf = open_checkpoint(&a.checkpoint)?;
    let corpus = LoadedCorpus::load(&manifest, Exec::Parallel)?;
    let report = evaluate(&inf, &corpus, &snrs, seed, Exec::Parallel)?;
    fs::write(&a.report, report.to_json() + "\n").with_context(|| format!("writing {}", a.report.display()))?;
    for s in &report.per_snr {
        println!(
            "snr {:>5} dB: cross_clone_rmse {:.4} mel_recon_mse {:.4}",
            s.snr_db, s.cross_clone_rmse, s.mel_recon_mse
        );
    }
    println!("mean feature variance {:.4}", report.aggregate.mean_feature_variance);
    Ok(ExitCode::SUCCESS)
}

pub fn selfcheck(a: SelfcheckArgs, seed: Option<u64>) -> Result<ExitCode> {
    let opts = SelfCheckOptions {
        kernel_scale: a.corrupt_kernel_scale,
        grad_seeds: (0..a.grad_seeds).collect(),
        seed: seed.unwrap_or(0),
    };
    print_config(
        "selfcheck",
        &[
            ("seed", opts.seed.to_string()),
            ("grad_seeds", a.grad_seeds.to_string()),
            ("kernel_scale", format!("{:?}", opts.kernel_scale)),
        ],
    );
    let results = run_selfcheck(&opts);
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

