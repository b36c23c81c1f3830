use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use serde::Serialize;

use mrbm::io::{load_idx, load_model, load_ppm_dir, save_model, save_ppm, ImageDataset};
use mrbm::oracle::{log_likelihood_exact, MAX_ENUM_VISIBLE};
use mrbm::probe::{probe_accuracy, ProbeConfig};
use mrbm::sampler::generate as sample_model;
use mrbm::stack::{forward_means, reconstruct_stack, train_epoch};
use mrbm::verify::{run_all, VerifyOptions};
use mrbm::{AdamConfig, DbnModel, ImageShape, Layer, ModelOptimizer, RbmLayer, RngStream, TrainConfig};

use crate::config::{Manifest, RunConfig};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// Starts a run: creates the output directory and records the manifest.
fn begin(command: &str, config: &RunConfig) -> Result<(), CliError> {
    create_dir(&config.out)?;
    Manifest::new(command, config).write(&config.out)
}

fn load_dataset(config: &RunConfig, n_levels: u32) -> Result<ImageDataset, CliError> {
    let path = config.data_path()?;
    if path.is_dir() {
        if config.labels.is_some() {
            return Err(CliError::Usage("--labels only applies to IDX data".into()));
        }
        Ok(load_ppm_dir(path, n_levels)?)
    } else {
        Ok(load_idx(path, config.labels.as_deref(), n_levels)?)
    }
}

fn model_levels(model: &DbnModel) -> u32 {
    model.visible_spec().map_or(255, |s| s.n_levels())
}

/// Image geometry of the model's input.
fn image_shape(model: &DbnModel, config: &RunConfig) -> Result<ImageShape, CliError> {
    if let Some(Layer::Conv(c)) = model.layers().first() {
        return Ok(c.input_shape());
    }
    let n = model.n_visible();
    if let Some(s) = &config.shape {
        let dims: Vec<usize> = s.split('x').map(|d| d.trim().parse()).collect::<Result<_, _>>().map_err(|_| {
            CliError::Usage(format!("--shape expects CxHxW, got `{s}`"))
        })?;
        let shape = match dims[..] {
            [c, h, w] => ImageShape::new(c, h, w),
            _ => return Err(CliError::Usage(format!("--shape expects CxHxW, got `{s}`"))),
        };
        if shape.len() != n {
            return Err(CliError::Usage(format!("--shape {s} has {} values, model has {n} visible units", shape.len())));
        }
        return Ok(shape);
    }
    let side = |m: usize| (1..=m).find(|s| s * s >= m).filter(|s| s * s == m);
    if let Some(s) = side(n) {
        Ok(ImageShape::new(1, s, s))
    } else if let Some(s) = n.is_multiple_of(3).then(|| side(n / 3)).flatten() {
        Ok(ImageShape::new(3, s, s))
    } else {
        Err(CliError::Usage(format!("cannot infer an image shape for {n} visible units; pass --shape CxHxW")))
    }
}

/// Writes one row of unit values in `[0, N]` as a netpbm image.
fn save_row(row: ArrayView1<'_, f64>, shape: ImageShape, n_levels: u32, path: &Path) -> Result<(), CliError> {
    let pixels = row
        .to_owned()
        .into_shape_with_order((shape.channels, shape.height, shape.width))
        .expect("row matches shape")
        .mapv(|x| x * 255.0 / f64::from(n_levels));
    Ok(save_ppm(pixels.view(), path)?)
}

fn image_name(prefix: &str, i: usize, shape: ImageShape) -> String {
    let ext = if shape.channels == 1 { "pgm" } else { "ppm" };
    format!("{prefix}_{i:04}.{ext}")
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let spec = config.spec()?;
    let arch = config.architecture()?;
    let data = load_dataset(config, config.n_levels)?;
    let rows = data.to_rows();
    let mut model = arch.build(data.image_shape(), spec, config.seed)?;
    let train = TrainConfig {
        adam: AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        },
        batch_size: config.batch,
        recon: config.recon.into(),
        loss_norm: config.loss_norm.into(),
        clip_norm: None,
    };
    train.adam.validate()?;
    if config.batch == 0 {
        return Err(CliError::Usage("--batch must be positive".into()));
    }
    begin("train", config)?;

    if config.epochs > 0 {
        let mut log = String::from("epoch");
        for i in 0..model.layers().len() {
            write!(log, ",loss_{i},recon_error_{i}").expect("string write");
        }
        log.push('\n');
        let mut timing = String::from("epoch,seconds\n");
        let mut opt = ModelOptimizer::new(&model);
        for epoch in 0..config.epochs {
            let start = Instant::now();
            let report = train_epoch(&mut model, rows.view(), &mut opt, &train, &RngStream::new(config.seed, epoch as u64 + 1))?;
            let secs = start.elapsed().as_secs_f64();
            write!(log, "{}", epoch + 1).expect("string write");
            for l in &report.layers {
                write!(log, ",{},{}", l.loss, l.recon_error).expect("string write");
            }
            log.push('\n');
            writeln!(timing, "{},{secs:.3}", epoch + 1).expect("string write");
            eprintln!("epoch {:>4}  {report}  ({secs:.2}s)", epoch + 1);
        }
        write(&config.out.join("loss.csv"), &log)?;
        write(&config.out.join("timing.csv"), &timing)?;
    }
    save_model(&model, &config.out.join("model.drbm"))?;
    Ok(())
}

pub fn generate(config: &RunConfig) -> Result<(), CliError> {
    let model = load_model(config.model_path()?)?;
    let shape = image_shape(&model, config)?;
    let samples = sample_model(&model, config.steps, config.count, &RngStream::new(config.seed, 0))?;
    begin("generate", config)?;
    for (i, row) in samples.rows().into_iter().enumerate() {
        save_row(row, shape, model_levels(&model), &config.out.join(image_name("sample", i, shape)))?;
    }
    eprintln!("wrote {} samples to {}", samples.nrows(), config.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ReconstructReport {
    images: usize,
    /// Mean `|v − v′|` per unit value, training images.
    recon_error: f64,
    /// The same for uniformly random images.
    random_baseline: f64,
}

fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).mean().unwrap_or(0.0)
}

pub fn reconstruct(config: &RunConfig) -> Result<(), CliError> {
    let model = load_model(config.model_path()?)?;
    let levels = model_levels(&model);
    let data = load_dataset(config, levels)?.take(config.count);
    if data.image_shape().len() != model.n_visible() {
        return Err(mrbm::Error::Shape(format!("images have {} values, model expects {}", data.image_shape().len(), model.n_visible())).into());
    }
    let shape = data.image_shape();
    let rows = data.to_rows();
    let mode = config.recon.into();
    let recon = reconstruct_stack(&model, rows.view(), mode, &RngStream::new(config.seed, 0))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let random = Array2::from_shape_simple_fn(rows.dim(), || f64::from(rng.random_range(0..=levels)));
    let random_recon = reconstruct_stack(&model, random.view(), mode, &RngStream::new(config.seed, 1))?;

    begin("reconstruct", config)?;
    for (i, (orig, rec)) in rows.rows().into_iter().zip(recon.rows()).enumerate() {
        save_row(orig, shape, levels, &config.out.join(image_name("original", i, shape)))?;
        save_row(rec, shape, levels, &config.out.join(image_name("reconstruction", i, shape)))?;
    }
    let report = ReconstructReport {
        images: rows.nrows(),
        recon_error: mean_abs_diff(&rows, &recon),
        random_baseline: mean_abs_diff(&random, &random_recon),
    };
    println!("recon_error {} random_baseline {}", report.recon_error, report.random_baseline);
    write_json(&config.out.join("reconstruct.json"), &report)
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EvalReport {
    LogLikelihood {
        samples: usize,
        log_partition: f64,
        mean_log_likelihood: f64,
    },
    Probe {
        features: usize,
        n_train: usize,
        n_test: usize,
        train_accuracy: f64,
        test_accuracy: f64,
        majority_accuracy: f64,
    },
}

pub fn eval(config: &RunConfig) -> Result<(), CliError> {
    let model = load_model(config.model_path()?)?;
    let data = load_dataset(config, model_levels(&model))?;
    let rows = data.to_rows();
    let report = match model.layers() {
        [Layer::Dense(p)] if p.visible_spec.is_binary() && p.n_visible() <= MAX_ENUM_VISIBLE => {
            let r = log_likelihood_exact(p, rows.view())?;
            println!("mean_log_likelihood {}", r.mean_log_likelihood);
            EvalReport::LogLikelihood {
                samples: rows.nrows(),
                log_partition: r.log_partition,
                mean_log_likelihood: r.mean_log_likelihood,
            }
        }
        _ => {
            let labels: Vec<usize> = data
                .labels
                .as_ref()
                .ok_or_else(|| CliError::Usage("probe evaluation needs --labels".into()))?
                .iter()
                .map(|&l| usize::from(l))
                .collect();
            let top = model.layers().last().expect("validated model");
            let features = forward_means(&model, rows.view())?.top().to_owned() / f64::from(top.hidden_spec().n_levels());
            let r = probe_accuracy(features.view(), &labels, &ProbeConfig::default())?;
            println!("probe_test_accuracy {} train_accuracy {} majority {}", r.test_accuracy, r.train_accuracy, r.majority_accuracy);
            EvalReport::Probe {
                features: features.len_of(Axis(1)),
                n_train: r.n_train,
                n_test: r.n_test,
                train_accuracy: r.train_accuracy,
                test_accuracy: r.test_accuracy,
                majority_accuracy: r.majority_accuracy,
            }
        }
    };
    begin("eval", config)?;
    write_json(&config.out.join("eval.json"), &report)
}

pub fn verify(seed: u64, gibbs_steps: usize) -> Result<(), CliError> {
    let outcomes = run_all(&VerifyOptions {
        seed,
        gibbs_steps,
        ..VerifyOptions::default()
    });
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        println!("all {} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}
