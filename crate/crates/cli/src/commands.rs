use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use shapejig::autodiff::{grad_check, GradCheckOptions};
use shapejig::config::KeyValues;
use shapejig::diversify::{
    decision_log, diversify_batch, CoderPair, DecoderTraining, DiversifierConfig, DomainPool, Mode,
};
use shapejig::eval::{self, AttentionMap};
use shapejig::jigsaw::{decompose, recompose, PermutationSet};
use shapejig::model::{forward, init_params, joint_loss, BatchItems, ModelSpec};
use shapejig::synth::{self, SynthConfig};
use shapejig::train::{self, Checkpoint, TrainConfig, TrainData, CHECKPOINT_FILE};
use shapejig::{DType, Error, Tensor};

use crate::{Common, EvalArgs};

/// A failed command: validation problems exit 1, everything else 2.
pub struct Failure {
    validation: bool,
    message: String,
}

impl Failure {
    pub fn is_validation(&self) -> bool {
        self.validation
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            validation: false,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            validation: e.is_validation(),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type Outcome = Result<(), Failure>;

fn load_kv(c: &Common) -> Result<KeyValues, Error> {
    match &c.config {
        Some(p) => KeyValues::load(p),
        None => Ok(KeyValues::default()),
    }
}

/// The config's `seed` (default 0) unless `--seed` overrides it.
fn seed(c: &Common, kv: &mut KeyValues) -> Result<u64, Error> {
    let from_config = kv.take_or("seed", 0u64)?;
    Ok(c.seed.unwrap_or(from_config))
}

fn base_dir(c: &Common) -> PathBuf {
    c.config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn gen_data(c: &Common) -> Outcome {
    let mut kv = load_kv(c)?;
    let seed = seed(c, &mut kv)?;
    let cfg = SynthConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let data = synth::build_dataset(&cfg, seed)?;
    let pool = synth::build_pool(&cfg, seed)?;
    synth::write_dataset(&c.out, &cfg, seed, &data, &pool)?;
    println!(
        "wrote {}: {} train, {} val, {} target, {} cue-conflict, {} pool exemplars",
        c.out.display(),
        data.train.len(),
        data.val.len(),
        data.target.len(),
        data.cue_conflict.len(),
        pool.len()
    );
    Ok(())
}

pub const PERMSET_FILE: &str = "permset.txt";

pub fn gen_permset(c: &Common) -> Outcome {
    let mut kv = load_kv(c)?;
    let grid: usize = kv.take_or("grid", 3)?;
    let count: usize = kv.take_or("permutations", 30)?;
    let seed = seed(c, &mut kv)?;
    kv.finish()?;
    let set = PermutationSet::generate(grid, count, seed)?;
    create_dir(&c.out)?;
    let path = c.out.join(PERMSET_FILE);
    set.save(&path)?;
    println!(
        "wrote {}: {} permutations of {} tiles, minimum pairwise Hamming distance {}",
        path.display(),
        set.len(),
        grid * grid,
        set.min_pairwise_distance()
    );
    Ok(())
}

pub fn diversify(c: &Common) -> Outcome {
    let mut kv = load_kv(c)?;
    let base = base_dir(c);
    let dataset = resolve(&base, kv.require::<PathBuf>("dataset")?);
    let split: String = kv.take_or("split", "val".to_string())?;
    let count: usize = kv.take_or("count", 16)?;
    let grid: usize = kv.take_or("grid", 3)?;
    let seed = seed(c, &mut kv)?;
    let d = DiversifierConfig::default();
    let cfg = DiversifierConfig {
        rho: kv.take_or("rho", d.rho)?,
        gamma_min: kv.take_or("gamma_min", d.gamma_min)?,
        gamma_max: kv.take_or("gamma_max", d.gamma_max)?,
        mode: kv.take_or("mode", d.mode)?,
        epsilon: kv.take_or("epsilon", d.epsilon)?,
    };
    let dt = DecoderTraining::default();
    let training = DecoderTraining {
        lambda: kv.take_or("lambda", dt.lambda)?,
        tau: kv.take_or("tau", dt.tau)?,
        epochs: kv.take_or("decoder_epochs", dt.epochs)?,
        lr: kv.take_or("decoder_lr", dt.lr)?,
        grid_n: grid,
        epsilon: cfg.epsilon,
        ..dt
    };
    let width: usize = kv.take_or("coder_width", 8)?;
    let corpus_size: usize = kv.take_or("decoder_corpus", 60)?;
    let coder_path: Option<PathBuf> = kv.take("coder")?;
    kv.finish()?;
    cfg.validate()?;
    if !synth::SPLITS.contains(&split.as_str()) {
        return Err(Error::config(format!("split must be one of {:?}, got {split:?}", synth::SPLITS)).into());
    }

    let records = synth::read_split(&dataset, &split)?;
    let pool = DomainPool::load(&dataset.join(synth::POOL_DIR))?;
    create_dir(&c.out)?;
    let coder = match (cfg.mode, coder_path) {
        (Mode::Pixel, _) => None,
        (Mode::Learned, Some(p)) => Some(CoderPair::load(&resolve(&base, p))?),
        (Mode::Learned, None) => {
            let corpus: Vec<Tensor> = synth::read_split(&dataset, "train")?
                .into_iter()
                .take(corpus_size)
                .map(|r| r.image)
                .collect();
            let styles: Vec<Tensor> = pool.exemplars().iter().map(|e| e.image.clone()).collect();
            let fresh = CoderPair::new(pool.channels(), width, seed)?;
            let (coder, history) = shapejig::diversify::train_decoder(&fresh, &corpus, &styles, &training, seed)?;
            let mut csv = String::from("epoch,total,content,style,adjacent\n");
            for i in 0..history.total.len() {
                csv += &format!(
                    "{},{},{},{},{}\n",
                    i + 1,
                    history.total[i],
                    history.content[i],
                    history.style[i],
                    history.adjacent[i]
                );
            }
            write(&c.out.join("decoder_history.csv"), &csv)?;
            coder.save(&c.out.join("coder.bin"))?;
            println!(
                "trained decoder for {} epochs: loss {:.4} -> {:.4}",
                history.total.len(),
                history.total.first().copied().unwrap_or(f64::NAN),
                history.total.last().copied().unwrap_or(f64::NAN)
            );
            Some(coder)
        }
    };

    let grids = records
        .iter()
        .take(count)
        .map(|r| decompose(&r.image, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let (out, decisions) = diversify_batch(&grids, &cfg, &pool, coder.as_ref(), seed, 0)?;
    let img_dir = c.out.join("diversified");
    create_dir(&img_dir)?;
    for (i, g) in out.iter().enumerate() {
        recompose(g)?.save(&img_dir.join(format!("{i:05}.ndt")), DType::F32)?;
    }
    write(&c.out.join("decisions.csv"), &decision_log(&decisions, 0))?;
    let hits = decisions.iter().filter(|d| d.hit).count();
    println!(
        "diversified {hits} of {} images from {split} (rho {}), wrote {}",
        out.len(),
        cfg.rho,
        c.out.display()
    );
    Ok(())
}

fn train_config(c: &Common) -> Result<TrainConfig, Error> {
    let mut kv = load_kv(c)?;
    let mut cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    cfg.resolve_paths(&base_dir(c));
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn train(c: &Common, resume: bool) -> Outcome {
    let cfg = train_config(c)?;
    let data = TrainData::load(&cfg)?;
    let ckpt = if resume {
        Some(Checkpoint::load(&c.out.join(CHECKPOINT_FILE))?)
    } else {
        None
    };
    if let Some(k) = &ckpt {
        println!("resuming after epoch {}", k.epoch);
    }
    let outcome = train::train(&cfg, &data, Some(&c.out), ckpt, &mut |r, t| {
        println!(
            "epoch {:>3}  class {:.4}  jigsaw {:.4}  val {:.3}  target {:.3}  jigsaw-acc {:.3}  shape-bias {}  ({:.1}s)",
            r.epoch,
            r.class_loss,
            r.jigsaw_loss,
            r.val_accuracy,
            r.target_accuracy,
            r.jigsaw_accuracy,
            r.shape_bias.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into()),
            t.as_secs_f64()
        );
    })?;
    println!(
        "trained {} epochs; metrics and checkpoint in {}",
        outcome.metrics.len(),
        c.out.display()
    );
    Ok(())
}

/// Loads the checkpoint and dataset an evaluation subcommand works on.
fn eval_inputs(a: &EvalArgs) -> Result<(TrainConfig, TrainData, Checkpoint), Error> {
    let cfg = train_config(&a.common)?;
    let data = TrainData::load(&cfg)?;
    let path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| a.common.out.join(CHECKPOINT_FILE));
    let ckpt = Checkpoint::load(&path)?;
    let expected = data.model_spec(&cfg);
    if ckpt.spec.classes != expected.classes {
        return Err(Error::invalid(format!(
            "checkpoint predicts {} classes, dataset has {}",
            ckpt.spec.classes, expected.classes
        )));
    }
    if ckpt.spec.input_shape() != expected.input_shape() {
        return Err(Error::invalid(format!(
            "checkpoint expects {:?} images, dataset has {:?}",
            ckpt.spec.input_shape(),
            expected.input_shape()
        )));
    }
    Ok((cfg, data, ckpt))
}

fn bias_record(bias: &eval::ShapeBias) -> serde_json::Value {
    json!({
        "metric": "shape_bias",
        "score": bias.score,
        "shape_fraction": bias.shape_fraction,
        "texture_fraction": bias.texture_fraction,
        "samples": bias.samples,
    })
}

fn fmt_score(s: Option<f64>) -> String {
    s.map(|v| v.to_string()).unwrap_or_default()
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let (cfg, data, ckpt) = eval_inputs(a)?;
    let (spec, params) = (&ckpt.spec, &ckpt.params);
    let classes = spec.classes;
    let mut csv = String::from("split,accuracy,samples");
    for k in 0..classes {
        csv += &format!(",class{k}_accuracy");
    }
    csv.push('\n');
    let mut jsonl = String::new();
    for (name, records) in [("train", &data.train), ("val", &data.val), ("target", &data.target)] {
        let acc = eval::evaluate(spec, params, records)?;
        csv += &format!("{name},{},{}", acc.accuracy, acc.samples);
        for k in 0..classes {
            csv += &format!(",{}", fmt_score(acc.class_accuracy(k)));
        }
        csv.push('\n');
        let per_class: Vec<Option<f64>> = (0..classes).map(|k| acc.class_accuracy(k)).collect();
        jsonl += &json!({"metric": "accuracy", "split": name, "accuracy": acc.accuracy,
                         "samples": acc.samples, "per_class": per_class})
        .to_string();
        jsonl.push('\n');
        println!("{name:>8} accuracy {:.4} ({} images)", acc.accuracy, acc.samples);
    }
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let jig_seed = shapejig::rng::derive_seed(seed, "jigsaw-eval-set", &[]);
    let jig = eval::jigsaw_accuracy(spec, params, &data.permset, &data.val, jig_seed)?;
    jsonl += &json!({"metric": "jigsaw_accuracy", "split": "val", "accuracy": jig,
                     "chance": 1.0 / data.permset.len() as f64})
    .to_string();
    jsonl.push('\n');
    println!(
        "  jigsaw accuracy {jig:.4} (chance {:.4})",
        1.0 / data.permset.len() as f64
    );
    let mut summary = format!("jigsaw_val,{jig},{}\n", data.val.len());
    if !data.cue_conflict.is_empty() {
        let bias = eval::shape_bias_score(spec, params, &data.cue_conflict)?;
        jsonl += &bias_record(&bias).to_string();
        jsonl.push('\n');
        summary += &format!("shape_bias,{},{}\n", fmt_score(bias.score), bias.samples);
        print_bias(&bias);
    }
    create_dir(&a.common.out)?;
    write(&a.common.out.join("eval.csv"), &csv)?;
    write(
        &a.common.out.join("eval_summary.csv"),
        &format!("metric,value,samples\n{summary}"),
    )?;
    write(&a.common.out.join("eval.jsonl"), &jsonl)?;
    Ok(())
}

fn print_bias(b: &eval::ShapeBias) {
    match b.score {
        Some(s) => println!(
            "  shape bias {s:.4} (shape matches {:.3}, texture matches {:.3}, {} images)",
            b.shape_fraction, b.texture_fraction, b.samples
        ),
        None => println!(
            "  shape bias undefined: no prediction matched either cue ({} images)",
            b.samples
        ),
    }
}

pub fn shape_bias(a: &EvalArgs) -> Outcome {
    let (_, data, ckpt) = eval_inputs(a)?;
    if data.cue_conflict.is_empty() {
        return Err(Error::invalid("dataset has no cue-conflict records").into());
    }
    let bias = eval::shape_bias_score(&ckpt.spec, &ckpt.params, &data.cue_conflict)?;
    print_bias(&bias);
    create_dir(&a.common.out)?;
    write(
        &a.common.out.join("shape_bias.csv"),
        &format!(
            "score,shape_fraction,texture_fraction,samples\n{},{},{},{}\n",
            fmt_score(bias.score),
            bias.shape_fraction,
            bias.texture_fraction,
            bias.samples
        ),
    )?;
    write(
        &a.common.out.join("shape_bias.jsonl"),
        &(bias_record(&bias).to_string() + "\n"),
    )?;
    Ok(())
}

pub fn attention(a: &EvalArgs, count: usize) -> Outcome {
    let (_, data, ckpt) = eval_inputs(a)?;
    let records: Vec<_> = data.target.iter().take(count).cloned().collect();
    if records.is_empty() {
        return Err(Error::invalid("no target images to map").into());
    }
    let maps = eval::attention_maps(&ckpt.spec, &ckpt.params, &eval::stack_images(&records)?)?;
    let dir = a.common.out.join("attention");
    create_dir(&dir)?;
    let mut summary = String::from("index,shape_label,all_zero,inside_mean,outside_mean\n");
    let (mut focused, mut scored) = (0, 0);
    for (i, (m, r)) in maps.iter().zip(&records).enumerate() {
        write(&dir.join(format!("{i:05}.csv")), &m.to_csv())?;
        let split = m.inside_outside(&r.mask)?;
        if let Some((inside, outside)) = split {
            scored += 1;
            if inside > outside {
                focused += 1;
            }
        }
        let (i_s, o_s) = split.map(|(a, b)| (a.to_string(), b.to_string())).unwrap_or_default();
        summary += &format!("{i},{},{},{i_s},{o_s}\n", r.shape_label, u8::from(m.all_zero));
    }
    write(&a.common.out.join("attention.csv"), &summary)?;
    let flagged = maps.iter().filter(|m: &&AttentionMap| m.all_zero).count();
    println!(
        "{} maps of {}x{} cells; inside-mask mean above outside on {focused} of {scored}; {flagged} all-zero",
        maps.len(),
        maps[0].side,
        maps[0].side
    );
    Ok(())
}

pub fn gradcheck(c: &Common) -> Outcome {
    let mut kv = load_kv(c)?;
    let d = ModelSpec::default();
    let spec = ModelSpec {
        in_channels: kv.take_or("in_channels", d.in_channels)?,
        image_size: kv.take_or("image_size", d.image_size)?,
        conv_widths: kv.take_list("conv_widths")?.unwrap_or(d.conv_widths),
        classes: kv.take_or("classes", d.classes)?,
        permutations: kv.take_or("permutations", d.permutations)?,
    };
    let batch: usize = kv.take_or("batch", 3)?;
    let ordered: usize = kv.take_or("ordered", 2)?;
    let alpha: f64 = kv.take_or("alpha", 0.7)?;
    let opts = GradCheckOptions {
        samples_per_param: Some(kv.take_or("samples_per_param", 64)?),
        seed: seed(c, &mut kv)?,
        ..GradCheckOptions::default()
    };
    kv.finish()?;
    if ordered == 0 || ordered > batch {
        return Err(Error::config("need 1 <= ordered <= batch").into());
    }
    let params = init_params(&spec, opts.seed)?;
    let mut rng = shapejig::rng::stream(opts.seed, "gradcheck-batch", &[]);
    use rand::Rng;
    let s = spec.image_size;
    let items = BatchItems {
        images: Tensor::from_fn(&[batch, spec.in_channels, s, s], |_| rng.gen::<f64>()),
        class_labels: (0..ordered).map(|_| rng.gen_range(0..spec.classes)).collect(),
        perm_labels: (0..batch)
            .map(|i| {
                if i < ordered {
                    0
                } else {
                    rng.gen_range(1..spec.permutations.max(2))
                }
            })
            .collect(),
    };
    let report = grad_check(
        |tape, vars| {
            let x = tape.constant(items.images.clone());
            let out = forward(&spec, tape, vars, x)?;
            Ok(joint_loss(tape, &out, &items, alpha)?.total)
        },
        &params,
        &opts,
    )?;
    let mut csv = String::from("param,checked,skipped,max_rel_error\n");
    println!(
        "{:<12} {:>8} {:>8} {:>14}",
        "param", "checked", "skipped", "max rel error"
    );
    for p in &report.params {
        println!(
            "{:<12} {:>8} {:>8} {:>14.3e}",
            p.name, p.checked, p.skipped, p.max_rel_error
        );
        csv += &format!("{},{},{},{}\n", p.name, p.checked, p.skipped, p.max_rel_error);
    }
    create_dir(&c.out)?;
    write(&c.out.join("gradcheck.csv"), &csv)?;
    if report.passed() {
        println!("all parameters within {:e}", report.tolerance);
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            report.max_error(),
            report.tolerance
        )))
    }
}
