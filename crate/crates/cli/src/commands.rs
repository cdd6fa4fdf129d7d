use std::fmt::Write;
use std::path::{Path, PathBuf};

use cl2gen_core::body::Skeleton;
use cl2gen_core::classifier::{pretrain_classifier, Classifier, ClassifierFile};
use cl2gen_core::metrics::{evaluate as evaluate_model, evaluate_ground_truth, extract_features, EvalProtocol};
use cl2gen_core::motion::{dataset_from_json, dataset_to_json, split_tasks, Dataset, MotionSequence};
use cl2gen_core::seqvae::{Checkpoint, SeqVae};
use cl2gen_core::synth::synth_generate;
use cl2gen_core::trainer::{loss_csv, offline_schedule, run_cl2gen, RunLog, RunSetup};
use cl2gen_core::{Error, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_synth, Precision, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{file_sha256, sha256_hex, unix_now, Artifact, RunManifest, Seeds};
use crate::report::{accuracy_csv, accuracy_svg, summary_table};
use crate::Mode;

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn dataset_summary<T: Scalar>(ds: &Dataset<T>) -> String {
    let counts = ds.count_per_class();
    let mut s = format!("{} sequences, {} classes\n", ds.sequences.len(), ds.num_classes());
    for (name, n) in ds.class_names.iter().zip(counts) {
        let _ = writeln!(s, "  {name}: {n}");
    }
    s
}

pub fn prepare_data(synth: Option<&str>, input: Option<&Path>, out: &Path) -> CliResult<String> {
    let ds: Dataset<f64> = match (synth, input) {
        (Some(spec), None) => synth_generate(&parse_synth(spec)?, &Skeleton::smpl())?,
        (None, Some(p)) => dataset_from_json(&read_text(p)?)?,
        _ => return Err(CliError::Config("give exactly one of --synth and --input".into())),
    };
    let text = dataset_to_json(&ds)?;
    write_file(out, &text)?;
    Ok(format!(
        "{}wrote {} (sha256 {})\n",
        dataset_summary(&ds),
        out.display(),
        sha256_hex(text.as_bytes())
    ))
}

pub struct TrainArgs {
    pub mode: Mode,
    pub config: RunConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    pub classifier: Option<PathBuf>,
    pub deterministic: bool,
}

pub fn train(args: &TrainArgs) -> CliResult<String> {
    args.config.validate()?;
    let text = read_text(&args.data)?;
    let data_sha = sha256_hex(text.as_bytes());
    match args.config.precision {
        Precision::F32 => train_with::<f32>(args, dataset_from_json(&text)?, data_sha),
        Precision::F64 => train_with::<f64>(args, dataset_from_json(&text)?, data_sha),
    }
}

fn load_classifier<T: Scalar>(path: &Path) -> CliResult<Classifier<T>> {
    let file: ClassifierFile = serde_json::from_str(&read_text(path)?).map_err(Error::from)?;
    Ok(Classifier::from_file(&file)?)
}

fn artifact(dir: &Path, rel: &str) -> CliResult<Artifact> {
    Ok(Artifact {
        path: PathBuf::from(rel),
        sha256: file_sha256(&dir.join(rel))?,
    })
}

fn train_with<T: Scalar>(args: &TrainArgs, dataset: Dataset<T>, data_sha: String) -> CliResult<String> {
    let started = unix_now();
    let cfg = &args.config;
    let schedule = match args.mode {
        Mode::Offline => offline_schedule(&dataset),
        Mode::Cl2gen => split_tasks(&dataset, cfg.classes_per_task, cfg.class_order.as_deref())?,
    };
    let train = cfg.train()?;
    let out = &args.out;
    let ck_dir = out.join("checkpoints");
    create_dir(&ck_dir)?;

    let mut artifacts = Vec::new();
    let (classifier, classifier_input) = match &args.classifier {
        Some(p) => {
            let c = load_classifier::<T>(p)?;
            if !c.is_frozen() {
                return Err(Error::validation("the supplied classifier is not frozen").into());
            }
            let input = Artifact {
                path: absolute(p),
                sha256: file_sha256(p)?,
            };
            (c, Some(input))
        }
        None => {
            let c = pretrain_classifier(&dataset, &cfg.classifier())?;
            write_file(&out.join("classifier.json"), serde_json::to_string(&c.to_file()).map_err(Error::from)?)?;
            artifacts.push(artifact(out, "classifier.json")?);
            (c, None)
        }
    };

    let setup = RunSetup {
        dataset: &dataset,
        schedule: &schedule,
        model: cfg.model(dataset.num_classes()),
        train,
        protocol: cfg.protocol(),
        classifier: &classifier,
    };
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut per_task = Vec::new();
    let result = run_cl2gen(&setup, &mut |end| {
        let k = end.task + 1;
        let ck = format!("checkpoints/task_{k}.json");
        end.model.to_checkpoint(&dataset.class_names, None).save(&out.join(&ck))?;
        let csv = format!("loss_task_{k}.csv");
        std::fs::write(out.join(&csv), loss_csv(&end.record.loss_curve))?;
        last_checkpoint = Some(out.join(&ck));
        per_task.push(ck);
        per_task.push(csv);
        Ok(())
    });
    let output = result.map_err(|e| match (&e, &last_checkpoint) {
        (Error::Numeric(msg), Some(p)) => Error::Numeric(format!("{msg}; last checkpoint written: {}", p.display())),
        _ => e,
    })?;
    for rel in &per_task {
        artifacts.push(artifact(out, rel)?);
    }

    let log = output.log;
    write_file(&out.join("runlog.json"), log.to_json()?)?;
    artifacts.push(artifact(out, "runlog.json")?);
    write_file(&out.join("accuracy_matrix.csv"), accuracy_csv(&log))?;
    artifacts.push(artifact(out, "accuracy_matrix.csv")?);

    let manifest = RunManifest {
        code_version: crate::manifest::CODE_VERSION.to_string(),
        command: "train".into(),
        mode: match args.mode {
            Mode::Offline => "offline".into(),
            Mode::Cl2gen => "cl2gen".into(),
        },
        deterministic: args.deterministic,
        config: cfg.clone(),
        dataset_path: absolute(&args.data),
        dataset_sha256: data_sha,
        classifier_input,
        seeds: Seeds {
            train: cfg.seed,
            eval: cfg.eval_seed,
            classifier: cfg.classifier_seed,
        },
        artifacts,
        started_unix: started,
        finished_unix: unix_now(),
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(format!("{}wrote run artifacts to {}\n", summary_table(&log), out.display()))
}

fn resolve_class(names: &[String], class: &str) -> CliResult<usize> {
    if let Some(i) = names.iter().position(|n| n == class) {
        return Ok(i);
    }
    match class.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(Error::validation(format!(
            "unknown class `{class}`; known classes: {}",
            names.join(", ")
        ))
        .into()),
    }
}

pub fn generate(checkpoint: &Path, class: &str, frames: usize, count: usize, seed: u64, out: &Path) -> CliResult<String> {
    let ck: Checkpoint = serde_json::from_str(&read_text(checkpoint)?).map_err(Error::from)?;
    match ck.scalar.as_str() {
        "f32" => generate_with::<f32>(&ck, class, frames, count, seed, out),
        "f64" => generate_with::<f64>(&ck, class, frames, count, seed, out),
        other => Err(Error::validation(format!("unsupported checkpoint precision `{other}`")).into()),
    }
}

fn generate_with<T: Scalar>(ck: &Checkpoint, class: &str, frames: usize, count: usize, seed: u64, out: &Path) -> CliResult<String> {
    if frames == 0 || count == 0 {
        return Err(Error::validation("--frames and --count must be at least 1").into());
    }
    let model = SeqVae::<T>::from_checkpoint(ck)?;
    let a = resolve_class(&ck.class_names, class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = model.generate_batch(&vec![a; count], frames, &mut rng)?;
    let ds = Dataset::new(seqs, ck.class_names.clone(), Skeleton::smpl(), MotionSequence::<T>::DEFAULT_FPS)?;
    write_file(out, dataset_to_json(&ds)?)?;
    Ok(format!(
        "wrote {count} sequences of {frames} frames for class {} to {}\n",
        ck.class_names[a],
        out.display()
    ))
}

pub fn evaluate(
    checkpoint: Option<&Path>,
    classifier: &Path,
    data: &Path,
    protocol: &EvalProtocol,
    out: &Path,
) -> CliResult<String> {
    let file: ClassifierFile = serde_json::from_str(&read_text(classifier)?).map_err(Error::from)?;
    match file.scalar.as_str() {
        "f32" => evaluate_with::<f32>(checkpoint, &file, data, protocol, out),
        "f64" => evaluate_with::<f64>(checkpoint, &file, data, protocol, out),
        other => Err(Error::validation(format!("unsupported classifier precision `{other}`")).into()),
    }
}

fn evaluate_with<T: Scalar>(
    checkpoint: Option<&Path>,
    file: &ClassifierFile,
    data: &Path,
    protocol: &EvalProtocol,
    out: &Path,
) -> CliResult<String> {
    let clf = Classifier::<T>::from_file(file)?;
    let ds: Dataset<T> = dataset_from_json(&read_text(data)?)?;
    if clf.num_classes() != ds.num_classes() {
        return Err(Error::validation(format!(
            "classifier has {} classes, dataset has {}",
            clf.num_classes(),
            ds.num_classes()
        ))
        .into());
    }
    let report = match checkpoint {
        Some(p) => {
            let ck: Checkpoint = serde_json::from_str(&read_text(p)?).map_err(Error::from)?;
            if ck.class_names != ds.class_names {
                return Err(Error::validation("checkpoint and dataset class names differ").into());
            }
            let model = SeqVae::<T>::from_checkpoint(&ck)?;
            let classes: Vec<usize> = ds
                .count_per_class()
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(c, _)| c)
                .collect();
            let (_, reference) = extract_features(&clf, &ds.sequences)?;
            evaluate_model(&model, &clf, protocol, &classes, &reference)?
        }
        None => evaluate_ground_truth(&clf, &ds.sequences, protocol)?,
    };
    write_file(out, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    let r = &report;
    Ok(format!(
        "accuracy {:.4} ± {:.4}  fid {:.4} ± {:.4}  diversity {:.4} ± {:.4}  multimodality {:.4} ± {:.4}\n",
        r.accuracy.mean,
        r.accuracy.ci95,
        r.fid.mean,
        r.fid.ci95,
        r.diversity.mean,
        r.diversity.ci95,
        r.multimodality.mean,
        r.multimodality.ci95
    ))
}

pub fn report(runlog: &Path, out: &Path) -> CliResult<String> {
    let log: RunLog = serde_json::from_str(&read_text(runlog)?).map_err(Error::from)?;
    create_dir(out)?;
    let table = summary_table(&log);
    write_file(&out.join("summary.txt"), &table)?;
    write_file(&out.join("accuracy_curves.csv"), accuracy_csv(&log))?;
    write_file(&out.join("accuracy_curves.svg"), accuracy_svg(&log))?;
    Ok(table)
}

pub fn verify(manifest: &Path) -> CliResult<String> {
    let m = RunManifest::load(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let bad = m.verify(dir)?;
    if bad.is_empty() {
        Ok(format!("{} artifacts verified\n", m.artifacts.len()))
    } else {
        let list: Vec<String> = bad.iter().map(|p| p.display().to_string()).collect();
        Err(Error::validation(format!("hash mismatch or missing: {}", list.join(", "))).into())
    }
}
