use cl2gen_core::body::Skeleton;
use cl2gen_core::classifier::{pretrain_classifier, ClassifierConfig};
use cl2gen_core::metrics::EvalProtocol;
use cl2gen_core::motion::split_tasks;
use cl2gen_core::seqvae::{ModelConfig, SeqVae};
use cl2gen_core::synth::{synth_generate, SynthSpec};
use cl2gen_core::trainer::{run_cl2gen, RunSetup, TrainConfig};
use cl2gen_core::{DatasetF32, DatasetF64, ReplayConfig, Scalar};
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_run<T: Scalar>(ds: &cl2gen_core::Dataset<T>) -> (cl2gen_core::RunLog, SeqVae<T>, Vec<String>) {
    let clf = pretrain_classifier(
        ds,
        &ClassifierConfig {
            epochs: 5,
            ..ClassifierConfig::default()
        },
    )
    .unwrap();
    let schedule = split_tasks(ds, 2, None).unwrap();
    let setup = RunSetup {
        dataset: ds,
        schedule: &schedule,
        model: ModelConfig {
            num_classes: 6,
            layers: 1,
            hidden: 8,
            latent: 4,
        },
        train: TrainConfig {
            epochs_per_task: 2,
            replay: Some(ReplayConfig::new(Ratio::new(1, 5))),
            ..TrainConfig::desk()
        },
        protocol: EvalProtocol {
            samples_per_class: 4,
            repetitions: 2,
            ..EvalProtocol::default()
        },
        classifier: &clf,
    };
    let mut hashes = Vec::new();
    let out = run_cl2gen(&setup, &mut |end| {
        hashes.push(end.model.hash());
        Ok(())
    })
    .unwrap();
    (out.log, out.model, hashes)
}

#[test]
fn three_task_run_in_both_precisions() {
    let spec = SynthSpec::new(6, 10, (20, 24), 3);
    let ds64: DatasetF64 = synth_generate(&spec, &Skeleton::smpl()).unwrap();
    let ds32: DatasetF32 = ds64.cast();

    for (log, hashes, final_hash) in [
        {
            let (l, m, h) = small_run(&ds64);
            (l, h, m.hash())
        },
        {
            let (l, m, h) = small_run(&ds32);
            (l, h, m.hash())
        },
    ] {
        assert_eq!(log.tasks.len(), 3);
        assert_eq!(log.accuracy_matrix.len(), 3);
        assert!(log.accuracy_matrix.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
        assert_eq!(hashes.last(), Some(&final_hash));
        for (k, rec) in log.tasks.iter().enumerate() {
            assert_eq!(rec.snapshot_hash, hashes[k]);
            assert_eq!(rec.loss_curve.len(), 2);
            assert_eq!(rec.seen_classes.len(), 2 * (k + 1));
            match &rec.replay {
                None => assert_eq!(k, 0),
                Some(audit) => {
                    assert_eq!(audit.generator_hash.as_ref(), Some(&hashes[k - 1]));
                    assert!(audit.counts.values().all(|&n| n == 2));
                    assert_eq!(audit.labels, (0..2 * k).collect::<Vec<_>>());
                }
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_generation() {
    let model = SeqVae::<f32>::new(ModelConfig::desk(3), 5).unwrap();
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    model.to_checkpoint(&names, None).save(&path).unwrap();
    let back = SeqVae::<f32>::from_checkpoint(&cl2gen_core::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.hash(), model.hash());
    let gen = |m: &SeqVae<f32>| m.generate(1, 12, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(gen(&model), gen(&back));
}
