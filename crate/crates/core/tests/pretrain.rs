use std::collections::BTreeSet;
use std::sync::Mutex;

use mia_audit::corpus::{build_corpus, generate_synth_subject, SubjectId, SynthSubjectParams, WindowCorpus, WindowSource};
use mia_audit::encoders::{encode_checkpoint, pretrain, read_train_ids, write_train_ids, EncoderConfig, Family};

fn corpus(subjects: usize, duration_s: f64) -> WindowCorpus {
    let records: Vec<_> = (0..subjects)
        .map(|i| {
            let params = SynthSubjectParams {
                heart_rate: 55.0 + 4.0 * i as f64,
                qrs_amplitude: 1.0 + 0.05 * i as f64,
                t_wave_amplitude: 0.3,
                baseline_wander_freq: 0.2,
                baseline_wander_amplitude: 0.1,
                noise_std: 0.05,
                morphology_seed: i as u64,
                morphology_center: None,
                morphology_dispersion: 1.0,
            };
            generate_synth_subject("synth", &format!("s{i:02}"), &params, 360, duration_s, 100 + i as u64).unwrap()
        })
        .collect();
    build_corpus(&records, None).unwrap()
}

#[test]
fn loss_falls_for_every_family() {
    let corpus = corpus(10, 300.0);
    let subjects: BTreeSet<SubjectId> = corpus.subjects().into_iter().collect();
    for family in Family::ALL {
        let (_, log) = pretrain(&EncoderConfig::desk(family), &corpus, &subjects).unwrap();
        assert_eq!(log.epoch_loss.len(), 5);
        assert!(
            log.epoch_loss[4] < log.epoch_loss[0],
            "{family}: {:?}",
            log.epoch_loss
        );
    }
}

#[test]
fn pretraining_is_bitwise_reproducible() {
    let corpus = corpus(4, 30.0);
    let subjects: BTreeSet<SubjectId> = corpus.subjects().into_iter().collect();
    for family in Family::ALL {
        let mut cfg = EncoderConfig::desk(family);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        let (a, _) = pretrain(&cfg, &corpus, &subjects).unwrap();
        let (b, _) = pretrain(&cfg, &corpus, &subjects).unwrap();
        assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap(), "{family}");
    }
}

struct LoggingSource<'a> {
    inner: &'a WindowCorpus,
    reads: Mutex<Vec<SubjectId>>,
}

impl WindowSource for LoggingSource<'_> {
    fn subjects(&self) -> Vec<SubjectId> {
        self.inner.subjects()
    }

    fn windows_of(&self, subject: &SubjectId) -> Vec<&[f64]> {
        self.reads.lock().unwrap().push(subject.clone());
        self.inner.windows_of(subject)
    }
}

#[test]
fn only_training_subjects_are_read_and_recorded() {
    let corpus = corpus(6, 20.0);
    let all = corpus.subjects();
    let train: BTreeSet<SubjectId> = all.iter().take(3).cloned().collect();
    let source = LoggingSource {
        inner: &corpus,
        reads: Mutex::new(Vec::new()),
    };
    let mut cfg = EncoderConfig::desk(Family::SimclrCnn);
    cfg.epochs = 1;
    let (model, _) = pretrain(&cfg, &source, &train).unwrap();
    let read: BTreeSet<SubjectId> = source.reads.into_inner().unwrap().into_iter().collect();
    assert!(read.is_subset(&train), "read {read:?}");
    assert_eq!(model.train_subjects(), &train);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train_ids.json");
    write_train_ids(&path, model.train_subjects()).unwrap();
    assert_eq!(read_train_ids(&path).unwrap(), train);
}

#[test]
fn empty_or_unknown_training_sets_are_rejected() {
    let corpus = corpus(2, 20.0);
    let cfg = EncoderConfig::desk(Family::MaeCnn);
    assert!(pretrain(&cfg, &corpus, &BTreeSet::new()).is_err());
    let ghost: BTreeSet<SubjectId> = ["other/x".parse().unwrap()].into();
    let err = pretrain(&cfg, &corpus, &ghost).unwrap_err();
    assert!(err.to_string().contains("other/x"));
}

#[test]
fn untrained_model_keeps_initial_parameters() {
    let corpus = corpus(2, 20.0);
    let subjects: BTreeSet<SubjectId> = corpus.subjects().into_iter().collect();
    let mut cfg = EncoderConfig::desk(Family::Ts2vec);
    cfg.epochs = 0;
    let (model, log) = pretrain(&cfg, &corpus, &subjects).unwrap();
    assert!(log.epoch_loss.is_empty());
    let fresh = mia_audit::encoders::EncoderModel::init(&cfg).unwrap();
    assert_eq!(model.params().values(), fresh.params().values());
}
