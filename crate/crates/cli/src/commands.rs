use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mia_audit::audit::{render_auc_scatter, render_delta_heatmap, run_audit, select_members, AuditReport, TrainedModel};
use mia_audit::config::RunConfig;
use mia_audit::corpus::{build_corpus, read_cache, read_records_dir, subject_of, write_cache, write_record, WindowCorpus};
use mia_audit::encoders::{load_checkpoint, pretrain, save_checkpoint, write_train_ids, EncoderConfig, Family};
use mia_audit::attacks::write_score_dump;

use crate::{Cli, Command, FamilyFilter, EXIT_INTERNAL, EXIT_USER};

/// Marks an error as caused by the caller's input.
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

pub(crate) fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() {
            return EXIT_USER;
        }
        if let Some(core) = cause.downcast_ref::<mia_audit::Error>() {
            return if core.is_user_error() { EXIT_USER } else { EXIT_INTERNAL };
        }
    }
    EXIT_INTERNAL
}

pub(crate) fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out } => synth(&load_config(cli)?, out),
        Command::Preprocess { records, cache } => preprocess(records, cache),
        Command::Pretrain { cache, models, families } => {
            let cfg = load_config(cli)?;
            pretrain_all(&cfg, cache, models, &selected(&cfg, families)?)
        }
        Command::Attack {
            cache,
            models,
            out,
            families,
        } => {
            let cfg = load_config(cli)?;
            attack(cli, &cfg, cache, models, out, &selected(&cfg, families)?)
        }
        Command::Report {
            report,
            out,
            clip_negative_adv,
        } => render(report, out, *clip_negative_adv),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| user("this command needs --config <path>"))?;
    Ok(RunConfig::load(path, cli.seed)?.0)
}

fn config_fingerprint(cli: &Cli) -> Result<String> {
    let path = cli.config.as_ref().ok_or_else(|| user("this command needs --config <path>"))?;
    Ok(RunConfig::load(path, cli.seed)?.1)
}

/// Encoder configs selected by `--family`; all of them when none is given.
fn selected(cfg: &RunConfig, filter: &FamilyFilter) -> Result<Vec<EncoderConfig>> {
    if filter.names.is_empty() {
        return Ok(cfg.encoders.clone());
    }
    filter
        .names
        .iter()
        .map(|name| {
            let family: Family = name.parse()?;
            cfg.encoder(family)
                .cloned()
                .ok_or_else(|| user(format!("family {family} is not configured")))
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| user(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.cohorts.is_empty() {
        bail!(user("configuration defines no synthetic cohorts"));
    }
    let mut manifest = String::from("dataset_id,subject_key,record_id\n");
    let mut count = 0;
    for cohort in &cfg.cohorts {
        let dir = out.join(&cohort.dataset_id);
        create_dir(&dir)?;
        for record in cohort.generate(cfg.seed)? {
            write_record(&record, &dir.join(format!("{}.rec", record.record_id)))?;
            let subject = subject_of(&record.dataset_id, &record.record_id)?;
            manifest.push_str(&format!("{},{},{}\n", record.dataset_id, subject.subject_key, record.record_id));
            count += 1;
        }
    }
    write_file(&out.join("manifest.csv"), manifest)?;
    println!("wrote {count} records to {}", out.display());
    Ok(())
}

fn preprocess(records: &Path, cache: &Path) -> Result<()> {
    let raw = read_records_dir(records)?;
    if raw.is_empty() {
        bail!(user(format!("no records found in {}", records.display())));
    }
    let corpus = build_corpus(&raw, None)?;
    if let Some(parent) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_cache(&corpus, cache)?;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in corpus.records() {
        let e = counts.entry(r.dataset_id.as_str()).or_default();
        e.0 += 1;
        e.1 += r.windows.len();
    }
    for (dataset, (records, windows)) in counts {
        println!("{dataset}: {records} records, N={windows} windows");
    }
    Ok(())
}

fn model_dir(models: &Path, dataset: &str, family: Family) -> PathBuf {
    models.join(dataset).join(family.as_str())
}

fn load_corpus(cfg: &RunConfig, cache: &Path) -> Result<WindowCorpus> {
    let corpus = read_cache(cache)?;
    let present = corpus.datasets();
    if let Some(d) = cfg.train_datasets.iter().find(|d| !present.contains(d)) {
        bail!(user(format!("cache {} has no windows of training dataset {d}", cache.display())));
    }
    Ok(corpus)
}

fn pretrain_all(cfg: &RunConfig, cache: &Path, models: &Path, encoders: &[EncoderConfig]) -> Result<()> {
    let corpus = load_corpus(cfg, cache)?;
    for dataset in &cfg.train_datasets {
        let members = select_members(cfg, &corpus, dataset)?;
        for enc in encoders {
            let dir = model_dir(models, dataset, enc.family);
            create_dir(&dir)?;
            let (model, log) = pretrain(enc, &corpus, &members)
                .with_context(|| format!("pretraining {} on {dataset}", enc.family))?;
            save_checkpoint(&model, &dir.join("model.mdl"))?;
            write_train_ids(&dir.join("train_ids.json"), &members)?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in log.epoch_loss.iter().enumerate() {
                csv.push_str(&format!("{},{l:?}\n", i + 1));
            }
            write_file(&dir.join("loss.csv"), csv)?;
            println!(
                "{dataset}/{}: {} members, {} steps, final loss {}",
                enc.family,
                members.len(),
                log.steps,
                log.epoch_loss.last().map_or("n/a".into(), |l| format!("{l:.4}"))
            );
        }
    }
    Ok(())
}

fn attack(
    cli: &Cli,
    cfg: &RunConfig,
    cache: &Path,
    models: &Path,
    out: &Path,
    encoders: &[EncoderConfig],
) -> Result<()> {
    let fingerprint = config_fingerprint(cli)?;
    let corpus = load_corpus(cfg, cache)?;
    let mut trained = Vec::new();
    for dataset in &cfg.train_datasets {
        for enc in encoders {
            let path = model_dir(models, dataset, enc.family).join("model.mdl");
            if !path.is_file() {
                bail!(user(format!("missing checkpoint {}", path.display())));
            }
            let model = load_checkpoint(&path)?;
            if model.config().family != enc.family {
                bail!(user(format!(
                    "{} holds a {} encoder but the configuration expects {}",
                    path.display(),
                    model.config().family,
                    enc.family
                )));
            }
            trained.push(TrainedModel {
                dataset: dataset.clone(),
                model,
            });
        }
    }
    let mut run_cfg = cfg.clone();
    run_cfg.encoders = encoders.to_vec();
    let output = run_audit(&run_cfg, &fingerprint, &corpus, &trained)?;
    let scores = out.join("scores");
    create_dir(&scores)?;
    write_file(&out.join("report.json"), output.report.to_json()?)?;
    write_file(&out.join("cells.csv"), output.report.cells_csv())?;
    for d in &output.dumps {
        write_score_dump(&scores.join(format!("{}.{}.{}.csv", d.dataset, d.family, d.attack)), &d.rows)?;
    }
    for c in &output.report.cells {
        println!(
            "{}/{}/{}: [{:.3}|{:.3}|{:.3}]",
            c.dataset, c.family, c.attack, c.auc, c.tpr_at_alpha, c.adv
        );
    }
    Ok(())
}

fn render(report: &Path, out: &Path, clip_negative_adv: bool) -> Result<()> {
    let report = AuditReport::read(report)?;
    if report.cells.is_empty() {
        return Err(anyhow!(user("report has no cells")));
    }
    create_dir(out)?;
    write_file(&out.join("delta_auc_heatmap.svg"), render_delta_heatmap(&report))?;
    write_file(&out.join("auc_scatter.svg"), render_auc_scatter(&report))?;
    write_file(&out.join("triples.csv"), report.triples_table(clip_negative_adv))?;
    println!("wrote plots to {}", out.display());
    Ok(())
}
