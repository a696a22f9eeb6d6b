use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context as _;
use ehr_uq::cohort::{generate_synthetic, split, subgroups as subgroup_labels, CohortError};
use ehr_uq::decide::{counts_at, decide as decide_at, decision_distribution, optimize_threshold, write_decision_csv, DecisionDistribution, DecisionPolicy, DecisionRow};
use ehr_uq::insight::{
    age_partition, cross_subgroup_correlation, entropy_frequency_report, gender_partition, stratified_metrics, uncertainty_by_subgroup,
    write_entropy_csv, write_subgroup_csv, write_subgroup_values_csv, write_uncertainty_csv, InsightError,
};
use ehr_uq::seqmodel::{save_checkpoint, train as fit, train_ensemble as fit_ensemble, EnsembleSpec, Model, TrainOptions};
use ehr_uq::uq::{
    ace, ace_multiclass, auc_pr, auc_roc, bootstrap_ci, dispersion, ece, ece_multiclass, histogram, nll, nll_multiclass, top_k,
    write_histogram_csv, write_metric_csv, MetricReport, PredictionSamples, UqError,
};

use crate::config::{RunConfig, Split, SubgroupMetric};
use crate::data::{load_models, load_split, num_classes, predict, write_dataset, Dataset};
use crate::UsageError;

type RowMetric = Box<dyn Fn(&[Vec<f64>], &[usize]) -> Result<f64, UqError> + Sync>;

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn create(path: PathBuf) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn positive(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r[r.len() - 1]).collect()
}

pub fn generate(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir()?.to_path_buf();
    cfg.generate.validate().map_err(usage)?;
    let (records, mut vocab) = generate_synthetic(&cfg.generate, cfg.seed)?;
    let parts = split(&records, cfg.seed).map_err(|e| match e {
        CohortError::TooFewRecords(_) => usage(e),
        e => e.into(),
    })?;
    vocab.recount(&parts.train);
    write_dataset(&out, &parts, &vocab)?;
    cfg.write_resolved(&out)?;
    log::info!(
        "wrote {} train / {} validation / {} test records and {} tokens to {}",
        parts.train.len(),
        parts.validation.len(),
        parts.test.len(),
        vocab.events.len(),
        out.display()
    );
    Ok(())
}

struct TrainingData {
    train: Dataset,
    val: Dataset,
}

fn training_data(cfg: &RunConfig) -> anyhow::Result<TrainingData> {
    let dir = cfg.data_dir()?;
    Ok(TrainingData {
        train: load_split(dir, Split::Train)?,
        val: load_split(dir, Split::Validation)?,
    })
}

fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        max_epochs: cfg.train.max_epochs,
        patience: cfg.train.patience,
        eval_samples: cfg.train.eval_samples,
    }
}

fn classes(cfg: &RunConfig, data: &TrainingData) -> usize {
    cfg.model
        .classes
        .unwrap_or_else(|| data.train.records.iter().map(|r| r.label + 1).max().unwrap_or(2).max(2))
}

fn write_history(path: PathBuf, history: &ehr_uq::seqmodel::History) -> anyhow::Result<()> {
    let mut out = create(path)?;
    history.write_log(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn train(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let data = training_data(cfg)?;
    let k = classes(cfg, &data);
    let model_cfg = cfg.model.resolve(cfg.profile, k, cfg.seed)?;
    let vocab = &data.train.vocab;
    let mut model = Model::new(model_cfg, vocab.events.len(), vocab.ethnicities.len())?;
    let history = fit(&mut model, &data.train.encoded()?, &data.val.encoded()?, &train_options(cfg))?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    write_history(out.join("history.jsonl"), &history)?;
    cfg.write_resolved(&out)?;
    if let Some(best) = history.best() {
        log::info!("best epoch {} with validation NLL {:.5}", best.epoch, best.val_nll);
    }
    Ok(())
}

pub fn train_ensemble(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    if cfg.train.members == 0 {
        return Err(usage("ensemble size must be positive"));
    }
    let data = training_data(cfg)?;
    let k = classes(cfg, &data);
    let seed_base = *cfg.train.seed_base.get_or_insert(cfg.seed);
    let base = cfg.model.resolve(cfg.profile, k, seed_base)?;
    let spec = EnsembleSpec::new(base, cfg.train.members, seed_base);
    let vocab = &data.train.vocab;
    let (ensemble, histories) = fit_ensemble(
        &spec,
        vocab.events.len(),
        vocab.ethnicities.len(),
        &data.train.encoded()?,
        &data.val.encoded()?,
        &train_options(cfg),
    )?;
    for (i, (member, history)) in ensemble.members.iter().zip(&histories).enumerate() {
        save_checkpoint(member, &out.join(format!("member_{i:03}.ckpt")))?;
        write_history(out.join(format!("history_{i:03}.jsonl")), history)?;
    }
    cfg.write_resolved(&out)?;
    log::info!("trained {} members with seeds {}..", spec.seeds.len(), seed_base);
    Ok(())
}

struct Predictions {
    data: Dataset,
    samples: PredictionSamples<f64>,
    classes: usize,
}

fn predictions(cfg: &RunConfig, models: &[Model], split: Split) -> anyhow::Result<Predictions> {
    let data = load_split(cfg.data_dir()?, split)?;
    if cfg.predict.samples == 0 {
        return Err(usage("samples must be positive"));
    }
    let samples = predict(models, &data.encoded()?, cfg.predict.samples, cfg.seed)?;
    Ok(Predictions {
        data,
        samples,
        classes: num_classes(models),
    })
}

fn metric_suite(classes: usize, bins: usize, k: usize) -> Vec<(String, RowMetric)> {
    let mut suite: Vec<(String, RowMetric)> = Vec::new();
    if classes == 2 {
        suite.push(("auc_pr".into(), Box::new(|r: &[Vec<f64>], l: &[usize]| auc_pr(&positive(r), l))));
        suite.push(("auc_roc".into(), Box::new(|r: &[Vec<f64>], l: &[usize]| auc_roc(&positive(r), l))));
        suite.push(("nll".into(), Box::new(|r: &[Vec<f64>], l: &[usize]| nll(&positive(r), l))));
        suite.push(("ece".into(), Box::new(move |r: &[Vec<f64>], l: &[usize]| ece(&positive(r), l, bins))));
        suite.push(("ace".into(), Box::new(move |r: &[Vec<f64>], l: &[usize]| ace(&positive(r), l, bins))));
    } else {
        let k = k.min(classes);
        suite.push(("nll".into(), Box::new(|r: &[Vec<f64>], l: &[usize]| nll_multiclass(r, l))));
        suite.push(("ece".into(), Box::new(move |r: &[Vec<f64>], l: &[usize]| ece_multiclass(r, l, bins))));
        suite.push(("ace".into(), Box::new(move |r: &[Vec<f64>], l: &[usize]| ace_multiclass(r, l, bins))));
        suite.push((format!("top{k}_recall"), Box::new(move |r: &[Vec<f64>], l: &[usize]| Ok(top_k(r, l, k)?.recall))));
        suite.push((format!("top{k}_precision"), Box::new(move |r: &[Vec<f64>], l: &[usize]| Ok(top_k(r, l, k)?.precision))));
        suite.push((format!("top{k}_f1"), Box::new(move |r: &[Vec<f64>], l: &[usize]| Ok(top_k(r, l, k)?.f1))));
    }
    suite
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn evaluate(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let models = load_models(&cfg.predict.models)?;
    let p = predictions(cfg, &models, cfg.predict.split)?;
    let labels = p.data.labels();
    let suite = metric_suite(p.classes, cfg.evaluate.bins, cfg.evaluate.top_k);
    let split = split_name(cfg.predict.split);

    let marginal = p.samples.marginal();
    let mut reports = Vec::new();
    for (name, metric) in &suite {
        let value = match metric(&marginal, &labels) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{name} undefined on the {split} split: {e}");
                continue;
            }
        };
        let mut report = MetricReport::point(name.as_str(), split, value);
        if cfg.evaluate.bootstrap > 0 {
            let ci = bootstrap_ci(labels.len(), cfg.evaluate.bootstrap, cfg.seed, |idx| {
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| marginal[i].clone()).collect();
                let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                metric(&rows, &l)
            })?;
            report = report.with_ci(ci.lo, ci.hi);
        }
        reports.push(report);
    }
    let mut f = create(out.join("metrics.csv"))?;
    write_metric_csv(&reports, &mut f)?;
    f.flush()?;

    // one row per member or weight draw, then mean and population std
    let m = p.samples.num_samples();
    let table: Vec<Vec<Option<f64>>> = (0..m)
        .map(|i| {
            let rows = p.samples.member(i);
            suite.iter().map(|(_, metric)| metric(&rows, &labels).ok()).collect()
        })
        .collect();
    let mut w = csv::Writer::from_writer(create(out.join("members.csv"))?);
    let mut header = vec!["member".to_string()];
    header.extend(suite.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, row) in table.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    let column = |j: usize| -> Option<Vec<f64>> { table.iter().map(|r| r[j]).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut means = vec!["mean".to_string()];
    let mut stds = vec!["std".to_string()];
    for j in 0..suite.len() {
        let col = column(j);
        means.push(fmt_opt(col.as_deref().map(mean)));
        stds.push(fmt_opt(col.as_deref().map(|c| {
            let mu = mean(c);
            (c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / c.len() as f64).sqrt()
        })));
    }
    w.write_record(&means)?;
    w.write_record(&stds)?;
    w.flush()?;
    cfg.write_resolved(&out)?;
    for r in &reports {
        println!("{}\t{:.5}\t[{:.5}, {:.5}]", r.metric, r.value, r.ci.map_or(f64::NAN, |c| c.0), r.ci.map_or(f64::NAN, |c| c.1));
    }
    Ok(())
}

pub fn uncertainty(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let models = load_models(&cfg.predict.models)?;
    let p = predictions(cfg, &models, cfg.predict.split)?;
    let marginal = p.samples.marginal();
    let mut w = csv::Writer::from_writer(create(out.join("uncertainty.csv"))?);
    w.write_record(["patient_id", "label", "class", "mean", "std", "range"])?;
    let mut stds = Vec::new();
    let mut ranges = Vec::new();
    for (i, rec) in p.data.records.iter().enumerate() {
        let disp = dispersion(&p.samples.example(i));
        let row = &marginal[i];
        let (class, col) = if p.classes == 2 {
            (1, 0)
        } else {
            let c = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            (c, c)
        };
        stds.push(disp.std[col]);
        ranges.push(disp.range[col]);
        w.write_record([
            rec.patient_id.clone(),
            rec.label.to_string(),
            class.to_string(),
            row[col].to_string(),
            disp.std[col].to_string(),
            disp.range[col].to_string(),
        ])?;
    }
    w.flush()?;
    let bins = cfg.uncertainty.histogram_bins;
    for (name, values, hi) in [("std_histogram.csv", &stds, 0.5), ("range_histogram.csv", &ranges, 1.0)] {
        let hist = histogram(values, bins, 0.0, hi).map_err(usage)?;
        let mut f = create(out.join(name))?;
        write_histogram_csv(&hist, &mut f)?;
        f.flush()?;
    }
    if let Some(id) = &cfg.uncertainty.patient {
        let i = p
            .data
            .records
            .iter()
            .position(|r| &r.patient_id == id)
            .ok_or_else(|| usage(format!("patient `{id}` not in the {} split", split_name(cfg.predict.split))))?;
        let mut w = csv::Writer::from_writer(create(out.join("patient_samples.csv"))?);
        let mut header = vec!["sample".to_string()];
        if p.classes == 2 {
            header.push("lambda".into());
        } else {
            header.extend((0..p.classes).map(|c| format!("p{c}")));
        }
        w.write_record(&header)?;
        for s in 0..p.samples.num_samples() {
            let mut rec = vec![s.to_string()];
            rec.extend(p.samples.get(s, i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    cfg.write_resolved(&out)?;
    Ok(())
}

/// Per-member thresholds calibrated on the validation split and the
/// threshold for the marginalized prediction.
struct Calibrated {
    policy: DecisionPolicy,
    mean_threshold: f64,
    recalls: Vec<f64>,
}

fn calibrate(cfg: &RunConfig, models: &[Model]) -> anyhow::Result<Calibrated> {
    let target = cfg.decide.target_recall;
    if !(target > 0.0 && target <= 1.0) {
        return Err(usage(format!("target recall must lie in (0, 1], got {target}")));
    }
    let val = predictions(cfg, models, Split::Validation)?;
    let labels = val.data.labels();
    let policy = DecisionPolicy::calibrate(&val.samples, &labels, target)?;
    let mean_threshold = optimize_threshold(&val.samples.marginal_positive(), &labels, target)?;
    let recalls = (0..val.samples.num_samples())
        .map(|m| counts_at(&val.samples.member_positive(m), &labels, policy.thresholds[m]).recall())
        .collect();
    Ok(Calibrated {
        policy,
        mean_threshold,
        recalls,
    })
}

fn distributions(p: &Predictions, policy: &DecisionPolicy) -> anyhow::Result<Vec<DecisionDistribution>> {
    (0..p.samples.num_examples())
        .map(|i| Ok(decision_distribution(&p.samples.example(i), policy)?))
        .collect()
}

pub fn decide(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let models = load_models(&cfg.predict.models)?;
    if num_classes(&models) != 2 {
        return Err(usage("decisions under a recall requirement need a binary model"));
    }
    let cal = calibrate(cfg, &models)?;
    let p = predictions(cfg, &models, cfg.predict.split)?;
    let dists = distributions(&p, &cal.policy)?;
    let marginal = p.samples.marginal_positive();
    let rows: Vec<DecisionRow> = p
        .data
        .records
        .iter()
        .enumerate()
        .map(|(i, rec)| DecisionRow {
            patient_id: rec.patient_id.clone(),
            mean_lambda: marginal[i],
            std_lambda: dispersion(&p.samples.example(i)).std[0],
            phi: dists[i].phi,
            decision_at_mean: decide_at(marginal[i], cal.mean_threshold),
        })
        .collect();
    let mut f = create(out.join("decisions.csv"))?;
    write_decision_csv(&rows, &mut f)?;
    f.flush()?;
    let mut w = csv::Writer::from_writer(create(out.join("policy.csv"))?);
    w.write_record(["member", "threshold", "validation_recall"])?;
    for (m, (t, r)) in cal.policy.thresholds.iter().zip(&cal.recalls).enumerate() {
        w.write_record([m.to_string(), t.to_string(), r.to_string()])?;
    }
    w.write_record(["marginal".to_string(), cal.mean_threshold.to_string(), String::new()])?;
    w.flush()?;
    cfg.write_resolved(&out)?;
    let uncertain = dists.iter().filter(|d| d.phi > 0.0 && d.phi < 1.0).count();
    log::info!("{uncertain} of {} patients have members disagreeing on the decision", dists.len());
    Ok(())
}

fn subgroup_metric(metric: SubgroupMetric, classes: usize, bins: usize) -> anyhow::Result<RowMetric> {
    let binary = classes == 2;
    Ok(match metric {
        SubgroupMetric::AucPr | SubgroupMetric::AucRoc if !binary => return Err(usage("ranking metrics need a binary model")),
        SubgroupMetric::AucPr => Box::new(|r: &[Vec<f64>], l: &[usize]| auc_pr(&positive(r), l)),
        SubgroupMetric::AucRoc => Box::new(|r: &[Vec<f64>], l: &[usize]| auc_roc(&positive(r), l)),
        SubgroupMetric::Nll if binary => Box::new(|r: &[Vec<f64>], l: &[usize]| nll(&positive(r), l)),
        SubgroupMetric::Nll => Box::new(|r: &[Vec<f64>], l: &[usize]| nll_multiclass(r, l)),
        SubgroupMetric::Ece if binary => Box::new(move |r: &[Vec<f64>], l: &[usize]| ece(&positive(r), l, bins)),
        SubgroupMetric::Ece => Box::new(move |r: &[Vec<f64>], l: &[usize]| ece_multiclass(r, l, bins)),
        SubgroupMetric::Accuracy => Box::new(move |r: &[Vec<f64>], l: &[usize]| {
            if r.is_empty() {
                return Err(UqError::Empty("accuracy"));
            }
            let predicted = |row: &Vec<f64>| {
                if binary {
                    (row[0] >= 0.5) as usize
                } else {
                    (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
                }
            };
            Ok(r.iter().zip(l).filter(|(row, &y)| predicted(row) == y).count() as f64 / r.len() as f64)
        }),
    })
}

pub fn subgroups(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let models = load_models(&cfg.predict.models)?;
    let p = predictions(cfg, &models, cfg.predict.split)?;
    let labels = p.data.labels();
    let groups = subgroup_labels(&p.data.records);
    let partition = [gender_partition(&groups), age_partition(&groups)].concat();
    let metric = subgroup_metric(cfg.subgroups.metric, p.classes, cfg.evaluate.bins)?;
    let reports = stratified_metrics(&p.samples, &labels, &partition, metric)?;
    let mut f = create(out.join("subgroup_values.csv"))?;
    write_subgroup_values_csv(&reports, &mut f)?;
    f.flush()?;
    let mut f = create(out.join("subgroups.csv"))?;
    write_subgroup_csv(&reports, &mut f)?;
    f.flush()?;

    let mut w = csv::Writer::from_writer(create(out.join("correlations.csv"))?);
    w.write_record(["subgroup_a", "subgroup_b", "pearson_r", "note"])?;
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            let (r, note) = match cross_subgroup_correlation(a, b) {
                Ok(r) => (r.to_string(), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            w.write_record([a.subgroup.as_str(), b.subgroup.as_str(), &r, &note])?;
        }
    }
    w.flush()?;

    if p.classes == 2 {
        let cal = calibrate(cfg, &models)?;
        let dists = distributions(&p, &cal.policy)?;
        let pus: Vec<_> = (0..p.samples.num_examples()).map(|i| p.samples.example(i)).collect();
        let summary = uncertainty_by_subgroup(&pus, &dists, &partition)?;
        let mut f = create(out.join("subgroup_uncertainty.csv"))?;
        write_uncertainty_csv(&summary, &mut f)?;
        f.flush()?;
    } else {
        log::warn!("decision variance needs a binary model; subgroup uncertainty skipped");
    }
    cfg.write_resolved(&out)?;
    Ok(())
}

pub fn embeddings(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let models = load_models(&cfg.predict.models)?;
    let [model] = models.as_slice() else {
        return Err(usage("embeddings take exactly one checkpoint"));
    };
    let vocab = crate::data::read_vocabulary(cfg.data_dir()?)?;
    let ranking = entropy_frequency_report(model, &vocab).map_err(|e| match e {
        InsightError::NotStochastic | InsightError::LengthMismatch { .. } => usage(e),
        e => e.into(),
    })?;
    for (name, rows) in [
        ("entropy_ranking.csv", &ranking.rows[..]),
        ("entropy_top.csv", ranking.top(cfg.embeddings.top)),
        ("entropy_bottom.csv", ranking.bottom(cfg.embeddings.bottom)),
    ] {
        let mut f = create(out.join(name))?;
        write_entropy_csv(rows, &mut f)?;
        f.flush()?;
    }
    let mut w = csv::Writer::from_writer(create(out.join("entropy_summary.csv"))?);
    w.write_record(["statistic", "value"])?;
    w.write_record(["tokens".to_string(), ranking.rows.len().to_string()])?;
    w.write_record(["pearson_r_log10_count".to_string(), fmt_opt(ranking.correlation)])?;
    w.flush()?;
    cfg.write_resolved(&out)?;
    match ranking.correlation {
        Some(r) => println!("pearson r(entropy, log10(count+1)) = {r:.4}"),
        None => println!("pearson r undefined: entropy or counts are constant"),
    }
    Ok(())
}

