//! Subcommand implementations. Each one loads its inputs, delegates to
//! the library, and writes JSON artifacts stamped with the run
//! manifest hash.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use dupdist_core::baseline::{evaluate_lr, features_for_pairs, train_lr, LrConfig, NgramFeaturizer};
use dupdist_core::clustering::{cluster_feature_map, kmeans, purity, top_words_tfidf};
use dupdist_core::config::HyperConfig;
use dupdist_core::corpus::io::{
    load_reports, read_pairs, resolve_pairs, write_jsonl_with_header, write_pairs_with_manifest,
};
use dupdist_core::corpus::synth::generate_synthetic;
use dupdist_core::corpus::{generate_pairs, split_pairs, Corpus, PairExample, Report};
use dupdist_core::manifest::{fingerprint_file, synthetic_fingerprint, RunManifest};
use dupdist_core::model::{
    infer_report, inspect_pair, load_checkpoint, save_checkpoint, LoadedModel, ModelParams,
};
use dupdist_core::tensor::Tensor;
use dupdist_core::trainer::train_multi_seed_with;
use dupdist_core::{Error, Result};

use crate::output::{attention_table, dot_graph, write_json};
use crate::{
    AttentionArgs, BaselineArgs, ClusterArgs, EvalArgs, IngestArgs, PairsGenArgs, SynthArgs,
    TrainArgs,
};

fn load_corpus(args: &crate::DatasetArgs, min_freq: usize) -> Result<Corpus> {
    Corpus::load(&args.dataset, args.format.into(), min_freq)
}

/// Corpus tokenized with a checkpoint's vocabulary, ready for scoring.
fn load_scoring_corpus(args: &crate::DatasetArgs, loaded: &LoadedModel) -> Result<Corpus> {
    let mut corpus = load_corpus(args, 1)?;
    corpus.retokenize(loaded.vocab.clone());
    Ok(corpus)
}

fn load_pairs(corpus: &Corpus, path: &Path) -> Result<Vec<PairExample>> {
    resolve_pairs(corpus, &read_pairs(path)?)
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let raw = load_reports(&args.dataset.dataset, args.dataset.format.into())?;
    let corpus = Corpus::build(raw.clone(), args.min_freq)?;

    let config = HyperConfig { min_freq: args.min_freq, ..HyperConfig::default() };
    let mut manifest = RunManifest::new(
        "ingest",
        config,
        vec![],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["reports.jsonl".into(), "ingest.json".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    let header = json!({ "manifest_hash": hash, "manifest": manifest });
    write_jsonl_with_header(&args.out.join("reports.jsonl"), &raw, Some(&header))?;

    let multi_groups = corpus.groups.groups().iter().filter(|g| g.len() > 1).count();
    let stats = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "reports": raw.len(),
        "retained": corpus.reports.len(),
        "dropped_empty": corpus.dropped_empty,
        "vocab_size": corpus.vocab.size(),
        "duplicate_groups": corpus.groups.groups().len(),
        "multi_report_groups": multi_groups,
    });
    write_json(&args.out.join("ingest.json"), &stats)?;

    println!(
        "ingested {} reports ({} retained, {} empty), vocab {}, {} duplicate groups ({} non-trivial)",
        raw.len(),
        corpus.reports.len(),
        corpus.dropped_empty,
        corpus.vocab.size(),
        corpus.groups.groups().len(),
        multi_groups,
    );
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let synth =
        generate_synthetic(args.topics, args.per_topic, args.dup_rate, args.vocab_per_topic, args.seed)?;

    let mut manifest = RunManifest::new(
        "synth",
        HyperConfig::default(),
        vec![args.seed],
        synthetic_fingerprint(args.topics, args.per_topic, args.dup_rate, args.seed),
    );
    manifest.outputs = vec!["reports.jsonl".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    let header = json!({ "manifest_hash": hash, "manifest": manifest });
    write_jsonl_with_header(&args.out.join("reports.jsonl"), &synth.reports, Some(&header))?;

    let dups = synth.reports.iter().filter(|r| !r.duplicate_of.is_empty()).count();
    println!(
        "wrote {} synthetic reports over {} topics ({} duplicates) to {}",
        synth.reports.len(),
        args.topics,
        dups,
        args.out.join("reports.jsonl").display(),
    );
    Ok(())
}

pub fn pairs_gen(args: PairsGenArgs) -> Result<()> {
    let corpus = load_corpus(&args.dataset, 1)?;
    let pairs = generate_pairs(&corpus, args.dup_fraction, args.seed)?;

    let config = HyperConfig { target_dup_fraction: args.dup_fraction, ..HyperConfig::default() };
    let mut manifest = RunManifest::new(
        "pairs-gen",
        config,
        vec![args.seed],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["pairs.tsv".into(), "pairs-gen.json".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    write_pairs_with_manifest(&args.out.join("pairs.tsv"), &corpus, &pairs, Some(&hash))?;

    let positives = pairs.iter().filter(|p| p.duplicate).count();
    let gated = pairs.iter().filter(|p| !p.duplicate && !p.no_content_overlap).count();
    let meta = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "pairs": pairs.len(),
        "positives": positives,
        "negatives": pairs.len() - positives,
        "overlapping_negatives": gated,
    });
    write_json(&args.out.join("pairs-gen.json"), &meta)?;

    println!(
        "wrote {} pairs ({} duplicate, {} clean negatives) to {}",
        pairs.len(),
        positives,
        pairs.len() - positives,
        args.out.join("pairs.tsv").display(),
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => HyperConfig::from_json_file(path)?,
        None => HyperConfig::default(),
    };
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(s) = args.sim_sign {
        config.sim_sign = s.into();
    }
    if let Some(c) = args.cond_attn {
        config.cond_attn = c.into();
    }
    if let Some(f) = args.dup_fraction {
        config.target_dup_fraction = f;
    }
    config.validate()?;

    let corpus = load_corpus(&args.dataset, config.min_freq)?;
    let pairs = match &args.pairs {
        Some(path) => load_pairs(&corpus, path)?,
        None => generate_pairs(&corpus, config.target_dup_fraction, config.seeds[0])?,
    };

    let outcome = train_multi_seed_with(&config, &corpus, &pairs, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = match &args.embeddings {
            Some(path) => ModelParams::init_pretrained(&config, &corpus.vocab, path, &mut rng)?,
            None => ModelParams::init(&config, corpus.vocab.size(), &mut rng)?,
        };
        if args.freeze_embeddings {
            model.embedding.trainable = false;
        }
        Ok(model)
    })?;

    let mut manifest = RunManifest::new(
        "train",
        config.clone(),
        config.seeds.clone(),
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["model.ckpt".into(), "train_report.json".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    save_checkpoint(&args.out.join("model.ckpt"), &outcome.model, &corpus.vocab, &hash)?;
    let report = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "best_seed": outcome.best_seed,
        "mean_test": outcome.mean_test,
        "per_seed": outcome.per_seed,
    });
    write_json(&args.out.join("train_report.json"), &report)?;

    for r in &outcome.per_seed {
        let t = r.test.expect("driver fills test metrics");
        println!(
            "seed {}: test P {:.4} R {:.4} F1 {:.4} (best val F1 {:.4} at epoch {}, {:?})",
            r.seed, t.precision, t.recall, t.f1, r.best_val_f1, r.best_epoch, r.status,
        );
    }
    let m = outcome.mean_test;
    println!(
        "mean over {} trials: P {:.4} R {:.4} F1 {:.4}; checkpoint {}",
        outcome.per_seed.len(),
        m.precision,
        m.recall,
        m.f1,
        args.out.join("model.ckpt").display(),
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let stored = &loaded.model.config;

    if let Some(path) = &args.config {
        let file = HyperConfig::from_json_file(path)?;
        if &file != stored {
            return Err(Error::Config(
                "--config disagrees with the hyperparameters stored in the checkpoint".into(),
            ));
        }
    }
    if let Some(l) = args.lambda {
        if l != stored.lambda {
            return Err(Error::Config(format!(
                "--lambda {l} disagrees with the checkpoint's lambda {}",
                stored.lambda
            )));
        }
    }
    if let Some(s) = args.sim_sign {
        let s: dupdist_core::config::SimSign = s.into();
        if s != stored.sim_sign {
            return Err(Error::Config(
                "--sim-sign disagrees with the sign convention stored in the checkpoint".into(),
            ));
        }
    }
    if let Some(c) = args.cond_attn {
        let c: dupdist_core::config::CondAttnMode = c.into();
        if c != stored.cond_attn {
            return Err(Error::Config(
                "--cond-attn disagrees with the attention mode stored in the checkpoint".into(),
            ));
        }
    }

    let corpus = load_scoring_corpus(&args.dataset, &loaded)?;
    let pairs = load_pairs(&corpus, &args.pairs)?;
    let metrics = dupdist_core::trainer::evaluate(&loaded.model, &corpus, &pairs)?;

    let mut manifest = RunManifest::new(
        "eval",
        stored.clone(),
        vec![],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["metrics.json".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    let positives = pairs.iter().filter(|p| p.duplicate).count();
    let artifact = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "checkpoint_manifest_hash": loaded.manifest_hash,
        "pairs": pairs.len(),
        "positives": positives,
        "metrics": metrics,
    });
    write_json(&args.out.join("metrics.json"), &artifact)?;

    println!(
        "P {:.4} R {:.4} F1 {:.4} on {} pairs ({} duplicate)",
        metrics.precision,
        metrics.recall,
        metrics.f1,
        pairs.len(),
        positives,
    );
    Ok(())
}

pub fn cluster(args: ClusterArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let corpus = load_scoring_corpus(&args.dataset, &loaded)?;

    let (scope_idx, scope_name): (Vec<usize>, &str) = match (&args.pairs, args.all) {
        (Some(path), false) => {
            let pairs = load_pairs(&corpus, path)?;
            let set: BTreeSet<usize> = pairs.iter().flat_map(|p| [p.p, p.q]).collect();
            (set.into_iter().collect(), "pairs")
        }
        _ => ((0..corpus.reports.len()).collect(), "all"),
    };

    let dim = 2 * loaded.model.config.topic_dims;
    let mut data = Vec::with_capacity(scope_idx.len() * dim);
    for &i in &scope_idx {
        let (theta, _) = infer_report(&loaded.model, &corpus.reports[i].tokens)?;
        data.extend(theta);
    }
    let points = Tensor::from_vec(&[scope_idx.len(), dim], data)?;
    let assignment = kmeans(&points, args.k, args.seed)?;

    let labels: Vec<Option<String>> =
        scope_idx.iter().map(|&i| corpus.reports[i].feature_label.clone()).collect();
    let labeled = labels.iter().filter(|l| l.is_some()).count();
    let purity_score = if labeled == labels.len() {
        Some(purity(&assignment, &labels)?)
    } else {
        if labeled > 0 {
            log::warn!("{} of {} reports lack feature labels; purity skipped", labels.len() - labeled, labels.len());
        }
        None
    };
    let edges = if labeled > 0 { cluster_feature_map(&assignment, &labels)? } else { Vec::new() };

    let members = assignment.members();
    let cluster_reports: Vec<Vec<&Report>> = members
        .iter()
        .map(|rows| rows.iter().map(|&r| &corpus.reports[scope_idx[r]]).collect())
        .collect();
    let top_words = top_words_tfidf(&cluster_reports, 5);

    let mut manifest = RunManifest::new(
        "cluster",
        loaded.model.config.clone(),
        vec![args.seed],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["clusters.jsonl".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    let mut lines = Vec::new();
    lines.push(
        json!({
            "manifest_hash": hash,
            "manifest": manifest,
            "checkpoint_manifest_hash": loaded.manifest_hash,
            "k": args.k,
            "num_reports": scope_idx.len(),
            "scope": scope_name,
            "purity": purity_score,
        })
        .to_string(),
    );
    for (c, rows) in members.iter().enumerate() {
        let feature_edges: Vec<_> = edges
            .iter()
            .filter(|e| e.cluster == c)
            .map(|e| json!({ "feature": e.feature, "support": e.support }))
            .collect();
        lines.push(
            json!({
                "cluster_id": c,
                "size": rows.len(),
                "top_words": top_words[c],
                "feature_edges": feature_edges,
            })
            .to_string(),
        );
    }
    fs::write(&args.out.join("clusters.jsonl"), lines.join("\n") + "\n")?;

    if let Some(dot_path) = &args.dot {
        fs::write(dot_path, dot_graph(&edges))?;
    }

    match purity_score {
        Some(p) => println!(
            "k={} over {} reports ({scope_name}), purity {:.4}, {} feature edges",
            args.k,
            scope_idx.len(),
            p,
            edges.len(),
        ),
        None => println!(
            "k={} over {} reports ({scope_name}), {} feature edges",
            args.k,
            scope_idx.len(),
            edges.len(),
        ),
    }
    for (c, words) in top_words.iter().enumerate() {
        println!("cluster {c} ({} reports): {}", members[c].len(), words.join(", "));
    }
    Ok(())
}

pub fn baseline(args: BaselineArgs) -> Result<()> {
    let corpus = load_corpus(&args.dataset, 1)?;
    let pairs = match &args.pairs {
        Some(path) => load_pairs(&corpus, path)?,
        None => generate_pairs(&corpus, args.dup_fraction, args.seed)?,
    };
    let (tr, _va, te) = split_pairs(&pairs, (0.8, 0.1, 0.1), args.seed)?;

    let train_reports: BTreeSet<usize> = tr.iter().flat_map(|p| [p.p, p.q]).collect();
    let featurizer = NgramFeaturizer::fit(train_reports.iter().map(|&i| &corpus.reports[i]));
    let (f_tr, l_tr) = features_for_pairs(&featurizer, &corpus, &tr);
    let (f_te, l_te) = features_for_pairs(&featurizer, &corpus, &te);

    let lr_config = LrConfig { class_weighted: !args.unweighted, ..LrConfig::default() };
    let model = train_lr(&f_tr, &l_tr, 2 * featurizer.num_features(), &lr_config)?;
    let train_metrics = evaluate_lr(&model, &f_tr, &l_tr)?;
    let test_metrics = evaluate_lr(&model, &f_te, &l_te)?;

    let mut manifest = RunManifest::new(
        "baseline",
        HyperConfig { target_dup_fraction: args.dup_fraction, ..HyperConfig::default() },
        vec![args.seed],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["baseline_metrics.json".into()];
    let hash = manifest.hash();

    fs::create_dir_all(&args.out)?;
    let artifact = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "ngram_features": featurizer.num_features(),
        "class_weighted": lr_config.class_weighted,
        "train_pairs": tr.len(),
        "test_pairs": te.len(),
        "train": train_metrics,
        "test": test_metrics,
    });
    write_json(&args.out.join("baseline_metrics.json"), &artifact)?;

    println!(
        "n-gram LR: train F1 {:.4}, test P {:.4} R {:.4} F1 {:.4} ({} features)",
        train_metrics.f1,
        test_metrics.precision,
        test_metrics.recall,
        test_metrics.f1,
        featurizer.num_features(),
    );
    Ok(())
}

pub fn attention(args: AttentionArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let corpus = load_scoring_corpus(&args.dataset, &loaded)?;

    let find = |id: &str| -> Result<usize> {
        corpus.index_of(id).ok_or_else(|| Error::Data(format!("unknown report id {id:?}")))
    };
    let p = find(&args.p_id)?;
    let q = find(&args.q_id)?;

    let out = inspect_pair(&loaded.model, &corpus.reports[p].tokens, &corpus.reports[q].tokens)?;

    let side = |idx: usize, alpha: &[f64], beta: &Tensor| {
        let report = &corpus.reports[idx];
        let rows: Vec<(String, f64, f64)> = report
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let beta_mean = beta.row(i).iter().sum::<f64>() / beta.cols() as f64;
                (w.clone(), alpha[i], beta_mean)
            })
            .collect();
        rows
    };
    let rows_p = side(p, &out.alpha_p, &out.beta_p);
    let rows_q = side(q, &out.alpha_q, &out.beta_q);

    let mut manifest = RunManifest::new(
        "attention",
        loaded.model.config.clone(),
        vec![],
        fingerprint_file(&args.dataset.dataset)?,
    );
    manifest.outputs = vec!["attention.json".into()];
    let hash = manifest.hash();

    let row_json = |rows: &[(String, f64, f64)]| -> Vec<serde_json::Value> {
        rows.iter()
            .map(|(w, a, b)| json!({ "word": w, "alpha": a, "beta_mean": b }))
            .collect()
    };
    fs::create_dir_all(&args.out)?;
    let artifact = json!({
        "manifest_hash": hash,
        "manifest": manifest,
        "checkpoint_manifest_hash": loaded.manifest_hash,
        "rhat": out.rhat,
        "p": { "id": corpus.reports[p].id, "title": corpus.reports[p].title_text, "words": row_json(&rows_p) },
        "q": { "id": corpus.reports[q].id, "title": corpus.reports[q].title_text, "words": row_json(&rows_q) },
    });
    write_json(&args.out.join("attention.json"), &artifact)?;

    println!("r-hat {:.4} for ({}, {})", out.rhat, corpus.reports[p].id, corpus.reports[q].id);
    print!("{}", attention_table(&corpus.reports[p].id, &rows_p));
    print!("{}", attention_table(&corpus.reports[q].id, &rows_q));
    Ok(())
}
