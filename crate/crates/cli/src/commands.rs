use crate::{
    DecodeArgs, ExportCurveArgs, GenToyArgs, LmTrainArgs, PrepareArgs, ScoreArgs, TrainArgs,
    UsageError,
};
use anyhow::{anyhow, bail, Context, Result};
use augasr::augment::{
    estimate_duration_model, filter_corpus, merge_vocabularies,
    write_augmenting_corpus, AugMeta, AugRecord, Lexicon, Phonemizer, Vocab,
};
use augasr::decode::{beam_search_fusion, corpus_cer_wer, DecodeConfig};
use augasr::io::{
    export_curve as curve_csv, gen_toy_corpus, load_manifest, read_feature_dims, read_summaries,
    subset_manifest, ManifestEntry, RunSummary, ToyTaskSpec,
};
use augasr::model::checkpoint::{load_model, load_rnnlm, save_model, save_rnnlm};
use augasr::model::{LmConfig, Model, ModelConfig, RnnLm};
use augasr::train::{
    checkpoint as train_ckpt, corpus_hours, load_aug_corpus, load_utterances, mix_corpora,
    parse_config_str, train_rnnlm, TrainConfig, TrainData, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        out.push(line?);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    Ok(out)
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let entries = load_manifest(&a.speech)?;
    let mut charset: BTreeSet<char> = BTreeSet::new();
    for e in &entries {
        charset.extend(e.text.chars());
    }
    if charset.is_empty() {
        return Err(usage("speech manifest provides an empty character set"));
    }

    let sentences = read_lines(&a.text)?;
    let kept = filter_corpus(&sentences, &charset, a.min_len, a.max_len);
    if kept.is_empty() {
        eprintln!(
            "warning: all {} sentences were filtered out",
            sentences.len()
        );
    }
    eprintln!("kept {} of {} sentences", kept.len(), sentences.len());

    let lexicon = Lexicon::load(&a.lexicon)?;
    let phonemizer = Phonemizer::new(&lexicon, kept.iter().map(|s| s.as_str()));

    let stats: Result<Vec<(String, usize, usize)>> = entries
        .iter()
        .map(|e| {
            let (l, _) = read_feature_dims(&e.feat_path)?;
            Ok((e.id.clone(), l, e.text.chars().count()))
        })
        .collect();
    let duration = estimate_duration_model(&stats?)?;
    eprintln!(
        "duration model: mean {:.3} frames/symbol, std {:.3}",
        duration.mean, duration.std
    );

    let records: Vec<AugRecord> = kept
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let phoneme_ids = if a.expand {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
                augasr::augment::sample_durations(&phonemizer.phonemize(s), &duration, &mut rng)
            } else {
                phonemizer.phonemize(s)
            };
            AugRecord {
                id: format!("aug-{i:06}"),
                phoneme_ids,
                text: s.clone(),
            }
        })
        .collect();

    let meta = AugMeta {
        inventory: phonemizer.inventory().names().to_vec(),
        duration,
        seed: a.seed,
        expanded: a.expand,
    };
    write_augmenting_corpus(&a.out, &records, &meta)?;
    eprintln!("wrote {} examples to {}", records.len(), a.out.display());
    Ok(())
}

pub fn gen_toy(a: GenToyArgs) -> Result<()> {
    if a.min_words > a.max_words {
        return Err(usage("min-words must not exceed max-words"));
    }
    let spec = ToyTaskSpec {
        n_phonemes: a.phonemes,
        n_words: a.n_words,
        feat_dim: a.feat_dim,
        noise_std: a.noise_std,
        dur_mean: a.dur_mean,
        dur_std: a.dur_std,
        sent_words: (a.min_words, a.max_words),
        seed: a.seed,
        ..ToyTaskSpec::default()
    };
    let (paths, _) = gen_toy_corpus(&spec, a.n_train, a.n_dev, a.n_aug, &a.out, a.force)?;
    eprintln!(
        "wrote toy corpus: {} / {} / {}",
        paths.train_manifest.display(),
        paths.dev_manifest.display(),
        paths.aug_text.display()
    );
    Ok(())
}

pub fn lm_train(a: LmTrainArgs) -> Result<()> {
    let entries = load_manifest(&a.speech)?;
    let speech_vocab = Vocab::from_texts(entries.iter().map(|e| e.text.as_str()));
    let sentences: Vec<String> = if let Some(aug) = &a.aug {
        let (records, _) = augasr::augment::read_augmenting_corpus(aug)?;
        records.into_iter().map(|r| r.text).collect()
    } else if let Some(text) = &a.text {
        read_lines(text)?
    } else {
        return Err(usage("lm-train needs --aug or --text"));
    };
    if sentences.is_empty() {
        bail!("no training sentences");
    }
    let text_vocab = Vocab::from_texts(sentences.iter().map(|s| s.as_str()));
    let vocab = merge_vocabularies(&[speech_vocab, text_vocab]);

    let limit = if a.max_sentences == 0 {
        sentences.len()
    } else {
        a.max_sentences.min(sentences.len())
    };
    let tokens: Vec<Vec<u32>> = sentences[..limit].iter().map(|s| vocab.encode(s)).collect();

    let mut lm: RnnLm<f32> = RnnLm::new(
        LmConfig {
            embed_dim: a.embed,
            hidden_dim: a.hidden,
        },
        vocab,
        a.seed,
    );
    let losses = train_rnnlm(&mut lm, &tokens, a.epochs, a.lr, a.grad_clip, a.seed)?;
    for (i, l) in losses.iter().enumerate() {
        eprintln!("epoch {} mean loss {l:.4}", i + 1);
    }
    save_rnnlm(&a.out, &lm)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn parse_corpus_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((lang, path)) => (lang.to_string(), PathBuf::from(path)),
        None => (String::new(), PathBuf::from(spec)),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config_str(&text).map_err(|e| usage(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.pretrain_batches {
        cfg.pretrain_batches = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.grad_clip {
        cfg.grad_clip = v;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if !a.speech.is_empty() {
        cfg.languages = a.speech.clone();
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.languages.is_empty() {
        return Err(usage("no speech corpus: pass --speech or set languages in the config"));
    }

    // load and optionally subset the speech corpora
    let mut corpora: Vec<(String, Vec<ManifestEntry>)> = Vec::new();
    for spec in &cfg.languages {
        let (mut lang, path) = parse_corpus_spec(spec);
        let mut entries = load_manifest(&path)?;
        if lang.is_empty() {
            lang = entries
                .first()
                .map(|e| e.lang.clone())
                .unwrap_or_else(|| "default".into());
        }
        if let Some(fraction) = a.train_fraction {
            entries = subset_manifest(&entries, fraction, a.fraction_seed)?;
        }
        corpora.push((lang, entries));
    }
    let mixed = mix_corpora(&corpora)?;

    // vocabulary: union of speech graphemes and augmenting text
    let mut vocabs = vec![mixed.vocab.clone()];
    let aug_records = match &a.aug {
        Some(path) => {
            let (records, _) = augasr::augment::read_augmenting_corpus(path)?;
            vocabs.push(Vocab::from_texts(records.iter().map(|r| r.text.as_str())));
            Some(records)
        }
        None => None,
    };
    drop(aug_records);
    let vocab = merge_vocabularies(&vocabs);

    let speech = load_utterances(&mixed.entries, &vocab)?;
    let dev = match &a.dev {
        Some(p) => load_utterances(&load_manifest(p)?, &vocab)?,
        None => Vec::new(),
    };
    let aug = match &a.aug {
        Some(p) => Some(load_aug_corpus(p, &vocab)?),
        None => None,
    };
    if cfg.pretrain_batches > 0 && aug.is_none() {
        return Err(usage(
            "pretraining requires --aug (or set pretrain_batches = 0)",
        ));
    }
    let inventory = aug
        .as_ref()
        .map(|x| x.inventory.clone())
        .unwrap_or_else(|| vec!["<wb>".to_string()]);
    let data = TrainData {
        speech,
        dev,
        aug,
        vocab: vocab.clone(),
    };

    std::fs::create_dir_all(&a.out)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => train_ckpt::resume(ckpt, &data)?,
        None => {
            let model_cfg = ModelConfig {
                kind: cfg.mode,
                feat_dim: mixed.feat_dim,
                enc_hidden: a.enc_hidden,
                proj_dim: a.proj_dim,
                dec_hidden: a.dec_hidden,
                dec_embed: a.dec_embed,
                att_dim: a.att_dim,
                att_conv_channels: 10,
                att_conv_width: 5,
                phoneme_embed: a.phoneme_embed,
                aug_hidden: a.aug_hidden,
            };
            let model: Model<f32> = Model::new(model_cfg, vocab, inventory, cfg.seed);
            Trainer::new(model, &data, cfg)?
        }
    };

    let log_path = a.out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(a.resume.is_some())
            .write(true)
            .truncate(a.resume.is_none())
            .open(&log_path)?,
    );
    let mut epoch = trainer.speech_epoch();
    while let Some(rec) = trainer.step()? {
        serde_json::to_writer(&mut log, &rec)?;
        log.write_all(b"\n")?;
        if trainer.speech_epoch() != epoch {
            epoch = trainer.speech_epoch();
            log.flush()?;
            train_ckpt::save_training(&a.out.join("last.ckpt"), &trainer)?;
            if trainer.improved_last_epoch {
                save_model(&a.out.join("best.ckpt"), &trainer.model)?;
            }
            if let Some((_, cer)) = trainer.dev_history.last() {
                eprintln!(
                    "epoch {epoch}: dev CER {cer:.4} (best {:.4})",
                    trainer.best_dev().unwrap_or(*cer)
                );
            }
        }
    }
    log.flush()?;
    train_ckpt::save_training(&a.out.join("last.ckpt"), &trainer)?;
    if !a.out.join("best.ckpt").exists() {
        save_model(&a.out.join("best.ckpt"), &trainer.model)?;
    }

    let summary = RunSummary {
        system: a.system.clone(),
        hours: corpus_hours(&data.speech),
        dev_cer: trainer
            .best_dev()
            .or_else(|| trainer.dev_history.last().map(|(_, c)| *c))
            .unwrap_or(f64::NAN),
        eval_cer: None,
    };
    std::fs::write(
        a.out.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    eprintln!(
        "finished after {} steps, {} epochs",
        trainer.step_count(),
        trainer.speech_epoch()
    );
    Ok(())
}

pub fn decode(a: DecodeArgs) -> Result<()> {
    if a.beam < 1 {
        return Err(usage("beam size must be at least 1"));
    }
    if a.lambda < 0.0 {
        return Err(usage("lambda must be nonnegative"));
    }
    let model = load_model(&a.model)?;
    let lm = match &a.lm {
        Some(p) => Some(load_rnnlm(p)?),
        None => None,
    };
    let entries = load_manifest(&a.manifest)?;
    let utts = load_utterances(&entries, &model.vocab)?;
    let cfg = DecodeConfig {
        beam_size: a.beam,
        lambda: a.lambda,
        max_output_len: a.max_len,
        ..DecodeConfig::default()
    };
    let outs = augasr::par::try_map_ordered(&utts, |u| {
        let mut c = cfg.clone();
        if c.max_output_len == 0 {
            c.max_output_len = 2 * augasr::layers::enc_output_len(u.feats.rows()) + 8;
        }
        beam_search_fusion(&model, lm.as_ref(), &u.feats, &c)
    })
    .map_err(|e| anyhow!(e))?;

    #[derive(serde::Serialize)]
    struct HypLine<'a> {
        id: &'a str,
        hyp: String,
        asr_logp: f64,
        lm_logp: f64,
        score: f64,
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    for (u, (best, _)) in utts.iter().zip(&outs) {
        let line = HypLine {
            id: &u.id,
            hyp: model.vocab.decode(&best.tokens),
            asr_logp: best.asr_logp,
            lm_logp: best.lm_logp,
            score: best.score,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!("decoded {} utterances to {}", utts.len(), a.out.display());
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let pairs: Vec<(String, String)> = if let (Some(r), Some(h)) = (&a.r#ref, &a.hyp) {
        let refs = read_lines(r)?;
        let hyps = read_lines(h)?;
        if refs.len() != hyps.len() {
            return Err(usage(format!(
                "reference has {} lines but hypothesis has {}",
                refs.len(),
                hyps.len()
            )));
        }
        refs.into_iter().zip(hyps).collect()
    } else if let (Some(m), Some(h)) = (&a.manifest, &a.hyp_jsonl) {
        let entries = load_manifest(m)?;
        let mut hyp_map = std::collections::HashMap::new();
        for line in read_lines(h)? {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            let id = v["id"]
                .as_str()
                .ok_or_else(|| anyhow!("hypothesis line without id"))?
                .to_string();
            let hyp = v["hyp"]
                .as_str()
                .ok_or_else(|| anyhow!("hypothesis line without hyp"))?
                .to_string();
            hyp_map.insert(id, hyp);
        }
        entries
            .iter()
            .map(|e| {
                let hyp = hyp_map
                    .get(&e.id)
                    .cloned()
                    .ok_or_else(|| anyhow!("no hypothesis for id {}", e.id))?;
                Ok((e.text.clone(), hyp))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(usage("score needs --ref/--hyp or --manifest/--hyp-jsonl"));
    };

    let (cer, wer) = corpus_cer_wer(&pairs)?;
    println!("CER {cer:.4}");
    println!("WER {wer:.4}");

    if let Some(out) = &a.summary_out {
        let summary = RunSummary {
            system: a.system.clone(),
            hours: a.hours,
            dev_cer: cer,
            eval_cer: None,
        };
        std::fs::write(out, serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(())
}

pub fn export_curve(a: ExportCurveArgs) -> Result<()> {
    let paths: Vec<&Path> = a.summaries.iter().map(|p| p.as_path()).collect();
    let summaries = read_summaries(&paths)?;
    let csv = curve_csv(&summaries);
    std::fs::write(&a.out, csv)?;
    eprintln!("wrote {} rows to {}", summaries.len(), a.out.display());
    Ok(())
}
