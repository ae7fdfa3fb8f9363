//! Acceptance suite: one test per criterion, each printing a PASS
//! line (visible with `--nocapture`). The toy-task experiments at the
//! bottom train real models and take a few minutes each; everything
//! else is fast.

use augasr::augment::{
    estimate_duration_model, merge_vocabularies, sample_durations, DurationModel, Vocab,
};
use augasr::decode::{
    beam_search_fusion, corpus_cer_wer, edit_distance, fuse_score, greedy_decode, DecodeConfig,
    DecodeOutput, LengthRule,
};
use augasr::layers::enc_output_len;
use augasr::model::forward::{decoder_advance, initial_step_state};
use augasr::model::{
    asr_log_likelihood, encode_speech, mmda_log_likelihood, psda_log_likelihood, Model,
    ModelConfig, ModelKind, ParamGroup,
};
use augasr::tensor::{finite_diff_check, Graph, Tensor, FD_ATOL_F64};
use augasr::train::draw_task;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

mod toyruns;

fn tiny_cfg(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        feat_dim: 4,
        enc_hidden: 3,
        proj_dim: 3,
        dec_hidden: 3,
        dec_embed: 2,
        att_dim: 3,
        att_conv_channels: 2,
        att_conv_width: 3,
        phoneme_embed: 2,
        aug_hidden: 3,
    }
}

fn tiny_model(kind: ModelKind, seed: u64) -> Model<f64> {
    Model::new(
        tiny_cfg(kind),
        Vocab::from_texts(["abcd"]),
        vec!["<wb>".into(), "p1".into(), "p2".into()],
        seed,
    )
}

fn rand_feats(rng: &mut StdRng, l: usize, d: usize) -> Tensor<f64> {
    let data = (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![l, d], data).unwrap()
}

/// Finite-difference check of one parameter group against a loss
/// builder, sweeping every coordinate of the group.
fn fd_check_group<F>(model: &Model<f64>, group: ParamGroup, eval: F) -> f64
where
    F: Fn(&Model<f64>, bool) -> (f64, Vec<f64>),
{
    let (_, analytic) = eval(model, true);
    let mut flat: Vec<f64> = model
        .visit()
        .into_iter()
        .filter(|(_, g, _)| *g == group)
        .flat_map(|(_, _, t)| t.data().to_vec())
        .collect();
    assert_eq!(flat.len(), analytic.len());
    let mut probe = model.clone();
    finite_diff_check(&mut flat, &analytic, 1e-4, FD_ATOL_F64, None, |vals| {
        let mut off = 0;
        for (_, g, t) in probe.visit_mut() {
            if g == group {
                let n = t.len();
                t.data_mut().copy_from_slice(&vals[off..off + n]);
                off += n;
            }
        }
        eval(&probe, false).0
    })
}

fn group_grads(model: &Model<f64>, g: &Graph<f64>, bound: &augasr::model::BoundModel, group: ParamGroup) -> Vec<f64> {
    let ids = bound.param_ids();
    let mut out = Vec::new();
    for ((_, pg, t), id) in model.visit().into_iter().zip(ids) {
        if pg == group {
            match g.grad(id) {
                Some(gt) => out.extend_from_slice(gt.data()),
                None => out.extend(std::iter::repeat(0.0).take(t.len())),
            }
        }
    }
    out
}

// criterion 1: finite-difference integrity over every parameter group
#[test]
fn criterion_01_gradient_integrity() {
    let mut rng = StdRng::seed_from_u64(101);
    let feats = rand_feats(&mut rng, 6, 4);
    let aug_input = vec![0u32, 1, 2, 1, 2];

    // speech objective covers enc/att/dec
    let m = tiny_model(ModelKind::Mmda, 11);
    let y = m.vocab.encode("abc");
    for group in [ParamGroup::Enc, ParamGroup::Att, ParamGroup::Dec] {
        let err = fd_check_group(&m, group, |probe, grads| {
            let mut g = Graph::new();
            let b = probe.bind(&mut g, true);
            let loss = asr_log_likelihood(&mut g, probe, &b, &feats, &y).unwrap();
            if !grads {
                return (g.value(loss).item(), Vec::new());
            }
            g.backward(loss).unwrap();
            (g.value(loss).item(), group_grads(probe, &g, &b, group))
        });
        assert!(err < 1e-6, "group {group} rel err {err}");
    }

    // cascade objective puts all four groups on the graph at once
    let p = tiny_model(ModelKind::Psda, 12);
    let yp = p.vocab.encode("dba");
    for group in [
        ParamGroup::Enc,
        ParamGroup::Att,
        ParamGroup::Dec,
        ParamGroup::Da,
    ] {
        let err = fd_check_group(&p, group, |probe, grads| {
            let mut g = Graph::new();
            let b = probe.bind(&mut g, true);
            let loss = psda_log_likelihood(&mut g, probe, &b, &aug_input, &yp).unwrap();
            if !grads {
                return (g.value(loss).item(), Vec::new());
            }
            g.backward(loss).unwrap();
            (g.value(loss).item(), group_grads(probe, &g, &b, group))
        });
        assert!(err < 1e-6, "cascade group {group} rel err {err}");
    }
    println!("acceptance criterion 1 (gradient integrity): PASS");
}

// criterion 2: gradient routing between the two text objectives
#[test]
fn criterion_02_gradient_routing() {
    let mut rng = StdRng::seed_from_u64(102);
    let feats = rand_feats(&mut rng, 7, 4);
    let aug_input = vec![0u32, 2, 1, 1, 0, 2];

    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    // attention-route text batch: acoustic encoder gets exactly zero
    let m = tiny_model(ModelKind::Mmda, 21);
    let y = m.vocab.encode("cab");
    let mut g = Graph::new();
    let b = m.bind(&mut g, true);
    let loss = mmda_log_likelihood(&mut g, &m, &b, &aug_input, &y).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(max_abs(&group_grads(&m, &g, &b, ParamGroup::Enc)), 0.0);
    assert!(max_abs(&group_grads(&m, &g, &b, ParamGroup::Da)) > 0.0);

    // cascade text batch: acoustic encoder receives gradient
    let p = tiny_model(ModelKind::Psda, 22);
    let yp = p.vocab.encode("bd");
    let mut g = Graph::new();
    let b = p.bind(&mut g, true);
    let loss = psda_log_likelihood(&mut g, &p, &b, &aug_input, &yp).unwrap();
    g.backward(loss).unwrap();
    assert!(max_abs(&group_grads(&p, &g, &b, ParamGroup::Enc)) > 0.0);

    // speech batches: the augmenting encoder is off the graph in both
    for kind in [ModelKind::Mmda, ModelKind::Psda] {
        let m = tiny_model(kind, 23);
        let y = m.vocab.encode("ad");
        let mut g = Graph::new();
        let b = m.bind(&mut g, true);
        let loss = asr_log_likelihood(&mut g, &m, &b, &feats, &y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(
            max_abs(&group_grads(&m, &g, &b, ParamGroup::Da)),
            0.0,
            "{kind}: augmenting encoder touched by a speech batch"
        );
    }
    println!("acceptance criterion 2 (gradient routing): PASS");
}

// criterion 3: encoder output length law over random input lengths
#[test]
fn criterion_03_pyramidal_shape_law() {
    let model = tiny_model(ModelKind::Mmda, 31);
    let mut rng = StdRng::seed_from_u64(103);
    for _ in 0..200 {
        let l = rng.gen_range(1..=512);
        let feats = rand_feats(&mut rng, l, 4);
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let x = g.constant(feats);
        let enc = encode_speech(&mut g, &b, x).unwrap();
        let want = l.div_ceil(2).div_ceil(2);
        assert_eq!(g.value(enc).rows(), want, "L={l}");
        assert_eq!(enc_output_len(l), want);
    }
    println!("acceptance criterion 3 (pyramidal shape law): PASS");
}

// criterion 4: scheduler fraction within binomial bounds on the grid
#[test]
fn criterion_04_rho_scheduler() {
    use rand_chacha::ChaCha8Rng;
    let n = 10_000usize;
    for (si, rho) in [0.1f64, 0.2, 0.5].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(104 + si as u64);
        let mut aug = 0usize;
        for _ in 0..n {
            if draw_task(&mut rng, rho).unwrap() == augasr::train::Task::Augmenting {
                aug += 1;
            }
        }
        let frac = aug as f64 / n as f64;
        let sigma = (rho * (1.0 - rho) / n as f64).sqrt();
        assert!(
            (frac - rho).abs() <= 3.0 * sigma,
            "rho {rho}: fraction {frac} outside 3 sigma"
        );
    }
    println!("acceptance criterion 4 (rho scheduler): PASS");
}

fn ulp_distance(a: f64, b: f64) -> u64 {
    let ia = a.to_bits() as i64;
    let ib = b.to_bits() as i64;
    (ia - ib).unsigned_abs()
}

/// Independent enumeration of every output sequence up to `steps`
/// emissions (stopping at `<eos>`), ranked like the search ranks.
fn brute_force_best(model: &Model<f64>, feats: &Tensor<f64>, steps: usize) -> DecodeOutput {
    use augasr::augment::{EOS_ID, SOS_ID};
    let v = model.vocab_size();
    let mut terminal: Vec<DecodeOutput> = Vec::new();
    let mut stack: Vec<Vec<u32>> = vec![vec![]];
    while let Some(prefix) = stack.pop() {
        let ended = prefix.last() == Some(&EOS_ID);
        if ended || prefix.len() == steps {
            let mut g = Graph::new();
            let b = model.bind(&mut g, false);
            let x = g.constant(feats.clone());
            let enc = encode_speech(&mut g, &b, x).unwrap();
            let t_enc = g.value(enc).rows();
            let mut st = initial_step_state(&mut g, model.cfg.dec_hidden, t_enc);
            let mut asr = 0.0;
            let mut prev = SOS_ID;
            for &tok in &prefix {
                let (logp, next) = decoder_advance(&mut g, &b, enc, prev, &st).unwrap();
                asr += g.value(logp).data()[tok as usize];
                st = next;
                prev = tok;
            }
            let mut tokens = vec![SOS_ID];
            tokens.extend_from_slice(&prefix);
            terminal.push(DecodeOutput {
                tokens,
                asr_logp: asr,
                lm_logp: 0.0,
                score: asr,
                finished: ended,
            });
            continue;
        }
        for tok in (0..v as u32).rev() {
            let mut p = prefix.clone();
            p.push(tok);
            stack.push(p);
        }
    }
    let any_finished = terminal.iter().any(|t| t.finished);
    terminal.retain(|t| t.finished == any_finished);
    terminal.sort_by(|a, b| {
        let ra = a.score / a.emitted_len().max(1) as f64;
        let rb = b.score / b.emitted_len().max(1) as f64;
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    terminal.into_iter().next().unwrap()
}

// criterion 5: shallow fusion scoring and beam-search equivalences
#[test]
fn criterion_05_shallow_fusion() {
    // composite score exact to 1 ulp against a fused-multiply-add
    // reference
    let mut rng = StdRng::seed_from_u64(105);
    for _ in 0..1000 {
        let asr = rng.gen_range(-50.0..0.0);
        let lm = rng.gen_range(-50.0..0.0);
        let lambda = rng.gen_range(0.0..2.0);
        let got = fuse_score(asr, lm, lambda);
        let reference = f64::mul_add(lambda, lm, asr);
        assert!(
            ulp_distance(got, reference) <= 1,
            "{asr} {lm} {lambda}: {got} vs {reference}"
        );
    }

    // beam of one with lambda zero equals independent greedy decoding
    let models: Vec<u64> = (0..100).collect();
    models.par_iter().for_each(|&seed| {
        let model = toy_decode_model(seed);
        let mut rng = StdRng::seed_from_u64(seed + 500);
        let feats = rand_feats(&mut rng, 6, 3);
        let cfg = DecodeConfig {
            beam_size: 1,
            lambda: 0.0,
            max_output_len: 8,
            length_rule: LengthRule::Normalize,
        };
        let (beam, _) = beam_search_fusion(&model, None, &feats, &cfg).unwrap();
        let greedy = greedy_decode(&model, &feats, 8).unwrap();
        assert_eq!(beam.tokens, greedy.tokens, "seed {seed}");
    });

    // an exhaustive beam reproduces brute-force enumeration
    let cases: Vec<u64> = (0..8).collect();
    cases.par_iter().for_each(|&seed| {
        let model = toy_decode_model(seed * 13 + 3);
        let mut rng = StdRng::seed_from_u64(seed + 900);
        let feats = rand_feats(&mut rng, 5, 3);
        let steps = 4;
        let v = model.vocab_size();
        let cfg = DecodeConfig {
            beam_size: v.pow(steps as u32),
            lambda: 0.0,
            max_output_len: steps,
            length_rule: LengthRule::Normalize,
        };
        let (beam, _) = beam_search_fusion(&model, None, &feats, &cfg).unwrap();
        let brute = brute_force_best(&model, &feats, steps);
        assert_eq!(beam.tokens, brute.tokens, "seed {seed}");
        assert!((beam.score - brute.score).abs() <= 1e-9);
    });
    println!("acceptance criterion 5 (shallow fusion): PASS");
}

fn toy_decode_model(seed: u64) -> Model<f64> {
    // vocabulary of exactly the four reserved symbols
    let cfg = ModelConfig {
        kind: ModelKind::Mmda,
        feat_dim: 3,
        enc_hidden: 2,
        proj_dim: 2,
        dec_hidden: 2,
        dec_embed: 2,
        att_dim: 2,
        att_conv_channels: 2,
        att_conv_width: 3,
        phoneme_embed: 2,
        aug_hidden: 2,
    };
    Model::new(
        cfg,
        Vocab::from_symbols(Vec::<String>::new()),
        vec!["<wb>".into()],
        seed,
    )
}

// criterion 6: edit distance against a quadratic reference
#[test]
fn criterion_06_metrics_oracle() {
    // independent full-matrix distance-only reference
    fn reference(a: &[char], b: &[char]) -> usize {
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in dp.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            dp[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                dp[i][j] = (dp[i - 1][j - 1] + c)
                    .min(dp[i - 1][j] + 1)
                    .min(dp[i][j - 1] + 1);
            }
        }
        dp[a.len()][b.len()]
    }

    let mut rng = StdRng::seed_from_u64(106);
    let alphabet = ['a', 'b', 'c', 'd'];
    for _ in 0..1000 {
        let n1 = rng.gen_range(0..=30);
        let n2 = rng.gen_range(0..=30);
        let s1: Vec<char> = (0..n1).map(|_| alphabet[rng.gen_range(0..4)]).collect();
        let s2: Vec<char> = (0..n2).map(|_| alphabet[rng.gen_range(0..4)]).collect();
        let got = edit_distance(&s1, &s2);
        assert_eq!(got.distance, reference(&s1, &s2));
        assert_eq!(
            got.substitutions + got.insertions + got.deletions,
            got.distance
        );
    }

    // pooling counterexample: corpus CER is distance-weighted, not a
    // mean of per-utterance rates
    let pairs = vec![
        ("aaaaaaaaaa".to_string(), "aaaaaaaaaa".to_string()),
        ("ab".to_string(), "bb".to_string()),
    ];
    let (cer, _) = corpus_cer_wer(&pairs).unwrap();
    assert!((cer - 1.0 / 12.0).abs() <= 1e-12);
    assert!((cer - 0.25).abs() > 0.1, "pooling must differ from rate mean");
    println!("acceptance criterion 6 (metrics oracle): PASS");
}

// criterion 7: duration model estimation and sampling
#[test]
fn criterion_07_duration_model() {
    let dm = estimate_duration_model(&[("a".into(), 100, 20)]).unwrap();
    assert_eq!(dm.mean, 5.0);
    let dm2 =
        estimate_duration_model(&[("a".into(), 100, 20), ("b".into(), 50, 30)]).unwrap();
    assert_eq!(dm2.mean, 3.0);

    let dm = DurationModel::with_std(5.0, 1.25);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(107);
    let phonemes = vec![0u32; 100_000];
    let expanded = sample_durations(&phonemes, &dm, &mut rng);
    let mean = expanded.len() as f64 / phonemes.len() as f64;
    assert!(
        (mean - 5.0).abs() / 5.0 <= 0.01,
        "empirical mean {mean} off by more than 1%"
    );
    println!("acceptance criterion 7 (duration model): PASS");
}

// criterion 12: determinism and checkpoint persistence
#[test]
fn criterion_12_determinism_and_persistence() {
    use augasr::io::{gen_toy_corpus, ToyTaskSpec};
    use augasr::train::{checkpoint as ck, TrainConfig, Trainer};

    // identical seeds reproduce identical corpora byte for byte
    let spec = ToyTaskSpec {
        n_phonemes: 8,
        n_words: 16,
        feat_dim: 6,
        sent_words: (2, 5),
        seed: 12,
        ..ToyTaskSpec::default()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    gen_toy_corpus(&spec, 6, 3, 10, d1.path(), false).unwrap();
    gen_toy_corpus(&spec, 6, 3, 10, d2.path(), false).unwrap();
    let digest = |dir: &std::path::Path| {
        let mut files: Vec<std::path::PathBuf> = walk(dir);
        files.sort();
        files
            .into_iter()
            .map(|p| {
                (
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(digest(d1.path()), digest(d2.path()));

    // identical seeds give bit-identical loss traces; a resumed run
    // reproduces the uninterrupted one exactly
    let (data, _dir) = toyruns::tiny_train_data(12);
    let cfg = TrainConfig {
        pretrain_batches: 6,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let mk = || {
        let model = toyruns::tiny_train_model(&data, cfg.mode, cfg.seed);
        let mut t = Trainer::new(model, &data, cfg.clone()).unwrap();
        t.dev_decode = None;
        t
    };
    let mut a = mk();
    a.run().unwrap();
    let trace: Vec<u64> = a.history.iter().map(|r| r.loss.to_bits()).collect();
    let mut b = mk();
    b.run().unwrap();
    let trace_b: Vec<u64> = b.history.iter().map(|r| r.loss.to_bits()).collect();
    assert_eq!(trace, trace_b, "same-seed traces differ");

    let ckdir = tempfile::tempdir().unwrap();
    let ckpath = ckdir.path().join("mid.ckpt");
    let mut first = mk();
    for _ in 0..7 {
        first.step().unwrap();
    }
    ck::save_training(&ckpath, &first).unwrap();
    let mut resumed = ck::resume(&ckpath, &data).unwrap();
    resumed.dev_decode = None;
    resumed.run().unwrap();
    let mut stitched: Vec<u64> = first.history.iter().map(|r| r.loss.to_bits()).collect();
    stitched.extend(resumed.history.iter().map(|r| r.loss.to_bits()));
    assert_eq!(trace, stitched, "resumed trace diverged");

    // save -> load -> save byte identity
    let p2 = ckdir.path().join("again.ckpt");
    let reloaded = ck::resume(&ckpath, &data).unwrap();
    ck::save_training(&p2, &reloaded).unwrap();
    assert_eq!(
        std::fs::read(&ckpath).unwrap(),
        std::fs::read(&p2).unwrap()
    );
    println!("acceptance criterion 12 (determinism & persistence): PASS");
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
