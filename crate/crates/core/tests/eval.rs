use fuzzy_fnd::config::{ModelDims, PhaseConfig, TrainConfig};
use fuzzy_fnd::data::{gen_synthetic, Corpus, SyntheticSpec};
use fuzzy_fnd::detector::{detector_train, DetectorMode, DetectorModel, DomainSource};
use fuzzy_fnd::eval::{
    format_table, mean_report, multi_run, report, transfer_compare, transfer_eval, BucketScore, DomainScore,
    EvalReport,
};
use fuzzy_fnd::membership::{membership_pretrain, DomainId, NUM_DOMAINS};
use fuzzy_fnd::Error;

fn cfg(mode: DetectorMode) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        mode,
        model: ModelDims {
            dim: 8,
            gru_hidden: 16,
            membership_hidden: 16,
            experts: 3,
            expert_dim: 16,
            widths: vec![1, 2, 3],
            channels: 8,
            gate_hidden: 8,
            classifier_hidden: 16,
        },
        membership: PhaseConfig {
            epochs: 3,
            batch_size: 32,
        },
        detector: PhaseConfig {
            epochs: 3,
            batch_size: 32,
        },
        ..TrainConfig::default()
    }
}

fn corpus() -> Corpus {
    let spec = SyntheticSpec {
        n: 600,
        dim: 8,
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec, 0).unwrap()
}

fn trained(corpus: &Corpus, mode: DetectorMode) -> DetectorModel<f32> {
    let (m, _) = membership_pretrain::<f32>(corpus, &cfg(mode), 0).unwrap();
    detector_train(corpus, &cfg(mode), Some(m), 0).unwrap().0
}

/// F1 by explicit confusion counting.
fn f1(pairs: &[(bool, bool)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let tp = pairs.iter().filter(|&&(p, y)| p && y).count() as f64;
    let fp = pairs.iter().filter(|&&(p, y)| p && !y).count() as f64;
    let fneg = pairs.iter().filter(|&&(p, y)| !p && y).count() as f64;
    Some(if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) })
}

#[test]
fn report_partitions_and_recounts() {
    let corpus = corpus();
    for mode in [DetectorMode::Fuzzy, DetectorMode::Baseline] {
        let model = trained(&corpus, mode);
        let r = report(&model, &corpus, DomainSource::Gold).unwrap();
        let mut all = Vec::new();
        let mut per = vec![Vec::new(); NUM_DOMAINS];
        let mut mixed = Vec::new();
        for rec in &corpus.records {
            let p = model.predict(rec.embeddings.as_ref().unwrap(), rec.domain).unwrap();
            let pair = (p.prob >= 0.5, rec.fake.unwrap());
            all.push(pair);
            per[rec.domain.unwrap().index()].push(pair);
            if rec.is_mixed() {
                mixed.push(pair);
            }
        }
        assert_eq!(r.overall.count, corpus.len());
        assert_eq!(r.domains.iter().map(|d| d.score.count).sum::<usize>(), corpus.len());
        assert_eq!(r.mixed.count, mixed.len());
        assert!((r.overall_f1() - f1(&all).unwrap()).abs() < 1e-12);
        assert!((r.mixed_f1().unwrap() - f1(&mixed).unwrap()).abs() < 1e-12);
        for d in DomainId::all() {
            assert_eq!(r.domain_f1(d), f1(&per[d.index()]));
        }
    }
}

#[test]
fn single_domain_corpus_has_one_bucket() {
    let full = corpus();
    let model = trained(&full, DetectorMode::Baseline);
    let d = DomainId::new(3).unwrap();
    let only: Vec<_> = full.records.iter().filter(|r| r.domain == Some(d)).cloned().collect();
    let one = Corpus::new("one", full.dim, only).unwrap();
    let r = report(&model, &one, DomainSource::Gold).unwrap();
    assert_eq!(r.domain_f1(d), r.overall.f1);
    for other in DomainId::all().filter(|&o| o != d) {
        assert_eq!(r.domain_f1(other), None);
        assert_eq!(r.domains[other.index()].score.count, 0);
    }
}

fn hand(mode: DetectorMode, seed: u64, overall: f64, d0: Option<f64>) -> EvalReport {
    let count = |f: Option<f64>| usize::from(f.is_some()) * 10;
    EvalReport {
        model: mode,
        domain_source: DomainSource::Gold,
        domains: DomainId::all()
            .map(|d| {
                let f1 = if d.index() == 0 { d0 } else { Some(0.5) };
                DomainScore {
                    domain: d,
                    score: BucketScore { count: count(f1), f1 },
                }
            })
            .collect(),
        overall: BucketScore {
            count: 100,
            f1: Some(overall),
        },
        mixed: BucketScore { count: 0, f1: None },
        seeds: vec![seed],
        mean_of_runs: false,
    }
}

#[test]
fn mean_report_arithmetic() {
    let runs = vec![
        hand(DetectorMode::Fuzzy, 2, 0.9, Some(0.7)),
        hand(DetectorMode::Fuzzy, 0, 0.6, None),
        hand(DetectorMode::Fuzzy, 1, 0.75, Some(0.4)),
    ];
    let m = mean_report(&runs).unwrap();
    assert!((m.overall_f1() - 0.75).abs() < 1e-12);
    assert_eq!(m.overall.count, 300);
    // the empty bucket is left out of the mean
    assert!((m.domains[0].score.f1.unwrap() - 0.55).abs() < 1e-12);
    assert_eq!(m.domains[0].score.count, 20);
    assert_eq!(m.mixed.f1, None);
    assert_eq!(m.seeds, vec![0, 1, 2]);
    assert!(m.mean_of_runs);

    let mut rev = runs.clone();
    rev.reverse();
    assert_eq!(mean_report(&rev).unwrap(), m);

    let mixed_modes = vec![runs[0].clone(), hand(DetectorMode::Baseline, 3, 0.5, None)];
    assert!(matches!(mean_report(&mixed_modes), Err(Error::Usage(_))));
    assert!(mean_report(&[]).is_err());
}

#[test]
fn multi_run_tags_seeds() {
    let out = multi_run(&[4, 4], |s| Ok(hand(DetectorMode::Uniform, 99, 0.1 * s as f64, Some(0.5)))).unwrap();
    assert_eq!(out.runs.len(), 2);
    assert_eq!(out.runs[0], out.runs[1]);
    assert_eq!(out.runs[0].seeds, vec![4]);
    assert_eq!(out.mean.seeds, vec![4, 4]);
    assert!((out.mean.overall_f1() - 0.4).abs() < 1e-12);

    let err = multi_run(&[0, 7], |s| {
        if s == 7 {
            Err(Error::input("no data"))
        } else {
            Ok(hand(DetectorMode::Uniform, s, 0.5, None))
        }
    })
    .unwrap_err();
    assert!(err.to_string().starts_with("seed 7: "));
    assert!(multi_run(&[], |_| Ok(hand(DetectorMode::Fuzzy, 0, 0.5, None))).is_err());
}

#[test]
fn transfer_buckets_by_membership() {
    let a = corpus();
    let fuzzy = trained(&a, DetectorMode::Fuzzy);
    let baseline = trained(&a, DetectorMode::Baseline);
    let stripped = a.strip_domains();

    let t = transfer_eval(&fuzzy, &stripped).unwrap();
    assert_eq!(t.domain_source, DomainSource::Membership);
    assert_eq!(t.domains.iter().map(|d| d.score.count).sum::<usize>(), a.len());
    // the fuzzy gate never reads gold labels, so only the buckets move
    let gold = report(&fuzzy, &a, DomainSource::Gold).unwrap();
    assert_eq!(t.overall, gold.overall);
    assert_eq!(transfer_eval(&fuzzy, &a).unwrap(), t);

    let cmp = transfer_compare(&fuzzy, &baseline, &stripped).unwrap();
    assert_eq!(cmp.fuzzy, t);
    assert!((cmp.gap() - (t.overall_f1() - cmp.baseline.overall_f1())).abs() < 1e-15);
    assert!(matches!(transfer_compare(&baseline, &fuzzy, &stripped), Err(Error::Usage(_))));

    let empty = Corpus::new("empty", a.dim, Vec::new()).unwrap();
    assert!(matches!(transfer_eval(&fuzzy, &empty), Err(Error::Input(_))));
    assert!(matches!(report(&baseline, &stripped, DomainSource::Gold), Err(Error::Input(_))));
}

#[test]
fn table_and_json() {
    let r = hand(DetectorMode::Fuzzy, 0, 0.9123, None);
    let table = format_table(std::slice::from_ref(&r));
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Model"));
    assert!(lines[0].contains("Mixed") && lines[0].contains("All"));
    assert!(lines[1].chars().all(|c| c == '-'));
    assert!(lines[2].contains("0.9123") && lines[2].contains(" -"));
    assert!(lines[3].starts_with("counts"));
    let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}
