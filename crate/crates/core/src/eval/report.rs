use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{f1_binary, THRESHOLD};
use crate::data::Corpus;
use crate::detector::{check_labels, DetectorMode, DetectorModel, DomainSource};
use crate::error::{Error, Result};
use crate::membership::{DomainId, NUM_DOMAINS};
use crate::numcore::Real;

/// F1 over one bucket of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub count: usize,
    /// `None` for an empty bucket.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: DomainId,
    #[serde(flatten)]
    pub score: BucketScore,
}

/// Per-domain and overall fake-detection F1.
///
/// For a mean report, counts are totals over all runs and each F1 is the
/// mean over the runs whose bucket was non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: DetectorMode,
    pub domain_source: DomainSource,
    pub domains: Vec<DomainScore>,
    pub overall: BucketScore,
    /// Generated items that mix two or three domains.
    pub mixed: BucketScore,
    pub seeds: Vec<u64>,
    pub mean_of_runs: bool,
}

impl EvalReport {
    pub fn overall_f1(&self) -> f64 {
        self.overall.f1.unwrap_or(0.0)
    }

    pub fn mixed_f1(&self) -> Option<f64> {
        self.mixed.f1
    }

    pub fn domain_f1(&self, d: DomainId) -> Option<f64> {
        self.domains[d.index()].score.f1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn bucket(preds: &[f64], truth: &[bool]) -> Result<BucketScore> {
    Ok(BucketScore {
        count: preds.len(),
        f1: if preds.is_empty() { None } else { Some(f1_binary(preds, truth, THRESHOLD)?) },
    })
}

/// Scores `model` on a labeled corpus, bucketing by gold domain labels or
/// by the membership argmax.
pub fn report<S: Real>(model: &DetectorModel<S>, corpus: &Corpus, source: DomainSource) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::input("cannot evaluate an empty corpus"));
    }
    check_labels(corpus, DetectorMode::Uniform, true)?;
    if source == DomainSource::Gold {
        let missing = corpus.missing_domains();
        if !missing.is_empty() {
            return Err(Error::input(format!(
                "gold domain buckets need domain labels; missing for {}",
                crate::data::id_list(&missing)
            )));
        }
    } else if model.membership().is_none() {
        return Err(Error::usage("membership buckets need a detector with a membership model"));
    }
    let records: Vec<_> = corpus.records.iter().collect();
    let preds = model.predict_records(&records, source)?;
    let probs: Vec<f64> = preds.iter().map(|p| p.prob).collect();
    let truth: Vec<bool> = corpus.records.iter().map(|r| r.fake.expect("checked")).collect();

    let bucket_of = |i: usize| -> DomainId {
        match source {
            DomainSource::Gold => corpus.records[i].domain.expect("checked"),
            DomainSource::Membership => preds[i].fuzzy.expect("membership present").argmax(),
        }
    };
    let mut per: Vec<(Vec<f64>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); NUM_DOMAINS];
    let mut mixed = (Vec::new(), Vec::new());
    for i in 0..corpus.len() {
        let b = &mut per[bucket_of(i).index()];
        b.0.push(probs[i]);
        b.1.push(truth[i]);
        if corpus.records[i].is_mixed() {
            mixed.0.push(probs[i]);
            mixed.1.push(truth[i]);
        }
    }
    let domains = per
        .iter()
        .zip(DomainId::all())
        .map(|((p, t), domain)| {
            Ok(DomainScore {
                domain,
                score: bucket(p, t)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        model: model.mode(),
        domain_source: source,
        domains,
        overall: bucket(&probs, &truth)?,
        mixed: bucket(&mixed.0, &mixed.1)?,
        seeds: Vec::new(),
        mean_of_runs: false,
    })
}

/// Mean of present values, summed in sorted order so the result does not
/// depend on run order.
fn mean_sorted(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

fn mean_bucket<'a>(buckets: impl Iterator<Item = &'a BucketScore>) -> BucketScore {
    let (mut count, mut f1s) = (0, Vec::new());
    for b in buckets {
        count += b.count;
        f1s.extend(b.f1);
    }
    BucketScore {
        count,
        f1: mean_sorted(f1s),
    }
}

/// Per-run reports and their elementwise mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunReport {
    pub mean: EvalReport,
    pub runs: Vec<EvalReport>,
}

/// Elementwise mean of reports from the same mode and bucketing.
pub fn mean_report(runs: &[EvalReport]) -> Result<EvalReport> {
    let first = runs.first().ok_or_else(|| Error::usage("no runs to average"))?;
    if runs.iter().any(|r| r.model != first.model || r.domain_source != first.domain_source) {
        return Err(Error::usage("cannot average reports of different models or bucketings"));
    }
    let mut seeds: Vec<u64> = runs.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    Ok(EvalReport {
        model: first.model,
        domain_source: first.domain_source,
        domains: DomainId::all()
            .map(|d| DomainScore {
                domain: d,
                score: mean_bucket(runs.iter().map(|r| &r.domains[d.index()].score)),
            })
            .collect(),
        overall: mean_bucket(runs.iter().map(|r| &r.overall)),
        mixed: mean_bucket(runs.iter().map(|r| &r.mixed)),
        seeds,
        mean_of_runs: true,
    })
}

/// Runs `run(seed)` for every seed and averages the reports.
pub fn multi_run<F>(seeds: &[u64], mut run: F) -> Result<MultiRunReport>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    if seeds.is_empty() {
        return Err(Error::usage("multi_run needs at least one seed"));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let mut r = run(seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })?;
            r.seeds = vec![seed];
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiRunReport {
        mean: mean_report(&runs)?,
        runs,
    })
}

/// Zero-shot evaluation on a corpus without domain labels: buckets and
/// baseline gate inputs both come from the membership argmax.
pub fn transfer_eval<S: Real>(model: &DetectorModel<S>, corpus_b: &Corpus) -> Result<EvalReport> {
    if corpus_b.is_empty() {
        return Err(Error::input("transfer corpus is empty"));
    }
    report(model, &corpus_b.strip_domains(), DomainSource::Membership)
}

/// Fuzzy and baseline detectors scored on the same transfer corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferComparison {
    pub fuzzy: EvalReport,
    pub baseline: EvalReport,
}

impl TransferComparison {
    pub fn gap(&self) -> f64 {
        self.fuzzy.overall_f1() - self.baseline.overall_f1()
    }
}

pub fn transfer_compare<S: Real>(
    fuzzy: &DetectorModel<S>,
    baseline: &DetectorModel<S>,
    corpus_b: &Corpus,
) -> Result<TransferComparison> {
    if fuzzy.mode() != DetectorMode::Fuzzy || baseline.mode() != DetectorMode::Baseline {
        return Err(Error::usage("transfer comparison needs a fuzzy and a baseline detector"));
    }
    Ok(TransferComparison {
        fuzzy: transfer_eval(fuzzy, corpus_b)?,
        baseline: transfer_eval(baseline, corpus_b)?,
    })
}

fn cell(f1: Option<f64>) -> String {
    f1.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned text table, one row per report, domains in canonical order.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut header: Vec<String> = vec!["Model".into()];
    header.extend(DomainId::all().map(|d| d.name().to_string()));
    header.push("Mixed".into());
    header.push("All".into());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![format!("{}{}", r.model.label(), if r.mean_of_runs { " (mean)" } else { "" })];
        row.extend(r.domains.iter().map(|d| cell(d.score.f1)));
        row.push(cell(r.mixed.f1));
        row.push(cell(r.overall.f1));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        if i == 0 {
            writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))).unwrap();
        }
    }
    if let Some(r) = reports.first() {
        let counts: Vec<String> = r.domains.iter().map(|d| format!("{}={}", d.domain, d.score.count)).collect();
        writeln!(
            out,
            "counts ({:?} buckets): {}, mixed={}, all={}",
            r.domain_source,
            counts.join(" "),
            r.mixed.count,
            r.overall.count
        )
        .unwrap();
    }
    out
}
