use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::report::{mean_report, report, transfer_eval, EvalReport, MultiRunReport};
use super::EpochMetrics;
use crate::config::TrainConfig;
use crate::data::{split, Corpus};
use crate::detector::{detector_train, DetectorMode, DomainSource};
use crate::error::{Error, Result};
use crate::membership::membership_pretrain;
use crate::numcore::Real;

/// What [`compare_modes`] runs besides in-domain evaluation.
#[derive(Debug, Clone)]
pub struct HarnessOptions<'a> {
    pub modes: Vec<DetectorMode>,
    /// Label-stripped evaluation corpus for zero-shot transfer.
    pub transfer: Option<&'a Corpus>,
    /// Checkpoints go to `workdir/seed-N/` when set.
    pub workdir: Option<PathBuf>,
    /// Seeds run concurrently on this many threads.
    pub jobs: usize,
}

impl Default for HarnessOptions<'_> {
    fn default() -> Self {
        HarnessOptions {
            modes: DetectorMode::ALL.to_vec(),
            transfer: None,
            workdir: None,
            jobs: 1,
        }
    }
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Best validation macro-F1 of membership pretraining.
    pub membership_f1: f64,
    pub membership_secs: f64,
    /// One report per mode on the validation split, gold buckets.
    pub in_domain: Vec<EvalReport>,
    /// One report per mode on the transfer corpus, if any.
    pub transfer: Vec<EvalReport>,
    pub detector_secs: Vec<f64>,
    pub logs: Vec<EpochMetrics>,
}

/// Per-mode seed averages, in the order of [`HarnessOptions::modes`].
#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub modes: Vec<DetectorMode>,
    pub in_domain: Vec<MultiRunReport>,
    pub transfer: Vec<MultiRunReport>,
    pub outcomes: Vec<SeedOutcome>,
}

impl ModeComparison {
    pub fn in_domain(&self, mode: DetectorMode) -> Option<&EvalReport> {
        let i = self.modes.iter().position(|&m| m == mode)?;
        Some(&self.in_domain[i].mean)
    }

    pub fn transfer(&self, mode: DetectorMode) -> Option<&EvalReport> {
        let i = self.modes.iter().position(|&m| m == mode)?;
        self.transfer.get(i).map(|r| &r.mean)
    }

    pub fn mean_membership_f1(&self) -> f64 {
        let f1s: Vec<f64> = self.outcomes.iter().map(|o| o.membership_f1).collect();
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

fn seed_dir(workdir: Option<&Path>, seed: u64) -> Result<Option<PathBuf>> {
    let Some(root) = workdir else { return Ok(None) };
    let dir = root.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(Some(dir))
}

/// Pretrains membership once, then trains and evaluates every mode.
pub fn run_seed<S: Real>(corpus: &Corpus, cfg: &TrainConfig, opts: &HarnessOptions, seed: u64) -> Result<SeedOutcome> {
    let dir = seed_dir(opts.workdir.as_deref(), seed)?;
    let start = Instant::now();
    let (membership, mut logs) = membership_pretrain::<S>(corpus, cfg, seed)?;
    let membership_secs = start.elapsed().as_secs_f64();
    let membership_f1 = logs.iter().map(|l| l.val_f1).fold(0.0, f64::max);
    if let Some(dir) = &dir {
        membership.save(&dir.join("membership.ckpt"))?;
    }
    let (_, val) = split(corpus, cfg.train_fraction, seed)?;
    let mut out = SeedOutcome {
        seed,
        membership_f1,
        membership_secs,
        in_domain: Vec::new(),
        transfer: Vec::new(),
        detector_secs: Vec::new(),
        logs: Vec::new(),
    };
    for &mode in &opts.modes {
        let start = Instant::now();
        let mode_cfg = TrainConfig { mode, ..cfg.clone() };
        let (model, log) = detector_train(corpus, &mode_cfg, Some(membership.clone()), seed)?;
        out.detector_secs.push(start.elapsed().as_secs_f64());
        logs.extend(log);
        if let Some(dir) = &dir {
            model.save(&dir.join(format!("detector-{mode}.ckpt")))?;
        }
        out.in_domain.push(report(&model, &val, DomainSource::Gold)?);
        if let Some(b) = opts.transfer {
            out.transfer.push(transfer_eval(&model, b)?);
        }
    }
    out.logs = logs;
    Ok(out)
}

/// Runs `f` for every seed on up to `jobs` threads, keeping seed order and
/// tagging errors with the failing seed.
pub fn for_each_seed<T, F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::usage("at least one seed is required"));
    }
    let tag = |seed: u64, r: Result<T>| {
        r.map_err(|e| Error::Seed {
            seed,
            source: Box::new(e),
        })
    };
    if jobs <= 1 {
        return seeds.iter().map(|&s| tag(s, f(s))).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let r = tag(seed, f(seed));
                *slots[i].lock().expect("no poisoned slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned slot").expect("every seed ran"))
        .collect()
}

fn per_mode(outcomes: &[SeedOutcome], pick: impl Fn(&SeedOutcome) -> &[EvalReport], modes: usize) -> Result<Vec<MultiRunReport>> {
    (0..modes)
        .map(|m| {
            let runs: Vec<EvalReport> = outcomes
                .iter()
                .map(|o| {
                    let mut r = pick(o)[m].clone();
                    r.seeds = vec![o.seed];
                    r
                })
                .collect();
            Ok(MultiRunReport {
                mean: mean_report(&runs)?,
                runs,
            })
        })
        .collect()
}

/// The comparison harness: for every seed in `cfg.seeds`, pretrain the
/// membership function, train each detector mode on the same split, and
/// average the reports over seeds.
pub fn compare_modes<S: Real>(corpus: &Corpus, cfg: &TrainConfig, opts: &HarnessOptions) -> Result<ModeComparison> {
    cfg.validate()?;
    if opts.modes.is_empty() {
        return Err(Error::usage("no detector modes to compare"));
    }
    let outcomes = for_each_seed(&cfg.seeds, opts.jobs, |seed| run_seed::<S>(corpus, cfg, opts, seed))?;
    let in_domain = per_mode(&outcomes, |o| &o.in_domain, opts.modes.len())?;
    let transfer = if opts.transfer.is_some() {
        per_mode(&outcomes, |o| &o.transfer, opts.modes.len())?
    } else {
        Vec::new()
    };
    Ok(ModeComparison {
        modes: opts.modes.clone(),
        in_domain,
        transfer,
        outcomes,
    })
}
