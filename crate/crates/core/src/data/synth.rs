use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::embed::{token_vector, END_TOKEN, START_TOKEN};
use super::record::SyntheticMeta;
use super::{Corpus, EmbeddingSequence, NewsRecord};
use crate::error::{Error, Result};
use crate::membership::{DomainId, NUM_DOMAINS};

/// Real/fake counts per domain of the reference multi-domain corpus
/// (4640 real, 4488 fake, 9128 total).
pub const REFERENCE_COUNTS: [[usize; 2]; NUM_DOMAINS] = [
    [143, 93],
    [121, 222],
    [243, 248],
    [185, 591],
    [306, 546],
    [485, 515],
    [959, 362],
    [1000, 440],
    [1198, 1471],
];

const PREFIXES: [&str; NUM_DOMAINS] = ["sci", "mil", "edu", "acc", "pol", "hea", "fin", "ent", "soc"];

/// Parameters of the synthetic multi-domain corpus.
///
/// Every domain owns a disjoint vocabulary whose vectors sit around a
/// per-domain center. A small set of cue tokens is shared by all domains,
/// and each domain splits it into a fake half and a real half: the same
/// cue can mark fakes in one domain and real items in another. Mixed items
/// draw every content token, cues included, from one of two or three
/// domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    /// Total record count; the per-domain counts are scaled to it.
    pub n: usize,
    pub dim: usize,
    pub max_len: usize,
    /// Seeds token geometry, independent of the sampling seed.
    pub vocab_seed: u64,
    pub vocab_per_domain: usize,
    pub cue_tokens: usize,
    pub filler_tokens: usize,
    /// Pull of domain tokens toward their cluster center, in `[0, 1]`.
    pub cluster_weight: f64,
    /// Inclusive range of interior token counts.
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub filler_rate: f64,
    /// Chance that a content slot emits a cue from its domain's half for
    /// the item's label.
    pub cue_rate: f64,
    /// Chance that a content slot emits any cue regardless of label.
    pub background_cue_rate: f64,
    /// Per domain, `+1` for cues that mark fakes and `-1` for cues that
    /// mark real items. Drawn from `vocab_seed` when absent.
    pub cue_signs: Option<Vec<Vec<i8>>>,
    pub mixed_fraction: f64,
    /// Dirichlet concentration of mixture shares; larger is flatter.
    pub mixture_concentration: f64,
    /// Minimum lead of the largest share over the second largest.
    pub majority_margin: f64,
    /// Real/fake counts per domain before scaling to `n`.
    pub counts: Vec<[usize; 2]>,
    /// Probability of flipping the observed fake label.
    pub label_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            name: "synthetic".into(),
            n: 3600,
            dim: 32,
            max_len: 170,
            vocab_seed: 17,
            vocab_per_domain: 150,
            cue_tokens: 4,
            filler_tokens: 60,
            cluster_weight: 0.6,
            min_tokens: 10,
            max_tokens: 20,
            filler_rate: 0.1,
            cue_rate: 0.5,
            background_cue_rate: 0.02,
            cue_signs: None,
            mixed_fraction: 0.2,
            mixture_concentration: 2.0,
            majority_margin: 0.2,
            counts: REFERENCE_COUNTS.to_vec(),
            label_noise: 0.02,
        }
    }
}

fn unit(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::input(format!("synthetic spec: {m}")));
        if self.n == 0 || self.counts.iter().flatten().sum::<usize>() == 0 {
            return bad("total count is zero");
        }
        if self.counts.len() != NUM_DOMAINS {
            return bad("counts need one entry per domain");
        }
        if let Some(signs) = &self.cue_signs {
            if signs.len() != NUM_DOMAINS || signs.iter().any(|r| r.len() != self.cue_tokens) {
                return bad("cue_signs needs one row of cue_tokens entries per domain");
            }
            if signs.iter().flatten().any(|p| p.abs() != 1) {
                return bad("cue_signs entries must be +1 or -1");
            }
            if signs.iter().any(|r| !r.contains(&1) || !r.contains(&-1)) {
                return bad("every domain needs at least one cue of each sign");
            }
        }
        if !unit(self.mixed_fraction) {
            return bad("mixed_fraction must lie in [0, 1]");
        }
        for (name, p) in [
            ("cluster_weight", self.cluster_weight),
            ("filler_rate", self.filler_rate),
            ("cue_rate", self.cue_rate),
            ("background_cue_rate", self.background_cue_rate),
            ("label_noise", self.label_noise),
        ] {
            if !unit(p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.mixture_concentration > 0.0 && self.mixture_concentration.is_finite()) {
            return bad("mixture_concentration must be positive");
        }
        if !(0.0..0.5).contains(&self.majority_margin) {
            return bad("majority_margin must lie in [0, 0.5)");
        }
        if self.filler_rate >= 1.0 {
            return bad("filler_rate must be below 1");
        }
        if self.dim == 0 || self.vocab_per_domain == 0 || self.filler_tokens == 0 {
            return bad("dim and vocabulary sizes must be positive");
        }
        if self.cue_tokens < 2 {
            return bad("need at least 2 cue tokens");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if self.max_len < 3 {
            return bad("max_len must be at least 3");
        }
        Ok(())
    }

    /// Companion corpus for transfer runs: same vocabulary geometry, flat
    /// domain proportions, more mixed items and longer texts.
    pub fn shifted(&self) -> SyntheticSpec {
        let per_domain = self.n / NUM_DOMAINS / 2;
        SyntheticSpec {
            name: format!("{}-shifted", self.name),
            counts: vec![[per_domain.max(1), per_domain.max(1)]; NUM_DOMAINS],
            mixed_fraction: (self.mixed_fraction * 2.0).clamp(0.4, 1.0),
            min_tokens: self.min_tokens + self.min_tokens / 2,
            max_tokens: self.max_tokens + self.max_tokens / 2,
            ..self.clone()
        }
    }

    /// The explicit `cue_signs`, or a balanced random split per domain.
    pub fn cue_signs(&self) -> Vec<Vec<i8>> {
        if let Some(signs) = &self.cue_signs {
            return signs.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.vocab_seed);
        rng.set_stream(1);
        let half = self.cue_tokens / 2;
        (0..NUM_DOMAINS)
            .map(|_| {
                let mut row: Vec<i8> = (0..self.cue_tokens).map(|j| if j < half { 1 } else { -1 }).collect();
                row.shuffle(&mut rng);
                row
            })
            .collect()
    }

    /// Per-cell counts scaled to `n` by largest remainder.
    pub fn scaled_counts(&self) -> Vec<[usize; 2]> {
        let cells: Vec<usize> = self.counts.iter().flatten().copied().collect();
        let total: usize = cells.iter().sum();
        let quotas: Vec<f64> = cells.iter().map(|&c| c as f64 * self.n as f64 / total as f64).collect();
        let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = self.n - out.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            out[i] += 1;
        }
        out.chunks(2).map(|c| [c[0], c[1]]).collect()
    }
}

pub fn domain_token(domain: DomainId, i: usize) -> String {
    format!("{}{i}", PREFIXES[domain.index()])
}

pub fn cue_token(i: usize) -> String {
    format!("cue{i}")
}

pub fn filler_token(i: usize) -> String {
    format!("w{i}")
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= n);
}

struct Vocab {
    dim: usize,
    centers: Vec<Vec<f64>>,
    weight: f64,
    cache: HashMap<String, Vec<f32>>,
}

impl Vocab {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.vocab_seed);
        let centers = (0..NUM_DOMAINS)
            .map(|_| {
                let mut c: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize(&mut c);
                c
            })
            .collect();
        Vocab {
            dim: spec.dim,
            centers,
            weight: spec.cluster_weight,
            cache: HashMap::new(),
        }
    }

    fn vector(&mut self, token: &str, domain: Option<DomainId>) -> &[f32] {
        let (dim, weight) = (self.dim, self.weight);
        let centers = &self.centers;
        self.cache.entry(token.to_string()).or_insert_with(|| {
            let base = token_vector(token, dim);
            match domain {
                None => base,
                Some(d) => {
                    let mut v: Vec<f64> = base
                        .iter()
                        .zip(&centers[d.index()])
                        .map(|(&b, &c)| weight * c + (1.0 - weight) * b as f64)
                        .collect();
                    normalize(&mut v);
                    v.iter().map(|&x| x as f32).collect()
                }
            }
        })
    }
}

/// Mixture proportions for a mixed item whose largest share belongs to
/// `major`.
fn draw_mixture<R: Rng>(rng: &mut R, major: DomainId, concentration: f64, margin: f64) -> BTreeMap<DomainId, f64> {
    let share = Gamma::new(concentration, 1.0).expect("validated");
    let parts = if rng.random_bool(0.5) { 2 } else { 3 };
    let others: Vec<DomainId> = DomainId::all().filter(|&d| d != major).collect();
    let chosen: Vec<DomainId> = others.choose_multiple(rng, parts - 1).copied().collect();
    loop {
        let mut w: Vec<f64> = (0..parts).map(|_| share.sample(rng)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w.sort_by(|a, b| b.total_cmp(a));
        // keep the majority unambiguous
        if w[0] - w[1] < margin.max(1e-9) {
            continue;
        }
        let mut m = BTreeMap::new();
        m.insert(major, w[0]);
        for (d, p) in chosen.iter().zip(&w[1..]) {
            m.insert(*d, *p);
        }
        return m;
    }
}

fn pick_domain<R: Rng>(rng: &mut R, mixture: &[(DomainId, f64)]) -> DomainId {
    let mut u: f64 = rng.random();
    for &(d, p) in mixture {
        if u < p {
            return d;
        }
        u -= p;
    }
    mixture.last().expect("non-empty mixture").0
}

/// Generates a labeled corpus with text and embeddings; a pure function of
/// `(spec, seed)`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocab::new(spec);
    let signs = spec.cue_signs();
    // cue ids per domain for real (0) and fake (1) items
    let cue_sets: Vec<[Vec<usize>; 2]> = signs
        .iter()
        .map(|row| {
            let of = |s: i8| (0..row.len()).filter(|&j| row[j] == s).collect();
            [of(-1), of(1)]
        })
        .collect();

    let mut cells = Vec::with_capacity(spec.n);
    for (k, [real, fake]) in spec.scaled_counts().into_iter().enumerate() {
        let d = DomainId::new(k)?;
        cells.extend(std::iter::repeat_n((d, false), real));
        cells.extend(std::iter::repeat_n((d, true), fake));
    }
    cells.shuffle(&mut rng);
    let n_mixed = (spec.mixed_fraction * cells.len() as f64).round() as usize;
    let mut mixed_flags = vec![false; cells.len()];
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_mixed] {
        mixed_flags[i] = true;
    }

    let width = cells.len().to_string().len();
    let mut records = Vec::with_capacity(cells.len());
    for (i, (&(domain, fake), &mixed)) in cells.iter().zip(&mixed_flags).enumerate() {
        let mixture = if mixed {
            draw_mixture(&mut rng, domain, spec.mixture_concentration, spec.majority_margin)
        } else {
            BTreeMap::from([(domain, 1.0)])
        };
        let parts: Vec<(DomainId, f64)> = mixture.iter().map(|(&d, &p)| (d, p)).collect();
        let len = rng.random_range(spec.min_tokens..=spec.max_tokens);
        let mut tokens: Vec<(String, Option<DomainId>)> = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random_bool(spec.filler_rate) {
                tokens.push((filler_token(rng.random_range(0..spec.filler_tokens)), None));
                continue;
            }
            let src = pick_domain(&mut rng, &parts);
            if rng.random_bool(spec.cue_rate) {
                let set = &cue_sets[src.index()][usize::from(fake)];
                tokens.push((cue_token(*set.choose(&mut rng).expect("validated")), None));
            } else if rng.random_bool(spec.background_cue_rate) {
                tokens.push((cue_token(rng.random_range(0..spec.cue_tokens)), None));
            } else {
                let t = domain_token(src, rng.random_range(0..spec.vocab_per_domain));
                tokens.push((t, Some(src)));
            }
        }
        if !tokens.iter().any(|(_, d)| *d == Some(domain)) {
            let slot = rng.random_range(0..len);
            tokens[slot] = (domain_token(domain, rng.random_range(0..spec.vocab_per_domain)), Some(domain));
        }
        tokens.truncate(spec.max_len - 2);
        let observed = if rng.random_bool(spec.label_noise) { !fake } else { fake };

        let mut data = Vec::with_capacity((tokens.len() + 2) * spec.dim);
        data.extend_from_slice(vocab.vector(START_TOKEN, None));
        for (t, d) in &tokens {
            data.extend_from_slice(vocab.vector(t, *d));
        }
        data.extend_from_slice(vocab.vector(END_TOKEN, None));
        let text = tokens.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(" ");

        records.push(NewsRecord {
            id: format!("{}-{:0width$}", spec.name, i),
            text: Some(text),
            embeddings: Some(EmbeddingSequence::new(spec.dim, data)?),
            domain: Some(domain),
            fake: Some(observed),
            mixture: Some(mixture),
        });
    }
    let mut corpus = Corpus::new(spec.name.clone(), spec.dim, records)?;
    corpus.synthetic = Some(SyntheticMeta {
        seed,
        spec: spec.clone(),
    });
    Ok(corpus)
}
