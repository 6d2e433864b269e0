//! News records, corpus files, the toy embedder, the synthetic generator,
//! splits and batching.

mod embed;
mod io;
mod record;
mod synth;

pub use embed::{token_vector, tokenize, toy_embed, END_TOKEN, START_TOKEN};
pub use io::{load_corpus, read_sidecar, save_corpus, sidecar_path, write_sidecar};
pub(crate) use io::Reader;
pub(crate) use record::id_list;
pub use record::{Corpus, EmbeddingSequence, NewsRecord, SyntheticMeta};
pub use synth::{
    cue_token, domain_token, filler_token, gen_synthetic, SyntheticSpec, REFERENCE_COUNTS,
};

use std::marker::PhantomData;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::SeqBatch;
use crate::numcore::Real;

/// Mixes a run seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded shuffle, then the first `floor(n·train_frac)` records train.
/// Both halves keep corpus order.
pub fn split(corpus: &Corpus, train_frac: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    let (train, val) = split_indices(corpus.len(), train_frac, seed)?;
    Ok((corpus.subset(&train), corpus.subset(&val)))
}

pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::usage(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n as f64 * train_frac).floor() as usize;
    let mut train = order[..cut].to_vec();
    let mut val = order[cut..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// One padded mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    /// Positions of the batch rows in the corpus.
    pub indices: Vec<usize>,
    pub seqs: SeqBatch<S>,
}

impl<S: Real> Batch<S> {
    /// `valid_len` marks per row.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.seqs.mask()
    }

    /// Packs the given records, padding to the longest of them or to
    /// `min_len`.
    pub fn pack(corpus: &Corpus, indices: &[usize], min_len: usize) -> Result<Self> {
        let seqs = indices
            .iter()
            .map(|&i| corpus.records[i].embeddings().map(EmbeddingSequence::as_slice))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            indices: indices.to_vec(),
            seqs: SeqBatch::pack(seqs, corpus.dim, min_len)?,
        })
    }
}

/// Iterator over shuffled, padded mini-batches.
pub struct Batches<'a, S> {
    corpus: &'a Corpus,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    min_len: usize,
    _precision: PhantomData<S>,
}

impl<S> Batches<'_, S> {
    /// Pads every batch to at least `min_len` positions.
    pub fn with_min_len(mut self, min_len: usize) -> Self {
        self.min_len = min_len;
        self
    }

    /// Row indices of every batch, in iteration order.
    pub fn index_batches(&self) -> Vec<Vec<usize>> {
        self.order[self.pos..].chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

impl<S: Real> Iterator for Batches<'_, S> {
    type Item = Result<Batch<S>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(Batch::pack(self.corpus, idx, self.min_len))
    }
}

/// Seeded shuffle of the corpus cut into batches of `batch_size`; the last
/// batch holds the remainder.
pub fn batches<S: Real>(corpus: &Corpus, batch_size: usize, seed: u64) -> Result<Batches<'_, S>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Batches {
        corpus,
        order,
        batch_size,
        pos: 0,
        min_len: 0,
        _precision: PhantomData,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    fn corpus(n: usize) -> Corpus {
        let records = (0..n)
            .map(|i| {
                let mut r = NewsRecord::new(format!("r{i}"));
                let len = 2 + i % 5;
                r.embeddings = Some(EmbeddingSequence::new(3, vec![i as f32 + 1.0; len * 3]).unwrap());
                r.fake = Some(i % 2 == 0);
                r
            })
            .collect();
        Corpus::new("t", 3, records).unwrap()
    }

    #[test]
    fn split_sizes_use_floor() {
        let (a, b) = split(&corpus(10), 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a, b) = split(&corpus(9), 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (6, 3));
        assert!(split(&corpus(9), 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 1usize..200, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let (tr, va) = split_indices(n, frac, seed).unwrap();
            let all: BTreeSet<usize> = tr.iter().chain(&va).copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(tr.len() + va.len(), n);
            prop_assert_eq!(split_indices(n, frac, seed).unwrap(), (tr, va));
        }
    }

    #[test]
    fn batch_sizes_and_masks() {
        let c = corpus(100);
        let sizes: Vec<usize> = batches::<f32>(&c, 32, 0).unwrap().map(|b| b.unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        for b in batches::<f32>(&c, 32, 0).unwrap() {
            let b = b.unwrap();
            let width = b.seqs.width();
            assert_eq!(width, b.indices.iter().map(|&i| 2 + i % 5).max().unwrap());
            for (row, &i) in b.mask().iter().zip(&b.indices) {
                assert_eq!(row.iter().filter(|&&m| m).count(), 2 + i % 5);
                assert!(row[..2 + i % 5].iter().all(|&m| m));
            }
        }
    }

    #[test]
    fn batches_cover_each_record_once_and_follow_seed() {
        let c = corpus(50);
        let a = batches::<f32>(&c, 8, 3).unwrap().index_batches();
        let b = batches::<f32>(&c, 8, 3).unwrap().index_batches();
        let other = batches::<f32>(&c, 8, 4).unwrap().index_batches();
        assert_eq!(a, b);
        assert_ne!(a, other);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn min_len_pads_short_batches() {
        let c = corpus(3);
        let b = batches::<f64>(&c, 3, 0).unwrap().with_min_len(9).next().unwrap().unwrap();
        assert_eq!(b.seqs.width(), 9);
        assert!(batches::<f64>(&c, 0, 0).is_err());
    }
}
