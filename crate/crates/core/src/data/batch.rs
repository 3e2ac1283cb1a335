use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featenc::{EncodedSource, SourceBatch, SourceEncoder, UnknownPolicy};

use super::vocab::{Vocabulary, BOS, EOS, PAD, UNK};
use super::Example;

/// An example mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub source: EncodedSource,
    pub target: Vec<usize>,
}

pub fn encode_examples(
    examples: &[Example],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    encoder: SourceEncoder,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|ex| {
            let source = encoder.encode(&ex.features, &ex.source, src_vocab)?;
            let target = ex
                .target
                .iter()
                .map(|s| match (tgt_vocab.char_index(s), encoder.unknown) {
                    (Some(i), _) => Ok(i),
                    (None, UnknownPolicy::MapToUnk) => Ok(UNK),
                    (None, UnknownPolicy::Reject) => Err(Error::UnknownSymbol(s.clone())),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EncodedExample { source, target })
        })
        .collect()
}

/// A padded mini-batch. Target input is `BOS t1 … tn`, target output is
/// `t1 … tn EOS`, both padded with `PAD` to `tgt_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: SourceBatch,
    pub tgt_len: usize,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub tgt_mask: Vec<bool>,
    /// Dataset indices of the rows.
    pub example_ids: Vec<usize>,
}

impl Batch {
    pub fn from_examples(data: &[EncodedExample], ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let source = SourceBatch::from_sources(ids.iter().map(|&i| &data[i].source))?;
        let tgt_len = ids.iter().map(|&i| data[i].target.len()).max().unwrap() + 1;
        let n = ids.len() * tgt_len;
        let mut tgt_in = vec![PAD; n];
        let mut tgt_out = vec![PAD; n];
        let mut tgt_mask = vec![false; n];
        for (b, &i) in ids.iter().enumerate() {
            let t = &data[i].target;
            let row = b * tgt_len;
            tgt_in[row] = BOS;
            tgt_in[row + 1..row + 1 + t.len()].copy_from_slice(t);
            tgt_out[row..row + t.len()].copy_from_slice(t);
            tgt_out[row + t.len()] = EOS;
            tgt_mask[row..row + t.len() + 1].fill(true);
        }
        Ok(Batch {
            source,
            tgt_len,
            tgt_in,
            tgt_out,
            tgt_mask,
            example_ids: ids.to_vec(),
        })
    }

    pub fn size(&self) -> usize {
        self.example_ids.len()
    }

    /// Number of non-padding target positions (loss terms).
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask.iter().filter(|&&m| m).count()
    }

    /// Target indices of row `b` without `BOS`/`EOS`/padding.
    pub fn row_target(&self, b: usize) -> Vec<usize> {
        let row = &self.tgt_out[b * self.tgt_len..(b + 1) * self.tgt_len];
        row.iter().take_while(|&&t| t != EOS).copied().collect()
    }
}

/// Example order for one epoch. With `shuffle`, the order is a permutation
/// drawn from a generator keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Batches for one epoch, in consecutive chunks of `batch_size` examples of
/// [`epoch_order`]; the last chunk may be smaller.
pub fn make_batches(
    data: &[EncodedExample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let order = epoch_order(data.len(), seed, epoch, shuffle);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks
        .into_iter()
        .map(move |ids| Batch::from_examples(data, &ids).expect("non-empty chunk")))
}
