use crate::data::vocab::{BOS, EOS};
use crate::error::Result;
use crate::featenc::EncodedSource;
use crate::numerics::kernels::argmax;
use crate::transformer::{encode_sources, DecoderState, ForwardOptions, Model};

/// Output length cap: `max(30, 2·source_characters + 5)`.
pub fn default_max_len(source_chars: usize) -> usize {
    30.max(2 * source_chars + 5)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaxLen {
    #[default]
    FromSource,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_len: MaxLen,
    /// Number of sources decoded together.
    pub batch_size: usize,
    /// Keep the logits of every generated position.
    pub keep_logits: bool,
    pub forward: ForwardOptions,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: MaxLen::FromSource,
            batch_size: 64,
            keep_logits: false,
            forward: ForwardOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decoded {
    /// Generated target ids without `BOS`/`EOS`.
    pub symbols: Vec<usize>,
    /// One row per generated position (including the one that produced
    /// `EOS`), when requested.
    pub logits: Vec<Vec<f64>>,
}

/// Left-to-right argmax decoding from `BOS` until `EOS` or the length cap.
/// Ties go to the lowest symbol index.
pub fn greedy_decode(
    model: &Model,
    sources: &[EncodedSource],
    opts: &DecodeOptions,
) -> Result<Vec<Decoded>> {
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(opts.batch_size.max(1)) {
        let refs: Vec<&EncodedSource> = chunk.iter().collect();
        let memory = encode_sources(model, &refs)?;
        let mut state = DecoderState::new(model, memory, opts.forward);
        let caps: Vec<usize> = chunk
            .iter()
            .map(|s| match opts.max_len {
                MaxLen::FromSource => default_max_len(s.char_count()),
                MaxLen::Fixed(n) => n,
            })
            .collect();
        let mut results = vec![Decoded::default(); chunk.len()];
        let mut done: Vec<bool> = caps.iter().map(|&c| c == 0).collect();
        let mut tokens = vec![BOS; chunk.len()];
        let vocab = model.config.tgt_vocab_size;
        while !done.iter().all(|&d| d) {
            let logits = state.step(&tokens)?;
            for (b, row) in logits.chunks_exact(vocab).enumerate() {
                if done[b] {
                    continue;
                }
                if opts.keep_logits {
                    results[b].logits.push(row.to_vec());
                }
                let next = argmax(row);
                tokens[b] = next;
                if next == EOS {
                    done[b] = true;
                } else {
                    results[b].symbols.push(next);
                    done[b] = results[b].symbols.len() >= caps[b];
                }
            }
        }
        out.extend(results);
    }
    Ok(out)
}
