use std::sync::Arc;

use crate::corpus::{Sentence, Triplet};
use crate::decoder::{DecodeInput, DecodeOptions, Decoder, InputSide, NmtScorer, ScorerBinding};
use crate::error::Result;
use crate::nmt::Seq2SeqModel;

/// Single-model decoder over the `mt` input slot.
pub fn single_model_decoder(model: Arc<Seq2SeqModel>) -> Result<Decoder> {
    Decoder::new(
        vec![ScorerBinding {
            name: "model".into(),
            scorer: Arc::new(NmtScorer::new(model)),
            input: InputSide::Mt,
            weight: 1.0,
        }],
        None,
    )
}

/// 1-best outputs, `None` where decoding hit the length cap or produced
/// nothing.
pub fn translate(decoder: &Decoder, inputs: &[Sentence], beam: usize) -> Result<Vec<Option<Sentence>>> {
    let inputs: Vec<DecodeInput> = inputs
        .iter()
        .map(|s| DecodeInput {
            mt: s.clone(),
            src: None,
        })
        .collect();
    let opts = DecodeOptions {
        beam,
        length_norm: true,
    };
    Ok(decoder
        .decode_all(&inputs, &opts)?
        .into_iter()
        .map(|l| {
            let best = l.entries.into_iter().next().map(|e| e.tokens);
            best.filter(|s| !l.truncated && !s.is_empty())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub triplets: Vec<Triplet>,
    /// Sentences lost to truncated or empty translations.
    pub dropped: usize,
}

/// Translates each post-edit backwards with `reverse` and the result forward
/// again with `forward`, keeping the intermediate as the source.
pub fn roundtrip_generate(
    mono_pe: &[Sentence],
    reverse: Arc<Seq2SeqModel>,
    forward: Arc<Seq2SeqModel>,
    beam: usize,
) -> Result<RoundTrip> {
    let back = translate(&single_model_decoder(reverse)?, mono_pe, beam)?;
    let kept: Vec<(usize, Sentence)> = back
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    let srcs: Vec<Sentence> = kept.iter().map(|(_, s)| s.clone()).collect();
    let there = translate(&single_model_decoder(forward)?, &srcs, beam)?;
    let mut triplets = Vec::with_capacity(kept.len());
    for ((i, src), mt) in kept.into_iter().zip(there) {
        if let Some(mt) = mt {
            if !mono_pe[i].is_empty() {
                triplets.push(Triplet::new(src, mt, mono_pe[i].clone())?);
            }
        }
    }
    Ok(RoundTrip {
        dropped: mono_pe.len() - triplets.len(),
        triplets,
    })
}
