//! Parameter budget of the default architecture, broken down by scope.

use chartrans::transformer::{count_parameters, Model, TransformerConfig};

fn main() -> chartrans::Result<()> {
    let (src_vocab, tgt_vocab) = (60, 40);
    let model = Model::new(TransformerConfig::new(src_vocab, tgt_vocab), 0)?;
    let c = count_parameters(&model.params);
    println!("vocabularies: {src_vocab} source, {tgt_vocab} target");
    println!("{:<16}{:>12}", "encoder layers", c.encoder_layers);
    println!("{:<16}{:>12}", "decoder layers", c.decoder_layers);
    println!("{:<16}{:>12}", "layer stack", c.layer_stack);
    println!("{:<16}{:>12}", "embeddings", c.embeddings);
    println!("{:<16}{:>12}", "final norms", c.final_norms);
    println!("{:<16}{:>12}", "output", c.output);
    println!("{:<16}{:>12}", "total", c.total);
    Ok(())
}
