//! Scores hand-written predictions with every metric and bins the errors by
//! gold length.

use chartrans::data::SymbolUnit;
use chartrans::decode::{error_length_histogram, evaluate, parse_predictions};

const INFLECTION: &str = "\
smear V;PST;PTCP\tsmeared\tsmeard
walk V;PST;PTCP\twalked\twalked
stop V;V.PTCP;PRS\tstopping\tstoping
do V;NEG\tundo\tundo
internationalize V;PRS;3;SG\tinternationalizes\tinternationalises
";

const G2P: &str = "\
cat\tK AE T\tK AE T
dog\tD AO G\tD AA G
birds\tB ER D Z\tB ER D S
";

fn main() -> chartrans::Result<()> {
    let preds = parse_predictions(INFLECTION, "inflection".as_ref(), SymbolUnit::Characters)?;
    let report = evaluate(&preds)?;
    print!("inflection\n{report}");
    println!("errors by gold length, bins of 5:");
    for bin in error_length_histogram(&preds, 5)? {
        println!("  {:>2}-{:<2}  {}", bin.lo, bin.hi, bin.errors);
    }

    let preds = parse_predictions(G2P, "g2p".as_ref(), SymbolUnit::Phonemes)?;
    let report = evaluate(&preds)?;
    println!("\ng2p (distances count whole phonemes)");
    print!("{}", report.to_key_values());
    Ok(())
}
