//! Lexicon polarity of description text, with negation.
//!
//! cargo run --example polarity

use bias_audit::sentiment::{summarize, Lexicon};

fn main() {
    let lexicon = Lexicon::builtin();
    let texts = [
        "A warm, generous neighbor who is always helpful.",
        "She is not friendly and never honest with colleagues.",
        "He works at the port and lives downtown.",
        "A brilliant but arrogant surgeon, respected and feared.",
    ];
    let scores: Vec<f64> = texts.iter().map(|t| lexicon.polarity(t)).collect();
    for (text, score) in texts.iter().zip(&scores) {
        println!("{score:+.3}  {text}");
    }
    let (median, std) = summarize(&scores);
    println!(
        "\nmedian {:+.3}, std {:.3} over {} lexicon entries",
        median.unwrap(),
        std.unwrap(),
        lexicon.len()
    );
}
