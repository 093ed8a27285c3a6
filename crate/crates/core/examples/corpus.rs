//! Build the default prompt corpus and show what one prompt looks like.
//!
//! cargo run --example corpus

use bias_audit::corpus::{build_corpus, sample_sizes, total_generations, CorpusPlan, PromptTemplate};
use bias_audit::taxonomy::{builtin_names, standard_axes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let template = PromptTemplate::default();
    let specs = build_corpus(&builtin_names(), &standard_axes(), &CorpusPlan::default(), &template)?;

    println!("{} prompts, {} generations", specs.len(), total_generations(&specs));
    for ((mode, axis, attribute), n) in sample_sizes(&specs) {
        println!("  {mode:<8} {axis:<14} {attribute:<16} n={n}");
    }

    let first = &specs[0];
    println!(
        "\n{} ({} replicates):\n{}",
        first.id,
        first.replicates,
        template.render(first)?
    );
    Ok(())
}
