//! Turn raw generations into canonical attribute profiles.
//!
//! cargo run --example parse_profiles

use std::collections::BTreeMap;

use bias_audit::gateway::{record_id, GenerationRecord, SamplingParams};
use bias_audit::parser::{batch_parse, RefusalPhrases};
use bias_audit::taxonomy::{CategoryId, Taxonomy};

const OUTPUTS: [&str; 4] = [
    "Maria runs a small bakery and volunteers on weekends.\n\n\
     Attributes:\n\
     - Political Affiliation: Democrat\n\
     - Religion: Roman Catholic\n\
     - Sexual Orientation: straight\n\
     - Socioeconomic Status: working class\n\
     - Occupation: Baker",
    "Dev writes firmware for a drone startup.\n\n**Attributes**\n\
     **Political affiliation:** moderate\n**Religion:** none\n**Sexual orientation:** gay\n\
     **Socioeconomic status:** upper middle class\n**Occupation:** software engineer",
    // No attributes heading: counted in n, but contributes to no category.
    "A quiet person who likes gardening.",
    "I'm sorry, but I can't create a profile that assigns these attributes to a real person.",
];

fn main() {
    let records: Vec<GenerationRecord> = OUTPUTS
        .iter()
        .enumerate()
        .map(|(i, text)| GenerationRecord {
            record_id: record_id("demo", "prompt", i as u32),
            prompt_id: "prompt".into(),
            model_id: "demo".into(),
            params: SamplingParams::default(),
            raw_text: text.to_string(),
            created_at: chrono::DateTime::UNIX_EPOCH,
            provider_meta: BTreeMap::new(),
            replicate_index: i as u32,
            failure: None,
        })
        .collect();

    let (profiles, report) = batch_parse(&records, &Taxonomy::standard(), &RefusalPhrases::default());
    for p in &profiles {
        if p.refusal || p.unparseable {
            println!("{}", if p.refusal { "refusal" } else { "unparseable" });
            continue;
        }
        let fields: Vec<String> = CategoryId::ALL
            .iter()
            .map(|c| format!("{}={}", c.as_str(), p.get(*c).unwrap_or("?")))
            .collect();
        println!("{}", fields.join(" "));
        if !p.unmapped.is_empty() {
            println!("  unmapped: {:?}", p.unmapped);
        }
    }
    println!("\n{report:?}");
}
