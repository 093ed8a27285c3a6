//! Exact two-sided binomial tests against reference proportions, with stars.
//!
//! cargo run --example binomial_stars

use bias_audit::stats::{binomial_two_sided, star_marker, stars};
use bias_audit::taxonomy::{builtin_references, AxisId, CategoryId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 47 liberal answers out of 50 prompts for a Gen-Z persona.
    let reference = builtin_references()
        .into_iter()
        .find(|r| r.axis == AxisId::Age && r.attribute == "GenerationZ" && r.category == CategoryId::Politics)
        .expect("bundled reference");
    let p_ref = reference.proportion("liberal").unwrap();
    let p = binomial_two_sided(47, 50, p_ref)?;
    println!("47/50 liberal vs {p_ref}: p = {p:.3e} {}", star_marker(stars(p)?));
    println!("  source: {}", reference.source_citation);

    println!("\n  k   p-value     stars   (n = 50, p = 0.3)");
    for k in [0, 8, 10, 15, 20, 23, 26] {
        let p = binomial_two_sided(k, 50, 0.3)?;
        println!("{k:>3}   {p:<10.4e}  {}", star_marker(stars(p)?));
    }
    Ok(())
}
