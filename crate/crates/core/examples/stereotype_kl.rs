//! KL divergence and the stereotype score over demographic axes.
//!
//! cargo run --example stereotype_kl

use std::collections::BTreeMap;

use bias_audit::stats::{kl_divergence, stereotype_from_distributions, DEFAULT_EPSILON};
use bias_audit::taxonomy::{AxisId, CategoryId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "KL([.75,.25] || [.5,.5]) = {:.6}",
        kl_divergence(&[0.75, 0.25], &[0.5, 0.5], 0.0)?
    );
    println!(
        "KL([1,0] || [0,1]), eps=1e-6 = {:.3}",
        kl_divergence(&[1.0, 0.0], &[0.0, 1.0], DEFAULT_EPSILON)?
    );

    // conservative, liberal, neutral
    let per_axis = BTreeMap::from([
        (
            AxisId::Gender,
            vec![
                ("Male".into(), vec![0.30, 0.55, 0.15]),
                ("Female".into(), vec![0.10, 0.85, 0.05]),
            ],
        ),
        (
            AxisId::EthnicityRace,
            vec![
                ("White".into(), vec![0.40, 0.50, 0.10]),
                ("Black".into(), vec![0.02, 0.95, 0.03]),
                ("Asian".into(), vec![0.05, 0.90, 0.05]),
            ],
        ),
        (
            AxisId::Age,
            vec![
                ("BabyBoomer".into(), vec![0.50, 0.40, 0.10]),
                ("GenerationZ".into(), vec![0.00, 1.00, 0.00]),
            ],
        ),
    ]);
    let score = stereotype_from_distributions(&per_axis, CategoryId::Politics, DEFAULT_EPSILON)?;
    for (axis, max) in &score.per_axis {
        println!("{axis:<14} max KL {:.3}  ({} || {})", max.kl, max.from, max.to);
    }
    println!("stereotype score {:.3}", score.score);
    Ok(())
}
