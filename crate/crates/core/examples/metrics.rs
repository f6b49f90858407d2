//! CIDEr-D on a small hand corpus, and the fluency penalty in a report.
//!
//! cargo run --release -p aacap --example metrics

use aacap::data::CaptionText;
use aacap::metrics::{cider, score_items, MetricOptions, NgramProfile, ScoredItem};

fn main() -> aacap::Result<()> {
    let refs = [
        vec!["a dog barks loudly in the yard", "a dog is barking outside"],
        vec!["rain falls on a metal roof", "heavy rain is falling on the roof"],
        vec!["a bell rings three times", "a church bell is ringing"],
    ];
    let sets: Vec<Vec<CaptionText>> = refs
        .iter()
        .map(|r| r.iter().map(|t| CaptionText::human(t)).collect())
        .collect::<aacap::Result<_>>()?;
    let profile = NgramProfile::from_references(&sets);
    for cand in ["a dog is barking outside", "a dog barks", "rain on a roof", "a cat meows"] {
        println!("{:>28}  CIDEr vs item 0: {:.4}", cand, cider(cand, &sets[0], &profile));
    }

    let items: Vec<ScoredItem> = [("a dog is barking outside", true), ("rain rain falls falls", false), ("a bell is ringing", true)]
        .iter()
        .zip(&sets)
        .enumerate()
        .map(|(k, ((caption, fluent), references))| ScoredItem {
            id: format!("item{k}"),
            caption: caption.to_string(),
            fluent: *fluent,
            references: references.clone(),
        })
        .collect();
    let report = score_items(&items, &MetricOptions::default(), serde_json::json!({"example": "metrics"}))?;
    println!("{}", report.to_json()?);
    Ok(())
}
