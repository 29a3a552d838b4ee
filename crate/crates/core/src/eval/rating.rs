use serde::{Deserialize, Serialize};

/// Four-level survey answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanRating {
    VeryWell,
    Fair,
    NotWell,
    Awful,
}

/// Accuracy score in percent.
pub fn map_human_rating(rating: HumanRating) -> u8 {
    match rating {
        HumanRating::VeryWell => 100,
        HumanRating::Fair => 66,
        HumanRating::NotWell => 33,
        HumanRating::Awful => 0,
    }
}

/// Mean percent over a set of ratings; `None` when empty.
pub fn mean_rating(ratings: &[HumanRating]) -> Option<f64> {
    (!ratings.is_empty()).then(|| {
        ratings
            .iter()
            .map(|&r| f64::from(map_human_rating(r)))
            .sum::<f64>()
            / ratings.len() as f64
    })
}
