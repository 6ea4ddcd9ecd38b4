// SPDX-License-Identifier: MIT OR Apache-2.0

//! Triple corruption: replace the object with a wrong entity of the same class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::triple::FactTriple;
use crate::error::{LabError, Result};

/// How a false object is produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionStrategy {
    /// Shift the last four-digit year inside the object by a fixed offset.
    YearShift { offset: i32 },
    /// Shift by an offset drawn uniformly from `[-max, max] \ {0}`.
    RandomYearShift { max_offset: i32 },
    /// Draw a different object from a same-relation pool.
    EntitySwap { pool: Vec<String> },
}

impl CorruptionStrategy {
    pub fn id(&self) -> String {
        match self {
            CorruptionStrategy::YearShift { offset } => format!("year_shift({offset})"),
            CorruptionStrategy::RandomYearShift { max_offset } => format!("random_year_shift({max_offset})"),
            CorruptionStrategy::EntitySwap { pool } => format!("entity_swap({})", pool.len()),
        }
    }
}

/// A triple whose object was replaced by `false_object`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptedTriple {
    pub base: FactTriple,
    pub false_object: String,
    pub strategy: String,
}

/// Byte range of the last standalone four-digit number in `s`.
fn find_year(s: &str) -> Option<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i - start == 4 {
                found = Some((start, i));
            }
        } else {
            i += 1;
        }
    }
    found
}

fn shift_year(object: &str, offset: i32) -> Result<String> {
    if offset == 0 {
        return Err(LabError::Corruption("year shift offset must be non-zero".into()));
    }
    let (a, b) = find_year(object)
        .ok_or_else(|| LabError::Corruption(format!("object {object:?} contains no four-digit year")))?;
    let year: i32 = object[a..b].parse().expect("four ascii digits");
    let shifted = year + offset;
    if !(1000..=9999).contains(&shifted) {
        return Err(LabError::Corruption(format!("shifted year {shifted} leaves the four-digit range")));
    }
    Ok(format!("{}{shifted}{}", &object[..a], &object[b..]))
}

/// Replaces the triple's object. Deterministic given the RNG state.
pub fn corrupt_triple(triple: &FactTriple, strategy: &CorruptionStrategy, rng: &mut impl Rng) -> Result<CorruptedTriple> {
    let false_object = match strategy {
        CorruptionStrategy::YearShift { offset } => shift_year(&triple.object, *offset)?,
        CorruptionStrategy::RandomYearShift { max_offset } => {
            if *max_offset < 1 {
                return Err(LabError::Corruption("max_offset must be >= 1".into()));
            }
            let magnitude = rng.random_range(1..=*max_offset);
            let offset = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            shift_year(&triple.object, offset)?
        }
        CorruptionStrategy::EntitySwap { pool } => {
            let mut distinct: Vec<&String> = Vec::new();
            for p in pool {
                if !distinct.contains(&p) {
                    distinct.push(p);
                }
            }
            if distinct.len() <= 1 {
                return Err(LabError::Corruption(format!(
                    "entity pool needs at least two distinct objects, has {}",
                    distinct.len()
                )));
            }
            let candidates: Vec<&String> = distinct.into_iter().filter(|p| **p != triple.object).collect();
            if candidates.is_empty() {
                return Err(LabError::Corruption("pool holds no object other than the true one".into()));
            }
            candidates[rng.random_range(0..candidates.len())].clone()
        }
    };
    if false_object == triple.object {
        return Err(LabError::Corruption("false object equals the true object".into()));
    }
    Ok(CorruptedTriple {
        base: triple.clone(),
        false_object,
        strategy: strategy.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::triple::DatasetTag;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn einstein_year_shift() {
        let t = FactTriple::new(
            "Albert Einstein",
            "was awarded",
            "Nobel Prize of Physics in 1921",
            DatasetTag::Prize,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = corrupt_triple(&t, &CorruptionStrategy::YearShift { offset: -1 }, &mut rng).unwrap();
        assert_eq!(c.false_object, "Nobel Prize of Physics in 1920");
    }

    #[test]
    fn two_element_pool_gives_the_other_object() {
        let t = FactTriple::new("PERSON_1", "was awarded", "PRIZE_A", DatasetTag::Prize);
        let pool = vec!["PRIZE_A".to_string(), "PRIZE_B".to_string()];
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = corrupt_triple(&t, &CorruptionStrategy::EntitySwap { pool: pool.clone() }, &mut rng).unwrap();
            assert_eq!(c.false_object, "PRIZE_B");
        }
    }

    #[test]
    fn degenerate_inputs_are_corruption_errors() {
        let t = FactTriple::new("s", "r", "PRIZE_A", DatasetTag::Prize);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = CorruptionStrategy::EntitySwap { pool: vec!["PRIZE_A".into()] };
        assert!(matches!(corrupt_triple(&t, &one, &mut rng), Err(LabError::Corruption(_))));
        let zero = CorruptionStrategy::YearShift { offset: 0 };
        let y = FactTriple::new("s", "r", "1950", DatasetTag::Movie);
        assert!(corrupt_triple(&y, &zero, &mut rng).is_err());
        assert!(corrupt_triple(&t, &CorruptionStrategy::YearShift { offset: 1 }, &mut rng).is_err());
    }

    #[test]
    fn seeded_swaps_replay_exactly() {
        let pool: Vec<String> = (0..7).map(|i| format!("E_{i}")).collect();
        let triples: Vec<FactTriple> = (0..100)
            .map(|i| FactTriple::new(&format!("S_{i}"), "r", &pool[i % 7], DatasetTag::Synthetic))
            .collect();
        let strategy = CorruptionStrategy::EntitySwap { pool: pool.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let got: Vec<String> = triples
            .iter()
            .map(|t| corrupt_triple(t, &strategy, &mut rng).unwrap().false_object)
            .collect();

        // replay: same seed, same candidate order, same draws
        let mut replay = ChaCha8Rng::seed_from_u64(123);
        for (t, g) in triples.iter().zip(&got) {
            let candidates: Vec<&String> = pool.iter().filter(|p| **p != t.object).collect();
            let pick = candidates[replay.random_range(0..candidates.len())];
            assert_eq!(pick, g);
            assert_ne!(g, &t.object);
        }
    }

    proptest::proptest! {
        #[test]
        fn year_shift_keeps_format(year in 1100i32..9000, offset in 1i32..50, neg in proptest::bool::ANY) {
            let off = if neg { -offset } else { offset };
            let t = FactTriple::new("s", "r", &format!("prize in {year}"), DatasetTag::Prize);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let c = corrupt_triple(&t, &CorruptionStrategy::YearShift { offset: off }, &mut rng).unwrap();
            proptest::prop_assert_eq!(c.false_object, format!("prize in {}", year + off));
        }
    }
}
