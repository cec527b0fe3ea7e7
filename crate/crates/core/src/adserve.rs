//! Genre-targeted ad selection, five-slot banner rotation, and the survey
//! cross-tables used to pair products with music genres.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Ad, Catalog, CatalogError};

/// Impressions at or above this count take an ad out of targeted pools.
pub const IMPRESSION_CAP: u64 = 10;
pub const SLOTS: usize = 5;

const BUNDLED_TABLES: &str = include_str!("../data/affinity_tables.json");

/// Ad ids eligible for one listener, in store order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdSelection(pub Vec<String>);

impl AdSelection {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.0
    }
}

/// Picks the ads a listener should see.
///
/// With liked genres, only ads targeting one of them and still under the
/// impression cap qualify. Without liked genres, or when nothing qualifies,
/// every ad is returned (the fallback ignores the cap).
pub fn select_ads(ads: &[Ad], liked_genres: &[String]) -> AdSelection {
    let mut selected = Vec::new();
    if !liked_genres.is_empty() {
        for ad in ads {
            for genre in liked_genres {
                if ad.target_genre == *genre && ad.impressions < IMPRESSION_CAP {
                    selected.push(ad.id.clone());
                }
            }
        }
    } else {
        selected.extend(ads.iter().map(|ad| ad.id.clone()));
    }
    if selected.is_empty() {
        selected.extend(ads.iter().map(|ad| ad.id.clone()));
    }
    AdSelection(selected)
}

/// Selection for a registered listener, using their live liked genres.
pub fn select_for_listener(catalog: &Catalog, user_id: &str, now: DateTime<Utc>) -> Result<AdSelection, CatalogError> {
    let liked: Vec<String> = catalog
        .liked_genres(user_id, now)?
        .into_iter()
        .map(|(genre, _)| genre)
        .collect();
    Ok(select_ads(&catalog.ads(), &liked))
}

pub fn record_impression(catalog: &Catalog, ad_id: &str) -> Result<u64, CatalogError> {
    catalog.record_impression(ad_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationMode {
    /// Stride-5 counters that reset to their slot offset, as in the original
    /// client; a slot may get pinned to one ad.
    #[default]
    Classic,
    /// Plain round-robin: each tick shows the next five ads in order.
    Fair,
}

/// Banner slot counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationState {
    pub counters: [usize; SLOTS],
    pub mode: RotationMode,
}

impl Default for RotationState {
    fn default() -> Self {
        Self::new(RotationMode::Classic)
    }
}

impl RotationState {
    pub fn new(mode: RotationMode) -> Self {
        Self {
            counters: [0, 1, 2, 3, 4],
            mode,
        }
    }

    /// Returns the ad indices to show now and advances the counters.
    ///
    /// A slot whose base offset is itself out of range (fewer than five ads)
    /// falls back to `offset % len`.
    pub fn step(&mut self, len: usize) -> [usize; SLOTS] {
        assert!(len >= 1, "rotation needs at least one ad");
        match self.mode {
            RotationMode::Classic => {
                for (slot, counter) in self.counters.iter_mut().enumerate() {
                    if *counter >= len {
                        *counter = reset_index(slot, len);
                    }
                }
                let shown = self.counters;
                for (slot, counter) in self.counters.iter_mut().enumerate() {
                    *counter += SLOTS;
                    if *counter >= len {
                        *counter = reset_index(slot, len);
                    }
                }
                shown
            }
            RotationMode::Fair => {
                let start = self.counters[0] % len;
                let shown = std::array::from_fn(|slot| (start + slot) % len);
                let next = (start + SLOTS) % len;
                self.counters = std::array::from_fn(|slot| (next + slot) % len);
                shown
            }
        }
    }
}

fn reset_index(slot: usize, len: usize) -> usize {
    if slot < len {
        slot
    } else {
        slot % len
    }
}

pub fn rotation_step(state: &mut RotationState, len: usize) -> [usize; SLOTS] {
    state.step(len)
}

#[derive(Debug, Error)]
pub enum AffinityError {
    #[error("genre {0} is not a column of the table")]
    UnknownGenre(String),
    #[error("cannot read affinity tables: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed affinity tables: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityRow {
    pub label: String,
    pub counts: Vec<u32>,
    /// Published row total, where the source table has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<AffinityRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_sums: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grand_total: Option<u32>,
}

impl AffinityTable {
    fn column(&self, genre: &str) -> Result<usize, AffinityError> {
        self.columns
            .iter()
            .position(|c| c == genre)
            .ok_or_else(|| AffinityError::UnknownGenre(genre.to_string()))
    }

    pub fn row(&self, label: &str) -> Option<&AffinityRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Survey cross-tables: products by favourite genre, and secondary genre by
/// primary genre.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityTables {
    pub products_by_genre: AffinityTable,
    pub secondary_genre: AffinityTable,
}

impl AffinityTables {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_TABLES).expect("bundled affinity tables parse")
    }

    pub fn load(path: &Path) -> Result<Self, AffinityError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every genre label used by the tables.
    pub fn genres(&self) -> &[String] {
        &self.products_by_genre.columns
    }

    /// Product categories for a genre, most popular first (ties alphabetical).
    pub fn rank_products(&self, genre: &str) -> Result<Vec<(String, u32)>, AffinityError> {
        let table = &self.products_by_genre;
        let col = table.column(genre)?;
        let mut ranked: Vec<(String, u32)> = table
            .rows
            .iter()
            .map(|row| (row.label.clone(), row.counts[col]))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked)
    }

    /// Most frequent second choice for listeners whose first choice is `primary`.
    pub fn top_secondary_genre(&self, primary: &str) -> Result<(String, u32), AffinityError> {
        let table = &self.secondary_genre;
        let row = table
            .row(primary)
            .ok_or_else(|| AffinityError::UnknownGenre(primary.to_string()))?;
        table
            .columns
            .iter()
            .zip(&row.counts)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(genre, &count)| (genre.clone(), count))
            .ok_or_else(|| AffinityError::UnknownGenre(primary.to_string()))
    }
}
