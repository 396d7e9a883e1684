//! Generator for small purchase logs with planted visual and artist taste.
//!
//! Items are grouped into styles (Gaussian blobs in embedding space), each
//! style is shared by a few artists, and each artist adds its own offset.
//! Every user has one favorite style and a couple of favorite artists within
//! it; most purchases come from those, the rest are uniform noise. With
//! `one_of_a_kind` every item sells at most once, as with unique artworks.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Catalog, InteractionLog, ItemIdx, ItemRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub styles: usize,
    pub artists_per_style: usize,
    pub favorite_artists: usize,
    /// Inclusive range of baskets per user.
    pub baskets: (usize, usize),
    /// Inclusive range of items per basket.
    pub basket_size: (usize, usize),
    /// Probability a purchase is by a favorite artist.
    pub p_artist: f64,
    /// Probability a purchase is another work of the favorite style.
    pub p_style: f64,
    pub style_spread: f64,
    pub artist_spread: f64,
    pub item_noise: f64,
    /// Each item can be bought by at most one user.
    pub one_of_a_kind: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 300,
            items: 1000,
            dim: 64,
            styles: 20,
            artists_per_style: 5,
            favorite_artists: 2,
            baskets: (3, 5),
            basket_size: (1, 2),
            p_artist: 0.6,
            p_style: 0.3,
            style_spread: 1.0,
            artist_spread: 0.5,
            item_noise: 0.3,
            one_of_a_kind: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Small baskets of unique works with weak visual signal: the regime in
    /// which negative sampling matters.
    pub fn ablation() -> Self {
        SyntheticConfig {
            dim: 256,
            baskets: (2, 3),
            basket_size: (1, 1),
            p_artist: 0.4,
            p_style: 0.3,
            item_noise: 2.5,
            one_of_a_kind: true,
            seed: 7,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub catalog: Catalog,
    pub log: InteractionLog,
    /// Planted style per item.
    pub styles: Vec<u32>,
    /// Planted favorite style per user id, in log order.
    pub user_styles: Vec<u32>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let n_artists = cfg.styles * cfg.artists_per_style;
    if cfg.users == 0 || cfg.dim == 0 || n_artists == 0 || cfg.items < n_artists {
        return Err(Error::InvalidArgument(format!("bad synthetic configuration {cfg:?}")));
    }
    if cfg.favorite_artists == 0 || cfg.favorite_artists > cfg.artists_per_style {
        return Err(Error::InvalidArgument("favorite_artists must be in 1..=artists_per_style".into()));
    }
    if cfg.baskets.0 == 0 || cfg.baskets.0 > cfg.baskets.1 || cfg.basket_size.0 == 0 || cfg.basket_size.0 > cfg.basket_size.1 {
        return Err(Error::InvalidArgument("bad basket ranges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |std: f64| Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()));
    let (style_d, artist_d, noise_d) = (gauss(cfg.style_spread)?, gauss(cfg.artist_spread)?, gauss(cfg.item_noise)?);

    let style_centers: Vec<Vec<f64>> = (0..cfg.styles)
        .map(|_| (0..cfg.dim).map(|_| style_d.sample(&mut rng)).collect())
        .collect();
    let artist_offsets: Vec<Vec<f64>> = (0..n_artists)
        .map(|_| (0..cfg.dim).map(|_| artist_d.sample(&mut rng)).collect())
        .collect();

    let mut records = Vec::with_capacity(cfg.items);
    let mut item_styles = Vec::with_capacity(cfg.items);
    let mut item_artists = Vec::with_capacity(cfg.items);
    for i in 0..cfg.items {
        let artist = i % n_artists;
        let style = artist / cfg.artists_per_style;
        let embedding: Vec<f32> = (0..cfg.dim)
            .map(|d| (style_centers[style][d] + artist_offsets[artist][d] + noise_d.sample(&mut rng)) as f32)
            .collect();
        records.push(ItemRecord {
            item_id: format!("item{i:05}"),
            embedding,
            artist_id: Some(format!("artist{artist:04}")),
        });
        item_styles.push(style as u32);
        item_artists.push(artist);
    }
    let catalog = Catalog::from_records(records, cfg.dim)?;
    let mut by_artist: Vec<Vec<ItemIdx>> = vec![Vec::new(); n_artists];
    let mut by_style: Vec<Vec<ItemIdx>> = vec![Vec::new(); cfg.styles];
    for i in 0..cfg.items {
        by_artist[item_artists[i]].push(i as ItemIdx);
        by_style[item_styles[i] as usize].push(i as ItemIdx);
    }

    let mut rows = Vec::new();
    let mut sold = vec![false; cfg.items];
    let mut user_styles = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let style = rng.random_range(0..cfg.styles);
        user_styles.push(style as u32);
        let style_artists: Vec<usize> = (style * cfg.artists_per_style..(style + 1) * cfg.artists_per_style).collect();
        let favorites: Vec<usize> = style_artists
            .choose_multiple(&mut rng, cfg.favorite_artists)
            .copied()
            .collect();
        let fav_items: Vec<ItemIdx> = favorites.iter().flat_map(|&a| by_artist[a].iter().copied()).collect();
        let n_baskets = rng.random_range(cfg.baskets.0..=cfg.baskets.1);
        let mut owned = BTreeSet::new();
        for b in 0..n_baskets {
            let size = rng.random_range(cfg.basket_size.0..=cfg.basket_size.1);
            let mut placed = 0;
            let mut tries = 0;
            while placed < size && tries < 100 {
                tries += 1;
                let r: f64 = rng.random();
                let item = if r < cfg.p_artist {
                    *fav_items.choose(&mut rng).expect("artists own items")
                } else if r < cfg.p_artist + cfg.p_style {
                    *by_style[style].choose(&mut rng).expect("styles own items")
                } else {
                    rng.random_range(0..cfg.items) as ItemIdx
                };
                if cfg.one_of_a_kind && sold[item as usize] {
                    continue;
                }
                if owned.insert(item) {
                    sold[item as usize] = true;
                    rows.push((format!("user{u:05}"), item, b as u64));
                    placed += 1;
                }
            }
        }
    }
    Ok(SyntheticData {
        catalog,
        log: InteractionLog::from_rows(rows),
        styles: item_styles,
        user_styles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            users: 40,
            items: 200,
            dim: 8,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.catalog.len(), 200);
        assert_eq!(a.log.num_users(), 40);
        assert_eq!(a.log, b.log);
        assert_eq!(a.catalog.embeddings(), b.catalog.embeddings());
        assert!(a.catalog.has_artists());
        for user in a.log.users() {
            assert!((3..=5).contains(&user.baskets.len()));
        }
    }

    #[test]
    fn purchases_follow_planted_style() {
        let data = generate(&SyntheticConfig {
            users: 100,
            items: 500,
            dim: 8,
            ..Default::default()
        })
        .unwrap();
        let (mut in_style, mut total) = (0, 0);
        for (u, user) in data.log.users().iter().enumerate() {
            for &i in user.positives() {
                total += 1;
                in_style += (data.styles[i as usize] == data.user_styles[u]) as usize;
            }
        }
        assert!(in_style as f64 / total as f64 > 0.85);
    }

    #[test]
    fn one_of_a_kind_items_sell_once() {
        let data = generate(&SyntheticConfig {
            users: 100,
            items: 500,
            dim: 8,
            one_of_a_kind: true,
            ..Default::default()
        })
        .unwrap();
        let mut seen = std::collections::HashSet::new();
        for user in data.log.users() {
            for &i in user.positives() {
                assert!(seen.insert(i));
            }
        }
    }
}
