//! Generated datasets: one whose labels hinge on knowledge only the
//! injected vectors carry, and a corpus in the MovieLens-1M file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{HistoryEntry, Sample, SampleSchema, CATEGORY_FIELD, FIELD_NAMES, ITEM_FIELD, OOV, RATING_VOCAB};
use crate::encoding::RepresentationCache;
use crate::error::{Error, Result};
use crate::kind::EntityKey;

#[derive(Clone, Debug)]
pub struct LatentKnowledgeConfig {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub interactions_per_user: usize,
    /// Dimension of the hidden user taste and item attribute vectors.
    pub latent_dim: usize,
    /// Dimension of the emitted knowledge representations.
    pub rep_dim: usize,
    /// Logit scale of the taste-attribute inner product.
    pub strength: f64,
    /// Standard deviation of the noise added to the representations.
    pub rep_noise: f64,
    pub test_fraction: f64,
    pub max_history: usize,
    pub seed: u64,
}

impl Default for LatentKnowledgeConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            items: 120,
            categories: 8,
            interactions_per_user: 30,
            latent_dim: 4,
            rep_dim: 16,
            strength: 3.0,
            rep_noise: 0.05,
            test_fraction: 0.2,
            max_history: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatentKnowledgeData {
    pub schema: SampleSchema,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Reasoning rows for every user and fact rows for every item.
    pub representations: RepresentationCache,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn project(p: &[Vec<f64>], z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    p.iter()
        .map(|row| {
            let v: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
            let e: f64 = StandardNormal.sample(rng);
            (v + noise * e) as f32
        })
        .collect()
}

/// Users carry a hidden taste vector and items a hidden attribute vector;
/// a click happens with probability `sigmoid(strength * <taste, attr> /
/// sqrt(k))`. The taste reaches the model only through the user's
/// reasoning representation: users are split disjointly, test user ids are
/// out of vocabulary, and histories are random items with random ratings.
pub fn latent_knowledge_dataset(cfg: &LatentKnowledgeConfig) -> Result<LatentKnowledgeData> {
    if cfg.users < 2 || cfg.items == 0 || cfg.latent_dim == 0 || cfg.rep_dim == 0 {
        return Err(Error::Config("synthetic dataset dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim;
    let taste: Vec<Vec<f64>> = (0..cfg.users).map(|_| gaussian(&mut rng, k)).collect();
    let attr: Vec<Vec<f64>> = (0..cfg.items).map(|_| gaussian(&mut rng, k)).collect();
    let category: Vec<u32> = (0..cfg.items)
        .map(|_| rng.random_range(1..=cfg.categories as u32))
        .collect();
    let proj_user: Vec<Vec<f64>> = (0..cfg.rep_dim).map(|_| gaussian(&mut rng, k)).collect();
    let proj_item: Vec<Vec<f64>> = (0..cfg.rep_dim).map(|_| gaussian(&mut rng, k)).collect();

    let mut reps = RepresentationCache::new(cfg.rep_dim);
    for (u, z) in taste.iter().enumerate() {
        reps.insert(EntityKey::user(format!("u{u}")), &project(&proj_user, z, cfg.rep_noise, &mut rng))?;
    }
    for (i, a) in attr.iter().enumerate() {
        reps.insert(EntityKey::item(format!("i{i}")), &project(&proj_item, a, cfg.rep_noise, &mut rng))?;
    }

    let mut order: Vec<usize> = (0..cfg.users).collect();
    order.shuffle(&mut rng);
    let n_test = ((cfg.users as f64 * cfg.test_fraction).round() as usize).clamp(1, cfg.users - 1);
    let mut is_test = vec![false; cfg.users];
    for &u in &order[..n_test] {
        is_test[u] = true;
    }
    // Training users get ids 1.., test users fall into the OOV slot.
    let mut train_index = vec![OOV; cfg.users];
    let mut next = 1;
    for u in 0..cfg.users {
        if !is_test[u] {
            train_index[u] = next;
            next += 1;
        }
    }
    let demo: Vec<[u32; 3]> = (0..cfg.users)
        .map(|_| [rng.random_range(1..=2), rng.random_range(1..=7), rng.random_range(1..=21)])
        .collect();

    let scale = cfg.strength / (k as f64).sqrt();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in 0..cfg.users {
        for t in 0..cfg.interactions_per_user {
            let item = rng.random_range(0..cfg.items);
            let logit: f64 = scale * taste[u].iter().zip(&attr[item]).map(|(a, b)| a * b).sum::<f64>();
            let label = rng.random_bool(1.0 / (1.0 + (-logit).exp())) as u8;
            let hist_len = rng.random_range(0..=cfg.max_history);
            let history = (0..hist_len)
                .map(|_| {
                    let h = rng.random_range(0..cfg.items);
                    HistoryEntry {
                        item: h as u32 + 1,
                        category: category[h],
                        rating: rng.random_range(1..RATING_VOCAB as u8),
                    }
                })
                .collect();
            let [g, a, o] = demo[u];
            let s = Sample {
                user_id: format!("u{u}"),
                item_id: format!("i{item}"),
                timestamp: t as u64,
                fields: vec![train_index[u], g, a, o, item as u32 + 1, category[item]],
                history,
                label,
            };
            if is_test[u] { test.push(s) } else { train.push(s) }
        }
    }
    let schema = SampleSchema {
        field_names: FIELD_NAMES.map(String::from).to_vec(),
        field_sizes: vec![next as usize, 3, 8, 22, cfg.items + 1, cfg.categories + 1],
        item_field: ITEM_FIELD,
        category_field: CATEGORY_FIELD,
        rating_size: RATING_VOCAB,
        max_history: cfg.max_history,
    };
    Ok(LatentKnowledgeData {
        schema,
        train,
        test,
        representations: reps,
    })
}

pub const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

const AGES: [&str; 7] = ["1", "18", "25", "35", "45", "50", "56"];

#[derive(Clone, Debug)]
pub struct MovieLensLikeConfig {
    pub users: usize,
    pub movies: usize,
    /// Minimum ratings per user, as in the real release.
    pub min_ratings: usize,
    pub mean_extra_ratings: f64,
    pub seed: u64,
}

impl Default for MovieLensLikeConfig {
    fn default() -> Self {
        Self {
            users: 1200,
            movies: 1500,
            min_ratings: 20,
            mean_extra_ratings: 40.0,
            seed: 1,
        }
    }
}

/// Writes `ratings.dat`, `users.dat` and `movies.dat` in the MovieLens-1M
/// `::`-separated layout. Ratings follow `3.6 + user bias + movie bias +
/// genre affinity + noise`, rounded into 1..=5; movie popularity is
/// Zipf-like. Returns the number of ratings written.
pub fn write_movielens_like(dir: &Path, cfg: &MovieLensLikeConfig) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
    let (user_sd, movie_sd, affinity_sd, noise_sd) = (n(0.45), n(0.55), n(0.45), n(0.85));

    let mut movies = String::new();
    let mut movie_genres = Vec::with_capacity(cfg.movies);
    let movie_bias: Vec<f64> = (0..cfg.movies).map(|_| movie_sd.sample(&mut rng)).collect();
    for m in 0..cfg.movies {
        let count = rng.random_range(1..=3);
        let mut g: Vec<usize> = (0..GENRES.len()).collect();
        g.shuffle(&mut rng);
        g.truncate(count);
        g.sort_unstable();
        let names: Vec<&str> = g.iter().map(|&i| GENRES[i]).collect();
        let _ = writeln!(
            movies,
            "{}::Generated Picture {} ({})::{}",
            m + 1,
            m + 1,
            rng.random_range(1930..=2000),
            names.join("|")
        );
        movie_genres.push(g);
    }
    // Zipf-like popularity via the cumulative weights 1/(rank+10).
    let mut cumulative = Vec::with_capacity(cfg.movies);
    let mut acc = 0.0;
    for r in 0..cfg.movies {
        acc += 1.0 / (r as f64 + 10.0);
        cumulative.push(acc);
    }
    let mut popularity: Vec<usize> = (0..cfg.movies).collect();
    popularity.shuffle(&mut rng);

    let (mut users, mut ratings) = (String::new(), String::new());
    let mut total = 0;
    for u in 1..=cfg.users {
        let gender = if rng.random_bool(0.72) { "M" } else { "F" };
        let _ = writeln!(
            users,
            "{u}::{gender}::{}::{}::{:05}",
            AGES[rng.random_range(0..AGES.len())],
            rng.random_range(0..=20),
            rng.random_range(0..100_000)
        );
        let bias = user_sd.sample(&mut rng);
        let affinity: Vec<f64> = (0..GENRES.len()).map(|_| affinity_sd.sample(&mut rng)).collect();
        let extra = (-cfg.mean_extra_ratings * (1.0 - rng.random::<f64>()).ln()) as usize;
        let count = (cfg.min_ratings + extra).min(cfg.movies);
        let mut seen = std::collections::HashSet::new();
        let mut ts = 956_703_932u64 + rng.random_range(0..30_000_000);
        while seen.len() < count {
            let x = rng.random::<f64>() * acc;
            let rank = cumulative.partition_point(|&c| c < x).min(cfg.movies - 1);
            let m = popularity[rank];
            if !seen.insert(m) {
                continue;
            }
            let g = &movie_genres[m];
            let aff = g.iter().map(|&i| affinity[i]).sum::<f64>() / g.len() as f64;
            let score = 3.6 + bias + movie_bias[m] + aff + noise_sd.sample(&mut rng);
            let rating = score.round().clamp(1.0, 5.0) as u8;
            ts += rng.random_range(1..5_000);
            let _ = writeln!(ratings, "{u}::{}::{rating}::{ts}", m + 1);
            total += 1;
        }
    }
    for (name, body) in [("movies.dat", movies), ("users.dat", users), ("ratings.dat", ratings)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_interactions, Catalog};

    #[test]
    fn latent_dataset_is_user_disjoint_and_valid() {
        let cfg = LatentKnowledgeConfig {
            users: 50,
            interactions_per_user: 4,
            ..Default::default()
        };
        let d = latent_knowledge_dataset(&cfg).unwrap();
        assert_eq!(d.train.len() + d.test.len(), 200);
        for s in d.train.iter().chain(&d.test) {
            d.schema.validate(s).unwrap();
            assert!(d.representations.contains(&EntityKey::user(s.user_id.as_str())));
            assert!(d.representations.contains(&EntityKey::item(s.item_id.as_str())));
        }
        assert!(d.test.iter().all(|s| s.fields[0] == OOV));
        let train_users: std::collections::HashSet<_> = d.train.iter().map(|s| &s.user_id).collect();
        assert!(d.test.iter().all(|s| !train_users.contains(&s.user_id)));
        let again = latent_knowledge_dataset(&cfg).unwrap();
        assert_eq!(again.train, d.train);
    }

    #[test]
    fn movielens_like_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MovieLensLikeConfig {
            users: 30,
            movies: 80,
            mean_extra_ratings: 5.0,
            ..Default::default()
        };
        let n = write_movielens_like(dir.path(), &cfg).unwrap();
        let inter = parse_interactions(dir.path().join("ratings.dat")).unwrap();
        assert_eq!(inter.len(), n);
        assert!(n >= 30 * 20);
        let cat = Catalog::load_dir(dir.path()).unwrap();
        assert_eq!((cat.users.len(), cat.movies.len()), (30, 80));
        assert!(inter.iter().all(|r| (1..=5).contains(&r.rating)));
    }
}
