//! Synthetic populations with planted preference drift.
//!
//! Each user lives through `regimes_per_user` regimes. A regime has its own
//! true preference vector and its own small set of active topics; items are
//! Dirichlet mixtures over those topics. The first item of every regime after
//! the first is a ground-truth surprise.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{assemble, Corpus, Interaction, SurpriseAnnotation, UserHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub k: usize,
    pub users: usize,
    pub history_length: usize,
    pub regimes_per_user: usize,
    /// Active topics per regime.
    pub regime_topic_count: usize,
    /// Standard deviation of the rating noise on the centered scale.
    pub rating_noise_sd: f64,
    /// Dirichlet concentration of item mixtures; smaller is sharper.
    pub topic_concentration: f64,
    pub disjoint_supports: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            k: 20,
            users: 50,
            history_length: 120,
            regimes_per_user: 3,
            regime_topic_count: 4,
            rating_noise_sd: 0.3,
            topic_concentration: 0.5,
            disjoint_supports: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 || self.users == 0 {
            return fail("k and users must be positive".into());
        }
        if self.regimes_per_user == 0 || self.history_length < self.regimes_per_user {
            return fail(format!(
                "need 1 <= regimes_per_user <= history_length, got {} regimes over {} items",
                self.regimes_per_user, self.history_length
            ));
        }
        if self.regime_topic_count == 0 || self.regime_topic_count > self.k {
            return fail(format!(
                "regime_topic_count must be in 1..={}, got {}",
                self.k, self.regime_topic_count
            ));
        }
        if self.disjoint_supports && self.regime_topic_count * self.regimes_per_user > self.k {
            return fail(format!(
                "{} disjoint regimes of {} topics do not fit in k={}",
                self.regimes_per_user, self.regime_topic_count, self.k
            ));
        }
        if !(self.rating_noise_sd >= 0.0 && self.rating_noise_sd.is_finite()) {
            return fail(format!("rating_noise_sd must be >= 0, got {}", self.rating_noise_sd));
        }
        if !(self.topic_concentration > 0.0 && self.topic_concentration.is_finite()) {
            return fail(format!(
                "topic_concentration must be > 0, got {}",
                self.topic_concentration
            ));
        }
        Ok(())
    }
}

/// Generated items and histories with their planted change-points.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub k: usize,
    pub items: BTreeMap<String, DVector<f64>>,
    /// Sorted by user id.
    pub users: Vec<UserHistory>,
    /// 1-based positions of the first item of each regime after the first.
    pub change_points: BTreeMap<String, Vec<usize>>,
}

impl Population {
    /// Labels every position after the burn-in; change-points are positive.
    pub fn annotations(&self, burn_in: usize) -> Vec<SurpriseAnnotation> {
        self.users
            .iter()
            .flat_map(|user| {
                let planted = &self.change_points[&user.user_id];
                (burn_in + 1..=user.len()).map(move |position| SurpriseAnnotation {
                    user_id: user.user_id.clone(),
                    position,
                    surprising: planted.contains(&position),
                })
            })
            .collect()
    }

    pub fn to_corpus(&self, burn_in: usize) -> Result<Corpus> {
        assemble(
            self.k,
            self.items.clone(),
            self.users.clone(),
            self.annotations(burn_in),
            burn_in,
        )
    }
}

struct GeneratedUser {
    history: UserHistory,
    items: Vec<(String, DVector<f64>)>,
    change_points: Vec<usize>,
}

pub fn generate_population(config: &SynthConfig) -> Result<Population> {
    config.validate()?;
    let width = config.users.to_string().len();
    let generated: Vec<GeneratedUser> = (0..config.users)
        .into_par_iter()
        .map(|u| generate_user(config, u, format!("user{u:0width$}")))
        .collect();

    let mut population = Population {
        k: config.k,
        items: BTreeMap::new(),
        users: Vec::with_capacity(generated.len()),
        change_points: BTreeMap::new(),
    };
    for user in generated {
        population.items.extend(user.items);
        population
            .change_points
            .insert(user.history.user_id.clone(), user.change_points);
        population.users.push(user.history);
    }
    Ok(population)
}

fn generate_user(config: &SynthConfig, index: usize, user_id: String) -> GeneratedUser {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let (k, length, regimes) = (config.k, config.history_length, config.regimes_per_user);
    let mut topics: Vec<usize> = (0..k).collect();
    topics.shuffle(&mut rng);
    let supports: Vec<Vec<usize>> = (0..regimes)
        .map(|r| {
            let c = config.regime_topic_count;
            if config.disjoint_supports {
                topics[r * c..(r + 1) * c].to_vec()
            } else {
                topics.shuffle(&mut rng);
                topics[..c].to_vec()
            }
        })
        .collect();
    let preferences: Vec<DVector<f64>> = (0..regimes)
        .map(|_| DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0)))
        .collect();

    // 0-based start index of each regime; jitter keeps starts strictly ordered.
    let spacing = length as f64 / regimes as f64;
    let jitter = (spacing / 4.0).floor() as i64;
    let mut starts = vec![0usize];
    for r in 1..regimes {
        let shift = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
        let start = ((r as f64 * spacing).round() as i64 + shift).clamp(1, length as i64 - 1) as usize;
        let floor = starts.last().unwrap() + 1;
        starts.push(start.max(floor).min(length - (regimes - r)));
    }

    let gamma = Gamma::new(config.topic_concentration, 1.0).expect("validated concentration");
    let noise = Normal::new(0.0, config.rating_noise_sd).expect("validated noise");
    let mut regime = 0;
    let mut items = Vec::with_capacity(length);
    let mut interactions = Vec::with_capacity(length);
    for t in 0..length {
        while regime + 1 < regimes && t >= starts[regime + 1] {
            regime += 1;
        }
        let support = &supports[regime];
        let mut weights: Vec<f64> = support.iter().map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            weights.iter_mut().for_each(|w| *w = 0.0);
            let pick = rng.random_range(0..weights.len());
            weights[pick] = 1.0;
        }
        let mut theta = DVector::zeros(k);
        for (&topic, w) in support.iter().zip(weights) {
            theta[topic] = w;
        }
        let signal = preferences[regime].dot(&theta) + noise.sample(&mut rng);
        let stars = (signal.round() + 3.0).clamp(1.0, 5.0) as u8;

        let item_id = format!("{user_id}-item{:04}", t + 1);
        interactions.push(Interaction {
            item_id: item_id.clone(),
            stars,
            timestamp: t as i64 + 1,
        });
        items.push((item_id, theta));
    }

    GeneratedUser {
        history: UserHistory {
            user_id,
            interactions,
        },
        items,
        change_points: starts[1..].iter().map(|s| s + 1).collect(),
    }
}
