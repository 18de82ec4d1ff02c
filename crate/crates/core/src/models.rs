//! Sequential preference learners and their surprise measures.
//!
//! Three Bayesian learners (BLR, variance-bounded BLR, AROW regression) keep a
//! Gaussian belief over the preference vector and report surprise as
//! `KL(posterior || prior)`. NLMS keeps a point estimate and reports the
//! displacement of that estimate over a horizon. The Basic model averages
//! topic vectors and scores the most prominent topic gain over the history.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{clip_eigenvalues, floor_and_symmetrize, kl_divergence, GaussianBelief};
use crate::history::{center_rating, UserHistory};

/// Squared topic-vector norms below this make NLMS skip the update.
pub const NLMS_MIN_NORM_SQUARED: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Blr,
    #[serde(rename = "vbblr")]
    VbBlr,
    Arow,
    Nlms,
    Basic,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Blr => "blr",
            ModelKind::VbBlr => "vbblr",
            ModelKind::Arow => "arow",
            ModelKind::Nlms => "nlms",
            ModelKind::Basic => "basic",
        }
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, ModelKind::Blr | ModelKind::VbBlr | ModelKind::Arow)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blr" => Ok(ModelKind::Blr),
            "vbblr" => Ok(ModelKind::VbBlr),
            "arow" => Ok(ModelKind::Arow),
            "nlms" => Ok(ModelKind::Nlms),
            "basic" => Ok(ModelKind::Basic),
            other => Err(Error::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Which vectors feed the Basic model's per-topic maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeSource {
    /// Maximum over the raw topic vectors of consumed items.
    #[default]
    ItemTopics,
    /// Maximum over the running history averages.
    HistoryAverages,
}

impl EnvelopeSource {
    fn name(self) -> &'static str {
        match self {
            EnvelopeSource::ItemTopics => "item_topics",
            EnvelopeSource::HistoryAverages => "history_averages",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Initial covariance is `prior_variance * I`; falls back to `beta`.
    pub prior_variance: Option<f64>,
    /// Observation noise precision for BLR and vbBLR.
    pub beta: f64,
    /// Eigenvalue floor for vbBLR.
    pub tau_v: f64,
    pub r1: f64,
    pub r2: f64,
    pub eta: f64,
    pub horizon_k: usize,
    pub basic_envelope_source: EnvelopeSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Blr,
            prior_variance: None,
            beta: 1.0,
            tau_v: 0.1,
            r1: 1.0,
            r2: 1.0,
            eta: 0.1,
            horizon_k: 1,
            basic_envelope_source: EnvelopeSource::ItemTopics,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance.unwrap_or(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        match self.kind {
            ModelKind::Blr => {
                positive("beta", self.beta)?;
                positive("prior_variance", self.prior_variance())
            }
            ModelKind::VbBlr => {
                positive("beta", self.beta)?;
                positive("prior_variance", self.prior_variance())?;
                positive("tau_v", self.tau_v)
            }
            ModelKind::Arow => {
                positive("prior_variance", self.prior_variance())?;
                positive("r1", self.r1)?;
                positive("r2", self.r2)
            }
            ModelKind::Nlms => {
                positive("eta", self.eta)?;
                if self.horizon_k == 0 {
                    return Err(Error::InvalidConfig("horizon_k must be at least 1".into()));
                }
                Ok(())
            }
            ModelKind::Basic => Ok(()),
        }
    }

    /// Parameters consulted by this kind, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        let pv = ("prior_variance", self.prior_variance().to_string());
        match self.kind {
            ModelKind::Blr => vec![("beta", self.beta.to_string()), pv],
            ModelKind::VbBlr => vec![
                ("beta", self.beta.to_string()),
                pv,
                ("tau_v", self.tau_v.to_string()),
            ],
            ModelKind::Arow => vec![pv, ("r1", self.r1.to_string()), ("r2", self.r2.to_string())],
            ModelKind::Nlms => vec![
                ("eta", self.eta.to_string()),
                ("k", self.horizon_k.to_string()),
            ],
            ModelKind::Basic => vec![("envelope", self.basic_envelope_source.name().to_string())],
        }
    }

    /// Short hex digest of the canonical label.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Canonical label, e.g. `arow:prior_variance=1,r1=0.5,r2=2`; parses back with
/// [`FromStr`].
impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        for (i, (name, value)) in self.params().into_iter().enumerate() {
            write!(f, "{}{name}={value}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((kind, rest)) => (kind, rest),
            None => (s, ""),
        };
        let mut config = ModelConfig::new(kind.parse()?);
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected name=value, got `{pair}`")))?;
            let number = || -> Result<f64> {
                value
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad value for {name}: `{value}`")))
            };
            match name.trim() {
                "beta" => config.beta = number()?,
                "prior_variance" | "pv" => config.prior_variance = Some(number()?),
                "tau_v" => config.tau_v = number()?,
                "r1" => config.r1 = number()?,
                "r2" => config.r2 = number()?,
                "eta" => config.eta = number()?,
                "k" | "horizon_k" => {
                    config.horizon_k = value.trim().parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad value for {name}: `{value}`"))
                    })?
                }
                "envelope" | "basic_envelope_source" => {
                    config.basic_envelope_source = match value.trim() {
                        "item_topics" => EnvelopeSource::ItemTopics,
                        "history_averages" => EnvelopeSource::HistoryAverages,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "unknown envelope source `{other}`"
                            )))
                        }
                    }
                }
                other => return Err(Error::InvalidConfig(format!("unknown parameter `{other}`"))),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PreferenceState {
    /// BLR, vbBLR and AROW.
    Gaussian {
        kind: ModelKind,
        step: usize,
        belief: GaussianBelief,
    },
    Nlms {
        step: usize,
        point: DVector<f64>,
        /// The last `horizon + 1` point estimates, oldest first.
        recent: VecDeque<DVector<f64>>,
        horizon: usize,
    },
    Basic {
        step: usize,
        topic_sum: DVector<f64>,
        envelope: DVector<f64>,
        rating_weighted_sum: DVector<f64>,
    },
}

impl PreferenceState {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PreferenceState::Gaussian { kind, .. } => kind.name(),
            PreferenceState::Nlms { .. } => "nlms",
            PreferenceState::Basic { .. } => "basic",
        }
    }

    pub fn step(&self) -> usize {
        match self {
            PreferenceState::Gaussian { step, .. }
            | PreferenceState::Nlms { step, .. }
            | PreferenceState::Basic { step, .. } => *step,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PreferenceState::Gaussian { belief, .. } => belief.dim(),
            PreferenceState::Nlms { point, .. } => point.len(),
            PreferenceState::Basic { topic_sum, .. } => topic_sum.len(),
        }
    }

    /// Current point preference: the belief mean, the NLMS estimate, or the
    /// Basic rating-weighted topic average.
    pub fn preference(&self) -> DVector<f64> {
        match self {
            PreferenceState::Gaussian { belief, .. } => belief.mean().clone(),
            PreferenceState::Nlms { point, .. } => point.clone(),
            PreferenceState::Basic {
                step,
                rating_weighted_sum,
                ..
            } => {
                if *step == 0 {
                    DVector::zeros(rating_weighted_sum.len())
                } else {
                    rating_weighted_sum / *step as f64
                }
            }
        }
    }

    pub fn belief(&self) -> Option<&GaussianBelief> {
        match self {
            PreferenceState::Gaussian { belief, .. } => Some(belief),
            _ => None,
        }
    }

    /// Basic history average `h_t`; `None` before the first item.
    pub fn history_average(&self) -> Option<DVector<f64>> {
        match self {
            PreferenceState::Basic {
                step, topic_sum, ..
            } if *step > 0 => Some(topic_sum / *step as f64),
            _ => None,
        }
    }

    /// NLMS horizon surprise that has become final with the latest update:
    /// `(t, ‖p_{t+k-1} - p_{t-1}‖)` for `t = step - k + 1`.
    pub fn matured_surprise(&self) -> Option<(usize, f64)> {
        match self {
            PreferenceState::Nlms {
                step,
                recent,
                horizon,
                ..
            } if recent.len() == horizon + 1 => {
                let newest = recent.back()?;
                let oldest = recent.front()?;
                Some((step + 1 - horizon, (newest - oldest).norm()))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub surprise: f64,
    /// `pᵀθ` under the state before the update.
    pub predicted_rating: f64,
    pub serendipity: f64,
    pub state_after: PreferenceState,
}

pub fn init_state(config: &ModelConfig, k: usize) -> Result<PreferenceState> {
    if k == 0 {
        return Err(Error::InvalidConfig("topic count must be at least 1".into()));
    }
    config.validate()?;
    Ok(match config.kind {
        ModelKind::Blr | ModelKind::VbBlr | ModelKind::Arow => PreferenceState::Gaussian {
            kind: config.kind,
            step: 0,
            belief: GaussianBelief::isotropic(k, config.prior_variance()),
        },
        ModelKind::Nlms => PreferenceState::Nlms {
            step: 0,
            point: DVector::zeros(k),
            recent: VecDeque::from([DVector::zeros(k)]),
            horizon: config.horizon_k,
        },
        ModelKind::Basic => PreferenceState::Basic {
            step: 0,
            topic_sum: DVector::zeros(k),
            envelope: DVector::zeros(k),
            rating_weighted_sum: DVector::zeros(k),
        },
    })
}

fn check_dim(state: &PreferenceState, theta: &DVector<f64>) -> Result<()> {
    if state.dim() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

fn gaussian_parts(
    state: &PreferenceState,
    expected: ModelKind,
) -> Result<(usize, &GaussianBelief)> {
    match state {
        PreferenceState::Gaussian { kind, step, belief } if *kind == expected => Ok((*step, belief)),
        other => Err(Error::KindMismatch {
            state: other.kind_name(),
            expected: expected.name(),
        }),
    }
}

/// Rank-one Gaussian update shared by BLR and AROW:
///
/// `μ' = μ + (r - μᵀθ) Σθ / (mean_offset + θᵀΣθ)`
/// `Σ' = Σ - Σθ θᵀΣ / (cov_offset + θᵀΣθ)`
///
/// BLR is the case `mean_offset = cov_offset = 1/β`, which is the
/// Sherman-Morrison form of `Σ'⁻¹ = Σ⁻¹ + β θθᵀ`.
fn rank_one_update(
    prior: &GaussianBelief,
    theta: &DVector<f64>,
    r: f64,
    mean_offset: f64,
    cov_offset: f64,
) -> GaussianBelief {
    let sigma_theta = prior.cov() * theta;
    let spread = theta.dot(&sigma_theta);
    if spread == 0.0 {
        return prior.clone();
    }
    let error = r - prior.mean().dot(theta);
    let mean = prior.mean() + &sigma_theta * (error / (mean_offset + spread));
    let mut cov = prior.cov().clone();
    cov.ger(-1.0 / (cov_offset + spread), &sigma_theta, &sigma_theta, 1.0);
    GaussianBelief::from_parts(mean, floor_and_symmetrize(&cov))
}

fn bayesian_outcome(
    kind: ModelKind,
    step: usize,
    prior: &GaussianBelief,
    posterior: GaussianBelief,
    theta: &DVector<f64>,
    r: f64,
) -> Result<StepOutcome> {
    let surprise = if posterior == *prior {
        0.0
    } else {
        kl_divergence(&posterior, prior)?
    };
    Ok(StepOutcome {
        surprise,
        predicted_rating: prior.mean().dot(theta),
        serendipity: r * surprise,
        state_after: PreferenceState::Gaussian {
            kind,
            step: step + 1,
            belief: posterior,
        },
    })
}

/// Bayesian linear regression step on a centered rating.
pub fn blr_update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    r: f64,
) -> Result<StepOutcome> {
    check_dim(state, theta)?;
    let (step, prior) = gaussian_parts(state, ModelKind::Blr)?;
    let noise = 1.0 / config.beta;
    let posterior = rank_one_update(prior, theta, r, noise, noise);
    bayesian_outcome(ModelKind::Blr, step, prior, posterior, theta, r)
}

/// Variance-bounded BLR: clips the prior spectrum at `tau_v`, then performs
/// the BLR step from the clipped belief. Surprise is measured against the
/// clipped belief.
pub fn vbblr_update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    r: f64,
) -> Result<StepOutcome> {
    check_dim(state, theta)?;
    let (step, belief) = gaussian_parts(state, ModelKind::VbBlr)?;
    let clipped = clip_eigenvalues(belief.cov(), config.tau_v)?;
    let prior = GaussianBelief::from_parts(belief.mean().clone(), clipped);
    let noise = 1.0 / config.beta;
    let posterior = rank_one_update(&prior, theta, r, noise, noise);
    bayesian_outcome(ModelKind::VbBlr, step, &prior, posterior, theta, r)
}

/// AROW regression step with separate mean (`r1`) and covariance (`r2`)
/// trade-offs.
pub fn arow_update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    r: f64,
) -> Result<StepOutcome> {
    check_dim(state, theta)?;
    let (step, prior) = gaussian_parts(state, ModelKind::Arow)?;
    let posterior = rank_one_update(prior, theta, r, config.r1, config.r2);
    bayesian_outcome(ModelKind::Arow, step, prior, posterior, theta, r)
}

/// NLMS step. The reported surprise is the immediate displacement
/// `‖p_t - p_{t-1}‖`; longer horizons become available through
/// [`PreferenceState::matured_surprise`] and are finalized by [`run_history`].
pub fn nlms_update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    r: f64,
) -> Result<StepOutcome> {
    check_dim(state, theta)?;
    let PreferenceState::Nlms {
        step,
        point,
        recent,
        horizon,
    } = state
    else {
        return Err(Error::KindMismatch {
            state: state.kind_name(),
            expected: "nlms",
        });
    };
    let predicted = point.dot(theta);
    let norm_sq = theta.norm_squared();
    let next = if norm_sq < NLMS_MIN_NORM_SQUARED {
        point.clone()
    } else {
        point + theta * (config.eta * (r - predicted) / norm_sq)
    };
    let surprise = (&next - point).norm();
    let mut recent = recent.clone();
    recent.push_back(next.clone());
    while recent.len() > horizon + 1 {
        recent.pop_front();
    }
    Ok(StepOutcome {
        surprise,
        predicted_rating: predicted,
        serendipity: r * surprise,
        state_after: PreferenceState::Nlms {
            step: step + 1,
            point: next,
            recent,
            horizon: *horizon,
        },
    })
}

/// Basic model step on a raw 1..5 star rating. Surprise is
/// `max_k(θ_k - m_k)` against the per-topic envelope `m` of the history; it can
/// be negative.
pub fn basic_update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    stars: u8,
) -> Result<StepOutcome> {
    let centered = center_rating(stars)?;
    check_dim(state, theta)?;
    let PreferenceState::Basic {
        step,
        topic_sum,
        envelope,
        rating_weighted_sum,
    } = state
    else {
        return Err(Error::KindMismatch {
            state: state.kind_name(),
            expected: "basic",
        });
    };
    let surprise = theta
        .iter()
        .zip(envelope.iter())
        .map(|(t, m)| t - m)
        .fold(f64::NEG_INFINITY, f64::max);
    let predicted = if *step == 0 {
        0.0
    } else {
        rating_weighted_sum.dot(theta) / *step as f64
    };

    let step = step + 1;
    let topic_sum = topic_sum + theta;
    let source = match config.basic_envelope_source {
        EnvelopeSource::ItemTopics => theta.clone(),
        EnvelopeSource::HistoryAverages => &topic_sum / step as f64,
    };
    let envelope = envelope.zip_map(&source, f64::max);
    let rating_weighted_sum = rating_weighted_sum + theta * f64::from(stars);

    Ok(StepOutcome {
        surprise,
        predicted_rating: predicted,
        serendipity: centered * surprise,
        state_after: PreferenceState::Basic {
            step,
            topic_sum,
            envelope,
            rating_weighted_sum,
        },
    })
}

/// Dispatches one interaction to the configured learner.
pub fn update(
    config: &ModelConfig,
    state: &PreferenceState,
    theta: &DVector<f64>,
    stars: u8,
) -> Result<StepOutcome> {
    if config.kind == ModelKind::Basic {
        return basic_update(config, state, theta, stars);
    }
    let r = center_rating(stars)?;
    match config.kind {
        ModelKind::Blr => blr_update(config, state, theta, r),
        ModelKind::VbBlr => vbblr_update(config, state, theta, r),
        ModelKind::Arow => arow_update(config, state, theta, r),
        ModelKind::Nlms => nlms_update(config, state, theta, r),
        ModelKind::Basic => unreachable!(),
    }
}

/// One processed interaction. Steps are 1-based; `preference` is the
/// preference after consuming the item.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub item_id: String,
    pub stars: u8,
    pub centered_rating: f64,
    pub predicted_rating: f64,
    pub surprise: f64,
    pub serendipity: f64,
    pub preference: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRun {
    pub user_id: String,
    pub steps: Vec<StepRecord>,
}

impl UserRun {
    /// Record for 1-based step `t`.
    pub fn at(&self, t: usize) -> Option<&StepRecord> {
        t.checked_sub(1).and_then(|i| self.steps.get(i))
    }
}

/// Runs the configured learner over a whole history.
///
/// NLMS surprise at step `t` is `‖p_{t+k-1} - p_{t-1}‖`, with `t+k-1` clamped
/// to the last step.
pub fn run_history(
    config: &ModelConfig,
    history: &UserHistory,
    items: &BTreeMap<String, DVector<f64>>,
    k: usize,
) -> Result<UserRun> {
    let mut state = init_state(config, k)?;
    let mut steps = Vec::with_capacity(history.interactions.len());
    let mut points = vec![state.preference()];
    for (i, interaction) in history.interactions.iter().enumerate() {
        let theta = items
            .get(&interaction.item_id)
            .ok_or_else(|| Error::UnknownItems(vec![interaction.item_id.clone()]))?;
        let outcome = update(config, &state, theta, interaction.stars)?;
        state = outcome.state_after;
        let preference = state.preference();
        if config.kind == ModelKind::Nlms {
            points.push(preference.clone());
        }
        steps.push(StepRecord {
            step: i + 1,
            item_id: interaction.item_id.clone(),
            stars: interaction.stars,
            centered_rating: center_rating(interaction.stars)?,
            predicted_rating: outcome.predicted_rating,
            surprise: outcome.surprise,
            serendipity: outcome.serendipity,
            preference,
        });
    }

    if config.kind == ModelKind::Nlms {
        let last = points.len() - 1;
        for record in &mut steps {
            let t = record.step;
            let horizon_end = (t + config.horizon_k - 1).min(last);
            record.surprise = (&points[horizon_end] - &points[t - 1]).norm();
            record.serendipity = record.centered_rating * record.surprise;
        }
    }
    Ok(UserRun {
        user_id: history.user_id.clone(),
        steps,
    })
}

/// Batch posterior of Bayesian linear regression after observing `rows` with
/// targets `targets`, from prior `N(0, prior_variance I)`:
/// `Σ = (I/prior_variance + β ΘᵀΘ)⁻¹`, `μ = Σ β Θᵀ r`.
///
/// Solved through a Cholesky factor of the precision; independent of the
/// sequential path.
pub fn batch_blr_posterior(
    rows: &[DVector<f64>],
    targets: &[f64],
    k: usize,
    prior_variance: f64,
    beta: f64,
) -> Option<GaussianBelief> {
    let mut precision = DMatrix::identity(k, k) / prior_variance;
    let mut rhs = DVector::zeros(k);
    for (theta, &r) in rows.iter().zip(targets) {
        precision.ger(beta, theta, theta, 1.0);
        rhs.axpy(beta * r, theta, 1.0);
    }
    let chol = precision.cholesky()?;
    let cov = chol.inverse();
    let mean = chol.solve(&rhs);
    Some(GaussianBelief::from_parts(mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::symmetrize;
    use crate::history::Interaction;
    use nalgebra::{dvector, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: ModelKind) -> ModelConfig {
        ModelConfig::new(kind)
    }

    fn gaussian_state(kind: ModelKind, mean: f64, var: f64) -> PreferenceState {
        PreferenceState::Gaussian {
            kind,
            step: 0,
            belief: GaussianBelief::new(dvector![mean], DMatrix::from_element(1, 1, var)).unwrap(),
        }
    }

    fn belief(outcome: &StepOutcome) -> &GaussianBelief {
        outcome.state_after.belief().unwrap()
    }

    fn random_simplex(rng: &mut impl Rng, k: usize) -> DVector<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        DVector::from_iterator(k, raw.into_iter().map(|v| v / total))
    }

    #[test]
    fn init_state_examples() {
        let blr = init_state(&cfg(ModelKind::Blr), 2).unwrap();
        let b = blr.belief().unwrap();
        assert_eq!(b.mean(), &DVector::zeros(2));
        assert_eq!(b.cov(), &DMatrix::identity(2, 2));

        let basic = init_state(&cfg(ModelKind::Basic), 3).unwrap();
        assert!(basic.history_average().is_none());
        match &basic {
            PreferenceState::Basic { envelope, step, .. } => {
                assert_eq!(envelope, &DVector::zeros(3));
                assert_eq!(*step, 0);
            }
            _ => unreachable!(),
        }

        match init_state(&cfg(ModelKind::Nlms), 2).unwrap() {
            PreferenceState::Nlms { point, recent, .. } => {
                assert_eq!(point, DVector::zeros(2));
                assert_eq!(recent, VecDeque::from([DVector::zeros(2)]));
            }
            _ => unreachable!(),
        }

        assert!(init_state(&cfg(ModelKind::Blr), 0).is_err());
    }

    #[test]
    fn prior_variance_defaults_to_beta() {
        let mut c = cfg(ModelKind::Blr);
        c.beta = 0.5;
        assert_eq!(c.prior_variance(), 0.5);
        c.prior_variance = Some(2.0);
        assert_eq!(c.prior_variance(), 2.0);
    }

    #[test]
    fn blr_scalar_step() {
        let out = blr_update(&cfg(ModelKind::Blr), &gaussian_state(ModelKind::Blr, 0.0, 1.0), &dvector![1.0], 1.0)
            .unwrap();
        assert_close!(belief(&out).mean()[0], 0.5, 1e-15);
        assert_close!(belief(&out).cov()[(0, 0)], 0.5, 1e-15);
        let expected = 0.5 * (0.5 + 0.25 - 1.0 + 2.0f64.ln());
        assert_close!(out.surprise, expected, 1e-14);
        assert_close!(out.surprise, 0.22157, 1e-5);
        assert_close!(out.serendipity, out.surprise, 0.0);
        assert_eq!(out.predicted_rating, 0.0);
    }

    #[test]
    fn zero_topic_vector_is_no_evidence() {
        let zero = DVector::zeros(2);
        for kind in [ModelKind::Blr, ModelKind::Arow] {
            let state = init_state(&cfg(kind), 2).unwrap();
            let out = update(&cfg(kind), &state, &zero, 5).unwrap();
            assert_eq!(out.surprise, 0.0);
            assert_eq!(out.state_after.belief(), state.belief());
        }
        let state = init_state(&cfg(ModelKind::Nlms), 2).unwrap();
        let out = update(&cfg(ModelKind::Nlms), &state, &zero, 5).unwrap();
        assert_eq!(out.state_after.preference(), DVector::zeros(2));
        assert_eq!(out.surprise, 0.0);
    }

    #[test]
    fn vbblr_zero_topic_vector_keeps_clipped_covariance() {
        let mut c = cfg(ModelKind::VbBlr);
        c.tau_v = 0.5;
        let state = PreferenceState::Gaussian {
            kind: ModelKind::VbBlr,
            step: 3,
            belief: GaussianBelief::new(dvector![0.3, -0.1], DMatrix::from_diagonal(&dvector![0.1, 2.0])).unwrap(),
        };
        let out = vbblr_update(&c, &state, &DVector::zeros(2), 1.0).unwrap();
        assert_eq!(belief(&out).mean(), &dvector![0.3, -0.1]);
        assert!((belief(&out).cov() - DMatrix::from_diagonal(&dvector![0.5, 2.0])).abs().max() < 1e-12);
        assert_eq!(out.surprise, 0.0);
    }

    #[test]
    fn vbblr_clips_before_update() {
        let mut c = cfg(ModelKind::VbBlr);
        c.tau_v = 1.0;
        let out = vbblr_update(&c, &gaussian_state(ModelKind::VbBlr, 0.0, 0.01), &dvector![1.0], 1.0).unwrap();
        assert_close!(belief(&out).mean()[0], 0.5, 1e-15);
        assert_close!(belief(&out).cov()[(0, 0)], 0.5, 1e-15);
    }

    #[test]
    fn vbblr_matches_blr_when_clip_is_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vb = cfg(ModelKind::VbBlr);
        vb.tau_v = 1e-3;
        let blr = cfg(ModelKind::Blr);
        let mut s_blr = init_state(&blr, 4).unwrap();
        let mut s_vb = init_state(&vb, 4).unwrap();
        for _ in 0..5 {
            let theta = random_simplex(&mut rng, 4);
            let r = rng.random_range(-2.0..2.0);
            let a = blr_update(&blr, &s_blr, &theta, r).unwrap();
            let b = vbblr_update(&vb, &s_vb, &theta, r).unwrap();
            assert_close!(a.surprise, b.surprise, 1e-10);
            assert!((belief(&a).cov() - belief(&b).cov()).abs().max() < 1e-10);
            s_blr = a.state_after;
            s_vb = b.state_after;
        }
    }

    #[test]
    fn arow_scalar_steps() {
        let mut c = cfg(ModelKind::Arow);
        let state = gaussian_state(ModelKind::Arow, 0.0, 1.0);
        let out = arow_update(&c, &state, &dvector![1.0], 1.0).unwrap();
        assert_close!(belief(&out).mean()[0], 0.5, 1e-15);
        assert_close!(belief(&out).cov()[(0, 0)], 0.5, 1e-15);

        c.r2 = 2.0;
        let out = arow_update(&c, &state, &dvector![1.0], 1.0).unwrap();
        assert_close!(belief(&out).mean()[0], 0.5, 1e-15);
        assert_close!(belief(&out).cov()[(0, 0)], 2.0 / 3.0, 1e-15);
    }

    #[test]
    fn nlms_examples() {
        let mut c = cfg(ModelKind::Nlms);
        c.eta = 0.5;
        let state = init_state(&c, 2).unwrap();
        let out = nlms_update(&c, &state, &dvector![1.0, 0.0], 1.0).unwrap();
        assert_eq!(out.state_after.preference(), dvector![0.5, 0.0]);
        assert_close!(out.surprise, 0.5, 1e-15);
        assert_eq!(out.state_after.matured_surprise(), Some((1, 0.5)));

        // A perfect prediction leaves the point unchanged.
        let state = out.state_after;
        let out = nlms_update(&c, &state, &dvector![1.0, 0.0], 0.5).unwrap();
        assert_eq!(out.state_after.preference(), dvector![0.5, 0.0]);
        assert_eq!(out.surprise, 0.0);
    }

    #[test]
    fn nlms_horizon_window_matures_late() {
        let mut c = cfg(ModelKind::Nlms);
        c.eta = 0.5;
        c.horizon_k = 2;
        let s0 = init_state(&c, 2).unwrap();
        let s1 = nlms_update(&c, &s0, &dvector![1.0, 0.0], 1.0).unwrap().state_after;
        assert_eq!(s1.matured_surprise(), None);
        let s2 = nlms_update(&c, &s1, &dvector![0.0, 1.0], 1.0).unwrap().state_after;
        // p2 = [0.5, 0.5], p0 = 0 -> surprise of step 1 is |p2 - p0|.
        let (t, value) = s2.matured_surprise().unwrap();
        assert_eq!(t, 1);
        assert_close!(value, 0.5f64.sqrt(), 1e-15);
    }

    #[test]
    fn basic_examples() {
        let c = cfg(ModelKind::Basic);
        let s0 = init_state(&c, 2).unwrap();
        let o1 = basic_update(&c, &s0, &dvector![1.0, 0.0], 5).unwrap();
        assert_eq!(o1.surprise, 1.0);
        let o2 = basic_update(&c, &o1.state_after, &dvector![0.5, 0.5], 3).unwrap();
        assert_eq!(o2.state_after.preference(), dvector![3.25, 0.75]);
        match &o2.state_after {
            PreferenceState::Basic { envelope, .. } => assert_eq!(envelope, &dvector![1.0, 0.5]),
            _ => unreachable!(),
        }
        let o3 = basic_update(&c, &o2.state_after, &dvector![0.2, 0.8], 4).unwrap();
        assert_close!(o3.surprise, 0.3, 1e-15);
        assert_close!(o3.serendipity, 0.3, 1e-15);

        let repeat = basic_update(&c, &o3.state_after, &dvector![0.5, 0.5], 4).unwrap();
        assert!(repeat.surprise <= 0.0);

        assert!(matches!(
            basic_update(&c, &s0, &dvector![1.0, 0.0], 6),
            Err(Error::RatingOutOfRange(6))
        ));
    }

    #[test]
    fn basic_history_average_envelope() {
        let mut c = cfg(ModelKind::Basic);
        c.basic_envelope_source = EnvelopeSource::HistoryAverages;
        let s0 = init_state(&c, 2).unwrap();
        let o1 = basic_update(&c, &s0, &dvector![1.0, 0.0], 5).unwrap();
        let o2 = basic_update(&c, &o1.state_after, &dvector![0.5, 0.5], 3).unwrap();
        // h1 = [1, 0], h2 = [0.75, 0.25]
        match &o2.state_after {
            PreferenceState::Basic { envelope, .. } => assert_eq!(envelope, &dvector![1.0, 0.25]),
            _ => unreachable!(),
        }
        let h = o2.state_after.history_average().unwrap();
        assert_close!(h.sum(), 1.0, 1e-12);
        let o3 = basic_update(&c, &o2.state_after, &dvector![0.2, 0.8], 4).unwrap();
        assert_close!(o3.surprise, 0.55, 1e-15);
    }

    #[test]
    fn update_rejects_kind_and_dimension_mismatch() {
        let state = init_state(&cfg(ModelKind::Arow), 2).unwrap();
        assert!(matches!(
            blr_update(&cfg(ModelKind::Blr), &state, &dvector![0.5, 0.5], 1.0),
            Err(Error::KindMismatch { .. })
        ));
        assert!(matches!(
            arow_update(&cfg(ModelKind::Arow), &state, &dvector![1.0], 1.0),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn config_labels_round_trip() {
        let mut c = cfg(ModelKind::Arow);
        c.r1 = 0.5;
        c.r2 = 4.0;
        let label = c.to_string();
        assert_eq!(label, "arow:prior_variance=1,r1=0.5,r2=4");
        let parsed: ModelConfig = label.parse().unwrap();
        assert_eq!(parsed.to_string(), label);
        assert_eq!(parsed.config_hash(), c.config_hash());

        let nlms: ModelConfig = "nlms:eta=0.2,k=3".parse().unwrap();
        assert_eq!((nlms.eta, nlms.horizon_k), (0.2, 3));
        assert!("arow:r1=-1".parse::<ModelConfig>().is_err());
        assert!("lasso".parse::<ModelConfig>().is_err());
    }

    fn history(items: &[(&str, u8)]) -> UserHistory {
        UserHistory {
            user_id: "u".into(),
            interactions: items
                .iter()
                .enumerate()
                .map(|(i, (id, stars))| Interaction {
                    item_id: id.to_string(),
                    stars: *stars,
                    timestamp: i as i64,
                })
                .collect(),
        }
    }

    #[test]
    fn run_history_examples() {
        let items = BTreeMap::from([("a".to_string(), dvector![1.0])]);
        let empty = run_history(&cfg(ModelKind::Blr), &history(&[]), &items, 1).unwrap();
        assert!(empty.steps.is_empty());

        let single = run_history(&cfg(ModelKind::Blr), &history(&[("a", 4)]), &items, 1).unwrap();
        assert_eq!(single.steps.len(), 1);
        assert_close!(single.steps[0].surprise, 0.22157, 1e-5);

        let err = run_history(&cfg(ModelKind::Blr), &history(&[("a", 4), ("zz", 2)]), &items, 1);
        match err {
            Err(Error::UnknownItems(ids)) => assert_eq!(ids, vec!["zz".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_history_finalizes_nlms_horizon_with_clamping() {
        let items = BTreeMap::from([
            ("x".to_string(), dvector![1.0, 0.0]),
            ("y".to_string(), dvector![0.0, 1.0]),
        ]);
        let mut c = cfg(ModelKind::Nlms);
        c.eta = 0.5;
        c.horizon_k = 2;
        let run = run_history(&c, &history(&[("x", 4), ("y", 4), ("x", 4)]), &items, 2).unwrap();
        let p: Vec<DVector<f64>> = std::iter::once(DVector::zeros(2))
            .chain(run.steps.iter().map(|s| s.preference.clone()))
            .collect();
        assert_close!(run.steps[0].surprise, (&p[2] - &p[0]).norm(), 1e-15);
        assert_close!(run.steps[1].surprise, (&p[3] - &p[1]).norm(), 1e-15);
        // Step 3 clamps its horizon end to the last step.
        assert_close!(run.steps[2].surprise, (&p[3] - &p[2]).norm(), 1e-15);
        for s in &run.steps {
            assert_close!(s.serendipity, s.centered_rating * s.surprise, 0.0);
        }
    }

    #[test]
    fn blr_sequential_matches_batch_on_random_prefixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(1..=6);
            let mut c = cfg(ModelKind::Blr);
            c.beta = rng.random_range(0.2..3.0);
            c.prior_variance = Some(rng.random_range(0.2..3.0));
            let mut state = init_state(&c, k).unwrap();
            let (mut rows, mut targets) = (Vec::new(), Vec::new());
            for _ in 0..15 {
                let theta = random_simplex(&mut rng, k);
                let r = rng.random_range(-2.0..2.0);
                state = blr_update(&c, &state, &theta, r).unwrap().state_after;
                rows.push(theta);
                targets.push(r);
                let batch = batch_blr_posterior(&rows, &targets, k, c.prior_variance(), c.beta).unwrap();
                let seq = state.belief().unwrap();
                assert!((seq.mean() - batch.mean()).abs().max() < 1e-8);
                assert!((seq.cov() - batch.cov()).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn blr_precision_never_decreases_and_arow_covariance_never_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 4;
        for kind in [ModelKind::Blr, ModelKind::Arow] {
            let c = cfg(kind);
            let mut state = init_state(&c, k).unwrap();
            for _ in 0..40 {
                let theta = random_simplex(&mut rng, k);
                let out = update(&c, &state, &theta, rng.random_range(1..=5)).unwrap();
                let before = state.belief().unwrap().cov().clone();
                let after = belief(&out).cov().clone();
                let gap = match kind {
                    ModelKind::Blr => symmetrize(
                        &(after.clone().try_inverse().unwrap() - before.clone().try_inverse().unwrap()),
                    ),
                    _ => symmetrize(&(before - after)),
                };
                let scale = gap.abs().max().max(1.0);
                assert!(SymmetricEigen::new(gap).eigenvalues.min() >= -1e-10 * scale);
                assert!(out.surprise >= 0.0);
                state = out.state_after;
            }
        }
    }

    #[test]
    fn serendipity_sign_follows_rating() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [ModelKind::Blr, ModelKind::VbBlr, ModelKind::Arow] {
            let c = cfg(kind);
            let mut state = init_state(&c, 3).unwrap();
            for _ in 0..30 {
                let stars: u8 = rng.random_range(1..=5);
                let out = update(&c, &state, &random_simplex(&mut rng, 3), stars).unwrap();
                assert!(out.surprise >= 0.0);
                let r = center_rating(stars).unwrap();
                if out.surprise > 0.0 && r != 0.0 {
                    assert_eq!(out.serendipity.signum(), r.signum());
                }
                assert_eq!(out.serendipity, r * out.surprise);
                state = out.state_after;
            }
        }
    }

    #[test]
    fn nlms_k1_surprise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut c = cfg(ModelKind::Nlms);
        c.eta = 0.3;
        let mut state = init_state(&c, 5).unwrap();
        for _ in 0..100 {
            let theta = random_simplex(&mut rng, 5);
            let r = rng.random_range(-2.0..2.0);
            let error = r - state.preference().dot(&theta);
            let out = nlms_update(&c, &state, &theta, r).unwrap();
            assert_close!(out.surprise, c.eta * error.abs() / theta.norm(), 1e-10);
            state = out.state_after;
        }
    }

    #[test]
    fn stationary_stream_error_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 5;
        let truth = DVector::from_iterator(k, (0..k).map(|_| rng.random_range(-2.0..2.0)));
        let stream: Vec<(DVector<f64>, f64)> = (0..400)
            .map(|_| {
                let theta = random_simplex(&mut rng, k);
                let noise: f64 = rng.random_range(-0.1..0.1);
                let r = truth.dot(&theta) + noise;
                (theta, r)
            })
            .collect();
        let mut nlms_cfg = cfg(ModelKind::Nlms);
        nlms_cfg.eta = 0.5;
        for (c, step_fn) in [
            (cfg(ModelKind::Blr), blr_update as fn(&ModelConfig, &PreferenceState, &DVector<f64>, f64) -> Result<StepOutcome>),
            (nlms_cfg, nlms_update),
        ] {
            let mut state = init_state(&c, k).unwrap();
            let mut errors = Vec::new();
            for (theta, r) in &stream {
                let out = step_fn(&c, &state, theta, *r).unwrap();
                errors.push((out.predicted_rating - r).powi(2));
                state = out.state_after;
            }
            let fifth = errors.len() / 5;
            let head: f64 = errors[..fifth].iter().sum::<f64>() / fifth as f64;
            let tail: f64 = errors[errors.len() - fifth..].iter().sum::<f64>() / fifth as f64;
            assert!(tail < head, "{:?}: tail {tail} >= head {head}", c.kind);
        }
    }
}
