//! Tabular Q-learning controller for runtime drift.
//!
//! The agent sees a 5×4 state (foreground brightness bucket × rolling audit
//! accuracy bucket) and nudges the live camera gain correction or the
//! spoilage threshold, or recalibrates against the reference tile. A
//! recalibration measures the current lighting and spectral baseline and
//! restores the commissioned operating point. The trained network is never
//! modified.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SPECTRAL_CHANNELS;
use crate::seed;
use crate::synthcrop::{conveyor_stream, DriftConfig, DriftState, FruitSample};

pub const BRIGHTNESS_EDGES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
/// Rolling audit accuracy bins: `[0, 0.6)`, `[0.6, 0.8)`, `[0.8, 0.9)`, `[0.9, 1]`.
pub const ACCURACY_EDGES: [f64; 3] = [0.6, 0.8, 0.9];
pub const STATE_COUNT: usize = 20;
pub const ACTION_COUNT: usize = 7;
pub const GAIN_RANGE: (f64, f64) = (0.5, 1.5);
pub const THRESHOLD_RANGE: (f64, f64) = (0.05, 0.95);
pub const GAIN_STEP: f64 = 0.05;
pub const THRESHOLD_STEP: f64 = 0.05;

/// Runtime knobs applied in front of the frozen model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveSettings {
    /// Multiplier applied to normalised pixels before feature extraction.
    pub gain_correction: f64,
    pub spoil_threshold: f64,
    /// Baseline added to both sensor references at the last recalibration.
    pub spectral_compensation: [f64; SPECTRAL_CHANNELS],
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            gain_correction: 1.0,
            spoil_threshold: 0.5,
            spectral_compensation: [0.0; SPECTRAL_CHANNELS],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptAction {
    GainDown,
    GainHold,
    GainUp,
    ThresholdDown,
    ThresholdUp,
    Recalibrate,
    Noop,
}

impl AdaptAction {
    pub const ALL: [AdaptAction; ACTION_COUNT] = [
        AdaptAction::GainDown,
        AdaptAction::GainHold,
        AdaptAction::GainUp,
        AdaptAction::ThresholdDown,
        AdaptAction::ThresholdUp,
        AdaptAction::Recalibrate,
        AdaptAction::Noop,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// True for actions that leave every setting unchanged.
    pub fn is_zero_magnitude(self) -> bool {
        matches!(self, AdaptAction::GainHold | AdaptAction::Noop)
    }

    /// Apply to `settings`; `drift` is what a recalibration would measure.
    pub fn apply(self, settings: &mut LiveSettings, drift: &DriftState) {
        let (glo, ghi) = GAIN_RANGE;
        let (tlo, thi) = THRESHOLD_RANGE;
        match self {
            AdaptAction::GainDown => {
                settings.gain_correction = (settings.gain_correction - GAIN_STEP).clamp(glo, ghi)
            }
            AdaptAction::GainUp => {
                settings.gain_correction = (settings.gain_correction + GAIN_STEP).clamp(glo, ghi)
            }
            AdaptAction::ThresholdDown => {
                settings.spoil_threshold = (settings.spoil_threshold - THRESHOLD_STEP).clamp(tlo, thi)
            }
            AdaptAction::ThresholdUp => {
                settings.spoil_threshold = (settings.spoil_threshold + THRESHOLD_STEP).clamp(tlo, thi)
            }
            AdaptAction::Recalibrate => {
                settings.gain_correction = (1.0 / drift.lighting_gain).clamp(glo, ghi);
                settings.spoil_threshold = LiveSettings::default().spoil_threshold;
                settings.spectral_compensation = drift.spectral_offset;
            }
            AdaptAction::GainHold | AdaptAction::Noop => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptState {
    pub brightness_bucket: usize,
    pub accuracy_bucket: usize,
}

fn bucket(value: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| value >= e).count()
}

impl AdaptState {
    pub fn new(brightness: f64, accuracy: Option<f64>) -> Self {
        Self {
            brightness_bucket: bucket(brightness, &BRIGHTNESS_EDGES),
            // No audits yet: optimistic top bin.
            accuracy_bucket: accuracy.map_or(ACCURACY_EDGES.len(), |a| bucket(a, &ACCURACY_EDGES)),
        }
    }

    pub fn code(self) -> usize {
        self.brightness_bucket * (ACCURACY_EDGES.len() + 1) + self.accuracy_bucket
    }
}

/// Rolling window over the last `W` audit outcomes.
#[derive(Clone, Debug)]
pub struct Observer {
    window: VecDeque<bool>,
    capacity: usize,
}

impl Observer {
    pub fn new(capacity: usize) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window.iter().filter(|&&c| c).count() as f64 / self.window.len() as f64)
        }
    }

    /// Forget every audit; used after a recalibration, since earlier audits
    /// describe the previous operating point.
    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Record an audit outcome (if any) and return the discretised state.
    pub fn observe(&mut self, brightness: f64, audit: Option<bool>) -> AdaptState {
        if let Some(correct) = audit {
            if self.window.len() == self.capacity {
                self.window.pop_front();
            }
            self.window.push_back(correct);
        }
        AdaptState::new(brightness, self.accuracy())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub alpha: f64,
    pub gamma: f64,
    pub values: Vec<[f64; ACTION_COUNT]>,
}

impl QTable {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            values: vec![[0.0; ACTION_COUNT]; STATE_COUNT],
        }
    }

    pub fn get(&self, s: AdaptState, a: AdaptAction) -> f64 {
        self.values[s.code()][a.code()]
    }

    /// Greedy action; ties go to the lowest code.
    pub fn greedy(&self, s: AdaptState) -> AdaptAction {
        let row = &self.values[s.code()];
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        AdaptAction::ALL[best]
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// ε-greedy choice driven by a per-step seed.
pub fn select_action(q: &QTable, s: AdaptState, epsilon: f64, step_seed: u64) -> AdaptAction {
    let mut rng = seed::rng(step_seed);
    if rng.random::<f64>() < epsilon {
        AdaptAction::ALL[rng.random_range(0..ACTION_COUNT)]
    } else {
        q.greedy(s)
    }
}

/// `Q(s,a) += alpha * (r + gamma * max Q(s',.) - Q(s,a))`.
pub fn q_update(q: &mut QTable, s: AdaptState, a: AdaptAction, reward: f64, next: AdaptState) -> Result<()> {
    if !reward.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    let best_next = q.values[next.code()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cell = &mut q.values[s.code()][a.code()];
    let updated = *cell + q.alpha * (reward + q.gamma * best_next - *cell);
    if !updated.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    *cell = updated;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub correct: f64,
    pub false_negative: f64,
    pub false_positive: f64,
    pub recalibrate_cost: f64,
    /// Charged for each gain or threshold nudge.
    pub adjust_cost: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            correct: 1.0,
            false_negative: -2.0,
            false_positive: -0.5,
            recalibrate_cost: -0.1,
            adjust_cost: -0.2,
        }
    }
}

impl RewardConfig {
    pub fn action_cost(&self, action: AdaptAction) -> f64 {
        match action {
            AdaptAction::Recalibrate => self.recalibrate_cost,
            a if a.is_zero_magnitude() => 0.0,
            _ => self.adjust_cost,
        }
    }

    pub fn audit_reward(&self, predicted_spoiled: bool, spoiled: bool) -> f64 {
        match (predicted_spoiled, spoiled) {
            (p, t) if p == t => self.correct,
            (false, true) => self.false_negative,
            _ => self.false_positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub audit_probability: f64,
    pub window: usize,
    pub steps: usize,
    /// Training episodes run before the reported one; the Q-table carries over.
    pub warmup_episodes: usize,
    pub rewards: RewardConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.3,
            epsilon_end: 0.02,
            audit_probability: 0.2,
            window: 20,
            steps: 3000,
            warmup_episodes: 4,
            rewards: RewardConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModelConfig(format!("adaptor: {m}")));
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("audit_probability", self.audit_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.window == 0 || self.steps == 0 {
            return bad("window and steps must be positive");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` at step 0 to `epsilon_end` at the
    /// final step of all episodes.
    pub fn epsilon(&self, global_step: usize, total_steps: usize) -> f64 {
        if total_steps <= 1 {
            return self.epsilon_end;
        }
        let t = global_step as f64 / (total_steps - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

/// What the controller sees of one inspected item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub spoil_prob: f64,
    /// Mean foreground luma after gain correction.
    pub brightness: f64,
}

/// The live pipeline as seen by the controller.
pub trait Inspector {
    fn inspect(&self, sample: &FruitSample, settings: &LiveSettings) -> Result<Observation>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// ε-greedy Q-learning.
    Adaptive,
    /// Always `Noop`; the baseline arm of the A/B comparison.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    /// Reward credited to the previous action.
    pub reward: f64,
    pub gain: f64,
    pub threshold: f64,
    pub running_accuracy: f64,
    pub audited: bool,
    pub correct: Option<bool>,
    pub lighting_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRun {
    pub policy: Policy,
    pub qtable: QTable,
    pub log: Vec<LogRow>,
    pub final_settings: LiveSettings,
}

impl AdaptationRun {
    /// Audited accuracy over the last `n` steps of the log.
    pub fn audited_accuracy_tail(&self, n: usize) -> f64 {
        let tail = &self.log[self.log.len().saturating_sub(n)..];
        let (mut hits, mut audits) = (0usize, 0usize);
        for r in tail {
            if let Some(c) = r.correct {
                audits += 1;
                hits += c as usize;
            }
        }
        if audits == 0 {
            0.0
        } else {
            hits as f64 / audits as f64
        }
    }

    pub fn log_csv(&self) -> String {
        let mut out =
            String::from("step,state,action,reward,gain,threshold,running_accuracy,audited,lighting_gain\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.state,
                r.action,
                r.reward,
                r.gain,
                r.threshold,
                r.running_accuracy,
                r.audited as u8,
                r.lighting_gain
            );
        }
        out
    }
}

fn episode(
    inspector: &dyn Inspector,
    dataset: &[FruitSample],
    drift: &DriftConfig,
    config: &AdaptConfig,
    policy: Policy,
    episode_seed: u64,
    q: &mut QTable,
    step_offset: usize,
    total_steps: usize,
) -> Result<(Vec<LogRow>, LiveSettings)> {
    let mut stream = conveyor_stream(dataset, drift.clone(), seed::derive(episode_seed, "stream"))?;
    let mut audit_rng = seed::rng(seed::derive(episode_seed, "audit"));
    let action_root = seed::derive(episode_seed, "action");
    let mut settings = LiveSettings::default();
    let mut observer = Observer::new(config.window);
    let mut prev: Option<(AdaptState, AdaptAction)> = None;
    let (mut hits, mut audits) = (0usize, 0usize);
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let (sample, drift_state) = stream.next().expect("conveyor is endless");
        let obs = inspector.inspect(&sample, &settings)?;
        let predicted = obs.spoil_prob >= settings.spoil_threshold;
        // Audit draw happens every step so both arms see the same audits.
        let audited = audit_rng.random::<f64>() < config.audit_probability;
        let correct = audited.then_some(predicted == sample.attrs.spoiled);
        let mut reward = if audited {
            config.rewards.audit_reward(predicted, sample.attrs.spoiled)
        } else {
            0.0
        };
        if let Some(c) = correct {
            audits += 1;
            hits += c as usize;
        }
        let state = observer.observe(obs.brightness, correct);
        if let Some((ps, pa)) = prev {
            reward += config.rewards.action_cost(pa);
            if policy == Policy::Adaptive {
                q_update(q, ps, pa, reward, state)?;
            }
        }
        let action = match policy {
            Policy::Frozen => AdaptAction::Noop,
            Policy::Adaptive => {
                let eps = config.epsilon(step_offset + step, total_steps);
                select_action(q, state, eps, seed::derive_indexed(action_root, step as u64))
            }
        };
        action.apply(&mut settings, &drift_state);
        if action == AdaptAction::Recalibrate {
            observer.reset();
        }
        log.push(LogRow {
            step,
            state: state.code(),
            action: action.code(),
            reward,
            gain: settings.gain_correction,
            threshold: settings.spoil_threshold,
            running_accuracy: if audits == 0 { 1.0 } else { hits as f64 / audits as f64 },
            audited,
            correct,
            lighting_gain: drift_state.lighting_gain,
        });
        prev = Some((state, action));
    }
    Ok((log, settings))
}

/// Run the control loop. With `warmup_episodes > 0` the Q-table is first
/// trained on independent streams; the returned log covers the final episode.
pub fn run_adaptation(
    inspector: &dyn Inspector,
    dataset: &[FruitSample],
    drift: &DriftConfig,
    config: &AdaptConfig,
    policy: Policy,
    seed_value: u64,
) -> Result<AdaptationRun> {
    config.validate()?;
    let mut q = QTable::new(config.alpha, config.gamma);
    let episodes = config.warmup_episodes + 1;
    let total = episodes * config.steps;
    let mut last = None;
    for e in 0..episodes {
        // The reported episode uses the same stream seed for both policies.
        let ep_seed = if e + 1 == episodes {
            seed::derive(seed_value, "episode-final")
        } else {
            seed::derive_indexed(seed::derive(seed_value, "episode-warmup"), e as u64)
        };
        if policy == Policy::Frozen && e + 1 < episodes {
            continue;
        }
        last = Some(episode(inspector, dataset, drift, config, policy, ep_seed, &mut q, e * config.steps, total)?);
    }
    let (log, final_settings) = last.expect("at least one episode");
    Ok(AdaptationRun {
        policy,
        qtable: q,
        log,
        final_settings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbSummary {
    pub steps: usize,
    pub tail_steps: usize,
    pub drift_enabled: bool,
    pub baseline_accuracy: f64,
    pub adaptive_accuracy: f64,
    /// Adaptive minus baseline, in accuracy points (percent).
    pub gap_points: f64,
}

/// Paired adaptive / frozen runs on identical streams and audits.
pub fn ab_compare(
    inspector: &dyn Inspector,
    dataset: &[FruitSample],
    drift: &DriftConfig,
    config: &AdaptConfig,
    seed_value: u64,
    tail_steps: usize,
) -> Result<(AbSummary, AdaptationRun, AdaptationRun)> {
    let adaptive = run_adaptation(inspector, dataset, drift, config, Policy::Adaptive, seed_value)?;
    let frozen = run_adaptation(inspector, dataset, drift, config, Policy::Frozen, seed_value)?;
    let a = adaptive.audited_accuracy_tail(tail_steps);
    let b = frozen.audited_accuracy_tail(tail_steps);
    let summary = AbSummary {
        steps: config.steps,
        tail_steps,
        drift_enabled: drift.enabled,
        baseline_accuracy: b,
        adaptive_accuracy: a,
        gap_points: 100.0 * (a - b),
    };
    Ok((summary, adaptive, frozen))
}
