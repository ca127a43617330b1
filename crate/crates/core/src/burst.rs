//! Event-driven propagation of spike bursts through deep feedforward layers.
//!
//! Each neuron is a two-stage leaky integrator: an input spike of weight `w`
//! kicks a drive current that decays with `activation_tau`, and the drive
//! charges a membrane that leaks with `decay_tau`. A single input therefore
//! contributes the difference-of-exponentials kernel
//!
//! ```text
//! v(t) = w * ta * tm / (tm - ta) * (exp(-t / tm) - exp(-t / ta))
//! ```
//!
//! and the membrane is the sum of these kernels. A neuron fires at most once
//! per burst, at the first time its membrane reaches the threshold. Between
//! input arrivals the membrane has at most one stationary point, so crossing
//! times are found exactly (up to bisection precision) without a time grid.
//!
//! With reset inhibition enabled, the `n_code`-th spike of a layer resets the
//! whole layer: only the first `n_code` crossings fire.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    pub threshold: f64,
    pub decay_tau: f64,
    pub activation_tau: f64,
}

impl NeuronParams {
    pub const DEFAULT_DECAY_TAU: f64 = 2.0;
    pub const DEFAULT_ACTIVATION_TAU: f64 = 1.0;

    pub fn new(threshold: f64, decay_tau: f64, activation_tau: f64) -> Result<Self> {
        for (name, v) in [
            ("threshold", threshold),
            ("decay_tau", decay_tau),
            ("activation_tau", activation_tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if decay_tau == activation_tau {
            return Err(Error::Parameter("decay_tau and activation_tau must differ".into()));
        }
        Ok(Self {
            threshold,
            decay_tau,
            activation_tau,
        })
    }

    pub fn with_threshold(threshold: f64) -> Result<Self> {
        Self::new(threshold, Self::DEFAULT_DECAY_TAU, Self::DEFAULT_ACTIVATION_TAU)
    }

    fn gain(&self) -> f64 {
        let (tm, ta) = (self.decay_tau, self.activation_tau);
        ta * tm / (tm - ta)
    }

    /// Membrane response to a unit-weight spike after `t`.
    pub fn kernel(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.gain() * ((-t / self.decay_tau).exp() - (-t / self.activation_tau).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub n_layers: usize,
    pub neurons_per_layer: usize,
    /// Fraction of the previous layer each neuron listens to.
    pub connectivity: f64,
    /// Target spikes per layer; also the reset-inhibition count.
    pub n_code: usize,
    pub reset_inhibition: bool,
    /// Weights are uniform on `[0, weight_scale)`.
    pub weight_scale: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_layers: 200,
            neurons_per_layer: 256,
            connectivity: 0.1,
            n_code: 11,
            reset_inhibition: false,
            weight_scale: 1.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.neurons_per_layer == 0 {
            return Err(Error::Parameter("network needs at least one layer and neuron".into()));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return Err(Error::Parameter(format!(
                "connectivity must lie in (0, 1], got {}",
                self.connectivity
            )));
        }
        if self.n_code == 0 || self.n_code > self.neurons_per_layer {
            return Err(Error::Parameter(format!(
                "n_code must lie in 1..={}, got {}",
                self.neurons_per_layer, self.n_code
            )));
        }
        if !(self.weight_scale > 0.0) {
            return Err(Error::Parameter("weight_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn fan_in(&self) -> usize {
        ((self.connectivity * self.neurons_per_layer as f64).round() as usize).clamp(1, self.neurons_per_layer)
    }
}

/// Incoming synapses of one neuron.
type Fan = Vec<(u32, f64)>;

#[derive(Debug, Clone)]
pub struct LayerNet {
    config: NetConfig,
    /// `layers[l][j]`: synapses from layer `l` onto neuron `j` of layer `l+1`.
    layers: Vec<Vec<Fan>>,
}

impl LayerNet {
    /// Every neuron draws exactly `fan_in` distinct presynaptic partners.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.neurons_per_layer;
        let k = config.fan_in();
        let w_max = config.weight_scale;
        let layers = (0..config.n_layers)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let mut fan: Fan = sample(&mut rng, n, k)
                            .into_iter()
                            .map(|src| (src as u32, rng.random::<f64>() * w_max))
                            .collect();
                        fan.sort_by_key(|&(s, _)| s);
                        fan
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn with_reset_inhibition(mut self, on: bool) -> Self {
        self.config.reset_inhibition = on;
        self
    }

    /// Synapses onto neuron `j` of layer `l + 1`.
    pub fn fan(&self, l: usize, j: usize) -> &[(u32, f64)] {
        &self.layers[l][j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub neuron: usize,
    pub time: f64,
}

/// `n_code` distinct random neurons firing in rank order, evenly spread over
/// `[0, dispersion]`.
pub fn input_burst<R: Rng + ?Sized>(neurons: usize, n_code: usize, dispersion: f64, rng: &mut R) -> Vec<SpikeEvent> {
    let order = sample(rng, neurons, n_code).into_vec();
    let step = if n_code > 1 {
        dispersion / (n_code - 1) as f64
    } else {
        0.0
    };
    order
        .into_iter()
        .enumerate()
        .map(|(k, neuron)| SpikeEvent {
            neuron,
            time: k as f64 * step,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivity {
    pub spike_count: usize,
    pub dispersion: f64,
    /// Spikes in firing order.
    pub events: Vec<SpikeEvent>,
}

impl LayerActivity {
    fn from_events(mut events: Vec<SpikeEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.neuron.cmp(&b.neuron)));
        let dispersion = match (events.first(), events.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        };
        Self {
            spike_count: events.len(),
            dispersion,
            events,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Dying,
    Stable,
    Exploding,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Dying => "dying",
            Regime::Stable => "stable",
            Regime::Exploding => "exploding",
        }
    }
}

/// Per-layer activity; index 0 is the input burst.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstTrace {
    pub layers: Vec<LayerActivity>,
    pub regime: Regime,
}

impl BurstTrace {
    /// Dispersion of layers `from..=to` that exist in the trace.
    pub fn dispersions(&self, from: usize, to: usize) -> Vec<f64> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(l, _)| *l >= from && *l <= to)
            .map(|(_, a)| a.dispersion)
            .collect()
    }

    pub fn max_spike_count(&self) -> usize {
        self.layers.iter().skip(1).map(|a| a.spike_count).max().unwrap_or(0)
    }
}

/// First time at or after the earliest input when the membrane reaches
/// threshold, given inputs sorted by time.
fn first_crossing(inputs: &[(f64, f64)], p: &NeuronParams) -> Option<f64> {
    let (tm, ta) = (p.decay_tau, p.activation_tau);
    let c = p.gain();
    let theta = p.threshold;
    let rate = 1.0 / ta - 1.0 / tm;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut last_t = f64::NAN;
    for (j, &(t, w)) in inputs.iter().enumerate() {
        if j > 0 {
            let dt = t - last_t;
            a *= (-dt / tm).exp();
            b *= (-dt / ta).exp();
        }
        a += w;
        b += w;
        last_t = t;
        let span = inputs.get(j + 1).map_or(f64::INFINITY, |&(tn, _)| tn - t);
        let v = |u: f64| c * (a * (-u / tm).exp() - b * (-u / ta).exp());
        // Stationary point of the two-exponential membrane in this interval.
        let ratio = (b * tm) / (a * ta);
        let u_star = if ratio > 0.0 { ratio.ln() / rate } else { 0.0 };
        let peak_u = if u_star.is_finite() {
            u_star.clamp(0.0, span)
        } else {
            0.0
        };
        let hi = if span.is_finite() && v(span) >= theta {
            // Rising through the interval end.
            if v(peak_u) >= theta && peak_u < span {
                peak_u
            } else {
                span
            }
        } else if v(peak_u) >= theta {
            peak_u
        } else {
            continue;
        };
        let (mut lo_u, mut hi_u) = (0.0, hi);
        if v(0.0) >= theta {
            return Some(t);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo_u + hi_u);
            if mid <= lo_u || mid >= hi_u {
                break;
            }
            if v(mid) >= theta {
                hi_u = mid;
            } else {
                lo_u = mid;
            }
        }
        return Some(t + hi_u);
    }
    None
}

fn step_layer(
    fans: &[Fan],
    prev: &[SpikeEvent],
    prev_neurons: usize,
    p: &NeuronParams,
    cap: Option<usize>,
) -> Vec<SpikeEvent> {
    let mut time_of = vec![f64::NAN; prev_neurons];
    for e in prev {
        time_of[e.neuron] = e.time;
    }
    let mut fired = Vec::new();
    let mut inputs: Vec<(f64, f64)> = Vec::new();
    for (j, fan) in fans.iter().enumerate() {
        inputs.clear();
        inputs.extend(
            fan.iter()
                .filter(|&&(s, _)| !time_of[s as usize].is_nan())
                .map(|&(s, w)| (time_of[s as usize], w)),
        );
        if inputs.is_empty() {
            continue;
        }
        inputs.sort_by(|x, y| x.0.total_cmp(&y.0));
        if let Some(t) = first_crossing(&inputs, p) {
            fired.push(SpikeEvent { neuron: j, time: t });
        }
    }
    fired.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.neuron.cmp(&b.neuron)));
    if let Some(n) = cap {
        fired.truncate(n);
    }
    fired
}

/// Consecutive over-full layers that mark a run as exploding.
const EXPLODE_RUN: usize = 3;

fn run(net: &LayerNet, input: &[SpikeEvent], p: &NeuronParams, stop_early: bool) -> Result<BurstTrace> {
    let cfg = &net.config;
    if input.is_empty() {
        return Err(Error::Parameter("input burst must be nonempty".into()));
    }
    if input.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::Parameter("input burst times must be non-decreasing".into()));
    }
    if let Some(e) = input.iter().find(|e| e.neuron >= cfg.neurons_per_layer) {
        return Err(Error::Parameter(format!("input neuron {} outside layer", e.neuron)));
    }
    let cap = cfg.reset_inhibition.then_some(cfg.n_code);
    let mut layers = vec![LayerActivity::from_events(input.to_vec())];
    let mut over_run = 0;
    let mut regime = Regime::Stable;
    for fans in &net.layers {
        let prev = &layers.last().expect("input layer present").events;
        let next = step_layer(fans, prev, cfg.neurons_per_layer, p, cap);
        let act = LayerActivity::from_events(next);
        let count = act.spike_count;
        layers.push(act);
        if count == 0 {
            regime = Regime::Dying;
            break;
        }
        if count > 2 * cfg.n_code {
            over_run += 1;
            if over_run >= EXPLODE_RUN {
                regime = Regime::Exploding;
                if stop_early {
                    break;
                }
            }
        } else {
            over_run = 0;
        }
    }
    Ok(BurstTrace { layers, regime })
}

/// Simulates every layer (stopping only when activity dies out).
pub fn propagate(net: &LayerNet, input: &[SpikeEvent], params: &NeuronParams) -> Result<BurstTrace> {
    run(net, input, params, false)
}

/// Dying if activity vanishes, exploding if more than `2 * n_code` neurons
/// fire for three consecutive layers, stable otherwise.
pub fn classify_regime(net: &LayerNet, params: &NeuronParams, input: &[SpikeEvent]) -> Result<Regime> {
    Ok(run(net, input, params, true)?.regime)
}

fn classify_at(net: &LayerNet, base: &NeuronParams, input: &[SpikeEvent], theta: f64) -> Result<Regime> {
    let p = NeuronParams {
        threshold: theta,
        ..*base
    };
    classify_regime(net, &p, input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalThreshold {
    /// Midpoint of the final bracket.
    pub theta: f64,
    /// Final bracket: `lo` never dies, `hi` dies.
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    /// Every bracket visited, starting with the input one.
    pub history: Vec<(f64, f64)>,
}

/// Bisection for the threshold where activity stops surviving.
///
/// Requires `lo` to classify exploding and `hi` dying. Each step keeps
/// `lo` non-dying and `hi` dying.
pub fn find_critical_threshold(
    net: &LayerNet,
    input: &[SpikeEvent],
    base: &NeuronParams,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<CriticalThreshold> {
    if !(lo > 0.0 && hi > lo && tol > 0.0) {
        return Err(Error::Precondition(format!(
            "need 0 < lo < hi and tol > 0, got lo={lo}, hi={hi}, tol={tol}"
        )));
    }
    let r_lo = classify_at(net, base, input, lo)?;
    let r_hi = classify_at(net, base, input, hi)?;
    if r_lo != Regime::Exploding || r_hi != Regime::Dying {
        return Err(Error::Precondition(format!(
            "lo and hi must bracket the transition: classify(lo={lo}) is {}, classify(hi={hi}) is {}; expected exploding and dying",
            r_lo.label(),
            r_hi.label()
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut history = vec![(lo, hi)];
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if classify_at(net, base, input, mid)? == Regime::Dying {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
        history.push((lo, hi));
    }
    Ok(CriticalThreshold {
        theta: 0.5 * (lo + hi),
        lo,
        hi,
        iterations,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionScan {
    /// `(theta, regime)` on the scan grid.
    pub points: Vec<(f64, Regime)>,
    /// Smallest grid threshold that is not exploding.
    pub first_not_exploding: Option<f64>,
    /// Largest grid threshold that is not dying.
    pub last_not_dying: Option<f64>,
    pub grid_step: f64,
    /// Extent of the region where the two regimes mix or a stable regime
    /// appears, plus one grid step of resolution.
    pub width: f64,
}

/// Scans `steps + 1` thresholds across `center * (1 +- rel_span)`.
pub fn scan_transition(
    net: &LayerNet,
    input: &[SpikeEvent],
    base: &NeuronParams,
    center: f64,
    rel_span: f64,
    steps: usize,
) -> Result<TransitionScan> {
    if steps == 0 || !(rel_span > 0.0) {
        return Err(Error::Parameter("scan needs steps > 0 and a positive span".into()));
    }
    let lo = center * (1.0 - rel_span);
    let grid_step = 2.0 * center * rel_span / steps as f64;
    let points = (0..=steps)
        .map(|k| {
            let theta = lo + k as f64 * grid_step;
            Ok((theta, classify_at(net, base, input, theta)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let first_not_exploding = points.iter().find(|(_, r)| *r != Regime::Exploding).map(|p| p.0);
    let last_not_dying = points.iter().rev().find(|(_, r)| *r != Regime::Dying).map(|p| p.0);
    let mixed = match (first_not_exploding, last_not_dying) {
        (Some(a), Some(b)) => (b - a).max(0.0),
        _ => 0.0,
    };
    Ok(TransitionScan {
        points,
        first_not_exploding,
        last_not_dying,
        grid_step,
        width: mixed + grid_step,
    })
}

/// Mean dispersion over layers `from..=to`, or `None` if the burst died first.
pub fn stable_dispersion(trace: &BurstTrace, from: usize, to: usize) -> Option<f64> {
    if trace.layers.len() <= to {
        return None;
    }
    let d = trace.dispersions(from, to);
    Some(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionRow {
    pub connectivity: f64,
    pub seed: u64,
    pub regime: Regime,
    /// `None` when the burst died before the measuring window ended.
    pub stable_dispersion: Option<f64>,
}

/// Stabilised dispersion (mean over layers `window`) for every
/// connectivity and seed, with reset inhibition on. The seed drives both
/// the network and the input burst.
pub fn dispersion_vs_connectivity(
    template: &NetConfig,
    params: &NeuronParams,
    connectivities: &[f64],
    seeds: &[u64],
    input_dispersion: f64,
    window: (usize, usize),
) -> Result<Vec<DispersionRow>> {
    let mut rows = Vec::with_capacity(connectivities.len() * seeds.len());
    for &c in connectivities {
        for &seed in seeds {
            let cfg = NetConfig {
                connectivity: c,
                seed,
                reset_inhibition: true,
                n_layers: template.n_layers.max(window.1),
                ..*template
            };
            let net = LayerNet::new(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b125);
            let input = input_burst(cfg.neurons_per_layer, cfg.n_code, input_dispersion, &mut rng);
            let trace = propagate(&net, &input, params)?;
            rows.push(DispersionRow {
                connectivity: c,
                seed,
                regime: trace.regime,
                stable_dispersion: stable_dispersion(&trace, window.0, window.1),
            });
        }
    }
    Ok(rows)
}

/// Fixed-step reference simulation of the same dynamics. Inputs are
/// delivered at the first grid point at or after their arrival, and a
/// neuron fires at the first grid point where its membrane is at or above
/// threshold.
pub fn propagate_fixed_step(
    net: &LayerNet,
    input: &[SpikeEvent],
    p: &NeuronParams,
    dt: f64,
    max_layers: usize,
) -> Result<Vec<LayerActivity>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter("dt must be positive".into()));
    }
    let cfg = &net.config;
    let n = cfg.neurons_per_layer;
    let (tm, ta) = (p.decay_tau, p.activation_tau);
    let c = p.gain();
    let (dm, da) = ((-dt / tm).exp(), (-dt / ta).exp());
    let horizon = 40.0 * tm.max(ta);
    let mut layers = vec![LayerActivity::from_events(input.to_vec())];
    for fans in net.layers.iter().take(max_layers) {
        let prev = &layers.last().expect("input layer present").events;
        if prev.is_empty() {
            break;
        }
        let t0 = prev.first().expect("nonempty").time;
        let t_end = prev.last().expect("nonempty").time + horizon;
        let steps = ((t_end - t0) / dt).ceil() as usize + 1;
        let mut time_of = vec![f64::NAN; n];
        for e in prev {
            time_of[e.neuron] = e.time;
        }
        let mut fired = Vec::new();
        for (j, fan) in fans.iter().enumerate() {
            // Arrivals bucketed to grid indices.
            let mut arrivals: Vec<(usize, f64)> = fan
                .iter()
                .filter(|&&(s, _)| !time_of[s as usize].is_nan())
                .map(|&(s, w)| (((time_of[s as usize] - t0) / dt).ceil() as usize, w))
                .collect();
            if arrivals.is_empty() {
                continue;
            }
            arrivals.sort_by_key(|a| a.0);
            let (mut drive, mut v) = (0.0f64, 0.0f64);
            let mut next = 0;
            for k in 0..steps {
                while next < arrivals.len() && arrivals[next].0 == k {
                    drive += arrivals[next].1;
                    next += 1;
                }
                if v >= p.threshold {
                    fired.push(SpikeEvent {
                        neuron: j,
                        time: t0 + k as f64 * dt,
                    });
                    break;
                }
                // Exact update of the linear two-stage system over one step.
                v = v * dm + drive * c * (dm - da);
                drive *= da;
            }
        }
        fired.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.neuron.cmp(&b.neuron)));
        if cfg.reset_inhibition {
            fired.truncate(cfg.n_code);
        }
        layers.push(LayerActivity::from_events(fired));
    }
    Ok(layers)
}
