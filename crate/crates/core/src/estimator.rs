//! Regression of `log G` on `log R` over growing prefixes of a Landweber
//! trace, conversion of the slope to μ, and the diagnostics that decide where
//! (and whether) the per-prefix estimates can be read.
//!
//! Convention: the fit is `log G_k = γ log R_k + b`, so `G ≈ c R^γ` with
//! `c = exp(b)`. The constant of the `γ log R − ĉ_l = log G` form is `ĉ_l = −b`.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::linear_fit;
use crate::landweber::IterationTrace;

/// μ together with the exponents it determines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceConditionModel {
    pub mu: f64,
    pub c: f64,
    /// Slope of `log G` against `log R`: `(2μ+2)/(2μ+1)`.
    pub gamma: f64,
    pub kappa: f64,
    /// Exponent of the index function `φ(t) = c t^{μ/(2μ+1)}`.
    pub phi_exponent: f64,
    /// Optimal convergence-rate exponent `2μ/(2μ+1)`.
    pub rate_exponent: f64,
}

pub fn rate_exponent(mu: f64) -> f64 {
    2.0 * mu / (2.0 * mu + 1.0)
}

pub fn mu_to_model(mu: f64, c: f64) -> Result<SourceConditionModel> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive and finite, got {mu}"
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "c must be positive and finite, got {c}"
        )));
    }
    let d = 2.0 * mu + 1.0;
    Ok(SourceConditionModel {
        mu,
        c,
        gamma: (2.0 * mu + 2.0) / d,
        kappa: -(mu + 1.0) / d,
        phi_exponent: mu / d,
        rate_exponent: 2.0 * mu / d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuFromGamma {
    Finite(f64),
    /// `γ ≥ 2` or `γ < 1`.
    Nonpositive(f64),
    /// `γ = 1`.
    Infinite,
}

impl MuFromGamma {
    pub fn value(self) -> f64 {
        match self {
            MuFromGamma::Finite(v) | MuFromGamma::Nonpositive(v) => v,
            MuFromGamma::Infinite => f64::INFINITY,
        }
    }
}

/// `μ = (2 − γ)/(2γ − 2)`.
pub fn gamma_to_mu(gamma: f64) -> MuFromGamma {
    if gamma == 1.0 {
        return MuFromGamma::Infinite;
    }
    let mu = (2.0 - gamma) / (2.0 * gamma - 2.0);
    if mu > 0.0 && mu.is_finite() {
        MuFromGamma::Finite(mu)
    } else if mu.is_finite() {
        MuFromGamma::Nonpositive(mu)
    } else {
        MuFromGamma::Infinite
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub gamma: f64,
    /// `b` in `log G = γ log R + b`.
    pub intercept: f64,
    /// RMS of the log-space misfit.
    pub rms: f64,
    pub points: usize,
}

impl RegressionFit {
    /// `ĉ_l = −b`.
    pub fn c_log(&self) -> f64 {
        -self.intercept
    }

    pub fn c(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Running least-squares state in centered form, O(1) per added point.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogLogFit {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    cxx: f64,
    cxy: f64,
    cyy: f64,
}

impl LogLogFit {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let nf = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / nf;
        self.mean_y += dy / nf;
        let dx2 = x - self.mean_x;
        let dy2 = y - self.mean_y;
        self.cxx += dx * dx2;
        self.cxy += dx * dy2;
        self.cyy += dy * dy2;
    }

    /// Add the point `(log r, log g)`.
    pub fn push_norms(&mut self, r: f64, g: f64) {
        self.push(r.ln(), g.ln());
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn fit(&self) -> Result<RegressionFit> {
        if self.n < 2 {
            return Err(Error::DegenerateRegression(format!(
                "need at least two points, have {}",
                self.n
            )));
        }
        let scale = self.n as f64 * (1.0 + self.mean_x * self.mean_x);
        if !(self.cxx > 1e-28 * scale) {
            return Err(Error::DegenerateRegression("all residuals equal".into()));
        }
        let gamma = self.cxy / self.cxx;
        let intercept = self.mean_y - gamma * self.mean_x;
        let sse = (self.cyy - gamma * self.cxy).max(0.0);
        Ok(RegressionFit {
            gamma,
            intercept,
            rms: (sse / self.n as f64).sqrt(),
            points: self.n,
        })
    }
}

/// Least squares over iterations `1..=k`.
pub fn regress_prefix(trace: &IterationTrace, k: usize) -> Result<RegressionFit> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "prefix length must be >= 2, got {k}"
        )));
    }
    if k > trace.usable_len() {
        return Err(Error::InvalidParameter(format!(
            "prefix length {k} exceeds the {} usable trace entries",
            trace.usable_len()
        )));
    }
    let mut fit = LogLogFit::default();
    for i in 0..k {
        fit.push_norms(trace.residuals[i], trace.gradient_norms[i]);
    }
    fit.fit()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub k_min: usize,
    pub w_min: usize,
    pub eps_mu: f64,
    pub eps_c_rel: f64,
    /// Strict increases of the lower bound required to declare noise takeover.
    pub persistence: usize,
    pub saturation_window: usize,
    pub saturation_low: f64,
    pub saturation_high: f64,
    /// Relative move that confirms a turn of the lower bound.
    pub oscillation_hysteresis: f64,
    /// Completed rise/fall cycles that mark the lower bound as oscillating.
    pub oscillation_cycles: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k_min: 5,
            w_min: 50,
            eps_mu: 0.05,
            eps_c_rel: 0.25,
            persistence: 10,
            saturation_window: 25,
            saturation_low: 0.85,
            saturation_high: 1.15,
            oscillation_hysteresis: 0.1,
            oscillation_cycles: 2,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.k_min < 2 {
            return bad("k_min must be >= 2");
        }
        if self.w_min < 2 {
            return bad("w_min must be >= 2");
        }
        if !(self.eps_mu > 0.0) || !(self.eps_c_rel > 0.0) {
            return bad("eps_mu and eps_c_rel must be > 0");
        }
        if self.persistence == 0 || self.saturation_window < 3 {
            return bad("persistence must be >= 1 and saturation_window >= 3");
        }
        if !(self.saturation_low < self.saturation_high) {
            return bad("saturation band must satisfy low < high");
        }
        if !(self.oscillation_hysteresis > 0.0 && self.oscillation_hysteresis < 1.0) {
            return bad("oscillation_hysteresis must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    UnstableSuspectViolation,
    NoiseTruncated,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::UnstableSuspectViolation => "unstable-suspect-violation",
            Verdict::NoiseTruncated => "noise-truncated",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateTrack {
    /// Iteration indices (1-based) of the entries below.
    pub k_values: Vec<usize>,
    pub gamma_k: Vec<f64>,
    pub mu_k: Vec<f64>,
    pub c_k: Vec<f64>,
    pub rms_k: Vec<f64>,
    /// Prefix lengths whose regression was degenerate.
    pub skipped: Vec<usize>,
    /// Inclusive range of iteration indices.
    pub stable_window: Option<(usize, usize)>,
    pub mu_hat: Option<f64>,
    pub c_hat: Option<f64>,
    pub verdict: Verdict,
    pub noise_takeover_k: Option<usize>,
    pub saturation_k: Option<usize>,
    pub lower_bound_cycles: usize,
}

impl EstimateTrack {
    /// Spread `values` over a trace of length `len`; NaN where no estimate exists.
    pub fn aligned(&self, values: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; len];
        for (k, v) in self.k_values.iter().zip(values) {
            if *k >= 1 && *k <= len {
                out[k - 1] = *v;
            }
        }
        out
    }

    /// Positions in the lists where `k_values` lies in `lo..=hi`.
    fn index_range(&self, lo: usize, hi: usize) -> std::ops::Range<usize> {
        let a = self.k_values.partition_point(|&k| k < lo);
        let b = self.k_values.partition_point(|&k| k <= hi);
        a..b.max(a)
    }
}

/// Per-prefix regressions for `k = k_min..=K` plus all diagnostics.
pub fn estimate_track(trace: &IterationTrace, cfg: &EstimatorConfig) -> Result<EstimateTrack> {
    cfg.validate()?;
    let usable = trace.usable_len();
    if usable < cfg.k_min {
        return Err(Error::InvalidParameter(format!(
            "trace has {usable} usable entries, fewer than k_min = {}",
            cfg.k_min
        )));
    }
    let mut fit = LogLogFit::default();
    let mut track = EstimateTrack {
        k_values: Vec::with_capacity(usable),
        gamma_k: Vec::with_capacity(usable),
        mu_k: Vec::with_capacity(usable),
        c_k: Vec::with_capacity(usable),
        rms_k: Vec::with_capacity(usable),
        skipped: Vec::new(),
        stable_window: None,
        mu_hat: None,
        c_hat: None,
        verdict: Verdict::UnstableSuspectViolation,
        noise_takeover_k: None,
        saturation_k: None,
        lower_bound_cycles: 0,
    };
    for i in 0..usable {
        fit.push_norms(trace.residuals[i], trace.gradient_norms[i]);
        let k = i + 1;
        if k < cfg.k_min {
            continue;
        }
        match fit.fit() {
            Ok(f) => {
                track.k_values.push(k);
                track.gamma_k.push(f.gamma);
                track.mu_k.push(gamma_to_mu(f.gamma).value());
                track.c_k.push(f.c());
                track.rms_k.push(f.rms);
            }
            Err(_) => track.skipped.push(k),
        }
    }

    track.noise_takeover_k = detect_noise_takeover(trace, cfg.persistence);
    track.saturation_k = detect_discretization_saturation(
        trace,
        cfg.saturation_window,
        (cfg.saturation_low, cfg.saturation_high),
    );
    track.lower_bound_cycles =
        count_lower_bound_cycles(&trace.lower_bounds[..usable], cfg.oscillation_hysteresis);

    let mut last_k = usable;
    if let Some(k) = track.noise_takeover_k {
        last_k = last_k.min(k);
    }
    if let Some(k) = track.saturation_k {
        last_k = last_k.min(k.saturating_sub(1));
    }
    let range = track.index_range(cfg.k_min, last_k);
    let offset = range.start;
    if let Some((a, b)) = stable_window(
        &track.mu_k[range.clone()],
        &track.c_k[range],
        cfg.w_min,
        cfg.eps_mu,
        cfg.eps_c_rel,
    ) {
        let (a, b) = (a + offset, b + offset);
        track.stable_window = Some((track.k_values[a], track.k_values[b]));
        track.mu_hat = Some(median(&track.mu_k[a..=b]));
        track.c_hat = Some(median(&track.c_k[a..=b]));
    }

    track.verdict =
        if track.lower_bound_cycles >= cfg.oscillation_cycles || track.stable_window.is_none() {
            Verdict::UnstableSuspectViolation
        } else if track.noise_takeover_k.is_some() {
            Verdict::NoiseTruncated
        } else {
            Verdict::Stable
        };
    Ok(track)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Longest window over the whole track, as iteration indices.
pub fn detect_stable_window(
    track: &EstimateTrack,
    w_min: usize,
    eps_mu: f64,
    eps_c_rel: f64,
) -> Option<(usize, usize)> {
    stable_window(&track.mu_k, &track.c_k, w_min, eps_mu, eps_c_rel)
        .map(|(a, b)| (track.k_values[a], track.k_values[b]))
}

/// Longest contiguous index range `[a, b]` with `b − a + 1 ≥ w_min`,
/// `0 < μ < ∞`, `max μ − min μ ≤ eps_mu` and `max c / min c ≤ 1 + eps_c_rel`.
/// Ties go to the earliest range.
pub fn stable_window(
    mu: &[f64],
    c: &[f64],
    w_min: usize,
    eps_mu: f64,
    eps_c_rel: f64,
) -> Option<(usize, usize)> {
    let n = mu.len().min(c.len());
    let mut best: Option<(usize, usize)> = None;
    let mut left = 0;
    // monotone deques of indices: front holds the current max / min
    let mut mu_max: VecDeque<usize> = VecDeque::new();
    let mut mu_min: VecDeque<usize> = VecDeque::new();
    let mut c_max: VecDeque<usize> = VecDeque::new();
    let mut c_min: VecDeque<usize> = VecDeque::new();

    for right in 0..n {
        let valid =
            mu[right] > 0.0 && mu[right].is_finite() && c[right] > 0.0 && c[right].is_finite();
        if !valid {
            left = right + 1;
            mu_max.clear();
            mu_min.clear();
            c_max.clear();
            c_min.clear();
            continue;
        }
        push_max(&mut mu_max, mu, right);
        push_min(&mut mu_min, mu, right);
        push_max(&mut c_max, c, right);
        push_min(&mut c_min, c, right);
        loop {
            let mu_spread = mu[mu_max[0]] - mu[mu_min[0]];
            let c_ratio = c[c_max[0]] / c[c_min[0]];
            if mu_spread <= eps_mu && c_ratio <= 1.0 + eps_c_rel {
                break;
            }
            left += 1;
            for dq in [&mut mu_max, &mut mu_min, &mut c_max, &mut c_min] {
                while dq.front().is_some_and(|&i| i < left) {
                    dq.pop_front();
                }
            }
        }
        let len = right + 1 - left;
        if len >= w_min.max(2) && best.is_none_or(|(a, b)| len > b + 1 - a) {
            best = Some((left, right));
        }
    }
    best
}

fn push_max(dq: &mut VecDeque<usize>, v: &[f64], i: usize) {
    while dq.back().is_some_and(|&j| v[j] <= v[i]) {
        dq.pop_back();
    }
    dq.push_back(i);
}

fn push_min(dq: &mut VecDeque<usize>, v: &[f64], i: usize) {
    while dq.back().is_some_and(|&j| v[j] >= v[i]) {
        dq.pop_back();
    }
    dq.push_back(i);
}

/// Iteration `k*` at which data noise starts to dominate.
///
/// `k*` is the position of the global minimum of the lower bound `R²/G`,
/// accepted only if the next `persistence` values increase strictly and the
/// residual keeps decreasing over the same stretch. Transient bumps in the
/// burn-in phase fall back below the eventual minimum and are ignored.
pub fn detect_noise_takeover(trace: &IterationTrace, persistence: usize) -> Option<usize> {
    let len = trace.usable_len();
    if persistence == 0 || len <= persistence {
        return None;
    }
    let lb = &trace.lower_bounds[..len];
    let (imin, _) = lb
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let end = imin + persistence;
    if end >= len {
        return None;
    }
    let rising = lb[imin..=end].windows(2).all(|w| w[1] > w[0]);
    let residual_falling = trace.residuals[end] < trace.residuals[imin];
    (rising && residual_falling).then_some(imin + 1)
}

/// Trailing-window slopes of `log(R²/G)` against `log R`; entry `j` uses the
/// points `j+1−window ..= j`. NaN where the window is incomplete or degenerate.
pub fn lower_bound_slopes(trace: &IterationTrace, window: usize) -> Vec<f64> {
    let len = trace.usable_len();
    let xs: Vec<f64> = trace.residuals[..len].iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = trace.lower_bounds[..len].iter().map(|l| l.ln()).collect();
    let mut out = vec![f64::NAN; len];
    if window < 2 {
        return out;
    }
    for j in window.saturating_sub(1)..len {
        let lo = j + 1 - window;
        if let Some((s, _, _)) = linear_fit(&xs[lo..=j], &ys[lo..=j]) {
            out[j] = s;
        }
    }
    out
}

/// Onset (iteration index) of a late phase in which `log(R²/G)` grows like
/// `log R` with slope in `band`, the signature of an operator that looks
/// well-posed at the current discretization.
///
/// The phase must be a suffix of the run with at least `window` in-band
/// trailing slopes, preceded by an out-of-band slope.
pub fn detect_discretization_saturation(
    trace: &IterationTrace,
    window: usize,
    band: (f64, f64),
) -> Option<usize> {
    let slopes = lower_bound_slopes(trace, window);
    let in_band = |s: f64| s >= band.0 && s <= band.1;
    let first = window.checked_sub(1)?;
    if slopes.len() <= first {
        return None;
    }
    let mut start = slopes.len();
    while start > first && in_band(slopes[start - 1]) {
        start -= 1;
    }
    let run = slopes.len() - start;
    (run >= window && start > first).then_some(start + 1)
}

/// Completed rise-then-fall cycles of a positive sequence, where a turn only
/// counts once the value has moved by the relative amount `hysteresis` away
/// from the running extreme.
pub fn count_lower_bound_cycles(values: &[f64], hysteresis: f64) -> usize {
    let mut it = values.iter().copied().filter(|v| v.is_finite() && *v > 0.0);
    let Some(mut extreme) = it.next() else {
        return 0;
    };
    let mut rising = false;
    let mut rises = 0;
    let mut cycles = 0;
    for v in it {
        if rising {
            if v > extreme {
                extreme = v;
            } else if v <= extreme * (1.0 - hysteresis) {
                rising = false;
                extreme = v;
                if rises > 0 {
                    cycles += 1;
                }
            }
        } else if v < extreme {
            extreme = v;
        } else if v >= extreme * (1.0 + hysteresis) {
            rising = true;
            extreme = v;
            rises += 1;
        }
    }
    cycles
}
