//! Request shapes, arrival processes and output/duration predictors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// One external call made at the end of a decode segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub duration_true: f64,
    pub return_len_true: u64,
    /// Predicted duration carried by the trace, if any.
    pub duration_pred: Option<f64>,
    pub kind_tag: String,
}

/// A decode segment and the call that follows it (absent for the last one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub gen_len_true: u64,
    pub gen_len_pred: Option<u64>,
    pub call: Option<CallSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestProfile {
    pub l_pre: u64,
    pub segments: Vec<Segment>,
}

impl RequestProfile {
    pub fn validate(&self) -> core::result::Result<(), String> {
        if self.l_pre == 0 {
            return Err("l_pre must be >= 1".into());
        }
        let Some((last, init)) = self.segments.split_last() else {
            return Err("at least one segment is required".into());
        };
        for (i, seg) in init.iter().enumerate() {
            let Some(call) = &seg.call else {
                return Err(format!("segment {i} is not the last one but has no call"));
            };
            if !(call.duration_true.is_finite() && call.duration_true >= 0.0) {
                return Err(format!("segment {i}: call duration must be >= 0"));
            }
            if let Some(p) = call.duration_pred {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(format!("segment {i}: predicted call duration must be >= 0"));
                }
            }
        }
        if last.call.is_some() {
            return Err("the last segment must not carry a call".into());
        }
        if self.total_gen() == 0 {
            return Err("request generates no tokens".into());
        }
        Ok(())
    }

    pub fn total_gen(&self) -> u64 {
        self.segments.iter().map(|s| s.gen_len_true).sum()
    }

    pub fn total_return(&self) -> u64 {
        self.segments
            .iter()
            .filter_map(|s| s.call.as_ref())
            .map(|c| c.return_len_true)
            .sum()
    }

    pub fn num_calls(&self) -> usize {
        self.segments.iter().filter(|s| s.call.is_some()).count()
    }

    /// Context length once the request has finished.
    pub fn final_context(&self) -> u64 {
        self.l_pre + self.total_gen() + self.total_return()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival: f64,
    pub profile: RequestProfile,
}

/// One segment of a trace line. Call fields are absent on the last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSegment {
    pub gen_len: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_return_len: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_len_pred: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_duration_pred: Option<f64>,
}

/// One request as stored in a trace file (one JSON object per line).
///
/// Lengths are signed on the wire so that negative values reach validation
/// and get reported with a useful message instead of a parse error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub arrival_time: f64,
    pub l_pre: i64,
    pub segments: Vec<TraceSegment>,
}

fn non_negative(name: &str, v: i64) -> core::result::Result<u64, String> {
    u64::try_from(v).map_err(|_| format!("{name} must be >= 0, got {v}"))
}

impl TraceRecord {
    pub fn to_request(&self, id: u64) -> core::result::Result<Request, String> {
        if !(self.arrival_time.is_finite() && self.arrival_time >= 0.0) {
            return Err(format!(
                "arrival_time must be >= 0, got {}",
                self.arrival_time
            ));
        }
        let l_pre = non_negative("l_pre", self.l_pre)?;
        let n = self.segments.len();
        let mut segments = Vec::with_capacity(n);
        for (i, s) in self.segments.iter().enumerate() {
            let gen_len_true = non_negative("gen_len", s.gen_len)?;
            let gen_len_pred = s
                .gen_len_pred
                .map(|p| non_negative("gen_len_pred", p))
                .transpose()?;
            let has_call = s.api_duration_s.is_some() || s.api_return_len.is_some();
            let call = if has_call {
                let (Some(d), Some(r)) = (s.api_duration_s, s.api_return_len) else {
                    return Err(format!(
                        "segment {i}: api_duration_s and api_return_len must be given together"
                    ));
                };
                Some(CallSpec {
                    duration_true: d,
                    return_len_true: non_negative("api_return_len", r)?,
                    duration_pred: s.api_duration_pred,
                    kind_tag: s.api_kind.clone().unwrap_or_default(),
                })
            } else {
                None
            };
            segments.push(Segment {
                gen_len_true,
                gen_len_pred,
                call,
            });
        }
        let profile = RequestProfile { l_pre, segments };
        profile.validate()?;
        Ok(Request {
            id,
            arrival: self.arrival_time,
            profile,
        })
    }

    pub fn from_request(req: &Request) -> Self {
        TraceRecord {
            arrival_time: req.arrival,
            l_pre: req.profile.l_pre as i64,
            segments: req
                .profile
                .segments
                .iter()
                .map(|s| TraceSegment {
                    gen_len: s.gen_len_true as i64,
                    api_duration_s: s.call.as_ref().map(|c| c.duration_true),
                    api_return_len: s.call.as_ref().map(|c| c.return_len_true as i64),
                    api_kind: s.call.as_ref().map(|c| c.kind_tag.clone()),
                    gen_len_pred: s.gen_len_pred.map(|p| p as i64),
                    api_duration_pred: s.call.as_ref().and_then(|c| c.duration_pred),
                })
                .collect(),
        }
    }
}

/// Converts records to requests with ids `0..n`, checking arrival order.
///
/// Errors carry the zero-based record index.
pub fn records_to_requests(
    records: &[TraceRecord],
) -> core::result::Result<Vec<Request>, (usize, String)> {
    let mut out = Vec::with_capacity(records.len());
    let mut last = 0.0f64;
    for (i, rec) in records.iter().enumerate() {
        let req = rec.to_request(i as u64).map_err(|e| (i, e))?;
        if req.arrival < last {
            return Err((
                i,
                format!(
                    "arrival_time {} is earlier than the previous record's {}",
                    req.arrival, last
                ),
            ));
        }
        last = req.arrival;
        out.push(req);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shape distributions

/// Log-normal length, rounded and clamped to `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDist {
    pub median: f64,
    pub sigma: f64,
    pub min: u64,
    pub max: u64,
}

impl LengthDist {
    pub const fn new(median: f64, sigma: f64, min: u64, max: u64) -> Self {
        LengthDist {
            median,
            sigma,
            min,
            max,
        }
    }

    fn validate(&self, what: &'static str) -> Result<()> {
        if !(self.median > 0.0 && self.sigma >= 0.0 && self.min <= self.max) {
            return Err(Error::InvalidConfig {
                field: what,
                reason: format!("bad length distribution {self:?}"),
            });
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let d = LogNormal::new(libm::log(self.median), self.sigma).expect("validated");
        let x = libm::round(d.sample(rng));
        (x.max(0.0) as u64).clamp(self.min, self.max)
    }
}

/// Log-normal duration in seconds, capped at `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationDist {
    pub median: f64,
    pub sigma: f64,
    pub max: f64,
}

/// One category of external tool with its own latency and return profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolKind {
    pub name: String,
    pub weight: f64,
    pub duration: DurationDist,
    pub return_len: LengthDist,
}

/// Distribution over request shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDist {
    pub prompt: LengthDist,
    /// Tokens generated per decode segment.
    pub output: LengthDist,
    /// `calls_weights[k]` is the relative weight of making `k` calls.
    pub calls_weights: Vec<f64>,
    pub kinds: Vec<ToolKind>,
}

impl Default for ShapeDist {
    /// A heavy-tailed mix of six tool categories: quick arithmetic, QA
    /// retrieval, a virtual environment, a chatbot, image generation and
    /// text-to-speech.
    fn default() -> Self {
        let kind = |name: &str, weight, dur_med, dur_sigma, dur_max, ret: LengthDist| ToolKind {
            name: name.to_string(),
            weight,
            duration: DurationDist {
                median: dur_med,
                sigma: dur_sigma,
                max: dur_max,
            },
            return_len: ret,
        };
        ShapeDist {
            prompt: LengthDist::new(180.0, 0.9, 8, 2048),
            output: LengthDist::new(40.0, 0.8, 1, 512),
            calls_weights: alloc::vec![0.25, 0.45, 0.3],
            kinds: alloc::vec![
                kind(
                    "math",
                    1.0,
                    0.05,
                    0.5,
                    1.0,
                    LengthDist::new(8.0, 0.5, 1, 64)
                ),
                kind(
                    "qa",
                    1.0,
                    0.8,
                    0.6,
                    10.0,
                    LengthDist::new(120.0, 1.0, 4, 1536)
                ),
                kind("ve", 1.0, 0.2, 0.6, 5.0, LengthDist::new(40.0, 0.8, 2, 512)),
                kind(
                    "chatbot",
                    1.0,
                    2.0,
                    0.7,
                    20.0,
                    LengthDist::new(60.0, 0.8, 2, 512)
                ),
                kind(
                    "image",
                    0.5,
                    6.0,
                    0.5,
                    30.0,
                    LengthDist::new(16.0, 0.4, 1, 64)
                ),
                kind("tts", 0.5, 3.0, 0.5, 20.0, LengthDist::new(8.0, 0.4, 1, 64)),
            ],
        }
    }
}

fn weighted_index<R: Rng + ?Sized>(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut R,
) -> usize {
    let total: f64 = weights.clone().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if x < w {
            return i;
        }
        x -= w;
    }
    last
}

impl ShapeDist {
    pub fn validate(&self) -> Result<()> {
        self.prompt.validate("shape.prompt")?;
        self.output.validate("shape.output")?;
        let bad_weights = |w: &[f64]| {
            w.is_empty()
                || w.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                || w.iter().sum::<f64>() <= 0.0
        };
        if bad_weights(&self.calls_weights) {
            return Err(Error::InvalidConfig {
                field: "shape.calls_weights",
                reason: "need nonnegative weights with a positive sum".into(),
            });
        }
        if self.calls_weights.len() > 1 {
            let kw: Vec<f64> = self.kinds.iter().map(|k| k.weight).collect();
            if bad_weights(&kw) {
                return Err(Error::InvalidConfig {
                    field: "shape.kinds",
                    reason: "calls are possible but no tool kind has positive weight".into(),
                });
            }
        }
        for k in &self.kinds {
            k.return_len.validate("shape.kinds.return_len")?;
            if !(k.duration.median > 0.0 && k.duration.sigma >= 0.0 && k.duration.max >= 0.0) {
                return Err(Error::InvalidConfig {
                    field: "shape.kinds.duration",
                    reason: format!("bad duration distribution for {}", k.name),
                });
            }
        }
        Ok(())
    }

    /// Draws one request shape. Assumes [`ShapeDist::validate`] passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RequestProfile {
        let l_pre = self.prompt.sample(rng).max(1);
        let n_calls = weighted_index(self.calls_weights.iter().copied(), rng);
        let mut segments = Vec::with_capacity(n_calls + 1);
        for _ in 0..n_calls {
            let k = &self.kinds[weighted_index(self.kinds.iter().map(|k| k.weight), rng)];
            let d =
                LogNormal::new(libm::log(k.duration.median), k.duration.sigma).expect("validated");
            let duration_true = d.sample(rng).min(k.duration.max);
            segments.push(Segment {
                gen_len_true: self.output.sample(rng),
                gen_len_pred: None,
                call: Some(CallSpec {
                    duration_true,
                    return_len_true: k.return_len.sample(rng),
                    duration_pred: None,
                    kind_tag: k.name.clone(),
                }),
            });
        }
        segments.push(Segment {
            gen_len_true: self.output.sample(rng).max(1),
            gen_len_pred: None,
            call: None,
        });
        RequestProfile { l_pre, segments }
    }
}

// ---------------------------------------------------------------------------
// Arrival processes

const ARRIVAL_STREAM: u64 = 0xA11;
const SHAPE_STREAM: u64 = 0x5A9E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    Poisson {
        rate: f64,
    },
    /// Gamma inter-arrivals with mean `1 / rate` and coefficient of variation `cv`.
    Gamma {
        rate: f64,
        cv: f64,
    },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        let (rate, cv) = match *self {
            ArrivalProcess::Poisson { rate } => (rate, 1.0),
            ArrivalProcess::Gamma { rate, cv } => (rate, cv),
        };
        if !(rate.is_finite() && rate > 0.0) {
            return Err(invalid(
                "arrival process",
                format!("rate must be > 0, got {rate}"),
            ));
        }
        if !(cv.is_finite() && cv > 0.0) {
            return Err(invalid(
                "arrival process",
                format!("cv must be > 0, got {cv}"),
            ));
        }
        Ok(())
    }

    /// The first `n` inter-arrival gaps for `seed`.
    pub fn interarrivals(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = rng::stream(seed, &[ARRIVAL_STREAM]);
        Ok(match *self {
            ArrivalProcess::Poisson { rate } => {
                let d = Exp::new(rate).expect("validated");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            ArrivalProcess::Gamma { rate, cv } => {
                let shape = 1.0 / (cv * cv);
                let d = Gamma::new(shape, cv * cv / rate).expect("validated");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        })
    }
}

/// When a generated stream stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Arrivals strictly before this time.
    Horizon(f64),
    Count(usize),
}

/// Generates a trace. Request `i` always gets the same shape for a given
/// seed, whatever the arrival process, so runs at different rates compare
/// like with like.
pub fn generate(
    process: ArrivalProcess,
    stop: StopRule,
    shape: &ShapeDist,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    process.validate()?;
    shape.validate()?;
    let mut arrivals_rng = rng::stream(seed, &[ARRIVAL_STREAM]);
    let mut gap: alloc::boxed::Box<dyn FnMut() -> f64> = match process {
        ArrivalProcess::Poisson { rate } => {
            let d = Exp::new(rate).expect("validated");
            alloc::boxed::Box::new(move || d.sample(&mut arrivals_rng))
        }
        ArrivalProcess::Gamma { rate, cv } => {
            let d = Gamma::new(1.0 / (cv * cv), cv * cv / rate).expect("validated");
            alloc::boxed::Box::new(move || d.sample(&mut arrivals_rng))
        }
    };
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap();
        match stop {
            StopRule::Horizon(h) if t >= h => break,
            StopRule::Count(n) if out.len() >= n => break,
            _ => {}
        }
        let i = out.len() as u64;
        let profile = shape.sample(&mut rng::stream(seed, &[SHAPE_STREAM, i]));
        out.push(TraceRecord::from_request(&Request {
            id: i,
            arrival: t,
            profile,
        }));
    }
    Ok(out)
}

/// Poisson arrivals at `rate` up to `horizon` seconds.
pub fn gen_poisson(
    rate: f64,
    horizon: f64,
    shape: &ShapeDist,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    generate(
        ArrivalProcess::Poisson { rate },
        StopRule::Horizon(horizon),
        shape,
        seed,
    )
}

/// Gamma arrivals (shape `1/cv^2`, scale `cv^2/rate`) up to `horizon` seconds.
pub fn gen_gamma(
    rate: f64,
    cv: f64,
    horizon: f64,
    shape: &ShapeDist,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    generate(
        ArrivalProcess::Gamma { rate, cv },
        StopRule::Horizon(horizon),
        shape,
        seed,
    )
}

// ---------------------------------------------------------------------------
// Predictors

/// Stand-ins for a learned length classifier and duration regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Returns the truth.
    Oracle,
    /// Exact lengths; durations get zero-mean Gaussian noise of variance `mse`.
    NoisyDuration { mse: f64 },
    /// Exact durations; lengths become the midpoint of a bucket that is the
    /// true one with probability `accuracy`, otherwise a uniformly chosen
    /// wrong one.
    BucketLength { edges: Vec<u64>, accuracy: f64 },
    /// Both of the above.
    Combined {
        edges: Vec<u64>,
        accuracy: f64,
        mse: f64,
    },
}

fn bucket_of(edges: &[u64], len: u64) -> usize {
    // Buckets are (e[i], e[i+1]]; out-of-range values land in the end buckets.
    let n = edges.len() - 1;
    edges[1..n].iter().take_while(|&&e| len > e).count()
}

fn midpoint(edges: &[u64], b: usize) -> u64 {
    (edges[b] + edges[b + 1]) / 2
}

impl Predictor {
    pub fn validate(&self) -> Result<()> {
        let check_buckets = |edges: &[u64], accuracy: f64| {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(
                    "predictor",
                    "bucket edges must be strictly increasing, at least two",
                ));
            }
            if !(0.0..=1.0).contains(&accuracy) {
                return Err(invalid(
                    "predictor",
                    format!("accuracy must lie in [0, 1], got {accuracy}"),
                ));
            }
            Ok(())
        };
        let check_mse = |mse: f64| {
            if mse.is_finite() && mse >= 0.0 {
                Ok(())
            } else {
                Err(invalid("predictor", format!("mse must be >= 0, got {mse}")))
            }
        };
        match self {
            Predictor::Oracle => Ok(()),
            Predictor::NoisyDuration { mse } => check_mse(*mse),
            Predictor::BucketLength { edges, accuracy } => check_buckets(edges, *accuracy),
            Predictor::Combined {
                edges,
                accuracy,
                mse,
            } => {
                check_buckets(edges, *accuracy)?;
                check_mse(*mse)
            }
        }
    }

    /// Predicted `(output length, call duration)` for the given truth.
    pub fn predict<R: Rng + ?Sized>(&self, truth: (u64, f64), rng: &mut R) -> (u64, f64) {
        let (len, dur) = truth;
        match self {
            Predictor::Oracle => truth,
            Predictor::NoisyDuration { mse } => (len, noisy(dur, *mse, rng)),
            Predictor::BucketLength { edges, accuracy } => {
                (bucketed(edges, *accuracy, len, rng), dur)
            }
            Predictor::Combined {
                edges,
                accuracy,
                mse,
            } => {
                let l = bucketed(edges, *accuracy, len, rng);
                (l, noisy(dur, *mse, rng))
            }
        }
    }
}

fn noisy<R: Rng + ?Sized>(dur: f64, mse: f64, rng: &mut R) -> f64 {
    if mse == 0.0 {
        return dur;
    }
    let n = Normal::new(0.0, libm::sqrt(mse)).expect("validated");
    (dur + n.sample(rng)).max(0.0)
}

fn bucketed<R: Rng + ?Sized>(edges: &[u64], accuracy: f64, len: u64, rng: &mut R) -> u64 {
    let buckets = edges.len() - 1;
    let truth = bucket_of(edges, len);
    if buckets == 1 || rng.random::<f64>() < accuracy {
        return midpoint(edges, truth);
    }
    let mut wrong = rng.random_range(0..buckets - 1);
    if wrong >= truth {
        wrong += 1;
    }
    midpoint(edges, wrong)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Predictor::Oracle.predict((10, 2.0), &mut r), (10, 2.0));
    }

    #[test]
    fn bucket_midpoints() {
        let edges = [0u64, 64, 256, 1024];
        assert_eq!(bucket_of(&edges, 0), 0);
        assert_eq!(bucket_of(&edges, 64), 0);
        assert_eq!(bucket_of(&edges, 65), 1);
        assert_eq!(bucket_of(&edges, 100), 1);
        assert_eq!(bucket_of(&edges, 5000), 2);
        let p = Predictor::BucketLength {
            edges: edges.to_vec(),
            accuracy: 1.0,
        };
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.predict((100, 2.0), &mut r), (160, 2.0));
    }

    #[test]
    fn zero_accuracy_never_hits_true_bucket() {
        let p = Predictor::BucketLength {
            edges: alloc::vec![0, 64, 256, 1024],
            accuracy: 0.0,
        };
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            assert_ne!(p.predict((100, 1.0), &mut r).0, 160);
        }
    }

    #[test]
    fn noisy_duration_is_floored() {
        let p = Predictor::NoisyDuration { mse: 100.0 };
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert!(p.predict((5, 0.1), &mut r).1 >= 0.0);
        }
    }

    #[test]
    fn predictor_validation() {
        assert!(Predictor::BucketLength {
            edges: alloc::vec![0, 5, 5],
            accuracy: 0.5
        }
        .validate()
        .is_err());
        assert!(Predictor::BucketLength {
            edges: alloc::vec![0, 5],
            accuracy: 1.5
        }
        .validate()
        .is_err());
        assert!(Predictor::NoisyDuration { mse: -1.0 }.validate().is_err());
        assert!(Predictor::Combined {
            edges: alloc::vec![0, 5, 9],
            accuracy: 0.5,
            mse: 1.0
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn profile_validation() {
        let seg = |g, call: Option<CallSpec>| Segment {
            gen_len_true: g,
            gen_len_pred: None,
            call,
        };
        let call = CallSpec {
            duration_true: 1.0,
            return_len_true: 5,
            duration_pred: None,
            kind_tag: "qa".into(),
        };
        let ok = RequestProfile {
            l_pre: 4,
            segments: alloc::vec![seg(3, Some(call.clone())), seg(2, None)],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.final_context(), 4 + 5 + 5);
        let trailing_call = RequestProfile {
            l_pre: 4,
            segments: alloc::vec![seg(3, Some(call.clone()))],
        };
        assert!(trailing_call.validate().is_err());
        let no_tokens = RequestProfile {
            l_pre: 4,
            segments: alloc::vec![seg(0, None)],
        };
        assert!(no_tokens.validate().is_err());
        let empty = RequestProfile {
            l_pre: 4,
            segments: alloc::vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn trace_record_rejects_negative_lengths() {
        let rec = TraceRecord {
            arrival_time: 0.0,
            l_pre: 10,
            segments: alloc::vec![TraceSegment {
                gen_len: -3,
                api_duration_s: None,
                api_return_len: None,
                api_kind: None,
                gen_len_pred: None,
                api_duration_pred: None,
            }],
        };
        let err = rec.to_request(0).unwrap_err();
        assert!(err.contains("gen_len"), "{err}");
    }

    #[test]
    fn records_must_be_ordered() {
        let shape = ShapeDist::default();
        let mut recs = gen_poisson(5.0, 2.0, &shape, 1).unwrap();
        assert!(recs.len() >= 2);
        assert!(records_to_requests(&recs).is_ok());
        recs.swap(0, 1);
        let (i, _) = records_to_requests(&recs).unwrap_err();
        assert_eq!(i, 1);
    }

    #[test]
    fn zero_horizon_is_empty() {
        assert!(gen_poisson(2.0, 0.0, &ShapeDist::default(), 7)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn generated_shapes_are_valid_and_seeded() {
        let shape = ShapeDist::default();
        let a = generate(
            ArrivalProcess::Poisson { rate: 3.0 },
            StopRule::Count(200),
            &shape,
            11,
        )
        .unwrap();
        let b = generate(
            ArrivalProcess::Gamma { rate: 1.0, cv: 2.0 },
            StopRule::Count(200),
            &shape,
            11,
        )
        .unwrap();
        assert_eq!(a.len(), 200);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.to_request(0).is_ok());
            // Same shapes, different arrivals.
            assert_eq!(x.segments, y.segments);
            assert_eq!(x.l_pre, y.l_pre);
        }
    }
}
