//! Complex baseband signals, the synthetic emitter fleet, power normalization
//! and AWGN injection.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{param_err, Error, Result};
use crate::rng::{self, Domain};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10.0e6;
pub const NUM_DEVICES: usize = 9;

/// Complex baseband samples with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSequence {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqSequence {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return param_err("IQ sequence must contain at least one sample");
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return param_err(format!("sample rate must be positive, got {sample_rate_hz}"));
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return param_err("IQ sequence contains non-finite samples");
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |s|².
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm()).collect()
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * a).collect(), self.sample_rate_hz)
    }
}

pub(crate) fn mean_power(samples: &[Complex64]) -> f64 {
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Signal-to-noise level: a finite dB value or the noiseless case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrDb {
    Clean,
    Db(f64),
}

impl SnrDb {
    pub fn as_db(self) -> f64 {
        match self {
            SnrDb::Clean => f64::INFINITY,
            SnrDb::Db(v) => v,
        }
    }

    pub fn from_db(v: f64) -> Self {
        if v == f64::INFINITY {
            SnrDb::Clean
        } else {
            SnrDb::Db(v)
        }
    }

    pub fn label(self) -> String {
        match self {
            SnrDb::Clean => "clean".to_string(),
            SnrDb::Db(v) => format!("{v}"),
        }
    }
}

impl Serialize for SnrDb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SnrDb::Clean => s.serialize_str("clean"),
            SnrDb::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for SnrDb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SnrDb::from_db(v)),
            Raw::Text(t) if t == "clean" => Ok(SnrDb::Clean),
            Raw::Text(t) => t
                .parse::<f64>()
                .map(SnrDb::from_db)
                .map_err(|_| serde::de::Error::custom(format!("bad snr_db {t:?}"))),
        }
    }
}

/// Hardware signature knobs of one simulated transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: usize,
    pub rise_time_s: f64,
    pub ring_freq_hz: f64,
    pub chirp_rate_hz_per_s: f64,
    pub overshoot: f64,
    pub iq_gain_imbalance: f64,
    pub iq_phase_imbalance_rad: f64,
    pub jitter_std: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rise_time_s", self.rise_time_s),
            ("ring_freq_hz", self.ring_freq_hz),
            ("chirp_rate_hz_per_s", self.chirp_rate_hz_per_s),
            ("overshoot", self.overshoot),
            ("iq_gain_imbalance", self.iq_gain_imbalance),
            ("iq_phase_imbalance_rad", self.iq_phase_imbalance_rad),
            ("jitter_std", self.jitter_std),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidProfile(format!("{name} is not finite ({v})")));
        }
        if self.device_id >= NUM_DEVICES {
            return Err(Error::InvalidProfile(format!("device_id {} outside [0, 8]", self.device_id)));
        }
        if self.rise_time_s <= 0.0 {
            return Err(Error::InvalidProfile("rise_time_s must be positive".into()));
        }
        if self.overshoot < 0.0 || self.jitter_std < 0.0 {
            return Err(Error::InvalidProfile("overshoot and jitter_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Turn-on amplitude envelope at `t` seconds after onset.
    pub fn envelope(&self, t: f64) -> f64 {
        envelope(t, self.rise_time_s, self.overshoot, self.ring_freq_hz)
    }
}

fn envelope(t: f64, rise: f64, overshoot: f64, ring_hz: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let rise_part = 1.0 - (-t / rise).exp();
    let ring = 1.0 + overshoot * (-t / (3.0 * rise)).exp() * (2.0 * PI * ring_hz * t).cos();
    rise_part * ring
}

/// The nine-device fleet used by default. Devices are deliberately similar
/// (same family) but each has its own rise, ring and chirp signature.
pub fn default_fleet() -> Vec<DeviceProfile> {
    let rise_us = [0.8, 1.1, 1.5, 1.9, 2.4, 1.0, 1.7, 2.8, 3.4];
    let ring_khz = [180.0, 260.0, 140.0, 320.0, 220.0, 400.0, 90.0, 280.0, 160.0];
    let overshoot = [0.25, 0.10, 0.35, 0.20, 0.05, 0.30, 0.15, 0.40, 0.22];
    let chirp = [1.0e9, -1.5e9, 2.0e9, 0.5e9, -2.5e9, 3.0e9, -0.8e9, 1.8e9, -3.2e9];
    let gain = [0.02, -0.03, 0.05, 0.00, -0.04, 0.03, 0.06, -0.01, 0.04];
    let phase = [0.03, 0.05, -0.02, 0.06, 0.01, -0.04, 0.02, 0.07, -0.05];
    (0..NUM_DEVICES)
        .map(|i| DeviceProfile {
            device_id: i,
            rise_time_s: rise_us[i] * 1e-6,
            ring_freq_hz: ring_khz[i] * 1e3,
            chirp_rate_hz_per_s: chirp[i],
            overshoot: overshoot[i],
            iq_gain_imbalance: gain[i],
            iq_phase_imbalance_rad: phase[i],
            jitter_std: 0.04,
        })
        .collect()
}

/// One captured (or simulated) transmission burst.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstRecord {
    pub signal: IqSequence,
    pub device_id: usize,
    pub burst_index: usize,
    pub snr_db: SnrDb,
}

impl BurstRecord {
    pub fn new(signal: IqSequence, device_id: usize, burst_index: usize, snr_db: SnrDb) -> Result<Self> {
        if device_id >= NUM_DEVICES {
            return Err(Error::Label(format!("device_id {device_id} outside [0, 8]")));
        }
        Ok(Self { signal, device_id, burst_index, snr_db })
    }
}

/// Simulates one turn-on burst of `profile`.
///
/// The burst is silent until a jittered onset (between 1/8 and 1/4 of the
/// duration), then follows the device envelope on a quadratic-phase carrier
/// with IQ imbalance. Per-burst jitter perturbs rise time, ring frequency and
/// overshoot multiplicatively with relative std `jitter_std`, and draws a
/// random carrier phase. Output is a pure function of the arguments.
pub fn synthesize_emission(
    profile: &DeviceProfile,
    duration_s: f64,
    sample_rate_hz: f64,
    burst_index: usize,
    seed: u64,
) -> Result<BurstRecord> {
    profile.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return param_err("duration_s must be positive");
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return param_err("sample rate must be positive");
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    if n < 64 {
        return param_err(format!("burst of {n} samples is shorter than 64"));
    }

    let mut rng = rng::substream(seed, Domain::Burst, &[profile.device_id as u64, burst_index as u64]);
    let mut jitter = |scale: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        (1.0 + scale * z).max(0.05)
    };
    let rise = profile.rise_time_s * jitter(profile.jitter_std);
    let ring_hz = profile.ring_freq_hz * jitter(profile.jitter_std);
    let overshoot = profile.overshoot * jitter(profile.jitter_std);
    let onset = rng.random_range(n / 8..=n / 4);
    let phase0 = rng.random_range(0.0..2.0 * PI);

    let ts = 1.0 / sample_rate_hz;
    let gain = 1.0 + profile.iq_gain_imbalance;
    let phi = profile.iq_phase_imbalance_rad;
    let samples = (0..n)
        .map(|i| {
            if i < onset {
                return Complex64::new(0.0, 0.0);
            }
            let t = (i - onset) as f64 * ts;
            let a = envelope(t, rise, overshoot, ring_hz);
            let theta = phase0 + PI * profile.chirp_rate_hz_per_s * t * t;
            Complex64::new(gain * a * theta.cos(), a * (theta + phi).sin())
        })
        .collect();
    BurstRecord::new(IqSequence::new(samples, sample_rate_hz)?, profile.device_id, burst_index, SnrDb::Clean)
}

/// Scales a burst to unit RMS; sample phases are untouched.
pub fn rms_normalize(burst: &BurstRecord) -> Result<BurstRecord> {
    let rms = burst.signal.rms();
    if !(rms > 0.0) {
        return Err(Error::DegenerateSignal(format!(
            "burst {} of device {} has zero RMS",
            burst.burst_index, burst.device_id
        )));
    }
    let samples = burst.signal.samples().iter().map(|s| s / rms).collect();
    Ok(BurstRecord {
        signal: IqSequence::new(samples, burst.signal.sample_rate_hz())?,
        ..burst.clone()
    })
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the measured
/// signal power. `f64::INFINITY` returns the input unchanged.
pub fn add_awgn(signal: &IqSequence, snr_db: f64, seed: u64) -> Result<IqSequence> {
    let mut rng = rng::substream(seed, Domain::Noise, &[]);
    add_awgn_with(signal, snr_db, &mut rng)
}

pub(crate) fn add_awgn_with<R: Rng + ?Sized>(signal: &IqSequence, snr_db: f64, rng: &mut R) -> Result<IqSequence> {
    if snr_db.is_nan() {
        return param_err("snr_db is NaN");
    }
    let power = signal.power();
    if !(power > 0.0) {
        return Err(Error::DegenerateSignal("cannot set SNR relative to a zero-power signal".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let noise_power = power / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, (noise_power / 2.0).sqrt())
        .map_err(|e| Error::Parameter(format!("noise distribution: {e}")))?;
    let samples = signal
        .samples()
        .iter()
        .map(|s| s + Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect();
    IqSequence::new(samples, signal.sample_rate_hz())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    sample_rate_hz: f64,
    device_id: usize,
    burst_index: usize,
    snr_db: SnrDb,
}

/// Writes `<stem>.iq` (little-endian f32 I,Q pairs) and `<stem>.json`.
pub fn write_iq(dir: &Path, stem: &str, burst: &BurstRecord) -> Result<()> {
    let iq_path = dir.join(format!("{stem}.iq"));
    let file = fs::File::create(&iq_path).map_err(|e| Error::io(&iq_path, e))?;
    let mut w = BufWriter::new(file);
    for s in burst.signal.samples() {
        w.write_all(&(s.re as f32).to_le_bytes()).map_err(|e| Error::io(&iq_path, e))?;
        w.write_all(&(s.im as f32).to_le_bytes()).map_err(|e| Error::io(&iq_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&iq_path, e))?;

    let meta = Sidecar {
        sample_rate_hz: burst.signal.sample_rate_hz(),
        device_id: burst.device_id,
        burst_index: burst.burst_index,
        snr_db: burst.snr_db,
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

pub fn read_iq(dir: &Path, stem: &str) -> Result<BurstRecord> {
    let json_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    let iq_path = dir.join(format!("{stem}.iq"));
    let bytes = fs::read(&iq_path).map_err(|e| Error::io(&iq_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of f32 IQ pairs", iq_path.display())));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    BurstRecord::new(IqSequence::new(samples, meta.sample_rate_hz)?, meta.device_id, meta.burst_index, meta.snr_db)
}
