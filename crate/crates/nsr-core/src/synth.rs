//! Synthetic single-beat ECG generator.
//!
//! Emits heartbeats in the same shape as the MIT-BIH derived CSV corpus:
//! 187 samples in [0, 1], variable beat length with a zero-padded tail, and
//! one of five AAMI classes (N, S, V, F, Q). Each beat is a sum of Gaussian
//! waves (P, QRS, T) whose positions, widths and amplitudes are drawn from
//! class-conditional distributions with deliberate overlap, plus additive
//! noise, so classifiers top out well short of 100% clean accuracy.

use crate::data::{HeartbeatSet, CLASS_COUNT, SIGNAL_LEN};
use crate::error::{NsrError, Result};
use crate::rng::RandStream;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Additive Gaussian noise level (std, pre-normalization).
    pub noise: f64,
    /// Fraction of beats drawn from a confusable neighbor's morphology
    /// while keeping the nominal label; sets the accuracy ceiling.
    pub confusion: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { per_class: 1000, seed: 20_240, noise: 0.025, confusion: 0.05 }
    }
}

/// Morphology template: (position-fraction, width-fraction, amplitude)
/// triples for the waves making up a beat.
struct Morph {
    waves: Vec<(f64, f64, f64)>,
    /// Beat length range in samples before zero padding.
    len_lo: usize,
    len_hi: usize,
    /// Post-normalization resting level of the active region (ST/baseline
    /// offset); spreads class evidence over many samples.
    floor: f64,
}

fn morphology(class: usize) -> Morph {
    match class {
        // N: distinct P wave, narrow tall R, broad upright T, long interval
        0 => Morph {
            waves: vec![(0.12, 0.04, 0.35), (0.32, 0.022, 1.0), (0.62, 0.09, 0.45)],
            len_lo: 158,
            len_hi: 186,
            floor: 0.30,
        },
        // S: premature atrial — no P wave, short interval (long zero tail)
        1 => Morph {
            waves: vec![(0.30, 0.020, 1.0), (0.60, 0.05, 0.20)],
            len_lo: 90,
            len_hi: 112,
            floor: 0.22,
        },
        // V: wide slurred QRS, no P, deep discordant T
        2 => Morph {
            waves: vec![(0.34, 0.09, 1.0), (0.68, 0.09, -0.55)],
            len_lo: 132,
            len_hi: 172,
            floor: 0.56,
        },
        // F: fusion of N and V — intermediate QRS width, weak P, flat T
        3 => Morph {
            waves: vec![(0.12, 0.04, 0.15), (0.33, 0.05, 1.0), (0.64, 0.07, -0.10)],
            len_lo: 118,
            len_hi: 145,
            floor: 0.38,
        },
        // Q: paced/unclassifiable — pacing spike then broad slurred complex
        4 => Morph {
            waves: vec![(0.16, 0.012, 0.8), (0.40, 0.11, 0.95), (0.74, 0.10, 0.30)],
            len_lo: 95,
            len_hi: 186,
            floor: 0.02,
        },
        _ => unreachable!("class out of range"),
    }
}

/// Neighbor whose morphology gets substituted for confusable beats.
fn confusable_with(class: usize) -> usize {
    match class {
        0 => 1, // N <-> S differ mainly in P wave and interval
        1 => 0,
        2 => 3, // V <-> F share wide complexes
        3 => 2,
        4 => 3,
        _ => unreachable!(),
    }
}

fn std_normal(rng: &mut RandStream) -> f64 {
    rng.normal(0.0, 1.0).expect("unit normal parameters are valid")
}

fn gaussian(t: f64, center: f64, width: f64) -> f64 {
    let d = (t - center) / width;
    (-0.5 * d * d).exp()
}

fn render_beat(class: usize, rng: &mut RandStream, noise: f64) -> Vec<f64> {
    let m = morphology(class);
    let len = m.len_lo + rng.index(m.len_hi - m.len_lo + 1);
    let mut sig = vec![0.0; SIGNAL_LEN];
    // per-beat jitter shared across waves (heart-rate / electrode gain)
    let stretch = 1.0 + 0.08 * std_normal(rng);
    let gain = 1.0 + 0.12 * std_normal(rng);
    let mut waves = Vec::with_capacity(m.waves.len());
    for &(pos, width, amp) in &m.waves {
        let p = (pos * stretch + 0.015 * std_normal(rng)).clamp(0.02, 0.95);
        let w = (width * (1.0 + 0.15 * std_normal(rng))).max(0.004);
        let a = amp * gain * (1.0 + 0.10 * std_normal(rng));
        waves.push((p, w, a));
    }
    let baseline = 0.05 * std_normal(rng);
    for (i, s) in sig.iter_mut().enumerate().take(len) {
        let t = i as f64 / len as f64;
        let mut v = baseline * (std::f64::consts::TAU * t).sin();
        for &(p, w, a) in &waves {
            v += a * gaussian(t, p, w);
        }
        *s = v + noise * std_normal(rng);
    }
    // per-beat min-max normalization to [0, 1] over the active region,
    // matching the published corpus convention; the tail stays zero
    let lo = sig[..len].iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sig[..len].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let floor = (m.floor + 0.015 * std_normal(rng)).clamp(0.0, 0.65);
    for s in sig.iter_mut().take(len) {
        *s = floor + (1.0 - floor) * (*s - lo) / span;
    }
    sig
}

pub fn generate(cfg: &SynthConfig) -> Result<HeartbeatSet> {
    if cfg.per_class == 0 {
        return Err(NsrError::Argument("per_class must be >= 1".into()));
    }
    if !(0.0..=0.5).contains(&cfg.confusion) {
        return Err(NsrError::Argument(format!(
            "confusion fraction must be in [0, 0.5], got {}",
            cfg.confusion
        )));
    }
    if !(0.0..=0.3).contains(&cfg.noise) {
        return Err(NsrError::Argument(format!("noise must be in [0, 0.3], got {}", cfg.noise)));
    }
    let mut rows = Vec::with_capacity(cfg.per_class * CLASS_COUNT);
    for class in 0..CLASS_COUNT {
        let mut rng = RandStream::new(cfg.seed, 0x57_000 + class as u64);
        for _ in 0..cfg.per_class {
            let source = if rng.next_f64() < cfg.confusion { confusable_with(class) } else { class };
            rows.push((render_beat(source, &mut rng, cfg.noise), class));
        }
    }
    HeartbeatSet::from_rows(rows, format!("synth(seed={},n={})", cfg.seed, cfg.per_class))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig { per_class: 10, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.digest, b.digest);
    }

    #[test]
    fn output_matches_corpus_conventions() {
        let cfg = SynthConfig { per_class: 20, ..SynthConfig::default() };
        let set = generate(&cfg).unwrap();
        assert_eq!(set.len(), 100);
        assert_eq!(set.class_counts(), [20; 5]);
        for i in 0..set.len() {
            let row = set.row(i);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)), "row {i} out of range");
            // zero-padded tail after a variable-length beat
            assert_eq!(row[SIGNAL_LEN - 1], 0.0);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((hi - 1.0).abs() < 1e-12, "row {i} not normalized");
        }
    }

    #[test]
    fn classes_are_morphologically_distinct() {
        // class mean waveforms should differ pairwise well above noise level
        let cfg = SynthConfig { per_class: 50, confusion: 0.0, ..SynthConfig::default() };
        let set = generate(&cfg).unwrap();
        let mut means = vec![vec![0.0; SIGNAL_LEN]; CLASS_COUNT];
        let counts = set.class_counts();
        for i in 0..set.len() {
            let y = set.labels[i];
            for (m, v) in means[y].iter_mut().zip(set.row(i)) {
                *m += v / counts[y] as f64;
            }
        }
        for a in 0..CLASS_COUNT {
            for b in (a + 1)..CLASS_COUNT {
                let d2: f64 =
                    means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(d2.sqrt() > 0.5, "classes {a} and {b} too close: {}", d2.sqrt());
            }
        }
    }

    #[test]
    fn seed_changes_content() {
        let a = generate(&SynthConfig { per_class: 10, seed: 1, ..SynthConfig::default() }).unwrap();
        let b = generate(&SynthConfig { per_class: 10, seed: 2, ..SynthConfig::default() }).unwrap();
        assert_ne!(a.digest, b.digest);
    }
}
