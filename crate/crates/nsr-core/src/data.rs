//! MIT-BIH heartbeat CSV ingestion, deterministic splitting, class
//! re-balancing by up-sampling, and batch iteration.
//!
//! The input format is the public Kaggle heartbeat CSV: UTF-8, no header,
//! 188 comma-separated numeric columns per row — 187 signal values in [0, 1]
//! followed by an integer-valued class label in {0..4}.

use crate::error::{NsrError, Result};
use crate::rng::RandStream;
use crate::tensor::{Dtype, Tensor};
use std::io::Write;
use std::path::Path;

pub const SIGNAL_LEN: usize = 187;
pub const CLASS_COUNT: usize = 5;
pub const CLASS_NAMES: [&str; CLASS_COUNT] = ["N", "S", "V", "F", "Q"];
/// Range violations up to this size are clamped (CSV round-off), larger ones rejected.
const RANGE_SLOP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct HeartbeatSet {
    /// `[N, 187]` signal matrix, values in [0, 1].
    pub signals: Tensor,
    pub labels: Vec<usize>,
    /// CRC32 digest of the canonical byte content; equal digests mean equal sets.
    pub digest: u32,
    pub provenance: String,
}

impl HeartbeatSet {
    pub fn from_rows(rows: Vec<(Vec<f64>, usize)>, provenance: impl Into<String>) -> Result<HeartbeatSet> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * SIGNAL_LEN);
        let mut labels = Vec::with_capacity(n);
        for (sig, label) in rows {
            if sig.len() != SIGNAL_LEN {
                return Err(NsrError::Argument(format!(
                    "signal length {} != {SIGNAL_LEN}",
                    sig.len()
                )));
            }
            if label >= CLASS_COUNT {
                return Err(NsrError::Argument(format!("label {label} out of range")));
            }
            data.extend_from_slice(&sig);
            labels.push(label);
        }
        let signals = Tensor::new(vec![n, SIGNAL_LEN], data, Dtype::F32)?;
        let digest = digest_of(&signals, &labels);
        Ok(HeartbeatSet { signals, labels, digest, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        let mut counts = [0; CLASS_COUNT];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.signals.row(i)
    }

    /// Materialize a subset by index list (duplicates allowed).
    pub fn subset(&self, idx: &[usize], provenance: impl Into<String>) -> Result<HeartbeatSet> {
        let rows = idx
            .iter()
            .map(|&i| (self.row(i).to_vec(), self.labels[i]))
            .collect();
        HeartbeatSet::from_rows(rows, provenance)
    }

    /// First `per_class` samples of each class, in class order (the SPSA
    /// evaluation protocol).
    pub fn first_per_class(&self, per_class: usize) -> Result<HeartbeatSet> {
        let mut idx = Vec::new();
        for c in 0..CLASS_COUNT {
            let mut taken = 0;
            for (i, &y) in self.labels.iter().enumerate() {
                if y == c {
                    idx.push(i);
                    taken += 1;
                    if taken == per_class {
                        break;
                    }
                }
            }
        }
        self.subset(&idx, format!("{}#first{per_class}", self.provenance))
    }
}

fn digest_of(signals: &Tensor, labels: &[usize]) -> u32 {
    let mut bytes = Vec::with_capacity(signals.len() * 8 + labels.len());
    for v in signals.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &y in labels {
        bytes.push(y as u8);
    }
    crate::nn::io_crc32(&bytes)
}

/// Outcome of an ingestion: the accepted rows plus per-row rejections.
#[derive(Debug)]
pub struct LoadOutcome {
    pub set: HeartbeatSet,
    /// 1-based row numbers with reasons, in file order.
    pub rejected: Vec<(usize, String)>,
}

impl LoadOutcome {
    /// Ingestion error listing the first 10 offending rows, if any.
    pub fn rejection_error(&self) -> Option<NsrError> {
        if self.rejected.is_empty() {
            return None;
        }
        let listed: Vec<String> = self
            .rejected
            .iter()
            .take(10)
            .map(|(row, why)| format!("row {row}: {why}"))
            .collect();
        Some(NsrError::Ingestion(format!(
            "{} rows rejected; first {}: {}",
            self.rejected.len(),
            listed.len(),
            listed.join("; ")
        )))
    }

    /// Error out unless every row was accepted.
    pub fn strict(self) -> Result<HeartbeatSet> {
        match self.rejection_error() {
            Some(e) => Err(e),
            None => Ok(self.set),
        }
    }
}

pub fn load_heartbeat_csv(path: impl AsRef<Path>) -> Result<LoadOutcome> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| NsrError::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let rownum = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != SIGNAL_LEN + 1 {
            rejected.push((rownum, format!("{} columns, expected {}", fields.len(), SIGNAL_LEN + 1)));
            continue;
        }
        let mut sig = Vec::with_capacity(SIGNAL_LEN);
        let mut bad: Option<String> = None;
        for f in &fields[..SIGNAL_LEN] {
            match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if (-RANGE_SLOP..=1.0 + RANGE_SLOP).contains(&v) {
                        sig.push(v.clamp(0.0, 1.0));
                    } else {
                        bad = Some(format!("value {v} outside [0,1]"));
                        break;
                    }
                }
                _ => {
                    bad = Some(format!("unparsable numeric {f:?}"));
                    break;
                }
            }
        }
        if let Some(why) = bad {
            rejected.push((rownum, why));
            continue;
        }
        let label = match fields[SIGNAL_LEN].trim().parse::<f64>() {
            Ok(v) if v.is_finite() && v.fract() == 0.0 && (0.0..CLASS_COUNT as f64).contains(&v) => {
                v as usize
            }
            _ => {
                rejected.push((rownum, format!("label {:?} not in 0..{}", fields[SIGNAL_LEN], CLASS_COUNT)));
                continue;
            }
        };
        rows.push((sig, label));
    }
    let set = HeartbeatSet::from_rows(rows, path.display().to_string())?;
    Ok(LoadOutcome { set, rejected })
}

pub fn write_heartbeat_csv(set: &HeartbeatSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| NsrError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..set.len() {
        let mut line = String::with_capacity(SIGNAL_LEN * 10);
        for v in set.row(i) {
            line.push_str(&format!("{v}"));
            line.push(',');
        }
        line.push_str(&format!("{}", set.labels[i]));
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| NsrError::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| NsrError::io(path.display().to_string(), e))
}

/// Deterministic shuffled split; train gets `round(n * fraction)` rows.
pub fn split_train_val(
    set: &HeartbeatSet,
    fraction: f64,
    seed: u64,
) -> Result<(HeartbeatSet, HeartbeatSet)> {
    if set.is_empty() {
        return Err(NsrError::Argument("cannot split an empty set".into()));
    }
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(NsrError::Argument(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let n = set.len();
    let mut rng = RandStream::new(seed, 0x51);
    let perm = rng.permutation(n);
    let train_n = (n as f64 * fraction).round() as usize;
    let train = set.subset(&perm[..train_n], format!("{}#train", set.provenance))?;
    let val = set.subset(&perm[train_n..], format!("{}#val", set.provenance))?;
    Ok((train, val))
}

/// Resample every class with replacement up to the size of the largest
/// class; every output row is an exact copy of an input row.
pub fn upsample_balance(set: &HeartbeatSet, seed: u64) -> Result<HeartbeatSet> {
    let counts = set.class_counts();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(NsrError::Argument(format!(
                "class {} ({}) absent from input set",
                c, CLASS_NAMES[c]
            )));
        }
    }
    let target = *counts.iter().max().unwrap();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASS_COUNT];
    for (i, &y) in set.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = RandStream::new(seed, 0x0b);
    let mut idx = Vec::with_capacity(target * CLASS_COUNT);
    for members in &by_class {
        idx.extend_from_slice(members);
        for _ in members.len()..target {
            idx.push(members[rng.index(members.len())]);
        }
    }
    set.subset(&idx, format!("{}#balanced", set.provenance))
}

/// Epoch-seeded shuffled mini-batches; the final short batch is included.
pub fn batch_iter(
    set: &HeartbeatSet,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Tensor, Vec<usize>)>> {
    if batch_size == 0 {
        return Err(NsrError::Argument("batch size must be >= 1".into()));
    }
    let n = set.len();
    let mut rng = RandStream::new(seed, 0xE0).child(epoch as u64);
    let perm = rng.permutation(n);
    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in perm.chunks(batch_size) {
        let mut data = Vec::with_capacity(chunk.len() * SIGNAL_LEN);
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            data.extend_from_slice(set.row(i));
            labels.push(set.labels[i]);
        }
        batches.push((Tensor::new(vec![chunk.len(), SIGNAL_LEN], data, set.signals.dtype())?, labels));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tiny_set(labels: &[usize]) -> HeartbeatSet {
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let mut sig = vec![0.0; SIGNAL_LEN];
                sig[0] = (i as f64 + 1.0) / 100.0;
                (sig, y)
            })
            .collect();
        HeartbeatSet::from_rows(rows, "tiny").unwrap()
    }

    fn csv_line(first: f64, label: &str) -> String {
        let mut cols = vec![format!("{first}")];
        cols.extend(std::iter::repeat_n("0.0".to_string(), SIGNAL_LEN - 1));
        cols.push(label.to_string());
        cols.join(",")
    }

    #[test]
    fn bad_label_rejected_with_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.csv");
        std::fs::write(&p, format!("{}\n{}\n", csv_line(0.5, "2.0"), csv_line(0.5, "7"))).unwrap();
        let out = load_heartbeat_csv(&p).unwrap();
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.set.labels, vec![2]);
        let err = out.rejection_error().unwrap().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn ingestion_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.csv");
        std::fs::write(&p, format!("{}\n{}\n", csv_line(0.25, "0"), csv_line(0.75, "4"))).unwrap();
        let a = load_heartbeat_csv(&p).unwrap().strict().unwrap();
        let b = load_heartbeat_csv(&p).unwrap().strict().unwrap();
        assert_eq!(a.digest, b.digest);
    }

    #[test]
    fn tiny_range_violation_clamped_large_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("range.csv");
        std::fs::write(
            &p,
            format!("{}\n{}\n", csv_line(1.0000000001, "0"), csv_line(1.5, "0")),
        )
        .unwrap();
        let out = load_heartbeat_csv(&p).unwrap();
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.set.row(0)[0], 1.0);
        assert_eq!(out.rejected.len(), 1);
    }

    #[test]
    fn split_sizes_match_published_counts() {
        // 87554 at 0.8 -> 70043 / 17511 by round()
        let n = 87_554usize;
        let train_n = (n as f64 * 0.8).round() as usize;
        assert_eq!(train_n, 70_043);
        assert_eq!(n - train_n, 17_511);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let set = tiny_set(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let (t1, v1) = split_train_val(&set, 0.5, 7).unwrap();
        let (t2, v2) = split_train_val(&set, 0.5, 7).unwrap();
        assert_eq!(t1.digest, t2.digest);
        assert_eq!(v1.digest, v2.digest);
        assert_eq!(t1.len(), 5);
        assert_eq!(v1.len(), 5);
        // union equals input multiset: compare sorted first-column markers
        let mut marks: Vec<i64> = t1
            .labels
            .iter()
            .enumerate()
            .map(|(i, _)| (t1.row(i)[0] * 100.0).round() as i64)
            .chain(v1.labels.iter().enumerate().map(|(i, _)| (v1.row(i)[0] * 100.0).round() as i64))
            .collect();
        marks.sort_unstable();
        assert_eq!(marks, (1..=10).collect::<Vec<i64>>());
    }

    #[test]
    fn upsample_equalizes_counts_with_copies_only() {
        let mut labels = vec![0; 20];
        labels.extend(vec![1; 3]);
        labels.extend(vec![2; 5]);
        labels.extend(vec![3; 1]);
        labels.extend(vec![4; 7]);
        let set = tiny_set(&labels);
        let bal = upsample_balance(&set, 3).unwrap();
        assert_eq!(bal.class_counts(), [20; 5]);
        // every row is an exact copy of an input row
        let originals: BTreeMap<i64, usize> = (0..set.len())
            .map(|i| ((set.row(i)[0] * 1e6).round() as i64, set.labels[i]))
            .collect();
        for i in 0..bal.len() {
            let key = (bal.row(i)[0] * 1e6).round() as i64;
            assert_eq!(originals.get(&key), Some(&bal.labels[i]));
        }
    }

    #[test]
    fn upsample_missing_class_names_it() {
        let set = tiny_set(&[0, 1, 2, 4]);
        let err = upsample_balance(&set, 1).unwrap_err().to_string();
        assert!(err.contains('F'), "{err}");
    }

    #[test]
    fn batches_cover_set_with_remainder() {
        let set = tiny_set(&[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let batches = batch_iter(&set, 4, 11, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|(_, l)| l.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let b2 = batch_iter(&set, 4, 11, 0).unwrap();
        for ((x1, l1), (x2, l2)) in batches.iter().zip(&b2) {
            assert_eq!(x1.data(), x2.data());
            assert_eq!(l1, l2);
        }
        let other_epoch = batch_iter(&set, 4, 11, 1).unwrap();
        assert_ne!(
            batches.iter().flat_map(|(_, l)| l.clone()).collect::<Vec<_>>(),
            other_epoch.iter().flat_map(|(_, l)| l.clone()).collect::<Vec<_>>()
        );
    }
}
