//! Synthetic JADCE instances and the complex-to-real lifting.
//!
//! A received preamble block is `Y = S X + Z` with `X = diag(a) H`. The
//! lifted system stacks real and imaginary parts:
//!
//! ```text
//! S~ = [[Re S, -Im S], [Im S, Re S]],   X~ = [Re X; Im X],   Y~ = [Re Y; Im Y]
//! ```

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::StackedBatch;
use crate::container::{self, ArrayData, ArrayEntry};
use crate::linalg;
use crate::operators;
use crate::rng::{self, derive_seed};
use crate::{CMat, Complex64, Error, RMat, Result};

const SEED_PREAMBLE: u64 = 1;
const SEED_SIGNAL: u64 = 2;
const SEED_NOISE: u64 = 3;
const SEED_SURGERY: u64 = 4;
const SEED_SAMPLE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreambleKind {
    Gaussian,
    Binary,
    ZadoffChu,
    Custom,
}

impl std::str::FromStr for PreambleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "binary" => Ok(Self::Binary),
            "zadoff_chu" | "zc" => Ok(Self::ZadoffChu),
            "custom" => Ok(Self::Custom),
            other => Err(Error::invalid(format!("unsupported preamble kind '{other}'"))),
        }
    }
}

/// Column-normalized `L x N` preamble signature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PreambleMatrix {
    entries: CMat,
    kind: PreambleKind,
}

impl PreambleMatrix {
    /// Wraps `entries`, checking unit column norms to `1e-9`.
    pub fn new(entries: CMat, kind: PreambleKind) -> Result<Self> {
        linalg::check_unit_columns(&entries, 1e-9)?;
        Ok(Self { entries, kind })
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn kind(&self) -> PreambleKind {
        self.kind
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of devices `N`.
    pub fn devices(&self) -> usize {
        self.entries.ncols()
    }

    /// Lifted real matrix `S~` of shape `2L x 2N`.
    pub fn lifted(&self) -> RMat {
        lift_matrix(&self.entries)
    }
}

/// Draws a column-normalized preamble.
///
/// * `Gaussian`: i.i.d. CN(0, 1) entries, then column normalization.
/// * `Binary`: real `±1/√L` entries.
/// * `ZadoffChu`: cyclic shifts of root sequences of the smallest prime
///   length `>= l`, enumerated as `(root, shift)` pairs and truncated to `l`.
pub fn gen_preamble(kind: PreambleKind, l: usize, n: usize, seed: u64) -> Result<PreambleMatrix> {
    if l < 2 || n < 2 {
        return Err(Error::invalid(format!("preamble needs l >= 2 and n >= 2, got {l}x{n}")));
    }
    let mut rng = rng::stream(seed);
    let entries = match kind {
        PreambleKind::Gaussian => {
            let mut s = rng::complex_normal_matrix(&mut rng, l, n);
            linalg::normalize_columns(&mut s);
            s
        }
        PreambleKind::Binary => {
            let amp = 1.0 / (l as f64).sqrt();
            let mut s = CMat::zeros(l, n);
            for r in 0..l {
                for c in 0..n {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s[(r, c)] = Complex64::new(sign * amp, 0.0);
                }
            }
            s
        }
        PreambleKind::ZadoffChu => zadoff_chu_matrix(l, n)?,
        PreambleKind::Custom => {
            return Err(Error::invalid("custom preambles are supplied, not generated"));
        }
    };
    PreambleMatrix::new(entries, kind)
}

/// Gaussian preamble with its spectrum replaced so the pre-normalization
/// condition number is `kappa`.
pub fn gen_ill_conditioned(l: usize, n: usize, kappa: f64, seed: u64) -> Result<PreambleMatrix> {
    let mut rng = rng::stream(derive_seed(seed, SEED_SURGERY, 0));
    let a = rng::complex_normal_matrix(&mut rng, l, n);
    let s = operators::set_condition_number(&a, kappa)?;
    PreambleMatrix::new(s, PreambleKind::Custom)
}

fn is_prime(p: usize) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest prime `>= l`.
pub fn zc_base_length(l: usize) -> usize {
    (l.max(2)..).find(|&p| is_prime(p)).expect("primes are unbounded")
}

fn zadoff_chu_matrix(l: usize, n: usize) -> Result<CMat> {
    let nzc = zc_base_length(l);
    let roots: Vec<usize> = (1..nzc).filter(|&u| gcd(u, nzc) == 1).collect();
    let available = roots.len() * nzc;
    if n > available {
        return Err(Error::ZadoffChuBudget {
            requested: n,
            available,
            base_len: nzc,
        });
    }
    let mut s = CMat::zeros(l, n);
    for c in 0..n {
        let u = roots[c / nzc] as f64;
        let shift = c % nzc;
        for k in 0..l {
            let idx = ((k + shift) % nzc) as f64;
            let phase = -std::f64::consts::PI * u * idx * (idx + 1.0) / nzc as f64;
            s[(k, c)] = Complex64::from_polar(1.0, phase);
        }
    }
    linalg::normalize_columns(&mut s);
    Ok(s)
}

/// Row-sparse channel matrix `X = diag(a) H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSparseSignal {
    pub entries: CMat,
    pub activity: Vec<bool>,
    pub channel: CMat,
}

impl GroupSparseSignal {
    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|a| **a).count()
    }
}

pub fn gen_signal(n: usize, m: usize, activity_prob: f64, seed: u64) -> Result<GroupSparseSignal> {
    if !(0.0..=1.0).contains(&activity_prob) {
        return Err(Error::invalid(format!("activity probability {activity_prob} not in [0, 1]")));
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid("signal dimensions must be positive"));
    }
    let mut rng = rng::stream(seed);
    let activity: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < activity_prob).collect();
    let channel = rng::complex_normal_matrix(&mut rng, n, m);
    let mut entries = channel.clone();
    for (i, active) in activity.iter().enumerate() {
        if !active {
            entries.row_mut(i).fill(Complex64::new(0.0, 0.0));
        }
    }
    Ok(GroupSparseSignal {
        entries,
        activity,
        channel,
    })
}

/// Target SNR in dB; `None` means noiseless.
pub type SnrDb = Option<f64>;

/// Noise scaled so that `‖clean‖²_F / ‖Z‖²_F` equals the target exactly for
/// this draw.
pub fn gen_noise_for_snr(clean: &CMat, snr_db: SnrDb, seed: u64) -> Result<CMat> {
    let Some(snr) = snr_db else {
        return Ok(CMat::zeros(clean.nrows(), clean.ncols()));
    };
    let power = clean.norm_squared();
    if power == 0.0 {
        return Err(Error::invalid("cannot calibrate noise against an all-zero signal"));
    }
    noise_with_power(clean.nrows(), clean.ncols(), power / db_to_ratio(snr), seed)
}

fn noise_with_power(rows: usize, cols: usize, target_power: f64, seed: u64) -> Result<CMat> {
    if !target_power.is_finite() || target_power < 0.0 {
        return Err(Error::invalid(format!("invalid noise power {target_power}")));
    }
    let mut rng = rng::stream(seed);
    let mut z = rng::complex_normal_matrix(&mut rng, rows, cols);
    let drawn = z.norm_squared();
    if target_power == 0.0 || drawn == 0.0 {
        return Ok(CMat::zeros(rows, cols));
    }
    z *= Complex64::new((target_power / drawn).sqrt(), 0.0);
    Ok(z)
}

pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `S·X`, touching only the rows of active devices.
fn sparse_product(s: &CMat, signal: &GroupSparseSignal) -> CMat {
    let mut out = CMat::zeros(s.nrows(), signal.entries.ncols());
    for (i, _) in signal.activity.iter().enumerate().filter(|(_, a)| **a) {
        out.ger(Complex64::new(1.0, 0.0), &s.column(i), &signal.entries.row(i).transpose(), Complex64::new(1.0, 0.0));
    }
    out
}

/// One received preamble block with its ground truth.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub preamble: PreambleMatrix,
    pub signal: GroupSparseSignal,
    pub noise: CMat,
    pub observation: CMat,
    pub snr_db: SnrDb,
    pub seed: u64,
}

/// Per-sample draw; shared by [`ProblemInstance::generate`] and datasets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub signal: GroupSparseSignal,
    pub noise: CMat,
    pub observation: CMat,
    pub seed: u64,
}

/// Draws signal and noise for a fixed preamble.
///
/// When the clean signal is identically zero (no active device) the noise
/// falls back to the power expected over the activity distribution,
/// `p · M · N / SNR`; this is zero when `p = 0`.
pub fn draw_sample(
    preamble: &PreambleMatrix,
    m: usize,
    activity_prob: f64,
    snr_db: SnrDb,
    seed: u64,
) -> Result<Sample> {
    let n = preamble.devices();
    let signal = gen_signal(n, m, activity_prob, derive_seed(seed, SEED_SIGNAL, 0))?;
    let clean = sparse_product(preamble.entries(), &signal);
    let noise_seed = derive_seed(seed, SEED_NOISE, 0);
    let noise = match snr_db {
        None => CMat::zeros(clean.nrows(), clean.ncols()),
        Some(_) if clean.norm_squared() > 0.0 => gen_noise_for_snr(&clean, snr_db, noise_seed)?,
        Some(snr) => {
            let expected = activity_prob * (m * n) as f64;
            noise_with_power(clean.nrows(), clean.ncols(), expected / db_to_ratio(snr), noise_seed)?
        }
    };
    let observation = clean + &noise;
    Ok(Sample {
        signal,
        noise,
        observation,
        seed,
    })
}

impl ProblemInstance {
    pub fn generate(
        preamble: &PreambleMatrix,
        m: usize,
        activity_prob: f64,
        snr_db: SnrDb,
        seed: u64,
    ) -> Result<Self> {
        let sample = draw_sample(preamble, m, activity_prob, snr_db, seed)?;
        Ok(Self::from_sample(preamble.clone(), sample, snr_db))
    }

    pub fn from_sample(preamble: PreambleMatrix, sample: Sample, snr_db: SnrDb) -> Self {
        Self {
            preamble,
            signal: sample.signal,
            noise: sample.noise,
            observation: sample.observation,
            snr_db,
            seed: sample.seed,
        }
    }
}

/// Real-valued counterpart of a [`ProblemInstance`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealLiftedSystem {
    pub s_tilde: RMat,
    pub x_tilde: RMat,
    pub y_tilde: RMat,
    pub z_tilde: RMat,
    pub n_complex: usize,
    pub l_complex: usize,
}

/// `[[Re A, -Im A], [Im A, Re A]]`.
pub fn lift_matrix(a: &CMat) -> RMat {
    let (r, c) = a.shape();
    let mut out = RMat::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i, c + j)] = -z.im;
            out[(r + i, j)] = z.im;
            out[(r + i, c + j)] = z.re;
        }
    }
    out
}

/// `[Re X; Im X]`.
pub fn lift_stack(x: &CMat) -> RMat {
    let (r, c) = x.shape();
    let mut out = RMat::zeros(2 * r, c);
    for j in 0..c {
        for i in 0..r {
            out[(i, j)] = x[(i, j)].re;
            out[(r + i, j)] = x[(i, j)].im;
        }
    }
    out
}

/// Inverse of [`lift_stack`].
pub fn unlift_stack(x: &RMat) -> Result<CMat> {
    if !x.nrows().is_multiple_of(2) {
        return Err(Error::invalid(format!("lifted matrix has odd row count {}", x.nrows())));
    }
    let r = x.nrows() / 2;
    Ok(CMat::from_fn(r, x.ncols(), |i, j| Complex64::new(x[(i, j)], x[(r + i, j)])))
}

pub fn lift_to_real(instance: &ProblemInstance) -> RealLiftedSystem {
    RealLiftedSystem {
        s_tilde: instance.preamble.lifted(),
        x_tilde: lift_stack(&instance.signal.entries),
        y_tilde: lift_stack(&instance.observation),
        z_tilde: lift_stack(&instance.noise),
        n_complex: instance.preamble.devices(),
        l_complex: instance.preamble.len(),
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    /// `null` for noiseless data.
    pub snr_db: Option<f64>,
    pub activity_prob: f64,
    pub preamble_kind: PreambleKind,
    pub condition_number: Option<f64>,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l < 2 || self.n < 2 || self.m == 0 {
            return Err(Error::invalid(format!(
                "invalid dims (L, N, M) = ({}, {}, {})",
                self.l, self.n, self.m
            )));
        }
        if self.samples == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return Err(Error::invalid("activity probability not in [0, 1]"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("snr_db must be finite (use null for noiseless)"));
            }
        }
        if let Some(k) = self.condition_number {
            if !(k >= 1.0) {
                return Err(Error::invalid("condition number must be >= 1"));
            }
        }
        Ok(())
    }

    /// Seed of the shared preamble.
    pub fn preamble_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_PREAMBLE, 0)
    }

    /// Seed of sample `i`.
    pub fn sample_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, SEED_SAMPLE, i as u64)
    }

    pub fn build_preamble(&self) -> Result<PreambleMatrix> {
        match self.condition_number {
            Some(kappa) => gen_ill_conditioned(self.l, self.n, kappa, self.preamble_seed()),
            None => gen_preamble(self.preamble_kind, self.l, self.n, self.preamble_seed()),
        }
    }
}

/// In-memory dataset: one preamble shared by all samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub preamble: PreambleMatrix,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let preamble = config.build_preamble()?;
        Self::generate_with_preamble(config, preamble)
    }

    /// Samples drawn against an externally supplied preamble.
    pub fn generate_with_preamble(config: &DatasetConfig, preamble: PreambleMatrix) -> Result<Self> {
        config.validate()?;
        if preamble.len() != config.l || preamble.devices() != config.n {
            return Err(Error::invalid("preamble shape does not match config"));
        }
        let samples = (0..config.samples)
            .map(|i| draw_sample(&preamble, config.m, config.activity_prob, config.snr_db, config.sample_seed(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            preamble,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn instance(&self, i: usize) -> ProblemInstance {
        ProblemInstance::from_sample(self.preamble.clone(), self.samples[i].clone(), self.config.snr_db)
    }

    /// All samples lifted and stacked side by side.
    pub fn stacked(&self) -> StackedBatch {
        StackedBatch::from_samples(self.config.m, self.samples.iter())
    }

    pub fn s_tilde(&self) -> RMat {
        self.preamble.lifted()
    }

    /// Writes the container into `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let (l, n, m, p) = (self.config.l, self.config.n, self.config.m, self.len());
        let mut activity = Vec::with_capacity(p * n);
        let mut channel = Vec::with_capacity(p * n * m);
        let mut signal = Vec::with_capacity(p * n * m);
        let mut noise = Vec::with_capacity(p * l * m);
        let mut observation = Vec::with_capacity(p * l * m);
        for s in &self.samples {
            activity.extend(s.signal.activity.iter().map(|a| if *a { 1.0 } else { 0.0 }));
            channel.extend(container::complex_row_major(&s.signal.channel));
            signal.extend(container::complex_row_major(&s.signal.entries));
            noise.extend(container::complex_row_major(&s.noise));
            observation.extend(container::complex_row_major(&s.observation));
        }
        let seeds: Vec<u64> = self.samples.iter().map(|s| s.seed).collect();
        let meta = serde_json::json!({
            "config": self.config,
            "preamble_kind": self.preamble.kind(),
            "preamble_seed": self.config.preamble_seed(),
            "sample_seeds": seeds,
        });
        let arrays = vec![
            ArrayData::complex("preamble", vec![l, n], container::complex_row_major(self.preamble.entries())),
            ArrayData::real("activity", vec![p, n], activity),
            ArrayData::complex("channel", vec![p, n, m], channel),
            ArrayData::complex("signal", vec![p, n, m], signal),
            ArrayData::complex("noise", vec![p, l, m], noise),
            ArrayData::complex("observation", vec![p, l, m], observation),
        ];
        container::write(dir, "dataset", meta, &arrays)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let c = container::read(dir, "dataset")?;
        let config: DatasetConfig = serde_json::from_value(c.meta["config"].clone())?;
        let kind: PreambleKind = serde_json::from_value(c.meta["preamble_kind"].clone())?;
        let seeds: Vec<u64> = serde_json::from_value(c.meta["sample_seeds"].clone())?;
        let (l, n, m) = (config.l, config.n, config.m);
        let p = seeds.len();
        let get = |name: &str, shape: &[usize]| -> Result<&ArrayEntry> { c.array(name, shape) };
        let preamble = PreambleMatrix::new(get("preamble", &[l, n])?.complex_matrix(l, n, 0), kind)?;
        let activity = get("activity", &[p, n])?;
        let channel = get("channel", &[p, n, m])?;
        let signal = get("signal", &[p, n, m])?;
        let noise = get("noise", &[p, l, m])?;
        let observation = get("observation", &[p, l, m])?;
        let samples = (0..p)
            .map(|i| Sample {
                signal: GroupSparseSignal {
                    entries: signal.complex_matrix(n, m, i),
                    activity: activity.data[i * n..(i + 1) * n].iter().map(|v| *v != 0.0).collect(),
                    channel: channel.complex_matrix(n, m, i),
                },
                noise: noise.complex_matrix(l, m, i),
                observation: observation.complex_matrix(l, m, i),
                seed: seeds[i],
            })
            .collect();
        Ok(Self {
            config,
            preamble,
            samples,
        })
    }
}

/// Generates and persists a dataset. Returns the in-memory copy and the
/// manifest path.
pub fn synth_dataset(config: &DatasetConfig, dir: &Path) -> Result<(Dataset, PathBuf)> {
    let ds = Dataset::generate(config)?;
    let manifest = ds.save(dir)?;
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use approx::assert_relative_eq;

    #[test]
    fn binary_entries() {
        let s = gen_preamble(PreambleKind::Binary, 4, 6, 99).unwrap();
        for z in s.entries().iter() {
            assert!((z.re.abs() - 0.5).abs() < 1e-15 && z.im == 0.0);
        }
        linalg::check_unit_columns(s.entries(), 1e-12).unwrap();
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gen_preamble(PreambleKind::Gaussian, 100, 200, 5).unwrap();
        let b = gen_preamble(PreambleKind::Gaussian, 100, 200, 5).unwrap();
        let c = gen_preamble(PreambleKind::Gaussian, 100, 200, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        linalg::check_unit_columns(a.entries(), 1e-12).unwrap();
    }

    #[test]
    fn zadoff_chu_coherence_below_one() {
        let s = gen_preamble(PreambleKind::ZadoffChu, 90, 300, 0).unwrap();
        linalg::check_unit_columns(s.entries(), 1e-12).unwrap();
        let e = s.entries();
        let mut mu: f64 = 0.0;
        for i in 0..300 {
            for j in 0..i {
                mu = mu.max(e.column(i).dotc(&e.column(j)).norm());
            }
        }
        assert!(mu < 1.0 - 1e-6, "mu = {mu}");
        assert_relative_eq!(operators::mutual_coherence(e).unwrap(), mu, epsilon = 1e-12);
    }

    #[test]
    fn zadoff_chu_structure() {
        assert_eq!(zc_base_length(20), 23);
        assert_eq!(zc_base_length(90), 97);
        assert_eq!(zc_base_length(2), 2);
        let s = zadoff_chu_matrix(5, 9).unwrap();
        // column 1 is column 0 cyclically shifted by one (within the base sequence)
        let root1 = |k: usize| {
            let k = k as f64;
            Complex64::from_polar(1.0, -std::f64::consts::PI * k * (k + 1.0) / 5.0) / 5f64.sqrt()
        };
        for k in 0..5 {
            assert!((s[(k, 1)] - root1((k + 1) % 5)).norm() < 1e-14);
        }
        let err = zadoff_chu_matrix(5, 21).unwrap_err();
        assert!(matches!(err, Error::ZadoffChuBudget { available: 20, .. }));
    }

    #[test]
    fn custom_kind_and_small_dims_rejected() {
        assert!(gen_preamble(PreambleKind::Custom, 4, 8, 0).is_err());
        assert!(gen_preamble(PreambleKind::Gaussian, 1, 8, 0).is_err());
        assert!("fourier".parse::<PreambleKind>().is_err());
    }

    #[test]
    fn signal_extremes() {
        let zero = gen_signal(30, 4, 0.0, 1).unwrap();
        assert_eq!(zero.entries, CMat::zeros(30, 4));
        let full = gen_signal(30, 4, 1.0, 1).unwrap();
        assert_eq!(full.entries, full.channel);
        assert!(full.entries.row_iter().all(|r| r.norm() > 0.0));
        assert!(gen_signal(3, 3, 1.5, 0).is_err());
    }

    #[test]
    fn activity_fraction_concentrates() {
        let s = gen_signal(10_000, 1, 0.1, 42).unwrap();
        let frac = s.active_count() as f64 / 10_000.0;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
        for (i, a) in s.activity.iter().enumerate() {
            assert_eq!(*a, s.entries.row(i).norm() > 0.0);
        }
    }

    #[test]
    fn noise_calibration_is_exact() {
        let mut r = rng::stream(3);
        let clean = rng::complex_normal_matrix(&mut r, 20, 8);
        assert_eq!(gen_noise_for_snr(&clean, None, 0).unwrap(), CMat::zeros(20, 8));
        let z1 = gen_noise_for_snr(&clean, Some(15.0), 1).unwrap();
        let z2 = gen_noise_for_snr(&clean, Some(15.0), 2).unwrap();
        assert_ne!(z1, z2);
        for z in [&z1, &z2] {
            let snr = metrics::snr_empirical(&clean, z).unwrap();
            assert!((snr - 15.0).abs() < 1e-9, "{snr}");
        }
        assert!(gen_noise_for_snr(&CMat::zeros(2, 2), Some(10.0), 0).is_err());
    }

    #[test]
    fn lift_special_cases() {
        let b = rng::real_normal_matrix(&mut rng::stream(8), 3, 4);
        let real = b.map(|v| Complex64::new(v, 0.0));
        let lr = lift_matrix(&real);
        assert_eq!(lr.view((0, 0), (3, 4)), b.view((0, 0), (3, 4)));
        assert_eq!(lr.view((3, 4), (3, 4)), b.view((0, 0), (3, 4)));
        assert!(lr.view((0, 4), (3, 4)).iter().all(|v| *v == 0.0));
        assert!(lr.view((3, 0), (3, 4)).iter().all(|v| *v == 0.0));

        let imag = b.map(|v| Complex64::new(0.0, v));
        let li = lift_matrix(&imag);
        assert!(li.view((0, 0), (3, 4)).iter().all(|v| *v == 0.0));
        assert_eq!(li.view((0, 4), (3, 4)).into_owned(), -&b);
        assert_eq!(li.view((3, 0), (3, 4)).into_owned(), b);
    }

    #[test]
    fn lift_commutes_with_product() {
        let mut r = rng::stream(9);
        let s = rng::complex_normal_matrix(&mut r, 4, 7);
        let x = rng::complex_normal_matrix(&mut r, 7, 3);
        let lhs = lift_stack(&(&s * &x));
        let rhs = lift_matrix(&s) * lift_stack(&x);
        assert!((lhs - rhs).norm() < 1e-13);
        let back = unlift_stack(&lift_stack(&x)).unwrap();
        assert!((back - x).norm() < 1e-14);
        assert!(unlift_stack(&RMat::zeros(3, 1)).is_err());
    }

    #[test]
    fn instance_identity_and_group_structure() {
        let pre = gen_preamble(PreambleKind::Gaussian, 10, 20, 1).unwrap();
        for seed in 0..10 {
            let inst = ProblemInstance::generate(&pre, 4, 0.3, Some(10.0), seed).unwrap();
            let lifted = lift_to_real(&inst);
            let resid = &lifted.y_tilde - &lifted.s_tilde * &lifted.x_tilde - &lifted.z_tilde;
            assert!(resid.norm() < 1e-12);
            let n = 20;
            for i in 0..n {
                let a = lifted.x_tilde.row(i).norm() > 0.0;
                let b = lifted.x_tilde.row(n + i).norm() > 0.0;
                assert_eq!(a, inst.signal.activity[i]);
                assert_eq!(b, inst.signal.activity[i]);
            }
        }
    }

    #[test]
    fn zero_activity_sample_uses_expected_power() {
        let pre = gen_preamble(PreambleKind::Gaussian, 6, 12, 1).unwrap();
        let s = draw_sample(&pre, 3, 0.0, Some(10.0), 4).unwrap();
        assert_eq!(s.observation, s.noise);
        let inst = ProblemInstance::generate(&pre, 3, 0.1, None, 4).unwrap();
        assert_eq!(inst.noise, CMat::zeros(6, 3));
    }
}
