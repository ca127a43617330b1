//! Sparse distributed memory over rank-order codes.
//!
//! Retrieval: a context code is compared to every hard-location address by
//! cosine similarity; locations at or above the threshold become active,
//! carrying their similarity as weight.
//!
//! Storage: a correlation matrix memory (data dimension x locations) updated
//! with the max of outer products, `w[i][j] = max(w[i][j], data[i] * act[j])`.
//! Reading sums the columns weighted by activation and re-codes the result
//! with N-of-M selection.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{cosine_sim, nofm, CodeParams, RankOrderCode, SignificanceVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AddressDecoder {
    addresses: Vec<SignificanceVector>,
    threshold: f64,
    binary: bool,
}

impl AddressDecoder {
    pub fn new(addresses: Vec<SignificanceVector>, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Parameter(format!(
                "address threshold must lie in [0, 1], got {threshold}"
            )));
        }
        if let Some(first) = addresses.first() {
            if addresses.iter().any(|a| a.len() != first.len()) {
                return Err(Error::Parameter("addresses differ in dimension".into()));
            }
        }
        Ok(Self {
            addresses,
            threshold,
            binary: false,
        })
    }

    /// `locations` uniformly random canonical codes drawn from `seed`.
    pub fn random(params: CodeParams, locations: usize, threshold: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let addresses = (0..locations)
            .map(|_| RankOrderCode::random(params, &mut rng).to_significance())
            .collect();
        Self::new(addresses, threshold)
    }

    /// Active locations contribute weight 1 instead of their similarity.
    pub fn with_binary(mut self, binary: bool) -> Self {
        self.binary = binary;
        self
    }

    pub fn addresses(&self) -> &[SignificanceVector] {
        &self.addresses
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn locations(&self) -> usize {
        self.addresses.len()
    }

    pub fn dim(&self) -> usize {
        self.addresses.first().map_or(0, SignificanceVector::len)
    }
}

/// Per-location weights; zero below threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    weights: Vec<f64>,
}

impl ActivationPattern {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter(
                "activation weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn is_silent(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

pub fn decode_address(context: &SignificanceVector, dec: &AddressDecoder) -> Result<ActivationPattern> {
    let weights = dec
        .addresses
        .iter()
        .map(|a| {
            let s = cosine_sim(context, a)?;
            Ok(if s >= dec.threshold {
                if dec.binary {
                    1.0
                } else {
                    s
                }
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationPattern { weights })
}

/// Picks the threshold that activates `target_active` locations on average
/// over `samples` random canonical contexts.
pub fn calibrate_threshold(
    dec: &AddressDecoder,
    params: CodeParams,
    target_active: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if target_active == 0 || target_active > dec.locations() || samples == 0 {
        return Err(Error::Parameter(format!(
            "calibration needs 1 <= target_active <= {} and samples > 0",
            dec.locations()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sims = Vec::with_capacity(samples * dec.locations());
    for _ in 0..samples {
        let ctx = RankOrderCode::random(params, &mut rng).to_significance();
        for a in &dec.addresses {
            sims.push(cosine_sim(&ctx, a)?);
        }
    }
    sims.sort_by(|a, b| b.total_cmp(a));
    let k = target_active * samples - 1;
    Ok(sims[k].clamp(0.0, 1.0))
}

/// Readout of one retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub code: RankOrderCode,
    /// `W * activation` before N-of-M selection.
    pub raw: Vec<f64>,
    /// Activation mass landing on locations that hold any data. Zero means
    /// the retrieval found nothing.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    data_dim: usize,
    locations: usize,
    /// Row-major, `data_dim` rows by `locations` columns.
    w: Vec<f64>,
    written: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn new(data_dim: usize, locations: usize) -> Self {
        Self {
            data_dim,
            locations,
            w: vec![0.0; data_dim * locations],
            written: vec![false; locations],
        }
    }

    pub fn from_raw(data_dim: usize, locations: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != data_dim * locations {
            return Err(Error::Dimension {
                op: "CorrelationMatrix::from_raw",
                expected: data_dim * locations,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format("matrix entries must be finite and non-negative".into()));
        }
        let written = (0..locations)
            .map(|j| (0..data_dim).any(|i| w[i * locations + j] != 0.0))
            .collect();
        Ok(Self {
            data_dim,
            locations,
            w,
            written,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.locations + j]
    }

    pub fn raw(&self) -> &[f64] {
        &self.w
    }

    fn check(&self, op: &'static str, act: &ActivationPattern) -> Result<()> {
        if act.weights.len() != self.locations {
            return Err(Error::Dimension {
                op,
                expected: self.locations,
                got: act.weights.len(),
            });
        }
        Ok(())
    }

    /// Max-rule write of the outer product `data * activation^T`.
    pub fn write(&mut self, act: &ActivationPattern, data: &SignificanceVector) -> Result<()> {
        self.check("cmm_write", act)?;
        if data.len() != self.data_dim {
            return Err(Error::Dimension {
                op: "cmm_write",
                expected: self.data_dim,
                got: data.len(),
            });
        }
        let active: Vec<(usize, f64)> = act
            .weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, a)| a > 0.0)
            .collect();
        for (i, &d) in data.values().iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut self.w[i * self.locations..(i + 1) * self.locations];
            for &(j, a) in &active {
                let v = d * a;
                if v > row[j] {
                    row[j] = v;
                }
            }
        }
        if !data.is_zero() {
            for &(j, _) in &active {
                self.written[j] = true;
            }
        }
        Ok(())
    }

    pub fn read(&self, act: &ActivationPattern, params: CodeParams) -> Result<Readout> {
        self.check("cmm_read", act)?;
        if act.is_silent() {
            return Err(Error::NoActiveLocation);
        }
        let mut raw = vec![0.0; self.data_dim];
        let mut confidence = 0.0;
        for (j, &a) in act.weights.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            if self.written[j] {
                confidence += a;
            }
            for (i, r) in raw.iter_mut().enumerate() {
                *r += self.w[i * self.locations + j] * a;
            }
        }
        let code = nofm(&raw, params.n_active(), params)?;
        Ok(Readout { code, raw, confidence })
    }
}

/// Free-function forms mirroring the memory's two operations.
pub fn cmm_write(cmm: &mut CorrelationMatrix, act: &ActivationPattern, data: &SignificanceVector) -> Result<()> {
    cmm.write(act, data)
}

pub fn cmm_read(cmm: &CorrelationMatrix, act: &ActivationPattern, params: CodeParams) -> Result<Readout> {
    cmm.read(act, params)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SDMCMM01";

/// Binary snapshot of a memory matrix.
///
/// Layout, all little-endian: 8-byte magic `SDMCMM01`, `u64` data_dim,
/// `u64` locations, `u64` seed, `f64` threshold, then `data_dim * locations`
/// `f64` entries in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub seed: u64,
    pub threshold: f64,
    pub matrix: CorrelationMatrix,
}

impl Snapshot {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.matrix.data_dim as u64).to_le_bytes())?;
        out.write_all(&(self.matrix.locations as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&self.threshold.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.matrix.w.len() * 8);
        for v in &self.matrix.w {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let data_dim = u64::from_le_bytes(next(&mut input)?) as usize;
        let locations = u64::from_le_bytes(next(&mut input)?) as usize;
        let seed = u64::from_le_bytes(next(&mut input)?);
        let threshold = f64::from_le_bytes(next(&mut input)?);
        let n = data_dim
            .checked_mul(locations)
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                n * 8,
                bytes.len()
            )));
        }
        let w = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            seed,
            threshold,
            matrix: CorrelationMatrix::from_raw(data_dim, locations, w)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
