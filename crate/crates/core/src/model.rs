//! Patient embedding model: per-modality linear projections into the tangent
//! space at the origin, exponential-map lift onto the ball, tangent-space
//! multi-head attention pooling per modality, channel-wise fusion, and a
//! discrete hazard head.
//!
//! `forward_patient` here is the plain f64 reference path used for
//! evaluation; training runs the same computation recorded on the autodiff
//! tape (see `lossgraph`), and tests pin the two paths together.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::geometry::{exp_map, log_map, project_to_ball, BallPoint, Curvature, GeometryError, TangentVector};
use crate::losses::HazardOutput;

/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("invalid model structure: {0}")]
    Inconsistent(String),
    #[error("patient bag invalid: {0}")]
    BadBag(String),
}

/// One patient's instance bags plus survival outcome.
#[derive(Debug, Clone)]
pub struct PatientBag {
    pub patient_id: String,
    /// M_p x d pathology instance features.
    pub pathology: Tensor,
    /// M_g x d genomic pathway features.
    pub genomics: Tensor,
    /// Continuous follow-up time, months.
    pub time_months: f64,
    /// 1 = outcome unobserved (censored), 0 = observed death.
    pub censor: u8,
}

impl PatientBag {
    pub fn new(
        patient_id: String,
        pathology: Tensor,
        genomics: Tensor,
        time_months: f64,
        censor: u8,
    ) -> Result<Self, ModelError> {
        let bag = PatientBag {
            patient_id,
            pathology,
            genomics,
            time_months,
            censor,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.pathology.rows() < 1 || self.genomics.rows() < 1 {
            return Err(ModelError::BadBag(format!(
                "{}: both modalities need at least one instance",
                self.patient_id
            )));
        }
        if self.pathology.cols() != self.genomics.cols() {
            return Err(ModelError::BadBag(format!(
                "{}: feature dims differ ({} vs {})",
                self.patient_id,
                self.pathology.cols(),
                self.genomics.cols()
            )));
        }
        if !self.pathology.is_finite() || !self.genomics.is_finite() {
            return Err(ModelError::BadBag(format!(
                "{}: non-finite feature",
                self.patient_id
            )));
        }
        if !(self.time_months > 0.0) || !self.time_months.is_finite() {
            return Err(ModelError::BadBag(format!(
                "{}: time_months must be positive, got {}",
                self.patient_id, self.time_months
            )));
        }
        if self.censor > 1 {
            return Err(ModelError::BadBag(format!(
                "{}: censor must be 0 or 1, got {}",
                self.patient_id, self.censor
            )));
        }
        Ok(())
    }
}

/// Fixed architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Input feature dimension per instance.
    pub d: usize,
    /// Hidden (embedding) dimension; must be divisible by n_heads.
    pub d_h: usize,
    pub n_heads: usize,
    /// Number of discrete hazard intervals N_t.
    pub n_intervals: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.d_h == 0 || self.n_heads == 0 || self.n_intervals == 0 {
            return Err(ModelError::Inconsistent("all dims must be nonzero".into()));
        }
        if self.d_h % self.n_heads != 0 {
            return Err(ModelError::Inconsistent(format!(
                "d_h {} must be divisible by n_heads {}",
                self.d_h, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_h / self.n_heads
    }
}

/// One attention head: key map, learned query, value map.
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub key_w: Tensor,
    pub query: Tensor,
    pub value_w: Tensor,
}

/// All learnable tensors.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub dims: ModelDims,
    pub proj_p_w: Tensor,
    pub proj_p_b: Tensor,
    pub proj_g_w: Tensor,
    pub proj_g_b: Tensor,
    pub heads: Vec<AttentionHead>,
    pub attn_out_w: Tensor,
    pub fuse_w: Tensor,
    pub hazard_w: Tensor,
    pub hazard_b: Tensor,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
    )
}

impl FusionParams {
    /// Deterministic Xavier-uniform initialization.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dk = dims.head_dim();
        let heads = (0..dims.n_heads)
            .map(|_| AttentionHead {
                key_w: xavier(&mut rng, dims.d_h, dk),
                query: xavier(&mut rng, 1, dk),
                value_w: xavier(&mut rng, dims.d_h, dk),
            })
            .collect();
        Ok(FusionParams {
            dims,
            proj_p_w: xavier(&mut rng, dims.d, dims.d_h),
            proj_p_b: Tensor::zeros(1, dims.d_h),
            proj_g_w: xavier(&mut rng, dims.d, dims.d_h),
            proj_g_b: Tensor::zeros(1, dims.d_h),
            heads,
            attn_out_w: xavier(&mut rng, dims.d_h, dims.d_h),
            fuse_w: xavier(&mut rng, dims.d_h, dims.d_h),
            hazard_w: xavier(&mut rng, dims.d_h, dims.n_intervals),
            hazard_b: Tensor::zeros(1, dims.n_intervals),
        })
    }

    /// All-zero parameters (risk-indifferent model, used as a baseline).
    pub fn zeros(dims: ModelDims) -> Result<Self, ModelError> {
        dims.validate()?;
        let dk = dims.head_dim();
        let heads = (0..dims.n_heads)
            .map(|_| AttentionHead {
                key_w: Tensor::zeros(dims.d_h, dk),
                query: Tensor::zeros(1, dk),
                value_w: Tensor::zeros(dims.d_h, dk),
            })
            .collect();
        Ok(FusionParams {
            dims,
            proj_p_w: Tensor::zeros(dims.d, dims.d_h),
            proj_p_b: Tensor::zeros(1, dims.d_h),
            proj_g_w: Tensor::zeros(dims.d, dims.d_h),
            proj_g_b: Tensor::zeros(1, dims.d_h),
            heads,
            attn_out_w: Tensor::zeros(dims.d_h, dims.d_h),
            fuse_w: Tensor::zeros(dims.d_h, dims.d_h),
            hazard_w: Tensor::zeros(dims.d_h, dims.n_intervals),
            hazard_b: Tensor::zeros(1, dims.n_intervals),
        })
    }

    /// Canonical (name, tensor) listing; the checkpoint writes exactly this
    /// order so files are byte-reproducible.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("proj_p_w".into(), &self.proj_p_w),
            ("proj_p_b".into(), &self.proj_p_b),
            ("proj_g_w".into(), &self.proj_g_w),
            ("proj_g_b".into(), &self.proj_g_b),
        ];
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("attn{h}_key_w"), &head.key_w));
            out.push((format!("attn{h}_query"), &head.query));
            out.push((format!("attn{h}_value_w"), &head.value_w));
        }
        out.push(("attn_out_w".into(), &self.attn_out_w));
        out.push(("fuse_w".into(), &self.fuse_w));
        out.push(("hazard_w".into(), &self.hazard_w));
        out.push(("hazard_b".into(), &self.hazard_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("proj_p_w".into(), &mut self.proj_p_w),
            ("proj_p_b".into(), &mut self.proj_p_b),
            ("proj_g_w".into(), &mut self.proj_g_w),
            ("proj_g_b".into(), &mut self.proj_g_b),
        ];
        for (h, head) in self.heads.iter_mut().enumerate() {
            out.push((format!("attn{h}_key_w"), &mut head.key_w));
            out.push((format!("attn{h}_query"), &mut head.query));
            out.push((format!("attn{h}_value_w"), &mut head.value_w));
        }
        out.push(("attn_out_w".into(), &mut self.attn_out_w));
        out.push(("fuse_w".into(), &mut self.fuse_w));
        out.push(("hazard_w".into(), &mut self.hazard_w));
        out.push(("hazard_b".into(), &mut self.hazard_b));
        out
    }

    /// Write the HSPC checkpoint: magic, version u32, then per tensor a u16
    /// name length, name bytes, u64 rows, u64 cols, and the f64 row-major
    /// payload, all little-endian.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, tensor) in self.named_tensors() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.rows() as u64).to_le_bytes())?;
            w.write_all(&(tensor.cols() as u64).to_le_bytes())?;
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read an HSPC checkpoint, rebuilding the architecture from the stored
    /// tensor shapes.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_or_truncated(&mut r, &mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic(magic));
        }
        let mut vbuf = [0u8; 4];
        read_exact_or_truncated(&mut r, &mut vbuf)?;
        let version = u32::from_le_bytes(vbuf);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }

        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        loop {
            let mut nlen = [0u8; 2];
            match r.read(&mut nlen)? {
                0 => break,
                2 => {}
                _ => return Err(ModelError::Truncated),
            }
            let nlen = u16::from_le_bytes(nlen) as usize;
            let mut name = vec![0u8; nlen];
            read_exact_or_truncated(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| ModelError::Inconsistent("tensor name is not utf-8".into()))?;
            let mut dims = [0u8; 16];
            read_exact_or_truncated(&mut r, &mut dims)?;
            let rows = u64::from_le_bytes(dims[..8].try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(dims[8..].try_into().unwrap()) as usize;
            let mut data = vec![0.0f64; rows * cols];
            for v in data.iter_mut() {
                let mut b = [0u8; 8];
                read_exact_or_truncated(&mut r, &mut b)?;
                *v = f64::from_le_bytes(b);
            }
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }

        Self::from_named(tensors)
    }

    fn from_named(tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let take = |name: &str| -> Result<Tensor, ModelError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| ModelError::Inconsistent(format!("missing tensor {name:?}")))
        };
        let proj_p_w = take("proj_p_w")?;
        let proj_p_b = take("proj_p_b")?;
        let proj_g_w = take("proj_g_w")?;
        let proj_g_b = take("proj_g_b")?;
        let mut heads = Vec::new();
        let mut h = 0;
        while tensors.iter().any(|(n, _)| n == &format!("attn{h}_key_w")) {
            heads.push(AttentionHead {
                key_w: take(&format!("attn{h}_key_w"))?,
                query: take(&format!("attn{h}_query"))?,
                value_w: take(&format!("attn{h}_value_w"))?,
            });
            h += 1;
        }
        if heads.is_empty() {
            return Err(ModelError::Inconsistent("no attention heads".into()));
        }
        let attn_out_w = take("attn_out_w")?;
        let fuse_w = take("fuse_w")?;
        let hazard_w = take("hazard_w")?;
        let hazard_b = take("hazard_b")?;

        let dims = ModelDims {
            d: proj_p_w.rows(),
            d_h: proj_p_w.cols(),
            n_heads: heads.len(),
            n_intervals: hazard_w.cols(),
        };
        dims.validate()?;
        let params = FusionParams {
            dims,
            proj_p_w,
            proj_p_b,
            proj_g_w,
            proj_g_b,
            heads,
            attn_out_w,
            fuse_w,
            hazard_w,
            hazard_b,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let d = self.dims.d;
        let dh = self.dims.d_h;
        let dk = self.dims.head_dim();
        let nt = self.dims.n_intervals;
        let expect = |name: &str, t: &Tensor, shape: (usize, usize)| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(ModelError::Inconsistent(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
        };
        expect("proj_p_w", &self.proj_p_w, (d, dh))?;
        expect("proj_p_b", &self.proj_p_b, (1, dh))?;
        expect("proj_g_w", &self.proj_g_w, (d, dh))?;
        expect("proj_g_b", &self.proj_g_b, (1, dh))?;
        for (i, head) in self.heads.iter().enumerate() {
            expect(&format!("attn{i}_key_w"), &head.key_w, (dh, dk))?;
            expect(&format!("attn{i}_query"), &head.query, (1, dk))?;
            expect(&format!("attn{i}_value_w"), &head.value_w, (dh, dk))?;
        }
        expect("attn_out_w", &self.attn_out_w, (dh, dh))?;
        expect("fuse_w", &self.fuse_w, (dh, dh))?;
        expect("hazard_w", &self.hazard_w, (dh, nt))?;
        expect("hazard_b", &self.hazard_b, (1, nt))?;
        Ok(())
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::Truncated
        } else {
            ModelError::Io(e)
        }
    })
}

/// Embedded patient: fused ball point, the two modality embeddings, and the
/// hazard logits.
#[derive(Debug, Clone)]
pub struct PatientEmbedding {
    pub fused: BallPoint,
    pub pathology: BallPoint,
    pub genomics: BallPoint,
    pub hazard_logits: Vec<f64>,
    /// Per-head attention weights, pathology then genomics, for inspection.
    pub attn_weights_p: Vec<Vec<f64>>,
    pub attn_weights_g: Vec<Vec<f64>>,
}

impl PatientEmbedding {
    pub fn hazard_output(&self) -> HazardOutput {
        HazardOutput::from_logits(self.hazard_logits.clone())
    }
}

/// Project every instance row with `w`/`b` and lift it onto the ball via the
/// exponential map at the origin.
pub fn embed_bag(
    instances: &Tensor,
    w: &Tensor,
    b: &Tensor,
    c: Curvature,
) -> Result<Vec<BallPoint>, ModelError> {
    let projected = instances.matmul(w).zip_broadcast(b, |x, y| x + y);
    let origin = BallPoint::origin(w.cols());
    let mut out = Vec::with_capacity(projected.rows());
    for i in 0..projected.rows() {
        let v = TangentVector::new(projected.row_slice(i).to_vec())
            .map_err(ModelError::Geometry)?;
        out.push(exp_map(&origin, &v, c));
    }
    Ok(out)
}

/// Multi-head attention pooling in the tangent space at the origin. Returns
/// the pooled ball point plus the per-head weight rows (each sums to 1).
pub fn attention_pool(
    points: &[BallPoint],
    params: &FusionParams,
    c: Curvature,
) -> Result<(BallPoint, Vec<Vec<f64>>), ModelError> {
    let m = points.len();
    if m == 0 {
        return Err(ModelError::BadBag("attention over an empty bag".into()));
    }
    let dh = params.dims.d_h;
    let origin = BallPoint::origin(dh);
    let mut v = Tensor::zeros(m, dh);
    for (i, p) in points.iter().enumerate() {
        let t = log_map(&origin, p, c);
        for (j, x) in t.coords().iter().enumerate() {
            v.set(i, j, *x);
        }
    }

    let mut head_weights = Vec::with_capacity(params.heads.len());
    let mut concat = Tensor::zeros(1, dh);
    let dk = params.dims.head_dim();
    for (h, head) in params.heads.iter().enumerate() {
        let keys = v.matmul(&head.key_w).map(f64::tanh); // m x dk
        let scores = keys.matmul(&head.query.transpose()); // m x 1
        let max = scores.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.data().iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let values = v.matmul(&head.value_w); // m x dk
        for j in 0..dk {
            let mut acc = 0.0;
            for i in 0..m {
                acc += weights[i] * values.get(i, j);
            }
            concat.set(0, h * dk + j, acc);
        }
        head_weights.push(weights);
    }

    let pooled = concat.matmul(&params.attn_out_w);
    let tangent = TangentVector::new(pooled.data().to_vec()).map_err(ModelError::Geometry)?;
    Ok((exp_map(&origin, &tangent, c), head_weights))
}

/// Channel-wise fusion of the two modality embeddings: elementwise product
/// of tangent vectors with an additive residual of both, then a learned
/// linear map back onto the ball. When one side sits at the origin this
/// collapses to a tangent-space linear transform of the other.
pub fn channel_fuse(
    x_p: &BallPoint,
    x_g: &BallPoint,
    fuse_w: &Tensor,
    c: Curvature,
) -> Result<BallPoint, ModelError> {
    let origin = BallPoint::origin(x_p.dim());
    let up = log_map(&origin, x_p, c);
    let ug = log_map(&origin, x_g, c);
    let mixed: Vec<f64> = up
        .coords()
        .iter()
        .zip(ug.coords())
        .map(|(a, b)| a * b + a + b)
        .collect();
    let fused_tangent = Tensor::row(mixed).matmul(fuse_w);
    let tangent =
        TangentVector::new(fused_tangent.data().to_vec()).map_err(ModelError::Geometry)?;
    Ok(exp_map(&origin, &tangent, c))
}

/// Full forward pass for one patient.
pub fn forward_patient(
    bag: &PatientBag,
    params: &FusionParams,
    c: Curvature,
) -> Result<PatientEmbedding, ModelError> {
    let points_p = embed_bag(&bag.pathology, &params.proj_p_w, &params.proj_p_b, c)?;
    let points_g = embed_bag(&bag.genomics, &params.proj_g_w, &params.proj_g_b, c)?;
    let (x_p, attn_weights_p) = attention_pool(&points_p, params, c)?;
    let (x_g, attn_weights_g) = attention_pool(&points_g, params, c)?;
    let fused = channel_fuse(&x_p, &x_g, &params.fuse_w, c)?;

    let origin = BallPoint::origin(params.dims.d_h);
    let fused_tangent = log_map(&origin, &fused, c);
    let logits = Tensor::row(fused_tangent.coords().to_vec())
        .matmul(&params.hazard_w)
        .zip_broadcast(&params.hazard_b, |x, y| x + y);

    Ok(PatientEmbedding {
        fused,
        pathology: x_p,
        genomics: x_g,
        hazard_logits: logits.data().to_vec(),
        attn_weights_p,
        attn_weights_g,
    })
}

/// Risk score for ranking patients, derived from the hazard logits.
pub fn risk_score(embedding: &PatientEmbedding) -> f64 {
    embedding.hazard_output().risk_score()
}
