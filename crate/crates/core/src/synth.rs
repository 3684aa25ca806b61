//! Synthetic hierarchical censored-survival data.
//!
//! A balanced binary tree of latent prototypes stands in for the tissue /
//! cell-cluster / cell (and network / pathway / gene) hierarchies: each
//! patient is assigned a leaf, pathology instances sample noisy encodings
//! along the leaf's ancestor path with a bias toward deep nodes, and
//! genomics instances sweep the path coarse-to-fine. Event times are
//! exponential with a rate that grows monotonically in the leaf index, and
//! censoring draws an independent uniform censor time whose horizon is
//! calibrated to the requested censor rate.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::data::{write_manifest, write_matrix, DataError, ManifestRecord};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub m_p_min: usize,
    pub m_p_max: usize,
    /// Number of genomic pathway instances per patient.
    pub m_g: usize,
    /// Feature dimension d shared by both modalities.
    pub d: usize,
    /// Target fraction of censored records, in [0, 1).
    pub censor_rate: f64,
    pub tree_depth: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 200,
            m_p_min: 8,
            m_p_max: 16,
            m_g: 6,
            d: 8,
            censor_rate: 0.45,
            tree_depth: 3,
            noise_scale: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| DataError::ManifestLine {
            path: PathBuf::from("<synth-config>"),
            line: 0,
            reason,
        };
        if self.n_patients < 8 {
            return Err(bad(format!("n_patients must be >= 8, got {}", self.n_patients)));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(bad(format!(
                "censor_rate must be in [0,1), got {}",
                self.censor_rate
            )));
        }
        if self.m_p_min == 0 || self.m_p_min > self.m_p_max {
            return Err(bad("invalid M_p range".into()));
        }
        if self.m_g == 0 || self.d == 0 {
            return Err(bad("m_g and d must be nonzero".into()));
        }
        if self.tree_depth == 0 {
            return Err(bad("tree_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Hidden truth per patient, returned for test oracles; not written to disk.
#[derive(Debug, Clone, Copy)]
pub struct PatientLatent {
    pub leaf: usize,
    /// Exponential event rate; monotone in the leaf index.
    pub event_rate: f64,
    /// Uncensored event time before the censoring draw.
    pub event_time: f64,
}

#[derive(Debug)]
pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub latent: Vec<PatientLatent>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Heap-indexed balanced binary tree of node encodings; children perturb
/// their parent so that subtree proximity carries over to feature space.
fn build_tree(rng: &mut ChaCha8Rng, depth: usize, d: usize) -> Vec<Vec<f64>> {
    let n_nodes = (1usize << (depth + 1)) - 1;
    let mut enc: Vec<Vec<f64>> = Vec::with_capacity(n_nodes);
    enc.push(gaussian_vec(rng, d, 1.0));
    for idx in 1..n_nodes {
        let parent = (idx - 1) / 2;
        let level = (idx + 1).ilog2() as usize;
        let step = gaussian_vec(rng, d, 0.8_f64.powi(level as i32 - 1));
        let coords: Vec<f64> = enc[parent].iter().zip(&step).map(|(p, s)| p + s).collect();
        enc.push(coords);
    }
    enc
}

/// Nodes on the root-to-leaf path, root first.
fn ancestor_path(leaf_node: usize, depth: usize) -> Vec<usize> {
    let mut path = vec![0usize; depth + 1];
    let mut node = leaf_node;
    for k in (0..=depth).rev() {
        path[k] = node;
        if node == 0 {
            break;
        }
        node = (node - 1) / 2;
    }
    path
}

/// Calibrate the uniform censoring horizon m so the expected censored
/// fraction matches the target: mean_i P(U(0,m) < t_i) = rate.
fn calibrate_horizon(event_times: &[f64], rate: f64) -> f64 {
    let frac = |m: f64| -> f64 {
        event_times.iter().map(|&t| (t / m).min(1.0)).sum::<f64>() / event_times.len() as f64
    };
    let (mut lo, mut hi) = (1e-6, 1e9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate the dataset under `out_dir`: a manifest plus one pathology and
/// one genomics HSPM file per patient. Deterministic for a fixed config.
pub fn generate_synthetic(
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<SyntheticDataset, DataError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let depth = config.tree_depth;
    let tree = build_tree(&mut rng, depth, config.d);
    let n_leaves = 1usize << depth;
    let first_leaf = (1usize << depth) - 1;

    // Leaf assignment and exponential event times; the rate spans a ~90x
    // range across leaves so risk orders the cohort even under censoring.
    let mut latent = Vec::with_capacity(config.n_patients);
    for _ in 0..config.n_patients {
        let leaf = rng.gen_range(0..n_leaves);
        let frac = if n_leaves > 1 {
            leaf as f64 / (n_leaves - 1) as f64
        } else {
            0.0
        };
        let event_rate = 0.01 * (4.5 * frac).exp();
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let event_time = -u.ln() / event_rate;
        latent.push(PatientLatent {
            leaf,
            event_rate,
            event_time,
        });
    }

    // Censoring: independent uniform censor times over a calibrated horizon.
    let times: Vec<f64> = latent.iter().map(|l| l.event_time).collect();
    let horizon = if config.censor_rate > 0.0 {
        Some(calibrate_horizon(&times, config.censor_rate))
    } else {
        None
    };

    let mut records = Vec::with_capacity(config.n_patients);
    for (i, l) in latent.iter().enumerate() {
        let (observed_time, censor) = match horizon {
            Some(m) => {
                let censor_time = rng.gen_range(0.0..m).max(1e-3);
                if censor_time < l.event_time {
                    (censor_time, 1u8)
                } else {
                    (l.event_time, 0u8)
                }
            }
            None => (l.event_time, 0u8),
        };

        let path_nodes = ancestor_path(first_leaf + l.leaf, depth);

        // Pathology: deep-biased samples along the ancestor path.
        let m_p = rng.gen_range(config.m_p_min..=config.m_p_max);
        let mut pathology = Vec::with_capacity(m_p * config.d);
        let total_weight: usize = (1..=depth + 1).sum();
        for _ in 0..m_p {
            let mut pick = rng.gen_range(0..total_weight);
            let mut level = 0;
            for k in 0..=depth {
                let w = k + 1;
                if pick < w {
                    level = k;
                    break;
                }
                pick -= w;
            }
            let node = &tree[path_nodes[level]];
            let noise = gaussian_vec(&mut rng, config.d, config.noise_scale);
            pathology.extend(node.iter().zip(&noise).map(|(a, b)| a + b));
        }

        // Genomics: coarse-to-fine sweep of the path, one row per pathway.
        let mut genomics = Vec::with_capacity(config.m_g * config.d);
        for j in 0..config.m_g {
            let level = if config.m_g > 1 {
                (j as f64 * depth as f64 / (config.m_g - 1) as f64).round() as usize
            } else {
                depth
            };
            let node = &tree[path_nodes[level.min(depth)]];
            let noise = gaussian_vec(&mut rng, config.d, config.noise_scale);
            genomics.extend(node.iter().zip(&noise).map(|(a, b)| a + b));
        }

        let patient_id = format!("p{i:05}");
        let pathology_path = format!("{patient_id}_pathology.hspm");
        let genomics_path = format!("{patient_id}_genomics.hspm");
        write_matrix(
            &out_dir.join(&pathology_path),
            &Tensor::from_vec(m_p, config.d, pathology),
        )?;
        write_matrix(
            &out_dir.join(&genomics_path),
            &Tensor::from_vec(config.m_g, config.d, genomics),
        )?;
        records.push(ManifestRecord {
            patient_id,
            time_months: observed_time,
            censor,
            pathology_path,
            genomics_path,
        });
    }

    let manifest_path = out_dir.join("manifest.ndjson");
    write_manifest(&manifest_path, &records)?;
    Ok(SyntheticDataset {
        manifest_path,
        records,
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_manifest;

    fn sha_of_dir(dir: &Path) -> Vec<(String, u64)> {
        let mut entries: Vec<(String, u64)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                let bytes = std::fs::read(e.path()).unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    crate::util::fnv1a(&bytes),
                )
            })
            .collect();
        entries.sort();
        entries
    }

    #[test]
    fn zero_censor_rate_means_no_censoring() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_patients: 20,
            censor_rate: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, dir.path()).unwrap();
        assert!(ds.records.iter().all(|r| r.censor == 0));
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let cfg = SynthConfig {
            n_patients: 12,
            ..Default::default()
        };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        generate_synthetic(&cfg, dir1.path()).unwrap();
        generate_synthetic(&cfg, dir2.path()).unwrap();
        assert_eq!(sha_of_dir(dir1.path()), sha_of_dir(dir2.path()));
    }

    #[test]
    fn censor_fraction_near_target() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_patients: 1000,
            censor_rate: 0.45,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, dir.path()).unwrap();
        let frac = ds.records.iter().filter(|r| r.censor == 1).count() as f64 / 1000.0;
        assert!(
            (frac - 0.45).abs() <= 0.03,
            "empirical censor fraction {frac} too far from 0.45"
        );
    }

    #[test]
    fn risk_time_monotonicity() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_patients: 500,
            noise_scale: 0.2,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, dir.path()).unwrap();
        // Spearman correlation between true rate and observed event time on
        // uncensored subjects.
        let pairs: Vec<(f64, f64)> = ds
            .records
            .iter()
            .zip(&ds.latent)
            .filter(|(r, _)| r.censor == 0)
            .map(|(r, l)| (l.event_rate, r.time_months))
            .collect();
        let rho = spearman(&pairs);
        assert!(rho <= -0.5, "Spearman {rho} not negative enough");
    }

    fn ranks(values: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let mut out = vec![0.0; values.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j < idx.len() && values[idx[j]] == values[idx[i]] {
                j += 1;
            }
            let mean_rank = (i + j - 1) as f64 / 2.0;
            for k in i..j {
                out[idx[k]] = mean_rank;
            }
            i = j;
        }
        out
    }

    fn spearman(pairs: &[(f64, f64)]) -> f64 {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let rx = ranks(&xs);
        let ry = ranks(&ys);
        let n = rx.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (a, b) in rx.iter().zip(&ry) {
            cov += (a - mx) * (b - my);
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
        }
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn generated_manifest_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_patients: 10,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, dir.path()).unwrap();
        let manifest = read_manifest(&ds.manifest_path).unwrap();
        assert_eq!(manifest.len(), 10);
        let dataset = crate::data::Dataset::open(&ds.manifest_path).unwrap();
        for i in 0..dataset.len() {
            let bag = dataset.load_bag(i).unwrap();
            assert_eq!(bag.genomics.rows(), cfg.m_g);
            assert!(bag.pathology.rows() >= cfg.m_p_min);
        }
    }
}
