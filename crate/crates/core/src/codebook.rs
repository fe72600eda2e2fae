//! Token space `[K]`: embedding vectors and the distance matrix that induces
//! the metric path.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const MAX_REDRAWS: usize = 64;
const DUPLICATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookKind {
    /// Gaussian directions normalised onto the unit sphere, like a learned VQ codebook.
    RandomUnitSphere,
    /// FSQ-style lattice: `levels^dim` points uniformly spaced in `[-1, 1]^dim`.
    IntegerGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub kind: CodebookKind,
    pub k: usize,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    k: usize,
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        let k = embeddings.len();
        let dim = embeddings.first().map_or(0, Vec::len);
        let cb = Codebook { k, dim, embeddings };
        cb.validate()?;
        Ok(cb)
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 || self.dim < 1 {
            return Err(Error::invalid(format!(
                "codebook needs k >= 2 and dim >= 1, got k={} dim={}",
                self.k, self.dim
            )));
        }
        if self.embeddings.len() != self.k {
            return Err(Error::Format {
                what: "codebook",
                msg: format!("header says k={} but {} embedding rows", self.k, self.embeddings.len()),
            });
        }
        for (i, row) in self.embeddings.iter().enumerate() {
            if row.len() != self.dim {
                return Err(Error::Format {
                    what: "codebook",
                    msg: format!("row {i} has {} components, expected dim={}", row.len(), self.dim),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("embedding {i} has a non-finite component")));
            }
        }
        for i in 0..self.k {
            for j in 0..i {
                if euclidean(&self.embeddings[i], &self.embeddings[j]) <= DUPLICATE_EPS {
                    return Err(Error::invalid(format!("embeddings {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn distance_matrix(&self) -> Result<DistanceMatrix> {
        DistanceMatrix::euclidean(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cb: Codebook = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "codebook",
            msg: e.to_string(),
        })?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Deterministic codebook synthesis; a pure function of `spec`.
pub fn synth_codebook(spec: &CodebookSpec) -> Result<Codebook> {
    if spec.k < 2 || spec.dim < 1 {
        return Err(Error::invalid(format!(
            "codebook spec needs k >= 2 and dim >= 1, got k={} dim={}",
            spec.k, spec.dim
        )));
    }
    match spec.kind {
        CodebookKind::IntegerGrid => grid_codebook(spec.k, spec.dim),
        CodebookKind::RandomUnitSphere => sphere_codebook(spec.k, spec.dim, spec.seed),
    }
}

fn grid_codebook(k: usize, dim: usize) -> Result<Codebook> {
    let levels = (2..=k)
        .find(|&l| l.checked_pow(dim as u32).is_some_and(|p| p >= k))
        .filter(|&l| l.pow(dim as u32) == k)
        .ok_or_else(|| {
            Error::invalid(format!(
                "integer-grid needs k = levels^dim, k={k} is not a {dim}-th power"
            ))
        })?;
    let coord = |j: usize| -1.0 + 2.0 * j as f64 / (levels - 1) as f64;
    let embeddings = (0..k)
        .map(|mut idx| {
            // first axis most significant
            let mut row = vec![0.0; dim];
            for slot in row.iter_mut().rev() {
                *slot = coord(idx % levels);
                idx /= levels;
            }
            row
        })
        .collect();
    Codebook::new(embeddings)
}

fn sphere_codebook(k: usize, dim: usize, seed: u64) -> Result<Codebook> {
    let mut rng = crate::rng_stream(seed, 0);
    let draw = |rng: &mut crate::Rng| loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let mut embeddings: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let mut placed = false;
        for _ in 0..MAX_REDRAWS {
            let cand = draw(&mut rng);
            if embeddings.iter().all(|e| euclidean(e, &cand) > DUPLICATE_EPS) {
                embeddings.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place embedding {i} without duplicates after {MAX_REDRAWS} redraws (k={k}, dim={dim})"
            )));
        }
    }
    Codebook::new(embeddings)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dense, symmetric `k x k` matrix of pairwise embedding distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    k: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn euclidean(cb: &Codebook) -> Result<Self> {
        let k = cb.k();
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..i {
                let d = euclidean(cb.embedding(i), cb.embedding(j));
                data[i * k + j] = d;
                data[j * k + i] = d;
            }
        }
        Self::from_raw(k, data)
    }

    /// Validates and wraps a row-major `k x k` matrix.
    pub fn from_raw(k: usize, data: Vec<f64>) -> Result<Self> {
        if k < 2 || data.len() != k * k {
            return Err(Error::invalid(format!(
                "distance matrix needs k >= 2 and k*k entries, k={k}"
            )));
        }
        for i in 0..k {
            for j in 0..k {
                let d = data[i * k + j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::Numeric(format!("distance ({i},{j}) = {d}")));
                }
                if d != data[j * k + i] {
                    return Err(Error::invalid(format!("distance matrix asymmetric at ({i},{j})")));
                }
                if (i == j) != (d == 0.0) {
                    return Err(Error::invalid(format!("distance ({i},{j}) = {d} violates d=0 iff i=j")));
                }
            }
        }
        Ok(DistanceMatrix { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    /// Distances from every token to token `target`.
    pub fn row(&self, target: usize) -> &[f64] {
        &self.data[target * self.k..(target + 1) * self.k]
    }

    /// Applies a relabelling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                data[perm[i] * k + perm[j]] = self.data[i * k + j];
            }
        }
        DistanceMatrix { k, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid4() -> Codebook {
        synth_codebook(&CodebookSpec {
            kind: CodebookKind::IntegerGrid,
            k: 4,
            dim: 2,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn two_level_grid() {
        let cb = grid4();
        assert_eq!(
            cb.embeddings(),
            &[vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]]
        );
        let d = cb.distance_matrix().unwrap();
        assert!((d.get(0, 3) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d.get(0, 3) - 2.8284).abs() < 1e-4);
    }

    #[test]
    fn grid_needs_perfect_power() {
        let spec = CodebookSpec {
            kind: CodebookKind::IntegerGrid,
            k: 5,
            dim: 2,
            seed: 0,
        };
        assert!(synth_codebook(&spec).is_err());
        let spec = CodebookSpec {
            kind: CodebookKind::IntegerGrid,
            k: 27,
            dim: 3,
            seed: 0,
        };
        assert_eq!(synth_codebook(&spec).unwrap().k(), 27);
    }

    #[test]
    fn sphere_is_deterministic() {
        let spec = CodebookSpec {
            kind: CodebookKind::RandomUnitSphere,
            k: 8,
            dim: 3,
            seed: 7,
        };
        let a = serde_json::to_string(&synth_codebook(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_codebook(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_k64_all_distinct() {
        let spec = CodebookSpec {
            kind: CodebookKind::RandomUnitSphere,
            k: 64,
            dim: 4,
            seed: 1,
        };
        let d = synth_codebook(&spec).unwrap().distance_matrix().unwrap();
        for i in 0..64 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..64 {
                assert_eq!(d.get(i, j), d.get(j, i));
                if i != j {
                    assert!(d.get(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn one_dimensional_sphere_cannot_hold_three() {
        let spec = CodebookSpec {
            kind: CodebookKind::RandomUnitSphere,
            k: 3,
            dim: 1,
            seed: 3,
        };
        assert!(synth_codebook(&spec).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let text = r#"{"k": 3, "dim": 2, "embeddings": [[0.0, 0.0], [1.0, 0.0]]}"#;
        let err = Codebook::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let text = r#"{"k": 2, "dim": 2, "embeddings": [[0.0, 0.0], [1.0]]}"#;
        assert!(Codebook::from_json(text).is_err());
    }

    #[test]
    fn duplicate_rows_rejected() {
        assert!(Codebook::new(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CodebookSpec {
            kind: CodebookKind::RandomUnitSphere,
            k: 16,
            dim: 5,
            seed: 11,
        };
        let cb = synth_codebook(&spec).unwrap();
        let path = dir.path().join("cb.json");
        cb.save(&path).unwrap();
        assert_eq!(Codebook::load(&path).unwrap(), cb);
    }

    #[test]
    fn shipped_fixture() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/grid4.json");
        let cb = Codebook::load(&path).unwrap();
        assert_eq!((cb.k(), cb.dim()), (4, 2));
        assert_eq!(cb, grid4());
    }
}
