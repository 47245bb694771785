//! Generating vectors cached on disk, one file per `(level, N, s)`.
//!
//! Each file header carries a digest of everything the CBC result depends on
//! (`N`, build dimension, weights). A file whose digest does not match, or that
//! fails to parse, is rebuilt with a warning.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use mlqmc_evp::lattice::{cbc_construct, read_generating_vector, write_generating_vector, PodWeights};
use mlqmc_evp::mlqmc::{VectorMode, VectorSource};
use mlqmc_evp::{Error, Result};

use crate::config::hex;

#[derive(Debug)]
pub struct DiskCbcSource {
    dir: PathBuf,
    weights: PodWeights,
    mode: VectorMode,
    master: Mutex<HashMap<usize, Vec<u64>>>,
    built: AtomicUsize,
    reused: AtomicUsize,
    warnings: Mutex<Vec<String>>,
}

impl DiskCbcSource {
    pub fn new(dir: impl Into<PathBuf>, weights: PodWeights, mode: VectorMode) -> Self {
        DiskCbcSource {
            dir: dir.into(),
            weights,
            mode,
            master: Mutex::new(HashMap::new()),
            built: AtomicUsize::new(0),
            reused: AtomicUsize::new(0),
            warnings: Mutex::new(Vec::new()),
        }
    }

    /// CBC constructions performed.
    pub fn built(&self) -> usize {
        self.built.load(Ordering::Relaxed)
    }

    /// Vectors served from valid cache files.
    pub fn reused(&self) -> usize {
        self.reused.load(Ordering::Relaxed)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warning log poisoned").clone()
    }

    pub fn path(&self, ell: usize, n: usize, s: usize) -> PathBuf {
        self.dir.join(format!("z_l{ell}_N{n}_s{s}.txt"))
    }

    fn build_dim(&self, s: usize) -> usize {
        match self.mode {
            VectorMode::PerLevel => s,
            VectorMode::Master => self.weights.dim(),
        }
    }

    pub fn digest(&self, n: usize, s: usize) -> String {
        let build_dim = self.build_dim(s);
        let key = format!(
            "cbc-v1;N={n};s={s};build={build_dim};weights={}",
            self.weights.truncated(build_dim).canonical()
        );
        hex(&Sha256::digest(key.as_bytes()))[..32].to_string()
    }

    fn warn(&self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.lock().expect("warning log poisoned").push(msg);
    }

    fn cached(&self, path: &Path, n: usize, s: usize, digest: &str) -> Option<Vec<u64>> {
        let file = fs::File::open(path).ok()?;
        match read_generating_vector(BufReader::new(file)) {
            Ok(vf) if vf.digest.as_deref() == Some(digest) && vf.n == n && vf.z.len() == s => Some(vf.z),
            Ok(_) => {
                self.warn(format!("{} has stale parameters; rebuilding", path.display()));
                None
            }
            Err(e) => {
                self.warn(format!("{} is corrupt ({e}); rebuilding", path.display()));
                None
            }
        }
    }

    fn construct(&self, n: usize, s: usize) -> Result<Vec<u64>> {
        match self.mode {
            VectorMode::PerLevel => {
                self.built.fetch_add(1, Ordering::Relaxed);
                cbc_construct(n, s, &self.weights.truncated(s))
            }
            VectorMode::Master => {
                let mut master = self.master.lock().expect("master cache poisoned");
                if let Some(z) = master.get(&n) {
                    return Ok(z[..s].to_vec());
                }
                self.built.fetch_add(1, Ordering::Relaxed);
                let z = cbc_construct(n, self.weights.dim(), &self.weights)?;
                master.insert(n, z.clone());
                Ok(z[..s].to_vec())
            }
        }
    }
}

impl VectorSource for DiskCbcSource {
    fn generating_vector(&self, ell: usize, n: usize, s: usize) -> Result<Vec<u64>> {
        if s > self.weights.dim() {
            return Err(Error::InvalidArgument(format!(
                "weights cover {} < {s} dimensions",
                self.weights.dim()
            )));
        }
        let path = self.path(ell, n, s);
        let digest = self.digest(n, s);
        if path.exists() {
            if let Some(z) = self.cached(&path, n, s, &digest) {
                self.reused.fetch_add(1, Ordering::Relaxed);
                return Ok(z);
            }
        }
        let z = self.construct(n, s)?;
        fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension("tmp");
        let mut buf = Vec::new();
        write_generating_vector(&mut buf, n, &z, Some(&digest))?;
        fs::write(&tmp, buf)?;
        fs::rename(&tmp, &path)?;
        Ok(z)
    }
}
