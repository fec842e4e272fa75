//! Shape space container: an ASCII header followed by little-endian `f64`
//! matrices.
//!
//! ```text
//! grasptransfer-shape-space 1
//! anchors <M>
//! latent_dim <q>
//! training_count <n>
//! kernel_width <beta>
//! centroid <x> <y> <z>
//! scale <s>
//! config_digest <sha256 hex>
//! end_header
//! <canonical M x 3><mean weights M x 3><basis q x 3M><singular values q>
//! ```
//!
//! Matrices are row-major. Floats in the header use the shortest exact
//! decimal form, so writing the same space twice gives identical bytes.

use std::fs;
use std::path::Path;

use grasptransfer_core::{NormalizationParams, Point3, PointSet, ShapeSpace};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Location, Result};

pub const MAGIC: &str = "grasptransfer-shape-space";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ShapeSpaceArchive {
    pub space: ShapeSpace,
    /// Hex SHA-256 of the canonical build-configuration string.
    pub config_digest: String,
}

pub fn config_digest(config_text: &str) -> String {
    let digest = Sha256::digest(config_text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ShapeSpaceArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.space;
        let c = s.normalization().centroid;
        let mut out = format!(
            "{MAGIC} {VERSION}\nanchors {}\nlatent_dim {}\ntraining_count {}\nkernel_width {:?}\ncentroid {:?} {:?} {:?}\nscale {:?}\nconfig_digest {}\nend_header\n",
            s.anchor_count(),
            s.latent_dim(),
            s.training_count(),
            s.kernel_width(),
            c.x,
            c.y,
            c.z,
            s.normalization().scale,
            self.config_digest
        )
        .into_bytes();
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        for p in s.canonical() {
            put(p.x);
            put(p.y);
            put(p.z);
        }
        let w = s.mean_weights();
        for i in 0..w.nrows() {
            for j in 0..3 {
                put(w[(i, j)]);
            }
        }
        let b = s.basis();
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                put(b[(i, j)]);
            }
        }
        for v in s.singular_values() {
            put(*v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut offset = 0usize;
        let mut fields: Vec<(String, Vec<String>)> = Vec::new();
        let mut lineno = 0;
        loop {
            let end = bytes[offset..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| CliError::parse(path, Location::Byte(bytes.len() as u64), "archive header is not terminated"))?;
            lineno += 1;
            let line = std::str::from_utf8(&bytes[offset..offset + end])
                .map_err(|_| CliError::parse(path, Location::Line(lineno), "archive header is not ASCII"))?;
            offset += end + 1;
            if line == "end_header" {
                break;
            }
            let mut toks = line.split_whitespace().map(String::from);
            let key = toks.next().unwrap_or_default();
            fields.push((key, toks.collect()));
        }
        let get = |key: &str| -> Result<&Vec<String>> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| CliError::schema(path, format!("archive header lacks '{key}'")))
        };
        let magic = get(MAGIC).map_err(|_| CliError::schema(path, "not a shape space archive"))?;
        if magic.first().map(String::as_str) != Some(&VERSION.to_string()) {
            return Err(CliError::schema(path, format!("unsupported archive version {magic:?}, expected {VERSION}")));
        }
        let int = |key: &str| -> Result<usize> {
            get(key)?.first().and_then(|v| v.parse().ok()).ok_or_else(|| CliError::schema(path, format!("bad '{key}'")))
        };
        let float = |key: &str, i: usize| -> Result<f64> {
            get(key)?.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::schema(path, format!("bad '{key}'")))
        };
        let m = int("anchors")?;
        let q = int("latent_dim")?;
        let n = int("training_count")?;
        let beta = float("kernel_width", 0)?;
        let centroid = Point3::new(float("centroid", 0)?, float("centroid", 1)?, float("centroid", 2)?);
        let scale = float("scale", 0)?;
        let digest = get("config_digest")?.first().cloned().unwrap_or_default();

        let expected = 8 * (3 * m + 3 * m + q * 3 * m + q);
        if bytes.len() - offset != expected {
            return Err(CliError::parse(
                path,
                Location::Byte(bytes.len() as u64),
                format!("payload is {} bytes, header implies {expected}", bytes.len() - offset),
            ));
        }
        let mut values = bytes[offset..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
        let canon = take(3 * m);
        let canonical = PointSet::new(canon.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())?;
        let mean_weights = DMatrix::from_row_slice(m, 3, &take(3 * m));
        let basis = DMatrix::from_row_slice(q, 3 * m, &take(q * 3 * m));
        let singular_values = take(q);
        let normalization = NormalizationParams::new(centroid, scale)?;
        let space = ShapeSpace::from_parts(canonical, normalization, mean_weights, basis, singular_values, beta, n)?;
        Ok(Self { space, config_digest: digest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
