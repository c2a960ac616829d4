//! Random particle fields with a guaranteed minimum pairwise distance.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// A spherical scatterer. Position is the sphere centre in um.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Diameter in um.
    #[serde(rename = "D")]
    pub d: f64,
    /// Refractive-index contrast against the medium.
    pub dn: f64,
}

/// A set of particles inside a rectangular physical volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleField {
    pub particles: Vec<Particle>,
    /// Physical volume dimensions in um.
    pub dims: [f64; 3],
    /// Particles per microlitre.
    pub density_per_ul: f64,
    pub min_dist: f64,
    pub seed: u64,
}

/// Sidecar written next to the JSON-lines particle list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub dims_um: [f64; 3],
    pub density_per_ul: f64,
    pub min_dist_um: f64,
    pub seed: u64,
    pub count: usize,
}

const CUBIC_UM_PER_UL: f64 = 1.0e9;

/// Number of particles implied by a density and a physical volume.
pub fn particle_count(density_per_ul: f64, dims: [f64; 3]) -> usize {
    let vol_ul = dims[0] * dims[1] * dims[2] / CUBIC_UM_PER_UL;
    (density_per_ul * vol_ul).round() as usize
}

/// Sample particle centres with rejection so every pairwise distance is at
/// least `min_dist` and every sphere lies fully inside the volume.
///
/// Deterministic for a fixed seed. Fails with [`Error::Packing`] when the
/// requested count cannot be placed within the retry budget.
pub fn sample_particles(
    density_per_ul: f64,
    dims: [f64; 3],
    min_dist: f64,
    diameter: f64,
    index_contrast: f64,
    seed: u64,
) -> Result<ParticleField> {
    let count = particle_count(density_per_ul, dims);
    let margin = diameter / 2.0;
    if dims.iter().any(|&d| d <= diameter) {
        return Err(Error::Invalid(
            "volume too small to contain a whole particle".into(),
        ));
    }

    // Uniform hash grid with cell size >= min_dist: only 27 neighbouring
    // cells need checking per candidate.
    let cell = min_dist.max(1e-6);
    let n_cells = [
        (dims[0] / cell).ceil() as usize,
        (dims[1] / cell).ceil() as usize,
        (dims[2] / cell).ceil() as usize,
    ];
    let cell_of = |p: &[f64; 3]| -> [usize; 3] {
        [
            ((p[0] / cell) as usize).min(n_cells[0] - 1),
            ((p[1] / cell) as usize).min(n_cells[1] - 1),
            ((p[2] / cell) as usize).min(n_cells[2] - 1),
        ]
    };
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); n_cells[0] * n_cells[1] * n_cells[2]];
    let grid_index = |c: [usize; 3]| (c[2] * n_cells[1] + c[1]) * n_cells[0] + c[0];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(count);
    let max_attempts = 10_000 + 2_000 * count;
    let mut attempts = 0;

    while centers.len() < count {
        if attempts >= max_attempts {
            return Err(Error::Packing {
                placed: centers.len(),
                requested: count,
                attempts,
                min_dist,
            });
        }
        attempts += 1;
        let p = [
            rng.gen_range(margin..dims[0] - margin),
            rng.gen_range(margin..dims[1] - margin),
            rng.gen_range(margin..dims[2] - margin),
        ];
        let c = cell_of(&p);
        let mut ok = true;
        'scan: for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nc = [
                        c[0] as i64 + dx,
                        c[1] as i64 + dy,
                        c[2] as i64 + dz,
                    ];
                    if nc.iter().zip(n_cells.iter()).any(|(&v, &n)| v < 0 || v >= n as i64) {
                        continue;
                    }
                    let idx = grid_index([nc[0] as usize, nc[1] as usize, nc[2] as usize]);
                    for &pi in &grid[idx] {
                        let q = centers[pi];
                        let d2 = (p[0] - q[0]).powi(2)
                            + (p[1] - q[1]).powi(2)
                            + (p[2] - q[2]).powi(2);
                        if d2 < min_dist * min_dist {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if ok {
            grid[grid_index(c)].push(centers.len());
            centers.push(p);
        }
    }

    let particles = centers
        .into_iter()
        .map(|[x, y, z]| Particle {
            x,
            y,
            z,
            d: diameter,
            dn: index_contrast,
        })
        .collect();
    Ok(ParticleField {
        particles,
        dims,
        density_per_ul,
        min_dist,
        seed,
    })
}

impl ParticleField {
    /// Write the particle list as JSON lines `{x,y,z,D,dn}` plus a sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for p in &self.particles {
            serde_json::to_writer(&mut out, p)?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        let meta = FieldMeta {
            dims_um: self.dims,
            density_per_ul: self.density_per_ul,
            min_dist_um: self.min_dist,
            seed: self.seed,
            count: self.particles.len(),
        };
        let mut f = fs::File::create(path.with_extension("meta.json"))?;
        f.write_all(&serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: FieldMeta =
            serde_json::from_str(&fs::read_to_string(path.with_extension("meta.json"))?)?;
        let reader = BufReader::new(fs::File::open(path)?);
        let mut particles = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            particles.push(serde_json::from_str::<Particle>(&line)?);
        }
        Ok(Self {
            particles,
            dims: meta.dims_um,
            density_per_ul: meta.density_per_ul,
            min_dist: meta.min_dist_um,
            seed: meta.seed,
        })
    }
}
