//! Plain key=value configuration files for the command-line tools.
//!
//! Recognized keys:
//! - `material.kind` (`neo-hooke` | `linear-elastic`), `material.E`, `material.nu`
//! - `rve.n_voxels`, `rve.edge_length`
//! - `rve.pores`: semicolon-separated `cx,cy,cz,r` groups

use crate::error::{Error, Result};
use crate::material::{Material, MaterialKind};
use crate::mesh::Pore;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Config {
    pub material: Material,
    pub n_voxels: usize,
    pub edge_length: f64,
    pub pores: Vec<Pore>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            material: Material::neo_hooke(1000.0, 0.25).expect("valid defaults"),
            n_voxels: 8,
            edge_length: 2.0,
            pores: vec![
                Pore {
                    center: [0.7, 0.7, 0.7],
                    radius: 0.667,
                },
                Pore {
                    center: [1.35, 1.25, 1.3],
                    radius: 0.55,
                },
            ],
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got '{line}'")))?;
            entries.insert(k.trim(), v.trim());
        }

        let defaults = Self::default();
        let kind = match entries.get("material.kind").copied() {
            None => defaults.material.kind,
            Some("neo-hooke") => MaterialKind::NeoHooke,
            Some("linear-elastic") => MaterialKind::LinearElastic,
            Some(other) => {
                return Err(Error::Config(format!("unknown material.kind '{other}'")));
            }
        };
        let parse_f64 = |key: &str, default: f64| -> Result<f64> {
            entries.get(key).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad float for {key}: '{v}'")))
            })
        };
        let e = parse_f64("material.E", defaults.material.e)?;
        let nu = parse_f64("material.nu", defaults.material.nu)?;
        let n_voxels = entries
            .get("rve.n_voxels")
            .map_or(Ok(defaults.n_voxels), |v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad integer for rve.n_voxels: '{v}'")))
            })?;
        let edge_length = parse_f64("rve.edge_length", defaults.edge_length)?;
        let pores = match entries.get("rve.pores") {
            None => defaults.pores,
            Some(spec) => parse_pores(spec)?,
        };

        Ok(Self {
            material: Material::new(kind, e, nu)?,
            n_voxels,
            edge_length,
            pores,
        })
    }
}

fn parse_pores(spec: &str) -> Result<Vec<Pore>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(Vec::new());
    }
    spec.split(';')
        .map(|group| {
            let vals: Vec<f64> = group
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad pore value '{}'", t.trim())))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 4 {
                return Err(Error::Config(format!(
                    "pore needs cx,cy,cz,r — got {} values in '{group}'",
                    vals.len()
                )));
            }
            Ok(Pore {
                center: [vals[0], vals[1], vals[2]],
                radius: vals[3],
            })
        })
        .collect()
}
