//! Fitting `C_env` on saved profiles and checking it on held-out ones.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weisslab_core::weiss::{almost_monotonicity_check, calibrate_c_env};
use weisslab_core::{Error, Result};

use crate::pipeline::ProfileMeta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub name: String,
    pub violations: usize,
    pub worst_margin: f64,
    pub tol_disc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c_env: f64,
    pub train: Vec<String>,
    pub held_out: Vec<HeldOut>,
}

/// `*.json` profiles in `dir`, sorted by file name.
pub fn load_profiles(dir: &Path) -> Result<Vec<(String, ProfileMeta)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let meta: ProfileMeta = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
        out.push((p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), meta));
    }
    if out.is_empty() {
        return Err(Error::invalid(dir.display().to_string(), "no profile .json files"));
    }
    Ok(out)
}

/// Smallest `C_env` without training violations, and the held-out violation
/// counts at that value. `tol_disc` overrides the tolerance stored per profile.
pub fn calibrate(train: &[(String, ProfileMeta)], held_out: &[(String, ProfileMeta)], tol_disc: Option<f64>) -> Result<Calibration> {
    let pairs: Vec<_> = train
        .iter()
        .map(|(_, m)| (m.profile.clone(), tol_disc.unwrap_or(m.tol_disc)))
        .collect();
    let c_env = calibrate_c_env(&pairs)?;
    let held_out = held_out
        .iter()
        .map(|(name, m)| {
            let tol = tol_disc.unwrap_or(m.tol_disc);
            let rep = almost_monotonicity_check(&m.profile.with_c_env(c_env), tol);
            HeldOut {
                name: name.clone(),
                violations: rep.violations.len(),
                worst_margin: rep.worst_margin,
                tol_disc: tol,
            }
        })
        .collect();
    Ok(Calibration {
        c_env,
        train: train.iter().map(|(n, _)| n.clone()).collect(),
        held_out,
    })
}
