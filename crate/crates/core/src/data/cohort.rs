use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{load_bag, save_bag, DataError, PatientBag};
use crate::fsutil::write_atomic;

pub const MANIFEST_HEADER: &str = "patient_id,bag_path,time,event";

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub name: String,
    pub bags: Vec<PatientBag>,
}

impl Cohort {
    pub fn new(name: impl Into<String>, bags: Vec<PatientBag>) -> Result<Self, DataError> {
        let mut ids = HashSet::with_capacity(bags.len());
        for b in &bags {
            if !ids.insert(b.patient_id.as_str()) {
                return Err(DataError::DuplicatePatient(b.patient_id.clone()));
            }
        }
        Ok(Self { name: name.into(), bags })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.bags.iter().filter(|b| b.is_event()).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.bags.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<PatientBag> {
        indices.iter().map(|&i| self.bags[i].clone()).collect()
    }

    /// Writes `bags/<id>.dsb` files and `manifest.csv` under `dir`.
    /// The manifest stores `event = 1 - censor`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, DataError> {
        let mut manifest = String::from(MANIFEST_HEADER);
        manifest.push('\n');
        for bag in &self.bags {
            if bag.patient_id.contains([',', '\n', '/', '\\']) || bag.patient_id.is_empty() {
                return Err(DataError::InvalidBag(format!("patient id {:?} is not file-safe", bag.patient_id)));
            }
            let rel = format!("bags/{}.dsb", bag.patient_id);
            save_bag(bag, &dir.join(&rel))?;
            manifest.push_str(&format!("{},{},{},{}\n", bag.patient_id, rel, bag.time, 1 - bag.censor));
        }
        let path = dir.join("manifest.csv");
        write_atomic(&path, manifest.as_bytes()).map_err(|e| DataError::io(&path, e))?;
        Ok(path)
    }

    /// Reads a manifest and every bag it references. Bag paths are relative
    /// to the manifest's directory. All paths are checked before any bag is
    /// parsed.
    pub fn load_manifest(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let bad = |msg: String| DataError::Manifest { path: path.to_path_buf(), msg };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => return Err(bad(format!("expected header {MANIFEST_HEADER:?}, got {other:?}"))),
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, rel, time, event] = fields[..] else {
                return Err(bad(format!("line {}: expected 4 fields", n + 2)));
            };
            let time: f64 = time.parse().map_err(|_| bad(format!("line {}: bad time {time:?}", n + 2)))?;
            let censor = match event {
                "1" => 0,
                "0" => 1,
                _ => return Err(bad(format!("line {}: event must be 0 or 1, got {event:?}", n + 2))),
            };
            rows.push((id.to_string(), base.join(rel), time, censor));
        }
        if let Some((_, p, _, _)) = rows.iter().find(|(_, p, _, _)| !p.is_file()) {
            return Err(DataError::MissingBag(p.clone()));
        }
        let mut bags = Vec::with_capacity(rows.len());
        for (id, p, time, censor) in rows {
            let mut bag = load_bag(&p)?;
            bag.patient_id = id;
            bag.time = time;
            bag.censor = censor;
            bag.validate()?;
            bags.push(bag);
        }
        let name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::new(name, bags)
    }
}
