use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ProgipError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Amass,
    Dip,
    Totalcapture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    /// Canonical sequence directory, relative to the catalog file.
    pub path: PathBuf,
    pub dataset: DatasetKind,
    #[serde(default)]
    pub subset: String,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn load(path: &Path) -> Result<Catalog> {
        let text = std::fs::read_to_string(path)?;
        let mut cat: Catalog =
            serde_json::from_str(&text).map_err(|e| ProgipError::format(path, e.to_string()))?;
        if let Some(base) = path.parent() {
            for e in &mut cat.entries {
                if e.path.is_relative() {
                    e.path = base.join(&e.path);
                }
            }
        }
        Ok(cat)
    }
}

/// Which AMASS subsets are held out for testing and which DIP-IMU subjects
/// form the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub amass_test_subsets: Vec<String>,
    pub dip_val_subjects: Vec<u32>,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        SplitProtocol {
            amass_test_subsets: vec!["HumanEval".into(), "Transition".into()],
            dip_val_subjects: vec![9, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<CatalogEntry>,
    pub val: Vec<CatalogEntry>,
    pub test: Vec<CatalogEntry>,
}

impl Splits {
    pub fn role(&self, role: SplitRole) -> &[CatalogEntry] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }
}

/// Subject number from labels such as `"s_09"`, `"S9"` or `"9"`.
fn subject_number(subject: &str) -> Option<u32> {
    let digits: String = subject
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Partitions a catalog: AMASS test subsets and all of TotalCapture go to
/// test, the listed DIP-IMU subjects to validation, everything else to train.
pub fn build_splits(catalog: &Catalog, protocol: &SplitProtocol) -> Result<Splits> {
    let mut splits = Splits::default();
    let has = |kind: DatasetKind| catalog.entries.iter().any(|e| e.dataset == kind);

    if has(DatasetKind::Amass) {
        for subset in &protocol.amass_test_subsets {
            let present = catalog
                .entries
                .iter()
                .any(|e| e.dataset == DatasetKind::Amass && &e.subset == subset);
            if !present {
                return Err(ProgipError::Protocol(format!("AMASS test subset {subset} missing from catalog")));
            }
        }
    }
    if has(DatasetKind::Dip) {
        let present = catalog.entries.iter().any(|e| {
            e.dataset == DatasetKind::Dip
                && subject_number(&e.subject).is_some_and(|n| protocol.dip_val_subjects.contains(&n))
        });
        if !present {
            return Err(ProgipError::Protocol("no DIP-IMU validation subjects in catalog".into()));
        }
    }

    for e in &catalog.entries {
        let role = match e.dataset {
            DatasetKind::Totalcapture => SplitRole::Test,
            DatasetKind::Amass if protocol.amass_test_subsets.contains(&e.subset) => SplitRole::Test,
            DatasetKind::Amass => SplitRole::Train,
            DatasetKind::Dip => match subject_number(&e.subject) {
                Some(n) if protocol.dip_val_subjects.contains(&n) => SplitRole::Val,
                Some(_) => SplitRole::Train,
                None => {
                    return Err(ProgipError::Protocol(format!(
                        "DIP-IMU entry {} has no subject number",
                        e.path.display()
                    )))
                }
            },
        };
        match role {
            SplitRole::Train => splits.train.push(e.clone()),
            SplitRole::Val => splits.val.push(e.clone()),
            SplitRole::Test => splits.test.push(e.clone()),
        }
    }
    Ok(splits)
}
