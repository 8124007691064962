//! Paired-container dataset directory: `NNN_short.giar` raw inputs matched
//! with `NNN_long.giar` RGB references.

use gia_core::container::{self, Payload};
use gia_core::raw::{preprocess, Sample, RATIO_CAP};
use gia_core::{Error, Result};
use std::path::{Path, PathBuf};

/// Scans `dir` for short/long pairs, preprocessing each short frame against
/// the exposure stored in its long reference.
pub fn load_pairs(dir: &Path) -> Result<Vec<Sample>> {
    let mut shorts: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.ends_with("_short.giar"))
                .unwrap_or(false)
        })
        .collect();
    shorts.sort();
    if shorts.is_empty() {
        return Err(Error::Invalid {
            op: "dataset",
            what: format!("no *_short.giar pairs in {}", dir.display()),
        });
    }
    let mut pairs = Vec::with_capacity(shorts.len());
    for short_path in shorts {
        let name = short_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap()
            .to_string();
        let long_path = short_path.with_file_name(name.replace("_short.giar", "_long.giar"));
        let frame = match container::read(&short_path)? {
            Payload::Raw(f) => f,
            _ => {
                return Err(Error::Inconsistent {
                    path: short_path.display().to_string(),
                    what: "expected a raw mosaic container".to_string(),
                })
            }
        };
        let (target, exposure) = match container::read(&long_path)? {
            Payload::Rgb { tensor, exposure_s } => (tensor, exposure_s),
            _ => {
                return Err(Error::Inconsistent {
                    path: long_path.display().to_string(),
                    what: "expected an RGB container".to_string(),
                })
            }
        };
        let input = preprocess(&frame, exposure, RATIO_CAP)?;
        pairs.push(Sample {
            input,
            target,
            id: name.replace("_short.giar", ""),
        });
    }
    Ok(pairs)
}
