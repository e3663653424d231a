use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IngestWarning, PipelineError};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Path relative to the ingestion root, `/`-separated.
    pub image_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    /// SHA-256 of the file bytes.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub records: Vec<ImageRecord>,
    pub warnings: Vec<IngestWarning>,
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn read_record(root: &Path, path: &Path) -> Result<ImageRecord, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let (width, height) = image::ImageReader::new(std::io::Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map_err(|e| e.to_string())?;
    if width == 0 || height == 0 {
        return Err(format!("zero-sized image {width}x{height}"));
    }
    Ok(ImageRecord {
        image_id: relative_id(root, path),
        path: path.to_path_buf(),
        width,
        height,
        digest: hex::encode(Sha256::digest(&bytes)),
    })
}

/// PNG and JPEG files under `dir` (recursively), ordered by relative path.
/// Unreadable files become warnings; `limit` applies to usable images.
pub fn ingest_images(dir: &Path, limit: Option<usize>) -> Result<IngestOutcome, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::Precondition(format!(
            "image directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths = Vec::new();
    collect(dir, &mut paths).map_err(|e| PipelineError::io(dir, e))?;
    let mut ids: Vec<(String, PathBuf)> = paths.into_iter().map(|p| (relative_id(dir, &p), p)).collect();
    ids.sort();

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (id, path) in ids {
        if limit.is_some_and(|n| records.len() >= n) {
            break;
        }
        match read_record(dir, &path) {
            Ok(r) => records.push(r),
            Err(message) => {
                log::warn!("skipping {id}: {message}");
                warnings.push(IngestWarning { path: id, message });
            }
        }
    }
    if records.is_empty() {
        return Err(PipelineError::NoImages(dir.display().to_string()));
    }
    Ok(IngestOutcome { records, warnings })
}
