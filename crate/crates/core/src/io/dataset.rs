use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{idx, pnm};
use crate::error::{Error, Result};
use crate::field::{PixelField, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Idx,
    ImageDir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirLayout {
    /// Every image file directly inside the directory, unlabeled.
    #[default]
    Flat,
    /// One subdirectory per class; labels follow the lexicographic order of
    /// the subdirectory names.
    PerClass,
}

/// Decoded images of one shape, with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub source: SourceKind,
    pub shape: Shape,
    pub images: Vec<PixelField>,
    pub labels: Option<Vec<u32>>,
    /// Name of each label value, indexed by label.
    pub class_names: Vec<String>,
    /// Zero padding `[top, bottom, left, right]` applied at load time.
    pub padding: Option<[usize; 4]>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps only images with label `label`.
    pub fn filter_label(mut self, label: u32) -> Result<Self> {
        let labels = self
            .labels
            .take()
            .ok_or_else(|| Error::InvalidParameter("dataset has no labels".into()))?;
        let (images, labels): (Vec<_>, Vec<_>) =
            self.images.into_iter().zip(labels).filter(|(_, l)| *l == label).unzip();
        self.images = images;
        self.labels = Some(labels);
        Ok(self)
    }

    /// Keeps the first `n` images.
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        if let Some(l) = &mut self.labels {
            l.truncate(n);
        }
        self
    }

    /// Distinct labels in increasing order with the images carrying each.
    pub fn by_class(&self) -> Vec<(u32, Vec<&PixelField>)> {
        let Some(labels) = &self.labels else {
            return Vec::new();
        };
        let mut classes: Vec<u32> = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
            .into_iter()
            .map(|c| {
                let members = self
                    .images
                    .iter()
                    .zip(labels)
                    .filter(|(_, l)| **l == c)
                    .map(|(x, _)| x)
                    .collect();
                (c, members)
            })
            .collect()
    }

    pub fn class_name(&self, label: u32) -> String {
        self.class_names
            .get(label as usize)
            .cloned()
            .unwrap_or_else(|| label.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Symmetric zero padding of a `rows x cols` image to `size x size`.
pub fn square_padding(rows: usize, cols: usize, size: usize) -> Result<[usize; 4]> {
    if size < rows || size < cols {
        return Err(Error::InvalidParameter(format!(
            "cannot pad {rows}x{cols} down to {size}x{size}"
        )));
    }
    let top = (size - rows) / 2;
    let left = (size - cols) / 2;
    Ok([top, size - rows - top, left, size - cols - left])
}

/// Builds a dataset from parsed IDX data, scaling bytes to `[0, 1]` and
/// optionally zero-padding every image to `pad_to x pad_to`.
pub fn from_idx(images: &idx::IdxImages, labels: Option<Vec<u8>>, pad_to: Option<usize>) -> Result<Dataset> {
    if let Some(l) = &labels {
        if l.len() != images.count {
            return Err(Error::CountMismatch {
                images: images.count,
                labels: l.len(),
            });
        }
    }
    let (rows, cols) = (images.rows, images.cols);
    let padding = pad_to.map(|n| square_padding(rows, cols, n)).transpose()?;
    let [top, bottom, left, right] = padding.unwrap_or([0; 4]);
    let shape = Shape::new(1, rows + top + bottom, cols + left + right)?;
    let fields = (0..images.count)
        .map(|i| {
            let src = images.image(i);
            let mut values = vec![0.0; shape.len()];
            for r in 0..rows {
                for c in 0..cols {
                    values[(r + top) * shape.width + c + left] = src[r * cols + c] as f64 / 255.0;
                }
            }
            PixelField::from_raw(shape, values)
        })
        .collect();
    let class_names = match &labels {
        Some(l) => (0..=l.iter().copied().max().unwrap_or(0))
            .map(|v| v.to_string())
            .collect(),
        None => Vec::new(),
    };
    Ok(Dataset {
        source: SourceKind::Idx,
        shape,
        images: fields,
        labels: labels.map(|l| l.into_iter().map(u32::from).collect()),
        class_names,
        padding,
    })
}

/// Loads an IDX image file and, optionally, its label file.
pub fn load_idx(images: &Path, labels: Option<&Path>, pad_to: Option<usize>) -> Result<Dataset> {
    let parsed = idx::parse_images(&read(images)?)?;
    let labels = labels
        .map(|p| read(p).and_then(|b| idx::parse_labels(&b)))
        .transpose()?;
    from_idx(&parsed, labels, pad_to)
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !is_hidden(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn decode_file(path: &Path) -> Result<PixelField> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => pnm::decode(&read(path)?).map_err(|e| match e {
            Error::Malformed { what, detail } => Error::Malformed {
                what,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        }),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} (expected .pgm or .ppm)",
            path.display()
        ))),
    }
}

fn decode_dir(dir: &Path, images: &mut Vec<PixelField>) -> Result<usize> {
    let mut n = 0;
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            return Err(Error::UnsupportedFormat(format!(
                "unexpected subdirectory {}",
                path.display()
            )));
        }
        images.push(decode_file(&path)?);
        n += 1;
    }
    Ok(n)
}

/// Loads every PGM/PPM file under `dir`. Files are visited in sorted path
/// order; hidden entries are skipped.
pub fn load_image_dir(dir: &Path, layout: DirLayout) -> Result<Dataset> {
    let mut images = Vec::new();
    let (labels, class_names) = match layout {
        DirLayout::Flat => {
            decode_dir(dir, &mut images)?;
            (None, Vec::new())
        }
        DirLayout::PerClass => {
            let mut labels = Vec::new();
            let mut names = Vec::new();
            for path in sorted_entries(dir)? {
                if !path.is_dir() {
                    return Err(Error::UnsupportedFormat(format!(
                        "{} is not a class directory",
                        path.display()
                    )));
                }
                let label = names.len() as u32;
                names.push(path.file_name().expect("entry name").to_string_lossy().into_owned());
                let n = decode_dir(&path, &mut images)?;
                labels.extend(std::iter::repeat_n(label, n));
            }
            (Some(labels), names)
        }
    };
    let shape = images
        .first()
        .ok_or(Error::Empty {
            what: "image directory",
        })?
        .shape();
    for img in &images {
        shape.expect(img.shape())?;
    }
    Ok(Dataset {
        source: SourceKind::ImageDir,
        shape,
        images,
        labels,
        class_names,
        padding: None,
    })
}

/// Writes `image` to `path` as PGM or PPM.
pub fn save_pnm(path: &Path, image: &PixelField) -> Result<()> {
    fs::write(path, pnm::encode(image)?).map_err(|e| Error::io(path, e))
}
