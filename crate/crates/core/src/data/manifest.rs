//! `manifest.csv` dataset directories.

use std::fs;
use std::path::Path;

use crate::data::{pnm, resize::binarize, DataSource, Dataset, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: [&str; 4] = ["case_id", "image_path", "mask_path", "label"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(format!("{}: {e}", path.display()))
}

/// Loads every manifest row; masks are binarized at 0.5 and each label is
/// cross-checked against its mask.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = root.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(&manifest, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Dataset(format!(
            "{}: header must be `{}`",
            manifest.display(),
            HEADER.join(",")
        )));
    }
    let mut samples = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(&manifest, e))?;
        let id = &row[0];
        let label = match &row[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Dataset(format!("{id}: label must be 0 or 1, got `{other}`"))),
        };
        let image = pnm::read(&root.join(&row[1]))?;
        let mask_raw = pnm::read(&root.join(&row[2]))?;
        if mask_raw.shape()[0] != 1 {
            return Err(Error::Dataset(format!("{id}: mask must be grayscale")));
        }
        let mask = binarize(&mask_raw, 0.5);
        let has_fg = mask.data().contains(&1.0);
        if has_fg != label {
            return Err(Error::Dataset(format!(
                "{id}: manifest label {} contradicts its mask ({} foreground)",
                u8::from(label),
                if has_fg { "has" } else { "no" }
            )));
        }
        samples.push(Sample {
            case_id: id.to_string(),
            image,
            mask,
            label,
            modality: "FLAIR".into(),
        });
    }
    Dataset::new(samples, DataSource::Real)
}

/// Writes `images/`, `masks/` and `manifest.csv` under `root`. Images are
/// stored as 16-bit PGM/PPM, masks as 8-bit PGM.
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    for dir in ["images", "masks"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let manifest = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(&manifest, e))?;
    for s in &dataset.samples {
        let ext = if s.channels() == 3 { "ppm" } else { "pgm" };
        let image_rel = format!("images/{}.{ext}", s.case_id);
        let mask_rel = format!("masks/{}_mask.pgm", s.case_id);
        pnm::write(&root.join(&image_rel), &s.image, 65535)?;
        pnm::write(&root.join(&mask_rel), &s.mask, 255)?;
        let label = if s.label { "1" } else { "0" };
        w.write_record([s.case_id.as_str(), &image_rel, &mask_rel, label])
            .map_err(|e| csv_error(&manifest, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))
}
