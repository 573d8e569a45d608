//! Labelled fundus images: label files, splits, decoding, augmentation and batching.

mod augment;
mod batch;
mod fixture;
mod image;
mod labels;
mod split;

pub use self::augment::{apply as apply_transform, augment, mirror, AugmentParams, Transform};
pub use self::batch::{batches, Batch, BatchStream, ImageRecord, StreamCursor};
pub use self::fixture::{fixture_image, fixture_pixel, separable_fixture};
pub use self::image::{decode_and_resize, encode_png, find_image, load_image, INPUT_SIZE};
pub use self::labels::{binary_label, load_labels, read_labels, LabelRow, LabelSet, LabelWarning, RFMID_DISEASE_CODES};
pub use self::split::{split_dataset, validate_ratios, DatasetSplit, Part, DEFAULT_RATIOS};

use std::collections::HashMap;
use std::path::Path;

use crate::error::DataError;

/// Decodes the images of `ids` from `dir`, labelling each from `labels`.
/// Ids missing from `labels` are an error naming the id.
pub fn load_records(dir: &Path, ids: &[String], labels: &HashMap<String, u8>) -> Result<Vec<ImageRecord>, DataError> {
    use rayon::prelude::*;
    ids.par_iter()
        .map(|id| {
            let label =
                *labels.get(id).ok_or_else(|| DataError::MissingImage { id: id.clone(), dir: dir.to_path_buf() })?;
            let pixels = load_image(&find_image(dir, id)?)?;
            Ok(ImageRecord { id: id.clone(), pixels, label })
        })
        .collect()
}

/// Binary label per id, logging a warning for every inconsistent row.
pub fn label_map(set: &LabelSet) -> (HashMap<String, u8>, Vec<LabelWarning>) {
    let mut map = HashMap::with_capacity(set.rows.len());
    let mut warnings = Vec::new();
    for row in &set.rows {
        let (label, warning) = binary_label(row);
        map.insert(row.id.clone(), label);
        warnings.extend(warning);
    }
    (map, warnings)
}
