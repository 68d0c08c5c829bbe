//! Dataset descriptions.
//!
//! ```json
//! {
//!   "prompt": "Please describe this image in detail.",
//!   "annotations": "annotations.json",
//!   "vocab": "vocab.json",
//!   "images": ["img-0000", "img-0001"],
//!   "image_refs": {"img-0000": "/data/coco/000000000139.jpg"}
//! }
//! ```
//!
//! Paths are relative to the dataset file. `vocab` defaults to the bundled
//! MSCOCO table, `images` to every annotated image, and `image_refs` maps an
//! image id to the handle sent to the backend (the id itself by default).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sumgd_core::metrics::{Annotations, ObjectVocabulary};

use crate::{read, CliError};

pub const DEFAULT_PROMPT: &str = "Please describe this image in detail.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    #[serde(default)]
    pub prompt: Option<String>,
    pub annotations: PathBuf,
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub images: Option<Vec<String>>,
    #[serde(default)]
    pub image_refs: BTreeMap<String, String>,
}

pub struct Dataset {
    pub path: PathBuf,
    pub prompt: String,
    pub annotations_path: PathBuf,
    pub vocab_path: Option<PathBuf>,
    pub images: Vec<String>,
    pub image_refs: BTreeMap<String, String>,
    /// Objects as written in the annotation file.
    pub raw_annotations: BTreeMap<String, Vec<String>>,
    pub annotations: Annotations,
    pub vocab: ObjectVocabulary,
    /// Hash of the image list, annotations and vocabulary.
    pub fingerprint: String,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file: DatasetFile =
            serde_json::from_str(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let annotations_path = base.join(&file.annotations);
        let vocab_path = file.vocab.as_ref().map(|v| base.join(v));
        Self::assemble(path.to_path_buf(), file, annotations_path, vocab_path)
    }

    /// A dataset from explicit annotation and vocabulary files.
    pub fn from_parts(annotations: &Path, vocab: Option<&Path>) -> Result<Self, CliError> {
        let file = DatasetFile {
            prompt: None,
            annotations: annotations.to_path_buf(),
            vocab: vocab.map(Path::to_path_buf),
            images: None,
            image_refs: BTreeMap::new(),
        };
        Self::assemble(PathBuf::new(), file, annotations.to_path_buf(), vocab.map(Path::to_path_buf))
    }

    fn assemble(
        path: PathBuf,
        file: DatasetFile,
        annotations_path: PathBuf,
        vocab_path: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let (vocab, vocab_text) = match &vocab_path {
            Some(p) => {
                let text = read(p)?;
                (ObjectVocabulary::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?, text)
            }
            None => (ObjectVocabulary::builtin().clone(), "builtin".to_string()),
        };
        let ann_text = read(&annotations_path)?;
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&ann_text)
            .map_err(|e| CliError::Data(format!("{}: {e}", annotations_path.display())))?;
        let annotations = Annotations::new(raw.clone(), &vocab)
            .map_err(|e| CliError::Data(format!("{}: {e}", annotations_path.display())))?;
        let images = match file.images {
            Some(list) => {
                if let Some(missing) = list.iter().find(|i| annotations.get(i).is_none()) {
                    return Err(CliError::Data(format!("image {missing:?} has no annotation")));
                }
                list
            }
            None => raw.keys().cloned().collect(),
        };
        if images.is_empty() {
            return Err(CliError::Data("dataset has no images".into()));
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&images).expect("ids serialize"));
        h.update(serde_json::to_vec(&annotations).expect("annotations serialize"));
        h.update(vocab_text.as_bytes());
        let fingerprint = hex::encode(&h.finalize()[..8]);
        Ok(Self {
            path,
            prompt: file.prompt.unwrap_or_else(|| DEFAULT_PROMPT.to_string()),
            annotations_path,
            vocab_path,
            images,
            image_refs: file.image_refs,
            raw_annotations: raw,
            annotations,
            vocab,
            fingerprint,
        })
    }

    /// Handle sent to the backend for `image`.
    pub fn image_ref<'a>(&'a self, image: &'a str) -> &'a str {
        self.image_refs.get(image).map_or(image, String::as_str)
    }
}
