use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{DatasetError, DocumentRecord};
use crate::imaging::{self, GrayImage};

/// Network input: one channel of `[0, 1]` intensities, `height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl InputTensor {
    pub fn from_image(img: GrayImage) -> Self {
        let (height, width) = (img.height(), img.width());
        Self {
            channels: 1,
            height,
            width,
            values: img.into_pixels(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Loads, converts to grayscale and resizes a document to the network input shape.
pub fn preprocess(record: &DocumentRecord, target_h: usize, target_w: usize) -> Result<InputTensor, DatasetError> {
    let img = imaging::load_grayscale(&record.image_path)?;
    let resized = imaging::resize_bilinear(&img, target_w, target_h)?;
    Ok(InputTensor::from_image(resized))
}

/// Source of network inputs for documents.
pub trait Preprocessor: Sync {
    fn input_shape(&self) -> (usize, usize);

    fn tensor(&self, record: &DocumentRecord) -> Result<Arc<InputTensor>, DatasetError>;
}

/// [`preprocess`] with a per-record memo so each file is decoded once.
#[derive(Debug)]
pub struct CachedPreprocessor {
    height: usize,
    width: usize,
    cache: Mutex<HashMap<String, Arc<InputTensor>>>,
}

impl CachedPreprocessor {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Preprocessor for CachedPreprocessor {
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn tensor(&self, record: &DocumentRecord) -> Result<Arc<InputTensor>, DatasetError> {
        if let Some(t) = self.cache.lock().expect("cache lock").get(&record.id) {
            return Ok(Arc::clone(t));
        }
        let tensor = Arc::new(preprocess(record, self.height, self.width)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(record.id.clone(), Arc::clone(&tensor));
        Ok(tensor)
    }
}
