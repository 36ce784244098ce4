//! Where sample images come from.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use image::RgbImage;

use super::{decode_rgb, preprocess, ImageTensor};
use crate::dataset::Sample;
use crate::error::{Error, Result};

/// Yields the preprocessed (mean-subtracted, 260×260) tensor for a sample.
pub trait ImageSource: Sync {
    fn load(&self, sample: &Sample) -> Result<ImageTensor>;
}

/// Decodes PNG/JPEG files from each sample's `image_path`, caching the
/// decoded originals (not the 260×260 tensors) in memory.
#[derive(Default)]
pub struct FileImageSource {
    cache: Mutex<HashMap<String, Arc<RgbImage>>>,
}

impl FileImageSource {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ImageSource for FileImageSource {
    fn load(&self, sample: &Sample) -> Result<ImageTensor> {
        let cached = self.cache.lock().expect("image cache poisoned").get(&sample.id).cloned();
        let raw = match cached {
            Some(raw) => raw,
            None => {
                let raw = Arc::new(decode_rgb(&sample.image_path)?);
                self.cache
                    .lock()
                    .expect("image cache poisoned")
                    .insert(sample.id.clone(), Arc::clone(&raw));
                raw
            }
        };
        preprocess(&raw)
    }
}

/// Images held in memory, keyed by sample id.
#[derive(Default)]
pub struct MemoryImageSource {
    images: HashMap<String, RgbImage>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, image: RgbImage) {
        self.images.insert(id.into(), image);
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, sample: &Sample) -> Result<ImageTensor> {
        let raw = self
            .images
            .get(&sample.id)
            .ok_or_else(|| Error::Image(format!("no in-memory image for sample {:?}", sample.id)))?;
        preprocess(raw)
    }
}
