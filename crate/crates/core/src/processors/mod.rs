//! The built-in processors and their registration.

pub mod blob;
pub mod find_item;
pub mod glyph;
pub mod remote_vlm;
pub mod scene_change;

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use crate::framework::{Processor, ProcessorDescriptor, Registry, RegistryError};
use crate::model::ProcessorId;

pub use blob::{blobs, Blob, BlobDetect};
pub use find_item::FindItem;
pub use glyph::{GlyphFont, GlyphOcr, Token};
pub use remote_vlm::{RemoteVlm, VlmConfig};
pub use scene_change::{mad, SceneChange};

pub const SCENE_CHANGE: &str = "scene_change";
pub const BLOB_DETECT: &str = "blob_detect";
pub const GLYPH_OCR: &str = "glyph_ocr";
pub const FIND_ITEM: &str = "find_item";
pub const REMOTE_VLM: &str = "remote_vlm";

/// Ids of the built-ins, in registration order.
pub const BUILTIN_IDS: [&str; 5] = [SCENE_CHANGE, BLOB_DETECT, GLYPH_OCR, FIND_ITEM, REMOTE_VLM];

fn descriptor(id: &str, display_name: &str, remote: bool, option_keys: &'static [&'static str]) -> ProcessorDescriptor {
    ProcessorDescriptor {
        id: ProcessorId::new(id).expect("builtin ids are valid"),
        display_name: display_name.to_owned(),
        remote,
        option_keys,
    }
}

/// Registers the five built-ins. `vlm_errors` counts failed description
/// service calls across all remote_vlm instances.
pub fn register_builtins(
    registry: &mut Registry,
    vlm: VlmConfig,
    vlm_errors: Arc<AtomicU64>,
) -> Result<(), RegistryError> {
    registry.register(
        descriptor(SCENE_CHANGE, "Scene change", false, SceneChange::OPTION_KEYS),
        |o| Ok(Box::new(SceneChange::from_options(o)?) as Box<dyn Processor>),
    )?;
    registry.register(
        descriptor(BLOB_DETECT, "Object detection", false, BlobDetect::OPTION_KEYS),
        |o| Ok(Box::new(BlobDetect::from_options(o)?) as Box<dyn Processor>),
    )?;
    registry.register(descriptor(GLYPH_OCR, "Text reading", false, &[]), |_| {
        Ok(Box::new(GlyphOcr::new()) as Box<dyn Processor>)
    })?;
    registry.register(
        descriptor(FIND_ITEM, "Find item", false, FindItem::OPTION_KEYS),
        |o| Ok(Box::new(FindItem::from_options(o)?) as Box<dyn Processor>),
    )?;
    let vlm = Arc::new(vlm);
    registry.register(
        descriptor(REMOTE_VLM, "Live description", true, RemoteVlm::OPTION_KEYS),
        move |o| Ok(Box::new(RemoteVlm::new(vlm.clone(), o, vlm_errors.clone())?) as Box<dyn Processor>),
    )?;
    Ok(())
}

/// A sealed registry holding only the built-ins.
pub fn builtin_registry(vlm: VlmConfig) -> Registry {
    let mut r = Registry::new();
    register_builtins(&mut r, vlm, Arc::new(AtomicU64::new(0))).expect("builtin ids are distinct");
    r.seal();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::{CreateError, ProcessorOptions};

    #[test]
    fn five_builtins_in_order() {
        let r = builtin_registry(VlmConfig::default());
        let ids: Vec<String> = r.list_processors().iter().map(|d| d.id.to_string()).collect();
        assert_eq!(ids, BUILTIN_IDS);
        let remote: Vec<bool> = r.list_processors().iter().map(|d| d.remote).collect();
        assert_eq!(remote, [false, false, false, false, true]);
        assert!(r.list_processors().iter().all(|d| !d.display_name.is_empty()));
    }

    #[test]
    fn registering_twice_is_a_duplicate() {
        let mut r = builtin_registry(VlmConfig::default());
        assert!(matches!(
            register_builtins(&mut r, VlmConfig::default(), Arc::new(AtomicU64::new(0))),
            Err(RegistryError::Sealed)
        ));
        let mut r = Registry::new();
        register_builtins(&mut r, VlmConfig::default(), Arc::new(AtomicU64::new(0))).unwrap();
        assert!(matches!(
            register_builtins(&mut r, VlmConfig::default(), Arc::new(AtomicU64::new(0))),
            Err(RegistryError::Duplicate(_))
        ));
    }

    #[test]
    fn find_item_creation() {
        let r = builtin_registry(VlmConfig::default());
        assert!(r.create_for_session(FIND_ITEM, &ProcessorOptions::parse("term=KEYS").unwrap()).is_ok());
        assert!(matches!(
            r.create_for_session(FIND_ITEM, &ProcessorOptions::parse("term=").unwrap()),
            Err(CreateError::BadOptions(_))
        ));
        assert!(matches!(
            r.create_for_session("nope", &ProcessorOptions::default()),
            Err(CreateError::UnknownId(_))
        ));
    }
}
