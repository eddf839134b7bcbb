//! Frame relay core: data model, wire codec, processing framework, the
//! built-in processors and frame sources.

pub mod fnv;
pub mod framework;
pub mod model;
pub mod processors;
pub mod source;
pub mod wire;

pub use fnv::fnv1a32;
pub use framework::{
    CreateError, Mailbox, ProcessOutput, Processor, ProcessorDescriptor, ProcessorError, ProcessorOptions, Registry,
    SessionPipeline, Utterance,
};
pub use model::{
    Annotation, AnnotationKind, Description, Frame, LumaImage, PixelBox, PixelFormat, Priority, ProcessResult,
    ProcessorId,
};
pub use processors::{builtin_registry, register_builtins, VlmConfig};
pub use source::{FrameSource, SourceSpec};
pub use wire::{decode_body, decode_message, encode_message, encode_tcp, DecodeOutcome, StreamDecoder, WireMessage};
