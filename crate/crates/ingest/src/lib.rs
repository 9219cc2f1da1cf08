//! Hardware-free sensor pipeline: a CRC-protected framed PCM protocol, a
//! concurrent TCP server that assembles clips per device, classifies them and
//! appends detections to a JSON-lines store, and a device simulator.

pub mod crc;
pub mod frame;
pub mod server;
pub mod simulate;
pub mod store;

pub use crc::crc32;
pub use frame::{decode_frame, encode_frame, read_frame, DeviceFrame, FrameError};
pub use server::{serve, Classifier, ServeError, ServerConfig, ServerHandle, ServerStats};
pub use simulate::{simulate_device, stream_pcm, SimConfig, SimError, SimSource};
pub use store::{query_store, DetectionRecord, QueryResult, StoreFilter, StoreWriter};
