//! Concurrent TCP ingestion: per-device reassembly, classification and storage.

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use woodpest::audio::{from_pcm16, write_pcm16, AudioClip, CANONICAL_CLIP_SECONDS, CANONICAL_RATE};
use woodpest::dataset::conform_clip;
use woodpest::mfcc::{FeatureExtractor, StandardizeStats};
use woodpest::models::{self, kind_of, ModelKind, Prediction};
use woodpest::nn::{Checkpoint, ModelGraph, ParamSet};

use crate::frame::{read_frame, DeviceFrame, FrameError};
use crate::store::{DetectionRecord, StoreWriter};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot open detection store {path}: {source}")]
    Store { path: PathBuf, source: io::Error },
    #[error("archive directory {path}: {source}")]
    Archive { path: PathBuf, source: io::Error },
    #[error("model: {0}")]
    Model(#[from] woodpest::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// A checkpointed model plus the featurization it was trained with.
pub struct Classifier {
    kind: ModelKind,
    graph: ModelGraph,
    params: ParamSet<f64>,
    stats: StandardizeStats<f64>,
    extractor: FeatureExtractor<f64>,
    id: String,
}

impl Classifier {
    pub fn from_checkpoint(ckpt: &Checkpoint, id: impl Into<String>) -> Result<Self, ServeError> {
        let graph = ckpt.graph()?;
        let (Some(cfg), Some(stats)) = (ckpt.header.feature_config.clone(), ckpt.header.standardize.clone()) else {
            return Err(ServeError::Config("checkpoint carries no feature configuration".into()));
        };
        Ok(Self {
            kind: kind_of(&graph)?,
            params: ckpt.params_as(),
            graph,
            stats,
            extractor: FeatureExtractor::new(cfg, CANONICAL_RATE)?,
            id: id.into(),
        })
    }

    /// Loads a checkpoint file; its id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        let path = path.as_ref();
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        Self::from_checkpoint(&Checkpoint::load(path)?, id)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Resamples to the canonical rate, pads or trims to `clip_seconds`, then predicts.
    pub fn classify(&self, clip: &AudioClip, clip_seconds: f64) -> Result<Prediction, ServeError> {
        let n = (clip_seconds * CANONICAL_RATE as f64).round() as usize;
        let clip = conform_clip(clip, CANONICAL_RATE, n)?;
        let m = self.extractor.extract_clip(&clip)?;
        let set = models::prepare_features(self.kind, &[&m], &[woodpest::audio::ClipLabel::Clean], &self.stats)?;
        Ok(models::predict_set(&self.graph, &self.params, &set)?.remove(0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub bind: String,
    pub store: PathBuf,
    pub archive_dir: Option<PathBuf>,
    pub clip_seconds: f64,
}

impl ServerConfig {
    pub fn new(bind: impl Into<String>, store: impl Into<PathBuf>) -> Self {
        Self { bind: bind.into(), store: store.into(), archive_dir: None, clip_seconds: CANONICAL_CLIP_SECONDS }
    }
}

#[derive(Debug, Default)]
pub struct Counters {
    pub connections: AtomicU64,
    pub frames: AtomicU64,
    pub integrity_errors: AtomicU64,
    pub protocol_errors: AtomicU64,
    pub truncated: AtomicU64,
    pub duplicates: AtomicU64,
    /// Missing sequence numbers.
    pub gaps: AtomicU64,
    pub zero_filled_samples: AtomicU64,
    pub clips: AtomicU64,
    pub classify_errors: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    pub connections: u64,
    pub frames: u64,
    pub integrity_errors: u64,
    pub protocol_errors: u64,
    pub truncated: u64,
    pub duplicates: u64,
    pub gaps: u64,
    pub zero_filled_samples: u64,
    pub clips: u64,
    pub classify_errors: u64,
    pub records_written: u64,
}

impl Counters {
    fn bump(c: &AtomicU64, by: u64) {
        c.fetch_add(by, Ordering::SeqCst);
    }

    fn snapshot(&self, written: u64) -> ServerStats {
        let g = |c: &AtomicU64| c.load(Ordering::SeqCst);
        ServerStats {
            connections: g(&self.connections),
            frames: g(&self.frames),
            integrity_errors: g(&self.integrity_errors),
            protocol_errors: g(&self.protocol_errors),
            truncated: g(&self.truncated),
            duplicates: g(&self.duplicates),
            gaps: g(&self.gaps),
            zero_filled_samples: g(&self.zero_filled_samples),
            clips: g(&self.clips),
            classify_errors: g(&self.classify_errors),
            records_written: written,
        }
    }
}

#[derive(Debug, Default)]
struct Session {
    next_seq: Option<u32>,
    sample_rate: u32,
    buffer: Vec<i16>,
    /// Samples of this device already emitted as clips.
    emitted: u64,
    clips: u64,
}

struct Shared {
    config: ServerConfig,
    classifier: Arc<Classifier>,
    counters: Counters,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    records: Mutex<Sender<DetectionRecord>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn session(&self, device_id: u64) -> Arc<Mutex<Session>> {
        let mut map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        Arc::clone(map.entry(device_id).or_default())
    }

    fn handle_frame(&self, frame: DeviceFrame) {
        if frame.sample_rate == 0 {
            Counters::bump(&self.counters.protocol_errors, 1);
            return;
        }
        Counters::bump(&self.counters.frames, 1);
        let session = self.session(frame.device_id);
        let mut s = session.lock().unwrap_or_else(|e| e.into_inner());
        if s.sample_rate != 0 && s.sample_rate != frame.sample_rate {
            log::warn!(
                "device {} changed rate {} -> {}; dropping {} buffered samples",
                frame.device_id,
                s.sample_rate,
                frame.sample_rate,
                s.buffer.len()
            );
            s.emitted += s.buffer.len() as u64;
            s.buffer.clear();
        }
        s.sample_rate = frame.sample_rate;
        if let Some(expected) = s.next_seq {
            if frame.seq < expected {
                Counters::bump(&self.counters.duplicates, 1);
                return;
            }
            let missing = frame.seq - expected;
            if missing > 0 {
                // missing frames are assumed to be the size of the one that follows them
                let fill = missing as usize * frame.n_samples();
                log::warn!("device {}: {missing} frame(s) missing before seq {}", frame.device_id, frame.seq);
                Counters::bump(&self.counters.gaps, missing as u64);
                Counters::bump(&self.counters.zero_filled_samples, fill as u64);
                let new_len = s.buffer.len() + fill;
                s.buffer.resize(new_len, 0);
            }
        }
        s.next_seq = Some(frame.seq.wrapping_add(1));
        s.buffer.extend(frame.samples());
        let window = (self.config.clip_seconds * s.sample_rate as f64).round().max(1.0) as usize;
        while s.buffer.len() >= window {
            let clip: Vec<i16> = s.buffer.drain(..window).collect();
            let start = s.emitted;
            let index = s.clips;
            s.emitted += window as u64;
            s.clips += 1;
            self.emit(frame.device_id, index, start, s.sample_rate, &clip);
        }
    }

    fn emit(&self, device_id: u64, index: u64, start: u64, rate: u32, pcm: &[i16]) {
        Counters::bump(&self.counters.clips, 1);
        if let Some(dir) = &self.config.archive_dir {
            let path = dir.join(format!("device_{device_id}_clip_{index:06}.wav"));
            if let Err(e) = write_pcm16(&path, pcm, rate) {
                log::error!("archiving {}: {e}", path.display());
            }
        }
        let prediction = AudioClip::new(pcm.iter().map(|&v| from_pcm16(v)).collect(), rate)
            .map_err(ServeError::from)
            .and_then(|clip| self.classifier.classify(&clip, self.config.clip_seconds));
        match prediction {
            Ok(p) => {
                let record = DetectionRecord {
                    timestamp: Utc::now(),
                    device_id,
                    clip_start: start,
                    clip_length: pcm.len() as u64,
                    label: p.label,
                    p_infested: p.p_infested(),
                    checkpoint_id: self.classifier.id().to_string(),
                };
                log::info!("device {device_id} clip {index}: {} (p = {:.3})", record.label, record.p_infested);
                let tx = self.records.lock().unwrap_or_else(|e| e.into_inner());
                if tx.send(record).is_err() {
                    log::error!("detection store is closed");
                }
            }
            Err(e) => {
                Counters::bump(&self.counters.classify_errors, 1);
                log::error!("device {device_id} clip {index}: {e}");
            }
        }
    }
}

/// Retries read timeouts until shutdown so frames are never split by a poll.
struct PatientReader<'a> {
    stream: TcpStream,
    shutdown: &'a AtomicBool,
}

impl Read for PatientReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            match self.stream.read(buf) {
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if self.shutdown.load(Ordering::SeqCst) {
                        return Err(e);
                    }
                }
                other => return other,
            }
        }
    }
}

fn serve_connection(shared: &Shared, stream: TcpStream, peer: SocketAddr) {
    Counters::bump(&shared.counters.connections, 1);
    if let Err(e) = stream.set_read_timeout(Some(POLL * 5)) {
        log::error!("{peer}: {e}");
        return;
    }
    let mut reader = io::BufReader::new(PatientReader { stream, shutdown: &shared.shutdown });
    loop {
        match read_frame(&mut reader) {
            Ok(Some(frame)) => shared.handle_frame(frame),
            Ok(None) => break,
            Err(FrameError::Integrity { expected, actual }) => {
                Counters::bump(&shared.counters.integrity_errors, 1);
                log::warn!("{peer}: dropped frame with bad checksum ({expected:#010x} != {actual:#010x})");
            }
            Err(FrameError::Protocol(msg)) => {
                Counters::bump(&shared.counters.protocol_errors, 1);
                log::warn!("{peer}: {msg}; closing connection");
                break;
            }
            Err(FrameError::Truncated(msg)) => {
                Counters::bump(&shared.counters.truncated, 1);
                log::warn!("{peer}: {msg}");
                break;
            }
            Err(FrameError::Io(e)) => {
                if !shared.shutdown.load(Ordering::SeqCst) {
                    log::warn!("{peer}: {e}");
                }
                break;
            }
        }
    }
    log::debug!("{peer}: connection closed");
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
    store: Option<StoreWriter>,
    written: Arc<AtomicU64>,
}

/// Binds, opens the store and starts accepting connections in the background.
pub fn serve(config: ServerConfig, classifier: Arc<Classifier>) -> Result<ServerHandle, ServeError> {
    if !(config.clip_seconds > 0.0 && config.clip_seconds.is_finite()) {
        return Err(ServeError::Config(format!("clip length must be positive, got {}", config.clip_seconds)));
    }
    if let Some(dir) = &config.archive_dir {
        std::fs::create_dir_all(dir).map_err(|source| ServeError::Archive { path: dir.clone(), source })?;
    }
    let store = StoreWriter::open(&config.store).map_err(|source| ServeError::Store { path: config.store.clone(), source })?;
    let listener = TcpListener::bind(&config.bind).map_err(|source| ServeError::Bind { addr: config.bind.clone(), source })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        config,
        classifier,
        counters: Counters::default(),
        sessions: Mutex::new(HashMap::new()),
        records: Mutex::new(store.sender()),
        shutdown: AtomicBool::new(false),
    });
    let written = store.written();
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new().name("ingest-accept".into()).spawn(move || accept_loop(&listener, &shared))?
    };
    log::info!("listening on {addr}");
    Ok(ServerHandle { addr, shared, acceptor: Some(acceptor), store: Some(store), written })
}

fn accept_loop(listener: &TcpListener, shared: &Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = stream.set_nonblocking(false) {
                    log::error!("{peer}: {e}");
                    continue;
                }
                let shared = Arc::clone(shared);
                match thread::Builder::new().name(format!("ingest-{peer}")).spawn(move || serve_connection(&shared, stream, peer)) {
                    Ok(h) => workers.push(h),
                    Err(e) => log::error!("spawning session for {peer}: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        self.shared.counters.snapshot(self.written.load(Ordering::SeqCst))
    }

    /// Polls until at least `n` records are persisted; false on timeout.
    pub fn wait_for_records(&self, n: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.written.load(Ordering::SeqCst) < n {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
        true
    }

    /// Blocks until `stop` is set, then shuts down.
    pub fn run_until(self, stop: &AtomicBool) -> Result<ServerStats, ServeError> {
        while !stop.load(Ordering::SeqCst) {
            thread::sleep(POLL);
        }
        self.shutdown()
    }

    /// Stops accepting, closes sessions, drains the store and returns final counters.
    pub fn shutdown(mut self) -> Result<ServerStats, ServeError> {
        self.stop()?;
        Ok(self.stats())
    }

    fn stop(&mut self) -> Result<(), ServeError> {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        // replace the shared sender so the writer sees every sender gone
        let (dummy, _) = std::sync::mpsc::channel();
        drop(std::mem::replace(&mut *self.shared.records.lock().unwrap_or_else(|e| e.into_inner()), dummy));
        if let Some(store) = self.store.take() {
            store.close()?;
        }
        Ok(())
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Err(e) = self.stop() {
            log::error!("server shutdown: {e}");
        }
    }
}
