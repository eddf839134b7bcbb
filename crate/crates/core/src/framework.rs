//! Processor contract, the startup-time registry, and per-session dispatch.
//!
//! A [`Processor`] turns one [`Frame`] into annotations and an optional
//! utterance. The [`Registry`] maps processor ids to factories and is sealed
//! before sessions exist. Each session owns a [`SessionPipeline`]: a
//! capacity-1 [`Mailbox`] where a newer frame replaces an unprocessed one,
//! and the processor instance that the session's single dispatcher drives.

use std::collections::HashMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{
    check_description_text, Annotation, Description, Frame, Priority, ProcessResult, ProcessorId,
    TimingBreakdown, MAX_ANNOTATIONS,
};

/// Registry entry naming one processing capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorDescriptor {
    pub id: ProcessorId,
    pub display_name: String,
    /// True iff the processor performs network calls.
    pub remote: bool,
    /// Option keys the processor understands; others are ignored and counted.
    pub option_keys: &'static [&'static str],
}

/// Speech text produced by a processor, before it is stamped with the
/// processor id and frame sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub priority: Priority,
}

impl Utterance {
    pub fn routine(text: impl Into<String>) -> Self {
        Utterance {
            text: text.into(),
            priority: Priority::Routine,
        }
    }

    pub fn interrupt(text: impl Into<String>) -> Self {
        Utterance {
            text: text.into(),
            priority: Priority::Interrupt,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProcessOutput {
    pub annotations: Vec<Annotation>,
    pub utterance: Option<Utterance>,
}

impl ProcessOutput {
    pub fn empty() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ProcessorError(pub String);

/// A per-session processing unit. Instances are confined to one dispatcher
/// and never called concurrently.
pub trait Processor: Send {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptionsError {
    #[error("malformed option segment {0:?}")]
    Syntax(String),
    #[error("bad value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
}

impl OptionsError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        OptionsError::InvalidValue {
            key: key.to_owned(),
            reason: reason.into(),
        }
    }
}

/// Parsed `k=v;k=v` processor options. Keys are `[a-z_]{1,32}`; later
/// duplicates win.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProcessorOptions {
    pairs: Vec<(String, String)>,
}

impl ProcessorOptions {
    pub fn parse(text: &str) -> Result<Self, OptionsError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for segment in text.split(';') {
            if segment.is_empty() {
                continue;
            }
            let (key, value) = segment
                .split_once('=')
                .ok_or_else(|| OptionsError::Syntax(segment.to_owned()))?;
            let valid_key = (1..=32).contains(&key.len())
                && key.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
            if !valid_key {
                return Err(OptionsError::Syntax(segment.to_owned()));
            }
            pairs.retain(|(k, _)| k != key);
            pairs.push((key.to_owned(), value.to_owned()));
        }
        Ok(ProcessorOptions { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Parses a numeric option, falling back to `default` when absent.
    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, OptionsError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| OptionsError::invalid(key, format!("cannot parse {v:?}"))),
        }
    }
}

impl fmt::Display for ProcessorOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub type ProcessorFactory =
    Arc<dyn Fn(&ProcessorOptions) -> Result<Box<dyn Processor>, OptionsError> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("processor {0} is already registered")]
    Duplicate(ProcessorId),
    #[error("registry is sealed; processors can only be registered at startup")]
    Sealed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CreateError {
    #[error("unknown processor {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    BadOptions(#[from] OptionsError),
}

struct Entry {
    desc: ProcessorDescriptor,
    factory: ProcessorFactory,
}

/// Processor ids mapped to factories, in registration order.
#[derive(Default)]
pub struct Registry {
    entries: Vec<Entry>,
    index: HashMap<ProcessorId, usize>,
    sealed: bool,
    ignored_option_keys: AtomicU64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, desc: ProcessorDescriptor, factory: F) -> Result<(), RegistryError>
    where
        F: Fn(&ProcessorOptions) -> Result<Box<dyn Processor>, OptionsError> + Send + Sync + 'static,
    {
        if self.sealed {
            return Err(RegistryError::Sealed);
        }
        if self.index.contains_key(&desc.id) {
            return Err(RegistryError::Duplicate(desc.id));
        }
        self.index.insert(desc.id.clone(), self.entries.len());
        self.entries.push(Entry {
            desc,
            factory: Arc::new(factory),
        });
        Ok(())
    }

    /// Ends the startup phase; further registration fails.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn list_processors(&self) -> Vec<ProcessorDescriptor> {
        self.entries.iter().map(|e| e.desc.clone()).collect()
    }

    pub fn descriptor(&self, id: &str) -> Option<&ProcessorDescriptor> {
        self.lookup(id).map(|e| &e.desc)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup(id).is_some()
    }

    fn lookup(&self, id: &str) -> Option<&Entry> {
        let id = ProcessorId::new(id).ok()?;
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    /// Builds a fresh instance of `id` configured from `opts`.
    pub fn create_for_session(
        &self,
        id: &str,
        opts: &ProcessorOptions,
    ) -> Result<(ProcessorId, Box<dyn Processor>), CreateError> {
        let entry = self
            .lookup(id)
            .ok_or_else(|| CreateError::UnknownId(id.to_owned()))?;
        let ignored = opts
            .keys()
            .filter(|k| !entry.desc.option_keys.contains(k))
            .count();
        if ignored > 0 {
            tracing::warn!(processor = id, ignored, "ignoring unrecognized option keys");
            self.ignored_option_keys
                .fetch_add(ignored as u64, Ordering::Relaxed);
        }
        let instance = (entry.factory)(opts)?;
        Ok((entry.desc.id.clone(), instance))
    }

    /// Total unrecognized option keys seen by `create_for_session`.
    pub fn ignored_option_keys(&self) -> u64 {
        self.ignored_option_keys.load(Ordering::Relaxed)
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("processors", &self.entries.iter().map(|e| e.desc.id.as_str()).collect::<Vec<_>>())
            .field("sealed", &self.sealed)
            .finish()
    }
}

/// A frame waiting for dispatch, stamped with its arrival time.
#[derive(Debug, Clone)]
pub struct Pending {
    pub frame: Frame,
    pub enqueued: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub replaced: bool,
}

#[derive(Debug, Default)]
struct MailboxState {
    slot: Option<Pending>,
    replaced: u64,
    closed: bool,
}

/// Latest-frame-wins slot of capacity one.
#[derive(Debug, Default)]
pub struct Mailbox {
    state: Mutex<MailboxState>,
    ready: Condvar,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, MailboxState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn submit(&self, frame: Frame) -> SubmitOutcome {
        let mut st = self.lock();
        let replaced = st
            .slot
            .replace(Pending {
                frame,
                enqueued: Instant::now(),
            })
            .is_some();
        if replaced {
            st.replaced += 1;
        }
        drop(st);
        self.ready.notify_one();
        SubmitOutcome { replaced }
    }

    pub fn take(&self) -> Option<Pending> {
        self.lock().slot.take()
    }

    /// Blocks until a frame is available, the mailbox is closed, or the
    /// timeout passes. Returns `None` in the latter two cases.
    pub fn wait_take(&self, timeout: Duration) -> Option<Pending> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if let Some(p) = st.slot.take() {
                return Some(p);
            }
            if st.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            st = self
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lock().slot.is_none()
    }

    pub fn replaced_count(&self) -> u64 {
        self.lock().replaced
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }
}

/// Monotone per-session counters.
#[derive(Debug, Default)]
pub struct SessionCounters {
    pub frames_received: AtomicU64,
    pub frames_processed: AtomicU64,
    pub frames_dropped: AtomicU64,
    pub descriptions_suppressed: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub frames_received: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    pub descriptions_suppressed: u64,
}

impl SessionCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            frames_received: self.frames_received.load(Ordering::SeqCst),
            frames_processed: self.frames_processed.load(Ordering::SeqCst),
            frames_dropped: self.frames_dropped.load(Ordering::SeqCst),
            descriptions_suppressed: self.descriptions_suppressed.load(Ordering::SeqCst),
        }
    }
}

/// One dispatched frame's outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub result: ProcessResult,
    /// Set when the processor failed; the session owner should be told.
    pub failure: Option<String>,
}

struct Active {
    id: ProcessorId,
    options: ProcessorOptions,
    instance: Box<dyn Processor>,
}

struct Selection {
    id: ProcessorId,
    options: ProcessorOptions,
    /// Instance built by a switch, not yet picked up by the dispatcher.
    staged: Option<Box<dyn Processor>>,
}

/// One session's mailbox, processor instance and counters.
pub struct SessionPipeline {
    registry: Arc<Registry>,
    mailbox: Mailbox,
    counters: SessionCounters,
    selection: Mutex<Selection>,
    active: Mutex<Active>,
}

impl SessionPipeline {
    pub fn new(registry: Arc<Registry>, id: &str, options: &ProcessorOptions) -> Result<Self, CreateError> {
        let (id, instance) = registry.create_for_session(id, options)?;
        Ok(SessionPipeline {
            registry,
            mailbox: Mailbox::new(),
            counters: SessionCounters::default(),
            selection: Mutex::new(Selection {
                id: id.clone(),
                options: options.clone(),
                staged: None,
            }),
            active: Mutex::new(Active {
                id,
                options: options.clone(),
                instance,
            }),
        })
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn counters(&self) -> &SessionCounters {
        &self.counters
    }

    /// The processor selected for this session (as of the latest switch).
    pub fn current_processor(&self) -> (ProcessorId, ProcessorOptions) {
        let sel = self.selection.lock().unwrap_or_else(|e| e.into_inner());
        (sel.id.clone(), sel.options.clone())
    }

    /// Places a frame in the mailbox, counting it as received and any
    /// replaced frame as dropped.
    pub fn submit_frame(&self, frame: Frame) -> SubmitOutcome {
        self.counters.frames_received.fetch_add(1, Ordering::SeqCst);
        let outcome = self.mailbox.submit(frame);
        if outcome.replaced {
            self.counters.frames_dropped.fetch_add(1, Ordering::SeqCst);
        }
        outcome
    }

    /// Replaces the session's processor. `announce` runs after the new
    /// processor is selected and before any dispatch can use it, so an
    /// acknowledgment queued there precedes every result naming the new id.
    /// On error the current processor is left unchanged.
    pub fn switch_processor(
        &self,
        id: &str,
        options: &ProcessorOptions,
        announce: impl FnOnce(&ProcessorId),
    ) -> Result<ProcessorId, CreateError> {
        let (new_id, instance) = self.registry.create_for_session(id, options)?;
        let mut sel = self.selection.lock().unwrap_or_else(|e| e.into_inner());
        sel.id = new_id.clone();
        sel.options = options.clone();
        sel.staged = Some(instance);
        announce(&new_id);
        drop(sel);
        Ok(new_id)
    }

    /// Takes the pending frame, if any, and processes it.
    pub fn dispatch_once(&self) -> Option<Dispatch> {
        self.mailbox.take().map(|p| self.dispatch(p))
    }

    /// Processes one taken frame with the current processor.
    pub fn dispatch(&self, pending: Pending) -> Dispatch {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        {
            let mut sel = self.selection.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(instance) = sel.staged.take() {
                *active = Active {
                    id: sel.id.clone(),
                    options: sel.options.clone(),
                    instance,
                };
            }
        }
        let started = Instant::now();
        let wait = started.saturating_duration_since(pending.enqueued);
        let frame = &pending.frame;
        let outcome = catch_unwind(AssertUnwindSafe(|| active.instance.process(frame)));
        let process = started.elapsed();
        let timing = TimingBreakdown::from_durations(wait, process);
        let checked = match outcome {
            Ok(Ok(out)) => check_output(out),
            Ok(Err(e)) => Err(e.0),
            Err(panic) => Err(panic_message(panic.as_ref())),
        };
        let id = active.id.clone();
        let dispatch = match checked {
            Ok(out) => Dispatch {
                result: ProcessResult {
                    frame_seq: frame.seq(),
                    processor: id.clone(),
                    annotations: out.annotations,
                    description: out.utterance.map(|u| Description {
                        text: u.text,
                        priority: u.priority,
                        source: id.clone(),
                        frame_seq: frame.seq(),
                    }),
                    timing,
                },
                failure: None,
            },
            Err(reason) => {
                tracing::warn!(processor = %id, %reason, "processor failed; recreating instance");
                match self.registry.create_for_session(id.as_str(), &active.options) {
                    Ok((_, fresh)) => active.instance = fresh,
                    Err(e) => tracing::error!(processor = %id, error = %e, "could not recreate processor"),
                }
                Dispatch {
                    result: ProcessResult {
                        frame_seq: frame.seq(),
                        processor: id.clone(),
                        annotations: Vec::new(),
                        description: Some(Description {
                            text: format!("processor error: {id}"),
                            priority: Priority::Interrupt,
                            source: id.clone(),
                            frame_seq: frame.seq(),
                        }),
                        timing,
                    },
                    failure: Some(reason),
                }
            }
        };
        self.counters.frames_processed.fetch_add(1, Ordering::SeqCst);
        dispatch
    }
}

fn check_output(out: ProcessOutput) -> Result<ProcessOutput, String> {
    if out.annotations.len() > MAX_ANNOTATIONS {
        return Err(format!("{} annotations exceed {MAX_ANNOTATIONS}", out.annotations.len()));
    }
    if let Some(u) = &out.utterance {
        check_description_text(&u.text).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "processor panicked".to_owned()
    }
}

impl fmt::Debug for SessionPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionPipeline")
            .field("processor", &self.current_processor().0)
            .field("counters", &self.counters.snapshot())
            .finish()
    }
}
