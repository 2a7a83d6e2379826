//! Real-time session loop.
//!
//! One thread owns the [`Engine`] and ticks it against the wall clock. HTTP
//! handlers reach it only through a command channel; frames and live events
//! leave through a broadcast channel for stream subscribers and through a
//! second channel to a writer thread that does all file I/O, so the tick
//! loop itself never blocks on disk.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;
use tokio::sync::{broadcast, oneshot};

use tactvest_analytics::log::LogRecord;
use tactvest_core::{EventKind, MotorFrame, PatternLibrary};

use crate::engine::{Applied, Engine, EngineConfig, EngineError, Input, TrainingStatus};
use crate::store::{SessionWriter, StoreError};

/// Stream message carrying one frame: `{"t":<ms>,"i":[40 ints]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct WireFrame {
    pub t: u64,
    pub i: MotorFrame,
}

impl WireFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire frames serialize")
    }
}

pub type Reply<T> = oneshot::Sender<T>;

pub enum Command {
    Apply {
        input: Input,
        reply: Option<Reply<Result<Applied, EngineError>>>,
    },
    /// Response stamped by the loop with the session clock.
    Respond {
        chosen: EventKind,
        client_t: Option<u64>,
        reply: Option<Reply<u64>>,
    },
    SavePath {
        bytes: Vec<u8>,
        reply: Reply<Result<String, String>>,
    },
    NewSession {
        writer: Box<SessionWriter>,
        reply: Reply<String>,
    },
    Status(Reply<Status>),
    Shutdown(Reply<()>),
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub session: String,
    pub tick: u64,
    pub t: u64,
    pub north: f64,
    pub trial_running: bool,
    pub pending_jobs: usize,
    pub training: Option<TrainingStatus>,
}

#[derive(Debug, Default)]
pub struct Stats {
    pub ticks: AtomicU64,
    pub write_errors: AtomicU64,
    pub running: AtomicBool,
}

enum WriterMsg {
    Record(LogRecord),
    Frame(u64, MotorFrame),
    SavePath {
        bytes: Vec<u8>,
        t: u64,
        reply: Reply<Result<String, String>>,
    },
    Close(LogRecord),
}

fn spawn_writer(mut writer: SessionWriter, stats: Arc<Stats>) -> (Sender<WriterMsg>, JoinHandle<()>) {
    let (tx, rx) = crossbeam_channel::unbounded::<WriterMsg>();
    let handle = std::thread::Builder::new()
        .name(format!("writer-{}", writer.id()))
        .spawn(move || {
            let fail = |e: StoreError| {
                stats.write_errors.fetch_add(1, Ordering::Relaxed);
                tracing::error!("session write failed: {e}");
            };
            let mut since_flush = 0u32;
            for msg in rx {
                match msg {
                    WriterMsg::Record(r) => writer.record(&r).unwrap_or_else(fail),
                    WriterMsg::Frame(tick, f) => {
                        writer.frame(tick, &f).unwrap_or_else(fail);
                        since_flush += 1;
                        if since_flush >= 50 {
                            since_flush = 0;
                            writer.flush().unwrap_or_else(fail);
                        }
                    }
                    WriterMsg::SavePath { bytes, t, reply } => {
                        let res = writer.save_path(&bytes).and_then(|file| {
                            writer.record(&LogRecord::Path { t, file: file.clone() })?;
                            Ok(file)
                        });
                        let _ = reply.send(res.map_err(|e| e.to_string()));
                    }
                    WriterMsg::Close(end) => {
                        writer.close(&end).unwrap_or_else(fail);
                        return;
                    }
                }
            }
        })
        .expect("spawn writer thread");
    (tx, handle)
}

/// Handle to a running loop.
#[derive(Clone)]
pub struct LiveHandle {
    pub commands: Sender<Command>,
    pub stream: broadcast::Sender<Arc<str>>,
    pub stats: Arc<Stats>,
}

impl LiveHandle {
    pub async fn request<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).ok()?;
        rx.await.ok()
    }

    pub async fn apply(&self, input: Input) -> Option<Result<Applied, EngineError>> {
        self.request(|reply| Command::Apply { input, reply: Some(reply) }).await
    }
}

struct Session {
    engine: Engine,
    id: String,
    writer: Sender<WriterMsg>,
    writer_thread: JoinHandle<()>,
    started: Instant,
}

impl Session {
    fn close(self) {
        let _ = self.writer.send(WriterMsg::Close(self.engine.end_record()));
        let _ = self.writer_thread.join();
    }
}

/// Start the loop on its own thread with `writer` as the first session.
pub fn spawn(config: EngineConfig, library: Arc<PatternLibrary>, writer: SessionWriter) -> (LiveHandle, JoinHandle<()>) {
    let (tx, rx) = crossbeam_channel::unbounded();
    let (stream, _) = broadcast::channel(1024);
    let stats = Arc::new(Stats::default());
    stats.running.store(true, Ordering::SeqCst);
    let handle = LiveHandle {
        commands: tx,
        stream: stream.clone(),
        stats: stats.clone(),
    };
    let thread = std::thread::Builder::new()
        .name("mixer-loop".into())
        .spawn(move || run(config, library, writer, rx, stream, stats))
        .expect("spawn mixer loop");
    (handle, thread)
}

fn open_session(config: EngineConfig, library: &Arc<PatternLibrary>, writer: SessionWriter, stats: &Arc<Stats>) -> Session {
    let id = writer.id().to_string();
    let (tx, thread) = spawn_writer(writer, stats.clone());
    Session {
        engine: Engine::new(config, library.clone()),
        id,
        writer: tx,
        writer_thread: thread,
        started: Instant::now(),
    }
}

fn run(
    config: EngineConfig,
    library: Arc<PatternLibrary>,
    writer: SessionWriter,
    commands: Receiver<Command>,
    stream: broadcast::Sender<Arc<str>>,
    stats: Arc<Stats>,
) {
    let tick_ms = u64::from(config.tick_ms);
    let mut session = open_session(config, &library, writer, &stats);
    let publish = |text: String| {
        if stream.receiver_count() > 0 {
            let _ = stream.send(Arc::from(text));
        }
    };
    let log = |s: &Session, rec: LogRecord| {
        publish(serde_json::to_string(&rec).expect("log records serialize"));
        let _ = s.writer.send(WriterMsg::Record(rec));
    };

    let mut shutdown = None;
    loop {
        let deadline = session.started + Duration::from_millis(tick_ms * session.engine.tick());
        let now = Instant::now();
        if deadline > now {
            // wake early for commands, but never past the deadline
            match commands.recv_timeout(deadline - now) {
                Ok(cmd) => match handle_command(cmd, &mut session, &config, &library, &stats, &log) {
                    Flow::Continue => continue,
                    Flow::Exit(reply) => {
                        shutdown = reply;
                        break;
                    }
                },
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => break,
            }
        }
        let mut exit = None;
        while let Ok(cmd) = commands.try_recv() {
            if let Flow::Exit(reply) = handle_command(cmd, &mut session, &config, &library, &stats, &log) {
                exit = Some(reply);
                break;
            }
        }
        if let Some(reply) = exit {
            shutdown = reply;
            break;
        }

        let step = session.engine.step();
        stats.ticks.fetch_add(1, Ordering::Relaxed);
        publish(WireFrame { t: step.t, i: step.frame }.to_json());
        let _ = session.writer.send(WriterMsg::Frame(step.tick, step.frame));
        for rec in step.records {
            log(&session, rec);
        }
    }
    stats.running.store(false, Ordering::SeqCst);
    session.close();
    if let Some(reply) = shutdown {
        let _ = reply.send(());
    }
}

enum Flow {
    Continue,
    Exit(Option<Reply<()>>),
}

fn handle_command(
    cmd: Command,
    session: &mut Session,
    config: &EngineConfig,
    library: &Arc<PatternLibrary>,
    stats: &Arc<Stats>,
    log: &impl Fn(&Session, LogRecord),
) -> Flow {
    match cmd {
        Command::Apply { input, reply } => {
            let res = session.engine.apply(input);
            match &res {
                Ok(a) => log(session, a.record.clone()),
                Err(e) => tracing::warn!("input rejected: {e}"),
            }
            if let Some(r) = reply {
                let _ = r.send(res);
            }
        }
        Command::Respond { chosen, client_t, reply } => {
            let t = session.started.elapsed().as_millis() as u64;
            if let Ok(a) = session.engine.apply(Input::Response { t, chosen, client_t }) {
                log(session, a.record);
            }
            if let Some(r) = reply {
                let _ = r.send(t);
            }
        }
        Command::SavePath { bytes, reply } => {
            let t = session.started.elapsed().as_millis() as u64;
            let _ = session.writer.send(WriterMsg::SavePath { bytes, t, reply });
        }
        Command::NewSession { writer, reply } => {
            let next = open_session(*config, library, *writer, stats);
            let id = next.id.clone();
            std::mem::replace(session, next).close();
            let _ = reply.send(id);
        }
        Command::Status(reply) => {
            let e = &session.engine;
            let _ = reply.send(Status {
                session: session.id.clone(),
                tick: e.tick(),
                t: e.now_ms(),
                north: e.north(),
                trial_running: e.trial_running(),
                pending_jobs: e.mixer().pending(),
                training: e.training(),
            });
        }
        Command::Shutdown(reply) => return Flow::Exit(Some(reply)),
    }
    Flow::Continue
}
