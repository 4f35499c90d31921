use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::command::Command;
use super::protocol::{
    ack_line, error_line, parse_request, parse_subscription, status_line, write_frame, Encoding, MAX_LINE,
};
use super::session::{FrameMessage, RunMode, Session, SubscriberId};
use crate::error::{Error, Result};

type ConnId = u64;

enum Event {
    Connected {
        conn: ConnId,
        out: Sender<Outgoing>,
        pending: Arc<AtomicBool>,
    },
    Line {
        conn: ConnId,
        line: String,
    },
    Disconnected {
        conn: ConnId,
    },
    Shutdown,
}

enum Outgoing {
    Line(String),
    Frame(FrameMessage, Value),
    Subscribed(Receiver<Arc<FrameMessage>>, Encoding),
    Wake,
}

/// Per-connection writer wake-up, set when new frames may be waiting.
struct Waker {
    pending: Arc<AtomicBool>,
    out: Sender<Outgoing>,
}

type Wakers = Arc<Mutex<HashMap<ConnId, Waker>>>;

struct Conn {
    out: Sender<Outgoing>,
    pending: Arc<AtomicBool>,
    subs: Vec<SubscriberId>,
}

/// A running server; dropping the handle leaves it running.
pub struct ServerHandle {
    addr: SocketAddr,
    mailbox: Sender<Event>,
    owner: JoinHandle<Result<Session>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the server and returns its session.
    pub fn shutdown(self) -> Result<Session> {
        let _ = self.mailbox.send(Event::Shutdown);
        self.join()
    }

    /// Waits until a client sends `shutdown`.
    pub fn join(self) -> Result<Session> {
        self.owner.join().map_err(|_| Error::SessionClosed)?
    }
}

/// Serves `session` on `listener` from background threads.
pub fn spawn(listener: TcpListener, session: Session) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let (tx, rx) = channel();
    let stop = Arc::new(AtomicBool::new(false));
    {
        let tx = tx.clone();
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, tx, stop));
    }
    let owner = thread::spawn(move || {
        let result = owner_loop(session, rx);
        stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(addr);
        result
    });
    Ok(ServerHandle {
        addr,
        mailbox: tx,
        owner,
    })
}

/// Serves until a client sends `shutdown`.
pub fn serve(listener: TcpListener, session: Session) -> Result<Session> {
    spawn(listener, session)?.join()
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next: ConnId = 1;
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let conn = next;
        next += 1;
        let Ok(write_half) = stream.try_clone() else { continue };
        let (out_tx, out_rx) = channel();
        let pending = Arc::new(AtomicBool::new(false));
        let connected = Event::Connected {
            conn,
            out: out_tx,
            pending: pending.clone(),
        };
        if events.send(connected).is_err() {
            break;
        }
        thread::spawn(move || writer_loop(write_half, out_rx, pending));
        let events = events.clone();
        thread::spawn(move || reader_loop(stream, conn, events));
    }
}

fn reader_loop(stream: TcpStream, conn: ConnId, events: Sender<Event>) {
    let mut reader = BufReader::new(stream);
    loop {
        let mut buf = Vec::new();
        match (&mut reader).take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if buf.len() > MAX_LINE {
            log::warn!("connection {conn}: request line longer than {MAX_LINE} bytes, closing");
            break;
        }
        let line = String::from_utf8_lossy(&buf).trim().to_string();
        if line.is_empty() {
            continue;
        }
        if events.send(Event::Line { conn, line }).is_err() {
            break;
        }
    }
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    let _ = events.send(Event::Disconnected { conn });
}

fn writer_loop(stream: TcpStream, rx: Receiver<Outgoing>, pending: Arc<AtomicBool>) {
    let mut out = BufWriter::new(stream);
    let mut subs: Vec<(Receiver<Arc<FrameMessage>>, Encoding)> = Vec::new();
    for msg in rx {
        let ok = match msg {
            Outgoing::Line(s) => writeln!(out, "{s}").is_ok(),
            Outgoing::Frame(f, seq) => write_frame(&mut out, &f, Encoding::Base64, &seq).is_ok(),
            Outgoing::Subscribed(r, e) => {
                subs.push((r, e));
                true
            }
            Outgoing::Wake => {
                pending.store(false, Ordering::SeqCst);
                let mut ok = true;
                subs.retain(|(r, e)| loop {
                    match r.try_recv() {
                        Ok(f) => ok &= write_frame(&mut out, &f, *e, &Value::Null).is_ok(),
                        Err(TryRecvError::Empty) => break true,
                        Err(TryRecvError::Disconnected) => break false,
                    }
                });
                ok
            }
        };
        if !ok || out.flush().is_err() {
            break;
        }
    }
}

fn wake_all(wakers: &Wakers) {
    for w in wakers.lock().expect("waker registry").values() {
        if !w.pending.swap(true, Ordering::SeqCst) {
            let _ = w.out.send(Outgoing::Wake);
        }
    }
}

fn owner_loop(mut session: Session, events: Receiver<Event>) -> Result<Session> {
    let wakers: Wakers = Arc::default();
    {
        let wakers = wakers.clone();
        session.set_step_hook(move || wake_all(&wakers));
    }
    let mut conns: HashMap<ConnId, Conn> = HashMap::new();
    let mut next_tick: Option<Instant> = None;
    loop {
        let event = match (session.mode(), next_tick) {
            (RunMode::Running { rate_hz }, tick) => {
                let period = Duration::from_secs_f64(1.0 / rate_hz);
                let due = tick.unwrap_or_else(|| Instant::now() + period);
                next_tick = Some(due);
                match events.recv_timeout(due.saturating_duration_since(Instant::now())) {
                    Ok(e) => Some(e),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            (RunMode::Paused, _) => {
                next_tick = None;
                match events.recv() {
                    Ok(e) => Some(e),
                    Err(_) => break,
                }
            }
        };
        match event {
            None => {
                session.tick();
                if let (RunMode::Running { rate_hz }, Some(due)) = (session.mode(), next_tick) {
                    let period = Duration::from_secs_f64(1.0 / rate_hz);
                    next_tick = Some((due + period).max(Instant::now()));
                }
            }
            Some(Event::Connected { conn, out, pending }) => {
                conns.insert(
                    conn,
                    Conn {
                        out,
                        pending,
                        subs: Vec::new(),
                    },
                );
            }
            Some(Event::Disconnected { conn }) => {
                if let Some(c) = conns.remove(&conn) {
                    for id in c.subs {
                        session.unsubscribe(id);
                    }
                }
                wakers.lock().expect("waker registry").remove(&conn);
            }
            Some(Event::Line { conn, line }) => {
                if handle_line(&mut session, &mut conns, &wakers, conn, &line) {
                    break;
                }
            }
            Some(Event::Shutdown) => break,
        }
    }
    session.close()?;
    Ok(session)
}

/// Handles one request; returns `true` on `shutdown`.
fn handle_line(
    session: &mut Session,
    conns: &mut HashMap<ConnId, Conn>,
    wakers: &Wakers,
    conn: ConnId,
    line: &str,
) -> bool {
    let Some(c) = conns.get_mut(&conn) else { return false };
    let reply = |c: &Conn, s: String| {
        let _ = c.out.send(Outgoing::Line(s));
    };
    let req = match parse_request(line) {
        Ok(r) => r,
        Err((seq, reason)) => {
            reply(c, error_line(&seq, &reason));
            return false;
        }
    };
    let plain_ack = |session: &Session, extra: Value| {
        let mut v = json!({
            "type": "ack",
            "seq": req.seq,
            "session_seq": session.seq(),
            "effective_step": session.state().step_index + 1,
            "steps_run": 0,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
            m.extend(e);
        }
        v.to_string()
    };
    match req.cmd.as_str() {
        "subscribe" => {
            match parse_subscription(&req.params).and_then(|(sub, enc)| Ok((session.subscribe(sub)?, enc))) {
                Ok(((id, rx), enc)) => {
                    c.subs.push(id);
                    let _ = c.out.send(Outgoing::Subscribed(rx, enc));
                    wakers.lock().expect("waker registry").insert(
                        conn,
                        Waker {
                            pending: c.pending.clone(),
                            out: c.out.clone(),
                        },
                    );
                    reply(c, plain_ack(session, json!({ "subscriber": id })));
                }
                Err(e) => reply(c, error_line(&req.seq, &e.to_string())),
            }
        }
        "unsubscribe" => {
            let only = req.params.get("subscriber").and_then(Value::as_u64);
            c.subs.retain(|&id| {
                let drop = only.is_none_or(|o| o == id);
                if drop {
                    session.unsubscribe(id);
                }
                !drop
            });
            reply(c, plain_ack(session, json!({})));
        }
        "set_rate" => match req
            .params
            .get("hz")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::InvalidArgument("set_rate needs numeric `hz`".into()))
            .and_then(|hz| session.set_rate(hz))
        {
            Ok(()) => reply(c, plain_ack(session, json!({}))),
            Err(e) => reply(c, error_line(&req.seq, &e.to_string())),
        },
        "status" => reply(c, status_line(&req.seq, session)),
        "shutdown" => {
            reply(c, plain_ack(session, json!({})));
            return true;
        }
        name => {
            let result = Command::parse(name, &req.params, session.spec()).and_then(|cmd| session.apply(cmd));
            match result {
                Ok(mut ack) => {
                    let snapshot = ack.snapshot.take();
                    reply(c, ack_line(&req.seq, &ack, None));
                    if let Some(f) = snapshot {
                        let _ = c.out.send(Outgoing::Frame(f, req.seq.clone()));
                    }
                }
                Err(e) => reply(c, error_line(&req.seq, &e.to_string())),
            }
        }
    }
    false
}
