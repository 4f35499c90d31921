use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::command::Command;
use super::log::CommandLog;
use crate::asset::{load_asset, SmokeAsset};
use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::render::{render_z_projection, RenderSettings};
use crate::solver::{init_from_asset, SimConfig, SimState, SphereObstacle, StepReport};

pub const DEFAULT_STEP_RATE: f64 = 30.0;
pub const DEFAULT_CAPACITY: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Paused,
    Running { rate_hz: f64 },
}

/// What a subscriber receives after each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// Raw density of the middle z-slice, rows from `+Y` down.
    #[default]
    Slice,
    /// Orthographic emission–absorption view down `−Z`.
    Render(RenderSettings),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub payload: Payload,
    /// Frames buffered for a slow reader before new ones are dropped.
    pub capacity: usize,
}

impl Default for Subscription {
    fn default() -> Self {
        Self {
            payload: Payload::Slice,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

/// One streamed frame. `pixels` is row-major, `width × height`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMessage {
    pub step_index: u64,
    pub clock: f64,
    pub max_divergence: f64,
    pub total_mass: f64,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

/// Reply to an accepted command.
#[derive(Clone, Debug, PartialEq)]
pub struct Ack {
    /// Session sequence number of this command.
    pub seq: u64,
    /// First step that runs with the command in effect.
    pub effective_step: u64,
    pub obstacle_id: Option<u64>,
    pub steps_run: u32,
    pub snapshot: Option<FrameMessage>,
}

pub type SubscriberId = u64;

struct Subscriber {
    id: SubscriberId,
    payload: Payload,
    tx: SyncSender<Arc<FrameMessage>>,
    dropped: u64,
}

/// A simulation owned by one thread. Commands are applied between steps, in
/// the order they arrive.
pub struct Session {
    asset: Option<Arc<SmokeAsset>>,
    asset_path: Option<PathBuf>,
    frame: usize,
    config: SimConfig,
    sim: SimState,
    obstacles: BTreeMap<u64, SphereObstacle>,
    next_obstacle: u64,
    mode: RunMode,
    rate_hz: f64,
    seq: u64,
    last_report: Option<StepReport>,
    subscribers: Vec<Subscriber>,
    next_subscriber: SubscriberId,
    log: Option<CommandLog>,
    step_hook: Option<Box<dyn FnMut() + Send>>,
}

impl Session {
    /// Starts from asset frame `frame` (1-based). Wind, obstacles and buoyancy
    /// come from `config`; its obstacles get ids `1, 2, …`.
    pub fn new(asset: Arc<SmokeAsset>, frame: usize, config: SimConfig) -> Result<Self> {
        let sim = init_from_asset(&asset, frame, &config)?;
        let mut s = Self::build(sim, config);
        s.asset = Some(asset);
        s.frame = frame;
        Ok(s)
    }

    pub fn open(asset_path: impl AsRef<Path>, frame: usize, config: SimConfig) -> Result<Self> {
        let asset = load_asset(asset_path.as_ref())?;
        let mut s = Self::new(Arc::new(asset), frame, config)?;
        s.asset_path = Some(asset_path.as_ref().to_path_buf());
        Ok(s)
    }

    /// A session around an existing state; `Reset` is unavailable.
    pub fn from_state(sim: SimState, config: SimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(sim, config))
    }

    fn build(sim: SimState, mut config: SimConfig) -> Self {
        let obstacles: BTreeMap<u64, SphereObstacle> = std::mem::take(&mut config.obstacles)
            .into_iter()
            .enumerate()
            .map(|(i, o)| (i as u64 + 1, o))
            .collect();
        let mut s = Self {
            asset: None,
            asset_path: None,
            frame: 1,
            next_obstacle: obstacles.len() as u64 + 1,
            config,
            sim,
            obstacles,
            mode: RunMode::Paused,
            rate_hz: DEFAULT_STEP_RATE,
            seq: 0,
            last_report: None,
            subscribers: Vec::new(),
            next_subscriber: 1,
            log: None,
            step_hook: None,
        };
        s.sync_obstacles();
        s
    }

    fn sync_obstacles(&mut self) {
        self.config.obstacles = self.obstacles.values().copied().collect();
    }

    /// Starts writing every accepted command to a JSONL log at `path`.
    pub fn record_to(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let asset = self
            .asset_path
            .as_ref()
            .ok_or_else(|| invalid("only sessions opened from an asset file can be logged"))?;
        let mut initial = self.config.clone();
        initial.obstacles = self.obstacles.values().copied().collect();
        self.log = Some(CommandLog::create(
            path,
            asset,
            self.frame,
            &initial,
            self.sim.step_index,
        )?);
        Ok(())
    }

    pub fn state(&self) -> &SimState {
        &self.sim
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn spec(&self) -> &GridSpec {
        self.sim.spec()
    }

    pub fn obstacles(&self) -> &BTreeMap<u64, SphereObstacle> {
        &self.obstacles
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    /// Frames in the session's asset, if it has one.
    pub fn asset_frames(&self) -> Option<usize> {
        self.asset.as_ref().map(|a| a.frame_count())
    }

    /// The asset frame the simulation was last initialized from.
    pub fn start_frame(&self) -> usize {
        self.frame
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn last_report(&self) -> Option<&StepReport> {
        self.last_report.as_ref()
    }

    pub fn subscribe(&mut self, sub: Subscription) -> Result<(SubscriberId, Receiver<Arc<FrameMessage>>)> {
        if sub.capacity == 0 {
            return Err(invalid("subscription capacity must be positive"));
        }
        if let Payload::Render(r) = &sub.payload {
            r.validate()?;
        }
        let (tx, rx) = sync_channel(sub.capacity);
        let id = self.next_subscriber;
        self.next_subscriber += 1;
        self.subscribers.push(Subscriber {
            id,
            payload: sub.payload,
            tx,
            dropped: 0,
        });
        Ok((id, rx))
    }

    pub fn unsubscribe(&mut self, id: SubscriberId) {
        self.subscribers.retain(|s| s.id != id);
    }

    /// Frames dropped so far for a subscriber whose buffer was full.
    pub fn dropped(&self, id: SubscriberId) -> Option<u64> {
        self.subscribers.iter().find(|s| s.id == id).map(|s| s.dropped)
    }

    /// Applies one command at the current step boundary.
    pub fn apply(&mut self, cmd: Command) -> Result<Ack> {
        cmd.validate()?;
        let effective_step = self.sim.step_index + 1;
        let at_step = self.sim.step_index;
        let mut ack = Ack {
            seq: self.seq + 1,
            effective_step,
            obstacle_id: None,
            steps_run: 0,
            snapshot: None,
        };
        match &cmd {
            Command::SetWind(ws) => self.config.wind = ws.clone(),
            Command::AddObstacle(o) => {
                let id = self.next_obstacle;
                self.next_obstacle += 1;
                self.obstacles.insert(id, *o);
                self.sync_obstacles();
                ack.obstacle_id = Some(id);
            }
            Command::RemoveObstacle(id) => {
                if self.obstacles.remove(id).is_none() {
                    return Err(invalid(format!("no obstacle with id {id}")));
                }
                self.sync_obstacles();
            }
            Command::SetBuoyancy(b) => self.config.buoyancy_coeff = *b,
            Command::Step(n) => {
                for _ in 0..*n {
                    self.step_once();
                }
                ack.steps_run = *n;
            }
            Command::Pause => self.mode = RunMode::Paused,
            Command::Resume => {
                self.mode = RunMode::Running { rate_hz: self.rate_hz };
            }
            Command::Reset(k) => {
                let asset = self
                    .asset
                    .as_ref()
                    .ok_or_else(|| invalid("session has no asset to reset from"))?;
                self.sim = init_from_asset(asset, *k, &self.config)?;
                self.frame = *k;
                self.last_report = None;
                ack.effective_step = self.sim.step_index + 1;
            }
            Command::Snapshot => ack.snapshot = Some(self.snapshot()),
        }
        self.seq += 1;
        if let Some(log) = &mut self.log {
            log.append(self.seq, at_step, &cmd)?;
        }
        Ok(ack)
    }

    /// Sets the free-running step rate, kept across pauses.
    pub fn set_rate(&mut self, rate_hz: f64) -> Result<()> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(invalid("step rate must be positive"));
        }
        self.rate_hz = rate_hz;
        if let RunMode::Running { .. } = self.mode {
            self.mode = RunMode::Running { rate_hz };
        }
        Ok(())
    }

    /// One step if the session is running.
    pub fn tick(&mut self) -> Option<StepReport> {
        match self.mode {
            RunMode::Running { .. } => Some(self.step_once()),
            RunMode::Paused => None,
        }
    }

    /// Called after every step, once its frames have been queued.
    pub fn set_step_hook(&mut self, hook: impl FnMut() + Send + 'static) {
        self.step_hook = Some(Box::new(hook));
    }

    fn step_once(&mut self) -> StepReport {
        let report = self.sim.step(&self.config);
        self.last_report = Some(report);
        self.broadcast(&report);
        if let Some(hook) = &mut self.step_hook {
            hook();
        }
        report
    }

    fn message(&self, payload: &Payload, max_divergence: f64) -> FrameMessage {
        let d = &self.sim.density;
        let [nx, ny, nz] = d.spec().res();
        let (width, height, pixels) = match payload {
            Payload::Slice => {
                let k = nz / 2;
                let mut px = Vec::with_capacity(nx * ny);
                for row in 0..ny {
                    for i in 0..nx {
                        px.push(d.get(i, ny - 1 - row, k) as f32);
                    }
                }
                (nx, ny, px)
            }
            Payload::Render(settings) => {
                let out = render_z_projection(d, settings).expect("settings validated at subscribe");
                let img = out.image;
                (
                    img.width(),
                    img.height(),
                    img.data().iter().map(|&v| v as f32).collect(),
                )
            }
        };
        FrameMessage {
            step_index: self.sim.step_index,
            clock: self.sim.clock,
            max_divergence,
            total_mass: d.total_mass(),
            width,
            height,
            pixels,
        }
    }

    fn current_divergence(&self) -> f64 {
        match &self.last_report {
            Some(r) => r.projection.max_divergence,
            None => {
                let solids = crate::solver::solid_mask(self.spec(), &self.config.obstacles);
                let fluid: Vec<bool> = solids.iter().map(|s| !s).collect();
                self.sim.velocity.max_divergence(Some(&fluid))
            }
        }
    }

    /// The current state as a slice frame, without broadcasting it.
    pub fn snapshot(&self) -> FrameMessage {
        self.message(&Payload::Slice, self.current_divergence())
    }

    fn broadcast(&mut self, report: &StepReport) {
        if self.subscribers.is_empty() {
            return;
        }
        let div = report.projection.max_divergence;
        let mut cache: Vec<(Payload, Arc<FrameMessage>)> = Vec::new();
        let mut subs = std::mem::take(&mut self.subscribers);
        subs.retain_mut(|s| {
            let msg = match cache.iter().find(|(p, _)| *p == s.payload) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = Arc::new(self.message(&s.payload, div));
                    cache.push((s.payload, m.clone()));
                    m
                }
            };
            match s.tx.try_send(msg) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    s.dropped += 1;
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        self.subscribers = subs;
    }

    /// Writes the end-of-session record, if logging.
    pub fn close(&mut self) -> Result<()> {
        self.subscribers.clear();
        if let Some(mut log) = self.log.take() {
            log.finish(self.sim.step_index)?;
        }
        Ok(())
    }

    /// Advances to `step_index` with plain steps, as a running session would.
    pub(crate) fn run_until(&mut self, step_index: u64) -> Result<()> {
        if step_index < self.sim.step_index {
            return Err(Error::Header(format!(
                "log goes back in time: step {step_index} after {}",
                self.sim.step_index
            )));
        }
        while self.sim.step_index < step_index {
            self.step_once();
        }
        Ok(())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(mut log) = self.log.take() {
            let _ = log.finish(self.sim.step_index);
        }
    }
}
