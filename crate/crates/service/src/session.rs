//! The single rollout session owned by the control loop.

use calm_core::sim::{run_engine, PerturbationMode};
use calm_core::{
    CalmError, ClusterModel, Controller, ControllerConfig, KernelConfig, PerturbationEvent, RolloutConfig,
    RolloutEngine, RolloutResult,
};
use serde::{Deserialize, Serialize};

use crate::protocol::{downsample, ClientCommand, ServerMessage};

/// Session parameters fixed at server start.
#[derive(Debug, Clone, Default)]
pub struct SessionConfig {
    pub kernels: KernelConfig,
    /// `None` derives the controller defaults from the model.
    pub controller: Option<ControllerConfig>,
    pub rollout: RolloutConfig,
    /// `None` starts at the first state of the first mean.
    pub start: Option<Vec<f64>>,
    /// Downsample posteriors in broadcasts to at most this many cells.
    pub posterior_cells: Option<usize>,
    pub autostart: bool,
}

/// Everything between two restarts: the start, the kernel, the coalesced
/// perturbations actually applied and the observed positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec<f64>,
    pub kernels: KernelConfig,
    pub events: Vec<PerturbationEvent>,
    pub ticks: usize,
    pub positions: Vec<Vec<f64>>,
}

pub struct Session {
    model: ClusterModel,
    controller_cfg: ControllerConfig,
    rollout_cfg: RolloutConfig,
    kernels: KernelConfig,
    start: Vec<f64>,
    cells: Option<usize>,
    engine: RolloutEngine,
    running: bool,
    pending: Option<(PerturbationMode, Vec<f64>)>,
    segments: Vec<Segment>,
}

impl Session {
    pub fn new(model: ClusterModel, cfg: &SessionConfig) -> Result<Self, CalmError> {
        let controller_cfg = cfg
            .controller
            .clone()
            .unwrap_or_else(|| ControllerConfig::for_model(&model));
        let start = cfg.start.clone().unwrap_or_else(|| model.means[0].state(0).to_vec());
        let engine = Self::engine(&model, cfg.kernels, &controller_cfg, &cfg.rollout, &start)?;
        Ok(Self {
            segments: vec![Segment {
                start: start.clone(),
                kernels: cfg.kernels,
                events: Vec::new(),
                ticks: 0,
                positions: Vec::new(),
            }],
            model,
            controller_cfg,
            rollout_cfg: cfg.rollout.clone(),
            kernels: cfg.kernels,
            start,
            cells: cfg.posterior_cells,
            engine,
            running: cfg.autostart,
            pending: None,
        })
    }

    fn engine(
        model: &ClusterModel,
        kernels: KernelConfig,
        cfg: &ControllerConfig,
        rcfg: &RolloutConfig,
        start: &[f64],
    ) -> Result<RolloutEngine, CalmError> {
        let controller = Controller::new(model.clone(), kernels, cfg.clone())?;
        RolloutEngine::new(controller, start, rcfg.clone())
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    pub fn controller_config(&self) -> &ControllerConfig {
        &self.controller_cfg
    }

    pub fn rollout_config(&self) -> &RolloutConfig {
        &self.rollout_cfg
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn pause(&mut self) {
        self.running = false;
    }

    fn restart(&mut self) -> Result<(), CalmError> {
        self.engine = Self::engine(
            &self.model,
            self.kernels,
            &self.controller_cfg,
            &self.rollout_cfg,
            &self.start,
        )?;
        self.pending = None;
        self.segments.push(Segment {
            start: self.start.clone(),
            kernels: self.kernels,
            events: Vec::new(),
            ticks: 0,
            positions: Vec::new(),
        });
        Ok(())
    }

    /// Applies a validated command. Position commands are held until the
    /// next tick; a newer one replaces an older one.
    pub fn handle(&mut self, cmd: ClientCommand) -> Result<(), CalmError> {
        match cmd {
            ClientCommand::Start => self.running = true,
            ClientCommand::Pause => self.running = false,
            ClientCommand::Reset => self.restart()?,
            ClientCommand::SetPosition(p) => self.pending = Some((PerturbationMode::SetPosition, p)),
            ClientCommand::DragOffset(v) => self.pending = Some((PerturbationMode::Offset, v)),
            ClientCommand::SetKernel(family) => {
                self.kernels.family = family;
                self.restart()?;
            }
            ClientCommand::SetStart(p) => {
                let previous = std::mem::replace(&mut self.start, p);
                if let Err(e) = self.restart() {
                    self.start = previous;
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    /// Runs at most one controller step. Idle while paused, and while a
    /// converged rollout has nothing new to react to.
    pub fn tick(&mut self) -> Result<Option<ServerMessage>, CalmError> {
        if !self.running || (self.engine.is_done() && self.pending.is_none()) {
            return Ok(None);
        }
        let seg = self.segments.last_mut().expect("at least one segment");
        if let Some((mode, vector)) = self.pending.take() {
            self.engine.perturb(mode, &vector)?;
            seg.events.push(PerturbationEvent {
                trigger_tick: self.engine.tick(),
                mode,
                vector,
            });
        }
        let rec = self.engine.step()?;
        seg.ticks += 1;
        seg.positions.push(rec.position.clone());
        let state = self.engine.state();
        let cells = self.cells.unwrap_or(0);
        Ok(Some(ServerMessage {
            tick: rec.tick,
            position: rec.position,
            velocity: rec.velocity,
            kv: rec.kv,
            active_cluster: rec.active_cluster,
            posteriors: state
                .per_cluster
                .iter()
                .map(|a| downsample(a.posterior(), cells))
                .collect(),
            log_marginals: state.per_cluster.iter().map(|a| a.log_marginal()).collect(),
            converged: rec.converged,
        }))
    }
}

/// Re-runs a recorded segment offline.
pub fn replay(
    model: &ClusterModel,
    cfg: &ControllerConfig,
    rcfg: &RolloutConfig,
    segment: &Segment,
) -> Result<RolloutResult, CalmError> {
    let controller = Controller::new(model.clone(), segment.kernels, cfg.clone())?;
    let rcfg = RolloutConfig {
        max_ticks: Some(segment.ticks),
        ..rcfg.clone()
    };
    run_engine(RolloutEngine::new(controller, &segment.start, rcfg)?, &segment.events)
}
